#include "c2l/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "c2l/ops.hpp"
#include "c2l/rng.hpp"
#include "c2l/tape.hpp"

namespace c2l {

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based, tie-averaged) ranks of the positives. Ranks are
  // half-integers, so the sum is exact.
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        pos_rank_sum += mid_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("auroc: needs at least one positive and one negative");
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1) / 2) / (p * n);
}

bool EvalResult::any_undefined() const {
  return std::any_of(classes.begin(), classes.end(), [](const ClassAuroc& c) { return !c.auroc; });
}

EvalResult score_classes(const Tensor<double>& scores, const Tensor<double>& labels,
                         const std::vector<std::string>& class_names) {
  if (scores.shape() != labels.shape() || scores.rank() != 2 || scores.dim(1) != class_names.size()) {
    throw ShapeError("score_classes: scores " + shape_str(scores.shape()) + ", labels " + shape_str(labels.shape()) +
                     ", " + std::to_string(class_names.size()) + " classes");
  }
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  EvalResult out;
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = scores[i * c + k];
      y[i] = labels[i * c + k] > 0.5 ? 1 : 0;
      positives += y[i];
    }
    ClassAuroc ca{class_names[k], std::nullopt};
    if (positives == 0 || positives == n) {
      out.warnings.push_back("class " + class_names[k] + " has a single label value in the evaluation split; AUROC "
                             "undefined and excluded from the mean");
    } else {
      ca.auroc = auroc(s, y);
      sum += *ca.auroc;
      ++defined;
    }
    out.classes.push_back(std::move(ca));
  }
  out.mean_auroc = defined ? sum / static_cast<double>(defined) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

void ProbeConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("probe lr must be positive");
  if (batch_size < 1) throw std::invalid_argument("probe batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("probe weight_decay must be >= 0");
}

void FineTuneConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("finetune lr must be positive");
  if (batch_size < 1) throw std::invalid_argument("finetune batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("finetune weight_decay must be >= 0");
}

Tensor<double> extract_features(const NetworkParams<float>& params, const EncoderConfig& config, const Dataset& data) {
  constexpr std::size_t kChunk = 64;
  const std::size_t f = config.backbone_dim();
  Tensor<double> out({data.size(), f});
  for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
    const std::size_t end = std::min(data.size(), begin + kChunk);
    Tensor<float> feats = encode_backbone(params, config, data.batch_range(begin, end).pixels());
    for (std::size_t i = 0; i < feats.size(); ++i) out[begin * f + i] = feats[i];
  }
  return out;
}

namespace {

NetworkParams<double> zero_head(std::size_t classes, std::size_t features) {
  NetworkParams<double> head;
  head.entries.push_back({"probe.weight", Tensor<double>({classes, features}, 0.0)});
  head.entries.push_back({"probe.bias", Tensor<double>({classes}, 0.0)});
  for (auto& p : head.entries) p.tensor.set_requires_grad(true);
  return head;
}

Tensor<double> gather_rows(const Tensor<double>& t, std::span<const std::size_t> rows) {
  const std::size_t cols = t.dim(1);
  Tensor<double> out({rows.size(), cols});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::copy_n(t.ptr() + rows[k] * cols, cols, out.ptr() + k * cols);
  }
  return out;
}

}  // namespace

EvalResult probe_features(const Tensor<double>& train_x, const Tensor<double>& train_y, const Tensor<double>& test_x,
                          const Tensor<double>& test_y, const std::vector<std::string>& class_names,
                          const ProbeConfig& config) {
  config.validate();
  const std::size_t n = train_x.dim(0), f = train_x.dim(1), c = class_names.size();
  if (train_y.shape() != Shape{n, c} || test_x.dim(1) != f || test_y.shape() != Shape{test_x.dim(0), c}) {
    throw ShapeError("probe_features: inconsistent feature/label shapes");
  }

  // Standardise with training statistics; constant features map to zero.
  std::vector<double> mean(f, 0.0), scale(f, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < f; ++k) mean[k] += train_x[i * f + k];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < f; ++k) scale[k] += std::pow(train_x[i * f + k] - mean[k], 2);
  }
  for (double& s : scale) {
    const double sd = std::sqrt(s / static_cast<double>(n));
    s = sd > 1e-12 ? 1.0 / sd : 0.0;
  }
  auto standardise = [&](const Tensor<double>& x) {
    Tensor<double> out = x;
    for (std::size_t i = 0; i < x.dim(0); ++i) {
      for (std::size_t k = 0; k < f; ++k) out[i * f + k] = (x[i * f + k] - mean[k]) * scale[k];
    }
    return out;
  };
  const Tensor<double> xs = standardise(train_x);

  NetworkParams<double> head = zero_head(c, f);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    RngStream rng({config.seed, epoch, stream::kEval, 0, 0});
    const auto order = rng.permutation(n);
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      std::span<const std::size_t> rows(order.data() + begin, std::min(config.batch_size, n - begin));
      Tape<double> tape;
      Var<double> logits = linear(tape.constant(gather_rows(xs, rows)), tape.parameter(head.entries[0].tensor),
                                  tape.parameter(head.entries[1].tensor));
      tape.backward(sigmoid_bce(logits, gather_rows(train_y, rows)));
      sgd_step(head, config.lr, config.weight_decay);
    }
  }

  Tape<double> tape;
  Var<double> scores = linear(tape.constant(standardise(test_x)), tape.constant(head.entries[0].tensor),
                              tape.constant(head.entries[1].tensor));
  return score_classes(scores.value(), test_y, class_names);
}

namespace {

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

}  // namespace

EvalResult linear_probe(const NetworkParams<float>& params, const EncoderConfig& config, const Dataset& train,
                        const Dataset& test, const ProbeConfig& probe) {
  if (!train.labeled() || !test.labeled()) throw DataError("linear probe needs labeled train and test splits");
  if (train.class_names() != test.class_names()) throw DataError("train and test splits have different classes");
  const auto tr = all_rows(train.size()), te = all_rows(test.size());
  return probe_features(extract_features(params, config, train), train.label_matrix(tr),
                        extract_features(params, config, test), test.label_matrix(te), train.class_names(), probe);
}

FineTuneResult fine_tune(const NetworkParams<float>& init, const EncoderConfig& config, const Dataset& train,
                         const Dataset& test, const FineTuneConfig& ft) {
  ft.validate();
  if (!train.labeled() || !test.labeled()) throw DataError("fine-tuning needs labeled train and test splits");
  if (train.class_names() != test.class_names()) throw DataError("train and test splits have different classes");
  const std::size_t c = train.num_classes(), f = config.backbone_dim(), n = train.size();

  // Encoder and head are optimised together as one parameter set.
  NetworkParams<float> net = clone_params(init, Role::student);
  const std::size_t encoder_entries = net.size();
  // The contrastive projection head is not on the classification path.
  for (auto& p : net.entries) {
    if (p.name.starts_with("head.")) p.tensor.set_requires_grad(false);
  }
  net.entries.push_back({"probe.weight", Tensor<float>({c, f}, 0.0f)});
  net.entries.push_back({"probe.bias", Tensor<float>({c}, 0.0f)});
  net.entries[encoder_entries].tensor.set_requires_grad(true);
  net.entries[encoder_entries + 1].tensor.set_requires_grad(true);
  NetworkParams<float> encoder_view;
  const auto labels = train.label_matrix(all_rows(n)).cast<float>();

  for (std::size_t epoch = 0; epoch < ft.epochs; ++epoch) {
    RngStream rng({ft.seed, epoch, stream::kEval, 1, 0});
    const auto order = rng.permutation(n);
    for (std::size_t begin = 0; begin < n; begin += ft.batch_size) {
      std::span<const std::size_t> rows(order.data() + begin, std::min(ft.batch_size, n - begin));
      // encoder_forward checks the parameter count, so it gets the encoder
      // entries only; moving them keeps gradients attached to `net`.
      encoder_view.entries.assign(std::make_move_iterator(net.entries.begin()),
                                  std::make_move_iterator(net.entries.begin() + encoder_entries));
      Tensor<float> y({rows.size(), c});
      for (std::size_t k = 0; k < rows.size(); ++k) std::copy_n(labels.ptr() + rows[k] * c, c, y.ptr() + k * c);
      {
        Tape<float> tape;
        auto out = encoder_forward(tape, encoder_view, config, train.batch(rows).pixels());
        Var<float> logits = linear(out.backbone, tape.parameter(net.entries[encoder_entries].tensor),
                                   tape.parameter(net.entries[encoder_entries + 1].tensor));
        tape.backward(sigmoid_bce(logits, y));
      }
      std::move(encoder_view.entries.begin(), encoder_view.entries.end(), net.entries.begin());
      sgd_step(net, ft.lr, ft.weight_decay);
    }
  }

  FineTuneResult result;
  result.encoder.role = Role::student;
  result.encoder.entries.assign(net.entries.begin(), net.entries.begin() + encoder_entries);
  Tensor<double> scores({test.size(), c});
  Tensor<float> feats = encode_backbone(result.encoder, config, test.batch_range(0, test.size()).pixels());
  const auto& w = net.entries[encoder_entries].tensor;
  const auto& b = net.entries[encoder_entries + 1].tensor;
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      double s = b[k];
      for (std::size_t j = 0; j < f; ++j) s += static_cast<double>(feats[i * f + j]) * w[k * f + j];
      scores[i * c + k] = s;
    }
  }
  result.eval = score_classes(scores, test.label_matrix(all_rows(test.size())), test.class_names());
  return result;
}

}  // namespace c2l
