// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Pass criterion numbers as arguments to run
// a subset, e.g. `c2l_acceptance 1 4 5`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "c2l/checkpoint.hpp"
#include "c2l/cli.hpp"
#include "c2l/eval.hpp"
#include "c2l/mixup.hpp"
#include "c2l/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace c2l;
namespace ct = c2l::testing;
namespace fs = std::filesystem;

namespace {

// Thresholds.
constexpr double kGradTol = 1e-3;
constexpr double kGradStep = 1e-4;
constexpr double kGradBudgetSeconds = 120.0;
constexpr std::size_t kQueueInserts = 10000;
constexpr std::size_t kLambdaDraws = 10000;
constexpr double kKsAlpha = 0.01;
constexpr double kHandTol = 1e-10;
constexpr double kUniformTol = 1e-9;
constexpr std::size_t kAurocInstances = 1000;
constexpr double kAurocTol = 1e-12;
constexpr double kMinProbeAuroc = 0.85;
constexpr double kMinGainOverRandom = 0.05;
constexpr double kRunBudgetSeconds = 20.0 * 60.0;
constexpr double kTop1ChanceMultiple = 10.0;
constexpr double kAblationTie = 0.01;
constexpr double kAblationInversion = 0.02;
constexpr std::uint64_t kSeeds[] = {0, 1, 2};

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("c2l_accept_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------
// 1. Gradients against central differences.

Verdict gradients() {
  using ct::gradcheck;
  using ct::random_tensor;
  using ct::weighted_sum;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, ct::GradCheckResult>> results;
  auto check = [&](const std::string& name, std::vector<Tensor<double>> in, const ct::BuildFn& f) {
    results.emplace_back(name, gradcheck(std::move(in), f, kGradStep));
  };

  check("add", {random_tensor({3, 4}, 1), random_tensor({3, 4}, 2)},
        [](auto&, const auto& v) { return weighted_sum(add(v[0], v[1]), 3); });
  check("scale", {random_tensor({3, 4}, 4)}, [](auto&, const auto& v) { return weighted_sum(scale(v[0], 1.7), 5); });
  check("mul", {random_tensor({3, 4}, 6), random_tensor({3, 4}, 7)},
        [](auto&, const auto& v) { return weighted_sum(mul(v[0], v[1]), 8); });
  check("relu", {random_tensor({4, 5}, 9)}, [](auto&, const auto& v) { return weighted_sum(relu(v[0]), 10); });
  check("matmul", {random_tensor({3, 4}, 11), random_tensor({4, 2}, 12)},
        [](auto&, const auto& v) { return weighted_sum(matmul(v[0], v[1]), 13); });
  check("linear", {random_tensor({3, 4}, 14), random_tensor({5, 4}, 15), random_tensor({5}, 16)},
        [](auto&, const auto& v) { return weighted_sum(linear(v[0], v[1], v[2]), 17); });
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      check(fmt("conv2d(s%zu,p%zu)", stride, pad),
            {random_tensor({2, 2, 6, 5}, 18 + stride), random_tensor({3, 2, 3, 3}, 20 + pad), random_tensor({3}, 22)},
            [=](auto&, const auto& v) { return weighted_sum(conv2d(v[0], v[1], v[2], {stride, pad}), 23); });
    }
  }
  check("group_norm",
        {random_tensor({2, 8, 3, 3}, 24), random_tensor({8}, 25, 0.5, 1.5), random_tensor({8}, 26)},
        [](auto&, const auto& v) { return weighted_sum(group_norm(v[0], v[1], v[2], 4), 27); });
  check("max_pool_2x2", {random_tensor({2, 3, 4, 6}, 28)},
        [](auto&, const auto& v) { return weighted_sum(max_pool_2x2(v[0]), 29); });
  check("global_avg_pool", {random_tensor({2, 3, 4, 6}, 30)},
        [](auto&, const auto& v) { return weighted_sum(global_avg_pool(v[0]), 31); });
  check("flatten", {random_tensor({2, 3, 2, 2}, 32)},
        [](auto&, const auto& v) { return weighted_sum(flatten(v[0]), 33); });
  check("l2_normalize", {random_tensor({3, 5}, 34)},
        [](auto&, const auto& v) { return weighted_sum(l2_normalize(v[0]), 35); });
  const std::vector<std::size_t> targets{0, 2, 1};
  check("softmax_cross_entropy", {random_tensor({3, 4}, 36, -3, 3)},
        [&](auto&, const auto& v) { return softmax_cross_entropy(v[0], targets, Reduction::mean); });
  const Tensor<double> y({3, 2}, {1, 0, 0, 1, 1, 1});
  check("sigmoid_bce", {random_tensor({3, 2}, 37, -3, 3)},
        [&](auto&, const auto& v) { return sigmoid_bce(v[0], y, Reduction::sum); });
  const auto pos = l2_normalize(random_tensor({3, 5}, 38));
  const auto neg = l2_normalize(random_tensor({6, 5}, 39));
  check("contrastive_logits", {random_tensor({3, 5}, 40)},
        [&](auto&, const auto& v) { return weighted_sum(contrastive_logits(v[0], pos, neg, 0.2), 41); });
  for (Reduction r : {Reduction::mean, Reduction::sum}) {
    check(r == Reduction::mean ? "info_nce(mean)" : "info_nce(sum)", {random_tensor({4, 7}, 42, -3, 3)},
          [=](auto&, const auto& v) { return info_nce_loss(v[0], r); });
  }

  // Encoder on two views plus the mixed view, through the full C2L loss,
  // differentiated with respect to every encoder parameter.
  EncoderConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.feature_dim = 16;
  const auto base = init_params<double>(cfg, 43);
  const auto x1 = random_tensor({2, 1, 16, 16}, 44, 0, 1);
  const MixSpec spec{0.35, {1, 0}};
  const auto x1m = batch_mixup(ImageBatch(x1.cast<float>()), spec).pixels().cast<double>();
  const auto queue = MemoryQueue<double>::random(8, cfg.feature_dim, {0, 0, stream::kQueue, 0, 0});
  const auto teacher = clone_params(base, Role::teacher);
  const FeatureBatch<double> v2a{encode(teacher, cfg, random_tensor({2, 1, 16, 16}, 45, 0, 1)), Provenance::v2A};
  const FeatureBatch<double> v2m{feature_mixup(v2a.rows, MixSpec{0.6, {1, 0}}), Provenance::v2M};
  const FeatureBatch<double> vm{feature_mixup(v2a.rows, spec), Provenance::vm};
  auto loss_of = [&](NetworkParams<double>& p, Tape<double>& tape) {
    auto a = encoder_forward(tape, p, cfg, x1);
    auto m = encoder_forward(tape, p, cfg, x1m);
    return c2l_loss(a.features, m.features, v2a, v2m, vm, queue, ContrastOptions{0.2}).total;
  };
  NetworkParams<double> p = base;
  {
    Tape<double> tape;
    tape.backward(loss_of(p, tape));
  }
  ct::GradCheckResult composite;
  NetworkParams<double> q = base;
  for (auto& e : q.entries) e.tensor.set_requires_grad(false);
  for (std::size_t e = 0; e < q.size(); ++e) {
    for (std::size_t i = 0; i < q.entries[e].tensor.size(); ++i) {
      const double orig = q.entries[e].tensor[i];
      q.entries[e].tensor[i] = orig + kGradStep;
      Tape<double> t1;
      const double up = loss_of(q, t1).value()[0];
      q.entries[e].tensor[i] = orig - kGradStep;
      Tape<double> t2;
      const double down = loss_of(q, t2).value()[0];
      q.entries[e].tensor[i] = orig;
      const double numeric = (up - down) / (2 * kGradStep);
      composite.max_rel_error =
          std::max(composite.max_rel_error, ct::relative_error(p.entries[e].tensor.grad()[i], numeric));
      ++composite.checked;
    }
  }
  results.emplace_back("encoder+c2l_loss", composite);

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Verdict v;
  double worst = 0;
  std::size_t checked = 0;
  for (const auto& [name, r] : results) {
    v.require(r.max_rel_error < kGradTol, fmt("%s rel err %.3g", name.c_str(), r.max_rel_error));
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
  }
  v.require(seconds < kGradBudgetSeconds, fmt("took %.1f s", seconds));
  v.note(fmt("%zu checks, %zu coordinates (composite %zu), max rel err %.3g, %.1f s", results.size(), checked,
             composite.checked, worst, seconds));
  return v;
}

// ---------------------------------------------------------------------------
// 2. Momentum teacher and queue.

TrainConfig small_step_config() {
  TrainConfig c;
  c.batch_size = 8;
  c.seed = 11;
  return c;
}

const Dataset& step_batch_source() {
  static const Dataset d = [] {
    SynthConfig sc;
    std::vector<GrayImage8> images;
    for (std::size_t i = 0; i < 8; ++i) images.push_back(synth_image(sc, i % 2, 0, i));
    return Dataset::from_images(std::move(images), {}, {});
  }();
  return d;
}

bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

bool bitwise_equal(const NetworkParams<float>& a, const NetworkParams<float>& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (!bitwise_equal(a.entries[k].tensor, b.entries[k].tensor)) return false;
  }
  return true;
}

Verdict teacher_and_queue() {
  Verdict v;
  const EncoderConfig enc;
  const auto student = init_params<float>(enc, 1);
  const auto teacher0 = clone_params(init_params<float>(enc, 2), Role::teacher);

  for (double theta : {0.0, 0.5, 1.0}) {
    auto t = teacher0;
    momentum_update(t, student, theta);
    bool exact = true;
    for (std::size_t k = 0; k < t.size(); ++k) {
      const auto a = teacher0.entries[k].tensor.data();
      const auto s = student.entries[k].tensor.data();
      const auto got = t.entries[k].tensor.data();
      for (std::size_t i = 0; i < got.size(); ++i) {
        float want = theta == 0.0 ? s[i] : theta == 1.0 ? a[i] : 0.5f * a[i] + 0.5f * s[i];
        exact &= std::memcmp(&want, &got[i], sizeof(float)) == 0;
      }
    }
    v.require(exact, fmt("momentum theta=%.1f not exact", theta));
  }

  // Queue against a deque oracle.
  const std::size_t cap = 64, dim = 4;
  auto queue = MemoryQueue<float>::random(cap, dim, {5, 0, stream::kQueue, 0, 0});
  std::deque<std::vector<float>> oracle;
  for (std::size_t a = 0; a < cap; ++a) oracle.emplace_back(queue.entry(a).begin(), queue.entry(a).end());
  std::mt19937_64 gen(12345);
  bool fifo_ok = true, length_ok = true;
  float counter = 0;
  for (std::size_t n = 0; n < kQueueInserts; ++n) {
    const std::size_t rows = 1 + gen() % cap;
    Tensor<float> block({rows, dim});
    for (float& x : block.data()) x = counter++;
    queue.insert(block);
    for (std::size_t r = 0; r < rows; ++r) {
      oracle.emplace_back(block.row(r).begin(), block.row(r).end());
      oracle.pop_front();
    }
    length_ok &= queue.capacity() == cap && oracle.size() == cap;
    if (n % 97 == 0 || n + 1 == kQueueInserts) {
      for (std::size_t a = 0; a < cap; ++a) {
        fifo_ok &= std::equal(oracle[a].begin(), oracle[a].end(), queue.entry(a).begin());
      }
    }
  }
  v.require(fifo_ok, "queue order differs from FIFO oracle");
  v.require(length_ok, "queue length changed");

  // One full step: three blocks in order v2A, v2M, vm; the teacher moves
  // only by the momentum rule.
  const TrainConfig c = small_step_config();
  TrainState s = init_state(c);
  TrainState warm = s;
  const auto batch = step_batch_source().batch_range(0, 8);
  train_step(warm, batch, c, c.lr);  // teacher != student from here on
  s = warm;
  const auto teacher_before = s.teacher;
  const auto teacher_sum = param_checksum(s.teacher);
  const std::uint64_t it = s.iteration;
  const auto inserted = s.queue.inserted();
  train_step(s, batch, c, c.lr);

  const ImageBatch x2a = augment_batch(batch, {c.seed, it, stream::kView2, 0, 0}, c.augment);
  RngStream rng({c.seed, it, stream::kMixup, 0, 0});
  const MixSpec spec = sample_mixspec(8, rng);
  const Tensor<float> v2a = encode(teacher_before, c.encoder, x2a.pixels());
  const Tensor<float> v2m = encode(teacher_before, c.encoder, batch_mixup(x2a, spec).pixels());
  const Tensor<float> vm = feature_mixup(v2a, spec);
  const Tensor<float> newest = s.queue.newest(24);
  auto rows = [&](std::size_t from) {
    Tensor<float> t({8, newest.dim(1)});
    std::copy_n(newest.data().begin() + from * newest.dim(1), t.size(), t.data().begin());
    return t;
  };
  v.require(s.queue.inserted() == inserted + 24, "3Z entries per step");
  v.require(bitwise_equal(rows(0), v2a) && bitwise_equal(rows(8), v2m) && bitwise_equal(rows(16), vm),
            "queue blocks not v2A, v2M, vm");

  auto expected_teacher = teacher_before;
  momentum_update(expected_teacher, s.student, c.theta);
  v.require(bitwise_equal(expected_teacher, s.teacher), "teacher changed other than by momentum");
  v.require(param_checksum(teacher_before) == teacher_sum, "teacher snapshot moved");
  bool no_grad = true;
  for (const auto& e : s.teacher.entries) no_grad &= !e.tensor.requires_grad() && !e.tensor.has_grad();
  v.require(no_grad, "teacher holds gradients");

  // Guard: with theta = 1 the teacher checksum survives training steps.
  TrainConfig frozen = c;
  frozen.theta = 1.0;
  TrainState f = init_state(frozen);
  const auto frozen_sum = param_checksum(f.teacher);
  for (int i = 0; i < 3; ++i) train_step(f, batch, frozen, frozen.lr);
  v.require(param_checksum(f.teacher) == frozen_sum, "teacher checksum moved at theta=1");

  v.note(fmt("theta {0,0.5,1} exact, %zu random inserts, 3Z order and checksum guard checked", kQueueInserts));
  return v;
}

// ---------------------------------------------------------------------------
// 3. Mixup.

double kolmogorov_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lam = (sn + 0.12 + 0.11 / sn) * d;
  double sum = 0;
  for (int k = 1; k <= 100; ++k) sum += (k % 2 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * lam * lam);
  return std::clamp(sum, 0.0, 1.0);
}

// Mean InfoNCE over rows with target index 0, in long double.
double oracle_info_nce(const Tensor<float>& anchors, const Tensor<float>& positives, const MemoryQueue<float>& q,
                       double tau) {
  const std::size_t z = anchors.dim(0), d = anchors.dim(1);
  long double total = 0;
  for (std::size_t r = 0; r < z; ++r) {
    std::vector<long double> logits;
    auto dot = [&](std::span<const float> b) {
      long double s = 0;
      for (std::size_t i = 0; i < d; ++i) s += static_cast<long double>(anchors.row(r)[i]) * b[i];
      return s / tau;
    };
    logits.push_back(dot(positives.row(r)));
    for (std::size_t k = 0; k < q.capacity(); ++k) {
      logits.push_back(dot(std::span<const float>(q.storage().data().data() + k * d, d)));
    }
    const long double m = *std::max_element(logits.begin(), logits.end());
    long double se = 0;
    for (long double l : logits) se += std::exp(l - m);
    total += m + std::log(se) - logits[0];
  }
  return static_cast<double>(total / z);
}

Verdict mixup() {
  Verdict v;
  const auto batch = step_batch_source().batch_range(0, 8);
  RngStream prng({3, 0, stream::kMixup, 0, 0});
  const auto perm = prng.permutation(8);
  const ImageBatch same = batch_mixup(batch, MixSpec{1.0, perm});
  v.require(bitwise_equal(same.pixels(), batch.pixels()), "lambda=1 image mixup not identity");
  const ImageBatch swapped = batch_mixup(batch, MixSpec{0.0, perm});
  bool perm_ok = true;
  const std::size_t px = batch.pixels().size() / 8;
  for (std::size_t j = 0; j < 8; ++j) {
    perm_ok &= std::memcmp(swapped.pixels().data().data() + j * px, batch.pixels().data().data() + perm[j] * px,
                           px * sizeof(float)) == 0;
  }
  v.require(perm_ok, "lambda=0 image mixup not the permuted batch");
  const Tensor<float> feats = l2_normalize(ct::random_tensor({8, 16}, 4).cast<float>());
  Tensor<float> permuted({8, 16});
  for (std::size_t j = 0; j < 8; ++j) std::copy_n(feats.row(perm[j]).begin(), 16, permuted.row(j).begin());
  v.require(bitwise_equal(feature_mixup(feats, MixSpec{1.0, perm}), l2_normalize(feats)), "lambda=1 feature mixup");
  v.require(bitwise_equal(feature_mixup(feats, MixSpec{0.0, perm}), l2_normalize(permuted)), "lambda=0 feature mixup");

  // Lambda draws as the trainer makes them, one per iteration.
  std::vector<double> lambdas;
  for (std::size_t it = 0; it < kLambdaDraws; ++it) {
    RngStream rng({0, it, stream::kMixup, 0, 0});
    lambdas.push_back(sample_mixspec(32, rng).lambda);
  }
  std::sort(lambdas.begin(), lambdas.end());
  double d = 0;
  const double n = static_cast<double>(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    d = std::max({d, (i + 1) / n - lambdas[i], lambdas[i] - i / n});
  }
  const double p = kolmogorov_pvalue(d, lambdas.size());
  v.require(p > kKsAlpha, fmt("KS p=%.4g", p));

  // Shared MixSpec: loss_M of a real step must equal the loss recomputed with
  // one spec applied to both augmented batches and to the teacher features.
  const TrainConfig c = small_step_config();
  TrainState s = init_state(c);
  const TrainState before = s;
  const std::uint64_t it = s.iteration;
  const StepMetrics m = train_step(s, batch, c, c.lr);
  const ImageBatch x1a = augment_batch(batch, {c.seed, it, stream::kView1, 0, 0}, c.augment);
  const ImageBatch x2a = augment_batch(batch, {c.seed, it, stream::kView2, 0, 0}, c.augment);
  RngStream rng({c.seed, it, stream::kMixup, 0, 0});
  const MixSpec spec = sample_mixspec(8, rng);
  const auto v1a = encode(before.student, c.encoder, x1a.pixels());
  const auto v1m = encode(before.student, c.encoder, batch_mixup(x1a, spec).pixels());
  const auto v2a = encode(before.teacher, c.encoder, x2a.pixels());
  const auto v2m = encode(before.teacher, c.encoder, batch_mixup(x2a, spec).pixels());
  const auto vm = feature_mixup(v2a, spec);
  const double want_a = oracle_info_nce(v1a, v2a, before.queue, c.tau);
  const double want_m =
      oracle_info_nce(v1m, v2m, before.queue, c.tau) + oracle_info_nce(v1m, vm, before.queue, c.tau);
  v.require(std::abs(m.loss_a - want_a) < 1e-4, fmt("loss_A %.6f vs oracle %.6f", m.loss_a, want_a));
  v.require(std::abs(m.loss_m - want_m) < 1e-4, fmt("loss_M %.6f vs oracle %.6f", m.loss_m, want_m));

  // The same recomputation with an independent spec for view 2 must not match.
  RngStream other({c.seed, it, stream::kMixupView2, 0, 0});
  const MixSpec spec2 = sample_mixspec(8, other);
  const auto v2m_other = encode(before.teacher, c.encoder, batch_mixup(x2a, spec2).pixels());
  const double unshared =
      oracle_info_nce(v1m, v2m_other, before.queue, c.tau) + oracle_info_nce(v1m, vm, before.queue, c.tau);
  v.require(std::abs(m.loss_m - unshared) > 1e-3, "check cannot tell shared from independent specs");

  v.note(fmt("lambda 0/1 exact, KS D=%.4f p=%.3f over %zu draws, loss_M matches shared-spec oracle (|d|=%.2g)", d, p,
             kLambdaDraws, std::abs(m.loss_m - want_m)));
  return v;
}

// ---------------------------------------------------------------------------
// 4. InfoNCE values.

Verdict info_nce_values() {
  Verdict v;
  // -l0 + log(sum exp l), worked out by hand to double precision.
  const std::vector<std::pair<std::vector<double>, double>> cases{
      {{1, 2, 3}, 2.40760596444438},
      {{3, 1, 0}, 0.16984601955628564},
      {{0, 0, 0}, 1.0986122886681098},
      {{-2, 0.5, 4}, 6.0321536226831585},
  };
  double worst = 0;
  for (const auto& [logits, want] : cases) {
    const double got = info_nce_loss(Tensor<double>({1, 3}, logits));
    worst = std::max(worst, std::abs(got - want));
    Tape<double> tape;
    const double via_tape = info_nce_loss(tape.variable(Tensor<double>({1, 3}, logits))).value()[0];
    worst = std::max(worst, std::abs(via_tape - want));
  }
  Tensor<double> rows({4, 3});
  for (std::size_t i = 0; i < cases.size(); ++i) std::copy_n(cases[i].first.begin(), 3, rows.row(i).begin());
  double mean = 0, sum = 0;
  for (const auto& cs : cases) sum += cs.second;
  mean = sum / 4;
  worst = std::max(worst, std::abs(info_nce_loss(rows, Reduction::mean) - mean));
  worst = std::max(worst, std::abs(info_nce_loss(rows, Reduction::sum) - sum));
  v.require(worst < kHandTol, fmt("hand cases off by %.3g", worst));

  // Uniform logits over N + 1 entries give log(N + 1).
  double uworst = 0;
  for (std::size_t n : {1u, 16u, 2048u, 32768u}) {
    Tensor<double> u({3, n + 1}, 0.731);
    uworst = std::max(uworst, std::abs(info_nce_loss(u) - std::log(static_cast<double>(n + 1))));
  }
  // Same through contrastive logits: a positive and a queue identical to the anchor.
  Tensor<double> anchor({2, 8}, 0.0);
  anchor[0] = anchor[8] = 1.0;
  Tensor<double> negatives({2048, 8}, 0.0);
  for (std::size_t k = 0; k < 2048; ++k) negatives[k * 8] = 1.0;
  Tape<double> tape;
  const double through =
      info_nce_loss(contrastive_logits(tape.variable(anchor), anchor, negatives, 0.2)).value()[0];
  uworst = std::max(uworst, std::abs(through - std::log(2049.0)));
  v.require(uworst < kUniformTol, fmt("uniform case off by %.3g", uworst));
  v.note(fmt("hand max err %.2g, uniform max err %.2g", worst, uworst));
  return v;
}

// ---------------------------------------------------------------------------
// 5. AUROC.

double brute_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      ++pairs;
    }
  }
  return wins / static_cast<double>(pairs);
}

Verdict auroc_values() {
  Verdict v;
  std::mt19937_64 gen(2024);
  double worst = 0;
  for (std::size_t inst = 0; inst < kAurocInstances; ++inst) {
    const std::size_t n = 2 + gen() % 300;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    const bool coarse = inst % 2 == 0;  // many ties
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? static_cast<double>(gen() % 7) : std::uniform_real_distribution<double>(-5, 5)(gen);
      y[i] = gen() % 3 == 0;
    }
    y[0] = 1;
    y[1] = 0;
    worst = std::max(worst, std::abs(auroc(s, y) - brute_auroc(s, y)));
  }
  v.require(worst <= kAurocTol, fmt("max diff %.3g", worst));
  v.note(fmt("%zu instances, max |sorted - brute| = %.3g", kAurocInstances, worst));
  return v;
}

// ---------------------------------------------------------------------------
// 6-8. Pretraining on the synthetic corpus.

struct Corpus {
  Dataset pretrain, train, test;
};

Corpus make_corpus(const fs::path& dir) {
  const SynthConfig sc;
  synth_generate(sc, dir);
  return {Dataset::load(dir / "pretrain" / "manifest.csv"), Dataset::load(dir / "train" / "manifest.csv"),
          Dataset::load(dir / "test" / "manifest.csv")};
}

struct RunResult {
  double probe = 0;
  double random_probe = 0;
  double final_top1 = 0;   // mean over the last epoch
  double epoch1_top1 = 0;  // mean over the first epoch
  double smoothed_epoch1 = 0;
  double smoothed_epoch5 = 0;
  double finetune = 0;          // from the pretrained student
  double scratch_finetune = 0;  // from the same random init
  double cpu_seconds = 0;
};

constexpr std::size_t kSmoothWindow = 50;

RunResult pretrain_and_probe(const Corpus& corpus, MixupMode mode, std::uint64_t seed, bool with_random) {
  const double cpu0 = thread_cpu_seconds();
  TrainConfig tc;
  tc.mixup = mode;
  tc.seed = seed;
  ProbeConfig pc;
  pc.seed = seed;
  FineTuneConfig fc;
  fc.seed = seed;
  RunResult r;
  TrainState state = init_state(tc);
  const NetworkParams<float> initial = state.student;
  if (with_random) r.random_probe = linear_probe(initial, tc.encoder, corpus.train, corpus.test, pc).mean_auroc;

  const std::size_t spe = steps_per_epoch(tc, corpus.pretrain.size());
  std::vector<double> losses, top1;
  TrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) {
    losses.push_back(m.loss_a + m.loss_m);
    top1.push_back(m.top1);
  };
  train(state, tc, corpus.pretrain, hooks);
  auto mean = [](auto b, auto e) { return std::accumulate(b, e, 0.0) / static_cast<double>(e - b); };
  r.final_top1 = mean(top1.end() - static_cast<std::ptrdiff_t>(spe), top1.end());
  r.epoch1_top1 = mean(top1.begin(), top1.begin() + static_cast<std::ptrdiff_t>(spe));
  auto window_end = [&](std::size_t epoch) {
    const auto end = losses.begin() + static_cast<std::ptrdiff_t>(epoch * spe);
    return mean(end - static_cast<std::ptrdiff_t>(std::min(kSmoothWindow, epoch * spe)), end);
  };
  r.smoothed_epoch1 = window_end(1);
  r.smoothed_epoch5 = window_end(std::min<std::size_t>(5, tc.epochs));
  r.probe = linear_probe(state.student, tc.encoder, corpus.train, corpus.test, pc).mean_auroc;
  if (with_random) {
    r.finetune = fine_tune(state.student, tc.encoder, corpus.train, corpus.test, fc).eval.mean_auroc;
    r.scratch_finetune = fine_tune(initial, tc.encoder, corpus.train, corpus.test, fc).eval.mean_auroc;
  }
  r.cpu_seconds = thread_cpu_seconds() - cpu0;
  return r;
}

struct LongRuns {
  std::map<MixupMode, std::vector<RunResult>> by_mode;
  double wall_seconds = 0;
};

LongRuns run_long(const std::set<MixupMode>& modes) {
  TempDir dir;
  const Corpus corpus = make_corpus(dir.path());
  LongRuns out;
  std::vector<std::thread> threads;
  for (MixupMode mode : modes) out.by_mode[mode].resize(std::size(kSeeds));
  const auto t0 = std::chrono::steady_clock::now();
  for (MixupMode mode : modes) {
    for (std::size_t k = 0; k < std::size(kSeeds); ++k) {
      RunResult* slot = &out.by_mode[mode][k];
      threads.emplace_back([&corpus, mode, k, slot] {
        *slot = pretrain_and_probe(corpus, mode, kSeeds[k], mode == MixupMode::full);
      });
    }
  }
  for (auto& t : threads) t.join();
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& [mode, runs] : out.by_mode) {
    for (std::size_t k = 0; k < runs.size(); ++k) {
      const auto& r = runs[k];
      std::printf("  run %-6s seed %llu: probe %.4f random %.4f top1 first %.4f last %.4f loss@1 %.4f loss@5 %.4f "
                  "finetune %.4f scratch %.4f cpu %.0f s\n",
                  std::string(mixup_mode_name(mode)).c_str(), static_cast<unsigned long long>(kSeeds[k]), r.probe,
                  r.random_probe, r.epoch1_top1, r.final_top1, r.smoothed_epoch1, r.smoothed_epoch5, r.finetune,
                  r.scratch_finetune, r.cpu_seconds);
    }
  }
  std::fflush(stdout);
  return out;
}

std::vector<double> collect(const std::vector<RunResult>& runs, double RunResult::*field) {
  std::vector<double> v;
  for (const auto& r : runs) v.push_back(r.*field);
  return v;
}

Verdict probe_quality(const LongRuns& runs) {
  Verdict v;
  const auto& full = runs.by_mode.at(MixupMode::full);
  const double probe = median3(collect(full, &RunResult::probe));
  const double random = median3(collect(full, &RunResult::random_probe));
  const double slowest = std::ranges::max(collect(full, &RunResult::cpu_seconds));
  v.require(probe > random, "pretrained probe not above random init");
  v.require(probe >= kMinProbeAuroc, fmt("median AUROC %.4f < %.2f", probe, kMinProbeAuroc));
  v.require(probe - random >= kMinGainOverRandom, fmt("gain %.4f < %.2f", probe - random, kMinGainOverRandom));
  v.require(slowest <= kRunBudgetSeconds, fmt("slowest run %.0f s CPU", slowest));
  v.note(fmt("median AUROC %.4f, random init %.4f, gain %+.4f, slowest run %.0f s CPU", probe, random,
             probe - random, slowest));
  return v;
}

Verdict final_top1(const LongRuns& runs, std::size_t queue_size) {
  Verdict v;
  const auto top1 = collect(runs.by_mode.at(MixupMode::full), &RunResult::final_top1);
  const double bar = kTop1ChanceMultiple / static_cast<double>(queue_size + 1);
  const double med = median3(top1);
  v.require(med > bar, fmt("median final top1 %.4f <= %.4f", med, bar));
  v.note(fmt("final-epoch top1 %.4f / %.4f / %.4f (median %.4f), bar %.4f", top1[0], top1[1], top1[2], med, bar));
  return v;
}

// Supplementary learning-curve checks from the same runs.
Verdict learning_curve(const LongRuns& runs, std::size_t queue_size) {
  Verdict v;
  const auto& full = runs.by_mode.at(MixupMode::full);
  const double chance = 1.0 / static_cast<double>(queue_size + 1);
  const double e1 = median3(collect(full, &RunResult::epoch1_top1));
  const double l1 = median3(collect(full, &RunResult::smoothed_epoch1));
  const double l5 = median3(collect(full, &RunResult::smoothed_epoch5));
  v.require(e1 > chance, fmt("epoch-1 top1 %.4f <= chance %.4f", e1, chance));
  v.require(l5 < l1, fmt("smoothed loss %.4f at epoch 5 >= %.4f at epoch 1", l5, l1));
  v.note(fmt("epoch-1 top1 %.4f vs chance %.5f; %zu-step smoothed loss %.4f -> %.4f (epoch 1 -> 5)", e1, chance,
             kSmoothWindow, l1, l5));
  return v;
}

Verdict fine_tuning(const LongRuns& runs) {
  Verdict v;
  const auto& full = runs.by_mode.at(MixupMode::full);
  const double c2l = median3(collect(full, &RunResult::finetune));
  const double scratch = median3(collect(full, &RunResult::scratch_finetune));
  const double probe = median3(collect(full, &RunResult::probe));
  v.require(c2l >= scratch, fmt("fine-tune from C2L %.4f below scratch %.4f", c2l, scratch));
  v.require(c2l >= probe - 0.02, fmt("fine-tune %.4f below probe %.4f by more than 0.02", c2l, probe));
  v.note(fmt("median fine-tune AUROC from C2L %.4f, from scratch %.4f, probe %.4f", c2l, scratch, probe));
  return v;
}

Verdict ablation_order(const LongRuns& runs) {
  Verdict v;
  const double full = median3(collect(runs.by_mode.at(MixupMode::full), &RunResult::probe));
  const double batch = median3(collect(runs.by_mode.at(MixupMode::batch), &RunResult::probe));
  const double none = median3(collect(runs.by_mode.at(MixupMode::none), &RunResult::probe));
  auto pair = [&](const char* hi_name, double hi, const char* lo_name, double lo) {
    const double inversion = lo - hi;
    v.require(inversion <= kAblationInversion, fmt("%s below %s by %.4f", hi_name, lo_name, inversion));
    if (inversion > kAblationTie && inversion <= kAblationInversion) {
      v.note(fmt("%s trails %s by %.4f, outside the tie band but not an inversion", hi_name, lo_name, inversion));
    }
  };
  pair("full", full, "batch", batch);
  pair("batch", batch, "none", none);
  v.note(fmt("median AUROC full %.4f, batch %.4f, none %.4f", full, batch, none));
  return v;
}

// ---------------------------------------------------------------------------
// 9. Reproducibility through the command line.

Verdict reproducibility() {
  Verdict v;
  TempDir dir;
  const fs::path cfg = dir.path() / "run.json";
  std::ofstream(cfg) << R"({"synth": {"num_unlabeled": 96, "num_labeled_train": 16, "num_labeled_test": 16},
                            "train": {"epochs": 3}})";
  std::ostringstream out, err;
  auto run = [&](std::vector<std::string> args, bool with_config = true) {
    if (with_config) args.insert(args.end(), {"--config", cfg.string()});
    const int code = run_cli(args, out, err);
    if (code != kExitOk) v.require(false, "c2l " + args[0] + " exited " + std::to_string(code) + ": " + err.str());
    return code == kExitOk;
  };
  const std::string data = (dir.path() / "corpus").string();
  auto out_dir = [&](const char* name) { return (dir.path() / name).string(); };
  if (!run({"synth", "--out", data})) return v;
  for (const char* name : {"a", "b"}) {
    if (!run({"pretrain", "--data", data, "--out", out_dir(name), "--deterministic"})) return v;
  }
  if (!run({"pretrain", "--data", data, "--out", out_dir("cut"), "--deterministic", "--stop-after-epochs", "1"})) {
    return v;
  }
  if (!run({"pretrain", "--data", data, "--out", out_dir("cut"), "--deterministic", "--resume"})) return v;
  if (!run({"export", "--from", (dir.path() / "a" / "checkpoint.c2l").string(), "--out", out_dir("exported.c2l")}, false)) {
    return v;
  }

  const std::string a = slurp(dir.path() / "a" / "student.c2l");
  v.require(!a.empty(), "no export written");
  v.require(a == slurp(dir.path() / "b" / "student.c2l"), "repeated runs differ");
  v.require(slurp(dir.path() / "a" / "metrics.jsonl") == slurp(dir.path() / "b" / "metrics.jsonl"),
            "repeated metrics differ");
  v.require(a == slurp(dir.path() / "cut" / "student.c2l"), "resumed run differs");
  v.require(slurp(dir.path() / "a" / "checkpoint.c2l") == slurp(dir.path() / "cut" / "checkpoint.c2l"),
            "resumed checkpoint differs");
  v.require(a == slurp(dir.path() / "exported.c2l"), "export of the final checkpoint differs");
  v.note(fmt("export of %zu bytes identical across repeat, resume and re-export", a.size()));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto want = [&](int n) { return wanted.empty() || wanted.contains(n); };

  int failures = 0;
  auto report = [&](const char* label, const char* title, const Verdict& v) {
    std::printf("%s %s: %s  (%s)\n", label, title, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
    failures += !v.pass;
  };
  auto guarded = [&](const char* label, const char* title, const std::function<Verdict()>& f) {
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    report(label, title, v);
  };

  if (want(1)) guarded("criterion 1", "gradients match finite differences", gradients);
  if (want(2)) guarded("criterion 2", "momentum teacher and queue", teacher_and_queue);
  if (want(3)) guarded("criterion 3", "mixup", mixup);
  if (want(4)) guarded("criterion 4", "info_nce values", info_nce_values);
  if (want(5)) guarded("criterion 5", "AUROC matches brute force", auroc_values);

  if (want(6) || want(7) || want(8)) {
    std::set<MixupMode> modes{MixupMode::full};
    if (want(8)) modes.insert({MixupMode::batch, MixupMode::none});
    LongRuns runs;
    std::string error;
    try {
      runs = run_long(modes);
    } catch (const std::exception& e) {
      error = e.what();
    }
    const std::size_t n = TrainConfig{}.queue_size;
    auto from_runs = [&](const std::function<Verdict()>& f) {
      return [&, f] {
        if (!error.empty()) throw std::runtime_error(error);
        return f();
      };
    };
    if (want(6)) guarded("criterion 6", "linear probe after pretraining", from_runs([&] { return probe_quality(runs); }));
    if (want(7)) guarded("criterion 7", "final top-1 above chance", from_runs([&] { return final_top1(runs, n); }));
    if (want(6) || want(7)) {
      guarded("supplementary", "learning curve", from_runs([&] { return learning_curve(runs, n); }));
      guarded("supplementary", "fine-tuning", from_runs([&] { return fine_tuning(runs); }));
    }
    if (want(8)) guarded("criterion 8", "ablation ordering", from_runs([&] { return ablation_order(runs); }));
  }
  if (want(9)) guarded("criterion 9", "bitwise reproducibility", reproducibility);

  std::printf("%s\n", failures == 0 ? "ALL PASS" : (std::to_string(failures) + " FAILED").c_str());
  return failures == 0 ? 0 : 1;
}
