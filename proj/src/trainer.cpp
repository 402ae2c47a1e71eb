#include "c2l/trainer.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "c2l/mixup.hpp"

namespace c2l {

std::string_view mixup_mode_name(MixupMode m) {
  switch (m) {
    case MixupMode::none: return "none";
    case MixupMode::traditional: return "traditional";
    case MixupMode::batch: return "batch";
    case MixupMode::batch_loss_m: return "batch_loss_m";
    case MixupMode::full: return "full";
  }
  return "?";
}

MixupMode parse_mixup_mode(std::string_view s) {
  for (auto m : {MixupMode::none, MixupMode::traditional, MixupMode::batch, MixupMode::batch_loss_m,
                 MixupMode::full}) {
    if (mixup_mode_name(m) == s) return m;
  }
  throw std::invalid_argument("unknown mixup mode '" + std::string(s) +
                              "' (none, traditional, batch, batch_loss_m, full)");
}

void TrainConfig::validate() const {
  encoder.validate();
  augment.validate();
  if (!(theta >= 0.0 && theta <= 1.0)) throw std::invalid_argument("theta must lie in [0, 1]");
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (queue_size < 1) throw std::invalid_argument("queue_size must be >= 1");
  if (3 * batch_size > queue_size) throw std::invalid_argument("queue_size must hold at least 3 batches");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw std::invalid_argument("sgd_momentum must lie in [0, 1)");
  for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
    if (lr_drop_epochs[i] >= epochs) throw std::invalid_argument("lr_drop_epochs must be < epochs");
    if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) {
      throw std::invalid_argument("lr_drop_epochs must be strictly increasing");
    }
  }
}

std::vector<std::size_t> TrainConfig::resolved_drop_epochs() const {
  if (!lr_drop_epochs.empty()) return lr_drop_epochs;
  // 120, 160 and 200 of a 240-epoch run, scaled.
  std::vector<std::size_t> out;
  for (std::size_t num : {120u, 160u, 200u}) {
    const std::size_t e = epochs * num / 240;
    if (e > 0 && e < epochs && (out.empty() || e > out.back())) out.push_back(e);
  }
  return out;
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double out = lr;
  for (std::size_t e : resolved_drop_epochs()) {
    if (epoch >= e) out /= 10.0;
  }
  return out;
}

TrainState init_state(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.seed = config.seed;
  s.student = init_params<float>(config.encoder, config.seed);
  s.teacher = clone_params(s.student, Role::teacher);
  if (config.sgd_momentum > 0.0) {
    s.velocity = clone_params(s.student, Role::student);
    for (auto& p : s.velocity.entries) {
      std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0f);
      p.tensor.set_requires_grad(false);
    }
  }
  s.queue = MemoryQueue<float>::random(config.queue_size, config.encoder.feature_dim,
                                       {config.seed, 0, stream::kQueue, 0, 0});
  return s;
}

template <typename T>
void momentum_update(NetworkParams<T>& teacher, const NetworkParams<T>& student, double theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw std::invalid_argument("momentum_update: theta must lie in [0, 1]");
  if (!teacher.same_layout(student)) throw std::invalid_argument("momentum_update: teacher/student layout mismatch");
  const T a = static_cast<T>(theta), b = static_cast<T>(1.0 - theta);
  for (std::size_t k = 0; k < teacher.entries.size(); ++k) {
    auto t = teacher.entries[k].tensor.data();
    auto s = student.entries[k].tensor.data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = a * t[i] + b * s[i];
  }
}

template <typename T>
std::uint64_t param_checksum(const NetworkParams<T>& params) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (const auto& p : params.entries) {
    for (T v : p.tensor.data()) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &v, sizeof(T));
      h = splitmix64(h ^ bits);
    }
  }
  return h;
}

template void momentum_update(NetworkParams<float>&, const NetworkParams<float>&, double);
template void momentum_update(NetworkParams<double>&, const NetworkParams<double>&, double);
template std::uint64_t param_checksum(const NetworkParams<float>&);
template std::uint64_t param_checksum(const NetworkParams<double>&);

namespace {

FeatureBatch<float> teacher_features(const TrainState& s, const TrainConfig& c, const ImageBatch& x, Provenance tag) {
  return {encode(s.teacher, c.encoder, x.pixels()), tag};
}

}  // namespace

StepMetrics train_step(TrainState& state, const ImageBatch& source, const TrainConfig& config, double lr) {
  const std::size_t z = source.size();
  if (z < 2) throw std::invalid_argument("train_step: batch needs at least 2 images");
  const std::uint64_t it = state.iteration;
  const MixupMode mode = config.mixup;

  ImageBatch x1a = augment_batch(source, {state.seed, it, stream::kView1, 0, 0}, config.augment);
  ImageBatch x2a = augment_batch(source, {state.seed, it, stream::kView2, 0, 0}, config.augment);

  ImageBatch x1m, x2m;
  MixSpec spec;
  if (mode == MixupMode::traditional) {
    RngStream r1({state.seed, it, stream::kMixup, 0, 0});
    RngStream r2({state.seed, it, stream::kMixupView2, 0, 0});
    x1m = pairwise_mixup(x1a, sample_pairwise_mixspec(z, r1));
    x2m = pairwise_mixup(x2a, sample_pairwise_mixspec(z, r2));
  } else if (mode != MixupMode::none) {
    RngStream rng({state.seed, it, stream::kMixup, 0, 0});
    spec = sample_mixspec(z, rng);
    x1m = batch_mixup(x1a, spec);
    x2m = batch_mixup(x2a, spec);
  }

  const bool use_a = mode == MixupMode::none || mode == MixupMode::batch_loss_m || mode == MixupMode::full;
  const bool use_m = mode != MixupMode::none;
  const bool use_vm = mode == MixupMode::full;

  Tape<float> tape;
  Var<float> v1a, v1m;
  if (use_a) v1a = encoder_forward(tape, state.student, config.encoder, x1a.pixels()).features;
  if (use_m) v1m = encoder_forward(tape, state.student, config.encoder, x1m.pixels()).features;

  FeatureBatch<float> v2a, v2m, vm;
  if (use_a || use_vm) v2a = teacher_features(state, config, x2a, Provenance::v2A);
  if (use_m) v2m = teacher_features(state, config, x2m, Provenance::v2M);
  if (use_vm) vm = {feature_mixup(v2a.rows, spec), Provenance::vm};

  StepMetrics m;
  m.step = it;
  m.epoch = state.epoch;
  m.lr = lr;
  const std::uint64_t teacher_before = param_checksum(state.teacher);
  try {
    auto loss = c2l_loss(v1a, v1m, v2a, v2m, vm, state.queue, ContrastOptions{config.tau, config.reduction},
                         LossTerms{use_a, use_m, use_vm});
    m.loss_a = loss.loss_a_value;
    m.loss_m = loss.loss_m_value;
    m.top1 = loss.top1;
    tape.backward(loss.total);
  } catch (const NumericError& e) {
    throw NumericError("iteration " + std::to_string(it) + ": non-finite loss or gradient (diverged?): " + e.what());
  }
  if (config.sgd_momentum > 0.0) {
    sgd_momentum_step(state.student, state.velocity, lr, config.weight_decay, config.sgd_momentum);
  } else {
    sgd_step(state.student, lr, config.weight_decay);
  }
  if (param_checksum(state.teacher) != teacher_before) {
    throw std::logic_error("teacher parameters changed outside the momentum update");
  }
  for (const auto& p : state.student.entries) {
    for (float v : p.tensor.data()) {
      if (!std::isfinite(v)) {
        throw NumericError("iteration " + std::to_string(it) + ": student parameter " + p.name + " is not finite");
      }
    }
  }
  momentum_update(state.teacher, state.student, config.theta);

  // Newest entries end up in the order v2A, v2M, vm.
  if (use_a) state.queue.insert(v2a);
  if (use_m) state.queue.insert(v2m);
  if (use_vm) state.queue.insert(vm);
  ++state.iteration;
  return m;
}

std::size_t steps_per_epoch(const TrainConfig& config, std::size_t dataset_size) {
  return dataset_size / config.batch_size;
}

void train(TrainState& state, const TrainConfig& config, const Dataset& data, const TrainHooks& hooks) {
  config.validate();
  const std::size_t spe = steps_per_epoch(config, data.size());
  if (spe == 0) throw std::invalid_argument("dataset smaller than one batch");
  if (data.height() != config.encoder.height || data.width() != config.encoder.width) {
    throw std::invalid_argument("dataset images are " + std::to_string(data.height()) + "x" +
                                std::to_string(data.width()) + " but the encoder expects " +
                                std::to_string(config.encoder.height) + "x" + std::to_string(config.encoder.width));
  }
  if (state.iteration != state.epoch * spe) {
    throw std::invalid_argument("train state is not at an epoch boundary");
  }
  while (state.epoch < config.epochs) {
    const double lr = config.lr_at(state.epoch);
    RngStream shuffle({state.seed, state.epoch, stream::kShuffle, 0, 0});
    const std::vector<std::size_t> order = shuffle.permutation(data.size());
    for (std::size_t b = 0; b < spe; ++b) {
      std::span<const std::size_t> idx(order.data() + b * config.batch_size, config.batch_size);
      StepMetrics m = train_step(state, data.batch(idx), config, lr);
      if (hooks.on_step) hooks.on_step(m);
    }
    ++state.epoch;
    const bool last = state.epoch == config.epochs;
    if (hooks.on_checkpoint && (last || (config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0))) {
      hooks.on_checkpoint(state);
    }
    if (!last && hooks.keep_going && !hooks.keep_going(state)) break;
  }
}

}  // namespace c2l
