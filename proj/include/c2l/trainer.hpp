#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "c2l/augment.hpp"
#include "c2l/contrast.hpp"
#include "c2l/data_io.hpp"
#include "c2l/encoder.hpp"
#include "c2l/params.hpp"

namespace c2l {

// Mixup variants compared by the ablation harness.
//   none          augmented pair only, no mixup
//   traditional   per-sample lambda, views mixed independently, mixed pair only
//   batch         one shared MixSpec for both views, mixed pair only
//   batch_loss_m  augmented pair + mixed pair
//   full          augmented pair + mixed pair + feature-mixed pair
enum class MixupMode { none, traditional, batch, batch_loss_m, full };

std::string_view mixup_mode_name(MixupMode m);
MixupMode parse_mixup_mode(std::string_view s);

struct TrainConfig {
  EncoderConfig encoder;
  AugmentConfig augment;
  double theta = 0.999;
  double tau = 0.2;
  std::size_t batch_size = 32;
  std::size_t queue_size = 2048;
  std::size_t epochs = 60;
  double lr = 0.03;
  double weight_decay = 1e-4;
  double sgd_momentum = 0.0;  // 0 = plain SGD
  // Empty means the default: 1/2, 2/3 and 5/6 of the run.
  std::vector<std::size_t> lr_drop_epochs;
  Reduction reduction = Reduction::mean;
  MixupMode mixup = MixupMode::full;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1;  // epochs; 0 disables periodic checkpoints

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
  std::vector<std::size_t> resolved_drop_epochs() const;
  /// Learning rate in effect during `epoch` (0-based).
  double lr_at(std::size_t epoch) const;
};

struct TrainState {
  NetworkParams<float> student;
  NetworkParams<float> teacher;
  NetworkParams<float> velocity;  // empty unless sgd_momentum > 0
  MemoryQueue<float> queue;
  std::uint64_t iteration = 0;  // completed steps
  std::size_t epoch = 0;        // completed epochs
  std::uint64_t seed = 0;
};

/// Fresh student from `seed`, teacher an exact copy, random unit queue.
TrainState init_state(const TrainConfig& config);

/// teacher <- theta * teacher + (1 - theta) * student, elementwise.
template <typename T>
void momentum_update(NetworkParams<T>& teacher, const NetworkParams<T>& student, double theta);

/// Order-sensitive hash of every parameter's bytes.
template <typename T>
std::uint64_t param_checksum(const NetworkParams<T>& params);

struct StepMetrics {
  std::uint64_t step = 0;  // 0-based iteration index
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_a = 0.0;
  double loss_m = 0.0;
  double top1 = 0.0;
};

/// One iteration on `source` at the given learning rate. Randomness is keyed
/// by (seed, state.iteration), so the result depends only on the state and
/// the batch.
StepMetrics train_step(TrainState& state, const ImageBatch& source, const TrainConfig& config, double lr);

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  // Called after every `checkpoint_every` epochs and after the last one.
  std::function<void(const TrainState&)> on_checkpoint;
  // Return false to stop after the current epoch.
  std::function<bool(const TrainState&)> keep_going;
};

/// Runs from state.epoch up to config.epochs. Each epoch visits
/// floor(n / Z) batches of a permutation keyed by (seed, epoch); the tail
/// is dropped.
void train(TrainState& state, const TrainConfig& config, const Dataset& data, const TrainHooks& hooks = {});

std::size_t steps_per_epoch(const TrainConfig& config, std::size_t dataset_size);

}  // namespace c2l
