#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>

#include "c2l/config.hpp"
#include "c2l/trainer.hpp"

namespace c2l {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

// File layout: the 4 bytes "C2L1", a little-endian uint64 manifest length,
// the manifest as UTF-8 JSON, then every tensor listed in the manifest as
// little-endian float32 in manifest order.
struct Checkpoint {
  EncoderConfig encoder;
  NetworkParams<float> student;
  std::optional<NetworkParams<float>> teacher;
  std::optional<NetworkParams<float>> velocity;
  std::optional<MemoryQueue<float>> queue;
  std::uint64_t iteration = 0;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  Json config;  // informational copy of the training config
};

/// Everything needed to resume training.
Checkpoint full_checkpoint(const TrainState& state, const TrainConfig& config);

/// Student parameters and encoder shape only.
Checkpoint student_export(const NetworkParams<float>& student, const EncoderConfig& encoder);

/// Written to a sibling temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Validates magic, version, manifest and payload size before decoding any
/// tensor.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds a resumable state. Throws CheckpointError when the checkpoint
/// lacks teacher or queue, or disagrees with `config` on encoder shape,
/// queue size or seed.
TrainState restore_state(const Checkpoint& ckpt, const TrainConfig& config);

/// Student parameters, checked against the expected encoder shape.
NetworkParams<float> load_encoder(const std::filesystem::path& path, const EncoderConfig& expected);

}  // namespace c2l
