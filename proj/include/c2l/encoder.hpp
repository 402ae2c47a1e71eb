#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "c2l/ops.hpp"
#include "c2l/params.hpp"
#include "c2l/tape.hpp"

namespace c2l {

enum class Normalization { none, group_norm };

// Small convolutional encoder: per stage conv3x3 -> [group norm] -> relu ->
// max-pool 2x2, then global average pooling, one linear projection to
// feature_dim and row-wise L2 normalisation.
struct EncoderConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t feature_dim = 128;
  Normalization normalization = Normalization::group_norm;
  std::size_t groups = 4;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  std::size_t backbone_dim() const { return channels.back(); }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// He-initialised parameters (normal, std sqrt(2 / fan_in)); biases and
/// norm shifts zero, norm scales one. Deterministic per seed. The result has
/// role student and every tensor requires a gradient.
template <typename T>
NetworkParams<T> init_params(const EncoderConfig& config, std::uint64_t seed);

template <typename T>
struct EncoderOutput {
  Var<T> backbone;  // pooled [Z x C_last], before the projection head
  Var<T> features;  // unit-norm [Z x D]
};

/// Records the forward pass on `tape`. Parameters are bound so that a later
/// tape.backward() accumulates gradients into the tensors that require them.
template <typename T>
EncoderOutput<T> encoder_forward(Tape<T>& tape, NetworkParams<T>& params, const EncoderConfig& config,
                                 const Tensor<T>& images);

/// Gradient-free forward returning the unit-norm features.
template <typename T>
Tensor<T> encode(const NetworkParams<T>& params, const EncoderConfig& config, const Tensor<T>& images);

/// Gradient-free forward returning the pooled backbone features.
template <typename T>
Tensor<T> encode_backbone(const NetworkParams<T>& params, const EncoderConfig& config, const Tensor<T>& images);

}  // namespace c2l
