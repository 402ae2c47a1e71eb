#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "c2l/data_io.hpp"
#include "c2l/encoder.hpp"
#include "c2l/params.hpp"

namespace c2l {

/// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(tie), by sorting.
/// Throws std::invalid_argument unless both classes are present.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct ClassAuroc {
  std::string name;
  std::optional<double> auroc;  // empty when the test labels hold one value only
};

struct EvalResult {
  std::vector<ClassAuroc> classes;
  double mean_auroc = 0.0;  // over defined classes; NaN if there are none
  std::vector<std::string> warnings;

  bool any_undefined() const;
};

/// Per-class AUROC of score column c against label column c.
EvalResult score_classes(const Tensor<double>& scores, const Tensor<double>& labels,
                         const std::vector<std::string>& class_names);

struct ProbeConfig {
  double lr = 0.1;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

/// Pooled backbone features of every image, in dataset order.
Tensor<double> extract_features(const NetworkParams<float>& params, const EncoderConfig& config, const Dataset& data);

/// Logistic regression (one sigmoid output per class) on features
/// standardised with the training mean and deviation.
EvalResult probe_features(const Tensor<double>& train_x, const Tensor<double>& train_y, const Tensor<double>& test_x,
                          const Tensor<double>& test_y, const std::vector<std::string>& class_names,
                          const ProbeConfig& config);

/// Frozen encoder + linear probe.
EvalResult linear_probe(const NetworkParams<float>& params, const EncoderConfig& config, const Dataset& train,
                        const Dataset& test, const ProbeConfig& probe);

struct FineTuneConfig {
  double lr = 0.01;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const FineTuneConfig&, const FineTuneConfig&) = default;
};

struct FineTuneResult {
  EvalResult eval;
  NetworkParams<float> encoder;  // without the classification head
};

/// Trains the encoder and a zero-initialised linear head on the backbone
/// features end to end.
FineTuneResult fine_tune(const NetworkParams<float>& init, const EncoderConfig& config, const Dataset& train,
                         const Dataset& test, const FineTuneConfig& ft);

}  // namespace c2l
