#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "c2l/data_io.hpp"
#include "c2l/eval.hpp"
#include "c2l/trainer.hpp"

namespace c2l {

// Malformed or unknown configuration; the CLI reports it as a usage error.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Json = nlohmann::ordered_json;

struct AblateConfig {
  std::vector<MixupMode> modes{MixupMode::none, MixupMode::traditional, MixupMode::batch, MixupMode::batch_loss_m,
                               MixupMode::full};
  std::vector<std::size_t> queue_sizes;  // empty = the train queue size only
  // Augmentation variants: each name switches one stage off, "all" keeps
  // the train settings.
  std::vector<std::string> augment_variants{"all"};
  std::size_t seeds = 1;
  std::size_t parallel = 1;  // cells run concurrently

  friend bool operator==(const AblateConfig&, const AblateConfig&) = default;
};

// Everything a command can be configured with.
struct RunConfig {
  std::string data;  // corpus root holding pretrain/, train/, test/
  std::string out;
  bool deterministic = true;
  SynthConfig synth;
  TrainConfig train;
  ProbeConfig probe;
  FineTuneConfig finetune;
  AblateConfig ablate;
};

Json to_json(const EncoderConfig& c);
Json to_json(const AugmentConfig& c);
Json to_json(const SynthConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const ProbeConfig& c);
Json to_json(const FineTuneConfig& c);
Json to_json(const AblateConfig& c);
Json to_json(const RunConfig& c);

// Each reader starts from `base` and overrides the keys present; unknown
// keys and wrongly typed values raise ConfigError naming the key path.
EncoderConfig encoder_from_json(const Json& j, EncoderConfig base = {});
TrainConfig train_from_json(const Json& j, TrainConfig base = {});
RunConfig run_from_json(const Json& j, RunConfig base = {});

RunConfig load_run_config(const std::filesystem::path& path);

/// Writes the fully resolved config as pretty JSON to `<dir>/config.json`.
void echo_config(const RunConfig& config, const std::filesystem::path& dir);

}  // namespace c2l
