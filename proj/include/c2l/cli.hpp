#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "c2l/config.hpp"

namespace c2l {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `c2l` tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Worker threads allowed by C2L_THREADS (default 1, at least 1).
std::size_t thread_budget();

/// Returns `augment` with the stage named by `variant` switched off:
/// all, none, no_crop, no_rotate, no_hflip, no_grayscale, no_cutout.
AugmentConfig augment_variant(const AugmentConfig& augment, const std::string& variant);

struct AblationRow {
  MixupMode mode = MixupMode::full;
  std::size_t queue_size = 0;
  std::string augment;
  std::uint64_t seed = 0;
  double mean_auroc = 0.0;
  double final_top1 = 0.0;
};

/// Pretrains and probes every cell of the grid. Cells run on up to
/// `parallel` threads; results are identical to a serial run.
std::vector<AblationRow> run_ablation(const RunConfig& config, const Dataset& pretrain, const Dataset& train,
                                      const Dataset& test, std::size_t parallel);

}  // namespace c2l
