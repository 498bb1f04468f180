#pragma once

#include "motionlab/cli/config.hpp"
#include "motionlab/cli/dataset.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace motionlab::cli {

/// One line of an ablation table. Trained arms have status "ok", "diverged"
/// or "too_short"; the lie preset appends "variance" rows per arm and a
/// closing "stable"/"unstable" verdict.
struct AblationRow {
  std::string preset;
  std::string arm;
  std::size_t past_frames = 0;
  std::uint64_t seed = 0;
  std::string status;
  int exit_code = 0;
  std::size_t steps = 0;
  std::optional<double> final_total;
  std::optional<double> mpjpe;            // test split, mm
  std::optional<double> p_mpjpe;
  std::optional<double> unrefined_mpjpe;  // same model read before refinement
  std::optional<double> improvement;      // mm gained against the preset's reference arm
  std::string note;
};

using ProgressFn = std::function<void(const std::string&)>;

/// "multitask": PLN alone vs PLN trained with MGN for T = 9, 27, 54.
/// "refinement": no refinement vs GRU, ConvED, fixed and adaptive blends.
/// "lie": full vs no_lie supervision over seeds s, s+1, s+2.
/// Arms of one comparison share seeds and data. Unknown preset = ConfigError.
std::vector<AblationRow> run_ablation(const std::string& preset, const Dataset& data, const Config& base,
                                      const ProgressFn& progress = {});

std::string ablation_header();
void write_ablation(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace motionlab::cli
