#pragma once

#include "motionlab/cli/config.hpp"
#include "motionlab/models/posemonet.hpp"
#include "motionlab/synth/synthdata.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace motionlab::cli {

/// Means over the batches of one epoch.
struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer steps taken so far
  double total = 0.0;
  double l_pln = 0.0;
  std::optional<double> l_mgn;
  std::optional<double> l_gr;
  double omega = 0.0;
  double lr = 0.0;
};

struct TrainOutcome {
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
  bool diverged = false;
  std::string divergence;  // what tripped the check
  double last_step_total = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch training over the given windows. Batches are drawn uniformly
/// over all windows, reshuffled every epoch. Stops early (diverged) when a
/// step's total loss is non-finite or above the configured threshold.
TrainOutcome train(models::PoseMoNet& model, std::span<const synth::Trajectory> trajs,
                   std::span<const synth::Window> windows, const Config& config,
                   const EpochCallback& on_epoch = {});

std::string train_log_header();
std::string train_log_row(const EpochLog& row);

/// Shortest round-trip decimal form used in every CSV we write.
std::string format_number(double v);

}  // namespace motionlab::cli
