#pragma once

#include "motionlab/cli/config.hpp"
#include "motionlab/metrics.hpp"
#include "motionlab/models/posemonet.hpp"
#include "motionlab/synth/synthdata.hpp"

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace motionlab::cli {

/// Estimated past frames and predicted future frames of one window, after
/// refinement when the model has it.
struct WindowPrediction {
  std::vector<CoordPose> coord;
  std::vector<LiePose> lie;
};

/// Runs the model in inference mode on the past frames of equal-length
/// windows. `refine` = false reads the outputs before global refinement.
std::vector<WindowPrediction> predict_windows(const models::PoseMoNet& model,
                                              std::span<const synth::Trajectory> trajs,
                                              std::span<const synth::Window> windows,
                                              std::size_t horizon, bool refine = true);

struct EvalRow {
  std::string split;
  std::string label;  // action tag, or "all"
  std::size_t windows = 0;
  MetricReport model;
  std::map<int, double> zero_velocity;  // horizon ms -> radians
};

/// Metrics per split and action label plus an "all" row per split. Position
/// errors cover the estimated past frames, angle errors the predicted future
/// against the zero-velocity baseline seeded with the last observed pose.
/// Windows are spread over MOTIONLAB_THREADS workers (default: all cores);
/// the result does not depend on the worker count.
std::vector<EvalRow> evaluate(const models::PoseMoNet& model, std::span<const synth::Trajectory> trajs,
                              const synth::WindowSet& windows, const Config& config,
                              bool include_train = true, bool refine = true);

/// MOTIONLAB_THREADS if set to a positive integer, else hardware concurrency.
std::size_t eval_threads();

void write_report(std::ostream& out, const std::string& run_id, const std::vector<EvalRow>& rows);

}  // namespace motionlab::cli
