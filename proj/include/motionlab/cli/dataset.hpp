#pragma once

#include "motionlab/models/posemonet.hpp"
#include "motionlab/synth/synthdata.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace motionlab::cli {

inline constexpr const char* kDatasetSchema = "pmn-data/1";

struct SynthRequest {
  std::size_t sequences = 100;
  std::vector<synth::MotionKind> kinds{synth::MotionKind::Walk, synth::MotionKind::Wave,
                                       synth::MotionKind::Squat, synth::MotionKind::Static,
                                       synth::MotionKind::Mixed};
  std::uint64_t seed = 0;
  std::size_t length = 100;  // frames per sequence
  double noise_px = 3.0;
  double train_ratio = 0.8;
};

/// The fixed periodic benchmark: 500 walk/wave sequences of 80 frames, seed 7.
SynthRequest benchmark_request();

/// A directory holding manifest.json, camera.json and one trajectory file per
/// sequence. The manifest fixes the train/test split for everyone reading it.
struct Dataset {
  std::vector<synth::Trajectory> trajectories;
  synth::Camera camera;
  double train_ratio = 0.8;
  std::uint64_t split_seed = 0;
};

/// Generates, projects and writes a dataset. Kinds are assigned round-robin.
Dataset synthesize(const SynthRequest& request);
void write_dataset(const Dataset& data, const SynthRequest& request, const std::string& dir);
Dataset read_dataset(const std::string& dir);

/// Train and test windows of the dataset's fixed split.
synth::WindowSet dataset_windows(const Dataset& data, std::size_t past, std::size_t future,
                                 std::size_t stride);

/// Network input and supervision for a group of windows, time-major rows.
struct Batch {
  grad::Tensor kp2d;  // [T, B, 32]
  models::Targets targets;
  std::size_t size = 0;
};

/// Keypoints of the past frames of each window, [T, B, 32]. Throws
/// InsufficientFrames when a frame lacks kp2d or the window overruns.
grad::Tensor keypoint_tensor(std::span<const synth::Trajectory> trajs,
                             std::span<const synth::Window> windows);

/// Needs kp2d on every past frame; ground-truth twists come from the stored lie or
/// are recovered from coordinates.
Batch make_batch(std::span<const synth::Trajectory> trajs, std::span<const synth::Window> windows);

}  // namespace motionlab::cli
