#pragma once

#include "motionlab/types.hpp"

#include <span>
#include <vector>

namespace motionlab::models {

inline constexpr std::size_t kGridChannels = 9;

/// J x N x D image of a trajectory: joints as rows, frames as columns, and per
/// cell the 3 coordinate values followed by the 6 twist values.
struct PoseGrid {
  std::size_t joints = kJointCount;
  std::size_t frames = 0;
  std::size_t channels = kGridChannels;
  std::vector<double> values;  // row-major [joints][frames][channels]

  double& at(std::size_t j, std::size_t n, std::size_t d) {
    return values[(j * frames + n) * channels + d];
  }
  double at(std::size_t j, std::size_t n, std::size_t d) const {
    return values[(j * frames + n) * channels + d];
  }
};

PoseGrid pose_grid_encode(std::span<const CoordPose> coords, std::span<const LiePose> lies);

struct DualSequence {
  std::vector<CoordPose> coords;
  std::vector<LiePose> lies;
};
DualSequence pose_grid_decode(const PoseGrid& grid);

/// One frame as 144 values, joint by joint (3 coordinate then 6 twist values).
void interleave_frame(const CoordPose& coord, const LiePose& lie, std::span<double> out);

}  // namespace motionlab::models
