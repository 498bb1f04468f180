#include "motionlab/models/pose_grid.hpp"

#include "motionlab/error.hpp"

namespace motionlab::models {

PoseGrid pose_grid_encode(std::span<const CoordPose> coords, std::span<const LiePose> lies) {
  if (coords.size() != lies.size()) {
    throw Error(ErrorCode::LengthMismatch, "pose grid needs both representations per frame");
  }
  PoseGrid grid;
  grid.frames = coords.size();
  grid.values.resize(grid.joints * grid.frames * grid.channels);
  for (std::size_t n = 0; n < grid.frames; ++n) {
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const Twist& xi = lies[n].twists[j];
      for (int c = 0; c < 3; ++c) {
        grid.at(j, n, c) = coords[n].joints[j][c];
        grid.at(j, n, 3 + c) = xi.omega[c];
        grid.at(j, n, 6 + c) = xi.nu[c];
      }
    }
  }
  return grid;
}

DualSequence pose_grid_decode(const PoseGrid& grid) {
  if (grid.joints != kJointCount || grid.channels != kGridChannels ||
      grid.values.size() != grid.joints * grid.frames * grid.channels) {
    throw Error(ErrorCode::ShapeMismatch, "pose grid must be 16 x N x 9");
  }
  DualSequence seq;
  seq.coords.resize(grid.frames);
  seq.lies.resize(grid.frames);
  for (std::size_t n = 0; n < grid.frames; ++n) {
    for (std::size_t j = 0; j < kJointCount; ++j) {
      Twist& xi = seq.lies[n].twists[j];
      for (int c = 0; c < 3; ++c) {
        seq.coords[n].joints[j][c] = grid.at(j, n, c);
        xi.omega[c] = grid.at(j, n, 3 + c);
        xi.nu[c] = grid.at(j, n, 6 + c);
      }
    }
  }
  return seq;
}

void interleave_frame(const CoordPose& coord, const LiePose& lie, std::span<double> out) {
  for (std::size_t j = 0; j < kJointCount; ++j) {
    double* cell = out.data() + j * kGridChannels;
    for (int c = 0; c < 3; ++c) {
      cell[c] = coord.joints[j][c];
      cell[3 + c] = lie.twists[j].omega[c];
      cell[6 + c] = lie.twists[j].nu[c];
    }
  }
}

}  // namespace motionlab::models
