#pragma once

#include "motionlab/types.hpp"

#include <Eigen/Core>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace motionlab {

/// One frame of joint positions, one row per joint.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

Points to_points(const CoordPose& pose);
CoordPose from_points(const Points& points);

/// Mean per-joint Euclidean distance in millimeters (inputs in meters).
double mpjpe(const Points& pred, const Points& gt);
double mpjpe(std::span<const CoordPose> pred, std::span<const CoordPose> gt);

/// Optimal proper similarity s*R*pred + t (det R = +1, s > 0) onto gt.
Points procrustes_align(const Points& pred, const Points& gt);
CoordPose procrustes_align(const CoordPose& pred, const CoordPose& gt);

/// Per-frame Procrustes alignment followed by MPJPE, averaged over frames.
double p_mpjpe(std::span<const CoordPose> pred, std::span<const CoordPose> gt);

enum class MaeMode { Omega, Euler };
std::string to_string(MaeMode mode);
MaeMode mae_mode_from_string(const std::string& text);

/// 1-based frame index of a horizon, e.g. 80 ms at 25 Hz is frame 2. Throws
/// HorizonOutOfRange when the horizon is not a whole frame or exceeds `frames`.
int horizon_frame(int horizon_ms, double frame_rate, std::size_t frames);

/// Rotation part of a pose used by the angle metric: canonical omega vectors of
/// every non-root joint (Omega), or Euler angles of exp(omega) (Euler).
Eigen::VectorXd rotation_signature(const LiePose& pose, MaeMode mode);

/// Per-horizon angle error (radians) between a predicted and a ground-truth
/// future sequence: the norm of the stacked rotation-signature difference at
/// the horizon's frame. The root joint is excluded.
std::vector<double> mae(std::span<const LiePose> pred, std::span<const LiePose> gt,
                        std::span<const int> horizons_ms, double frame_rate,
                        MaeMode mode = MaeMode::Omega);

/// Zero-velocity baseline: `steps` copies of the seed pose.
template <typename Pose>
std::vector<Pose> zero_velocity(const Pose& seed, std::size_t steps) {
  return std::vector<Pose>(steps, seed);
}

/// The horizon grid reported in metric tables, in milliseconds.
inline const std::vector<int>& default_horizons_ms() {
  static const std::vector<int> horizons{80, 160, 320, 400, 560, 640, 720, 1000};
  return horizons;
}

struct MetricReport {
  double mpjpe = 0.0;    // mm
  double p_mpjpe = 0.0;  // mm
  /// Horizon (ms) -> radians; horizons beyond the predicted range are absent.
  std::map<int, double> mae_per_horizon;
  std::size_t frames_evaluated = 0;
  MaeMode mae_mode = MaeMode::Omega;
};

}  // namespace motionlab
