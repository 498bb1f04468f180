#pragma once

#include "motionlab/skeleton.hpp"
#include "motionlab/types.hpp"

#include <array>
#include <span>

namespace motionlab {

/// Below this rotation angle the exp/log series switch to their Taylor branch.
inline constexpr double kSmallAngle = 1e-8;
/// Primary log branch is valid up to pi minus this margin.
inline constexpr double kNearPiMargin = 1e-6;

Mat3 hat(const Vec3& v);
Vec3 vee(const Mat3& m);

/// Rodrigues formula.
Mat3 rotation_exp(const Vec3& omega);
/// Left Jacobian V of SO(3): exp(xi) has translation V(omega) * nu.
Mat3 left_jacobian(const Vec3& omega);
Mat3 left_jacobian_inverse(const Vec3& omega);

RigidTransform exp_map(const Twist& xi);

enum class LogBranch {
  Primary,
  /// Near pi, recover the axis from the symmetric part of the rotation.
  AllowFallback,
};

/// Inverse of exp_map on rotations with angle <= pi. Throws NearPiSingularity for
/// angles within kNearPiMargin of pi unless the fallback branch is allowed.
Twist log_map(const RigidTransform& g, LogBranch branch = LogBranch::Primary);

/// Wraps omega into the ball of radius pi without changing exp_map(xi).
Twist canonicalize(const Twist& xi);

/// Gradient of a scalar through exp_map: given dL/dR and dL/dt of exp_map(xi),
/// returns dL/d(omega, nu).
Twist exp_map_vjp(const Twist& xi, const Mat3& grad_rotation, const Vec3& grad_translation);

/// Product-of-exponentials FK. Each joint frame is its parent frame times
/// exp(xi_joint); arm chains inherit the accumulated thorax frame. The root
/// frame is the identity, so the root joint lands exactly at the origin.
CoordPose forward_kinematics(const LiePose& pose, const Skeleton& sk);

/// Reverse-mode FK: returns dL/dxi for every joint given dL/dJ for every joint.
/// The root twist does not influence FK and receives a zero gradient.
LiePose forward_kinematics_vjp(const LiePose& pose, const Skeleton& sk,
                               const std::array<Vec3, kJointCount>& joint_grads);

/// Minimal-rotation inverse kinematics: each bone twist rotates the parent's
/// local x-axis onto the bone (zero roll) and translates by the bone offset.
/// Exactly antipodal bones rotate by pi about the local y-axis.
LiePose coord_to_lie(const CoordPose& pose, const Skeleton& sk);

// Row-major flat layouts: 16x3 and 16x6 (omega then nu per joint).
void flatten(const CoordPose& pose, std::span<double> out);
void flatten(const LiePose& pose, std::span<double> out);
CoordPose coord_from_flat(std::span<const double> values);
LiePose lie_from_flat(std::span<const double> values);

}  // namespace motionlab
