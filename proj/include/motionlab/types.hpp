#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>

namespace motionlab {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr std::size_t kJointCount = 16;
inline constexpr std::size_t kCoordValues = kJointCount * 3;  // 48
inline constexpr std::size_t kLieValues = kJointCount * 6;    // 96
inline constexpr std::size_t kDualValues = kCoordValues + kLieValues;

/// se(3) element: axis-angle rotation (radians) and translation parameter (meters).
struct Twist {
  Vec3 omega = Vec3::Zero();
  Vec3 nu = Vec3::Zero();

  bool operator==(const Twist&) const = default;
};

/// SE(3) element.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  RigidTransform operator*(const RigidTransform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

/// Root-relative joint coordinates in meters; the root joint sits at the origin.
struct CoordPose {
  std::array<Vec3, kJointCount> joints;

  CoordPose() { joints.fill(Vec3::Zero()); }
  bool operator==(const CoordPose&) const = default;
};

/// One twist per joint, indexed by joint id. The root joint carries the zero twist.
struct LiePose {
  std::array<Twist, kJointCount> twists;

  bool operator==(const LiePose&) const = default;
};

}  // namespace motionlab
