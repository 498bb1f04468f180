#pragma once

#include "motionlab/types.hpp"

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <string>
#include <vector>

namespace motionlab {

using JointId = int;
inline constexpr JointId kNoParent = -1;

/// Articulated topology: parent links, kinematic chains and rest bone lengths.
///
/// Chains are ordered origin-outward and do not list their origin joint; the
/// origin of chain k is `chain_origins[k]`. `bone_lengths[j]` is the length of
/// the bone ending at joint j (0 for the root).
struct Skeleton {
  std::vector<std::string> names;
  std::vector<JointId> parent;
  std::vector<std::vector<JointId>> chains;
  std::vector<JointId> chain_origins;
  JointId root_joint = 0;
  std::vector<double> bone_lengths;

  std::size_t joint_count() const { return parent.size(); }

  /// Joints in an order where every parent precedes its children.
  std::vector<JointId> topological_order() const;

  bool operator==(const Skeleton&) const = default;
};

// Joint ids of the default skeleton. Chains occupy contiguous id ranges, so a
// joint-indexed LiePose is also the chain-by-chain concatenation.
namespace joints {
inline constexpr JointId kPelvis = 0;
inline constexpr JointId kRightHip = 1;
inline constexpr JointId kRightKnee = 2;
inline constexpr JointId kRightAnkle = 3;
inline constexpr JointId kLeftHip = 4;
inline constexpr JointId kLeftKnee = 5;
inline constexpr JointId kLeftAnkle = 6;
inline constexpr JointId kSpine = 7;
inline constexpr JointId kThorax = 8;
inline constexpr JointId kHead = 9;
inline constexpr JointId kLeftShoulder = 10;
inline constexpr JointId kLeftElbow = 11;
inline constexpr JointId kLeftWrist = 12;
inline constexpr JointId kRightShoulder = 13;
inline constexpr JointId kRightElbow = 14;
inline constexpr JointId kRightWrist = 15;
}  // namespace joints

/// Canonical 16-joint skeleton: right leg, left leg and spine/head chains rooted
/// at the pelvis; both arm chains rooted at the thorax. Bone lengths in meters
/// are adult-proportioned defaults, used only by the synthetic generator.
const Skeleton& default_h36m16();

/// Per-joint distance to the parent joint (0 at the root).
std::vector<double> bone_lengths_from(const CoordPose& pose, const Skeleton& sk);

enum class ViolationKind {
  JointCount,
  ParentOutOfRange,
  Cycle,
  RootHasParent,
  ChainCount,
  ChainCoverage,
  ChainOrder,
  ChainOrigin,
  NonPositiveBone,
};

struct Violation {
  ViolationKind kind;
  std::string detail;
  /// Warnings (zero-length bones) do not make a skeleton unusable.
  bool warning = false;
};

/// Every violated invariant; empty means the skeleton is valid.
std::vector<Violation> validate(const Skeleton& sk);
bool has_errors(const std::vector<Violation>& violations);

/// {joints:[{name,parent}], chains:[[idx]], root, bone_lengths:[...]} in that
/// field order. Chain origins are recovered from the parent of each chain head.
nlohmann::ordered_json to_json(const Skeleton& sk);
Skeleton skeleton_from_json(const nlohmann::ordered_json& doc);

}  // namespace motionlab
