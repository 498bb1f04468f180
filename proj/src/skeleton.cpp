#include "motionlab/skeleton.hpp"

#include "motionlab/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace motionlab {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonfiniteInput: return "NONFINITE_INPUT";
    case ErrorCode::SkeletonMismatch: return "SKELETON_MISMATCH";
    case ErrorCode::NearPiSingularity: return "NEAR_PI_SINGULARITY";
    case ErrorCode::NotARotation: return "NOT_A_ROTATION";
    case ErrorCode::DegenerateBone: return "DEGENERATE_BONE";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::DegenerateConfiguration: return "DEGENERATE_CONFIGURATION";
    case ErrorCode::HorizonOutOfRange: return "HORIZON_OUT_OF_RANGE";
    case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::NotScalarLoss: return "NOT_SCALAR_LOSS";
    case ErrorCode::BadNormalization: return "BAD_NORMALIZATION";
    case ErrorCode::BehindCamera: return "BEHIND_CAMERA";
    case ErrorCode::TooShort: return "TOO_SHORT";
    case ErrorCode::ParseError: return "PARSE_ERROR";
    case ErrorCode::SchemaVersionMismatch: return "SCHEMA_VERSION_MISMATCH";
    case ErrorCode::ConfigMismatch: return "CONFIG_MISMATCH";
    case ErrorCode::InsufficientFrames: return "INSUFFICIENT_FRAMES";
    case ErrorCode::ConfigError: return "CONFIG_ERROR";
    case ErrorCode::Io: return "IO";
  }
  return "UNKNOWN";
}

std::vector<JointId> Skeleton::topological_order() const {
  std::vector<JointId> order{root_joint};
  for (const auto& chain : chains) {
    order.insert(order.end(), chain.begin(), chain.end());
  }
  // Chains whose origin is introduced by a later chain must be visited after it.
  std::vector<JointId> result;
  std::vector<bool> placed(joint_count(), false);
  result.reserve(joint_count());
  bool progress = true;
  while (result.size() < joint_count() && progress) {
    progress = false;
    for (JointId j : order) {
      if (placed[j]) continue;
      const JointId p = parent[j];
      if (p == kNoParent || placed[p]) {
        placed[j] = true;
        result.push_back(j);
        progress = true;
      }
    }
  }
  return result;
}

const Skeleton& default_h36m16() {
  using namespace joints;
  static const Skeleton skeleton = [] {
    Skeleton sk;
    sk.names = {"pelvis",     "right_hip",      "right_knee",  "right_ankle",
                "left_hip",   "left_knee",      "left_ankle",  "spine",
                "thorax",     "head",           "left_shoulder", "left_elbow",
                "left_wrist", "right_shoulder", "right_elbow", "right_wrist"};
    sk.parent = {kNoParent,  kPelvis, kRightHip, kRightKnee, kPelvis,       kLeftHip,
                 kLeftKnee,  kPelvis, kSpine,    kThorax,    kThorax,       kLeftShoulder,
                 kLeftElbow, kThorax, kRightShoulder, kRightElbow};
    sk.chains = {{kRightHip, kRightKnee, kRightAnkle},
                 {kLeftHip, kLeftKnee, kLeftAnkle},
                 {kSpine, kThorax, kHead},
                 {kLeftShoulder, kLeftElbow, kLeftWrist},
                 {kRightShoulder, kRightElbow, kRightWrist}};
    sk.chain_origins = {kPelvis, kPelvis, kPelvis, kThorax, kThorax};
    sk.root_joint = kPelvis;
    // meters
    sk.bone_lengths = {0.0,  0.13, 0.45, 0.44, 0.13, 0.45, 0.44, 0.24,
                       0.25, 0.20, 0.16, 0.28, 0.25, 0.16, 0.28, 0.25};
    return sk;
  }();
  return skeleton;
}

std::vector<double> bone_lengths_from(const CoordPose& pose, const Skeleton& sk) {
  if (sk.joint_count() != kJointCount) {
    throw Error(ErrorCode::SkeletonMismatch, "pose has 16 joints, skeleton has " +
                                                 std::to_string(sk.joint_count()));
  }
  for (std::size_t j = 0; j < kJointCount; ++j) {
    if (!pose.joints[j].allFinite()) {
      throw Error(ErrorCode::NonfiniteInput, "joint " + std::to_string(j) + " is not finite");
    }
  }
  std::vector<double> lengths(kJointCount, 0.0);
  for (std::size_t j = 0; j < kJointCount; ++j) {
    const JointId p = sk.parent[j];
    if (p != kNoParent) lengths[j] = (pose.joints[j] - pose.joints[p]).norm();
  }
  return lengths;
}

std::vector<Violation> validate(const Skeleton& sk) {
  std::vector<Violation> out;
  const auto n = static_cast<JointId>(sk.joint_count());
  auto add = [&](ViolationKind kind, std::string detail, bool warning = false) {
    out.push_back({kind, std::move(detail), warning});
  };
  if (n != static_cast<JointId>(kJointCount)) {
    add(ViolationKind::JointCount, "expected 16 joints, got " + std::to_string(n));
  }
  if (sk.root_joint < 0 || sk.root_joint >= n) {
    add(ViolationKind::ParentOutOfRange, "root joint out of range");
    return out;
  }

  bool parents_ok = true;
  for (JointId j = 0; j < n; ++j) {
    const JointId p = sk.parent[j];
    if (p == kNoParent) {
      if (j != sk.root_joint) add(ViolationKind::ParentOutOfRange, "joint " + std::to_string(j) + " has no parent");
      continue;
    }
    if (p < 0 || p >= n) {
      add(ViolationKind::ParentOutOfRange, "joint " + std::to_string(j) + " parent out of range");
      parents_ok = false;
    }
  }
  if (sk.parent[sk.root_joint] != kNoParent) {
    add(ViolationKind::RootHasParent, "root joint has a parent");
  }
  if (parents_ok) {
    for (JointId j = 0; j < n; ++j) {
      JointId cur = j;
      int steps = 0;
      while (cur != kNoParent && steps <= n) {
        cur = sk.parent[cur];
        ++steps;
      }
      if (cur != kNoParent) {
        add(ViolationKind::Cycle, "parent links from joint " + std::to_string(j) + " form a cycle");
        break;
      }
    }
  }

  if (sk.chains.size() != 5 || sk.chain_origins.size() != sk.chains.size()) {
    add(ViolationKind::ChainCount, "expected 5 chains with origins, got " +
                                       std::to_string(sk.chains.size()) + " chains and " +
                                       std::to_string(sk.chain_origins.size()) + " origins");
  }
  std::vector<int> seen(n, 0);
  for (std::size_t k = 0; k < sk.chains.size(); ++k) {
    const auto& chain = sk.chains[k];
    JointId prev = k < sk.chain_origins.size() ? sk.chain_origins[k] : kNoParent;
    for (JointId j : chain) {
      if (j < 0 || j >= n) {
        add(ViolationKind::ChainCoverage, "chain " + std::to_string(k) + " lists an invalid joint");
        continue;
      }
      ++seen[j];
      if (parents_ok && sk.parent[j] != prev) {
        add(ViolationKind::ChainOrder, "chain " + std::to_string(k) + " is not ordered origin-outward at joint " + std::to_string(j));
      }
      prev = j;
    }
  }
  for (JointId j = 0; j < n; ++j) {
    if (j == sk.root_joint) {
      if (seen[j] != 0) add(ViolationKind::ChainCoverage, "root joint listed inside a chain");
    } else if (seen[j] != 1) {
      add(ViolationKind::ChainCoverage, "joint " + std::to_string(j) + " appears in " + std::to_string(seen[j]) + " chains");
    }
  }
  if (sk.chain_origins.size() == 5) {
    int at_root = 0;
    int on_root_chain = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      const JointId origin = sk.chain_origins[k];
      if (origin == sk.root_joint) {
        ++at_root;
        continue;
      }
      for (std::size_t c = 0; c < sk.chains.size(); ++c) {
        if (sk.chain_origins[c] != sk.root_joint) continue;
        const auto& chain = sk.chains[c];
        if (std::find(chain.begin(), chain.end(), origin) != chain.end()) {
          ++on_root_chain;
          break;
        }
      }
    }
    if (at_root != 3 || on_root_chain != 2) {
      add(ViolationKind::ChainOrigin, "expected 3 chains at the root and 2 branching from a root chain");
    }
  }

  if (sk.bone_lengths.size() != static_cast<std::size_t>(n)) {
    add(ViolationKind::NonPositiveBone, "bone_lengths has the wrong size");
  } else {
    for (JointId j = 0; j < n; ++j) {
      if (j == sk.root_joint) continue;
      const double len = sk.bone_lengths[j];
      if (!std::isfinite(len) || len < 0.0) {
        add(ViolationKind::NonPositiveBone, "bone " + std::to_string(j) + " has invalid length");
      } else if (len == 0.0) {
        add(ViolationKind::NonPositiveBone, "bone " + std::to_string(j) + " has zero length", true);
      }
    }
  }
  return out;
}

bool has_errors(const std::vector<Violation>& violations) {
  return std::any_of(violations.begin(), violations.end(),
                     [](const Violation& v) { return !v.warning; });
}

nlohmann::ordered_json to_json(const Skeleton& sk) {
  nlohmann::ordered_json doc;
  auto joints_json = nlohmann::ordered_json::array();
  for (std::size_t j = 0; j < sk.joint_count(); ++j) {
    nlohmann::ordered_json joint;
    joint["name"] = j < sk.names.size() ? sk.names[j] : std::string{};
    joint["parent"] = sk.parent[j];
    joints_json.push_back(std::move(joint));
  }
  doc["joints"] = std::move(joints_json);
  doc["chains"] = sk.chains;
  doc["root"] = sk.root_joint;
  doc["bone_lengths"] = sk.bone_lengths;
  return doc;
}

Skeleton skeleton_from_json(const nlohmann::ordered_json& doc) {
  try {
    Skeleton sk;
    for (const auto& joint : doc.at("joints")) {
      sk.names.push_back(joint.at("name").get<std::string>());
      sk.parent.push_back(joint.at("parent").get<JointId>());
    }
    sk.chains = doc.at("chains").get<std::vector<std::vector<JointId>>>();
    for (const auto& chain : sk.chains) {
      sk.chain_origins.push_back(chain.empty() ? kNoParent : sk.parent.at(chain.front()));
    }
    sk.root_joint = doc.at("root").get<JointId>();
    sk.bone_lengths = doc.at("bone_lengths").get<std::vector<double>>();
    return sk;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("skeleton document: ") + e.what());
  }
}

}  // namespace motionlab
