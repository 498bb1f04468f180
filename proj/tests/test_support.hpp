#pragma once

// Shared generators and independent oracles for the test suites. Nothing here
// calls into the code paths it is used to check.

#include "motionlab/grad/graph.hpp"
#include "motionlab/liepose.hpp"
#include "motionlab/skeleton.hpp"

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace motionlab::testing {

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

/// Twist with uniformly distributed rotation angle in [0, max_angle].
inline Twist random_twist(std::mt19937_64& rng, double max_angle) {
  std::uniform_real_distribution<double> angle(0.0, max_angle);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Twist xi;
  xi.omega = angle(rng) * random_unit(rng);
  xi.nu = Vec3(u(rng), u(rng), u(rng));
  return xi;
}

inline LiePose random_lie_pose(std::mt19937_64& rng, double max_angle = std::numbers::pi - 0.01) {
  LiePose p;
  for (std::size_t j = 1; j < kJointCount; ++j) p.twists[j] = random_twist(rng, max_angle);
  return p;
}

/// Random joint positions built bone by bone (random directions, lengths in
/// [0.05, 0.5] m) without touching any Lie machinery.
inline CoordPose random_coord_pose(std::mt19937_64& rng, const Skeleton& sk = default_h36m16()) {
  std::uniform_real_distribution<double> len(0.05, 0.5);
  CoordPose pose;
  for (JointId j : sk.topological_order()) {
    const JointId p = sk.parent[j];
    if (p == kNoParent) continue;
    pose.joints[j] = pose.joints[p] + len(rng) * random_unit(rng);
  }
  return pose;
}

inline Eigen::Matrix4d twist_matrix(const Twist& xi) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m(0, 1) = -xi.omega.z();
  m(0, 2) = xi.omega.y();
  m(1, 0) = xi.omega.z();
  m(1, 2) = -xi.omega.x();
  m(2, 0) = -xi.omega.y();
  m(2, 1) = xi.omega.x();
  m.topRightCorner<3, 1>() = xi.nu;
  return m;
}

/// Truncated power series of the 4x4 matrix exponential.
inline Eigen::Matrix4d matrix_exp_series(const Eigen::Matrix4d& a, int terms = 30) {
  Eigen::Matrix4d result = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d term = Eigen::Matrix4d::Identity();
  for (int k = 1; k < terms; ++k) {
    term = term * a / static_cast<double>(k);
    result += term;
  }
  return result;
}

/// FK by explicit multiplication of power-series 4x4 matrices along each chain.
inline std::array<Vec3, kJointCount> fk_matrix_oracle(const LiePose& pose, const Skeleton& sk) {
  std::array<Eigen::Matrix4d, kJointCount> frame;
  std::array<bool, kJointCount> done{};
  frame[sk.root_joint] = Eigen::Matrix4d::Identity();
  done[sk.root_joint] = true;
  // Chains are visited in an order where each origin is already known.
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t k = 0; k < sk.chains.size(); ++k) {
      const JointId origin = sk.chain_origins[k];
      if (!done[origin] || done[sk.chains[k].front()]) continue;
      Eigen::Matrix4d acc = frame[origin];
      for (JointId j : sk.chains[k]) {
        acc = acc * matrix_exp_series(twist_matrix(pose.twists[j]));
        frame[j] = acc;
        done[j] = true;
      }
      progress = true;
    }
  }
  std::array<Vec3, kJointCount> out;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    out[j] = (frame[j] * Eigen::Vector4d(0, 0, 0, 1)).head<3>();
  }
  return out;
}

/// Relative error with a floor on the denominator for near-zero gradients.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central finite differences of every input entry of a scalar graph function
/// against its backward pass. Returns the worst relative error.
inline double gradient_check(std::vector<grad::Tensor> inputs,
                             const std::function<grad::Var(grad::Graph&, const std::vector<grad::Var>&)>& build,
                             double h = 1e-5) {
  auto evaluate = [&](const std::vector<grad::Tensor>& xs) {
    grad::Graph g;
    std::vector<grad::Var> vars;
    for (const auto& x : xs) vars.push_back(g.constant(x));
    return g.value(build(g, vars)).item();
  };
  grad::Graph g;
  std::vector<grad::Var> vars;
  for (const auto& x : inputs) vars.push_back(g.variable(x));
  g.backward(build(g, vars));

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const grad::Tensor analytic = g.grad(vars[i]);
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      auto plus = inputs;
      auto minus = inputs;
      plus[i][k] += h;
      minus[i][k] -= h;
      const double numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[k];
      worst = std::max(worst, relative_error(a, numeric));
    }
  }
  return worst;
}

inline grad::Tensor random_tensor(std::mt19937_64& rng, grad::Shape shape, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  grad::Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

}  // namespace motionlab::testing
