#include "motionlab/liepose.hpp"

#include "motionlab/error.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace motionlab {
namespace {

constexpr double kPi = std::numbers::pi;
// Taylor switch for the derivatives of the series coefficients; their closed
// forms cancel catastrophically well above kSmallAngle.
constexpr double kSmallAngleDerivative = 0.05;

struct SeriesCoefficients {
  double a;  // sin(t)/t
  double b;  // (1-cos(t))/t^2
  double c;  // (t-sin(t))/t^3
};

SeriesCoefficients series(double theta) {
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0};
  }
  const double s = std::sin(theta);
  const double half = std::sin(0.5 * theta);
  const double t2 = theta * theta;
  return {s / theta, 2.0 * half * half / t2, (theta - s) / (t2 * theta)};
}

// d(coefficient)/d(theta) divided by theta.
SeriesCoefficients series_derivative_over_theta(double theta) {
  const double t2 = theta * theta;
  if (theta < kSmallAngleDerivative) {
    const double t4 = t2 * t2;
    const double t6 = t4 * t2;
    return {-1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t6 / 45360.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t6 / 453600.0,
            -1.0 / 60.0 + t2 / 1260.0 - t4 / 60480.0 + t6 / 4989600.0};
  }
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  const double t3 = t2 * theta;
  return {(theta * c - s) / t3, (theta * s - 2.0 * (1.0 - c)) / (t3 * theta),
          (3.0 * s - 2.0 * theta - theta * c) / (t3 * t2)};
}

void require_finite(const Twist& xi) {
  if (!xi.omega.allFinite() || !xi.nu.allFinite()) {
    throw Error(ErrorCode::NonfiniteInput, "twist has non-finite components");
  }
}

// <G, hat(v)> = v . skew_dual(G)
Vec3 skew_dual(const Mat3& g) {
  return {g(2, 1) - g(1, 2), g(0, 2) - g(2, 0), g(1, 0) - g(0, 1)};
}

void require_fk_skeleton(const Skeleton& sk, const std::vector<JointId>& order) {
  if (sk.joint_count() != kJointCount || order.size() != kJointCount) {
    throw Error(ErrorCode::SkeletonMismatch,
                "forward kinematics needs a connected 16-joint skeleton, got " +
                    std::to_string(sk.joint_count()) + " joints");
  }
}

}  // namespace

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

Mat3 rotation_exp(const Vec3& omega) {
  const auto k = series(omega.norm());
  const Mat3 w = hat(omega);
  return Mat3::Identity() + k.a * w + k.b * w * w;
}

Mat3 left_jacobian(const Vec3& omega) {
  const auto k = series(omega.norm());
  const Mat3 w = hat(omega);
  return Mat3::Identity() + k.b * w + k.c * w * w;
}

Mat3 left_jacobian_inverse(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 w = hat(omega);
  double d = 0.0;
  if (theta < kSmallAngle) {
    d = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const auto k = series(theta);
    d = (1.0 - k.a / (2.0 * k.b)) / (theta * theta);
  }
  return Mat3::Identity() - 0.5 * w + d * w * w;
}

RigidTransform exp_map(const Twist& xi) {
  require_finite(xi);
  const auto k = series(xi.omega.norm());
  const Mat3 w = hat(xi.omega);
  const Mat3 w2 = w * w;
  RigidTransform g;
  g.rotation = Mat3::Identity() + k.a * w + k.b * w2;
  g.translation = (Mat3::Identity() + k.b * w + k.c * w2) * xi.nu;
  return g;
}

Twist log_map(const RigidTransform& g, LogBranch branch) {
  const Mat3& r = g.rotation;
  if (!r.allFinite() || !g.translation.allFinite()) {
    throw Error(ErrorCode::NonfiniteInput, "transform has non-finite entries");
  }
  const double ortho_err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det_err = std::abs(r.determinant() - 1.0);
  if (ortho_err > 1e-6 || det_err > 1e-6) {
    throw Error(ErrorCode::NotARotation, "orthogonality error " + std::to_string(ortho_err) +
                                             ", determinant error " + std::to_string(det_err));
  }

  const Vec3 axis_sin = 0.5 * vee(r - r.transpose());  // sin(theta) * n
  const double sin_theta = axis_sin.norm();
  const double cos_theta = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);

  Twist xi;
  if (theta < kSmallAngle) {
    xi.omega = axis_sin;
  } else if (theta <= kPi - kNearPiMargin) {
    xi.omega = (theta / sin_theta) * axis_sin;
  } else {
    if (branch != LogBranch::AllowFallback) {
      throw Error(ErrorCode::NearPiSingularity,
                  "rotation angle " + std::to_string(theta) + " is within 1e-6 of pi");
    }
    // n n^T = (S - cos I) / (1 - cos); take the best-conditioned column.
    const Mat3 outer = (0.5 * (r + r.transpose()) - cos_theta * Mat3::Identity()) / (1.0 - cos_theta);
    Eigen::Index i = 0;
    outer.diagonal().maxCoeff(&i);
    Vec3 n = outer.col(i) / std::sqrt(std::max(outer(i, i), 1e-300));
    n.normalize();
    const double orient = n.dot(axis_sin);
    if (std::abs(orient) > 1e-12) {
      if (orient < 0.0) n = -n;
    } else {
      for (int c = 0; c < 3; ++c) {
        if (std::abs(n[c]) > 1e-12) {
          if (n[c] < 0.0) n = -n;
          break;
        }
      }
    }
    xi.omega = theta * n;
  }
  xi.nu = left_jacobian_inverse(xi.omega) * g.translation;
  return xi;
}

Twist canonicalize(const Twist& xi) {
  require_finite(xi);
  const double theta = xi.omega.norm();
  if (theta <= kPi) return xi;
  const Vec3 n = xi.omega / theta;
  double wrapped = std::fmod(theta, 2.0 * kPi);
  Vec3 omega = (wrapped > kPi) ? Vec3(-(2.0 * kPi - wrapped) * n) : Vec3(wrapped * n);
  Twist out;
  out.omega = omega;
  out.nu = left_jacobian_inverse(omega) * (left_jacobian(xi.omega) * xi.nu);
  return out;
}

Twist exp_map_vjp(const Twist& xi, const Mat3& grad_rotation, const Vec3& grad_translation) {
  const Vec3& w = xi.omega;
  const Vec3& nu = xi.nu;
  const double theta = w.norm();
  const auto k = series(theta);
  const auto dk = series_derivative_over_theta(theta);
  const Mat3 wh = hat(w);
  const Mat3 wh2 = wh * wh;
  const Mat3& gr = grad_rotation;
  const Vec3& gt = grad_translation;

  const Vec3 w_nu = w.cross(nu);
  const Vec3 w2_nu = w.cross(w_nu);

  // Coefficient-derivative terms are all proportional to omega itself.
  const double radial = dk.a * (gr.cwiseProduct(wh)).sum() +
                        dk.b * ((gr.cwiseProduct(wh2)).sum() + gt.dot(w_nu)) +
                        dk.c * gt.dot(w2_nu);

  Twist grad;
  grad.omega = radial * w + k.a * skew_dual(gr) +
               k.b * skew_dual(gr * wh.transpose() + wh.transpose() * gr) +
               k.b * nu.cross(gt) + k.c * (w_nu.cross(gt) + nu.cross(gt.cross(w)));
  grad.nu = (Mat3::Identity() + k.b * wh + k.c * wh2).transpose() * gt;
  return grad;
}

CoordPose forward_kinematics(const LiePose& pose, const Skeleton& sk) {
  const auto order = sk.topological_order();
  require_fk_skeleton(sk, order);
  std::array<RigidTransform, kJointCount> frames;
  CoordPose out;
  for (JointId j : order) {
    const JointId p = sk.parent[j];
    if (p == kNoParent) continue;
    frames[j] = frames[p] * exp_map(pose.twists[j]);
    out.joints[j] = frames[j].translation;
  }
  out.joints[sk.root_joint] = Vec3::Zero();
  return out;
}

LiePose forward_kinematics_vjp(const LiePose& pose, const Skeleton& sk,
                               const std::array<Vec3, kJointCount>& joint_grads) {
  const auto order = sk.topological_order();
  require_fk_skeleton(sk, order);
  std::array<RigidTransform, kJointCount> frames;
  std::array<RigidTransform, kJointCount> locals;
  for (JointId j : order) {
    const JointId p = sk.parent[j];
    if (p == kNoParent) continue;
    locals[j] = exp_map(pose.twists[j]);
    frames[j] = frames[p] * locals[j];
  }

  std::array<Mat3, kJointCount> adj_rotation;
  std::array<Vec3, kJointCount> adj_translation;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    adj_rotation[j].setZero();
    adj_translation[j] = joint_grads[j];
  }
  LiePose grad;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const JointId j = *it;
    const JointId p = sk.parent[j];
    if (p == kNoParent) continue;
    const RigidTransform& local = locals[j];
    const Mat3& parent_rot = frames[p].rotation;
    adj_rotation[p] += adj_rotation[j] * local.rotation.transpose() +
                       adj_translation[j] * local.translation.transpose();
    adj_translation[p] += adj_translation[j];
    grad.twists[j] = exp_map_vjp(pose.twists[j], parent_rot.transpose() * adj_rotation[j],
                                 parent_rot.transpose() * adj_translation[j]);
  }
  return grad;
}

LiePose coord_to_lie(const CoordPose& pose, const Skeleton& sk) {
  const auto order = sk.topological_order();
  require_fk_skeleton(sk, order);
  for (std::size_t j = 0; j < kJointCount; ++j) {
    if (!pose.joints[j].allFinite()) {
      throw Error(ErrorCode::NonfiniteInput, "joint " + std::to_string(j) + " is not finite");
    }
  }
  std::array<Mat3, kJointCount> frame_rotation;
  frame_rotation[sk.root_joint] = Mat3::Identity();
  LiePose out;
  for (JointId j : order) {
    const JointId p = sk.parent[j];
    if (p == kNoParent) continue;
    const Vec3 offset = frame_rotation[p].transpose() * (pose.joints[j] - pose.joints[p]);
    const double length = offset.norm();
    if (!(length > 1e-12)) {
      throw Error(ErrorCode::DegenerateBone, "bone ending at joint " + std::to_string(j) +
                                                 " (" + sk.names.at(j) + ") has zero length");
    }
    const Vec3 dir = offset / length;
    const Vec3 cross = Vec3::UnitX().cross(dir);
    const double s = cross.norm();
    const double c = dir.x();
    Vec3 omega = Vec3::Zero();
    if (s > 1e-12) {
      omega = std::atan2(s, c) * (cross / s);
    } else if (c < 0.0) {
      // Antipodal: the smallest-index axis orthogonal to a bone along x is y.
      omega = kPi * Vec3::UnitY();
    }
    out.twists[j].omega = omega;
    out.twists[j].nu = left_jacobian_inverse(omega) * offset;
    frame_rotation[j] = frame_rotation[p] * rotation_exp(omega);
  }
  return out;
}

void flatten(const CoordPose& pose, std::span<double> out) {
  for (std::size_t j = 0; j < kJointCount; ++j) {
    for (int c = 0; c < 3; ++c) out[j * 3 + c] = pose.joints[j][c];
  }
}

void flatten(const LiePose& pose, std::span<double> out) {
  for (std::size_t j = 0; j < kJointCount; ++j) {
    for (int c = 0; c < 3; ++c) {
      out[j * 6 + c] = pose.twists[j].omega[c];
      out[j * 6 + 3 + c] = pose.twists[j].nu[c];
    }
  }
}

CoordPose coord_from_flat(std::span<const double> values) {
  CoordPose pose;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    pose.joints[j] = Vec3(values[j * 3], values[j * 3 + 1], values[j * 3 + 2]);
  }
  return pose;
}

LiePose lie_from_flat(std::span<const double> values) {
  LiePose pose;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    pose.twists[j].omega = Vec3(values[j * 6], values[j * 6 + 1], values[j * 6 + 2]);
    pose.twists[j].nu = Vec3(values[j * 6 + 3], values[j * 6 + 4], values[j * 6 + 5]);
  }
  return pose;
}

}  // namespace motionlab
