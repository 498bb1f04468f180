#include "motionlab/metrics.hpp"

#include "motionlab/error.hpp"
#include "motionlab/liepose.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <string>

namespace motionlab {
namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::LengthMismatch, std::string(what) + ": " + std::to_string(a) +
                                               " vs " + std::to_string(b));
  }
}

Vec3 rotation_to_euler(const Mat3& r) {
  // Same decomposition as the angle-error code of the usual motion prediction baselines.
  Vec3 e;
  if (r(0, 2) == 1.0 || r(0, 2) == -1.0) {
    e[2] = 0.0;
    const double delta = std::atan2(r(0, 1), r(0, 2));
    if (r(0, 2) == -1.0) {
      e[1] = M_PI / 2.0;
      e[0] = e[2] + delta;
    } else {
      e[1] = -M_PI / 2.0;
      e[0] = -e[2] + delta;
    }
  } else {
    e[1] = -std::asin(r(0, 2));
    const double c = std::cos(e[1]);
    e[0] = std::atan2(r(1, 2) / c, r(2, 2) / c);
    e[2] = std::atan2(r(0, 1) / c, r(0, 0) / c);
  }
  return e;
}

}  // namespace

Points to_points(const CoordPose& pose) {
  Points p(kJointCount, 3);
  for (std::size_t j = 0; j < kJointCount; ++j) p.row(j) = pose.joints[j].transpose();
  return p;
}

CoordPose from_points(const Points& points) {
  CoordPose pose;
  for (std::size_t j = 0; j < kJointCount; ++j) pose.joints[j] = points.row(j).transpose();
  return pose;
}

double mpjpe(const Points& pred, const Points& gt) {
  require_same_length(pred.rows(), gt.rows(), "joint count");
  if (pred.rows() == 0) return 0.0;
  return 1000.0 * (pred - gt).rowwise().norm().mean();
}

double mpjpe(std::span<const CoordPose> pred, std::span<const CoordPose> gt) {
  require_same_length(pred.size(), gt.size(), "sequence length");
  if (pred.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    for (std::size_t j = 0; j < kJointCount; ++j) {
      total += (pred[f].joints[j] - gt[f].joints[j]).norm();
    }
  }
  return 1000.0 * total / static_cast<double>(pred.size() * kJointCount);
}

Points procrustes_align(const Points& pred, const Points& gt) {
  require_same_length(pred.rows(), gt.rows(), "joint count");
  const Eigen::RowVector3d mu_pred = pred.colwise().mean();
  const Eigen::RowVector3d mu_gt = gt.colwise().mean();
  const Points x = pred.rowwise() - mu_pred;
  const Points y = gt.rowwise() - mu_gt;

  Eigen::JacobiSVD<Points> shape_svd(x);
  const auto sv = shape_svd.singularValues();
  if (pred.rows() < 3 || !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0]) {
    throw Error(ErrorCode::DegenerateConfiguration, "prediction joints are collinear");
  }

  const Mat3 cov = x.transpose() * y;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Vec3 d(1.0, 1.0, (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  const Mat3 rot = v * d.asDiagonal() * u.transpose();
  const double scale = svd.singularValues().dot(d) / x.squaredNorm();

  Points aligned = (scale * (x * rot.transpose())).rowwise() + mu_gt;
  return aligned;
}

CoordPose procrustes_align(const CoordPose& pred, const CoordPose& gt) {
  return from_points(procrustes_align(to_points(pred), to_points(gt)));
}

double p_mpjpe(std::span<const CoordPose> pred, std::span<const CoordPose> gt) {
  require_same_length(pred.size(), gt.size(), "sequence length");
  if (pred.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    const Points target = to_points(gt[f]);
    total += mpjpe(procrustes_align(to_points(pred[f]), target), target);
  }
  return total / static_cast<double>(pred.size());
}

std::string to_string(MaeMode mode) { return mode == MaeMode::Omega ? "omega" : "euler"; }

MaeMode mae_mode_from_string(const std::string& text) {
  if (text == "omega") return MaeMode::Omega;
  if (text == "euler") return MaeMode::Euler;
  throw Error(ErrorCode::ConfigError, "unknown mae mode '" + text + "'");
}

int horizon_frame(int horizon_ms, double frame_rate, std::size_t frames) {
  const double exact = horizon_ms * frame_rate / 1000.0;
  const double rounded = std::round(exact);
  if (std::abs(exact - rounded) > 1e-9 || rounded < 1.0 || rounded > static_cast<double>(frames)) {
    throw Error(ErrorCode::HorizonOutOfRange,
                std::to_string(horizon_ms) + " ms at " + std::to_string(frame_rate) +
                    " Hz is not a whole frame within " + std::to_string(frames) + " frames");
  }
  return static_cast<int>(rounded);
}

Eigen::VectorXd rotation_signature(const LiePose& pose, MaeMode mode) {
  Eigen::VectorXd sig(3 * (kJointCount - 1));
  // The root is joint 0 in the canonical layout and always carries the zero twist.
  for (std::size_t j = 1; j < kJointCount; ++j) {
    const Vec3 omega = canonicalize(pose.twists[j]).omega;
    sig.segment<3>(3 * (j - 1)) =
        mode == MaeMode::Omega ? omega : rotation_to_euler(rotation_exp(omega));
  }
  return sig;
}

std::vector<double> mae(std::span<const LiePose> pred, std::span<const LiePose> gt,
                        std::span<const int> horizons_ms, double frame_rate, MaeMode mode) {
  require_same_length(pred.size(), gt.size(), "sequence length");
  std::vector<double> out;
  out.reserve(horizons_ms.size());
  for (int h : horizons_ms) {
    const int frame = horizon_frame(h, frame_rate, pred.size());
    const auto& p = pred[frame - 1];
    const auto& g = gt[frame - 1];
    out.push_back((rotation_signature(p, mode) - rotation_signature(g, mode)).norm());
  }
  return out;
}

}  // namespace motionlab
