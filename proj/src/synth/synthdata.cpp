#include "motionlab/synth/synthdata.hpp"

#include "motionlab/error.hpp"
#include "motionlab/liepose.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>

namespace motionlab::synth {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

using Angles = std::array<Vec3, kJointCount>;  // rotation vectors in the rest frame

// Rest bone directions, world frame: y up, x forward, z to the subject's right.
const std::array<Vec3, kJointCount>& rest_directions() {
  static const std::array<Vec3, kJointCount> dirs = [] {
    std::array<Vec3, kJointCount> d;
    d.fill(Vec3::Zero());
    const Vec3 up = Vec3::UnitY(), down = -Vec3::UnitY(), right = Vec3::UnitZ();
    using namespace joints;
    d[kRightHip] = right;
    d[kRightKnee] = down;
    d[kRightAnkle] = down;
    d[kLeftHip] = -right;
    d[kLeftKnee] = down;
    d[kLeftAnkle] = down;
    d[kSpine] = up;
    d[kThorax] = up;
    d[kHead] = up;
    d[kLeftShoulder] = -right;
    d[kLeftElbow] = down;
    d[kLeftWrist] = down;
    d[kRightShoulder] = right;
    d[kRightElbow] = down;
    d[kRightWrist] = down;
    return d;
  }();
  return dirs;
}

struct Motion {
  std::function<Angles(double)> angles;  // seconds -> per-joint rotation vectors
  double speed = 0.0;                    // forward root speed, m/s
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Angles zero_angles() {
  Angles a;
  a.fill(Vec3::Zero());
  return a;
}

Motion make_walk(std::mt19937_64& rng) {
  using namespace joints;
  const double f = uniform(rng, 0.35, 0.5);
  const double phase = uniform(rng, 0.0, kTwoPi);
  const double hip = uniform(rng, 0.35, 0.55);
  const double knee = uniform(rng, 0.5, 0.9);
  const double arm = uniform(rng, 0.25, 0.45);
  const double elbow = uniform(rng, 0.2, 0.4);
  const Vec3 z = Vec3::UnitZ(), y = Vec3::UnitY();
  Motion m;
  m.speed = 2.5 * hip * f;
  m.angles = [=](double t) {
    const double s = kTwoPi * f * t + phase;
    Angles a = zero_angles();
    // Legs in anti-phase, each arm swinging with the opposite leg.
    a[kRightKnee] = z * (hip * std::sin(s));
    a[kLeftKnee] = z * (hip * std::sin(s + std::numbers::pi));
    a[kRightAnkle] = z * (-knee * 0.5 * (1.0 + std::sin(s - 0.5 * std::numbers::pi)));
    a[kLeftAnkle] = z * (-knee * 0.5 * (1.0 + std::sin(s + 0.5 * std::numbers::pi)));
    a[kRightElbow] = z * (arm * std::sin(s + std::numbers::pi));
    a[kLeftElbow] = z * (arm * std::sin(s));
    a[kRightWrist] = z * (elbow * 0.5 * (1.0 + std::sin(s + std::numbers::pi)));
    a[kLeftWrist] = z * (elbow * 0.5 * (1.0 + std::sin(s)));
    a[kSpine] = z * -0.05 + y * (0.08 * std::sin(s));
    return a;
  };
  return m;
}

Motion make_wave(std::mt19937_64& rng) {
  using namespace joints;
  const double f = uniform(rng, 0.5, 1.0);
  const double phase = uniform(rng, 0.0, kTwoPi);
  const double raise = uniform(rng, 1.2, 1.5);
  const double bend = uniform(rng, 0.4, 0.8);
  const double amp = uniform(rng, 0.3, 0.6);
  const Vec3 x = Vec3::UnitX(), z = Vec3::UnitZ();
  Motion m;
  m.angles = [=](double t) {
    const double s = kTwoPi * f * t + phase;
    Angles a = zero_angles();
    a[kRightElbow] = x * -raise;
    a[kRightWrist] = x * -(bend + amp * std::sin(s));
    a[kLeftElbow] = z * 0.05;
    a[kSpine] = x * (0.03 * std::sin(s));
    return a;
  };
  return m;
}

Motion make_squat(std::mt19937_64& rng) {
  using namespace joints;
  const double f = uniform(rng, 0.25, 0.4);
  const double phase = uniform(rng, 0.0, kTwoPi);
  const double depth = uniform(rng, 0.6, 1.1);
  const Vec3 z = Vec3::UnitZ();
  Motion m;
  m.angles = [=](double t) {
    const double u = depth * 0.5 * (1.0 - std::cos(kTwoPi * f * t + phase));
    Angles a = zero_angles();
    a[kRightKnee] = a[kLeftKnee] = z * u;
    a[kRightAnkle] = a[kLeftAnkle] = z * (-1.8 * u);
    a[kSpine] = z * (-0.4 * u);
    a[kRightElbow] = a[kLeftElbow] = z * (0.8 * u);
    return a;
  };
  return m;
}

Motion make_static(std::mt19937_64& rng, double noise, std::uint64_t noise_seed) {
  Angles base = zero_angles();
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t j = 1; j < kJointCount; ++j) {
    const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
    const bool hip_bone = j == joints::kRightHip || j == joints::kLeftHip;
    base[j] = axis * uniform(rng, 0.0, hip_bone ? 0.1 : 0.3);
  }
  Motion m;
  m.angles = [=](double t) {
    if (noise <= 0.0) return base;
    // Jitter depends only on the frame, so every call for a frame agrees.
    std::mt19937_64 frame_rng(noise_seed + static_cast<std::uint64_t>(std::llround(t * kFrameRate)));
    std::normal_distribution<double> jitter(0.0, noise);
    Angles a = base;
    for (std::size_t j = 1; j < kJointCount; ++j) a[j] += Vec3(jitter(frame_rng), jitter(frame_rng), jitter(frame_rng));
    return a;
  };
  return m;
}

// Bone twists for one frame from per-joint rest-frame rotation vectors.
LiePose pose_twists(const Angles& angles, const std::array<double, kJointCount>& lengths) {
  const Skeleton& sk = default_h36m16();
  const auto& dirs = rest_directions();
  std::array<Mat3, kJointCount> rest_world;  // rest orientation of each bone frame
  rest_world[sk.root_joint] = Mat3::Identity();
  LiePose pose;
  for (JointId j : sk.topological_order()) {
    const JointId p = sk.parent[j];
    if (p == kNoParent) continue;
    const Vec3 local_dir = rest_world[p].transpose() * dirs[j];
    const Mat3 rest = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitX(), local_dir).toRotationMatrix();
    rest_world[j] = rest_world[p] * rest;
    const Mat3 q = rest * rotation_exp(rest_world[j].transpose() * angles[j]);
    const RigidTransform g{q, q.col(0) * lengths[j]};
    pose.twists[j] = log_map(g, LogBranch::AllowFallback);
  }
  return pose;
}

}  // namespace

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  Camera cam;
  cam.extrinsic.rotation.row(0) = x.transpose();
  cam.extrinsic.rotation.row(1) = y.transpose();
  cam.extrinsic.rotation.row(2) = z.transpose();
  cam.extrinsic.translation = -(cam.extrinsic.rotation * eye);
  return cam;
}

Camera default_camera() { return Camera::look_at(Vec3(2.5, 1.0, 6.0), Vec3(0.0, 0.9, 0.0)); }

std::string to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::Walk: return "walk";
    case MotionKind::Wave: return "wave";
    case MotionKind::Squat: return "squat";
    case MotionKind::Static: return "static";
    case MotionKind::Mixed: return "mixed";
  }
  return "?";
}

MotionKind motion_kind_from_string(const std::string& text) {
  for (MotionKind k : {MotionKind::Walk, MotionKind::Wave, MotionKind::Squat, MotionKind::Static,
                       MotionKind::Mixed}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::ConfigError, "unknown motion kind '" + text + "'");
}

Trajectory synth_motion(MotionKind kind, std::size_t length, std::uint64_t seed,
                        const SynthOptions& options) {
  if (length < kMinLength) {
    throw Error(ErrorCode::TooShort, "synthetic sequences need at least " +
                                         std::to_string(kMinLength) + " frames, got " +
                                         std::to_string(length));
  }
  std::mt19937_64 rng(seed);
  const Skeleton& sk = default_h36m16();
  const double scale = uniform(rng, 0.92, 1.08);
  std::array<double, kJointCount> lengths{};
  for (std::size_t j = 0; j < kJointCount; ++j) lengths[j] = sk.bone_lengths[j] * scale;

  // Per-frame rotation vectors and forward speed.
  std::vector<Angles> angles(length);
  std::vector<double> speed(length, 0.0);
  auto fill = [&](const Motion& m, std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      angles[t] = m.angles(static_cast<double>(t) / kFrameRate);
      speed[t] = m.speed;
    }
  };
  switch (kind) {
    case MotionKind::Walk: fill(make_walk(rng), 0, length); break;
    case MotionKind::Wave: fill(make_wave(rng), 0, length); break;
    case MotionKind::Squat: fill(make_squat(rng), 0, length); break;
    case MotionKind::Static: fill(make_static(rng, options.static_noise, seed ^ 0x5eedULL), 0, length); break;
    case MotionKind::Mixed: {
      // Segments of the periodic kinds joined by a short cross-fade.
      constexpr std::size_t fade = 6;
      std::size_t begin = 0;
      std::optional<Motion> previous;
      while (begin < length) {
        const int pick = std::uniform_int_distribution<int>(0, 2)(rng);
        const Motion m = pick == 0 ? make_walk(rng) : pick == 1 ? make_wave(rng) : make_squat(rng);
        const std::size_t end =
            std::min(length, begin + std::uniform_int_distribution<std::size_t>(25, 50)(rng));
        fill(m, begin, end);
        if (previous) {
          for (std::size_t t = begin; t < std::min(end, begin + fade); ++t) {
            const double w = static_cast<double>(t - begin + 1) / (fade + 1);
            const Angles before = previous->angles(static_cast<double>(t) / kFrameRate);
            for (std::size_t j = 0; j < kJointCount; ++j) angles[t][j] = (1.0 - w) * before[j] + w * angles[t][j];
            speed[t] = (1.0 - w) * previous->speed + w * speed[t];
          }
        }
        previous = m;
        begin = end;
      }
      break;
    }
  }

  Trajectory traj;
  traj.label = to_string(kind);
  traj.frame_rate = kFrameRate;
  traj.frames.resize(length);
  double x = 0.0;
  for (std::size_t t = 0; t < length; ++t) {
    Frame& f = traj.frames[t];
    f.coord = forward_kinematics(pose_twists(angles[t], lengths), sk);
    f.lie = coord_to_lie(f.coord, sk);
    // Feet on the ground plane, pelvis advancing along +x.
    const double lowest =
        std::min(f.coord.joints[joints::kRightAnkle].y(), f.coord.joints[joints::kLeftAnkle].y());
    f.root = Vec3(x, 0.05 - lowest, 0.0);
    x += speed[t] / kFrameRate;
  }
  const double centre = 0.5 * x;
  for (Frame& f : traj.frames) f.root->x() -= centre;
  return traj;
}

Vec2 project_pixel(const Camera& cam, const Vec3& p) {
  return Vec2(cam.focal.x() * p.x() / p.z() + cam.principal.x(),
              cam.focal.y() * p.y() / p.z() + cam.principal.y());
}

Vec2 normalize_pixel(const Camera& cam, const Vec2& px) {
  const Vec2 half = 0.5 * cam.image_size;
  return Vec2((px.x() - half.x()) / half.x(), (px.y() - half.y()) / half.y());
}

Trajectory project_2d(const Trajectory& traj, const Camera& cam, double noise_px,
                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_px > 0.0 ? noise_px : 1.0);
  Trajectory out = traj;
  for (std::size_t t = 0; t < out.size(); ++t) {
    Frame& f = out.frames[t];
    if (!f.root) {
      throw Error(ErrorCode::ConfigError, "frame " + std::to_string(t) + " has no global root");
    }
    Keypoints kp;
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const Vec3 c = cam.extrinsic.apply(*f.root + f.coord.joints[j]);
      if (!(c.z() > 1e-9)) {
        throw Error(ErrorCode::BehindCamera,
                    "frame " + std::to_string(t) + " joint " + std::to_string(j) + " has depth " +
                        std::to_string(c.z()));
      }
      Vec2 px = project_pixel(cam, c);
      if (noise_px > 0.0) px += Vec2(noise(rng), noise(rng));
      kp[j] = normalize_pixel(cam, px);
    }
    f.kp2d = kp;
  }
  return out;
}

WindowSet make_windows(const std::vector<Trajectory>& trajs, std::size_t past, std::size_t future,
                       std::size_t stride, double train_ratio, std::uint64_t seed) {
  if (past == 0 || stride == 0) {
    throw Error(ErrorCode::ConfigError, "window past length and stride must be positive");
  }
  std::vector<std::size_t> order(trajs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(
      std::llround(std::clamp(train_ratio, 0.0, 1.0) * static_cast<double>(trajs.size())));
  std::vector<Split> split(trajs.size(), Split::Test);
  for (std::size_t i = 0; i < n_train; ++i) split[order[i]] = Split::Train;

  WindowSet set;
  const std::size_t span = past + future;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const std::size_t n = trajs[i].size();
    if (n < span) {
      set.warnings.push_back(std::string(to_string(ErrorCode::TooShort)) + ": trajectory " +
                             std::to_string(i) + " has " + std::to_string(n) + " frames, needs " +
                             std::to_string(span));
      continue;
    }
    auto& bucket = split[i] == Split::Train ? set.train : set.test;
    for (std::size_t start = 0; start + span <= n; start += stride) {
      bucket.push_back(Window{i, start, past, future, split[i]});
    }
  }
  return set;
}

}  // namespace motionlab::synth
