#pragma once

#include "motionlab/skeleton.hpp"
#include "motionlab/types.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace motionlab::synth {

using Vec2 = Eigen::Vector2d;
using Keypoints = std::array<Vec2, kJointCount>;

/// Synthetic frame rate; horizons of 40 ms multiples map to whole frames.
inline constexpr double kFrameRate = 25.0;
inline constexpr std::size_t kMinLength = 30;

/// Pinhole camera. `extrinsic` maps world points into camera coordinates
/// (x right, y down, z along the optical axis).
struct Camera {
  Vec2 focal{1000.0, 1000.0};
  Vec2 principal{500.0, 500.0};
  Vec2 image_size{1000.0, 1000.0};
  RigidTransform extrinsic = RigidTransform::identity();

  /// Camera at `eye` looking at `target`; `up` is the world up direction.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitY());
};

/// Oblique view of the synthetic capture volume from about 6.5 m.
Camera default_camera();

struct Frame {
  CoordPose coord;
  std::optional<LiePose> lie;
  std::optional<Keypoints> kp2d;
  std::optional<Vec3> root;  // absolute pelvis position, world frame
};

struct Trajectory {
  std::vector<Frame> frames;
  double frame_rate = kFrameRate;
  std::string label;

  std::size_t size() const { return frames.size(); }
};

enum class MotionKind { Walk, Wave, Squat, Static, Mixed };
std::string to_string(MotionKind kind);
MotionKind motion_kind_from_string(const std::string& text);

struct SynthOptions {
  /// Per-frame joint-angle jitter (radians) of the static kind.
  double static_noise = 0.005;
};

/// Joint-angle driven motion on the default skeleton in a y-up world, facing
/// +x with the subject's right along +z. Poses come out of forward kinematics;
/// `lie` holds the minimal-rotation twists of each frame. Throws TooShort when
/// length < 30.
Trajectory synth_motion(MotionKind kind, std::size_t length, std::uint64_t seed,
                        const SynthOptions& options = {});

/// Pixel projection of a camera-frame point.
Vec2 project_pixel(const Camera& cam, const Vec3& camera_point);
/// Pixel to [-1, 1] by the image half-extent on each axis.
Vec2 normalize_pixel(const Camera& cam, const Vec2& pixel);

/// Projects root + coord of every frame, adds N(0, noise_px) pixel noise and
/// normalises. Throws BehindCamera, or ConfigError when a root is missing.
Trajectory project_2d(const Trajectory& traj, const Camera& cam, double noise_px,
                      std::uint64_t seed);

enum class Split { Train, Test };

struct Window {
  std::size_t source = 0;  // trajectory index
  std::size_t start = 0;   // first past frame
  std::size_t past = 0;
  std::size_t future = 0;
  Split split = Split::Train;
};

struct WindowSet {
  std::vector<Window> train;
  std::vector<Window> test;
  std::vector<std::string> warnings;  // TOO_SHORT trajectories that were skipped
};

/// Tiles every trajectory with windows of past + future frames at `stride`,
/// assigning whole trajectories to train (fraction `train_ratio`) or test by a
/// seeded shuffle.
WindowSet make_windows(const std::vector<Trajectory>& trajs, std::size_t past, std::size_t future,
                       std::size_t stride, double train_ratio, std::uint64_t seed);

}  // namespace motionlab::synth
