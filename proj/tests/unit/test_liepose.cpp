#include "motionlab/error.hpp"
#include "motionlab/liepose.hpp"
#include "test_support.hpp"

#include <catch_amalgamated.hpp>

#include <numbers>

using namespace motionlab;
using motionlab::testing::fk_matrix_oracle;
using motionlab::testing::matrix_exp_series;
using motionlab::testing::random_coord_pose;
using motionlab::testing::random_lie_pose;
using motionlab::testing::random_twist;
using motionlab::testing::random_unit;
using motionlab::testing::twist_matrix;

namespace {

constexpr double kPi = std::numbers::pi;

double max_abs_diff(const RigidTransform& a, const RigidTransform& b) {
  return std::max((a.rotation - b.rotation).cwiseAbs().maxCoeff(),
                  (a.translation - b.translation).cwiseAbs().maxCoeff());
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::Io;
}

// Two translations on the right leg; everything else stays at the origin.
LiePose two_bone(const Twist& a, const Twist& b) {
  LiePose p;
  p.twists[joints::kRightHip] = a;
  p.twists[joints::kRightKnee] = b;
  return p;
}

}  // namespace

TEST_CASE("exp_map special cases", "[liepose]") {
  const RigidTransform id = exp_map(Twist{});
  CHECK(id.rotation == Mat3::Identity());
  CHECK(id.translation == Vec3::Zero());

  const RigidTransform t = exp_map(Twist{Vec3::Zero(), Vec3(1, 2, 3)});
  CHECK(t.rotation == Mat3::Identity());
  CHECK(t.translation == Vec3(1, 2, 3));

  CHECK(code_of([] { exp_map(Twist{Vec3(std::nan(""), 0, 0), Vec3::Zero()}); }) ==
        ErrorCode::NonfiniteInput);
}

TEST_CASE("exp_map agrees with the 4x4 power series", "[liepose]") {
  const Twist xi{Vec3(0, 0, kPi / 2), Vec3(1, 0, 0)};
  const Eigen::Matrix4d oracle = matrix_exp_series(twist_matrix(xi), 30);
  CHECK((exp_map(xi).matrix() - oracle).cwiseAbs().maxCoeff() < 1e-10);

  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    Twist r = random_twist(rng, 2.0);
    if (i % 4 == 0) r.omega *= 1e-9;  // Taylor branch
    const Eigen::Matrix4d o = matrix_exp_series(twist_matrix(r), 30);
    CHECK((exp_map(r).matrix() - o).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("log_map examples", "[liepose]") {
  const Twist zero = log_map(RigidTransform::identity());
  CHECK(zero.omega == Vec3::Zero());
  CHECK(zero.nu == Vec3::Zero());

  const Twist xi{Vec3(0, 0, kPi / 2), Vec3(1, 0, 0)};
  const Eigen::Matrix4d m = matrix_exp_series(twist_matrix(xi), 30);
  RigidTransform g{m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  const Twist back = log_map(g);
  CHECK((back.omega - xi.omega).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((back.nu - xi.nu).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("log_map near pi", "[liepose]") {
  // Rotation by pi about x written out by hand.
  RigidTransform g;
  g.rotation << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  g.translation = Vec3::Zero();
  CHECK(code_of([&] { log_map(g); }) == ErrorCode::NearPiSingularity);

  const Twist xi = log_map(g, LogBranch::AllowFallback);
  // The axis sign is ambiguous at exactly pi.
  CHECK(std::abs(std::abs(xi.omega.x()) - kPi) < 1e-6);
  CHECK(std::abs(xi.omega.y()) < 1e-6);
  CHECK(std::abs(xi.omega.z()) < 1e-6);
  CHECK(xi.nu.norm() < 1e-6);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Twist near{(kPi - 1e-7) * random_unit(rng), Vec3(0.3, -0.2, 0.1)};
    const RigidTransform h = exp_map(near);
    CHECK(max_abs_diff(exp_map(log_map(h, LogBranch::AllowFallback)), h) < 1e-6);
  }
}

TEST_CASE("log_map rejects non-rotations", "[liepose]") {
  RigidTransform g = RigidTransform::identity();
  g.rotation(0, 0) = 1.01;
  CHECK(code_of([&] { log_map(g); }) == ErrorCode::NotARotation);
  g.rotation = -Mat3::Identity();  // det -1
  CHECK(code_of([&] { log_map(g); }) == ErrorCode::NotARotation);
}

TEST_CASE("exp of log is the identity on 10000 transforms", "[liepose]") {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Twist xi = random_twist(rng, kPi - 2e-6);
    const Eigen::Matrix4d m = matrix_exp_series(twist_matrix(xi), 40);
    const RigidTransform g{m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
    worst = std::max(worst, max_abs_diff(exp_map(log_map(g)), g));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("log of exp is canonicalize", "[liepose]") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 2000; ++i) {
    const Twist xi = random_twist(rng, kPi - 1e-3);
    const Twist back = log_map(exp_map(xi));
    const Twist c = canonicalize(xi);
    CHECK((back.omega - c.omega).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((back.nu - c.nu).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("canonicalize", "[liepose]") {
  const Vec3 axis = Vec3(1, 2, 2).normalized();
  const Twist wide{(2 * kPi - 0.1) * axis, Vec3(0.5, 0, 0)};
  const Twist c = canonicalize(wide);
  CHECK(c.omega.norm() == Catch::Approx(0.1).margin(1e-12));
  CHECK(c.omega.normalized().dot(axis) == Catch::Approx(-1.0).margin(1e-12));
  CHECK(max_abs_diff(exp_map(c), exp_map(wide)) < 1e-9);

  const Twist already{0.7 * axis, Vec3(1, 2, 3)};
  const Twist same = canonicalize(already);
  CHECK((same.omega - already.omega).norm() < 1e-15);
  CHECK((same.nu - already.nu).norm() < 1e-12);

  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const Twist xi = random_twist(rng, 12.0);
    const Twist out = canonicalize(xi);
    CHECK(out.omega.norm() <= kPi + 1e-12);
    CHECK(max_abs_diff(exp_map(out), exp_map(xi)) < 1e-9);
  }
}

TEST_CASE("forward kinematics examples", "[liepose]") {
  const Skeleton& sk = default_h36m16();
  const Twist unit_x{Vec3::Zero(), Vec3(1, 0, 0)};
  const CoordPose p = forward_kinematics(two_bone(unit_x, unit_x), sk);
  CHECK(p.joints[joints::kRightHip] == Vec3(1, 0, 0));
  CHECK(p.joints[joints::kRightKnee] == Vec3(2, 0, 0));

  const CoordPose zero = forward_kinematics(LiePose{}, sk);
  for (const Vec3& j : zero.joints) CHECK(j == Vec3::Zero());
}

TEST_CASE("forward kinematics matches the explicit matrix product", "[liepose]") {
  const Skeleton& sk = default_h36m16();
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    LiePose pose = random_lie_pose(rng);
    // A nonzero root twist must not move anything.
    pose.twists[sk.root_joint] = random_twist(rng, 1.0);
    const CoordPose fk = forward_kinematics(pose, sk);
    pose.twists[sk.root_joint] = Twist{};
    const auto oracle = fk_matrix_oracle(pose, sk);
    CHECK(fk.joints[sk.root_joint] == Vec3::Zero());
    double worst = 0.0;
    for (std::size_t j = 0; j < kJointCount; ++j) {
      worst = std::max(worst, (fk.joints[j] - oracle[j]).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("forward kinematics gradient matches finite differences", "[liepose]") {
  const Skeleton& sk = default_h36m16();
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  constexpr double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    LiePose pose = random_lie_pose(rng, 3.0);
    if (trial == 0) pose.twists[joints::kLeftElbow].omega.setZero();
    if (trial == 1) pose.twists[joints::kSpine].omega = Vec3(1e-3, -2e-3, 0.5e-3);
    std::array<Vec3, kJointCount> w;
    for (auto& v : w) v = Vec3(n(rng), n(rng), n(rng));
    auto loss = [&](const LiePose& p) {
      const CoordPose c = forward_kinematics(p, sk);
      double s = 0.0;
      for (std::size_t j = 0; j < kJointCount; ++j) s += w[j].dot(c.joints[j]);
      return s;
    };
    const LiePose g = forward_kinematics_vjp(pose, sk, w);
    double worst = 0.0;
    for (std::size_t j = 1; j < kJointCount; ++j) {
      for (int c = 0; c < 6; ++c) {
        LiePose plus = pose, minus = pose;
        auto& vp = c < 3 ? plus.twists[j].omega : plus.twists[j].nu;
        auto& vm = c < 3 ? minus.twists[j].omega : minus.twists[j].nu;
        vp[c % 3] += h;
        vm[c % 3] -= h;
        const double numeric = (loss(plus) - loss(minus)) / (2 * h);
        const double analytic = c < 3 ? g.twists[j].omega[c] : g.twists[j].nu[c - 3];
        worst = std::max(worst, motionlab::testing::relative_error(analytic, numeric));
      }
    }
    CHECK(worst < 1e-4);
    CHECK(g.twists[sk.root_joint].omega == Vec3::Zero());
  }
}

TEST_CASE("coord_to_lie examples", "[liepose]") {
  const Skeleton& sk = default_h36m16();
  SECTION("straight chain along x") {
    CoordPose p;
    for (std::size_t k = 0; k < sk.chains.size(); ++k) {
      Vec3 at = p.joints[sk.chain_origins[k]];
      for (JointId j : sk.chains[k]) p.joints[j] = at += Vec3(1, 0, 0);
    }
    const LiePose lie = coord_to_lie(p, sk);
    for (std::size_t j = 1; j < kJointCount; ++j) {
      CHECK(lie.twists[j].omega.norm() < 1e-15);
      CHECK((lie.twists[j].nu - Vec3(1, 0, 0)).norm() < 1e-15);
    }
  }
  SECTION("90 degree elbow") {
    CoordPose p;
    for (std::size_t k = 0; k < sk.chains.size(); ++k) {
      Vec3 at = p.joints[sk.chain_origins[k]];
      for (JointId j : sk.chains[k]) p.joints[j] = at += Vec3(1, 0, 0);
    }
    p.joints[joints::kRightKnee] = Vec3(1, 1, 0);
    p.joints[joints::kRightAnkle] = Vec3(1, 2, 0);
    const LiePose lie = coord_to_lie(p, sk);
    const Vec3 b1 = p.joints[joints::kRightHip];
    const Vec3 b2 = p.joints[joints::kRightKnee] - p.joints[joints::kRightHip];
    const double angle = std::acos(b1.dot(b2) / (b1.norm() * b2.norm()));
    CHECK(lie.twists[joints::kRightKnee].omega.norm() == Catch::Approx(angle).margin(1e-12));
    CHECK(angle == Catch::Approx(kPi / 2).margin(1e-12));
  }
  SECTION("degenerate bone") {
    std::mt19937_64 rng(1);
    CoordPose p = random_coord_pose(rng);
    p.joints[joints::kLeftElbow] = p.joints[joints::kLeftShoulder];
    CHECK(code_of([&] { coord_to_lie(p, sk); }) == ErrorCode::DegenerateBone);
  }
  SECTION("antipodal bone is resolved deterministically") {
    CoordPose p;
    p.joints[joints::kRightHip] = Vec3(1, 0, 0);
    p.joints[joints::kRightKnee] = Vec3(0.5, 0, 0);
    std::mt19937_64 rng(2);
    const CoordPose rest = random_coord_pose(rng);
    for (JointId j = 3; j < 16; ++j) p.joints[j] = rest.joints[j];
    p.joints[joints::kRightAnkle] = Vec3(0.5, -0.4, 0);
    const LiePose lie = coord_to_lie(p, sk);
    CHECK(lie.twists[joints::kRightKnee].omega.norm() == Catch::Approx(kPi));
    const CoordPose back = forward_kinematics(lie, sk);
    for (std::size_t j = 0; j < kJointCount; ++j) {
      CHECK((back.joints[j] - p.joints[j]).norm() < 1e-9);
    }
  }
}

TEST_CASE("coord_to_lie round trip on 1000 poses", "[liepose]") {
  const Skeleton& sk = default_h36m16();
  std::mt19937_64 rng(21);
  double worst = 0.0;
  double worst_len = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const CoordPose p = random_coord_pose(rng);
    const LiePose lie = coord_to_lie(p, sk);
    const CoordPose back = forward_kinematics(lie, sk);
    for (std::size_t j = 0; j < kJointCount; ++j) {
      worst = std::max(worst, (back.joints[j] - p.joints[j]).norm());
    }
    const auto lengths = bone_lengths_from(p, sk);
    for (std::size_t j = 1; j < kJointCount; ++j) {
      const double offset = exp_map(lie.twists[j]).translation.norm();
      worst_len = std::max(worst_len, std::abs(offset - lengths[j]));
    }
  }
  CHECK(worst < 1e-6);
  CHECK(worst_len < 1e-9);
}

TEST_CASE("flat layouts round-trip", "[liepose]") {
  std::mt19937_64 rng(4);
  const LiePose lie = random_lie_pose(rng);
  std::array<double, kLieValues> buf{};
  flatten(lie, buf);
  CHECK(buf[6] == lie.twists[1].omega.x());
  CHECK(buf[9] == lie.twists[1].nu.x());
  const LiePose back = lie_from_flat(buf);
  for (std::size_t j = 0; j < kJointCount; ++j) {
    CHECK(back.twists[j].omega == lie.twists[j].omega);
    CHECK(back.twists[j].nu == lie.twists[j].nu);
  }
  const CoordPose c = random_coord_pose(rng);
  std::array<double, kCoordValues> cb{};
  flatten(c, cb);
  CHECK(coord_from_flat(cb).joints == c.joints);
}
