#include "motionlab/error.hpp"
#include "motionlab/liepose.hpp"
#include "motionlab/models/pose_grid.hpp"
#include "motionlab/models/posemonet.hpp"
#include "test_support.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <bit>
#include <numeric>

using namespace motionlab;
using namespace motionlab::models;
using motionlab::testing::random_coord_pose;
using motionlab::testing::random_lie_pose;
using motionlab::testing::random_tensor;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.hidden = 8;
  c.ffnn = 8;
  c.layers = 2;
  c.experts = 5;
  c.dropout = 0.25;
  c.conv_channels = {4, 4, 4};
  return c;
}

Tensor random_keypoints(std::mt19937_64& rng, std::size_t t, std::size_t b) {
  return random_tensor(rng, {t, b, kKeypointValues}, -0.8, 0.8);
}

struct DualRows {
  Tensor coord;
  Tensor lie;
};

// Ground-truth pairs in time-major rows.
DualRows random_truth(std::mt19937_64& rng, std::size_t rows) {
  DualRows d{Tensor({rows, kCoordValues}), Tensor({rows, kLieValues})};
  for (std::size_t r = 0; r < rows; ++r) {
    const CoordPose c = random_coord_pose(rng);
    flatten(c, std::span<double>(d.coord.data() + r * kCoordValues, kCoordValues));
    flatten(coord_to_lie(c, default_h36m16()),
            std::span<double>(d.lie.data() + r * kLieValues, kLieValues));
  }
  return d;
}

Targets random_targets(std::mt19937_64& rng, std::size_t t, std::size_t k, std::size_t b) {
  const DualRows past = random_truth(rng, t * b);
  const DualRows future = random_truth(rng, k * b);
  return {past.coord, past.lie, future.coord, future.lie};
}

}  // namespace

TEST_CASE("self-projection gates are convex weights", "[models]") {
  std::mt19937_64 rng(1);
  ParameterStore store;
  const SelfProjection sp = SelfProjection::create(store, "sp", 12, 10, 5, rng, false);
  Graph g;
  const auto out = sp(g, g.constant(random_tensor(rng, {7, 12}, -5.0, 5.0)), 0.0);
  CHECK(g.shape(out.coord) == grad::Shape{7, kCoordValues});
  CHECK(g.shape(out.lie) == grad::Shape{7, kLieValues});
  for (Var gate : {out.gate_coord, out.gate_lie}) {
    const Tensor& w = g.value(gate);
    REQUIRE(w.shape() == grad::Shape{7, 5});
    for (std::size_t r = 0; r < 7; ++r) {
      double s = 0.0;
      for (std::size_t e = 0; e < 5; ++e) {
        CHECK(w[r * 5 + e] >= 0.0);
        CHECK(w[r * 5 + e] <= 1.0);
        s += w[r * 5 + e];
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("omega regulariser", "[models]") {
  std::mt19937_64 rng(2);
  const Skeleton& sk = default_h36m16();
  SECTION("zero when coord equals FK(lie)") {
    Tensor lie({3, kLieValues});
    Tensor coord({3, kCoordValues});
    for (std::size_t r = 0; r < 3; ++r) {
      const LiePose p = random_lie_pose(rng);
      flatten(p, std::span<double>(lie.data() + r * kLieValues, kLieValues));
      flatten(forward_kinematics(p, sk), std::span<double>(coord.data() + r * kCoordValues, kCoordValues));
    }
    Graph g;
    for (double v : g.value(omega_sp(g, g.constant(coord), g.constant(lie), sk)).values()) CHECK(v == 0.0);
  }
  SECTION("tiny on converted ground truth") {
    const DualRows d = random_truth(rng, 200);
    Graph g;
    for (double v : g.value(omega_sp(g, g.constant(d.coord), g.constant(d.lie), sk)).values()) {
      CHECK(v < 1e-6);
    }
  }
  SECTION("FK op gradient") {
    const double worst = motionlab::testing::gradient_check(
        {random_tensor(rng, {2, kLieValues}), random_tensor(rng, {2, kCoordValues})},
        [&](Graph& g, const std::vector<Var>& v) { return g.mean(omega_sp(g, v[1], v[0], sk)); });
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("PLN shapes at the default size", "[models]") {
  NetworkConfig cfg;
  cfg.use_mgn = false;
  cfg.use_gr = false;
  const PoseMoNet net(cfg, 3);
  std::mt19937_64 rng(3);
  Graph g;
  const auto out = net.forward(g, random_keypoints(rng, 4, 1), 0);
  CHECK(g.shape(out.pln.coord) == grad::Shape{4, kCoordValues});
  CHECK(g.shape(out.pln.lie) == grad::Shape{4, kLieValues});
  CHECK(g.shape(out.pln.latent(g)) == grad::Shape{1, 2, 512, 2});
}

TEST_CASE("keypoints outside the normalised range are rejected", "[models]") {
  const PoseMoNet net(tiny_config(), 4);
  Tensor kp({2, 1, kKeypointValues}, 0.1);
  kp[5] = 250.0;
  Graph g;
  try {
    net.forward(g, kp, 2);
    FAIL("expected BAD_NORMALIZATION");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadNormalization);
  }
}

TEST_CASE("zero delta heads make MGN repeat the seed", "[models]") {
  NetworkConfig cfg = tiny_config();
  cfg.use_gr = false;
  const PoseMoNet net(cfg, 5);
  std::mt19937_64 rng(5);
  const std::size_t t = 3, b = 2, k = 20;
  Graph g;
  const auto out = net.forward(g, random_keypoints(rng, t, b), k);
  const Tensor& pc = g.value(out.pln.coord);
  const Tensor& pl = g.value(out.pln.lie);
  const Tensor& mc = g.value(out.mgn.coord);
  const Tensor& ml = g.value(out.mgn.lie);
  REQUIRE(mc.dim(0) == k * b);
  bool exact = true;
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t i = 0; i < b * kCoordValues; ++i)
      exact &= mc[s * b * kCoordValues + i] == pc[(t - 1) * b * kCoordValues + i];
    for (std::size_t i = 0; i < b * kLieValues; ++i)
      exact &= ml[s * b * kLieValues + i] == pl[(t - 1) * b * kLieValues + i];
  }
  CHECK(exact);
}

TEST_CASE("refiner identities", "[models]") {
  std::mt19937_64 rng(6);
  const std::size_t frames = 11, b = 3;
  const Tensor grid = random_tensor(rng, {frames * b, kPoseValues});
  for (GrMode mode : {GrMode::Gru, GrMode::ConvEd, GrMode::BlendFixed, GrMode::BlendAdaptive}) {
    NetworkConfig cfg = tiny_config();
    cfg.gr_mode = mode;
    const PoseMoNet net(cfg, 6);
    Graph g;
    const auto out = net.gr(g, g.constant(grid), b, 0.0);
    INFO(to_string(mode));
    CHECK(g.value(out.refined) == grid);
  }

  SECTION("alpha forced to one selects the GRU path") {
    NetworkConfig cfg = tiny_config();
    cfg.zero_delta_heads = false;
    PoseMoNet net(cfg, 7);
    net.params().get("gr.alpha").value.fill(800.0);
    Graph g;
    const auto out = net.gr(g, g.constant(grid), b, 0.0);
    CHECK(g.value(out.refined) == g.value(out.gru_path));
    CHECK_FALSE(g.value(out.refined) == g.value(out.conv_path));
  }
}

TEST_CASE("pose grid codec", "[models]") {
  std::mt19937_64 rng(8);
  auto make = [&](std::size_t n) {
    DualSequence s;
    for (std::size_t i = 0; i < n; ++i) {
      s.coords.push_back(random_coord_pose(rng));
      s.lies.push_back(random_lie_pose(rng));
    }
    return s;
  };
  const DualSequence traj = make(27 + 20);
  const PoseGrid grid = pose_grid_encode(traj.coords, traj.lies);
  CHECK(grid.joints == 16);
  CHECK(grid.frames == 47);
  CHECK(grid.channels == 9);
  CHECK(grid.at(4, 10, 1) == traj.coords[10].joints[4].y());
  CHECK(grid.at(4, 10, 7) == traj.lies[10].twists[4].nu.y());

  const DualSequence back = pose_grid_decode(grid);
  bool exact = true;
  for (std::size_t n = 0; n < 47; ++n) {
    for (std::size_t j = 0; j < kJointCount; ++j) {
      exact &= back.coords[n].joints[j] == traj.coords[n].joints[j];
      exact &= back.lies[n].twists[j].omega == traj.lies[n].twists[j].omega;
      exact &= back.lies[n].twists[j].nu == traj.lies[n].twists[j].nu;
    }
  }
  CHECK(exact);

  const DualSequence one = make(1);
  CHECK(pose_grid_encode(one.coords, one.lies).frames == 1);
}

TEST_CASE("loss examples", "[models]") {
  CHECK(total_loss(1, 1, 1, 1, 0.2, 0.01) == Catch::Approx(2.21).epsilon(1e-15));

  std::mt19937_64 rng(9);
  const std::size_t t = 4, k = 3, b = 2;
  const Targets tg = random_targets(rng, t, k, b);
  Graph g;
  PoseMoNet::Output out;
  out.batch = b;
  out.past = t;
  out.future = k;
  out.pln.coord = g.constant(tg.past_coord);
  out.pln.lie = g.constant(tg.past_lie);
  out.mgn.coord = g.constant(tg.future_coord);
  out.mgn.lie = g.constant(tg.future_lie);
  const LossTerms terms = compute_losses(g, out, tg, default_h36m16(), LossWeights{});
  CHECK(g.value(terms.l_pln).item() == 0.0);
  CHECK(g.value(terms.l_mgn).item() == 0.0);
  CHECK(g.value(terms.omega).item() < 1e-6);
  CHECK(g.value(terms.total).item() < 1e-8);

  Targets short_targets = tg;
  short_targets.past_coord = Tensor({(t - 1) * b, kCoordValues});
  CHECK_THROWS_AS(compute_losses(g, out, short_targets, default_h36m16(), LossWeights{}), Error);
}

TEST_CASE("beta zero cuts the refiner out of the gradient", "[models]") {
  NetworkConfig cfg = tiny_config();
  cfg.zero_delta_heads = false;
  PoseMoNet net(cfg, 10);
  std::mt19937_64 rng(10);
  const Targets tg = random_targets(rng, 3, 2, 2);
  Graph g;
  const auto out = net.forward(g, random_keypoints(rng, 3, 2), 2);
  LossWeights w;
  w.beta = 0.0;
  g.backward(compute_losses(g, out, tg, default_h36m16(), w).total);
  std::size_t gr_params = 0;
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const auto& p = net.params()[i];
    if (p.name.rfind("gr.", 0) != 0) continue;
    ++gr_params;
    for (double v : p.grad.values()) CHECK(v == 0.0);
  }
  CHECK(gr_params > 0);
}

TEST_CASE("end-to-end loss gradient on 50 parameters", "[models]") {
  NetworkConfig cfg = tiny_config();
  cfg.zero_delta_heads = false;
  PoseMoNet net(cfg, 11);
  std::mt19937_64 rng(11);
  const std::size_t t = 3, k = 3, b = 2;
  const Tensor kp = random_keypoints(rng, t, b);
  const Targets tg = random_targets(rng, t, k, b);
  auto loss = [&](bool backward) {
    Graph g(Graph::Options{true, 99});  // dropout masks repeat for a fixed seed
    const auto out = net.forward(g, kp, k);
    const Var total = compute_losses(g, out, tg, default_h36m16(), LossWeights{}).total;
    if (backward) g.backward(total);
    return g.value(total).item();
  };
  net.params().zero_grad();
  loss(true);

  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < net.params().size(); ++i)
    for (std::size_t k2 = 0; k2 < net.params()[i].value.size(); ++k2) all.emplace_back(i, k2);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(50);

  constexpr double h = 1e-5;
  // Central differences of an O(1) loss carry ~1e-10 of round-off at this h,
  // so gradients are compared relative to at least 1e-5.
  constexpr double floor = 1e-5;
  double worst = 0.0;
  for (const auto& [i, k2] : all) {
    auto& p = net.params()[i];
    const double orig = p.value[k2];
    p.value[k2] = orig + h;
    const double up = loss(false);
    p.value[k2] = orig - h;
    const double down = loss(false);
    p.value[k2] = orig;
    const double err = motionlab::testing::relative_error(p.grad[k2], (up - down) / (2 * h), floor);
    INFO(p.name << "[" << k2 << "] analytic " << p.grad[k2] << " numeric " << (up - down) / (2 * h));
    CHECK(err < 1e-4);
    worst = std::max(worst, err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("forward is deterministic", "[models]") {
  auto run = [] {
    const PoseMoNet net(tiny_config(), 12);
    std::mt19937_64 rng(12);
    const Tensor kp = random_keypoints(rng, 3, 2);
    const Targets tg = random_targets(rng, 3, 4, 2);
    Graph g(Graph::Options{true, 5});
    const auto out = net.forward(g, kp, 4);
    return g.value(compute_losses(g, out, tg, default_h36m16(), LossWeights{}).total).item();
  };
  CHECK(std::bit_cast<std::uint64_t>(run()) == std::bit_cast<std::uint64_t>(run()));
}
