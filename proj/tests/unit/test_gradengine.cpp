#include "motionlab/error.hpp"
#include "motionlab/grad/graph.hpp"
#include "motionlab/grad/optim.hpp"
#include "test_support.hpp"

#include <catch_amalgamated.hpp>

#include <bit>
#include <cstdint>
#include <numeric>

using namespace motionlab;
using namespace motionlab::grad;
using motionlab::testing::gradient_check;
using motionlab::testing::random_tensor;

namespace {

using Build = std::function<Var(Graph&, const std::vector<Var>&)>;

// Weighted sum so every output entry carries a distinct gradient.
Var weighted_total(Graph& g, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return g.sum(g.mul(y, g.constant(random_tensor(rng, g.shape(y)))));
}

}  // namespace

TEST_CASE("forward values", "[grad]") {
  Graph g;
  std::mt19937_64 rng(1);
  SECTION("softmax sums to one") {
    for (int i = 0; i < 50; ++i) {
      const Var x = g.constant(random_tensor(rng, {7}, -20.0, 20.0));
      const Tensor& y = g.value(g.softmax(x, 0));
      CHECK(std::abs(std::accumulate(y.values().begin(), y.values().end(), 0.0) - 1.0) < 1e-12);
    }
  }
  SECTION("relu clamps negatives") {
    const Var x = g.constant(Tensor({3}, {-0.5, -2.0, -1e-9}));
    for (double v : g.value(g.relu(x)).values()) CHECK(v == 0.0);
  }
  SECTION("conv2d against a sliding window") {
    Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor w({1, 1, 2, 2}, {1, 0, 0, 0});
    const Tensor& y = g.value(g.conv2d(g.constant(x), g.constant(w), g.constant(Tensor({1})), 1, 0));
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 2; ++c) {
        double acc = 0.0;
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) acc += x[(r + i) * 3 + (c + j)] * w[i * 2 + j];
        CHECK(y[r * 2 + c] == acc);
      }
    }
  }
}

TEST_CASE("tensor storage is cache-line aligned", "[grad]") {
  // Reduction order in the kernels must not depend on heap placement.
  for (std::size_t n : {1u, 3u, 17u, 1000u}) {
    Tensor a({n});
    Tensor b = Tensor::uninitialized({n, 2});
    Tensor c = a.reshaped({1, n});
    CHECK(reinterpret_cast<std::uintptr_t>(a.data()) % 64 == 0);
    CHECK(reinterpret_cast<std::uintptr_t>(b.data()) % 64 == 0);
    CHECK(reinterpret_cast<std::uintptr_t>(c.data()) % 64 == 0);
  }
}

TEST_CASE("backward basics", "[grad]") {
  Graph g;
  const Var x = g.variable(Tensor::scalar(3.0));
  g.backward(g.mul(x, x));
  CHECK(g.grad(x).item() == 6.0);

  Graph g2;
  const Var v = g2.variable(Tensor({2}, {1.0, 2.0}));
  try {
    g2.backward(v);
    FAIL("expected NOT_SCALAR_LOSS");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotScalarLoss);
  }

  Graph g3;
  try {
    g3.matmul(g3.constant(Tensor({2, 3})), g3.constant(Tensor({4, 5})));
    FAIL("expected SHAPE_MISMATCH");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
    CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
    CHECK(std::string(e.what()).find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("parameter gradients accumulate across backward calls", "[grad]") {
  ParameterStore store;
  Parameter& p = store.add("w", {2});
  p.value = Tensor({2}, {1.0, -2.0});
  for (int k = 0; k < 2; ++k) {
    Graph g;
    g.backward(g.sum(g.scale(g.parameter(p), 3.0)));
  }
  CHECK(p.grad[0] == 6.0);
  CHECK(p.grad[1] == 6.0);
  store.zero_grad();
  CHECK(p.grad[0] == 0.0);
}

TEST_CASE("three-layer sigmoid MLP gradient", "[grad]") {
  std::mt19937_64 rng(2);
  ParameterStore store;
  const std::vector<std::pair<std::size_t, std::size_t>> dims{{5, 8}, {8, 6}, {6, 3}};
  for (std::size_t l = 0; l < dims.size(); ++l) {
    store.add("w" + std::to_string(l), {dims[l].first, dims[l].second}).value =
        random_tensor(rng, {dims[l].first, dims[l].second});
    store.add("b" + std::to_string(l), {dims[l].second}).value = random_tensor(rng, {dims[l].second});
  }
  const Tensor input = random_tensor(rng, {4, 5});
  const Tensor target = random_tensor(rng, {4, 3});
  auto loss = [&](Graph& g) {
    Var h = g.constant(input);
    for (std::size_t l = 0; l < dims.size(); ++l) {
      h = g.sigmoid(g.add(g.matmul(h, g.parameter(store.get("w" + std::to_string(l)))),
                          g.parameter(store.get("b" + std::to_string(l)))));
    }
    const Var d = g.sub(h, g.constant(target));
    return g.mean(g.mul(d, d));
  };
  {
    Graph g;
    g.backward(loss(g));
  }
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double orig = p.value[k];
      p.value[k] = orig + h;
      Graph gp;
      const double up = gp.value(loss(gp)).item();
      p.value[k] = orig - h;
      Graph gm;
      const double down = gm.value(loss(gm)).item();
      p.value[k] = orig;
      worst = std::max(worst, motionlab::testing::relative_error(p.grad[k], (up - down) / (2 * h)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("softmax input gradient sums to zero", "[grad]") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    Graph g;
    const Var x = g.variable(random_tensor(rng, {9}, -3.0, 3.0));
    const Var y = g.softmax(x, 0);
    g.backward(g.sum(g.mul(y, g.constant(random_tensor(rng, {9})))));
    const Tensor& gx = g.grad(x);
    CHECK(std::abs(std::accumulate(gx.values().begin(), gx.values().end(), 0.0)) < 1e-12);
  }
}

TEST_CASE("every primitive passes the finite-difference check", "[grad]") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t a = dim(rng), b = dim(rng), c = dim(rng), d = dim(rng);
    const auto seed = static_cast<std::uint64_t>(trial);
    INFO("trial " << trial << " dims " << a << "x" << b << "x" << c << "x" << d);

    auto check = [&](std::vector<Tensor> in, Build op) {
      Build wrapped = [op, seed](Graph& g, const std::vector<Var>& v) {
        return weighted_total(g, op(g, v), seed);
      };
      CHECK(gradient_check(std::move(in), wrapped) < 1e-4);
    };
    auto rt = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(rng, std::move(s), lo, hi); };
    // Keeps values away from the relu kink.
    auto away = [&](Shape s) {
      Tensor t = rt(std::move(s), 0.1, 1.0);
      std::bernoulli_distribution flip(0.5);
      for (double& v : t.values()) v = flip(rng) ? -v : v;
      return t;
    };

    check({rt({a, b}), rt({b, c})}, [](Graph& g, const auto& v) { return g.matmul(v[0], v[1]); });
    check({rt({a, b, c}), rt({b, c})}, [](Graph& g, const auto& v) { return g.add(v[0], v[1]); });
    check({rt({a, b}), rt({a, 1})}, [](Graph& g, const auto& v) { return g.sub(v[0], v[1]); });
    check({rt({a, b, c}), rt({a, 1, c})}, [](Graph& g, const auto& v) { return g.mul(v[0], v[1]); });
    check({rt({a, b}), rt({a, c})}, [](Graph& g, const auto& v) { return g.concat({v[0], v[1]}, 1); });
    check({rt({a, b + 1, c})}, [b](Graph& g, const auto& v) { return g.slice(v[0], 1, 1, b + 1); });
    check({rt({a, b, c})}, [](Graph& g, const auto& v) { return g.sigmoid(v[0]); });
    check({rt({a, b, c})}, [](Graph& g, const auto& v) { return g.tanh(v[0]); });
    check({away({a, b, c})}, [](Graph& g, const auto& v) { return g.relu(v[0]); });
    check({rt({a, b, c}, -3, 3)}, [](Graph& g, const auto& v) { return g.softmax(v[0], 1); });
    check({rt({a, b, c})}, [](Graph& g, const auto& v) { return g.mean(v[0]); });
    check({rt({a, b, c})}, [](Graph& g, const auto& v) { return g.sum(v[0], 1); });
    check({away({a, b, c + 1})}, [](Graph& g, const auto& v) { return g.l2_norm(v[0]); });
    check({rt({a, b, c})}, [](Graph& g, const auto& v) { return g.permute(v[0], {2, 0, 1}); });
    check({rt({a, b, c})}, [a, b, c](Graph& g, const auto& v) { return g.reshape(v[0], {a * b, c}); });
    const std::size_t stride = 1 + trial % 2, pad = trial % 2;
    check({rt({a, b, c + 2, d + 2}), rt({2, b, 3, 2}), rt({2})},
          [stride, pad](Graph& g, const auto& v) { return g.conv2d(v[0], v[1], v[2], stride, pad); });
    check({rt({a, b, c + 1, d + 1}), rt({b, 2, 3, 3}), rt({2})}, [stride, pad](Graph& g, const auto& v) {
      return g.transpose_conv2d(v[0], v[1], v[2], stride, pad, stride - 1, 0);
    });
  }
}

TEST_CASE("custom op uses the supplied vjp", "[grad]") {
  Graph g;
  const Var x = g.variable(Tensor({2}, {1.0, 2.0}));
  Tensor cube({2});
  for (std::size_t i = 0; i < 2; ++i) cube[i] = std::pow(g.value(x)[i], 3);
  const std::array<Var, 1> ins{x};
  const Var y = g.custom(ins, cube, [](BackwardContext& ctx) {
    Tensor* gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < gx->size(); ++i) {
      (*gx)[i] += 3.0 * ctx.input(0)[i] * ctx.input(0)[i] * ctx.output_grad()[i];
    }
  });
  g.backward(g.sum(y));
  CHECK(g.grad(x)[0] == 3.0);
  CHECK(g.grad(x)[1] == 12.0);
}

TEST_CASE("dropout", "[grad]") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor(rng, {50, 40}, 0.5, 1.5);
  {
    Graph g(Graph::Options{false, 1});
    CHECK(g.value(g.dropout(g.constant(x), 0.25)) == x);
  }
  auto run = [&](std::uint64_t seed) {
    Graph g(Graph::Options{true, seed});
    return g.value(g.dropout(g.constant(x), 0.25));
  };
  const Tensor a = run(9), b = run(9), c = run(10);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (a[i] != 0.0) {
      ++kept;
      CHECK(a[i] == Catch::Approx(x[i] / 0.75).epsilon(1e-15));
    }
  }
  CHECK(kept > 1300);
  CHECK(kept < 1700);
}

TEST_CASE("forward is deterministic given seeds", "[grad]") {
  auto run = [] {
    std::mt19937_64 rng(6);
    Graph g(Graph::Options{true, 42});
    const Var x = g.constant(random_tensor(rng, {8, 6}));
    const Var w = g.constant(random_tensor(rng, {6, 5}));
    return g.value(g.mean(g.tanh(g.dropout(g.matmul(x, w), 0.3)))).item();
  };
  const double first = run();
  const double second = run();
  CHECK(std::bit_cast<std::uint64_t>(first) == std::bit_cast<std::uint64_t>(second));
}

TEST_CASE("learning rate schedule and sgd", "[grad]") {
  const LrSchedule schedule;
  CHECK(schedule.at(0) == 0.001);
  CHECK(schedule.at(9999) == 0.001);
  CHECK(schedule.at(10000) == Catch::Approx(0.0009).epsilon(1e-15));
  CHECK(schedule.at(25000) == Catch::Approx(0.001 * 0.81).epsilon(1e-15));

  ParameterStore store;
  Parameter& p = store.add("p", {3});
  p.value = Tensor({3}, {1.0, 2.0, 3.0});
  const Tensor before = p.value;
  sgd_step(store, schedule.at(0));
  CHECK(p.value == before);

  p.grad = Tensor({3}, {1.0, 0.0, -1.0});
  sgd_step(store, 0.5);
  CHECK(p.value == Tensor({3}, {0.5, 2.0, 3.5}));

  p.grad = Tensor({3}, {3.0, 4.0, 0.0});
  CHECK(clip_grad_norm(store, 1.0) == Catch::Approx(5.0));
  CHECK(p.grad[0] == Catch::Approx(0.6));
}

TEST_CASE("optimizers leave parameters alone at zero gradient", "[grad]") {
  for (const std::string name : {"sgd", "adam"}) {
    ParameterStore store;
    Parameter& p = store.add("p", {4});
    p.value = Tensor({4}, {1, 2, 3, 4});
    const Tensor before = p.value;
    auto opt = make_optimizer(name, 0.9);
    for (int k = 0; k < 3; ++k) opt->step(store, 1e-3);
    CHECK(p.value == before);
  }
}
