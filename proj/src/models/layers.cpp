#include "motionlab/models/layers.hpp"

#include "motionlab/error.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <memory>

namespace motionlab::models {

void init_uniform(Parameter& p, std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : p.value.values()) v = u(rng);
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, std::mt19937_64& rng, bool zero) {
  Linear l;
  l.weight = &store.add(name + ".w", {in, out});
  l.bias = &store.add(name + ".b", {out});
  if (!zero) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    init_uniform(*l.weight, rng, bound);
    init_uniform(*l.bias, rng, bound);
  }
  return l;
}

Var Linear::operator()(Graph& g, Var x) const {
  return g.add(g.matmul(x, g.parameter(*weight)), g.parameter(*bias));
}

Gru Gru::create(ParameterStore& store, const std::string& name, std::size_t in,
                std::size_t hidden, std::mt19937_64& rng) {
  Gru gru;
  gru.input = Linear::create(store, name + ".x", in, 3 * hidden, rng);
  gru.recurrent = Linear::create(store, name + ".h", hidden, 3 * hidden, rng);
  // Same bound as the usual GRU initialisation, 1/sqrt(hidden), for both.
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  init_uniform(*gru.input.weight, rng, bound);
  init_uniform(*gru.input.bias, rng, bound);
  return gru;
}

// Fused cell: one tape node per transition. The saved activations are enough
// for the backward pass, so the per-gate intermediates never hit the tape.
Var Gru::step(Graph& g, Var gates, std::size_t row, Var h) const {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  const auto n = static_cast<Eigen::Index>(hidden());
  const auto b = static_cast<Eigen::Index>(g.shape(h)[0]);
  const Var w = g.parameter(*recurrent.weight);
  const Var bias = g.parameter(*recurrent.bias);
  if (g.shape(gates).size() != 2 || g.shape(gates)[1] != static_cast<std::size_t>(3 * n) ||
      g.shape(gates)[0] < row + static_cast<std::size_t>(b) || g.shape(h)[1] != static_cast<std::size_t>(n)) {
    throw Error(ErrorCode::ShapeMismatch, "gru step: gates " + grad::to_string(g.shape(gates)) +
                                              ", state " + grad::to_string(g.shape(h)));
  }

  struct Saved {
    Mat r, z, cand, hn;  // gates, candidate and recurrent candidate term, [B, H]
  };
  auto saved = std::make_shared<Saved>();
  const CMap gx(g.value(gates).data() + row * 3 * n, b, 3 * n);
  const CMap hv(g.value(h).data(), b, n);
  Mat hg = hv * CMap(g.value(w).data(), n, 3 * n);
  hg.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(g.value(bias).data(), 3 * n);
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  saved->r = (gx.leftCols(n) + hg.leftCols(n)).unaryExpr(sigmoid);
  saved->z = (gx.middleCols(n, n) + hg.middleCols(n, n)).unaryExpr(sigmoid);
  saved->hn = hg.rightCols(n);
  saved->cand = (gx.rightCols(n).array() + saved->r.array() * saved->hn.array()).tanh().matrix();
  Tensor out = Tensor::uninitialized({static_cast<std::size_t>(b), static_cast<std::size_t>(n)});
  Map(out.data(), b, n) = saved->cand.array() + saved->z.array() * (hv - saved->cand).array();

  const std::array<Var, 4> inputs{gates, h, w, bias};
  return g.custom(inputs, std::move(out), [saved, row, n, b](grad::BackwardContext& ctx) {
    const Saved& s = *saved;
    const CMap go(ctx.output_grad().data(), b, n);
    const CMap hv(ctx.input(1).data(), b, n);
    const Mat d_cand = ((go.array() * (1.0 - s.z.array())) * (1.0 - s.cand.array().square())).matrix();
    const Mat d_z = ((go.array() * (hv - s.cand).array()) * s.z.array() * (1.0 - s.z.array())).matrix();
    const Mat d_r =
        ((d_cand.array() * s.hn.array()) * s.r.array() * (1.0 - s.r.array())).matrix();
    Mat d_hg(b, 3 * n);
    d_hg << d_r, d_z, (d_cand.array() * s.r.array()).matrix();
    if (Tensor* gg = ctx.input_grad(0)) {
      Map dx(gg->data() + row * 3 * n, b, 3 * n);
      dx.leftCols(2 * n) += d_hg.leftCols(2 * n);
      dx.rightCols(n) += d_cand;
    }
    if (Tensor* gh = ctx.input_grad(1)) {
      Map(gh->data(), b, n).noalias() += go.cwiseProduct(s.z);
      Map(gh->data(), b, n).noalias() += d_hg * CMap(ctx.input(2).data(), n, 3 * n).transpose();
    }
    if (Tensor* gw = ctx.input_grad(2)) Map(gw->data(), n, 3 * n).noalias() += hv.transpose() * d_hg;
    if (Tensor* gb = ctx.input_grad(3)) {
      Eigen::Map<Eigen::RowVectorXd>(gb->data(), 3 * n) += d_hg.colwise().sum();
    }
  });
}

std::vector<Var> Gru::run(Graph& g, Var inputs, std::size_t batch, Var h0, bool reverse) const {
  const std::size_t steps = g.shape(inputs)[0] / batch;
  const Var gates = input(g, inputs);
  std::vector<Var> states(steps);
  Var h = h0;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    h = step(g, gates, t * batch, h);
    states[t] = h;
  }
  return states;
}

BiGru BiGru::create(ParameterStore& store, const std::string& name, std::size_t in,
                    std::size_t hidden, std::mt19937_64& rng) {
  BiGru b;
  b.forward = Gru::create(store, name + ".fwd", in, hidden, rng);
  b.backward = Gru::create(store, name + ".bwd", in, hidden, rng);
  return b;
}

BiGru::Result BiGru::run(Graph& g, Var inputs, std::size_t batch) const {
  const auto f = forward.run(g, inputs, batch, zeros(g, batch, forward.hidden()));
  const auto b = backward.run(g, inputs, batch, zeros(g, batch, backward.hidden()), true);
  Result res;
  res.outputs = g.concat({g.concat(std::span<const Var>(f), 0), g.concat(std::span<const Var>(b), 0)}, 1);
  res.last_forward = f.back();
  res.last_backward = b.front();
  return res;
}

Var zeros(Graph& g, std::size_t batch, std::size_t width) {
  return g.constant(Tensor({batch, width}));
}

Var frame_rows(Graph& g, Var stacked, std::size_t t, std::size_t batch) {
  return g.slice(stacked, 0, t * batch, (t + 1) * batch);
}

}  // namespace motionlab::models
