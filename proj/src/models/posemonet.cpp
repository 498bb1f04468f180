#include "motionlab/models/posemonet.hpp"

#include "motionlab/error.hpp"
#include "motionlab/liepose.hpp"

#include <cmath>
#include <memory>

namespace motionlab::models {

std::string to_string(GrMode mode) {
  switch (mode) {
    case GrMode::Gru: return "gru";
    case GrMode::ConvEd: return "conved";
    case GrMode::BlendFixed: return "blend_fixed";
    case GrMode::BlendAdaptive: return "blend_adaptive";
  }
  return "?";
}

GrMode gr_mode_from_string(const std::string& text) {
  for (GrMode m : {GrMode::Gru, GrMode::ConvEd, GrMode::BlendFixed, GrMode::BlendAdaptive}) {
    if (to_string(m) == text) return m;
  }
  throw Error(ErrorCode::ConfigError, "unknown gr_mode '" + text + "'");
}

// ---------------------------------------------------------------------------
// Self-projection head

SelfProjection SelfProjection::create(ParameterStore& store, const std::string& name,
                                      std::size_t in, std::size_t width, std::size_t experts,
                                      std::mt19937_64& rng, bool zero_heads) {
  SelfProjection sp;
  sp.expert_count = experts;
  sp.width = width;
  sp.shared = Linear::create(store, name + ".shared", in, width, rng);
  sp.experts = Linear::create(store, name + ".experts", width, experts * width, rng);
  sp.gate_coord = Linear::create(store, name + ".gate_coord", width, experts, rng);
  sp.gate_lie = Linear::create(store, name + ".gate_lie", width, experts, rng);
  sp.coord_head = Linear::create(store, name + ".coord", width, kCoordValues, rng, zero_heads);
  sp.lie_head = Linear::create(store, name + ".lie", width, kLieValues, rng, zero_heads);
  return sp;
}

SelfProjection::Output SelfProjection::operator()(Graph& g, Var hidden, double dropout) const {
  const std::size_t n = g.shape(hidden)[0];
  const Var s = g.dropout(g.relu(shared(g, hidden)), dropout);
  const Var e = g.reshape(experts(g, s), {n, expert_count, width});
  auto mix = [&](const Linear& gate, Var& weights) {
    weights = g.softmax(gate(g, s), 1);
    const Var w = g.reshape(weights, {n, expert_count, 1});
    return g.sum(g.mul(e, w), 1);
  };
  Output out;
  out.coord = coord_head(g, mix(gate_coord, out.gate_coord));
  out.lie = lie_head(g, mix(gate_lie, out.gate_lie));
  return out;
}

// ---------------------------------------------------------------------------
// Kinematics inside the graph

Var forward_kinematics_op(Graph& g, Var lie, const Skeleton& sk) {
  const auto shape = g.shape(lie);
  if (shape.size() != 2 || shape[1] != kLieValues) {
    throw Error(ErrorCode::ShapeMismatch, "forward kinematics expects [N," +
                                              std::to_string(kLieValues) + "], got " +
                                              grad::to_string(shape));
  }
  const std::size_t rows = shape[0];
  auto skel = std::make_shared<const Skeleton>(sk);
  Tensor out({rows, kCoordValues});
  const Tensor& in = g.value(lie);
  for (std::size_t r = 0; r < rows; ++r) {
    const LiePose pose = lie_from_flat(std::span<const double>(in.data() + r * kLieValues, kLieValues));
    flatten(forward_kinematics(pose, *skel),
            std::span<double>(out.data() + r * kCoordValues, kCoordValues));
  }
  const std::array<Var, 1> inputs{lie};
  return g.custom(inputs, std::move(out), [skel, rows](grad::BackwardContext& ctx) {
    Tensor* gin = ctx.input_grad(0);
    if (!gin) return;
    const Tensor& x = ctx.input(0);
    const Tensor& gout = ctx.output_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const LiePose pose = lie_from_flat(std::span<const double>(x.data() + r * kLieValues, kLieValues));
      std::array<Vec3, kJointCount> jg;
      for (std::size_t j = 0; j < kJointCount; ++j) {
        const double* p = gout.data() + r * kCoordValues + 3 * j;
        jg[j] = Vec3(p[0], p[1], p[2]);
      }
      std::array<double, kLieValues> flat{};
      flatten(forward_kinematics_vjp(pose, *skel, jg), flat);
      double* dst = gin->data() + r * kLieValues;
      for (std::size_t k = 0; k < kLieValues; ++k) dst[k] += flat[k];
    }
  });
}

Var omega_sp(Graph& g, Var coord, Var lie, const Skeleton& sk) {
  return g.l2_norm(g.sub(coord, forward_kinematics_op(g, lie, sk)));
}

// ---------------------------------------------------------------------------
// Pose lifting network

Var Pln::Output::latent(Graph& g) const {
  std::vector<Var> layers;
  for (std::size_t l = 0; l < z_forward.size(); ++l) {
    const auto s = g.shape(z_forward[l]);
    const grad::Shape cell{s[0], 1, s[1], 1};
    layers.push_back(g.concat({g.reshape(z_forward[l], cell), g.reshape(z_backward[l], cell)}, 3));
  }
  return g.concat(layers, 1);
}

Pln::Output Pln::operator()(Graph& g, Var kp2d, std::size_t batch, double dropout) const {
  Var x = kp2d;
  for (const Linear& layer : ffnn) x = g.dropout(g.relu(layer(g, x)), dropout);
  Output out;
  for (const BiGru& layer : encoder) {
    const BiGru::Result r = layer.run(g, x, batch);
    out.z_forward.push_back(r.last_forward);
    out.z_backward.push_back(r.last_backward);
    x = g.dropout(r.outputs, dropout);
  }
  out.head = head(g, x, dropout);
  out.coord = out.head.coord;
  out.lie = out.head.lie;
  return out;
}

// ---------------------------------------------------------------------------
// Motion generator

Mgn::Output Mgn::operator()(Graph& g, Var seed_coord, Var seed_lie, const std::vector<Var>& h0,
                            std::size_t steps, double dropout) const {
  std::vector<Var> h = h0;
  Var coord = seed_coord;
  Var lie = seed_lie;
  std::vector<Var> coords, lies;
  coords.reserve(steps);
  lies.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Var x = g.concat({coord, lie}, 1);
    for (const Linear& layer : ffnn) x = g.dropout(g.relu(layer(g, x)), dropout);
    for (std::size_t l = 0; l < decoder.size(); ++l) {
      h[l] = decoder[l].step(g, decoder[l].input(g, x), 0, h[l]);
      x = g.dropout(h[l], dropout);
    }
    const SelfProjection::Output delta = head(g, x, dropout);
    coord = g.add(coord, delta.coord);
    lie = g.add(lie, delta.lie);
    coords.push_back(coord);
    lies.push_back(lie);
  }
  return {g.concat(coords, 0), g.concat(lies, 0)};
}

// ---------------------------------------------------------------------------
// Global refinement

Var interleave(Graph& g, Var coord, Var lie) {
  const std::size_t rows = g.shape(coord)[0];
  const Var c = g.reshape(coord, {rows, kJointCount, 3});
  const Var l = g.reshape(lie, {rows, kJointCount, 6});
  return g.reshape(g.concat({c, l}, 2), {rows, kPoseValues});
}

std::pair<Var, Var> deinterleave(Graph& g, Var grid) {
  const std::size_t rows = g.shape(grid)[0];
  const Var cells = g.reshape(grid, {rows, kJointCount, 9});
  return {g.reshape(g.slice(cells, 2, 0, 3), {rows, kCoordValues}),
          g.reshape(g.slice(cells, 2, 3, 9), {rows, kLieValues})};
}

Var GlobalRefiner::gru_path(Graph& g, Var grid, std::size_t batch, double dropout) const {
  const BiGru::Result r = gru.run(g, grid, batch);
  return g.add(grid, gru_out(g, g.dropout(r.outputs, dropout)));
}

namespace {

std::size_t transpose_padding(std::size_t in, std::size_t stride, std::size_t target) {
  const std::size_t natural = (in - 1) * stride - 2 + 3;
  if (target < natural || target - natural >= stride) {
    throw Error(ErrorCode::ShapeMismatch, "cannot mirror convolution size " +
                                              std::to_string(in) + " -> " + std::to_string(target));
  }
  return target - natural;
}

}  // namespace

Var GlobalRefiner::conv_path(Graph& g, Var grid, std::size_t batch) const {
  const std::size_t frames = g.shape(grid)[0] / batch;
  const Var image = g.permute(g.reshape(grid, {frames, batch, kJointCount, 9}), {1, 3, 2, 0});
  auto conv = [&](Var x, const ConvLayer& c, std::size_t stride) {
    return g.conv2d(x, g.parameter(*c.weight), g.parameter(*c.bias), stride, 1);
  };
  auto tconv = [&](Var x, const ConvLayer& c, std::size_t stride, Var like) {
    const auto in = g.shape(x);
    const auto target = g.shape(like);
    return g.transpose_conv2d(x, g.parameter(*c.weight), g.parameter(*c.bias), stride, 1,
                              transpose_padding(in[2], stride, target[2]),
                              transpose_padding(in[3], stride, target[3]));
  };
  const Var e0 = g.relu(conv(image, encoder[0], 1));
  const Var e1 = g.relu(conv(e0, encoder[1], 2));
  const Var e2 = g.relu(conv(e1, encoder[2], 2));
  const Var d0 = g.relu(tconv(e2, decoder[0], 2, e1));
  const Var d1 = g.relu(tconv(d0, decoder[1], 2, e0));
  const Var d2 = tconv(d1, decoder[2], 1, image);
  const Var back = g.permute(d2, {3, 0, 2, 1});
  return g.add(grid, g.reshape(back, {frames * batch, kPoseValues}));
}

GlobalRefiner::Output GlobalRefiner::operator()(Graph& g, Var grid, std::size_t batch,
                                                double dropout) const {
  Output out;
  if (has_gru()) out.gru_path = gru_path(g, grid, batch, dropout);
  if (has_conv()) out.conv_path = conv_path(g, grid, batch);
  switch (mode) {
    case GrMode::Gru: out.refined = out.gru_path; break;
    case GrMode::ConvEd: out.refined = out.conv_path; break;
    case GrMode::BlendFixed:
      out.refined = g.add(g.scale(out.gru_path, 0.5), g.scale(out.conv_path, 0.5));
      break;
    case GrMode::BlendAdaptive:
      out.alpha = g.sigmoid(g.parameter(*alpha_logits));
      out.refined = g.add(g.mul(out.gru_path, out.alpha),
                          g.mul(out.conv_path, g.affine(out.alpha, -1.0, 1.0)));
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole network

PoseMoNet::PoseMoNet(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
  if (config.hidden == 0 || config.layers == 0 || config.ffnn == 0 || config.experts == 0) {
    throw Error(ErrorCode::ConfigError, "network widths must be positive");
  }
  std::mt19937_64 rng(seed);
  const std::size_t h = config.hidden;
  const std::size_t f = config.ffnn;

  pln.ffnn.push_back(Linear::create(store_, "pln.ffnn0", kKeypointValues, f, rng));
  pln.ffnn.push_back(Linear::create(store_, "pln.ffnn1", f, f, rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    pln.encoder.push_back(
        BiGru::create(store_, "pln.enc" + std::to_string(l), l == 0 ? f : 2 * h, h, rng));
  }
  pln.head = SelfProjection::create(store_, "pln.sp", 2 * h, h, config.experts, rng, false);

  if (config.use_mgn) {
    mgn.ffnn.push_back(Linear::create(store_, "mgn.ffnn0", kPoseValues, f, rng));
    mgn.ffnn.push_back(Linear::create(store_, "mgn.ffnn1", f, f, rng));
    for (std::size_t l = 0; l < config.layers; ++l) {
      mgn.decoder.push_back(
          Gru::create(store_, "mgn.dec" + std::to_string(l), l == 0 ? f : h, h, rng));
    }
    mgn.head = SelfProjection::create(store_, "mgn.sp", h, h, config.experts, rng,
                                      config.zero_delta_heads);
  }

  if (config.use_gr) {
    gr.mode = config.gr_mode;
    if (gr.has_gru()) {
      gr.gru = BiGru::create(store_, "gr.gru", kPoseValues, h, rng);
      gr.gru_out = Linear::create(store_, "gr.gru_out", 2 * h, kPoseValues, rng,
                                  config.zero_delta_heads);
    }
    if (gr.has_conv()) {
      const auto& ch = config.conv_channels;
      const std::array<std::size_t, 4> widths{9, ch[0], ch[1], ch[2]};
      for (std::size_t i = 0; i < 3; ++i) {
        const std::string n = "gr.enc" + std::to_string(i);
        auto& c = gr.encoder[i];
        c.weight = &store_.add(n + ".w", {widths[i + 1], widths[i], 3, 3});
        c.bias = &store_.add(n + ".b", {widths[i + 1]});
        const double bound = 1.0 / std::sqrt(9.0 * static_cast<double>(widths[i]));
        init_uniform(*c.weight, rng, bound);
        init_uniform(*c.bias, rng, bound);
      }
      for (std::size_t i = 0; i < 3; ++i) {
        // Mirror of encoder layer 2 - i: channels widths[3 - i] -> widths[2 - i].
        const std::string n = "gr.dec" + std::to_string(i);
        auto& c = gr.decoder[i];
        c.weight = &store_.add(n + ".w", {widths[3 - i], widths[2 - i], 3, 3});
        c.bias = &store_.add(n + ".b", {widths[2 - i]});
        if (i == 2 && config.zero_delta_heads) continue;
        const double bound = 1.0 / std::sqrt(9.0 * static_cast<double>(widths[3 - i]));
        init_uniform(*c.weight, rng, bound);
        init_uniform(*c.bias, rng, bound);
      }
    }
    if (gr.mode == GrMode::BlendAdaptive) {
      gr.alpha_logits = &store_.add("gr.alpha", {kJointCount * 9});
    }
  }
}

PoseMoNet::Output PoseMoNet::forward(Graph& g, const Tensor& kp2d, std::size_t horizon) const {
  if (kp2d.rank() != 3 || kp2d.dim(2) != kKeypointValues || kp2d.dim(0) == 0 || kp2d.dim(1) == 0) {
    throw Error(ErrorCode::ShapeMismatch,
                "keypoints must be [T,B,32], got " + grad::to_string(kp2d.shape()));
  }
  for (double v : kp2d.values()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonfiniteInput, "keypoints contain NaN or Inf");
    if (std::abs(v) > kKeypointLimit) {
      throw Error(ErrorCode::BadNormalization,
                  "keypoint value " + std::to_string(v) + " outside [-1.5, 1.5]");
    }
  }
  Output out;
  out.past = kp2d.dim(0);
  out.batch = kp2d.dim(1);
  out.future = config_.use_mgn ? horizon : 0;
  const double rate = config_.dropout;

  const Var x = g.constant(kp2d.reshaped({out.past * out.batch, kKeypointValues}));
  out.pln = pln(g, x, out.batch, rate);

  Var coords = out.pln.coord;
  Var lies = out.pln.lie;
  if (out.future > 0) {
    std::vector<Var> h0;
    for (std::size_t l = 0; l < config_.layers; ++l) {
      h0.push_back(g.add(out.pln.z_forward[l], out.pln.z_backward[l]));
    }
    out.mgn = mgn(g, frame_rows(g, out.pln.coord, out.past - 1, out.batch),
                  frame_rows(g, out.pln.lie, out.past - 1, out.batch), h0, out.future, rate);
    coords = g.concat({coords, out.mgn.coord}, 0);
    lies = g.concat({lies, out.mgn.lie}, 0);
  }
  out.trajectory = interleave(g, coords, lies);
  if (config_.use_gr) out.gr = gr(g, out.trajectory, out.batch, rate);
  return out;
}

// ---------------------------------------------------------------------------
// Losses

Var sequence_loss(Graph& g, Var coord, Var lie, Var gt_coord, Var gt_lie, bool no_lie) {
  const auto rows = g.shape(coord)[0];
  if (g.shape(gt_coord)[0] != rows || g.shape(lie)[0] != rows || g.shape(gt_lie)[0] != rows) {
    throw Error(ErrorCode::LengthMismatch,
                "prediction has " + std::to_string(rows) + " rows, target " +
                    std::to_string(g.shape(gt_coord)[0]));
  }
  const Var dc = g.sub(coord, gt_coord);
  const Var err = no_lie ? dc : g.concat({dc, g.sub(lie, gt_lie)}, 1);
  return g.mean(g.l2_norm(err));
}

LossTerms compute_losses(Graph& g, const PoseMoNet::Output& out, const Targets& targets,
                         const Skeleton& sk, const LossWeights& weights) {
  const std::size_t past_rows = out.past * out.batch;
  const std::size_t future_rows = out.future * out.batch;
  if (targets.past_coord.dim(0) != past_rows ||
      (future_rows > 0 && targets.future_coord.dim(0) < future_rows)) {
    throw Error(ErrorCode::LengthMismatch, "targets do not cover the predicted frames");
  }
  LossTerms terms;
  const Var past_c = g.constant(targets.past_coord);
  const Var past_l = g.constant(targets.past_lie);
  terms.l_pln = sequence_loss(g, out.pln.coord, out.pln.lie, past_c, past_l, weights.no_lie);

  Var all_c = out.pln.coord, all_l = out.pln.lie;
  Var gt_c = past_c, gt_l = past_l;
  Var total = terms.l_pln;
  if (future_rows > 0) {
    const Var fut_c = g.slice(g.constant(targets.future_coord), 0, 0, future_rows);
    const Var fut_l = g.slice(g.constant(targets.future_lie), 0, 0, future_rows);
    terms.l_mgn = sequence_loss(g, out.mgn.coord, out.mgn.lie, fut_c, fut_l, weights.no_lie);
    total = g.add(total, terms.l_mgn);
    all_c = g.concat({all_c, out.mgn.coord}, 0);
    all_l = g.concat({all_l, out.mgn.lie}, 0);
    gt_c = g.concat({gt_c, fut_c}, 0);
    gt_l = g.concat({gt_l, fut_l}, 0);
  }
  if (out.gr.refined.valid()) {
    const auto [rc, rl] = deinterleave(g, out.gr.refined);
    terms.l_gr = sequence_loss(g, rc, rl, gt_c, gt_l, weights.no_lie);
    total = g.add(total, g.scale(terms.l_gr, weights.beta));
  }
  terms.omega = g.mean(omega_sp(g, all_c, all_l, sk));
  terms.total = g.add(total, g.scale(terms.omega, weights.lambda));
  return terms;
}

double total_loss(double l_pln, double l_mgn, double l_gr, double omega, double beta,
                  double lambda) {
  return l_pln + l_mgn + beta * l_gr + lambda * omega;
}

}  // namespace motionlab::models
