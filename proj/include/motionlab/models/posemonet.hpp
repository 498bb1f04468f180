#pragma once

#include "motionlab/models/layers.hpp"
#include "motionlab/skeleton.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace motionlab::models {

inline constexpr std::size_t kKeypointValues = 2 * kJointCount;
inline constexpr std::size_t kPoseValues = kCoordValues + kLieValues;  // 144
/// Keypoints beyond this magnitude are taken as unnormalised pixels.
inline constexpr double kKeypointLimit = 1.5;

enum class GrMode { Gru, ConvEd, BlendFixed, BlendAdaptive };
std::string to_string(GrMode mode);
GrMode gr_mode_from_string(const std::string& text);

struct NetworkConfig {
  std::size_t hidden = 512;
  std::size_t layers = 2;
  std::size_t ffnn = 512;
  std::size_t experts = 5;
  double dropout = 0.25;
  std::array<std::size_t, 3> conv_channels{32, 64, 64};
  GrMode gr_mode = GrMode::BlendAdaptive;
  bool use_mgn = true;
  bool use_gr = true;
  /// Zero-initialised output layers make MGN and both refiner paths start as
  /// exact identities.
  bool zero_delta_heads = true;
};

/// Mixture-of-experts output head producing both pose representations.
struct SelfProjection {
  Linear shared;
  Linear experts;  // all experts side by side: width -> experts * width
  Linear gate_coord;
  Linear gate_lie;
  Linear coord_head;
  Linear lie_head;
  std::size_t expert_count = 0;
  std::size_t width = 0;

  static SelfProjection create(ParameterStore& store, const std::string& name, std::size_t in,
                               std::size_t width, std::size_t experts, std::mt19937_64& rng,
                               bool zero_heads);

  struct Output {
    Var coord;       // [N, 48]
    Var lie;         // [N, 96]
    Var gate_coord;  // [N, experts], rows sum to 1
    Var gate_lie;
  };
  Output operator()(Graph& g, Var hidden, double dropout) const;
};

/// Differentiable forward kinematics over rows: lie [N, 96] -> coord [N, 48].
Var forward_kinematics_op(Graph& g, Var lie, const Skeleton& sk);

/// Per-row ||coord - FK(lie)|| -> [N].
Var omega_sp(Graph& g, Var coord, Var lie, const Skeleton& sk);

/// Pose lifting network: 2D keypoint sequence to per-frame 3D poses.
struct Pln {
  std::vector<Linear> ffnn;
  std::vector<BiGru> encoder;
  SelfProjection head;

  struct Output {
    Var coord;  // [T*B, 48], time-major rows
    Var lie;    // [T*B, 96]
    std::vector<Var> z_forward;   // per layer [B, H]
    std::vector<Var> z_backward;  // per layer [B, H]
    SelfProjection::Output head;

    /// Latent [B, layers, H, directions].
    Var latent(Graph& g) const;
  };
  /// kp2d is [T*B, 32] in time-major rows.
  Output operator()(Graph& g, Var kp2d, std::size_t batch, double dropout) const;
};

/// Motion generator: residual decoding of future poses from a seed pose.
struct Mgn {
  std::vector<Linear> ffnn;
  std::vector<Gru> decoder;
  SelfProjection head;

  struct Output {
    Var coord;  // [K*B, 48]
    Var lie;    // [K*B, 96]
  };
  /// h0 holds one initial state per decoder layer.
  Output operator()(Graph& g, Var seed_coord, Var seed_lie, const std::vector<Var>& h0,
                    std::size_t steps, double dropout) const;
};

/// Blend of a residual GRU refiner and a residual convolutional
/// encoder-decoder over the pose grid.
struct GlobalRefiner {
  GrMode mode = GrMode::BlendAdaptive;
  BiGru gru;
  Linear gru_out;
  struct ConvLayer {
    Parameter* weight = nullptr;
    Parameter* bias = nullptr;
  };
  std::array<ConvLayer, 3> encoder{};
  std::array<ConvLayer, 3> decoder{};  // transpose convolutions
  Parameter* alpha_logits = nullptr;   // [16 * 9]

  bool has_gru() const { return mode != GrMode::ConvEd; }
  bool has_conv() const { return mode != GrMode::Gru; }

  struct Output {
    Var refined;  // [N*B, 144] time-major rows, interleaved per joint
    Var gru_path;
    Var conv_path;
    Var alpha;  // [144] when blending
  };
  Output operator()(Graph& g, Var grid, std::size_t batch, double dropout) const;

  Var gru_path(Graph& g, Var grid, std::size_t batch, double dropout) const;
  Var conv_path(Graph& g, Var grid, std::size_t batch) const;
};

/// Interleaves per-row coord [R, 48] and lie [R, 96] into [R, 144].
Var interleave(Graph& g, Var coord, Var lie);
/// Splits [R, 144] back into coord [R, 48] and lie [R, 96].
std::pair<Var, Var> deinterleave(Graph& g, Var grid);

class PoseMoNet {
 public:
  PoseMoNet(const NetworkConfig& config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  struct Output {
    std::size_t batch = 0;
    std::size_t past = 0;
    std::size_t future = 0;
    Pln::Output pln;
    Mgn::Output mgn;          // valid when future > 0
    GlobalRefiner::Output gr;  // valid when the refiner is enabled
    Var trajectory;           // [N*B, 144] before refinement
  };

  /// kp2d: [T, B, 32] normalised keypoints. Throws BadNormalization for
  /// values outside [-1.5, 1.5].
  Output forward(Graph& g, const Tensor& kp2d, std::size_t horizon) const;

  Pln pln;
  Mgn mgn;
  GlobalRefiner gr;

 private:
  NetworkConfig config_;
  ParameterStore store_;
};

struct LossWeights {
  double beta = 0.2;
  double lambda = 0.01;
  bool no_lie = false;
};

/// Ground truth in time-major rows.
struct Targets {
  Tensor past_coord;    // [T*B, 48]
  Tensor past_lie;      // [T*B, 96]
  Tensor future_coord;  // [K*B, 48]
  Tensor future_lie;    // [K*B, 96]
};

struct LossTerms {
  Var total;
  Var l_pln;
  Var l_mgn;  // valid when the output has future frames
  Var l_gr;   // valid when the output was refined
  Var omega;
};

/// Time mean of per-frame L2 norms of the dual error (coordinates only when
/// no_lie). Throws LengthMismatch on row-count disagreement.
Var sequence_loss(Graph& g, Var coord, Var lie, Var gt_coord, Var gt_lie, bool no_lie);

LossTerms compute_losses(Graph& g, const PoseMoNet::Output& out, const Targets& targets,
                         const Skeleton& sk, const LossWeights& weights);

double total_loss(double l_pln, double l_mgn, double l_gr, double omega, double beta,
                  double lambda);

}  // namespace motionlab::models
