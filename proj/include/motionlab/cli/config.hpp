#pragma once

#include "motionlab/metrics.hpp"
#include "motionlab/models/posemonet.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <string>

namespace motionlab::cli {

/// Training and evaluation settings. Defaults are the full-size model.
struct Config {
  std::size_t past_frames = 9;
  std::size_t future_frames = 20;
  std::size_t hidden = 512;
  std::size_t layers = 2;
  std::size_t ffnn = 512;
  std::size_t experts = 5;
  std::array<std::size_t, 3> conv_channels{32, 64, 64};
  double dropout = 0.25;
  double lr = 0.001;
  std::size_t decay_every = 10000;
  double decay_factor = 0.9;
  std::size_t epochs = 30;
  std::size_t batch = 32;
  double beta = 0.2;
  double lambda = 0.01;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  bool no_lie = false;
  bool no_mgn = false;
  bool no_gr = false;
  models::GrMode gr_mode = models::GrMode::BlendAdaptive;
  MaeMode mae_mode = MaeMode::Omega;
  std::string optimizer = "sgd";
  double momentum = 0.0;
  std::size_t window_stride = 5;
  std::size_t max_steps = 0;  // 0 = no cap
  double divergence_threshold = 1e6;
};

/// Named starting points: "default", "toy", "bench", "overfit".
Config preset(const std::string& name);

/// Applies `key = value` lines (# starts a comment) on top of `base`.
/// Unknown keys and malformed values throw ConfigError naming the line.
Config parse_config(const std::string& text, Config base = {});
/// ConfigError when a value is out of range.
void validate(const Config& c);

Config load_config(const std::string& path, Config base = {});

/// Canonical text form; parse_config(to_text(c)) == c.
std::string to_text(const Config& c);

nlohmann::ordered_json to_json(const Config& c);
Config config_from_json(const nlohmann::ordered_json& j);

models::NetworkConfig network_config(const Config& c);
models::LossWeights loss_weights(const Config& c);

}  // namespace motionlab::cli
