#include "motionlab/cli/dataset.hpp"

#include "motionlab/error.hpp"
#include "motionlab/liepose.hpp"
#include "motionlab/synth/trajectory_io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

namespace motionlab::cli {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string sequence_file(std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "seq_%04zu.jsonl", i);
  return name;
}

}  // namespace

SynthRequest benchmark_request() {
  SynthRequest r;
  r.sequences = 500;
  r.kinds = {synth::MotionKind::Walk, synth::MotionKind::Wave};
  r.seed = 7;
  r.length = 80;
  return r;
}

Dataset synthesize(const SynthRequest& request) {
  if (request.kinds.empty()) throw Error(ErrorCode::ConfigError, "no motion kinds requested");
  Dataset data;
  data.camera = synth::default_camera();
  data.train_ratio = request.train_ratio;
  data.split_seed = request.seed;
  std::mt19937_64 seeds(request.seed);
  for (std::size_t i = 0; i < request.sequences; ++i) {
    const synth::MotionKind kind = request.kinds[i % request.kinds.size()];
    const std::uint64_t motion_seed = seeds();
    const std::uint64_t noise_seed = seeds();
    data.trajectories.push_back(synth::project_2d(synth::synth_motion(kind, request.length, motion_seed),
                                                  data.camera, request.noise_px, noise_seed));
  }
  return data;
}

void write_dataset(const Dataset& data, const SynthRequest& request, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create '" + dir + "': " + ec.message());
  json manifest;
  manifest["schema"] = kDatasetSchema;
  manifest["seed"] = request.seed;
  json kinds = json::array();
  for (auto k : request.kinds) kinds.push_back(synth::to_string(k));
  manifest["kinds"] = std::move(kinds);
  manifest["noise_px"] = request.noise_px;
  manifest["train_ratio"] = data.train_ratio;
  manifest["split_seed"] = data.split_seed;
  manifest["camera"] = "camera.json";
  json files = json::array();
  for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
    const auto& t = data.trajectories[i];
    synth::write_trajectory(t, (fs::path(dir) / sequence_file(i)).string());
    files.push_back({{"file", sequence_file(i)}, {"label", t.label}, {"frames", t.size()}});
  }
  manifest["files"] = std::move(files);
  synth::write_camera(data.camera, (fs::path(dir) / "camera.json").string());
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest in '" + dir + "'");
  out << manifest.dump(2) << '\n';
}

Dataset read_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::Io, "no dataset manifest at '" + manifest_path.string() + "'");
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ParseError, manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("schema", std::string()) != kDatasetSchema) {
    throw Error(ErrorCode::SchemaVersionMismatch,
                manifest_path.string() + ": expected schema '" + kDatasetSchema + "'");
  }
  Dataset data;
  try {
    data.train_ratio = manifest.at("train_ratio").get<double>();
    data.split_seed = manifest.at("split_seed").get<std::uint64_t>();
    data.camera = synth::read_camera((fs::path(dir) / manifest.at("camera").get<std::string>()).string());
    for (const json& f : manifest.at("files")) {
      data.trajectories.push_back(synth::read_trajectory((fs::path(dir) / f.at("file").get<std::string>()).string()));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ParseError, manifest_path.string() + ": " + e.what());
  }
  return data;
}

synth::WindowSet dataset_windows(const Dataset& data, std::size_t past, std::size_t future,
                                 std::size_t stride) {
  return synth::make_windows(data.trajectories, past, future, stride, data.train_ratio, data.split_seed);
}

grad::Tensor keypoint_tensor(std::span<const synth::Trajectory> trajs,
                             std::span<const synth::Window> windows) {
  if (windows.empty()) throw Error(ErrorCode::ConfigError, "empty batch");
  const std::size_t past = windows[0].past, b = windows.size();
  grad::Tensor kp({past, b, 32});
  for (std::size_t i = 0; i < b; ++i) {
    const synth::Window& w = windows[i];
    if (w.past != past) throw Error(ErrorCode::ShapeMismatch, "windows of one batch must share their lengths");
    const synth::Trajectory& traj = trajs[w.source];
    if (w.start + past > traj.size()) {
      throw Error(ErrorCode::InsufficientFrames, "window needs " + std::to_string(past) +
                                                     " frames from " + std::to_string(w.start) + ", trajectory has " +
                                                     std::to_string(traj.size()));
    }
    for (std::size_t t = 0; t < past; ++t) {
      const synth::Frame& f = traj.frames[w.start + t];
      if (!f.kp2d) {
        throw Error(ErrorCode::InsufficientFrames, "frame " + std::to_string(w.start + t) + " has no 2D keypoints");
      }
      double* dst = kp.data() + (t * b + i) * 32;
      for (std::size_t j = 0; j < kJointCount; ++j) {
        dst[2 * j] = (*f.kp2d)[j].x();
        dst[2 * j + 1] = (*f.kp2d)[j].y();
      }
    }
  }
  return kp;
}

Batch make_batch(std::span<const synth::Trajectory> trajs, std::span<const synth::Window> windows) {
  if (windows.empty()) throw Error(ErrorCode::ConfigError, "empty batch");
  const std::size_t past = windows[0].past, future = windows[0].future, b = windows.size();
  Batch batch;
  batch.size = b;
  batch.kp2d = keypoint_tensor(trajs, windows);
  auto& tg = batch.targets;
  tg.past_coord = grad::Tensor({past * b, kCoordValues});
  tg.past_lie = grad::Tensor({past * b, kLieValues});
  tg.future_coord = grad::Tensor({future * b, kCoordValues});
  tg.future_lie = grad::Tensor({future * b, kLieValues});
  const Skeleton& sk = default_h36m16();
  for (std::size_t i = 0; i < b; ++i) {
    const synth::Window& w = windows[i];
    if (w.future != future) throw Error(ErrorCode::ShapeMismatch, "windows of one batch must share their lengths");
    const synth::Trajectory& traj = trajs[w.source];
    if (w.start + past + future > traj.size()) {
      throw Error(ErrorCode::InsufficientFrames, "window runs past the end of trajectory " +
                                                     std::to_string(w.source));
    }
    for (std::size_t t = 0; t < past + future; ++t) {
      const synth::Frame& f = traj.frames[w.start + t];
      const bool is_past = t < past;
      const std::size_t row = (is_past ? t : t - past) * b + i;
      grad::Tensor& coord = is_past ? tg.past_coord : tg.future_coord;
      grad::Tensor& lie = is_past ? tg.past_lie : tg.future_lie;
      flatten(f.coord, coord.values().subspan(row * kCoordValues, kCoordValues));
      flatten(f.lie ? *f.lie : coord_to_lie(f.coord, sk), lie.values().subspan(row * kLieValues, kLieValues));
    }
  }
  return batch;
}

}  // namespace motionlab::cli
