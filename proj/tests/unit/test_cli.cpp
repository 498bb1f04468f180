#include "motionlab/cli/ablation.hpp"
#include "motionlab/cli/app.hpp"
#include "motionlab/cli/checkpoint.hpp"
#include "motionlab/cli/config.hpp"
#include "motionlab/cli/dataset.hpp"
#include "motionlab/cli/evaluate.hpp"
#include "motionlab/cli/trainer.hpp"
#include "motionlab/synth/trajectory_io.hpp"

#include <catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace motionlab;
using namespace motionlab::cli;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("motionlab_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

int app(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "motionlab");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_app(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

// Small enough to train in a blink.
Config tiny() {
  return parse_config("hidden = 12\nffnn = 12\nconv_channels = 4,4,4\nexperts = 2\nepochs = 2\nbatch = 8\n"
                      "window_stride = 20\n",
                      preset("toy"));
}

Dataset tiny_data() {
  SynthRequest r;
  r.sequences = 6;
  r.length = 60;
  r.seed = 3;
  return synthesize(r);
}

}  // namespace

TEST_CASE("config defaults", "[cli]") {
  const Config c;
  CHECK(c.past_frames == 9);
  CHECK(c.future_frames == 20);
  CHECK(c.hidden == 512);
  CHECK(c.layers == 2);
  CHECK(c.dropout == 0.25);
  CHECK(c.lr == 0.001);
  CHECK(c.decay_every == 10000);
  CHECK(c.decay_factor == 0.9);
  CHECK(c.epochs == 30);
  CHECK(c.batch == 32);
  CHECK(c.beta == 0.2);
  CHECK(c.lambda == 0.01);
  CHECK(c.clip_norm == 5.0);
  CHECK_FALSE(c.no_lie);
  CHECK_FALSE(c.no_mgn);
  CHECK_FALSE(c.no_gr);
  CHECK(c.gr_mode == models::GrMode::BlendAdaptive);
  CHECK(c.mae_mode == MaeMode::Omega);
  CHECK(preset("toy").hidden == 64);
  CHECK(preset("toy").epochs == 200);
}

TEST_CASE("config text", "[cli]") {
  const Config c = parse_config("# comment\npast_frames = 27  # trailing\n\nno_lie = true\ngr_mode = conved\n");
  CHECK(c.past_frames == 27);
  CHECK(c.no_lie);
  CHECK(c.gr_mode == models::GrMode::ConvEd);
  CHECK(to_text(parse_config(to_text(c))) == to_text(c));
  CHECK(to_text(config_from_json(to_json(c))) == to_text(c));

  try {
    parse_config("hidden = 8\nhiden = 9\n");
    FAIL("unknown key accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("past_frames = 10\n"), Error);
  CHECK_THROWS_AS(parse_config("dropout = x\n"), Error);
  CHECK_THROWS_AS(preset("huge"), Error);
}

TEST_CASE("checkpoint round trip is bit exact", "[cli]") {
  TempDir dir("ckpt");
  const Config cfg = tiny();
  const Dataset data = tiny_data();
  const auto windows = dataset_windows(data, cfg.past_frames, cfg.future_frames, cfg.window_stride);
  models::PoseMoNet model(network_config(cfg), cfg.seed);
  train(model, data.trajectories, windows.train, cfg);
  save_checkpoint(cfg, 5, model.params(), dir / "m.ckpt");

  const Checkpoint loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded.step == 5);
  CHECK(to_text(loaded.config) == to_text(cfg));
  models::PoseMoNet copy(network_config(loaded.config), 999);
  restore(loaded, copy.params());
  REQUIRE(copy.params().size() == model.params().size());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto a = model.params()[i].value.values();
    const auto b = copy.params()[i].value.values();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  }

  std::ostringstream before, after;
  write_report(before, "r", evaluate(model, data.trajectories, windows, cfg));
  write_report(after, "r", evaluate(copy, data.trajectories, windows, loaded.config));
  CHECK(before.str() == after.str());

  // Saving the loaded checkpoint again gives the same bytes.
  save_checkpoint(loaded, dir / "again.ckpt");
  CHECK(slurp(dir / "m.ckpt") == slurp(dir / "again.ckpt"));
}

TEST_CASE("checkpoint errors", "[cli]") {
  TempDir dir("ckpt_err");
  const Config cfg = tiny();
  models::PoseMoNet model(network_config(cfg), 1);
  save_checkpoint(cfg, 0, model.params(), dir / "m.ckpt");

  std::string bytes = slurp(dir / "m.ckpt");
  bytes[0] = 'X';
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
  try {
    load_checkpoint(dir / "bad.ckpt");
    FAIL("bad magic accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SchemaVersionMismatch);
  }
  std::ofstream(dir / "short.ckpt", std::ios::binary) << slurp(dir / "m.ckpt").substr(0, 200);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), Error);

  try {
    load_checkpoint(dir / "missing.ckpt");
    FAIL("missing file accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Io);
  }

  Config wider = cfg;
  wider.hidden = 16;
  models::PoseMoNet other(network_config(wider), 1);
  try {
    restore(load_checkpoint(dir / "m.ckpt"), other.params());
    FAIL("shape mismatch accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigMismatch);
  }
}

TEST_CASE("evaluation does not depend on the worker count", "[cli]") {
  const Config cfg = tiny();
  const Dataset data = tiny_data();
  const auto windows = dataset_windows(data, cfg.past_frames, cfg.future_frames, 5);
  const models::PoseMoNet model(network_config(cfg), 4);
  std::ostringstream one, three;
  setenv("MOTIONLAB_THREADS", "1", 1);
  write_report(one, "r", evaluate(model, data.trajectories, windows, cfg));
  setenv("MOTIONLAB_THREADS", "3", 1);
  write_report(three, "r", evaluate(model, data.trajectories, windows, cfg));
  unsetenv("MOTIONLAB_THREADS");
  CHECK(one.str() == three.str());
}

TEST_CASE("report rows", "[cli]") {
  const Config cfg = tiny();
  const Dataset data = tiny_data();
  const auto windows = dataset_windows(data, cfg.past_frames, cfg.future_frames, 5);
  const models::PoseMoNet model(network_config(cfg), 4);
  const auto rows = evaluate(model, data.trajectories, windows, cfg);
  std::ostringstream report;
  write_report(report, "run", rows);
  std::string header;
  std::getline(std::istringstream(report.str()), header);
  for (int h : {80, 160, 320, 400, 560, 640, 720, 1000}) {
    CHECK(header.find("mae@" + std::to_string(h) + "ms") != std::string::npos);
    CHECK(header.find("zv_mae@" + std::to_string(h) + "ms") != std::string::npos);
  }
  bool saw_all = false;
  for (const auto& r : rows) {
    CHECK(r.model.p_mpjpe <= r.model.mpjpe + 1e-9);
    saw_all = saw_all || r.label == "all";
  }
  CHECK(saw_all);
}

TEST_CASE("commands end to end", "[cli]") {
  TempDir dir("app");
  const std::string data = dir / "data";
  REQUIRE(app({"synth", "--out", data, "--sequences", "6", "--length", "60", "--seed", "3"}) == 0);
  REQUIRE(app({"synth", "--out", dir / "data2", "--sequences", "6", "--length", "60", "--seed", "3"}) == 0);
  for (const auto& entry : fs::directory_iterator(data)) {
    CHECK(slurp(entry.path()) == slurp(fs::path(dir / "data2") / entry.path().filename()));
  }

  std::ofstream(dir / "tiny.cfg") << to_text(tiny());
  const std::vector<std::string> train_args{"train", "--data", data, "--config", dir / "tiny.cfg"};
  auto with = [](std::vector<std::string> a, std::initializer_list<std::string> more) {
    a.insert(a.end(), more);
    return a;
  };
  REQUIRE(app(with(train_args, {"--out", dir / "a.ckpt", "--log", dir / "a.csv"})) == 0);
  REQUIRE(app(with(train_args, {"--out", dir / "b.ckpt", "--log", dir / "b.csv"})) == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "a.csv").rfind("epoch,total,l_pln,l_mgn,l_gr,omega_sp,lr\n", 0) == 0);
  CHECK(fs::exists(dir / "a.best.ckpt"));
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));

  REQUIRE(app({"eval", "--ckpt", dir / "a.ckpt", "--data", data, "--report", dir / "r1.csv"}) == 0);
  REQUIRE(app({"eval", "--ckpt", dir / "b.ckpt", "--data", data, "--report", dir / "r2.csv", "--run-id", "a"}) ==
          0);
  CHECK(slurp(dir / "r1.csv") == slurp(dir / "r2.csv"));

  const std::string seq = (fs::path(data) / "seq_0000.jsonl").string();
  REQUIRE(app({"predict", "--ckpt", dir / "a.ckpt", "--in", seq, "--out", dir / "p.jsonl"}) == 0);
  REQUIRE(app({"predict", "--ckpt", dir / "a.ckpt", "--in", seq, "--out", dir / "p2.jsonl"}) == 0);
  CHECK(slurp(dir / "p.jsonl") == slurp(dir / "p2.jsonl"));
  const auto predicted = synth::read_trajectory(dir / "p.jsonl");
  CHECK(predicted.size() == 9 + 20);
  CHECK(predicted.frames[0].lie.has_value());

  REQUIRE(app({"predict", "--ckpt", dir / "a.ckpt", "--in", seq, "--horizon", "0", "--out", dir / "p0.jsonl"}) ==
          0);
  CHECK(synth::read_trajectory(dir / "p0.jsonl").size() == 9);
  REQUIRE(app({"predict", "--ckpt", dir / "a.ckpt", "--in", seq, "--horizon", "5", "--out", dir / "p5.jsonl"}) ==
          0);
  CHECK(synth::read_trajectory(dir / "p5.jsonl").size() == 14);

  // Eight frames are not enough for a nine-frame model.
  synth::Trajectory shortened = synth::read_trajectory(seq);
  shortened.frames.resize(8);
  synth::write_trajectory(shortened, dir / "short.jsonl");
  std::string err;
  CHECK(app({"predict", "--ckpt", dir / "a.ckpt", "--in", dir / "short.jsonl", "--out", dir / "x.jsonl"}, nullptr,
            &err) == kExitData);
  CHECK(err.find("INSUFFICIENT_FRAMES") != std::string::npos);
}

TEST_CASE("exit codes", "[cli]") {
  TempDir dir("codes");
  CHECK(app({}) == kExitUsage);
  CHECK(app({"train", "--bogus"}) == kExitUsage);
  CHECK(app({"eval", "--ckpt", dir / "none.ckpt", "--data", dir / "none", "--report", dir / "r.csv"}) ==
        kExitData);

  REQUIRE(app({"synth", "--out", dir / "d", "--sequences", "4", "--length", "40", "--seed", "1"}) == 0);
  std::ofstream(dir / "typo.cfg") << "hidden = 12\nhiden = 3\n";
  std::string err;
  CHECK(app({"train", "--data", dir / "d", "--config", dir / "typo.cfg", "--out", dir / "m.ckpt"}, nullptr,
            &err) == kExitUsage);
  CHECK(err.find("line 2") != std::string::npos);

  std::ofstream(dir / "tiny.cfg") << to_text(tiny());
  CHECK(app({"train", "--data", dir / "d", "--config", dir / "tiny.cfg", "--out", dir / "m.ckpt", "--set",
             "divergence_threshold = 1e-9"}) == kExitDiverged);
  CHECK_FALSE(fs::exists(dir / "m.ckpt"));

  // A 27-frame model cannot read 40-frame sequences with a 20-frame future.
  REQUIRE(app({"train", "--data", dir / "d", "--config", dir / "tiny.cfg", "--out", dir / "m.ckpt"}) == 0);
  REQUIRE(app({"synth", "--out", dir / "s", "--sequences", "2", "--length", "30", "--seed", "1"}) == 0);
  CHECK(app({"train", "--data", dir / "s", "--config", dir / "tiny.cfg", "--set", "past_frames = 27", "--out",
             dir / "n.ckpt"}) == kExitData);
  CHECK(app({"synth", "--out", dir / "t", "--length", "10"}) == kExitUsage);
}

TEST_CASE("ablation table", "[cli]") {
  Config base = tiny();
  base.epochs = 1;
  const Dataset data = tiny_data();
  const auto rows = run_ablation("refinement", data, base);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].arm == "none");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].improvement.has_value());
    CHECK(rows[i].unrefined_mpjpe.has_value());
  }
  std::ostringstream a, b;
  write_ablation(a, rows);
  write_ablation(b, run_ablation("refinement", data, base));
  CHECK(a.str() == b.str());
  CHECK_THROWS_AS(run_ablation("nope", data, base), Error);
}
