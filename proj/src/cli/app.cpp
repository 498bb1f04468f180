#include "motionlab/cli/app.hpp"

#include "motionlab/cli/ablation.hpp"
#include "motionlab/cli/checkpoint.hpp"
#include "motionlab/cli/config.hpp"
#include "motionlab/cli/dataset.hpp"
#include "motionlab/cli/evaluate.hpp"
#include "motionlab/cli/trainer.hpp"
#include "motionlab/synth/trajectory_io.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace motionlab::cli {
namespace {

namespace fs = std::filesystem;

std::ofstream open_output(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  return f;
}

std::string best_path(const std::string& path) {
  const fs::path p(path);
  fs::path best = p.parent_path() / p.stem();
  best += ".best";
  best += p.extension();
  return best.string();
}

// Settings shared by train and ablate: a preset, then a config file, then
// individual overrides.
struct ConfigFlags {
  std::string preset_name;
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool no_lie = false;
  bool no_mgn = false;
  bool no_gr = false;
  std::string gr_mode;

  void attach(CLI::App* cmd, const std::string& flag, const std::string& default_preset) {
    preset_name = default_preset;
    cmd->add_option(flag, preset_name, "starting settings: default, toy, bench, overfit")
        ->capture_default_str();
    cmd->add_option("--config", config_path, "key = value settings file");
    cmd->add_option("--set", sets, "extra key=value settings, applied last");
    cmd->add_option("--seed", seed, "overrides the config seed");
    cmd->add_flag("--no-lie", no_lie, "drop twist supervision");
    cmd->add_flag("--no-mgn", no_mgn, "train the lifting network alone");
    cmd->add_flag("--no-gr", no_gr, "disable global refinement");
    cmd->add_option("--gr-mode", gr_mode, "gru, conved, blend_fixed or blend_adaptive");
  }

  Config resolve() const {
    Config c = preset(preset_name);
    if (!config_path.empty()) c = load_config(config_path, c);
    std::string text;
    for (const auto& s : sets) text += s + "\n";
    if (seed) text += "seed = " + std::to_string(*seed) + "\n";
    if (no_lie) text += "no_lie = true\n";
    if (no_mgn) text += "no_mgn = true\n";
    if (no_gr) text += "no_gr = true\n";
    if (!gr_mode.empty()) text += "gr_mode = " + gr_mode + "\n";
    return text.empty() ? c : parse_config(text, c);
  }
};

int cmd_synth(const SynthRequest& request, const std::string& dir, std::ostream& out) {
  const Dataset data = synthesize(request);
  write_dataset(data, request, dir);
  out << "wrote " << data.trajectories.size() << " sequences of " << request.length << " frames to " << dir
      << "\n";
  return kExitOk;
}

int cmd_train(const Config& config, const std::string& data_dir, const std::string& ckpt_path,
              const std::string& log_path, std::ostream& out, std::ostream& err) {
  const Dataset data = read_dataset(data_dir);
  const synth::WindowSet windows =
      dataset_windows(data, config.past_frames, config.future_frames, config.window_stride);
  for (const auto& w : windows.warnings) err << w << "\n";
  if (windows.train.empty()) {
    throw Error(ErrorCode::ConfigMismatch, "dataset has no training windows of " +
                                               std::to_string(config.past_frames + config.future_frames) +
                                               " frames");
  }

  std::optional<std::ofstream> log;
  if (!log_path.empty()) {
    log.emplace(open_output(log_path));
    *log << train_log_header() << "\n" << std::flush;
  }
  models::PoseMoNet model(network_config(config), config.seed);
  const std::string best = best_path(ckpt_path);
  double best_total = std::numeric_limits<double>::infinity();
  const TrainOutcome outcome = train(model, data.trajectories, windows.train, config, [&](const EpochLog& e) {
    if (log) *log << train_log_row(e) << "\n" << std::flush;
    err << "epoch " << e.epoch << " total " << format_number(e.total) << "\n";
    if (e.total < best_total) {
      best_total = e.total;
      save_checkpoint(config, e.step, model.params(), best);
    }
  });
  if (outcome.diverged) {
    err << "training diverged at " << outcome.divergence << "\n";
    return kExitDiverged;
  }
  save_checkpoint(config, outcome.steps, model.params(), ckpt_path);
  out << "trained " << outcome.steps << " steps over " << windows.train.size() << " windows, final total "
      << format_number(outcome.epochs.empty() ? outcome.last_step_total : outcome.epochs.back().total)
      << "\n";
  return kExitOk;
}

models::PoseMoNet load_model(const std::string& path, Config& config) {
  const Checkpoint ckpt = load_checkpoint(path);
  config = ckpt.config;
  models::PoseMoNet model(network_config(config), config.seed);
  restore(ckpt, model.params());
  return model;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& report_path,
             std::string run_id, const std::string& split, std::ostream& out) {
  Config config;
  const models::PoseMoNet model = load_model(ckpt_path, config);
  const Dataset data = read_dataset(data_dir);
  synth::WindowSet windows =
      dataset_windows(data, config.past_frames, config.future_frames, config.window_stride);
  if (split == "test") windows.train.clear();
  if (split == "train") windows.test.clear();
  if (windows.train.empty() && windows.test.empty()) {
    throw Error(ErrorCode::ConfigMismatch, "no " + (split == "all" ? std::string() : split + " ") +
                                               "windows of " +
                                               std::to_string(config.past_frames + config.future_frames) +
                                               " frames in the dataset");
  }
  const auto rows = evaluate(model, data.trajectories, windows, config, !windows.train.empty());
  if (run_id.empty()) run_id = fs::path(ckpt_path).stem().string();
  std::ofstream report = open_output(report_path);
  write_report(report, run_id, rows);
  for (const auto& r : rows) {
    if (r.label != "all") continue;
    out << r.split << ": " << r.windows << " windows, mpjpe " << format_number(r.model.mpjpe) << " mm, p-mpjpe "
        << format_number(r.model.p_mpjpe) << " mm\n";
  }
  return kExitOk;
}

int cmd_predict(const std::string& ckpt_path, const std::string& in_path, std::optional<std::size_t> horizon,
                const std::string& out_path, std::ostream& out) {
  Config config;
  const models::PoseMoNet model = load_model(ckpt_path, config);
  const std::size_t k = horizon.value_or(config.no_mgn ? 0 : config.future_frames);
  if (k > 0 && config.no_mgn) {
    throw Error(ErrorCode::ConfigMismatch, "checkpoint has no motion generator; use --horizon 0");
  }
  const synth::Trajectory input = synth::read_trajectory(in_path);
  const std::size_t t = config.past_frames;
  if (input.size() < t) {
    throw Error(ErrorCode::InsufficientFrames, "model needs " + std::to_string(t) + " frames, input has " +
                                                   std::to_string(input.size()));
  }
  synth::Window w;
  w.start = input.size() - t;
  w.past = t;
  w.future = k;
  const std::vector<synth::Trajectory> trajs{input};
  const auto pred = predict_windows(model, trajs, std::span(&w, 1), k, k > 0);

  synth::Trajectory result;
  result.frame_rate = input.frame_rate;
  result.label = input.label;
  for (std::size_t i = 0; i < t + k; ++i) {
    synth::Frame f;
    f.coord = pred[0].coord[i];
    f.lie = pred[0].lie[i];
    result.frames.push_back(std::move(f));
  }
  synth::write_trajectory(result, out_path);
  out << "wrote " << t << " estimated and " << k << " predicted frames to " << out_path << "\n";
  return kExitOk;
}

int cmd_ablate(const std::string& name, const Config& base, const std::string& data_dir,
               const std::string& out_path, std::ostream& out, std::ostream& err) {
  const Dataset data = data_dir.empty() ? synthesize(benchmark_request()) : read_dataset(data_dir);
  std::ofstream csv = open_output(out_path);
  const auto rows = run_ablation(name, data, base, [&](const std::string& line) { err << line << "\n"; });
  write_ablation(csv, rows);
  out << "wrote " << rows.size() << " rows to " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::TooShort:
      return kExitUsage;
    case ErrorCode::Io:
    case ErrorCode::ParseError:
    case ErrorCode::SchemaVersionMismatch:
    case ErrorCode::ConfigMismatch:
    case ErrorCode::InsufficientFrames:
      return kExitData;
    default:
      return kExitFailure;
  }
}

int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pose lifting and motion prediction on synthetic keypoints", "motionlab"};
  app.require_subcommand(1);

  SynthRequest request;
  std::string synth_out, synth_kinds;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--sequences", request.sequences)->capture_default_str();
  synth_cmd->add_option("--kinds", synth_kinds, "comma list of walk, wave, squat, static, mixed (default all)");
  synth_cmd->add_option("--seed", request.seed)->capture_default_str();
  synth_cmd->add_option("--length", request.length, "frames per sequence")->capture_default_str();
  synth_cmd->add_option("--noise-px", request.noise_px)->capture_default_str();
  synth_cmd->add_option("--train-ratio", request.train_ratio)->capture_default_str();

  ConfigFlags train_flags;
  std::string train_data, train_out, train_log;
  auto* train_cmd = app.add_subcommand("train", "train a model and save checkpoints");
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "checkpoint path; the best epoch goes to <stem>.best<ext>")
      ->required();
  train_cmd->add_option("--log", train_log, "per-epoch CSV");
  train_flags.attach(train_cmd, "--preset", "default");

  std::string eval_ckpt, eval_data, eval_report, eval_run, eval_split = "all";
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--report", eval_report, "CSV output")->required();
  eval_cmd->add_option("--run-id", eval_run, "first report column (default: checkpoint stem)");
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"all", "train", "test"}))->capture_default_str();

  std::string pred_ckpt, pred_in, pred_out;
  std::optional<std::size_t> pred_horizon;
  auto* pred_cmd = app.add_subcommand("predict", "lift the last frames of a trajectory and continue it");
  pred_cmd->add_option("--ckpt", pred_ckpt)->required();
  pred_cmd->add_option("--in", pred_in, "trajectory with 2D keypoints")->required();
  pred_cmd->add_option("--horizon", pred_horizon, "future frames (default: the model's)");
  pred_cmd->add_option("--out", pred_out)->required();

  ConfigFlags ablate_flags;
  std::string ablate_name, ablate_data, ablate_out;
  auto* ablate_cmd = app.add_subcommand("ablate", "run matched training arms and tabulate them");
  ablate_cmd->add_option("--preset", ablate_name, "multitask, refinement or lie")
      ->required()
      ->check(CLI::IsMember({"multitask", "refinement", "lie"}));
  ablate_cmd->add_option("--out", ablate_out, "CSV output")->required();
  ablate_cmd->add_option("--data", ablate_data, "dataset directory (default: the built-in benchmark)");
  ablate_flags.attach(ablate_cmd, "--base", "bench");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) {
      if (!synth_kinds.empty()) {
        request.kinds.clear();
        std::stringstream ss(synth_kinds);
        for (std::string k; std::getline(ss, k, ',');) request.kinds.push_back(synth::motion_kind_from_string(k));
      }
      return cmd_synth(request, synth_out, out);
    }
    if (*train_cmd) return cmd_train(train_flags.resolve(), train_data, train_out, train_log, out, err);
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data, eval_report, eval_run, eval_split, out);
    if (*pred_cmd) return cmd_predict(pred_ckpt, pred_in, pred_horizon, pred_out, out);
    if (*ablate_cmd) return cmd_ablate(ablate_name, ablate_flags.resolve(), ablate_data, ablate_out, out, err);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace motionlab::cli
