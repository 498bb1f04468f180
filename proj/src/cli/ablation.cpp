#include "motionlab/cli/ablation.hpp"

#include "motionlab/cli/evaluate.hpp"
#include "motionlab/cli/trainer.hpp"
#include "motionlab/error.hpp"

#include <cmath>
#include <limits>
#include <ostream>

namespace motionlab::cli {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const EvalRow* test_all(const std::vector<EvalRow>& rows) {
  for (const auto& r : rows) {
    if (r.split == "test" && r.label == "all") return &r;
  }
  return nullptr;
}

AblationRow run_arm(const std::string& preset, const std::string& arm, const Dataset& data, const Config& cfg,
                    const ProgressFn& progress) {
  AblationRow row;
  row.preset = preset;
  row.arm = arm;
  row.past_frames = cfg.past_frames;
  row.seed = cfg.seed;
  const synth::WindowSet windows = dataset_windows(data, cfg.past_frames, cfg.future_frames, cfg.window_stride);
  if (windows.train.empty() || windows.test.empty()) {
    row.status = "too_short";
    row.exit_code = 4;
    row.note = "no windows of " + std::to_string(cfg.past_frames + cfg.future_frames) + " frames";
    return row;
  }
  models::PoseMoNet model(network_config(cfg), cfg.seed);
  const TrainOutcome outcome = train(model, data.trajectories, windows.train, cfg);
  row.steps = outcome.steps;
  if (outcome.diverged) {
    row.status = "diverged";
    row.exit_code = 3;
    row.final_total = outcome.last_step_total;
    row.note = outcome.divergence;
  } else {
    row.status = "ok";
    row.final_total = outcome.epochs.empty() ? outcome.last_step_total : outcome.epochs.back().total;
    if (const EvalRow* r = test_all(evaluate(model, data.trajectories, windows, cfg, false))) {
      row.mpjpe = r->model.mpjpe;
      row.p_mpjpe = r->model.p_mpjpe;
    }
    if (!cfg.no_gr) {
      if (const EvalRow* r = test_all(evaluate(model, data.trajectories, windows, cfg, false, false))) {
        row.unrefined_mpjpe = r->model.mpjpe;
      }
    }
  }
  if (progress) {
    progress(preset + " " + arm + " T=" + std::to_string(cfg.past_frames) + " seed=" + std::to_string(cfg.seed) +
             ": " + row.status + (row.mpjpe ? ", test mpjpe " + format_number(*row.mpjpe) + " mm" : ""));
  }
  return row;
}

std::vector<AblationRow> multitask(const Dataset& data, const Config& base, const ProgressFn& progress) {
  std::vector<AblationRow> rows;
  for (std::size_t t : {9, 27, 54}) {
    Config cfg = base;
    cfg.past_frames = t;
    cfg.no_gr = true;
    cfg.no_mgn = true;
    AblationRow alone = run_arm("multitask", "pln_alone", data, cfg, progress);
    cfg.no_mgn = false;
    AblationRow with = run_arm("multitask", "pln_with_mgn", data, cfg, progress);
    if (alone.mpjpe && with.mpjpe) with.improvement = *alone.mpjpe - *with.mpjpe;
    rows.push_back(std::move(alone));
    rows.push_back(std::move(with));
  }
  return rows;
}

std::vector<AblationRow> refinement(const Dataset& data, const Config& base, const ProgressFn& progress) {
  std::vector<AblationRow> rows;
  Config cfg = base;
  cfg.no_gr = true;
  rows.push_back(run_arm("refinement", "none", data, cfg, progress));
  const std::optional<double> reference = rows.front().mpjpe;
  cfg.no_gr = false;
  for (models::GrMode mode : {models::GrMode::Gru, models::GrMode::ConvEd, models::GrMode::BlendFixed,
                              models::GrMode::BlendAdaptive}) {
    cfg.gr_mode = mode;
    AblationRow row = run_arm("refinement", models::to_string(mode), data, cfg, progress);
    if (reference && row.mpjpe) row.improvement = *reference - *row.mpjpe;
    if (row.unrefined_mpjpe && row.mpjpe) {
      row.note = "gain over own estimate " + format_number(*row.unrefined_mpjpe - *row.mpjpe) + " mm";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// Sample variance of the final totals; a diverged run makes it infinite.
double final_variance(const std::vector<AblationRow>& runs) {
  double mean = 0.0;
  for (const auto& r : runs) {
    if (r.status != "ok" || !r.final_total || !std::isfinite(*r.final_total)) return kInf;
    mean += *r.final_total;
  }
  mean /= static_cast<double>(runs.size());
  double var = 0.0;
  for (const auto& r : runs) var += (*r.final_total - mean) * (*r.final_total - mean);
  return var / static_cast<double>(runs.size() - 1);
}

std::vector<AblationRow> lie(const Dataset& data, const Config& base, const ProgressFn& progress) {
  std::vector<AblationRow> full, ablated;
  for (std::uint64_t k = 0; k < 3; ++k) {
    Config cfg = base;
    cfg.seed = base.seed + k;
    cfg.no_lie = false;
    full.push_back(run_arm("lie", "full", data, cfg, progress));
    cfg.no_lie = true;
    ablated.push_back(run_arm("lie", "no_lie", data, cfg, progress));
  }
  std::vector<AblationRow> rows;
  for (std::size_t k = 0; k < 3; ++k) {
    rows.push_back(full[k]);
    rows.push_back(ablated[k]);
  }
  auto summary = [&](const std::string& arm, const std::vector<AblationRow>& runs) {
    AblationRow row;
    row.preset = "lie";
    row.arm = arm;
    row.past_frames = base.past_frames;
    row.seed = base.seed;
    row.status = "variance";
    row.final_total = final_variance(runs);
    std::size_t diverged = 0;
    for (const auto& r : runs) diverged += r.status == "diverged";
    row.note = std::to_string(diverged) + " of 3 diverged";
    return row;
  };
  rows.push_back(summary("full", full));
  rows.push_back(summary("no_lie", ablated));

  const double v_full = *rows[rows.size() - 2].final_total;
  const double v_lie = *rows.back().final_total;
  bool lie_diverged = false, full_diverged = false;
  for (const auto& r : ablated) lie_diverged = lie_diverged || r.status == "diverged";
  for (const auto& r : full) full_diverged = full_diverged || r.status == "diverged";
  const double ratio = v_full > 0.0 ? v_lie / v_full : (v_lie > 0.0 ? kInf : 1.0);

  AblationRow verdict;
  verdict.preset = "lie";
  verdict.arm = "no_lie_vs_full";
  verdict.past_frames = base.past_frames;
  verdict.seed = base.seed;
  verdict.status = (lie_diverged || ratio >= 5.0) ? "unstable" : "stable";
  verdict.exit_code = lie_diverged ? 3 : 0;
  verdict.final_total = ratio;
  verdict.note = std::string("variance ratio") + (lie_diverged ? "; no_lie diverged" : "") +
                 (full_diverged ? "; full model diverged" : "");
  rows.push_back(std::move(verdict));
  return rows;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<AblationRow> run_ablation(const std::string& preset, const Dataset& data, const Config& base,
                                      const ProgressFn& progress) {
  if (preset == "multitask") return multitask(data, base, progress);
  if (preset == "refinement") return refinement(data, base, progress);
  if (preset == "lie") return lie(data, base, progress);
  throw Error(ErrorCode::ConfigError, "unknown ablation preset '" + preset + "' (multitask, refinement, lie)");
}

std::string ablation_header() {
  return "preset,arm,past_frames,seed,status,exit_code,steps,final_total,mpjpe_mm,p_mpjpe_mm,"
         "unrefined_mpjpe_mm,improvement_mm,note";
}

void write_ablation(std::ostream& out, const std::vector<AblationRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  out << ablation_header() << '\n';
  for (const auto& r : rows) {
    out << r.preset << ',' << r.arm << ',' << r.past_frames << ',' << r.seed << ',' << r.status << ','
        << r.exit_code << ',' << r.steps << ',' << opt(r.final_total) << ',' << opt(r.mpjpe) << ','
        << opt(r.p_mpjpe) << ',' << opt(r.unrefined_mpjpe) << ',' << opt(r.improvement) << ','
        << csv_field(r.note) << '\n';
  }
}

}  // namespace motionlab::cli
