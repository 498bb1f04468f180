#include "motionlab/cli/evaluate.hpp"

#include "motionlab/cli/dataset.hpp"
#include "motionlab/cli/trainer.hpp"
#include "motionlab/error.hpp"
#include "motionlab/liepose.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

namespace motionlab::cli {
namespace {

// Fixed chunking keeps every forward pass, and so every number, independent
// of how many workers share the work.
constexpr std::size_t kChunk = 16;

struct WindowScore {
  double mpjpe = 0.0;
  double p_mpjpe = 0.0;
  std::vector<double> mae;
  std::vector<double> zero_velocity;
};

std::vector<int> usable_horizons(std::size_t future) {
  std::vector<int> out;
  for (int h : default_horizons_ms()) {
    if (h % 40 == 0 && static_cast<std::size_t>(h / 40) <= future) out.push_back(h);
  }
  return out;
}

std::vector<CoordPose> rows_to_coords(const grad::Tensor& t, std::size_t first, std::size_t stride,
                                      std::size_t count) {
  std::vector<CoordPose> out;
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(coord_from_flat(t.values().subspan((first + k * stride) * kCoordValues, kCoordValues)));
  }
  return out;
}

std::vector<LiePose> rows_to_lies(const grad::Tensor& t, std::size_t first, std::size_t stride,
                                  std::size_t count) {
  std::vector<LiePose> out;
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(lie_from_flat(t.values().subspan((first + k * stride) * kLieValues, kLieValues)));
  }
  return out;
}

// Runs `work(chunk_index)` for every chunk on up to eval_threads() workers.
template <typename Work>
void for_each_chunk(std::size_t chunks, Work&& work) {
  const std::size_t workers = std::min(eval_threads(), chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) work(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t c = next++; c < chunks; c = next++) {
        try {
          work(c);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::size_t eval_threads() {
  if (const char* env = std::getenv("MOTIONLAB_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<WindowPrediction> predict_windows(const models::PoseMoNet& model,
                                              std::span<const synth::Trajectory> trajs,
                                              std::span<const synth::Window> windows,
                                              std::size_t horizon, bool refine) {
  if (windows.empty()) return {};
  grad::Graph g;
  const auto out = model.forward(g, keypoint_tensor(trajs, windows), horizon);
  const std::size_t b = out.batch, past = out.past, future = out.future;
  grad::Tensor coord, lie;
  if (refine && out.gr.refined.valid()) {
    const auto [c, l] = models::deinterleave(g, out.gr.refined);
    coord = g.value(c);
    lie = g.value(l);
  } else if (future > 0) {
    coord = g.value(g.concat({out.pln.coord, out.mgn.coord}, 0));
    lie = g.value(g.concat({out.pln.lie, out.mgn.lie}, 0));
  } else {
    coord = g.value(out.pln.coord);
    lie = g.value(out.pln.lie);
  }
  std::vector<WindowPrediction> result(b);
  for (std::size_t i = 0; i < b; ++i) {
    result[i].coord = rows_to_coords(coord, i, b, past + future);
    result[i].lie = rows_to_lies(lie, i, b, past + future);
  }
  return result;
}

std::vector<EvalRow> evaluate(const models::PoseMoNet& model, std::span<const synth::Trajectory> trajs,
                              const synth::WindowSet& windows, const Config& config, bool include_train,
                              bool refine) {
  const std::vector<int> horizons = usable_horizons(config.future_frames);
  const std::size_t horizon = config.no_mgn ? 0 : config.future_frames;
  std::vector<EvalRow> rows;
  const std::vector<std::pair<std::string, const std::vector<synth::Window>*>> splits = [&] {
    std::vector<std::pair<std::string, const std::vector<synth::Window>*>> s;
    if (include_train) s.emplace_back("train", &windows.train);
    s.emplace_back("test", &windows.test);
    return s;
  }();

  for (const auto& [split, list] : splits) {
    if (list->empty()) continue;
    std::vector<WindowScore> scores(list->size());
    const std::size_t chunks = (list->size() + kChunk - 1) / kChunk;
    for_each_chunk(chunks, [&](std::size_t c) {
      const std::size_t begin = c * kChunk, end = std::min(list->size(), begin + kChunk);
      const std::span<const synth::Window> group(list->data() + begin, end - begin);
      const auto preds = predict_windows(model, trajs, group, horizon, refine);
      for (std::size_t i = 0; i < group.size(); ++i) {
        const synth::Window& w = group[i];
        const auto& frames = trajs[w.source].frames;
        std::vector<CoordPose> gt_past;
        for (std::size_t t = 0; t < w.past; ++t) gt_past.push_back(frames[w.start + t].coord);
        const std::span<const CoordPose> est(preds[i].coord.data(), w.past);
        WindowScore& s = scores[begin + i];
        s.mpjpe = mpjpe(est, gt_past);
        s.p_mpjpe = p_mpjpe(est, gt_past);

        std::vector<LiePose> gt_future;
        for (std::size_t t = 0; t < w.future; ++t) {
          const auto& f = frames[w.start + w.past + t];
          gt_future.push_back(f.lie ? *f.lie : coord_to_lie(f.coord, default_h36m16()));
        }
        const auto& last = frames[w.start + w.past - 1];
        const LiePose seed = last.lie ? *last.lie : coord_to_lie(last.coord, default_h36m16());
        s.zero_velocity = mae(zero_velocity(seed, w.future), gt_future, horizons, synth::kFrameRate,
                              config.mae_mode);
        if (horizon > 0) {
          const std::span<const LiePose> future(preds[i].lie.data() + w.past, w.future);
          s.mae = mae(future, gt_future, horizons, synth::kFrameRate, config.mae_mode);
        }
      }
    });

    // Sequential reduction in window order, per label then overall.
    std::vector<std::string> labels;
    for (const auto& w : *list) {
      const std::string& l = trajs[w.source].label;
      if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
    }
    std::sort(labels.begin(), labels.end());
    labels.push_back("all");
    for (const std::string& label : labels) {
      EvalRow row;
      row.split = split;
      row.label = label;
      row.model.mae_mode = config.mae_mode;
      std::vector<double> mae_sum(horizons.size(), 0.0), zv_sum(horizons.size(), 0.0);
      for (std::size_t k = 0; k < list->size(); ++k) {
        const synth::Window& w = (*list)[k];
        if (label != "all" && trajs[w.source].label != label) continue;
        const WindowScore& s = scores[k];
        ++row.windows;
        row.model.frames_evaluated += w.past;
        row.model.mpjpe += s.mpjpe;
        row.model.p_mpjpe += s.p_mpjpe;
        for (std::size_t h = 0; h < horizons.size(); ++h) {
          zv_sum[h] += s.zero_velocity[h];
          if (!s.mae.empty()) mae_sum[h] += s.mae[h];
        }
      }
      const double n = static_cast<double>(row.windows);
      row.model.mpjpe /= n;
      row.model.p_mpjpe /= n;
      for (std::size_t h = 0; h < horizons.size(); ++h) {
        row.zero_velocity[horizons[h]] = zv_sum[h] / n;
        if (horizon > 0) row.model.mae_per_horizon[horizons[h]] = mae_sum[h] / n;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_report(std::ostream& out, const std::string& run_id, const std::vector<EvalRow>& rows) {
  const auto& horizons = default_horizons_ms();
  out << "run_id,split,label,windows,mpjpe_mm,p_mpjpe_mm";
  for (int h : horizons) out << ",mae@" << h << "ms";
  for (int h : horizons) out << ",zv_mae@" << h << "ms";
  out << '\n';
  auto cell = [&](const std::map<int, double>& m, int h) {
    const auto it = m.find(h);
    return it == m.end() ? std::string() : format_number(it->second);
  };
  for (const EvalRow& r : rows) {
    out << run_id << ',' << r.split << ',' << r.label << ',' << r.windows << ','
        << format_number(r.model.mpjpe) << ',' << format_number(r.model.p_mpjpe);
    for (int h : horizons) out << ',' << cell(r.model.mae_per_horizon, h);
    for (int h : horizons) out << ',' << cell(r.zero_velocity, h);
    out << '\n';
  }
}

}  // namespace motionlab::cli
