#include "motionlab/cli/trainer.hpp"

#include "motionlab/cli/dataset.hpp"
#include "motionlab/error.hpp"
#include "motionlab/grad/optim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>

namespace motionlab::cli {

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

TrainOutcome train(models::PoseMoNet& model, std::span<const synth::Trajectory> trajs,
                   std::span<const synth::Window> windows, const Config& config,
                   const EpochCallback& on_epoch) {
  if (windows.empty()) throw Error(ErrorCode::ConfigError, "no training windows");
  const Skeleton& sk = default_h36m16();
  const models::LossWeights weights = loss_weights(config);
  const grad::LrSchedule schedule{config.lr, config.decay_every, config.decay_factor};
  auto optimizer = grad::make_optimizer(config.optimizer, config.momentum);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);

  TrainOutcome outcome;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    log.epoch = epoch;
    double sum_mgn = 0.0, sum_gr = 0.0;
    bool has_mgn = false, has_gr = false;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch) {
      if (config.max_steps > 0 && outcome.steps >= config.max_steps) break;
      std::vector<synth::Window> group;
      for (std::size_t i = begin; i < std::min(order.size(), begin + config.batch); ++i) {
        group.push_back(windows[order[i]]);
      }
      const Batch batch = make_batch(trajs, group);
      const double lr = schedule.at(outcome.steps);

      grad::Graph g({true, config.seed * 0x100000001b3ULL + outcome.steps});
      const auto out = model.forward(g, batch.kp2d, config.future_frames);
      const auto terms = models::compute_losses(g, out, batch.targets, sk, weights);
      const double total = g.value(terms.total).item();
      outcome.last_step_total = total;
      if (!std::isfinite(total) || total > config.divergence_threshold) {
        outcome.diverged = true;
        outcome.divergence = "step " + std::to_string(outcome.steps) + " total loss " + format_number(total);
        break;
      }
      model.params().zero_grad();
      g.backward(terms.total);
      grad::clip_grad_norm(model.params(), config.clip_norm);
      optimizer->step(model.params(), lr);
      ++outcome.steps;
      ++batches;

      log.total += total;
      log.l_pln += g.value(terms.l_pln).item();
      log.omega += g.value(terms.omega).item();
      if (terms.l_mgn.valid()) {
        has_mgn = true;
        sum_mgn += g.value(terms.l_mgn).item();
      }
      if (terms.l_gr.valid()) {
        has_gr = true;
        sum_gr += g.value(terms.l_gr).item();
      }
      log.lr = lr;
    }
    if (batches > 0) {
      const double n = static_cast<double>(batches);
      log.total /= n;
      log.l_pln /= n;
      log.omega /= n;
      if (has_mgn) log.l_mgn = sum_mgn / n;
      if (has_gr) log.l_gr = sum_gr / n;
      log.step = outcome.steps;
      outcome.epochs.push_back(log);
      if (on_epoch) on_epoch(log);
    }
    if (outcome.diverged || (config.max_steps > 0 && outcome.steps >= config.max_steps)) break;
  }
  return outcome;
}

std::string train_log_header() { return "epoch,total,l_pln,l_mgn,l_gr,omega_sp,lr"; }

std::string train_log_row(const EpochLog& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  return std::to_string(r.epoch) + "," + format_number(r.total) + "," + format_number(r.l_pln) + "," +
         opt(r.l_mgn) + "," + opt(r.l_gr) + "," + format_number(r.omega) + "," + format_number(r.lr);
}

}  // namespace motionlab::cli
