#include "motionlab/grad/optim.hpp"

#include "motionlab/error.hpp"

#include <cmath>

namespace motionlab::grad {

double LrSchedule::at(std::size_t step) const {
  if (every == 0) return initial;
  return initial * std::pow(factor, static_cast<double>(step / every));
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
  double ss = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double g : params[i].grad.values()) ss += g * g;
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (double& g : params[i].grad.values()) g *= f;
    }
  }
  return norm;
}

void sgd_step(ParameterStore& params, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] -= lr * p.grad[k];
  }
}

void Sgd::step(ParameterStore& params, double lr) {
  if (momentum_ == 0.0) {
    sgd_step(params, lr);
    return;
  }
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) velocity_.emplace_back(params[i].value.shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& v = velocity_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      v[k] = momentum_ * v[k] + p.grad[k];
      p.value[k] -= lr * v[k];
    }
  }
}

void Adam::step(ParameterStore& params, double lr) {
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params[i].value.shape());
      v_.emplace_back(params[i].value.shape());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      p.value[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& name, double momentum) {
  if (name == "sgd") return std::make_unique<Sgd>(momentum);
  if (name == "adam") return std::make_unique<Adam>();
  throw Error(ErrorCode::ConfigError, "unknown optimizer '" + name + "'");
}

}  // namespace motionlab::grad
