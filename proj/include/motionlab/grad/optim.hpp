#pragma once

#include "motionlab/grad/tensor.hpp"

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace motionlab::grad {

/// Step decay: initial * factor^floor(step / every).
struct LrSchedule {
  double initial = 1e-3;
  std::size_t every = 10000;
  double factor = 0.9;

  double at(std::size_t step) const;
};

/// Scales all gradients so their global L2 norm is at most max_norm (no-op for
/// max_norm <= 0). Returns the norm before clipping.
double clip_grad_norm(ParameterStore& params, double max_norm);

/// p <- p - lr * (grad + momentum buffer).
void sgd_step(ParameterStore& params, double lr);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ParameterStore& params, double lr) = 0;
  virtual std::string name() const = 0;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}
  void step(ParameterStore& params, double lr) override;
  std::string name() const override { return "sgd"; }

 private:
  double momentum_;
  std::vector<Tensor> velocity_;
};

class Adam final : public Optimizer {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParameterStore& params, double lr) override;
  std::string name() const override { return "adam"; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& name, double momentum);

}  // namespace motionlab::grad
