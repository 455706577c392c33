#pragma once

#include "autoadapt/tensor.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace autoadapt {

/// A trainable tensor addressed by its stable layer path (e.g. "stage2.block1.conv.weight").
struct ParamRef {
  std::string path;
  Tensor *tensor = nullptr;
};

/// SGD with classic momentum and L2 weight decay:
///   v <- momentum * v + grad + weight_decay * w
///   w <- w - lr * v
class Sgd {
public:
  Sgd(double momentum = 0.9, double weight_decay = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay) {
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("momentum must be in [0,1), got " + std::to_string(momentum));
    if (weight_decay < 0.0)
      throw std::invalid_argument("weight_decay must be >= 0");
  }

  void step(const std::vector<ParamRef> &params, double lr) {
    if (!(lr > 0.0))
      throw std::invalid_argument("learning rate must be > 0, got " + std::to_string(lr));
    for (const ParamRef &p : params) {
      Tensor &t = *p.tensor;
      if (!t.has_grad())
        continue;
      auto g = t.grad();
      for (double v : g)
        if (!std::isfinite(v))
          throw NumericError("non-finite gradient in layer '" + p.path + "'");
    }
    for (const ParamRef &p : params) {
      Tensor &t = *p.tensor;
      if (!t.has_grad())
        continue;
      auto &vel = velocity_[p.path];
      if (vel.size() != t.numel())
        vel.assign(t.numel(), 0.0);
      auto g = t.grad();
      auto w = t.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        vel[i] = momentum_ * vel[i] + g[i] + weight_decay_ * w[i];
        w[i] -= lr * vel[i];
      }
    }
  }

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, std::vector<double>> velocity_;
};

inline void zero_grads(const std::vector<ParamRef> &params) {
  for (const ParamRef &p : params)
    p.tensor->zero_grad();
}

inline void accumulate(Tensor &param, const Tensor &grad) {
  require_same_shape(param, grad, "accumulate");
  auto g = param.grad();
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] += grad[i];
}

/// Poly learning-rate schedule: base * (1 - step/total)^power.
inline double poly_lr(double base, std::size_t step, std::size_t total, double power = 0.9) {
  if (total == 0)
    return base;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total);
  return base * std::pow(std::max(frac, 0.0), power);
}

} // namespace autoadapt
