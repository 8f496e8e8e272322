#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "edgellm/tensor.hpp"

namespace edgellm {

struct AdamHyperparams {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.1f;
};

// Decoupled-weight-decay adaptive optimizer state. Moment buffers shape-match
// their parameters; the step counter advances by exactly one per update.
struct OptimizerState {
  AdamHyperparams hp;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  int64_t step = 0;

  explicit OptimizerState(const std::vector<TensorPtr>& params, AdamHyperparams h = {})
      : hp(h) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
      m.emplace_back(p->data.size(), 0.0f);
      v.emplace_back(p->data.size(), 0.0f);
    }
  }
};

// One decoupled-weight-decay update with bias correction. Parameters without a
// grad buffer are treated as zero-gradient (weight decay still applies).
inline void adamw_step(const std::vector<TensorPtr>& params, OptimizerState& state, float lr) {
  if (lr < 0.0f) throw ContractError("adamw_step: lr must be >= 0");
  if (params.size() != state.m.size()) {
    throw ShapeError("adamw_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " params, got " + std::to_string(params.size()));
  }
  state.step += 1;
  const auto& hp = state.hp;
  const double bc1 = 1.0 - std::pow(static_cast<double>(hp.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(hp.beta2), static_cast<double>(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    if (!p.grad.empty() && p.grad.size() != p.data.size()) {
      throw ShapeError("adamw_step: grad/param shape mismatch for " + p.name);
    }
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    if (m.size() != p.data.size()) {
      throw ShapeError("adamw_step: moment buffer shape mismatch for " + p.name);
    }
    for (size_t i = 0; i < p.data.size(); ++i) {
      const float g = p.grad.empty() ? 0.0f : p.grad[i];
      m[i] = hp.beta1 * m[i] + (1.0f - hp.beta1) * g;
      v[i] = hp.beta2 * v[i] + (1.0f - hp.beta2) * g * g;
      const float mhat = static_cast<float>(m[i] / bc1);
      const float vhat = static_cast<float>(v[i] / bc2);
      p.data[i] -= lr * (mhat / (std::sqrt(vhat) + hp.eps) + hp.weight_decay * p.data[i]);
    }
  }
}

// Compares an analytic gradient against central differences of f, where f is a
// double-precision scalar function of the flattened input. Returns the max
// relative error over all coordinates. abs_floor guards the denominator so
// coordinates far below the gradient's own scale do not dominate the metric.
inline double grad_check(const std::function<double(const std::vector<double>&)>& f,
                         const std::vector<double>& x, const std::vector<float>& analytic_grad,
                         double h, double abs_floor = 1e-8) {
  if (h <= 0.0) throw ContractError("grad_check: h must be > 0");
  if (x.size() != analytic_grad.size()) throw ShapeError("grad_check: size mismatch");
  double worst = 0.0;
  std::vector<double> probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = static_cast<double>(analytic_grad[i]);
    const double denom = std::max({std::abs(numeric), std::abs(a), abs_floor});
    worst = std::max(worst, std::abs(numeric - a) / denom);
  }
  return worst;
}

}  // namespace edgellm
