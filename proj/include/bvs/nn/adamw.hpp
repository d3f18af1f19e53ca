#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "bvs/errors.hpp"
#include "bvs/nn/tensor.hpp"

namespace bvs::nn {

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t warmup_steps = 500;

  bool operator==(const AdamWConfig&) const = default;
};

/// Linear warm-up: lr * min(1, step / warmup). `step` counts completed updates.
inline double warmup_lr(const AdamWConfig& c, std::uint64_t step) {
  if (c.warmup_steps == 0) return c.lr;
  return c.lr * std::min(1.0, static_cast<double>(step) / static_cast<double>(c.warmup_steps));
}

template <typename S>
struct OptimizerState {
  AdamWConfig config;
  std::uint64_t step = 0;
  ParamSet<S> m, v;

  OptimizerState() = default;
  OptimizerState(const AdamWConfig& cfg, const ParamSet<S>& params)
      : config(cfg), m(params.zeros_like()), v(params.zeros_like()) {}

  bool operator==(const OptimizerState& o) const {
    return config == o.config && step == o.step && m == o.m && v == o.v;
  }
};

/// One AdamW update with decoupled weight decay. Moments are kept in the
/// parameter precision; the bias correction uses the 1-based update count.
template <typename S>
void optimizer_step(OptimizerState<S>& state, ParamSet<S>& params, const ParamSet<S>& grads) {
  if (!state.m.same_layout(params) || !grads.same_layout(params))
    throw ShapeError("optimizer_step: parameter, gradient and moment layouts differ");
  const auto& c = state.config;
  const double lr = warmup_lr(c, state.step);
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const S b1 = static_cast<S>(c.beta1), b2 = static_cast<S>(c.beta2);
  const S step_size = static_cast<S>(lr / bc1);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
  const S eps = static_cast<S>(c.eps);
  const S decay = static_cast<S>(1.0 - lr * c.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
    if (c.weight_decay != 0.0) p *= decay;
    p.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
  }
  ++state.step;
}

}  // namespace bvs::nn
