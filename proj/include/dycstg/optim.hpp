#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <vector>

#include "dycstg/tensor.hpp"

namespace dycstg {

// lr_t = lr0 * (1 + cos(pi * step / total)) / 2. No warmup; reaches 0 at the
// final step. Steps past the end clamp (with a warning) rather than going
// negative.
inline double cosine_anneal(std::int64_t step, std::int64_t total_steps, double lr0) {
  if (total_steps <= 0) throw ContractError("cosine_anneal: total_steps must be positive");
  if (step < 0) throw ContractError("cosine_anneal: negative step");
  if (lr0 < 0.0) throw ContractError("cosine_anneal: negative base learning rate");
  if (step > total_steps) {
    std::cerr << "warning: cosine_anneal step " << step << " past schedule end "
              << total_steps << ", clamping\n";
    step = total_steps;
  }
  const double x = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * (1.0 + std::cos(M_PI * x)) / 2.0;
}

// AdamW: Adam moments with bias correction plus weight decay applied directly
// to the parameter, decoupled from the adaptive gradient step.
struct AdamWState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m, v;  // one slot per parameter tensor

  void init(const std::vector<Tensor>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.size(), 0.0);
      v.emplace_back(p.size(), 0.0);
    }
    step = 0;
  }
};

inline void adamw_step(std::vector<Tensor>& params, AdamWState& state, double lr,
                       double weight_decay) {
  if (state.m.size() != params.size())
    throw ContractError("adamw_step: state not initialized for this parameter set");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& buf = *params[i].buffer();
    if (buf.grad.size() != buf.values.size())
      throw ContractError("adamw_step: parameter has no gradient");
    if (state.m[i].size() != buf.values.size())
      throw ContractError("adamw_step: param/state shape mismatch");
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < buf.values.size(); ++k) {
      const double g = buf.grad[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      buf.values[k] -= lr * weight_decay * buf.values[k];  // decay on the incoming value
      buf.values[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace dycstg
