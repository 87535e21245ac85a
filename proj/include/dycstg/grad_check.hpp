#pragma once

#include <functional>

#include "dycstg/ops.hpp"
#include "dycstg/tensor.hpp"

namespace dycstg {

// f builds a scalar loss from x; it must be deterministic (same values twice).
// Returns max over coordinates of |analytic - numeric| / max(1,|analytic|,|numeric|),
// numeric = central differences with step eps.
inline double grad_check(const std::function<Tensor(const Tensor&, Tape*)>& f, Tensor x,
                         double eps) {
  if (eps <= 0.0) throw ContractError("grad_check: eps must be positive");

  {
    const double a = f(x, nullptr).item();
    const double b = f(x, nullptr).item();
    if (a != b) throw ContractError("grad_check: f is not deterministic");
  }

  x.set_requires_grad(true);
  x.zero_grad();
  Tape tape;
  Tensor loss = f(x, &tape);
  tape.backward(loss);
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + eps;
    const double fp = f(x, nullptr).item();
    x.data()[i] = saved - eps;
    const double fm = f(x, nullptr).item();
    x.data()[i] = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace dycstg
