#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sttr/errors.hpp"
#include "sttr/tensor.hpp"

namespace sttr {

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Returns max over coordinates of
/// |analytic - numeric| / max(1, |analytic|).
///
/// `loss` is re-evaluated 2 * (total coordinates) times; it must be a pure
/// function of the current values of `inputs` (reseed any RNG inside it).
inline double finite_diff_check(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs,
                                double h = 1e-6) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw ShapeError("finite_diff_check: step must lie in [1e-7, 1e-3]");
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  auto value = loss();
  if (value.numel() != 1) throw ShapeError("finite_diff_check: function must be scalar-valued");
  backward(value);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss().item();
      data[i] = saved - h;
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return worst;
}

/// Single-input convenience form: checks d f(x) / dx.
inline double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                                double h = 1e-6) {
  return finite_diff_check([&] { return f(x); }, std::vector<Tensor<double>>{x}, h);
}

}  // namespace sttr
