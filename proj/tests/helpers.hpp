#pragma once

#include <cmath>
#include <vector>

#include "sttr/random.hpp"
#include "sttr/tensor.hpp"

namespace testing_util {

using sttr::Rng;
using sttr::Shape;
using D = sttr::Tensor<double>;

inline D randn(Rng& r, Shape shape, double scale = 1.0) {
  std::vector<double> v(sttr::numel_of(shape));
  for (auto& x : v) x = scale * r.normal();
  return D(std::move(shape), std::move(v));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

inline double max_abs_diff(const D& a, const D& b) {
  return a.shape() == b.shape() ? max_abs_diff(a.data(), b.data()) : INFINITY;
}

}  // namespace testing_util
