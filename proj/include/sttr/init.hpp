#pragma once

#include <cmath>

#include "sttr/random.hpp"
#include "sttr/tensor.hpp"

namespace sttr {

/// Trainable tensor drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  auto t = Tensor<T>::zeros(std::move(shape), true);
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
Tensor<T> zeros_param(Shape shape) {
  return Tensor<T>::zeros(std::move(shape), true);
}

template <class T>
Tensor<T> ones_param(Shape shape) {
  return Tensor<T>::full(std::move(shape), T(1), true);
}

}  // namespace sttr
