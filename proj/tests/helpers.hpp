#pragma once

#include <cmath>
#include <random>

#include "d3kit/tensor.hpp"

namespace d3kit::test {

inline Tensor randn(Shape s, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return random_normal(s, rng, stddev);
}

// Relative to the larger magnitude of the two tensors.
inline double rel_err(const Tensor& a, const Tensor& b) {
  const double scale = std::max({max_abs(a), max_abs(b), 1e-300});
  return max_abs_diff(a, b) / scale;
}

inline Tensor column(std::initializer_list<double> v) {
  return Tensor(Shape{1, 1, v.size(), 1}, std::vector<double>(v));
}

}  // namespace d3kit::test
