#pragma once

#include <random>

#include "csasn/autograd.hpp"

namespace csasn::testing {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng,
                                    double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline Var<double> random_param(Shape shape, std::mt19937_64& rng,
                                double lo = -1.0, double hi = 1.0) {
  return Var<double>::parameter(random_tensor(std::move(shape), rng, lo, hi));
}

// Weighted sum with fixed random weights: turns any tensor-valued op into a
// scalar whose gradient exercises every output entry differently.
inline Var<double> random_projection(const Var<double>& y,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  auto w = Var<double>::constant(random_tensor(y.shape(), rng));
  return sum(mul(y, w));
}

}  // namespace csasn::testing
