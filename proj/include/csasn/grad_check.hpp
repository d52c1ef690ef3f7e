#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "csasn/autograd.hpp"

namespace csasn {

struct GradCheckOptions {
  double step = 1e-4;
  // Entries probed per parameter tensor; 0 probes every entry.
  std::size_t max_probes_per_param = 0;
  // Lower bound on the relative-error denominator, so entries whose true
  // gradient is ~0 are judged by absolute error against this scale.
  double denom_floor = 1e-6;
  std::uint64_t seed = 0;
  // 2: central difference, error O(h^2). 4: five-point stencil, O(h^4).
  int order = 2;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t probes = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

// Compares backward() gradients of a scalar function against central
// differences: rel = |analytic - numeric| / max(|analytic|, |numeric|, floor).
template <class T>
GradCheckResult grad_check(const std::function<Var<T>()>& f,
                           std::vector<Var<T>> params,
                           const GradCheckOptions& opts = {}) {
  for (auto& p : params) p.zero_grad();
  {
    Var<T> y = f();
    backward(y);
  }
  std::vector<Tensor<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  std::mt19937_64 rng(opts.seed);
  GradCheckResult res;
  NoGradGuard no_grad;
  const T h = static_cast<T>(opts.step);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::size_t n = p.value().size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (opts.max_probes_per_param && n > opts.max_probes_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_probes_per_param);
    }
    for (std::size_t i : idx) {
      T& slot = p.mutable_value()[i];
      const T orig = slot;
      auto at = [&](T offset) {
        slot = orig + offset;
        return static_cast<double>(f().item());
      };
      double numeric;
      if (opts.order == 4) {
        const double f2p = at(2 * h), fp = at(h), fm = at(-h), f2m = at(-2 * h);
        numeric = (-f2p + 8 * fp - 8 * fm + f2m) / (12.0 * opts.step);
      } else {
        const double fp = at(h), fm = at(-h);
        numeric = (fp - fm) / (2.0 * opts.step);
      }
      slot = orig;
      const double a = static_cast<double>(analytic[pi][i]);
      const double abs_err = std::abs(a - numeric);
      const double denom =
          std::max({std::abs(a), std::abs(numeric), opts.denom_floor});
      const double rel = abs_err / denom;
      ++res.probes;
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = pi;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace csasn
