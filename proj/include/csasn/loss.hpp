#pragma once

// Adaptive focal loss, cross-entropy, multi-kernel MMD and batch spectral
// shrinkage, combined per task by learned homoscedastic uncertainty weights.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "csasn/linalg.hpp"
#include "csasn/model.hpp"
#include "csasn/nn_ops.hpp"
#include "csasn/params.hpp"

namespace csasn {

inline constexpr double kProbClamp = 1e-7;
inline constexpr std::size_t kNumComponents = 4;  // focal, ce, mmd, bss

struct LossConfig {
  double gamma0 = 2.0;
  double gamma_min = 1.0;
  double gamma_max = 5.0;
  std::vector<double> bandwidth_factors{0.25, 0.5, 1.0, 2.0, 4.0};
  double bss_fraction = 0.10;
  double weight_decay = 1e-4;
  // Fixed convex combination of the four components instead of uncertainty
  // weighting, when set.
  std::optional<std::array<double, kNumComponents>> fixed_lambda;

  void validate() const {
    if (!(bss_fraction > 0.0 && bss_fraction <= 1.0))
      throw ConfigError("loss: bss_fraction must be in (0, 1]");
    if (!(gamma_min <= gamma_max)) throw ConfigError("loss: gamma_min > gamma_max");
    if (bandwidth_factors.empty()) throw ConfigError("loss: no MMD bandwidth factors");
    for (double f : bandwidth_factors)
      if (!(f > 0.0)) throw ConfigError("loss: MMD bandwidth factors must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("loss: weight_decay must be >= 0");
    if (fixed_lambda) {
      double s = 0.0;
      for (double l : *fixed_lambda) {
        if (l < 0.0) throw ConfigError("loss: fixed lambdas must be nonnegative");
        s += l;
      }
      if (std::abs(s - 1.0) > 1e-9) throw ConfigError("loss: fixed lambdas must sum to 1");
    }
  }
};

// gamma = clamp(gamma0 + log10(n_neg / n_pos), gamma_min, gamma_max)
inline double adaptive_gamma(std::size_t n_neg, std::size_t n_pos, const LossConfig& cfg = {}) {
  if (n_pos == 0) throw ConfigError("adaptive_gamma: task has no positive samples");
  if (n_neg == 0) return cfg.gamma_min;
  const double g = cfg.gamma0 + std::log10(static_cast<double>(n_neg) / n_pos);
  return std::clamp(g, cfg.gamma_min, cfg.gamma_max);
}

// Inverse-frequency weights alpha_y = N / (2 n_y): a balanced task gets 1, 1.
inline std::array<double, 2> class_weights(std::size_t n_neg, std::size_t n_pos) {
  if (n_neg == 0 || n_pos == 0) return {1.0, 1.0};
  const double n = static_cast<double>(n_neg + n_pos);
  return {n / (2.0 * n_neg), n / (2.0 * n_pos)};
}

namespace detail {

template <class T>
Var<T> true_class_prob(const Var<T>& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.dim(1) != 2)
    throw DimensionError("loss: probabilities must be [B,2]");
  const std::size_t B = probs.dim(0);
  if (B == 0 || labels.size() != B) throw DimensionError("loss: label count mismatch");
  Tensor<T> onehot({B, 2}, T{0});
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] != 0 && labels[b] != 1) throw ConfigError("loss: labels must be 0 or 1");
    onehot.at({b, static_cast<std::size_t>(labels[b])}) = T{1};
  }
  auto py = sum_axis(mul(probs, Var<T>::constant(std::move(onehot))), 1);
  return clamp(py, static_cast<T>(kProbClamp), static_cast<T>(1.0 - kProbClamp));
}

}  // namespace detail

// -(1/N) sum alpha_y (1 - p_y)^gamma log p_y
template <class T>
Var<T> focal_loss(const Var<T>& probs, const std::vector<int>& labels,
                  std::array<double, 2> alpha, double gamma) {
  auto py = detail::true_class_prob(probs, labels);
  Tensor<T> a({labels.size()});
  for (std::size_t b = 0; b < labels.size(); ++b) a[b] = static_cast<T>(alpha[labels[b]]);
  auto modulator = pow(add_scalar(-py, T{1}), static_cast<T>(gamma));
  auto terms = mul(mul(Var<T>::constant(std::move(a)), modulator), log(py));
  return -mean(terms);
}

template <class T>
Var<T> cross_entropy(const Var<T>& probs, const std::vector<int>& labels) {
  return -mean(log(detail::true_class_prob(probs, labels)));
}

// Median of the distinct pairwise distances within `pooled` [n, D], as a
// graph node (the selected pair distances carry the gradient). Returns the
// constant 1 when every point coincides.
template <class T>
Var<T> median_pairwise_distance(const Var<T>& pooled) {
  const std::size_t n = pooled.dim(0);
  if (n < 2) return Var<T>::constant(Tensor<T>::scalar(T{1}));
  auto d2 = pairwise_sq_dist(pooled, pooled);
  std::vector<std::size_t> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.push_back(i * n + j);
  const auto& dv = d2.value();
  std::stable_sort(pairs.begin(), pairs.end(),
                   [&](std::size_t a, std::size_t b) { return dv[a] < dv[b]; });
  const std::size_t mid = pairs.size() / 2;
  std::vector<std::size_t> picks{pairs[mid]};
  if (pairs.size() % 2 == 0) picks.push_back(pairs[mid - 1]);
  Var<T> total;
  for (std::size_t k : picks) {
    if (!(dv[k] > T{0})) continue;  // a zero distance adds nothing (and has no gradient)
    Tensor<T> sel(d2.shape(), T{0});
    sel[k] = T{1};
    auto d = pow(sum(mul(d2, Var<T>::constant(std::move(sel)))), T{0.5});
    total = total.node() ? add(total, d) : d;
  }
  if (!total.node()) return Var<T>::constant(Tensor<T>::scalar(T{1}));
  return scale(total, T{1} / static_cast<T>(picks.size()));
}

// Biased multi-kernel MMD^2 with Gaussian kernels exp(-d^2 / (2 s^2)),
// s = (median pairwise distance of the pooled set) x factor, averaged over
// the factors.
template <class T>
Var<T> mmd(const Var<T>& f, const Var<T>& g, const std::vector<double>& factors) {
  if (f.rank() != 2 || g.rank() != 2 || f.dim(1) != g.dim(1))
    throw DimensionError("mmd: expected [B,D] and [B',D] features");
  if (f.dim(0) == 0 || g.dim(0) == 0) throw DimensionError("mmd: empty feature set");
  if (factors.empty()) throw ConfigError("mmd: no bandwidth factors");
  auto med = median_pairwise_distance(concat<T>({f, g}, 0));
  auto med_sq = square(med);
  auto dxx = pairwise_sq_dist(f, f);
  auto dyy = pairwise_sq_dist(g, g);
  auto dxy = pairwise_sq_dist(f, g);
  Var<T> total;
  for (double fac : factors) {
    auto two_s2 = scale(med_sq, static_cast<T>(2.0 * fac * fac));
    auto k = [&](const Var<T>& d) { return mean(exp(-div(d, two_s2))); };
    auto term = sub(add(k(dxx), k(dyy)), scale(k(dxy), T{2}));
    total = total.node() ? add(total, term) : term;
  }
  return scale(total, T{1} / static_cast<T>(factors.size()));
}

// K = ceil(fraction * min(B, D)) smallest singular values.
inline std::size_t bss_count(std::size_t B, std::size_t D, double fraction) {
  const auto k = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(std::min(B, D)) - 1e-12));
  return std::clamp<std::size_t>(k, 1, std::min(B, D));
}

// Sum of sigma_k^2 over the K smallest singular values of F.
template <class T>
Var<T> bss(const Var<T>& f, double fraction = 0.10) {
  if (f.rank() != 2) throw DimensionError("bss: expected features [B,D]");
  return bottom_k_energy(f, bss_count(f.dim(0), f.dim(1), fraction));
}

// s[t, i] = log sigma_i^2 for task t and component i; not weight-decayed.
template <class T>
struct UncertaintyState {
  ParamStore<T> store;
  Var<T> log_var;

  UncertaintyState() {
    log_var = store.add("uncertainty.log_var", Tensor<T>({kNumTasks, kNumComponents}, T{0}),
                        /*decay=*/false);
  }

  T sigma_sq(std::size_t t, std::size_t i) const {
    return std::exp(log_var.value().at({t, i}));
  }

  // Row t as a [kNumComponents] Var.
  Var<T> row(std::size_t t) const {
    return reshape(slice(log_var, 0, t, 1), {kNumComponents});
  }
};

// sum_i L_i / (2 sigma_i^2) + log sigma_i^2, with s = log sigma^2 given as [4].
template <class T>
Var<T> uncertainty_total(const std::array<Var<T>, kNumComponents>& losses, const Var<T>& s) {
  if (s.value().size() != kNumComponents)
    throw DimensionError("uncertainty_total: expected 4 log-variances");
  std::vector<Var<T>> ls;
  for (const auto& l : losses) ls.push_back(reshape(l, {1}));
  auto L = concat<T>(ls, 0);
  auto weighted = mul(scale(exp(-s), T{0.5}), L);
  return add(sum(weighted), sum(s));
}

// Splits batch indices into two groups for the MMD term: by center id when
// the batch spans at least two centers (first half of the sorted distinct ids
// vs the rest), otherwise random halves.
template <class Rng>
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> mmd_partition(
    const std::vector<std::string>& center_ids, Rng& rng) {
  const std::size_t B = center_ids.size();
  std::vector<std::string> centers(center_ids);
  std::sort(centers.begin(), centers.end());
  centers.erase(std::unique(centers.begin(), centers.end()), centers.end());
  std::vector<std::size_t> a, b;
  if (centers.size() >= 2) {
    const std::size_t half = centers.size() / 2;
    for (std::size_t i = 0; i < B; ++i) {
      const auto pos = std::lower_bound(centers.begin(), centers.end(), center_ids[i]) -
                       centers.begin();
      (static_cast<std::size_t>(pos) < half ? a : b).push_back(i);
    }
    return {a, b};
  }
  std::vector<std::size_t> idx(B);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  a.assign(idx.begin(), idx.begin() + B / 2);
  b.assign(idx.begin() + B / 2, idx.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {a, b};
}

// Per-task constants derived from the training label counts.
struct TaskLossParams {
  double gamma = 2.0;
  std::array<double, 2> alpha{1.0, 1.0};
};

template <class T>
struct LossBreakdown {
  Var<T> objective;  // differentiated; excludes the decay term unless requested
  double reported = 0.0;  // objective plus beta * ||Theta||^2
  std::array<double, kNumTasks> focal{};
  std::array<double, kNumTasks> ce{};
  std::array<double, kNumTasks> task_total{};
  double mmd = 0.0;
  double bss = 0.0;
  double decay = 0.0;
};

template <class T>
struct LossInputs {
  const ModelOutput<T>* output = nullptr;
  std::array<std::vector<int>, kNumTasks> labels;
  std::vector<std::size_t> mmd_group_a, mmd_group_b;
  std::array<TaskLossParams, kNumTasks> tasks;
  // Parameters entering beta * ||Theta||^2 (those flagged for decay).
  std::vector<Var<T>> decayed;
  bool decay_in_graph = false;
};

// sum_t L_total^(t) + beta ||Theta||^2, where L_total^(t) combines focal,
// CE, MMD and BSS by uncertainty weighting (or fixed lambdas). MMD and BSS
// are computed once per batch and shared by the three tasks.
template <class T>
LossBreakdown<T> final_loss(const LossInputs<T>& in, const LossConfig& cfg,
                            const UncertaintyState<T>& state) {
  cfg.validate();
  if (!in.output) throw ConfigError("final_loss: no model output");
  const auto& out = *in.output;
  LossBreakdown<T> r;

  Var<T> mmd_term = Var<T>::constant(Tensor<T>::scalar(T{0}));
  if (!in.mmd_group_a.empty() && !in.mmd_group_b.empty()) {
    mmd_term = mmd(index_select(out.features, in.mmd_group_a),
                   index_select(out.features, in.mmd_group_b), cfg.bandwidth_factors);
  }
  Var<T> bss_term = bss(out.features, cfg.bss_fraction);
  r.mmd = static_cast<double>(mmd_term.value().item());
  r.bss = static_cast<double>(bss_term.value().item());

  Var<T> total;
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    auto fl = focal_loss(out.probs[t], in.labels[t], in.tasks[t].alpha, in.tasks[t].gamma);
    auto ce = cross_entropy(out.probs[t], in.labels[t]);
    r.focal[t] = static_cast<double>(fl.value().item());
    r.ce[t] = static_cast<double>(ce.value().item());
    Var<T> task;
    if (cfg.fixed_lambda) {
      const auto& l = *cfg.fixed_lambda;
      task = add(add(scale(fl, static_cast<T>(l[0])), scale(ce, static_cast<T>(l[1]))),
                 add(scale(mmd_term, static_cast<T>(l[2])), scale(bss_term, static_cast<T>(l[3]))));
    } else {
      task = uncertainty_total<T>({fl, ce, mmd_term, bss_term}, state.row(t));
    }
    r.task_total[t] = static_cast<double>(task.value().item());
    total = total.node() ? add(total, task) : task;
  }

  double sq = 0.0;
  for (const auto& p : in.decayed)
    for (T v : p.value().data()) sq += static_cast<double>(v) * static_cast<double>(v);
  r.decay = cfg.weight_decay * sq;
  if (in.decay_in_graph && !in.decayed.empty()) {
    Var<T> norm;
    for (const auto& p : in.decayed) {
      auto s = sum(square(p));
      norm = norm.node() ? add(norm, s) : s;
    }
    total = add(total, scale(norm, static_cast<T>(cfg.weight_decay)));
  }
  r.objective = total;
  r.reported = static_cast<double>(total.value().item()) + (in.decay_in_graph ? 0.0 : r.decay);
  return r;
}

}  // namespace csasn
