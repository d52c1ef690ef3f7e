#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "csasn/grad_check.hpp"
#include "csasn/loss.hpp"
#include "test_util.hpp"

using namespace csasn;
using csasn::testing::random_param;
using csasn::testing::random_projection;
using csasn::testing::random_tensor;

namespace {

Var<double> prob_rows(const std::vector<double>& p1) {
  Tensor<double> t({p1.size(), 2});
  for (std::size_t i = 0; i < p1.size(); ++i) {
    t.at({i, 0}) = 1 - p1[i];
    t.at({i, 1}) = p1[i];
  }
  return Var<double>::constant(t);
}

Var<double> random_probs(std::size_t B, std::mt19937_64& rng) {
  auto logits = Var<double>::parameter(random_tensor({B, 2}, rng, -3, 3));
  return softmax(logits, 1);
}

// Independent MMD: explicit double loops, median from a full sort.
double mmd_oracle(const Tensor<double>& x, const Tensor<double>& y,
                  const std::vector<double>& factors) {
  const std::size_t n = x.dim(0), m = y.dim(0), D = x.dim(1);
  std::vector<std::vector<double>> pts;
  for (std::size_t i = 0; i < n; ++i) pts.emplace_back(&x[i * D], &x[i * D] + D);
  for (std::size_t i = 0; i < m; ++i) pts.emplace_back(&y[i * D], &y[i * D] + D);
  auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t k = 0; k < D; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
  };
  std::vector<double> d;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) d.push_back(std::sqrt(dist2(pts[i], pts[j])));
  std::sort(d.begin(), d.end());
  double med = d.size() % 2 ? d[d.size() / 2] : (d[d.size() / 2 - 1] + d[d.size() / 2]) / 2;
  if (med == 0) med = 1;
  double total = 0;
  for (double f : factors) {
    const double s2 = 2 * med * med * f * f;
    double kxx = 0, kyy = 0, kxy = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) kxx += std::exp(-dist2(pts[i], pts[j]) / s2);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) kyy += std::exp(-dist2(pts[n + i], pts[n + j]) / s2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) kxy += std::exp(-dist2(pts[i], pts[n + j]) / s2);
    total += kxx / (n * n) + kyy / (m * m) - 2 * kxy / (n * m);
  }
  return total / factors.size();
}

Tensor<double> gaussian_cloud(std::size_t n, std::size_t D, double mu, double sd,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> g(mu, sd);
  Tensor<double> t({n, D});
  for (auto& v : t.data()) v = g(rng);
  return t;
}

Eigen::MatrixXd to_eigen(const Tensor<double>& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at({i, j});
  return m;
}

Tensor<double> from_eigen(const Eigen::MatrixXd& m) {
  Tensor<double> t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.at({std::size_t(i), std::size_t(j)}) = m(i, j);
  return t;
}

Eigen::MatrixXd random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  Eigen::MatrixXd a = to_eigen(random_tensor({n, n}, rng));
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ();
}

double bss_oracle(const Tensor<double>& f, double fraction) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(f));
  auto s = svd.singularValues();  // descending
  const std::size_t m = std::min(f.dim(0), f.dim(1));
  const auto k = static_cast<std::size_t>(std::ceil(fraction * m - 1e-12));
  double e = 0;
  for (std::size_t i = 0; i < k; ++i) e += s(m - 1 - i) * s(m - 1 - i);
  return e;
}

}  // namespace

// --- focal / CE ------------------------------------------------------------

TEST(Focal, GammaZeroAlphaOneIsCrossEntropy) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_probs(9, rng);
    std::vector<int> y(9);
    for (auto& v : y) v = static_cast<int>(rng() % 2);
    const double fl = focal_loss(p, y, {1.0, 1.0}, 0.0).value().item();
    const double ce = cross_entropy(p, y).value().item();
    EXPECT_NEAR(fl, ce, 1e-12);
  }
}

TEST(Focal, HalfProbabilityGammaTwo) {
  auto p = prob_rows({0.5});
  EXPECT_NEAR(focal_loss(p, {1}, {1.0, 1.0}, 2.0).value().item(), 0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(0.25 * std::log(2.0), 0.17329, 1e-5);
}

TEST(Focal, PerfectPredictionApproachesZero) {
  auto p = prob_rows({1.0 - 1e-9, 1e-9});
  const double v = focal_loss(p, {1, 0}, {1.0, 1.0}, 2.0).value().item();
  EXPECT_GE(v, 0.0);
  EXPECT_LT(v, 1e-12);
  // the clamp keeps log finite at exactly 0 / 1
  auto hard = prob_rows({0.0});
  EXPECT_TRUE(std::isfinite(cross_entropy(hard, {1}).value().item()));
  EXPECT_NEAR(cross_entropy(hard, {1}).value().item(), -std::log(1e-7), 1e-9);
}

TEST(Focal, AlphaWeightsPerClass) {
  auto p = prob_rows({0.3, 0.8});
  const double v = focal_loss(p, {0, 1}, {2.0, 0.5}, 1.0).value().item();
  const double ref = -(2.0 * 0.3 * std::log(0.7) + 0.5 * 0.2 * std::log(0.8)) / 2;
  EXPECT_NEAR(v, ref, 1e-12);
}

TEST(Focal, InvalidInputs) {
  auto p = prob_rows({0.5, 0.5});
  EXPECT_THROW(focal_loss(p, {1}, {1.0, 1.0}, 2.0), DimensionError);
  EXPECT_THROW(focal_loss(p, {1, 2}, {1.0, 1.0}, 2.0), ConfigError);
}

TEST(Focal, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  auto logits = random_param({6, 2}, rng, -2, 2);
  std::vector<int> y{0, 1, 1, 0, 0, 1};
  auto res = grad_check<double>(
      [&] { return focal_loss(softmax(logits, 1), y, {0.7, 2.3}, 2.6); }, {logits});
  EXPECT_LT(res.max_rel_error, 1e-6);
  auto res_ce =
      grad_check<double>([&] { return cross_entropy(softmax(logits, 1), y); }, {logits});
  EXPECT_LT(res_ce.max_rel_error, 1e-6);
}

TEST(AdaptiveGamma, Formula) {
  EXPECT_DOUBLE_EQ(adaptive_gamma(50, 50), 2.0);
  EXPECT_NEAR(adaptive_gamma(100, 10), 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(adaptive_gamma(1000000, 1), 5.0);
  EXPECT_DOUBLE_EQ(adaptive_gamma(1, 1000), 1.0);
  EXPECT_THROW(adaptive_gamma(10, 0), ConfigError);
  double prev = 0;
  for (std::size_t neg = 1; neg < 5000; neg += 37) {
    const double g = adaptive_gamma(neg, 10);
    EXPECT_GE(g, prev);
    prev = g;
  }
}

TEST(ClassWeights, InverseFrequency) {
  auto a = class_weights(50, 50);
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_DOUBLE_EQ(a[1], 1.0);
  auto b = class_weights(90, 10);
  EXPECT_DOUBLE_EQ(b[0], 100.0 / 180.0);
  EXPECT_DOUBLE_EQ(b[1], 5.0);
  // weighted class masses are equal
  EXPECT_DOUBLE_EQ(b[0] * 90, b[1] * 10);
}

// --- MMD -------------------------------------------------------------------------

TEST(Mmd, IdenticalSetsGiveZero) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({7, 5}, rng);
  const double v = mmd(Var<double>::constant(x), Var<double>::constant(x),
                       LossConfig{}.bandwidth_factors)
                       .value()
                       .item();
  EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Mmd, SymmetricAndNonnegative) {
  std::mt19937_64 rng(4);
  const auto fac = LossConfig{}.bandwidth_factors;
  for (int trial = 0; trial < 30; ++trial) {
    auto x = Var<double>::constant(random_tensor({1 + rng() % 8, 4}, rng));
    auto y = Var<double>::constant(random_tensor({1 + rng() % 8, 4}, rng, -0.5, 1.5));
    const double a = mmd(x, y, fac).value().item();
    const double b = mmd(y, x, fac).value().item();
    EXPECT_GE(a, -1e-9);
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(Mmd, SeparatedCloudsMatchDoubleLoopOracle) {
  std::mt19937_64 rng(5);
  auto x = gaussian_cloud(8, 6, 10.0, 0.1, rng);
  auto y = gaussian_cloud(8, 6, -10.0, 0.1, rng);
  const auto fac = LossConfig{}.bandwidth_factors;
  const double v = mmd(Var<double>::constant(x), Var<double>::constant(y), fac).value().item();
  EXPECT_NEAR(v, mmd_oracle(x, y, fac), 1e-6);
  EXPECT_GT(v, 0.1);
  auto u = random_tensor({5, 3}, rng);
  auto w = random_tensor({6, 3}, rng);
  EXPECT_NEAR(mmd(Var<double>::constant(u), Var<double>::constant(w), fac).value().item(),
              mmd_oracle(u, w, fac), 1e-12);
}

TEST(Mmd, DecreasesAsCloudsApproach) {
  // fixed bandwidth so only the separation varies
  std::mt19937_64 rng(6);
  auto base_x = gaussian_cloud(10, 3, 0.0, 1.0, rng);
  auto base_y = gaussian_cloud(10, 3, 0.0, 1.0, rng);
  double prev = 1e300;
  for (double sep : {4.0, 3.0, 2.0, 1.0, 0.0}) {
    Tensor<double> y = base_y;
    for (std::size_t i = 0; i < 10; ++i) y[i * 3] += sep;
    const double v =
        mmd(Var<double>::constant(base_x), Var<double>::constant(y), {1.0}).value().item();
    EXPECT_LT(v, prev) << sep;
    prev = v;
  }
}

TEST(Mmd, CoincidentPointsUseUnitBandwidth) {
  Tensor<double> x({3, 2}, 0.5);
  auto med = median_pairwise_distance(Var<double>::constant(x)).value().item();
  EXPECT_EQ(med, 1.0);
}

TEST(Mmd, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto x = random_param({5, 4}, rng);
  auto y = random_param({4, 4}, rng, 0, 2);
  auto res = grad_check<double>(
      [&] { return mmd(x, y, LossConfig{}.bandwidth_factors); }, {x, y});
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(Mmd, EmptySetRejected) {
  auto x = Var<double>::constant(Tensor<double>({2, 3}, 0.0));
  auto y = Var<double>::constant(Tensor<double>({2, 4}, 0.0));
  EXPECT_THROW(mmd(x, y, {1.0}), DimensionError);
  EXPECT_THROW(mmd(x, x, {}), ConfigError);
}

// --- BSS -----------------------------------------------------------------------------

TEST(Bss, CountFormula) {
  EXPECT_EQ(bss_count(16, 128, 0.1), 2u);
  EXPECT_EQ(bss_count(8, 6, 0.1), 1u);
  EXPECT_EQ(bss_count(10, 10, 0.1), 1u);
  EXPECT_EQ(bss_count(32, 2176, 0.1), 4u);
  EXPECT_EQ(bss_count(4, 4, 1.0), 4u);
}

TEST(Bss, RankDeficientIsZero) {
  Tensor<double> f({4, 3});
  std::mt19937_64 rng(8);
  auto r = random_tensor({2, 3}, rng);
  for (std::size_t j = 0; j < 3; ++j) {
    f.at({0, j}) = f.at({1, j}) = r.at({0, j});
    f.at({2, j}) = f.at({3, j}) = r.at({1, j});
  }
  EXPECT_NEAR(bss(Var<double>::constant(f)).value().item(), 0.0, 1e-12);
}

TEST(Bss, DiagonalCase) {
  Tensor<double> f({3, 3}, 0.0);
  f.at({0, 0}) = 3;
  f.at({1, 1}) = 2;
  f.at({2, 2}) = 1;
  EXPECT_NEAR(bss(Var<double>::constant(f)).value().item(), 1.0, 1e-12);
}

TEST(Bss, MatchesEigenOracle) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto f = random_tensor({8, 6}, rng);
    EXPECT_NEAR(bss(Var<double>::constant(f)).value().item(), bss_oracle(f, 0.1), 1e-8);
    auto g = random_tensor({5, 12}, rng);
    EXPECT_NEAR(bss(Var<double>::constant(g), 0.5).value().item(), bss_oracle(g, 0.5), 1e-8);
  }
}

TEST(Bss, OrthogonalAndPermutationInvariant) {
  std::mt19937_64 rng(10);
  auto f = random_tensor({8, 6}, rng);
  const double base = bss(Var<double>::constant(f), 0.3).value().item();
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd rotated = random_orthogonal(8, rng) * to_eigen(f) * random_orthogonal(6, rng);
    EXPECT_NEAR(bss(Var<double>::constant(from_eigen(rotated)), 0.3).value().item(), base, 1e-8);
  }
  Tensor<double> perm({8, 6});
  std::vector<std::size_t> order{3, 1, 7, 0, 5, 2, 6, 4};
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 6; ++j) perm.at({i, j}) = f.at({order[i], j});
  EXPECT_NEAR(bss(Var<double>::constant(perm), 0.3).value().item(), base, 1e-8);
}

TEST(Bss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto f = random_param({6, 9}, rng);
  auto g = random_param({9, 4}, rng);
  EXPECT_LT(grad_check<double>([&] { return bss(f, 0.4); }, {f}).max_rel_error, 1e-6);
  EXPECT_LT(grad_check<double>([&] { return bss(g, 0.5); }, {g}).max_rel_error, 1e-6);
}

// --- uncertainty weighting -------------------------------------------------------

namespace {

std::array<Var<double>, kNumComponents> constant_losses(std::array<double, 4> v) {
  std::array<Var<double>, kNumComponents> out;
  for (std::size_t i = 0; i < 4; ++i) out[i] = Var<double>::constant(Tensor<double>::scalar(v[i]));
  return out;
}

}  // namespace

TEST(Uncertainty, UnitSigmaHalvesTheSum) {
  auto s = Var<double>::parameter(Tensor<double>({4}, 0.0));
  auto v = uncertainty_total<double>(constant_losses({0.3, 1.2, 0.05, 2.0}), s);
  EXPECT_NEAR(v.value().item(), (0.3 + 1.2 + 0.05 + 2.0) / 2, 1e-15);
}

TEST(Uncertainty, MatchesScalarEvaluation) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto st = random_tensor({4}, rng, -2, 2);
    auto lt = random_tensor({4}, rng, 0, 3);
    auto v = uncertainty_total<double>(constant_losses({lt[0], lt[1], lt[2], lt[3]}),
                                       Var<double>::constant(st));
    double ref = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double sigma2 = std::exp(st[i]);
      ref += lt[i] / (2 * sigma2) + std::log(sigma2);
    }
    EXPECT_NEAR(v.value().item(), ref, 1e-12);
  }
}

TEST(Uncertainty, StationaryPointAtHalfLoss) {
  // d/ds [c exp(-s) / 2 + s] = 1 - c / (2 sigma^2): zero at sigma^2 = c / 2
  for (double c : {0.2, 1.0, 3.7}) {
    const double s_star = std::log(c / 2);
    for (double ds : {-0.5, -1e-3, 0.0, 1e-3, 0.5}) {
      auto s = Var<double>::parameter(Tensor<double>({4}, s_star + ds));
      backward(uncertainty_total<double>(constant_losses({c, c, c, c}), s));
      const double g = s.grad()[0];
      if (ds < 0) EXPECT_LT(g, 0.0);
      if (ds > 0) EXPECT_GT(g, 0.0);
      if (ds == 0) EXPECT_NEAR(g, 0.0, 1e-15);
      EXPECT_NEAR(g, 1 - c / (2 * std::exp(s_star + ds)), 1e-14);
    }
  }
}

TEST(Uncertainty, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  auto s = random_param({4}, rng, -1, 1);
  auto l = random_param({4}, rng, 0.1, 2);
  auto losses = [&] {
    std::array<Var<double>, kNumComponents> out;
    for (std::size_t i = 0; i < 4; ++i) out[i] = sum(slice(l, 0, i, 1));
    return out;
  };
  auto res = grad_check<double>([&] { return uncertainty_total<double>(losses(), s); }, {s, l});
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(Uncertainty, StateStartsAtUnitVariance) {
  UncertaintyState<double> st;
  EXPECT_EQ(st.log_var.shape(), (Shape{3, 4}));
  EXPECT_DOUBLE_EQ(st.sigma_sq(2, 3), 1.0);
  EXPECT_FALSE(st.store.params()[0].decay);
  st.log_var.mutable_value().at({1, 2}) = 0.7;
  EXPECT_DOUBLE_EQ(st.row(1).value()[2], 0.7);
}

// --- MMD partition -------------------------------------------------------------------

TEST(MmdPartition, SplitsByCenter) {
  std::mt19937_64 rng(14);
  auto [a, b] = mmd_partition({"c1", "c0", "c1", "c0", "c0"}, rng);
  EXPECT_EQ(a, (std::vector<std::size_t>{1, 3, 4}));
  EXPECT_EQ(b, (std::vector<std::size_t>{0, 2}));
}

TEST(MmdPartition, SingleCenterFallsBackToRandomHalves) {
  std::mt19937_64 rng(15);
  auto [a, b] = mmd_partition(std::vector<std::string>(7, "c0"), rng);
  EXPECT_EQ(a.size(), 3u);
  EXPECT_EQ(b.size(), 4u);
  std::vector<std::size_t> all(a);
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(all[i], i);
}

// --- final loss --------------------------------------------------------------------

namespace {

struct Toy {
  ModelOutput<double> out;
  LossInputs<double> in;
  Var<double> w;
};

Toy make_toy(std::mt19937_64& rng) {
  Toy t;
  for (auto& p : t.out.probs) p = random_probs(6, rng);
  t.out.features = random_param({6, 5}, rng);
  t.in.output = &t.out;
  t.in.labels = {std::vector<int>{1, 0, 0, 0, 1, 0}, std::vector<int>{0, 1, 0, 0, 0, 0},
                 std::vector<int>{0, 0, 1, 1, 0, 0}};
  t.in.mmd_group_a = {0, 2, 4};
  t.in.mmd_group_b = {1, 3, 5};
  t.in.tasks[0] = {2.5, {0.75, 1.5}};
  t.in.tasks[1] = {3.0, {0.6, 3.0}};
  t.in.tasks[2] = {2.3, {0.75, 1.5}};
  t.w = random_param({3, 3}, rng);
  t.in.decayed = {t.w};
  return t;
}

}  // namespace

TEST(FinalLoss, MatchesHandAssembledComponents) {
  std::mt19937_64 rng(16);
  auto toy = make_toy(rng);
  UncertaintyState<double> st;
  st.log_var.mutable_value() = random_tensor({3, 4}, rng, -0.5, 0.5);
  LossConfig cfg;
  auto r = final_loss(toy.in, cfg, st);

  const double mmd_v = mmd(index_select(toy.out.features, {0, 2, 4}),
                           index_select(toy.out.features, {1, 3, 5}), cfg.bandwidth_factors)
                           .value()
                           .item();
  const double bss_v = bss_oracle(toy.out.features.value(), 0.1);
  double expect = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    const double fl = focal_loss(toy.out.probs[t], toy.in.labels[t], toy.in.tasks[t].alpha,
                                 toy.in.tasks[t].gamma)
                          .value()
                          .item();
    const double ce = cross_entropy(toy.out.probs[t], toy.in.labels[t]).value().item();
    const double comps[4] = {fl, ce, mmd_v, bss_v};
    double task = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double s = st.log_var.value().at({t, i});
      task += comps[i] / (2 * std::exp(s)) + s;
    }
    EXPECT_NEAR(r.task_total[t], task, 1e-10);
    EXPECT_NEAR(r.focal[t], fl, 1e-15);
    expect += task;
  }
  double sq = 0;
  for (double v : toy.w.value().data()) sq += v * v;
  EXPECT_NEAR(r.decay, 1e-4 * sq, 1e-15);
  EXPECT_NEAR(r.objective.value().item(), expect, 1e-10);
  EXPECT_NEAR(r.reported, expect + 1e-4 * sq, 1e-10);
  EXPECT_NEAR(r.mmd, mmd_v, 1e-15);
  EXPECT_NEAR(r.bss, bss_v, 1e-8);
}

TEST(FinalLoss, ZeroParamsContributeNoDecay) {
  std::mt19937_64 rng(17);
  auto toy = make_toy(rng);
  toy.w.mutable_value().fill(0.0);
  UncertaintyState<double> st;
  auto r = final_loss(toy.in, LossConfig{}, st);
  EXPECT_EQ(r.decay, 0.0);
  EXPECT_DOUBLE_EQ(r.reported, r.objective.value().item());
  EXPECT_DOUBLE_EQ(LossConfig{}.weight_decay, 1e-4);
}

TEST(FinalLoss, DecayInGraphAddsTheSameAmount) {
  std::mt19937_64 rng(18);
  auto toy = make_toy(rng);
  UncertaintyState<double> st;
  auto a = final_loss(toy.in, LossConfig{}, st);
  toy.in.decay_in_graph = true;
  auto b = final_loss(toy.in, LossConfig{}, st);
  EXPECT_NEAR(a.reported, b.reported, 1e-12);
  EXPECT_NEAR(b.objective.value().item() - a.objective.value().item(), a.decay, 1e-12);
}

TEST(FinalLoss, FixedLambdaMode) {
  std::mt19937_64 rng(19);
  auto toy = make_toy(rng);
  UncertaintyState<double> st;
  LossConfig cfg;
  cfg.fixed_lambda = std::array<double, 4>{0.4, 0.3, 0.2, 0.1};
  auto r = final_loss(toy.in, cfg, st);
  double expect = 0;
  for (std::size_t t = 0; t < 3; ++t)
    expect += 0.4 * r.focal[t] + 0.3 * r.ce[t] + 0.2 * r.mmd + 0.1 * r.bss;
  EXPECT_NEAR(r.objective.value().item(), expect, 1e-12);

  cfg.fixed_lambda = std::array<double, 4>{0.4, 0.3, 0.2, 0.2};
  EXPECT_THROW(final_loss(toy.in, cfg, st), ConfigError);
}

TEST(FinalLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(20);
  auto logits = std::array<Var<double>, 3>{random_param({6, 2}, rng), random_param({6, 2}, rng),
                                           random_param({6, 2}, rng)};
  auto feats = random_param({6, 5}, rng);
  UncertaintyState<double> st;
  st.log_var.mutable_value() = random_tensor({3, 4}, rng, -0.5, 0.5);
  auto toy = make_toy(rng);
  toy.in.decay_in_graph = true;
  auto f = [&] {
    for (std::size_t t = 0; t < 3; ++t) toy.out.probs[t] = softmax(logits[t], 1);
    toy.out.features = feats;
    return final_loss(toy.in, LossConfig{}, st).objective;
  };
  auto res = grad_check<double>(
      f, {logits[0], logits[1], logits[2], feats, st.log_var, toy.w});
  EXPECT_LT(res.max_rel_error, 1e-6) << res.worst_param;
}

TEST(LossConfigTest, Validation) {
  LossConfig c;
  c.bss_fraction = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.bss_fraction = 0.1;
  c.bandwidth_factors = {1.0, -1.0};
  EXPECT_THROW(c.validate(), ConfigError);
}
