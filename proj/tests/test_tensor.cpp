#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "csasn/grad_check.hpp"
#include "csasn/linalg.hpp"
#include "csasn/nn_ops.hpp"
#include "test_util.hpp"

using namespace csasn;
using csasn::testing::random_param;
using csasn::testing::random_projection;
using csasn::testing::random_tensor;
using V = Var<double>;
using TD = Tensor<double>;

namespace {

TD naive_matmul(const TD& a, const TD& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TD out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
      out[i * n + j] = s;
    }
  return out;
}

TD naive_conv(const TD& x, const TD& w, const TD* bias, std::size_t stride,
              std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (H + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (W + 2 * pad - kw) / stride + 1;
  TD out(Shape{B, O, oh, ow});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double s = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(xo * stride + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                  continue;
                s += x.at({b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)}) *
                     w.at({o, c, i, j});
              }
          if (bias) s = s + (*bias)[o];
          out.at({b, o, y, xo}) = s;
        }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- matmul

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  std::mt19937_64 rng(1);
  TD eye(Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
  auto a = V::constant(random_tensor({3, 3}, rng));
  auto y = matmul(V::constant(eye), a);
  EXPECT_EQ(max_abs_diff(y.value(), a.value()), 0.0);
}

TEST(Matmul, HandEvaluated) {
  auto a = V::constant(TD({2, 2}, {1, 2, 3, 4}));
  auto b = V::constant(TD({2, 1}, {1, 1}));
  auto y = matmul(a, b);
  ASSERT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(y.value()[0], 3.0);
  EXPECT_EQ(y.value()[1], 7.0);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  auto a = V::constant(TD({2, 3}));
  auto b = V::constant(TD({2, 3}));
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Matmul, BitExactAgainstNaiveLoop) {
  std::mt19937_64 rng(7);
  for (std::size_t trial = 0; trial < 5; ++trial) {
    auto a = random_tensor({5 + trial, 7}, rng);
    auto b = random_tensor({7, 4 + trial}, rng);
    auto y = matmul(V::constant(a), V::constant(b));
    auto ref = naive_matmul(a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(y.value()[i], ref[i]);
  }
}

TEST(Matmul, BatchedMatchesPerSliceProduct) {
  std::mt19937_64 rng(8);
  auto a = random_tensor({2, 3, 4, 5}, rng);
  auto b = random_tensor({2, 3, 5, 2}, rng);
  auto y = matmul(V::constant(a), V::constant(b)).value();
  for (std::size_t t = 0; t < 6; ++t) {
    TD as(Shape{4, 5}, std::vector<double>(a.values().begin() + t * 20,
                                           a.values().begin() + (t + 1) * 20));
    TD bs(Shape{5, 2}, std::vector<double>(b.values().begin() + t * 10,
                                           b.values().begin() + (t + 1) * 10));
    auto ref = naive_matmul(as, bs);
    for (std::size_t i = 0; i < 8; ++i) ASSERT_EQ(y[t * 8 + i], ref[i]);
  }
}

TEST(Matmul, GradientOfSumIsRowSumsOfB) {
  std::mt19937_64 rng(3);
  auto a = random_param({3, 4}, rng);
  auto b = V::constant(random_tensor({4, 5}, rng));
  backward(sum(matmul(a, b)));
  // d/dA_ik sum_ij (AB)_ij = sum_j B_kj
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) s += b.value()[k * 5 + j];
      EXPECT_NEAR(a.grad()[i * 4 + k], s, 1e-14);
    }
  auto res = grad_check<double>([&] { return sum(matmul(a, b)); }, {a});
  EXPECT_LT(res.max_rel_error, 1e-6);
}

// ---------------------------------------------------------------- conv2d

TEST(Conv2d, UnitOneByOneKernelIsIdentity) {
  std::mt19937_64 rng(4);
  auto x = V::constant(random_tensor({2, 1, 5, 6}, rng));
  auto w = V::constant(TD({1, 1, 1, 1}, {1.0}));
  auto y = conv2d(x, w, 1, 0);
  EXPECT_EQ(max_abs_diff(y.value(), x.value()), 0.0);
}

TEST(Conv2d, AllOnesKernelOnConstantImage) {
  const double c = 0.37;
  auto x = V::constant(TD({1, 1, 6, 6}, c));
  auto w = V::constant(TD({1, 1, 3, 3}, 1.0));
  auto y = conv2d(x, w, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 6, 6}));
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 1; j < 5; ++j)
      EXPECT_NEAR(y.value().at({0, 0, i, j}), 9 * c, 1e-15);
  // corners see only 4 taps under zero padding
  EXPECT_NEAR(y.value().at({0, 0, 0, 0}), 4 * c, 1e-15);
}

TEST(Conv2d, BitExactAgainstNaiveLoop) {
  std::mt19937_64 rng(5);
  const std::size_t strides[] = {1, 2, 3};
  const std::size_t pads[] = {0, 1, 3};
  for (auto s : strides)
    for (auto p : pads) {
      auto x = random_tensor({2, 3, 9, 8}, rng);
      auto w = random_tensor({4, 3, 3, 5}, rng);
      auto bias = random_tensor({4}, rng);
      auto y = conv2d(V::constant(x), V::constant(w), V::constant(bias), s, p);
      auto ref = naive_conv(x, w, &bias, s, p);
      ASSERT_EQ(y.shape(), ref.shape());
      for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(y.value()[i], ref[i]);
    }
}

TEST(Conv2d, OutputSizeFormula) {
  auto x = V::constant(TD({1, 1, 64, 64}));
  auto w = V::constant(TD({2, 1, 5, 5}));
  auto y = conv2d(x, w, 2, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 32, 32}));
}

TEST(Conv2d, KernelLargerThanPaddedInputThrows) {
  auto x = V::constant(TD({1, 1, 2, 2}));
  auto w = V::constant(TD({1, 1, 7, 7}));
  EXPECT_THROW(conv2d(x, w, 1, 2), DimensionError);
  EXPECT_NO_THROW(conv2d(x, w, 1, 3));
}

// ---------------------------------------------------------------- softmax

TEST(Softmax, HandCases) {
  auto y = softmax(V::constant(TD({2}, {0.0, 0.0})), 0);
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.5);
  auto z = softmax(V::constant(TD({2}, {std::log(1.0), std::log(3.0)})), 0);
  EXPECT_NEAR(z.value()[0], 0.25, 1e-15);
  EXPECT_NEAR(z.value()[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalised) {
  std::mt19937_64 rng(6);
  for (int seed = 0; seed < 10; ++seed) {
    auto x = random_tensor({3, 4, 5}, rng, -20, 20);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto y = softmax(V::constant(x), axis).value();
      TD shifted = x;
      for (auto& v : shifted.data()) v += 123.0;
      auto ys = softmax(V::constant(shifted), axis).value();
      EXPECT_LT(max_abs_diff(y, ys), 1e-12);
      auto s = sum_axis(V::constant(y), axis).value();
      for (auto v : s.data()) EXPECT_NEAR(v, 1.0, 1e-6);
      for (auto v : y.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Softmax, LargeInputsStayFinite) {
  auto y = softmax(V::constant(TD({3}, {1000.0, 999.0, -1000.0})), 0);
  EXPECT_TRUE(all_finite(y.value()));
}

// ---------------------------------------------------------------- activations

TEST(Activations, ScalarValues) {
  auto x = V::constant(TD({2}, {0.0, 1.0}));
  auto m = mish(x).value();
  EXPECT_EQ(m[0], 0.0);
  // 1 * tanh(log(1 + e))
  EXPECT_NEAR(m[1], 0.8650983882673103, 1e-15);
  EXPECT_DOUBLE_EQ(sigmoid(x).value()[0], 0.5);
  EXPECT_EQ(relu(V::constant(TD({2}, {-1.0, 2.0}))).value()[0], 0.0);
}

TEST(Activations, ExtremeInputsFinite) {
  auto x = V::constant(TD({4}, {-800.0, -40.0, 40.0, 800.0}));
  EXPECT_TRUE(all_finite(mish(x).value()));
  EXPECT_TRUE(all_finite(sigmoid(x).value()));
}

// ---------------------------------------------------------------- layer norm

TEST(LayerNorm, ConstantRowMapsToZero) {
  auto x = V::constant(TD({1, 4}, 2.5));
  auto g = V::constant(TD({4}, 1.0));
  auto b = V::constant(TD({4}, 0.0));
  auto y = layer_norm(x, g, b).value();
  for (auto v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoElementRow) {
  auto x = V::constant(TD({1, 2}, {1.0, 3.0}));
  auto y = layer_norm(x, V::constant(TD({2}, 1.0)), V::constant(TD({2}, 0.0))).value();
  EXPECT_NEAR(y[0], -1.0, 1e-5);
  EXPECT_NEAR(y[1], 1.0, 1e-5);
}

TEST(LayerNorm, RowsAreStandardised) {
  std::mt19937_64 rng(9);
  auto x = V::constant(random_tensor({20, 16}, rng, -5, 5));
  auto y = layer_norm(x, V::constant(TD({16}, 1.0)), V::constant(TD({16}, 0.0))).value();
  for (std::size_t r = 0; r < 20; ++r) {
    double mu = 0, var = 0;
    for (std::size_t d = 0; d < 16; ++d) mu += y[r * 16 + d];
    mu /= 16;
    for (std::size_t d = 0; d < 16; ++d) var += (y[r * 16 + d] - mu) * (y[r * 16 + d] - mu);
    var /= 16;
    EXPECT_LT(std::abs(mu), 1e-6);
    EXPECT_LT(std::abs(var - 1.0), 1e-4);
  }
}

// ---------------------------------------------------------------- batch norm

TEST(BatchNorm, EvalWithUnitStatsIsAffineOnly) {
  std::mt19937_64 rng(10);
  auto x = V::constant(random_tensor({3, 2, 2, 2}, rng));
  auto g = V::constant(TD({2}, {2.0, -1.0}));
  auto b = V::constant(TD({2}, {0.5, 0.25}));
  BatchNormStats<double> stats(2);
  auto y = batch_norm(x, g, b, stats, Mode::Eval).value();
  const double s = 1.0 / std::sqrt(1.0 + kBatchNormEps);
  for (std::size_t bb = 0; bb < 3; ++bb)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t i = (bb * 2 + c) * 4 + k;
        EXPECT_NEAR(y[i], x.value()[i] * s * g.value()[c] + b.value()[c], 1e-15);
      }
}

TEST(BatchNorm, TrainModeBatchMeanEqualsBias) {
  std::mt19937_64 rng(11);
  auto x = V::constant(random_tensor({8, 3}, rng, -4, 9));
  auto g = V::constant(TD({3}, {1.5, 0.5, 2.0}));
  auto b = V::constant(TD({3}, {0.1, -0.7, 3.0}));
  BatchNormStats<double> stats(3);
  auto y = batch_norm(x, g, b, stats, Mode::Train).value();
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0;
    for (std::size_t r = 0; r < 8; ++r) m += y[r * 3 + c];
    EXPECT_NEAR(m / 8, b.value()[c], 1e-5);
  }
}

TEST(BatchNorm, RunningStatsConvergeGeometrically) {
  auto x = V::constant(TD({4, 1}, {1.0, 2.0, 3.0, 6.0}));
  const double bm = 3.0;
  const double bv = (4.0 + 1.0 + 0.0 + 9.0) / 4.0;
  auto g = V::constant(TD({1}, 1.0));
  auto b = V::constant(TD({1}, 0.0));
  BatchNormStats<double> stats(1);
  for (int k = 1; k <= 5; ++k) {
    batch_norm(x, g, b, stats, Mode::Train);
    const double decay = std::pow(0.9, k);
    EXPECT_NEAR(stats.mean[0], (1 - decay) * bm, 1e-12);
    EXPECT_NEAR(stats.var[0], decay * 1.0 + (1 - decay) * bv, 1e-12);
  }
}

TEST(BatchNorm, SingleSampleTrainingBatchIsRejected) {
  auto x = V::constant(TD({1, 3, 2, 2}, 1.0));
  BatchNormStats<double> stats(3);
  EXPECT_THROW(batch_norm(x, V::constant(TD({3}, 1.0)), V::constant(TD({3}, 0.0)),
                          stats, Mode::Train),
               DegenerateBatchError);
  EXPECT_NO_THROW(batch_norm(x, V::constant(TD({3}, 1.0)),
                             V::constant(TD({3}, 0.0)), stats, Mode::Eval));
}

// ---------------------------------------------------------------- spectral

TEST(Spectral, OrthonormalColumnsHaveUnitSingularValues) {
  // columns of a 4x3 slice of a rotation
  std::mt19937_64 rng(12);
  Eigen::MatrixXd m = Eigen::MatrixXd::Random(4, 4);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd q = qr.householderQ();
  TD f(Shape{4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) f[i * 3 + j] = q(i, j);
  for (double s : spectral_bottom_k(f, 3)) EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Spectral, DiagonalCase) {
  TD f({3, 3}, {3, 0, 0, 0, 2, 0, 0, 0, 1});
  auto s = spectral_bottom_k(f, 2);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_NEAR(s[0], 1.0, 1e-14);
  EXPECT_NEAR(s[1], 2.0, 1e-14);
}

TEST(Spectral, MatchesEigenOracleOnRandomMatrices) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const bool tall = trial % 2 == 0;
    const std::size_t r = tall ? 8 : 6, c = tall ? 6 : 8;
    auto f = random_tensor({r, c}, rng);
    Eigen::MatrixXd m(r, c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) m(i, j) = f[i * c + j];
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    Eigen::VectorXd sv = svd.singularValues();  // descending
    auto ours = spectral_bottom_k(f, 6);
    double fro = 0;
    for (auto v : f.data()) fro += v * v;
    double sq = 0;
    for (std::size_t k = 0; k < 6; ++k) {
      EXPECT_NEAR(ours[k], sv(5 - k), 1e-8);
      EXPECT_GE(ours[k], 0.0);
      if (k) EXPECT_GE(ours[k], ours[k - 1]);
      sq += ours[k] * ours[k];
    }
    EXPECT_LE(sq, fro + 1e-9);
  }
}

TEST(Spectral, KOutOfRangeThrows) {
  TD f(Shape{3, 5}, 1.0);
  EXPECT_THROW(spectral_bottom_k(f, 4), DimensionError);
  EXPECT_THROW(spectral_bottom_k(f, 0), DimensionError);
}

// ---------------------------------------------------------------- autograd

TEST(Autograd, SharedNodeVisitedOnce) {
  auto a = V::parameter(TD({1}, {0.3}));
  auto b = exp(a);
  auto y = sum(add(mul(b, b), b));  // e^{2a} + e^a
  backward(y);
  const double e = std::exp(0.3);
  EXPECT_NEAR(a.grad()[0], 2 * e * e + e, 1e-14);
}

TEST(Autograd, FrozenParameterGetsExactlyZeroGradient) {
  auto a = V::parameter(TD({2}, {1.0, 2.0}));
  auto frozen = V::parameter(TD({2}, {3.0, 4.0}));
  frozen.set_requires_grad(false);
  auto unused = V::parameter(TD({2}, {5.0, 6.0}));
  backward(sum(mul(a, frozen)));
  for (auto v : frozen.grad().data()) EXPECT_EQ(v, 0.0);
  for (auto v : unused.grad().data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(a.grad()[0], 3.0);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  auto a = V::parameter(TD({2}, 1.0));
  NoGradGuard guard;
  auto y = sum(a);
  EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, HalfSquaredNorm) {
  std::mt19937_64 rng(14);
  auto x = random_param({7}, rng);
  auto f = [&] { return scale(sum(square(x)), 0.5); };
  backward(f());
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(x.grad()[i], x.value()[i], 1e-15);
  auto res = grad_check<double>(f, {x});
  EXPECT_LT(res.max_rel_error, 1e-8);
  EXPECT_EQ(res.probes, 7u);
}

TEST(GradCheck, FivePointStencilBeatsCentralOnQuartic) {
  // d/dx x^4 at x=1 is 4; the central difference with h errs by 4 h^2, the
  // five-point stencil is exact for polynomials up to degree 4
  auto x = V::parameter(TD({1}, 1.0));
  auto f = [&] { return sum(pow(x, 4.0)); };
  GradCheckOptions two;
  two.step = 1e-2;
  auto r2 = grad_check<double>(f, {x}, two);
  EXPECT_NEAR(r2.max_abs_error, 4e-4, 1e-9);
  GradCheckOptions four = two;
  four.order = 4;
  auto r4 = grad_check<double>(f, {x}, four);
  EXPECT_LT(r4.max_abs_error, 1e-12);
}

// Every differentiable op: analytic VJP vs central differences over 10 seeds.
TEST(GradCheck, EveryOpMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    auto a = random_param({3, 4}, rng);
    auto b = random_param({4, 5}, rng);
    auto c = random_param({3, 4}, rng);
    auto row = random_param({4}, rng);
    auto pos = random_param({3, 4}, rng, 0.5, 2.0);
    auto x4 = random_param({2, 3, 5, 5}, rng);
    auto w4 = random_param({2, 3, 3, 3}, rng);
    auto b4 = random_param({2}, rng);
    auto gain = random_param({4}, rng, 0.5, 1.5);
    auto bias = random_param({4}, rng);
    auto ch_gain = random_param({3}, rng, 0.5, 1.5);
    auto ch_bias = random_param({3}, rng);
    auto wide = random_param({5, 9}, rng);
    auto tall = random_param({9, 5}, rng);
    auto p1 = random_param({4, 3}, rng);
    auto p2 = random_param({6, 3}, rng);
    auto batched_a = random_param({2, 3, 4}, rng);
    auto batched_b = random_param({2, 4, 2}, rng);

    struct Case {
      const char* name;
      std::function<V()> f;
      std::vector<V> params;
    };
    const std::uint64_t s = seed;
    std::vector<Case> cases = {
        {"matmul", [&] { return random_projection(matmul(a, b), s); }, {a, b}},
        {"matmul_batched",
         [&] { return random_projection(matmul(batched_a, batched_b), s); },
         {batched_a, batched_b}},
        {"add_broadcast", [&] { return random_projection(add(a, row), s); }, {a, row}},
        {"sub", [&] { return random_projection(sub(a, c), s); }, {a, c}},
        {"mul_broadcast", [&] { return random_projection(mul(a, row), s); }, {a, row}},
        {"div", [&] { return random_projection(div(a, pos), s); }, {a, pos}},
        {"exp", [&] { return random_projection(exp(a), s); }, {a}},
        {"log", [&] { return random_projection(log(pos), s); }, {pos}},
        {"pow", [&] { return random_projection(pow(pos, 2.5), s); }, {pos}},
        {"sigmoid", [&] { return random_projection(sigmoid(a), s); }, {a}},
        {"tanh", [&] { return random_projection(tanh(a), s); }, {a}},
        {"mish", [&] { return random_projection(mish(a), s); }, {a}},
        {"relu", [&] { return random_projection(relu(a), s); }, {a}},
        {"softmax0", [&] { return random_projection(softmax(a, 0), s); }, {a}},
        {"softmax1", [&] { return random_projection(softmax(a, 1), s); }, {a}},
        {"sum_axis", [&] { return random_projection(sum_axis(a, 1, true), s); }, {a}},
        {"mean_axis", [&] { return random_projection(mean_axis(x4, 1), s); }, {x4}},
        {"max_axis", [&] { return random_projection(max_axis(x4, 1, true), s); }, {x4}},
        {"permute",
         [&] { return random_projection(permute(x4, {2, 0, 3, 1}), s); },
         {x4}},
        {"concat", [&] { return random_projection(concat<double>({a, c}, 1), s); }, {a, c}},
        {"slice", [&] { return random_projection(slice(x4, 2, 1, 3), s); }, {x4}},
        {"index_select",
         [&] { return random_projection(index_select(a, {2, 0, 2}), s); },
         {a}},
        {"conv2d_s1p1",
         [&] { return random_projection(conv2d(x4, w4, b4, 1, 1), s); },
         {x4, w4, b4}},
        {"conv2d_s2p0",
         [&] { return random_projection(conv2d(x4, w4, b4, 2, 0), s); },
         {x4, w4, b4}},
        {"layer_norm",
         [&] { return random_projection(layer_norm(a, gain, bias), s); },
         {a, gain, bias}},
        {"batch_norm_train",
         [&] {
           BatchNormStats<double> st(3);
           return random_projection(batch_norm(x4, ch_gain, ch_bias, st, Mode::Train), s);
         },
         {x4, ch_gain, ch_bias}},
        {"batch_norm_eval",
         [&] {
           BatchNormStats<double> st(3);
           st.mean.fill(0.2);
           st.var.fill(1.7);
           return random_projection(batch_norm(x4, ch_gain, ch_bias, st, Mode::Eval), s);
         },
         {x4, ch_gain, ch_bias}},
        {"pairwise_sq_dist",
         [&] { return random_projection(pairwise_sq_dist(p1, p2), s); },
         {p1, p2}},
        {"bottom_k_energy_wide", [&] { return bottom_k_energy(wide, 2); }, {wide}},
        {"bottom_k_energy_tall", [&] { return bottom_k_energy(tall, 2); }, {tall}},
    };
    for (auto& cs : cases) {
      auto res = grad_check<double>(cs.f, cs.params);
      EXPECT_LT(res.max_rel_error, 1e-5) << cs.name << " seed " << seed;
    }
  }
}

TEST(Autograd, OpsStayFiniteOnFiniteInputs) {
  std::mt19937_64 rng(15);
  auto x = V::constant(random_tensor({4, 6}, rng, -50, 50));
  auto g = V::constant(TD({6}, 1.0));
  auto b = V::constant(TD({6}, 0.0));
  EXPECT_TRUE(all_finite(softmax(x).value()));
  EXPECT_TRUE(all_finite(mish(x).value()));
  EXPECT_TRUE(all_finite(layer_norm(x, g, b).value()));
}
