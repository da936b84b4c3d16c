#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <tuple>

#include "helpers.hpp"
#include "sttr/ops.hpp"

using namespace sttr;
using testing_util::D;
using testing_util::max_abs_diff;
using testing_util::randn;

// ---------------------------------------------------------------- softmax

TEST(Softmax, EqualLogitsGiveUniform) {
  auto y = softmax(D({2}, {0, 0}), 0);
  EXPECT_DOUBLE_EQ(y.data()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.data()[1], 0.5);
  for (double c : {-7.0, 0.0, 3.5, 1e3}) {
    auto u = softmax(D({4}, {c, c, c, c}), 0);
    for (double v : u.data()) EXPECT_NEAR(v, 0.25, 1e-15);
  }
}

TEST(Softmax, OneTwoThree) {
  // Oracle in long double.
  long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L), z = e1 + e2 + e3;
  auto y = softmax(D({3}, {1, 2, 3}), 0);
  EXPECT_NEAR(y.data()[0], static_cast<double>(e1 / z), 1e-12);
  EXPECT_NEAR(y.data()[1], static_cast<double>(e2 / z), 1e-12);
  EXPECT_NEAR(y.data()[2], static_cast<double>(e3 / z), 1e-12);
  EXPECT_NEAR(y.data()[0], 0.09003, 1e-5);
  EXPECT_NEAR(y.data()[1], 0.24473, 1e-5);
  EXPECT_NEAR(y.data()[2], 0.66524, 1e-5);
}

TEST(Softmax, RowsSumToOneOnRandomInputs) {
  Rng r(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = randn(r, {3, 4, 5}, 10.0);
    const std::size_t axis = r.below(3);
    auto y = softmax(x, axis);
    const std::size_t extent = x.size(axis);
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < 3; ++a) inner *= x.size(a);
    const std::size_t outer = x.numel() / (extent * inner);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        double s = 0;
        for (std::size_t e = 0; e < extent; ++e) s += y.data()[(o * extent + e) * inner + i];
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  auto y = softmax(D({2}, {1000, 0}), 0);
  EXPECT_DOUBLE_EQ(y.data()[0], 1.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 0.0);
}

TEST(Softmax, Errors) {
  EXPECT_THROW(softmax(D({2}, {0.0, std::numeric_limits<double>::quiet_NaN()}), 0), NumericError);
  EXPECT_THROW(softmax(D({2, 0}, {}), 1), ShapeError);
  EXPECT_THROW(softmax(D({2}, {0, 0}), 1), ShapeError);
}

// ---------------------------------------------------------------- linear maps

TEST(LinearMap, Examples) {
  auto x = D({2}, {1, 2});
  EXPECT_EQ(max_abs_diff(linear_map(x, D({2, 2}, {1, 0, 0, 1})), D({2}, {1, 2})), 0.0);
  EXPECT_EQ(max_abs_diff(linear_map(x, D({2, 2}, {0, 1, 1, 0})), D({2}, {2, 1})), 0.0);
  auto y = linear_map(D({2}, {1, 1}), D({2, 1}, {2, 3}), std::optional<D>(D({1}, {1})));
  EXPECT_EQ(y.shape(), Shape{1});
  EXPECT_DOUBLE_EQ(y.item(), 6.0);
}

TEST(LinearMap, ShapeMismatch) {
  EXPECT_THROW(linear_map(D({3}, {1, 2, 3}), D({2, 2}, {1, 0, 0, 1})), ShapeError);
  EXPECT_THROW(linear_map(D({2}, {1, 2}), D({2, 2}, {1, 0, 0, 1}), std::optional<D>(D({3}, {0, 0, 0}))), ShapeError);
}

TEST(LinearMap, LeadingAxesAreBatch) {
  Rng r(3);
  auto x = randn(r, {2, 3, 4}), W = randn(r, {4, 5});
  auto y = linear_map(x, W);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 5}));
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += x.at({a, b, k}) * W.at({k, j});
        EXPECT_NEAR(y.at({a, b, j}), s, 1e-12);
      }
}

TEST(Matmul, BatchedAndSharedMatchNaiveProduct) {
  Rng r(5);
  auto a = randn(r, {2, 3, 4, 5});
  auto shared = randn(r, {5, 2});
  auto y = matmul(a, shared);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 4, 2}));
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t q = 0; q < 3; ++q)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
          double s = 0;
          for (std::size_t k = 0; k < 5; ++k) s += a.at({p, q, i, k}) * shared.at({k, j});
          EXPECT_NEAR(y.at({p, q, i, j}), s, 1e-12);
        }
  auto b = randn(r, {2, 3, 5, 3});
  auto z = matmul(a, b);
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t q = 0; q < 3; ++q)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          double s = 0;
          for (std::size_t k = 0; k < 5; ++k) s += a.at({p, q, i, k}) * b.at({p, q, k, j});
          EXPECT_NEAR(z.at({p, q, i, j}), s, 1e-12);
        }
  EXPECT_THROW(matmul(a, randn(r, {4, 2})), ShapeError);
  EXPECT_THROW(matmul(a, randn(r, {2, 2, 5, 3})), ShapeError);
}

TEST(Conv1x1, MatchesNaiveLoopWithStride) {
  Rng r(8);
  auto x = randn(r, {2, 3, 6, 4}), W = randn(r, {3, 5}), b = randn(r, {5});
  auto y = conv1x1(x, W, std::optional<D>(b), 2);
  ASSERT_EQ(y.shape(), (Shape{2, 5, 3, 4}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 5; ++o)
      for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t v = 0; v < 4; ++v) {
          double s = b.at({o});
          for (std::size_t i = 0; i < 3; ++i) s += W.at({i, o}) * x.at({n, i, 2 * t, v});
          EXPECT_NEAR(y.at({n, o, t, v}), s, 1e-12);
        }
}

// ---------------------------------------------------------------- temporal conv

TEST(TemporalConv, BoxFilterOnRamp) {
  auto x = D({1, 1, 4, 1}, {0, 1, 2, 3});
  auto k = D({1, 1, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  auto y = temporal_conv(x, k, std::optional<D>{}, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 1}));
  EXPECT_NEAR(y.data()[0], 1.0 / 3, 1e-15);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-15);
  EXPECT_NEAR(y.data()[2], 2.0, 1e-15);
  EXPECT_NEAR(y.data()[3], 5.0 / 3, 1e-15);
}

TEST(TemporalConv, UnitKernelIsIdentity) {
  Rng r(2);
  auto x = randn(r, {2, 3, 5, 4});
  std::vector<double> eye(9, 0.0);
  for (std::size_t c = 0; c < 3; ++c) eye[c * 3 + c] = 1.0;
  auto y = temporal_conv(x, D({3, 3, 1}, eye), std::optional<D>{}, 1);
  EXPECT_EQ(max_abs_diff(x, y), 0.0);
}

TEST(TemporalConv, StrideTwoHalvesTime) {
  Rng r(2);
  auto y = temporal_conv(randn(r, {1, 2, 8, 3}), randn(r, {4, 2, 9}), std::optional<D>{}, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 4, 3}));
  auto odd = temporal_conv(randn(r, {1, 2, 7, 3}), randn(r, {4, 2, 3}), std::optional<D>{}, 2);
  EXPECT_EQ(odd.size(2), 4u);
}

TEST(TemporalConv, MatchesNaiveLoop) {
  Rng r(4);
  for (std::size_t stride : {1, 2}) {
    auto x = randn(r, {2, 3, 7, 4}), k = randn(r, {2, 3, 5}), b = randn(r, {2});
    auto y = temporal_conv(x, k, std::optional<D>(b), stride);
    const std::size_t Tout = (7 - 1) / stride + 1;
    ASSERT_EQ(y.size(2), Tout);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t t = 0; t < Tout; ++t)
          for (std::size_t v = 0; v < 4; ++v) {
            double s = b.at({o});
            for (std::size_t i = 0; i < 3; ++i)
              for (std::size_t q = 0; q < 5; ++q) {
                const long src = static_cast<long>(t * stride + q) - 2;
                if (src >= 0 && src < 7) s += k.at({o, i, q}) * x.at({n, i, static_cast<std::size_t>(src), v});
              }
            EXPECT_NEAR(y.at({n, o, t, v}), s, 1e-12);
          }
  }
}

TEST(TemporalConv, InteriorIsTimeTranslationEquivariant) {
  Rng r(9);
  auto x = randn(r, {1, 2, 12, 3});
  auto k = randn(r, {2, 2, 3});
  std::vector<double> shifted(x.numel());
  // shifted[t] = x[t - 2]
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < 12; ++t)
      for (std::size_t v = 0; v < 3; ++v)
        shifted[(c * 12 + t) * 3 + v] = t >= 2 ? x.at({0, c, t - 2, v}) : 0.0;
  auto y = temporal_conv(x, k, std::optional<D>{}, 1);
  auto ys = temporal_conv(D(x.shape(), shifted), k, std::optional<D>{}, 1);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 3; t < 11; ++t)
      for (std::size_t v = 0; v < 3; ++v) EXPECT_NEAR(ys.at({0, c, t, v}), y.at({0, c, t - 2, v}), 1e-12);
}

TEST(TemporalConv, Errors) {
  Rng r(1);
  auto x = randn(r, {1, 2, 4, 3});
  EXPECT_THROW(temporal_conv(x, randn(r, {1, 2, 3}), std::optional<D>{}, 3), ShapeError);
  EXPECT_THROW(temporal_conv(x, randn(r, {1, 2, 2}), std::optional<D>{}, 1), ShapeError);
  EXPECT_THROW(temporal_conv(x, randn(r, {1, 3, 3}), std::optional<D>{}, 1), ShapeError);
}

// ---------------------------------------------------------------- batch norm

TEST(BatchNorm, StandardizedInputIsAFixedPoint) {
  // Per channel, values with mean 0 and biased variance 1.
  D x({4, 1, 1, 1}, {1, -1, 1, -1});
  BatchNormState st(1);
  auto y = batch_norm(x, D({1}, {1}), D({1}, {0}), st, Mode::train);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-5);
}

TEST(BatchNorm, ConstantInputMapsToZero) {
  D x = D::full({3, 2, 4}, 7.5);
  BatchNormState st(2);
  auto y = batch_norm(x, D({2}, {1, 1}), D({2}, {0, 0}), st, Mode::train);
  for (double v : y.data()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng r(6);
  auto x = randn(r, {3, 2, 5});
  BatchNormState st(2);
  auto y = batch_norm(x, D({2}, {0, 0}), D({2}, {0.5, -2}), st, Mode::train);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_DOUBLE_EQ(y.at({n, 0, i}), 0.5);
      EXPECT_DOUBLE_EQ(y.at({n, 1, i}), -2.0);
    }
}

TEST(BatchNorm, RunningStatisticsAndEvalMode) {
  D x({4, 1}, {1, 2, 3, 6});  // mean 3, unbiased variance 14/3
  BatchNormState st(1);
  batch_norm(x, D({1}, {1}), D({1}, {0}), st, Mode::train);
  EXPECT_NEAR(st.running_mean[0], 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(st.running_var[0], 0.9 * 1.0 + 0.1 * 14.0 / 3.0, 1e-12);
  st.running_mean[0] = 2.0;
  st.running_var[0] = 4.0 - st.eps;
  auto y = batch_norm(D({1, 1}, {6.0}), D({1}, {3}), D({1}, {1}), st, Mode::eval);
  EXPECT_NEAR(y.item(), 3.0 * (6.0 - 2.0) / 2.0 + 1.0, 1e-12);
}

TEST(BatchNorm, Errors) {
  BatchNormState st(1);
  st.eps = 0.0;
  EXPECT_THROW(batch_norm(D({2, 1}, {1, 2}), D({1}, {1}), D({1}, {0}), st, Mode::train), ShapeError);
  BatchNormState wrong(2);
  EXPECT_THROW(batch_norm(D({2, 1}, {1, 2}), D({1}, {1}), D({1}, {0}), wrong, Mode::train), ShapeError);
}

// ---------------------------------------------------------------- cross entropy

TEST(CrossEntropy, Examples) {
  std::vector<int> zero{0};
  EXPECT_NEAR(cross_entropy(D({1, 4}, {0.3, 0.3, 0.3, 0.3}), zero).item(), std::log(4.0), 1e-12);
  EXPECT_NEAR(cross_entropy(D({1, 3}, {100, 0, 0}), zero).item(), 0.0, 1e-40);
  const double oracle = std::log1p(std::exp(-1.0));  // -ln(e / (e + 1))
  EXPECT_NEAR(cross_entropy(D({1, 2}, {1, 0}), zero).item(), oracle, 1e-12);
  EXPECT_NEAR(oracle, 0.3133, 1e-4);
}

TEST(CrossEntropy, BatchMean) {
  std::vector<int> labels{0, 1};
  const double want = 0.5 * (std::log1p(std::exp(-1.0)) + std::log1p(std::exp(1.0)));
  EXPECT_NEAR(cross_entropy(D({2, 2}, {1, 0, 1, 0}), labels).item(), want, 1e-12);
}

TEST(CrossEntropy, Errors) {
  std::vector<int> bad{2}, neg{-1}, two{0, 1};
  EXPECT_THROW(cross_entropy(D({1, 2}, {1, 0}), bad), ShapeError);
  EXPECT_THROW(cross_entropy(D({1, 2}, {1, 0}), neg), ShapeError);
  EXPECT_THROW(cross_entropy(D({1, 2}, {1, 0}), two), ShapeError);
  std::vector<int> ok{0};
  EXPECT_THROW(cross_entropy(D({1, 2}, {std::numeric_limits<double>::infinity(), 0}), ok), NumericError);
}

// ---------------------------------------------------------------- shape ops

TEST(ShapeOps, PermuteConcatSubsample) {
  D x({2, 3}, {0, 1, 2, 3, 4, 5});
  auto p = permute(x, {1, 0});
  EXPECT_EQ(p.shape(), (Shape{3, 2}));
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), (std::vector<double>{0, 3, 1, 4, 2, 5}));
  EXPECT_THROW(permute(x, {0, 0}), ShapeError);

  auto c = concat<double>({x, D({2, 1}, {9, 8})}, 1);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()),
            (std::vector<double>{0, 1, 2, 9, 3, 4, 5, 8}));
  EXPECT_THROW(concat<double>({x, D({3, 1}, {1, 2, 3})}, 1), ShapeError);

  D t({1, 1, 5, 1}, {0, 1, 2, 3, 4});
  auto s = subsample_time(t, 2);
  EXPECT_EQ(std::vector<double>(s.data().begin(), s.data().end()), (std::vector<double>{0, 2, 4}));

  EXPECT_THROW(reshape(x, {4}), ShapeError);
}

TEST(ShapeOps, MeanAxis) {
  D x({2, 3}, {0, 1, 2, 3, 4, 5});
  auto m0 = mean_axis(x, 0), m1 = mean_axis(x, 1);
  EXPECT_EQ(std::vector<double>(m0.data().begin(), m0.data().end()), (std::vector<double>{1.5, 2.5, 3.5}));
  EXPECT_EQ(std::vector<double>(m1.data().begin(), m1.data().end()), (std::vector<double>{1, 4}));
  EXPECT_DOUBLE_EQ(mean(x).item(), 2.5);
}

TEST(Relu, ClampsNegativesAndPropagatesNaN) {
  auto y = relu(D({4}, {-1.5, 0.0, 2.0, std::numeric_limits<double>::quiet_NaN()}));
  EXPECT_EQ(y.data()[0], 0.0);
  EXPECT_EQ(y.data()[1], 0.0);
  EXPECT_EQ(y.data()[2], 2.0);
  EXPECT_TRUE(std::isnan(y.data()[3]));
}

TEST(Gemm, MatchesNaiveWithTransposesAndRaggedEdges) {
  Rng r(31);
  // Sizes straddle the 4x8 register tile and the 256-deep K block.
  for (auto [m, n, k] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1}, {5, 13, 7}, {4, 8, 256}, {9, 17, 300}}) {
    auto a = randn(r, {m, k}), b = randn(r, {k, n});
    auto at = permute(a, {1, 0}), bt = permute(b, {1, 0});
    std::vector<double> want(m * n, 0.5);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t q = 0; q < k; ++q) want[i * n + j] += a.at({i, q}) * b.at({q, j});
    std::vector<double> plain(m * n, 0.5), trans(m * n, 0.5);
    detail::gemm_acc(m, n, k, detail::row_major(a.data().data(), k), detail::row_major(b.data().data(), n),
                     plain.data(), n);
    detail::gemm_acc(m, n, k, detail::row_major(at.data().data(), m).t(), detail::row_major(bt.data().data(), k).t(),
                     trans.data(), n);
    EXPECT_LT(max_abs_diff(plain, want), 1e-12) << m << "x" << n << "x" << k;
    EXPECT_LT(max_abs_diff(trans, want), 1e-12) << m << "x" << n << "x" << k;
  }
}
