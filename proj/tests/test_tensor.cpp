#include <gtest/gtest.h>

#include <cmath>

#include "dcl/kernels.hpp"
#include "dcl/rng.hpp"

using namespace dcl;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) v = uniform(rng, -1, 1);
  return t;
}

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

// direct loops, CHW input
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                          std::size_t stride, std::size_t pad) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (H + 2 * pad - kh) / stride + 1, ow = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> y(Shape{O, oh, ow});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double s = b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
              const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
              if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
              s += x.at({c, static_cast<std::size_t>(r), static_cast<std::size_t>(q)}) * w.at({o, c, u, v});
            }
        y.at({o, i, j}) = s;
      }
  return y;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Shape, CountsAndRejectsZeroExtent) {
  EXPECT_EQ(Shape({2, 3, 4}).numel(), 24u);
  EXPECT_THROW(Shape({2, 0}), ShapeMismatch);
  EXPECT_THROW(Shape({std::size_t(1) << 40, std::size_t(1) << 40}), Overflow);
  EXPECT_EQ(Shape({5, 1, 28, 28}).without_batch(), Shape({1, 28, 28}));
}

TEST(Tensor, DataLengthMustMatch) {
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeMismatch);
  EXPECT_THROW(ensure_finite(Tensor<float>::from(Shape{1}, {NAN}), "x"), NonFinite);
}

TEST(Matmul, Identity) {
  auto a = Tensor<double>::from(Shape{2, 2}, {1, 0, 0, 1});
  auto b = Tensor<double>::from(Shape{2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(matmul(a, b).vec(), b.vec());
}

TEST(Matmul, RowTimesColumn) {
  auto a = Tensor<double>::from(Shape{1, 2}, {1, 2});
  auto b = Tensor<double>::from(Shape{2, 1}, {3, 4});
  EXPECT_EQ(matmul(a, b).vec(), std::vector<double>{11});
}

TEST(Matmul, InnerMismatch) {
  EXPECT_THROW(matmul(Tensor<double>(Shape{2, 3}), Tensor<double>(Shape{2, 3})), ShapeMismatch);
}

TEST(Matmul, MatchesNaiveLoop) {
  Rng rng = make_rng(7);
  auto a = random_tensor(Shape{7, 5}, rng), b = random_tensor(Shape{5, 3}, rng);
  EXPECT_LT(max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-12);
}

TEST(Matmul, RandomShapesMatchNaiveLoop) {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + uniform_index(rng, 9), k = 1 + uniform_index(rng, 9), n = 1 + uniform_index(rng, 9);
    auto a = random_tensor(Shape{m, k}, rng), b = random_tensor(Shape{k, n}, rng);
    ASSERT_LT(max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-12) << m << "x" << k << "x" << n;
  }
}

TEST(Matmul, Associative) {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor(Shape{4, 6}, rng), b = random_tensor(Shape{6, 5}, rng), c = random_tensor(Shape{5, 3}, rng);
    EXPECT_LT(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-9);
  }
}

TEST(Conv2d, ScalarKernel) {
  Tensor<double> x(Shape{1, 3, 3}, 1.0);
  auto w = Tensor<double>::from(Shape{1, 1, 1, 1}, {2});
  auto y = conv2d(x, w, Tensor<double>(Shape{1}), 1, 0);
  EXPECT_EQ(y.shape(), Shape({1, 3, 3}));
  for (double v : y.vec()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, SumOfEntries) {
  auto x = Tensor<double>::from(Shape{1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> w(Shape{1, 1, 2, 2}, 1.0);
  EXPECT_EQ(conv2d(x, w, Tensor<double>(Shape{1}), 1, 0).vec(), std::vector<double>{10});
}

TEST(Conv2d, StridedPaddedMatchesDirectLoops) {
  Rng rng = make_rng(5);
  auto x = random_tensor(Shape{3, 9, 9}, rng), w = random_tensor(Shape{4, 3, 3, 3}, rng);
  auto b = random_tensor(Shape{4}, rng);
  auto y = conv2d(x, w, b, 2, 1);
  EXPECT_EQ(y.shape(), Shape({4, 5, 5}));
  EXPECT_LT(max_abs_diff(y, naive_conv(x, w, b, 2, 1)), 1e-12);
}

TEST(Conv2d, RandomShapesMatchDirectLoops) {
  Rng rng = make_rng(13);
  int checked = 0;
  while (checked < 100) {
    const std::size_t C = 1 + uniform_index(rng, 3), H = 3 + uniform_index(rng, 6), W = 3 + uniform_index(rng, 6);
    const std::size_t k = 1 + uniform_index(rng, 3), s = 1 + uniform_index(rng, 2), p = uniform_index(rng, 2);
    if ((H + 2 * p) < k || (W + 2 * p) < k) continue;
    if ((H + 2 * p - k) % s || (W + 2 * p - k) % s) continue;
    auto x = random_tensor(Shape{C, H, W}, rng), w = random_tensor(Shape{2, C, k, k}, rng);
    auto b = random_tensor(Shape{2}, rng);
    ASSERT_LT(max_abs_diff(conv2d(x, w, b, s, p), naive_conv(x, w, b, s, p)), 1e-12);
    ++checked;
  }
}

TEST(Conv2d, NonTilingStride) {
  EXPECT_THROW(conv2d(Tensor<double>(Shape{1, 4, 4}), Tensor<double>(Shape{1, 1, 3, 3}), Tensor<double>(Shape{1}), 2, 0),
               NonIntegralOutput);
}

TEST(Conv2d, ChannelMismatch) {
  EXPECT_THROW(conv2d(Tensor<double>(Shape{2, 4, 4}), Tensor<double>(Shape{1, 1, 3, 3}), Tensor<double>(Shape{1}), 1, 0),
               ShapeMismatch);
}

TEST(Conv2d, OneByOneIsPerPositionMatmul) {
  Rng rng = make_rng(17);
  auto x = random_tensor(Shape{3, 4, 5}, rng), w = random_tensor(Shape{6, 3, 1, 1}, rng);
  auto y = conv2d(x, w, Tensor<double>(Shape{6}), 1, 0);
  auto ref = matmul(w.reshaped(Shape{6, 3}), x.reshaped(Shape{3, 20}));
  EXPECT_EQ(y.vec(), ref.vec());
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  Rng rng = make_rng(19);
  auto x = random_tensor(Shape{2, 2, 5, 5}, rng), w = random_tensor(Shape{3, 2, 3, 3}, rng);
  auto b = random_tensor(Shape{3}, rng);
  auto y = conv2d(x, w, b, 2, 1);
  auto dout = random_tensor(y.shape(), rng);
  auto g = conv2d_backward(x, w, dout, 2, 1);
  auto loss = [&](const Tensor<double>& xx, const Tensor<double>& ww, const Tensor<double>& bb) {
    auto yy = conv2d(xx, ww, bb, 2, 1);
    double s = 0;
    for (std::size_t i = 0; i < yy.size(); ++i) s += yy[i] * dout[i];
    return s;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); i += 3) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    EXPECT_NEAR(g.input[i], (loss(xp, w, b) - loss(xm, w, b)) / (2 * h), 1e-7);
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    EXPECT_NEAR(g.weights[i], (loss(x, wp, b) - loss(x, wm, b)) / (2 * h), 1e-7);
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto bp = b, bm = b;
    bp[i] += h;
    bm[i] -= h;
    EXPECT_NEAR(g.bias[i], (loss(x, w, bp) - loss(x, w, bm)) / (2 * h), 1e-7);
  }
}

TEST(MaxPool, MaxOfFour) {
  auto x = Tensor<double>::from(Shape{1, 2, 2}, {1, 2, 3, 4});
  auto r = maxpool2d(x, 2, 2);
  EXPECT_EQ(r.output.vec(), std::vector<double>{4});
  EXPECT_EQ(r.argmax, std::vector<std::size_t>{3});
}

TEST(MaxPool, TiesRouteToLowestIndex) {
  Tensor<double> x(Shape{1, 4, 4}, 0.5);
  auto r = maxpool2d(x, 2, 2);
  for (double v : r.output.vec()) EXPECT_EQ(v, 0.5);
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{0, 2, 8, 10}));
  Tensor<double> dout(r.output.shape(), 1.0);
  auto dx = maxpool2d_backward(dout, r.argmax, x.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) EXPECT_EQ(dx[i], (i == 0 || i == 2 || i == 8 || i == 10) ? 1.0 : 0.0);
}

TEST(MaxPool, MatchesWindowScan) {
  Rng rng = make_rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t H = 2 + uniform_index(rng, 7), W = 2 + uniform_index(rng, 7);
    const std::size_t k = 1 + uniform_index(rng, std::min(H, W)), s = 1 + uniform_index(rng, 3);
    auto x = random_tensor(Shape{2, H, W}, rng);
    auto r = maxpool2d(x, k, s);
    const std::size_t oh = std::min((H - k + s - 1) / s + 1, (H - 1) / s + 1);
    const std::size_t ow = std::min((W - k + s - 1) / s + 1, (W - 1) / s + 1);
    ASSERT_EQ(r.output.shape(), Shape({2, oh, ow}));
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double best = -1e300;
          for (std::size_t u = i * s; u < std::min(H, i * s + k); ++u)
            for (std::size_t v = j * s; v < std::min(W, j * s + k); ++v) best = std::max(best, x.at({c, u, v}));
          ASSERT_EQ(r.output.at({c, i, j}), best);
        }
  }
}

TEST(MaxPool, SixBySixKernelThreeStrideTwo) {
  Rng rng = make_rng(29);
  auto x = random_tensor(Shape{1, 6, 6}, rng);
  auto r = maxpool2d(x, 3, 2);
  EXPECT_EQ(r.output.shape(), Shape({1, 3, 3}));
  // last window overhangs and is truncated to rows/cols 4..5
  EXPECT_EQ(r.output.at({0, 2, 2}), std::max({x.at({0, 4, 4}), x.at({0, 4, 5}), x.at({0, 5, 4}), x.at({0, 5, 5})}));
}

TEST(MaxPool, BackwardOneUnitPerWindow) {
  Rng rng = make_rng(31);
  auto x = random_tensor(Shape{3, 7, 7}, rng);
  auto r = maxpool2d(x, 2, 2);
  Tensor<double> dout(r.output.shape(), 1.0);
  auto dx = maxpool2d_backward(dout, r.argmax, x.shape());
  double total = 0;
  for (double v : dx.vec()) total += v;
  EXPECT_EQ(total, static_cast<double>(r.output.size()));
  for (std::size_t i = 0; i < r.argmax.size(); ++i) EXPECT_EQ(x[r.argmax[i]], r.output[i]);
}

TEST(Ewise, Definitions) {
  EXPECT_EQ(relu(Tensor<double>::from(Shape{3}, {-1, 0, 2})).vec(), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(mul(Tensor<double>::from(Shape{2}, {2, 3}), Tensor<double>::from(Shape{2}, {4, 5})).vec(),
            (std::vector<double>{8, 15}));
  EXPECT_NEAR(pow(Tensor<double>::from(Shape{1}, {8}), 1.0 / 3)[0], 2.0, 1e-15);
  EXPECT_EQ(add(Tensor<double>::from(Shape{2}, {1, 2}), Tensor<double>::from(Shape{2}, {3, 4})).vec(),
            (std::vector<double>{4, 6}));
  EXPECT_EQ(scale(Tensor<double>::from(Shape{2}, {1, -2}), 3.0).vec(), (std::vector<double>{3, -6}));
}

TEST(Ewise, NoBroadcasting) {
  EXPECT_THROW(mul(Tensor<double>(Shape{2}), Tensor<double>(Shape{1, 2})), ShapeMismatch);
  EXPECT_THROW(add(Tensor<double>(Shape{3}), Tensor<double>(Shape{2})), ShapeMismatch);
}

TEST(Rng, SubstreamsAreReproducibleAndDistinct) {
  Rng a = make_rng(1, 2, 3), b = make_rng(1, 2, 3), c = make_rng(1, 2, 4);
  const auto x = a();
  EXPECT_EQ(x, b());
  EXPECT_NE(x, c());
}
