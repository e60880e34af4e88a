#include <cellmt/layers.hpp>

#include <gtest/gtest.h>

#include <functional>
#include <random>

using namespace cellmt;

namespace {

Tensor<double> random_tensor(int c, int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor<double> t(c, h, w);
  for (auto& v : t.data) v = d(rng);
  return t;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Central difference of f along coordinate i of x.
double numeric_partial(std::vector<double>& x, std::size_t i, const std::function<double()>& f) {
  const double h = 1e-6;
  const double saved = x[i];
  x[i] = saved + h;
  const double up = f();
  x[i] = saved - h;
  const double down = f();
  x[i] = saved;
  return (up - down) / (2 * h);
}

}  // namespace

TEST(Conv, MatchesDirectConvolution) {
  std::mt19937_64 rng(1);
  const auto in = random_tensor(3, 5, 7, rng);
  const auto w = random_vec(4 * 3 * 9, rng);
  const auto b = random_vec(4, rng);
  const auto out = layers::conv_forward<double>(in, w, b, 4, 3);
  for (int o = 0; o < 4; ++o) {
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 7; ++x) {
        double s = b[o];
        for (int c = 0; c < 3; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = y + ky - 1, sx = x + kx - 1;
              if (sy < 0 || sy >= 5 || sx < 0 || sx >= 7) continue;
              s += w[((o * 3 + c) * 3 + ky) * 3 + kx] * in(c, sy, sx);
            }
          }
        }
        EXPECT_NEAR(out(o, y, x), s, 1e-12);
      }
    }
  }
}

TEST(Conv, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int k : {1, 3}) {
    auto in = random_tensor(2, 4, 6, rng);
    auto w = random_vec(3 * 2 * k * k, rng);
    auto b = random_vec(3, rng);
    const auto probe = random_tensor(3, 4, 6, rng);
    auto loss = [&] {
      return dot(layers::conv_forward<double>(in, w, b, 3, k).data, probe.data);
    };
    std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
    Tensor<double> gin;
    layers::conv_backward<double>(in, w, probe, k, gw, gb, &gin);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(gw[i], numeric_partial(w, i, loss), 1e-6);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(gb[i], numeric_partial(b, i, loss), 1e-6);
    for (std::size_t i = 0; i < in.size(); ++i) {
      EXPECT_NEAR(gin.data[i], numeric_partial(in.data, i, loss), 1e-6);
    }
  }
}

TEST(Conv, BandedIm2colMatchesDirectEvaluation) {
  // 96 channels x 9 taps x 256 columns per row forces several row bands.
  std::mt19937_64 rng(3);
  const int c_in = 96, h = 64, w_px = 256;
  const auto in = random_tensor(c_in, h, w_px, rng);
  const auto w = random_vec(2 * c_in * 9, rng);
  const auto b = random_vec(2, rng);
  ASSERT_LT(layers::detail::band_rows(c_in, 3, h, w_px), h);
  const auto out = layers::conv_forward<double>(in, w, b, 2, 3);
  for (auto [y, x] : {std::pair{0, 0}, {h - 1, w_px - 1}, {17, 5}, {18, 200}, {40, 64}}) {
    double s = b[1];
    for (int c = 0; c < c_in; ++c) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int sy = y + ky - 1, sx = x + kx - 1;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w_px) continue;
          s += w[((c_in + c) * 3 + ky) * 3 + kx] * in(c, sy, sx);
        }
      }
    }
    EXPECT_NEAR(out(1, y, x), s, 1e-9);
  }
}

TEST(Pooling, MaxpoolRoutesGradientToArgmax) {
  Tensor<double> in(1, 2, 4);
  in.data = {1, 5, 2, 0, 3, 4, 9, 1};
  std::vector<std::uint32_t> argmax;
  const auto out = layers::maxpool_forward(in, &argmax);
  ASSERT_EQ(out.data, (std::vector<double>{5, 9}));
  Tensor<double> g(1, 1, 2);
  g.data = {1.5, -2.0};
  const auto gin = layers::maxpool_backward(g, argmax, 2, 4);
  EXPECT_EQ(gin.data, (std::vector<double>{0, 1.5, 0, 0, 0, 0, -2.0, 0}));
}

TEST(Upsample, BackwardIsAdjointOfForward) {
  std::mt19937_64 rng(4);
  const auto x = random_tensor(2, 3, 3, rng);
  const auto y = random_tensor(2, 6, 6, rng);
  const double lhs = dot(layers::upsample_forward(x).data, y.data);
  const double rhs = dot(x.data, layers::upsample_backward(y).data);
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Dense, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto x = random_vec(5, rng);
  auto w = random_vec(3 * 5, rng);
  auto b = random_vec(3, rng);
  const auto probe = random_vec(3, rng);
  auto loss = [&] { return dot(layers::dense_forward<double>(x, w, b), probe); };
  std::vector<double> gw(w.size(), 0.0), gb(3, 0.0);
  const auto gx = layers::dense_backward<double>(x, w, probe, gw, gb);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(gw[i], numeric_partial(w, i, loss), 1e-7);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(gx[i], numeric_partial(x, i, loss), 1e-7);
}

TEST(Dropout, ScalesKeptUnits) {
  std::mt19937_64 rng(6);
  std::vector<double> v(10000, 1.0), mask;
  layers::dropout_forward(v, 0.2, rng, mask);
  double kept = 0;
  for (double m : mask) {
    ASSERT_TRUE(m == 0.0 || std::abs(m - 1.25) < 1e-12);
    kept += m > 0;
  }
  EXPECT_NEAR(kept / 10000.0, 0.8, 0.02);
}
