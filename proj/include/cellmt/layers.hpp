#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "cellmt/tensor.hpp"

// Stateless forward/backward kernels for the network. Activations are
// channel-major tensors; weights are plain row-major buffers.
namespace cellmt::layers {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Upper bound on the im2col scratch buffer (elements). Large images are
// processed in horizontal bands of whole rows.
inline constexpr std::size_t kIm2colBudget = std::size_t{1} << 22;

namespace detail {

inline int band_rows(int in_ch, int k, int h, int w) {
  const std::size_t per_row = static_cast<std::size_t>(in_ch) * k * k * w;
  const auto rows = static_cast<int>(std::max<std::size_t>(1, kIm2colBudget / per_row));
  return std::min(rows, h);
}

// Fills col (K x band_len) for output rows [y0, y1), K = in_ch * k * k,
// row index ordered (channel, ky, kx) to match the weight layout.
template <typename T>
void im2col(const Tensor<T>& in, int k, int y0, int y1, std::vector<T>& col) {
  const int h = in.height, w = in.width, pad = k / 2;
  const int rows = y1 - y0;
  const std::size_t band = static_cast<std::size_t>(rows) * w;
  col.assign(static_cast<std::size_t>(in.channels) * k * k * band, T(0));
  std::size_t r = 0;
  for (int c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++r) {
        T* dst = col.data() + r * band;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(w, w - dx);
        for (int y = y0; y < y1; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h || x_lo >= x_hi) continue;
          const T* src = &in(c, sy, 0);
          T* row = dst + static_cast<std::size_t>(y - y0) * w;
          std::copy(src + x_lo + dx, src + x_hi + dx, row + x_lo);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& col, int k, int y0, int y1, Tensor<T>& grad_in) {
  const int h = grad_in.height, w = grad_in.width, pad = k / 2;
  const std::size_t band = static_cast<std::size_t>(y1 - y0) * w;
  std::size_t r = 0;
  for (int c = 0; c < grad_in.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++r) {
        const T* src = col.data() + r * band;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(w, w - dx);
        for (int y = y0; y < y1; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h || x_lo >= x_hi) continue;
          T* dst = &grad_in(c, sy, 0);
          const T* row = src + static_cast<std::size_t>(y - y0) * w;
          for (int x = x_lo; x < x_hi; ++x) dst[x + dx] += row[x];
        }
      }
    }
  }
}

}  // namespace detail

// Same-padded k x k convolution, stride 1. weights: out_ch x (in_ch*k*k).
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& in, std::span<const T> weights,
                       std::span<const T> bias, int out_ch, int k) {
  const int h = in.height, w = in.width;
  const int kdim = in.channels * k * k;
  Tensor<T> out(out_ch, h, w);
  ConstMatrixMap<T> wmat(weights.data(), out_ch, kdim);
  MatrixMap<T> omat(out.data.data(), out_ch, static_cast<Eigen::Index>(h) * w);
  std::vector<T> col;
  const int step = detail::band_rows(in.channels, k, h, w);
  for (int y0 = 0; y0 < h; y0 += step) {
    const int y1 = std::min(h, y0 + step);
    const Eigen::Index n = static_cast<Eigen::Index>(y1 - y0) * w;
    if (k == 1) {
      ConstMatrixMap<T> imat(in.data.data(), in.channels, static_cast<Eigen::Index>(h) * w);
      omat.middleCols(static_cast<Eigen::Index>(y0) * w, n).noalias() =
          wmat * imat.middleCols(static_cast<Eigen::Index>(y0) * w, n);
    } else {
      detail::im2col(in, k, y0, y1, col);
      ConstMatrixMap<T> cmat(col.data(), kdim, n);
      omat.middleCols(static_cast<Eigen::Index>(y0) * w, n).noalias() = wmat * cmat;
    }
  }
  for (int c = 0; c < out_ch; ++c) {
    auto ch = out.channel(c);
    const T b = bias[c];
    for (auto& v : ch) v += b;
  }
  return out;
}

// Accumulates weight/bias gradients; fills grad_in unless it is null.
template <typename T>
void conv_backward(const Tensor<T>& in, std::span<const T> weights, const Tensor<T>& grad_out,
                   int k, std::span<T> grad_w, std::span<T> grad_b, Tensor<T>* grad_in) {
  const int h = in.height, w = in.width;
  const int out_ch = grad_out.channels;
  const int kdim = in.channels * k * k;
  ConstMatrixMap<T> wmat(weights.data(), out_ch, kdim);
  MatrixMap<T> gw(grad_w.data(), out_ch, kdim);
  ConstMatrixMap<T> gomat(grad_out.data.data(), out_ch, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < out_ch; ++c) {
    T s = 0;
    for (auto v : grad_out.channel(c)) s += v;
    grad_b[c] += s;
  }
  if (grad_in) *grad_in = Tensor<T>(in.channels, h, w);
  std::vector<T> col;
  std::vector<T> gcol;
  const int step = detail::band_rows(in.channels, k, h, w);
  for (int y0 = 0; y0 < h; y0 += step) {
    const int y1 = std::min(h, y0 + step);
    const Eigen::Index off = static_cast<Eigen::Index>(y0) * w;
    const Eigen::Index n = static_cast<Eigen::Index>(y1 - y0) * w;
    const auto go = gomat.middleCols(off, n);
    if (k == 1) {
      ConstMatrixMap<T> imat(in.data.data(), in.channels, static_cast<Eigen::Index>(h) * w);
      gw.noalias() += go * imat.middleCols(off, n).transpose();
      if (grad_in) {
        MatrixMap<T> gi(grad_in->data.data(), in.channels, static_cast<Eigen::Index>(h) * w);
        gi.middleCols(off, n).noalias() = wmat.transpose() * go;
      }
    } else {
      detail::im2col(in, k, y0, y1, col);
      ConstMatrixMap<T> cmat(col.data(), kdim, n);
      gw.noalias() += go * cmat.transpose();
      if (grad_in) {
        gcol.resize(static_cast<std::size_t>(kdim) * n);
        MatrixMap<T> gc(gcol.data(), kdim, n);
        gc.noalias() = wmat.transpose() * go;
        detail::col2im_add(gcol, k, y0, y1, *grad_in);
      }
    }
  }
}

template <typename T>
void relu_inplace(std::vector<T>& v) {
  for (auto& x : v) x = x > T(0) ? x : T(0);
}

// grad *= (activation > 0), where activation is the ReLU output.
template <typename T>
void relu_backward_inplace(const std::vector<T>& activation, std::vector<T>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activation[i] > T(0))) grad[i] = T(0);
  }
}

// Inverted dropout: kept units are scaled by 1/(1-rate). mask holds the
// per-element multiplier (0 or 1/(1-rate)).
template <typename T>
void dropout_forward(std::vector<T>& v, double rate, std::mt19937_64& rng, std::vector<T>& mask) {
  mask.assign(v.size(), T(1));
  if (rate <= 0) return;
  std::bernoulli_distribution drop(rate);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < v.size(); ++i) {
    mask[i] = drop(rng) ? T(0) : keep_scale;
    v[i] *= mask[i];
  }
}

template <typename T>
void dropout_backward(const std::vector<T>& mask, std::vector<T>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
}

// 2x2 max pooling, stride 2. argmax stores the flat input index per output.
template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& in, std::vector<std::uint32_t>* argmax) {
  const int oh = in.height / 2, ow = in.width / 2;
  Tensor<T> out(in.channels, oh, ow);
  if (argmax) argmax->resize(out.size());
  std::size_t o = 0;
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x, ++o) {
        const std::size_t base =
            (static_cast<std::size_t>(c) * in.height + 2 * y) * in.width + 2 * x;
        std::size_t best = base;
        for (std::size_t cand : {base + 1, base + in.width, base + in.width + 1}) {
          if (in.data[cand] > in.data[best]) best = cand;
        }
        out.data[o] = in.data[best];
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                           int in_h, int in_w) {
  Tensor<T> g(grad_out.channels, in_h, in_w);
  for (std::size_t o = 0; o < grad_out.size(); ++o) g.data[argmax[o]] += grad_out.data[o];
  return g;
}

// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample_forward(const Tensor<T>& in) {
  Tensor<T> out(in.channels, in.height * 2, in.width * 2);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) out(c, y, x) = in(c, y / 2, x / 2);
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_backward(const Tensor<T>& grad_out) {
  Tensor<T> g(grad_out.channels, grad_out.height / 2, grad_out.width / 2);
  for (int c = 0; c < grad_out.channels; ++c) {
    for (int y = 0; y < grad_out.height; ++y) {
      for (int x = 0; x < grad_out.width; ++x) g(c, y / 2, x / 2) += grad_out(c, y, x);
    }
  }
  return g;
}

// Channel concatenation [a; b]; spatial sizes must agree.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& g, int first_channels, Tensor<T>& ga, Tensor<T>& gb) {
  ga = Tensor<T>(first_channels, g.height, g.width);
  gb = Tensor<T>(g.channels - first_channels, g.height, g.width);
  std::copy(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(ga.size()), ga.data.begin());
  std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(ga.size()), g.data.end(), gb.data.begin());
}

template <typename T>
std::vector<T> global_average_pool(const Tensor<T>& in) {
  std::vector<T> out(in.channels);
  const auto n = static_cast<T>(in.plane());
  for (int c = 0; c < in.channels; ++c) {
    T s = 0;
    for (auto v : in.channel(c)) s += v;
    out[c] = s / n;
  }
  return out;
}

template <typename T>
Tensor<T> global_average_pool_backward(std::span<const T> grad, int h, int w) {
  Tensor<T> g(static_cast<int>(grad.size()), h, w);
  const T scale = T(1) / static_cast<T>(static_cast<std::size_t>(h) * w);
  for (int c = 0; c < g.channels; ++c) {
    auto ch = g.channel(c);
    std::fill(ch.begin(), ch.end(), grad[c] * scale);
  }
  return g;
}

// y = W x + b with W: out x in, row-major.
template <typename T>
std::vector<T> dense_forward(std::span<const T> x, std::span<const T> weights,
                             std::span<const T> bias) {
  const auto in = static_cast<Eigen::Index>(x.size());
  const auto out = static_cast<Eigen::Index>(bias.size());
  std::vector<T> y(bias.begin(), bias.end());
  ConstMatrixMap<T> wm(weights.data(), out, in);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x.data(), in);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> yv(y.data(), out);
  yv.noalias() += wm * xv;
  return y;
}

template <typename T>
std::vector<T> dense_backward(std::span<const T> x, std::span<const T> weights,
                              std::span<const T> grad_y, std::span<T> grad_w, std::span<T> grad_b) {
  const auto in = static_cast<Eigen::Index>(x.size());
  const auto out = static_cast<Eigen::Index>(grad_y.size());
  ConstMatrixMap<T> wm(weights.data(), out, in);
  MatrixMap<T> gw(grad_w.data(), out, in);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x.data(), in);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> gy(grad_y.data(), out);
  gw.noalias() += gy * xv.transpose();
  for (Eigen::Index i = 0; i < out; ++i) grad_b[i] += grad_y[i];
  std::vector<T> gx(x.size());
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gxv(gx.data(), in);
  gxv.noalias() = wm.transpose() * gy;
  return gx;
}

template <typename T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

}  // namespace cellmt::layers
