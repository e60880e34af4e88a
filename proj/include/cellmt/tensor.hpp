#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cellmt/error.hpp"

namespace cellmt {

// Dense channel-major (C, H, W) tensor. Element (c, y, x) lives at
// data[(c * H + y) * W + x], so a single channel is one contiguous plane.
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] std::size_t plane() const {
    return static_cast<std::size_t>(height) * width;
  }

  T& operator()(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  const T& operator()(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  std::span<T> channel(int c) {
    return {data.data() + static_cast<std::size_t>(c) * plane(), plane()};
  }
  std::span<const T> channel(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * plane(), plane()};
  }

  [[nodiscard]] bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

// Single-channel row-major H x W grid, used for masks, label maps, and
// probability maps.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{})
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  [[nodiscard]] std::size_t size() const { return data.size(); }
  T& operator()(int y, int x) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  const T& operator()(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  [[nodiscard]] bool in_bounds(int y, int x) const {
    return y >= 0 && y < height && x >= 0 && x < width;
  }
  template <typename U>
  [[nodiscard]] bool same_shape(const Grid<U>& o) const {
    return height == o.height && width == o.width;
  }
};

using BinaryMask = Grid<unsigned char>;
using LabelMap = Grid<int>;

inline std::string shape_string(int h, int w) {
  return std::to_string(h) + "x" + std::to_string(w);
}

}  // namespace cellmt
