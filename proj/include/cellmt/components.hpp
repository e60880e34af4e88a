#pragma once

#include <numeric>
#include <utility>
#include <vector>

#include "cellmt/error.hpp"
#include "cellmt/tensor.hpp"

namespace cellmt {

struct Centroid {
  double row = 0;
  double col = 0;
};

// 8-connected labeling. Labels run 1..num_components in raster order of each
// component's first pixel; 0 is background.
struct LabeledComponents {
  LabelMap label_map;
  int num_components = 0;
  std::vector<Centroid> centroids;  // index = label - 1
  std::vector<int> areas;
};

namespace detail {

inline int find_root(std::vector<int>& parent, int a) {
  while (parent[a] != a) {
    parent[a] = parent[parent[a]];
    a = parent[a];
  }
  return a;
}

inline void unite(std::vector<int>& parent, int a, int b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a == b) return;
  if (a < b) std::swap(a, b);
  parent[a] = b;
}

}  // namespace detail

// Two-pass union-find labeling.
inline LabeledComponents count_components(const BinaryMask& mask) {
  const int h = mask.height;
  const int w = mask.width;
  LabeledComponents out;
  out.label_map = LabelMap(h, w, 0);
  std::vector<int> parent{0};
  auto& lab = out.label_map;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      // already-visited neighbours: W, NW, N, NE
      const int ny[4] = {y, y - 1, y - 1, y - 1};
      const int nx[4] = {x - 1, x - 1, x, x + 1};
      int current = 0;
      for (int k = 0; k < 4; ++k) {
        if (!lab.in_bounds(ny[k], nx[k])) continue;
        const int l = lab(ny[k], nx[k]);
        if (l == 0) continue;
        if (current == 0) {
          current = l;
        } else {
          detail::unite(parent, current, l);
        }
      }
      if (current == 0) {
        current = static_cast<int>(parent.size());
        parent.push_back(current);
      }
      lab(y, x) = current;
    }
  }
  // Compact roots into raster order of first appearance.
  std::vector<int> final_label(parent.size(), 0);
  int next = 0;
  for (auto& l : lab.data) {
    if (l == 0) continue;
    const int root = detail::find_root(parent, l);
    if (final_label[root] == 0) final_label[root] = ++next;
    l = final_label[root];
  }
  out.num_components = next;
  out.areas.assign(next, 0);
  std::vector<double> sum_r(next, 0.0), sum_c(next, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int l = lab(y, x);
      if (l == 0) continue;
      ++out.areas[l - 1];
      sum_r[l - 1] += y;
      sum_c[l - 1] += x;
    }
  }
  out.centroids.resize(next);
  for (int i = 0; i < next; ++i) {
    out.centroids[i] = {sum_r[i] / out.areas[i], sum_c[i] / out.areas[i]};
  }
  return out;
}

template <typename T>
BinaryMask threshold_mask(const Grid<T>& probs, double threshold) {
  BinaryMask out(probs.height, probs.width, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out.data[i] = probs.data[i] >= threshold ? 1 : 0;
  }
  return out;
}

// Removes 8-connected components with fewer than `min_area` pixels.
inline BinaryMask remove_small_components(const BinaryMask& mask, int min_area) {
  if (min_area <= 0) return mask;
  const auto comps = count_components(mask);
  BinaryMask out(mask.height, mask.width, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const int l = comps.label_map.data[i];
    out.data[i] = (l != 0 && comps.areas[l - 1] >= min_area) ? 1 : 0;
  }
  return out;
}

template <typename T>
BinaryMask binarize_and_clean(const Grid<T>& probs, double threshold, int min_area) {
  detail::require(threshold > 0 && threshold < 1, "threshold must lie in (0, 1)");
  detail::require(min_area >= 0, "min_area must be >= 0");
  return remove_small_components(threshold_mask(probs, threshold), min_area);
}

}  // namespace cellmt
