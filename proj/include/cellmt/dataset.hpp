#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cellmt/error.hpp"
#include "cellmt/tensor.hpp"

namespace cellmt {

struct Point {
  int row = 0;
  int col = 0;
  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};

inline std::string to_string(const Point& p) {
  return "(" + std::to_string(p.row) + "," + std::to_string(p.col) + ")";
}

// Point annotations for one image: one pixel per cell, origin top-left.
class PointSet {
 public:
  PointSet() = default;

  // Throws InvalidArgument when a point is out of bounds or duplicated.
  PointSet(std::vector<Point> points, int image_height, int image_width)
      : points_(std::move(points)), height_(image_height), width_(image_width) {
    detail::require(height_ > 0 && width_ > 0,
                    "point set needs positive image dimensions");
    std::set<Point> seen;
    for (const auto& p : points_) {
      if (p.row < 0 || p.row >= height_ || p.col < 0 || p.col >= width_) {
        throw InvalidArgument("point " + to_string(p) + " lies outside the " +
                              shape_string(height_, width_) + " image");
      }
      if (!seen.insert(p).second) {
        throw InvalidArgument("duplicate point " + to_string(p));
      }
    }
  }

  [[nodiscard]] const std::vector<Point>& points() const { return points_; }
  [[nodiscard]] std::size_t size() const { return points_.size(); }
  [[nodiscard]] bool empty() const { return points_.empty(); }
  [[nodiscard]] int image_height() const { return height_; }
  [[nodiscard]] int image_width() const { return width_; }

 private:
  std::vector<Point> points_;
  int height_ = 0;
  int width_ = 0;
};

enum class CountSource { ExactFromPoints, Eyeballed };

inline const char* to_string(CountSource s) {
  return s == CountSource::ExactFromPoints ? "exact" : "eyeballed";
}

struct CellCount {
  int value = 0;
  CountSource source = CountSource::ExactFromPoints;
};

// D1 carries points and the exact count; D2 carries an eyeballed count only.
enum class SupervisionLevel { D1, D2 };

inline const char* to_string(SupervisionLevel l) {
  return l == SupervisionLevel::D1 ? "D1" : "D2";
}

struct AnnotatedImage {
  std::string image_id;
  Tensor<float> pixels;  // 3 x H x W, values in [0, 1]
  std::optional<PointSet> points;
  CellCount count;
  SupervisionLevel level = SupervisionLevel::D1;
  // Eyeballed estimate kept alongside the points when both exist, so the
  // record can later be demoted to D2 by the partitioner.
  std::optional<int> eyeballed;
  std::string split_hint;

  [[nodiscard]] int height() const { return pixels.height; }
  [[nodiscard]] int width() const { return pixels.width; }
};

struct GroundTruthMask {
  BinaryMask mask;
  int dilation_radius = 0;
};

inline CellCount count_from_points(const PointSet& points) {
  if (points.empty()) {
    throw InvalidArgument("cannot derive a cell count from an empty point set");
  }
  return {static_cast<int>(points.size()), CountSource::ExactFromPoints};
}

// Throws InvalidArgument describing the first violated invariant.
inline void validate(const AnnotatedImage& img) {
  const std::string who = "image '" + img.image_id + "': ";
  detail::require(img.pixels.channels == 3, who + "expected 3 channels");
  detail::require(img.height() > 0 && img.width() > 0, who + "empty image");
  if (img.height() % 16 != 0 || img.width() % 16 != 0) {
    throw InvalidArgument(who + "dimensions " +
                          shape_string(img.height(), img.width()) +
                          " are not divisible by 16; center-crop the image "
                          "(--center-crop) or pad it to a multiple of 16");
  }
  detail::require(img.count.value >= 1, who + "cell count must be >= 1");
  if (img.level == SupervisionLevel::D1) {
    detail::require(img.points.has_value(), who + "D1 record without points");
    detail::require(img.count.source == CountSource::ExactFromPoints,
                    who + "D1 count must come from points");
    detail::require(img.count.value == static_cast<int>(img.points->size()),
                    who + "D1 count differs from the number of points");
    detail::require(img.points->image_height() == img.height() &&
                        img.points->image_width() == img.width(),
                    who + "point set dimensions differ from the image");
  } else {
    detail::require(!img.points.has_value(), who + "D2 record carries points");
    detail::require(img.count.source == CountSource::Eyeballed,
                    who + "D2 count must be eyeballed");
  }
}

// D2 view of a record: points dropped, eyeballed count used as ground truth.
inline AnnotatedImage demote_to_d2(const AnnotatedImage& img) {
  if (img.level == SupervisionLevel::D2) return img;
  if (!img.eyeballed) {
    throw InvalidArgument("image '" + img.image_id +
                          "' has no eyeballed count and cannot be used as D2");
  }
  AnnotatedImage out = img;
  out.points.reset();
  out.count = {std::max(1, *img.eyeballed), CountSource::Eyeballed};
  out.level = SupervisionLevel::D2;
  return out;
}

// Pixel (r, c) is set iff it lies within Euclidean distance `radius` of some
// point (inclusive disk).
inline GroundTruthMask generate_mask(const PointSet& points, int radius) {
  detail::require(radius >= 1, "dilation radius must be >= 1");
  detail::require(!points.empty(), "cannot build a mask from an empty point set");
  const int h = points.image_height();
  const int w = points.image_width();
  GroundTruthMask out{BinaryMask(h, w, 0), radius};
  const int r2 = radius * radius;
  for (const auto& p : points.points()) {
    if (p.row < 0 || p.row >= h || p.col < 0 || p.col >= w) {
      throw InvalidArgument("point " + to_string(p) + " lies outside the mask");
    }
    for (int dr = -radius; dr <= radius; ++dr) {
      for (int dc = -radius; dc <= radius; ++dc) {
        if (dr * dr + dc * dc > r2) continue;
        const int r = p.row + dr;
        const int c = p.col + dc;
        if (out.mask.in_bounds(r, c)) out.mask(r, c) = 1;
      }
    }
  }
  return out;
}

struct SupervisionPartition {
  std::vector<std::string> d1;
  std::vector<std::string> d2;
};

// Seeded shuffle of the (sorted) ids, then the first round(p/100 * n) go to
// D1. Because the order depends only on the ids and the seed, D1 at a smaller
// p is always a prefix, hence a subset, of D1 at a larger p.
inline SupervisionPartition partition(std::vector<std::string> train_ids,
                                      int p_percent, std::uint64_t seed) {
  detail::require(p_percent >= 0 && p_percent <= 100,
                  "p_percent must lie in [0, 100]");
  std::sort(train_ids.begin(), train_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(train_ids.begin(), train_ids.end(), rng);
  const auto n = static_cast<double>(train_ids.size());
  const auto n_d1 = static_cast<std::size_t>(std::lround(p_percent / 100.0 * n));
  SupervisionPartition out;
  out.d1.assign(train_ids.begin(), train_ids.begin() + n_d1);
  out.d2.assign(train_ids.begin() + n_d1, train_ids.end());
  return out;
}

struct DatasetSplit {
  std::vector<std::string> train_d1;
  std::vector<std::string> train_d2;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  int p_percent = 100;
};

struct SplitSettings {
  double validation_fraction = 0.2;  // of the training pool
  double test_fraction = 0.2;        // of everything, when no hints exist
  int test_fold = 0;                 // used with "fold<k>" split hints
  std::uint64_t split_seed = 0;
};

namespace detail {

inline std::vector<std::string> seeded_order(std::vector<std::string> ids,
                                             std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  return ids;
}

}  // namespace detail

// Builds train/validation/test from split hints, then partitions the training
// pool into D1/D2. Hints: "train", "val", "test", "fold<k>", or empty. With
// fold hints, fold `test_fold` is the test set. Images without any hint are
// distributed by `test_fraction` and `validation_fraction`.
inline DatasetSplit make_split(const std::vector<AnnotatedImage>& images,
                               int p_percent, std::uint64_t partition_seed,
                               const SplitSettings& settings = {}) {
  std::vector<std::string> train_pool, val, test, unassigned;
  const std::string test_fold = "fold" + std::to_string(settings.test_fold);
  for (const auto& img : images) {
    const auto& hint = img.split_hint;
    if (hint == "train") {
      train_pool.push_back(img.image_id);
    } else if (hint == "val" || hint == "validation") {
      val.push_back(img.image_id);
    } else if (hint == "test") {
      test.push_back(img.image_id);
    } else if (hint.rfind("fold", 0) == 0) {
      (hint == test_fold ? test : unassigned).push_back(img.image_id);
    } else {
      unassigned.push_back(img.image_id);
    }
  }
  const bool have_test = !test.empty();
  auto order = detail::seeded_order(unassigned, settings.split_seed);
  std::size_t cursor = 0;
  if (!have_test) {
    const auto n_test = static_cast<std::size_t>(
        std::lround(settings.test_fraction * static_cast<double>(order.size())));
    test.assign(order.begin(), order.begin() + n_test);
    cursor = n_test;
  }
  std::vector<std::string> rest(order.begin() + cursor, order.end());
  if (val.empty()) {
    std::vector<std::string> pool = rest;
    pool.insert(pool.end(), train_pool.begin(), train_pool.end());
    pool = detail::seeded_order(pool, settings.split_seed + 1);
    const auto n_val = static_cast<std::size_t>(std::lround(
        settings.validation_fraction * static_cast<double>(pool.size())));
    val.assign(pool.begin(), pool.begin() + n_val);
    train_pool.assign(pool.begin() + n_val, pool.end());
  } else {
    train_pool.insert(train_pool.end(), rest.begin(), rest.end());
  }
  auto part = partition(train_pool, p_percent, partition_seed);
  DatasetSplit split;
  split.train_d1 = std::move(part.d1);
  split.train_d2 = std::move(part.d2);
  split.validation = std::move(val);
  split.test = std::move(test);
  split.p_percent = p_percent;
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace cellmt
