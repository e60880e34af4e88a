#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cellmt/components.hpp"
#include "cellmt/dataset.hpp"
#include "cellmt/error.hpp"

namespace cellmt {

// Reference location on a predicted object used for point distances.
enum class DistanceReference { Centroid, NearestPixel };

struct MatchResult {
  int tp = 0;
  int num_points = 0;
  int num_objects = 0;
  std::vector<std::pair<int, int>> pairs;  // (point index, object label)
};

namespace detail {

inline double point_object_distance(const Point& p, const LabeledComponents& comps,
                                    int label, DistanceReference ref) {
  if (ref == DistanceReference::Centroid) {
    const auto& c = comps.centroids[label - 1];
    return std::hypot(p.row - c.row, p.col - c.col);
  }
  double best = std::numeric_limits<double>::infinity();
  const auto& lab = comps.label_map;
  for (int y = 0; y < lab.height; ++y) {
    for (int x = 0; x < lab.width; ++x) {
      if (lab(y, x) == label) best = std::min(best, std::hypot(p.row - y, p.col - x));
    }
  }
  return best;
}

}  // namespace detail

// A point is a true positive iff exactly one object lies within
// `dist_threshold` of it and that object is within range of no other point.
inline MatchResult match_points(const PointSet& points, const LabeledComponents& comps,
                                double dist_threshold,
                                DistanceReference ref = DistanceReference::Centroid) {
  detail::require(dist_threshold > 0, "dist_threshold must be > 0");
  const auto& pts = points.points();
  MatchResult out;
  out.num_points = static_cast<int>(pts.size());
  out.num_objects = comps.num_components;
  std::vector<std::vector<int>> candidates(pts.size());
  std::vector<int> object_degree(comps.num_components + 1, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (int label = 1; label <= comps.num_components; ++label) {
      if (detail::point_object_distance(pts[i], comps, label, ref) <= dist_threshold) {
        candidates[i].push_back(label);
        ++object_degree[label];
      }
    }
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (candidates[i].size() == 1 && object_degree[candidates[i][0]] == 1) {
      out.pairs.emplace_back(static_cast<int>(i), candidates[i][0]);
      ++out.tp;
    }
  }
  return out;
}

struct DetectionScores {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

inline double f1_score(double precision, double recall) {
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

inline DetectionScores detection_metrics(const MatchResult& m) {
  DetectionScores s;
  s.precision = m.num_objects > 0 ? static_cast<double>(m.tp) / m.num_objects : 0.0;
  s.recall = m.num_points > 0 ? static_cast<double>(m.tp) / m.num_points : 0.0;
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

inline double relative_difference(int c_true, double c_est) {
  detail::require(c_true >= 1, "relative difference needs a ground-truth count >= 1");
  return std::abs(c_true - c_est) / c_true;
}

struct EvalSettings {
  double threshold = 0.5;
  int min_area = 0;
  double dist_threshold = 10.0;
  DistanceReference reference = DistanceReference::Centroid;
};

struct ImageMetrics {
  std::string image_id;
  int gt_count = 0;
  int num_objects = 0;
  int tp = 0;
  double count_estimate = 0;  // raw counting-head output
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double rd_loc = 0;
  double rd_count = 0;
};

struct MetricsReport {
  std::vector<ImageMetrics> per_image;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double rd_loc = 0;
  double rd_count = 0;
};

// Scores one prediction against point annotations. The count estimate is
// clamped below at 0 for RD_Count only.
template <typename T>
ImageMetrics score_image(const std::string& id, const PointSet& points,
                         const Grid<T>& mask_probs, double count_estimate,
                         const EvalSettings& settings) {
  detail::require(!points.empty(), "image '" + id + "' has no points to evaluate against");
  const auto clean = binarize_and_clean(mask_probs, settings.threshold, settings.min_area);
  const auto comps = count_components(clean);
  const auto match = match_points(points, comps, settings.dist_threshold, settings.reference);
  const auto scores = detection_metrics(match);
  ImageMetrics m;
  m.image_id = id;
  m.gt_count = static_cast<int>(points.size());
  m.num_objects = comps.num_components;
  m.tp = match.tp;
  m.count_estimate = count_estimate;
  m.precision = scores.precision;
  m.recall = scores.recall;
  m.f1 = scores.f1;
  m.rd_loc = relative_difference(m.gt_count, comps.num_components);
  m.rd_count = relative_difference(m.gt_count, std::max(0.0, count_estimate));
  return m;
}

// Unweighted means over images; aggregate F1 is the mean of per-image F1.
inline MetricsReport aggregate(std::vector<ImageMetrics> per_image) {
  MetricsReport r;
  r.per_image = std::move(per_image);
  if (r.per_image.empty()) return r;
  for (const auto& m : r.per_image) {
    r.precision += m.precision;
    r.recall += m.recall;
    r.f1 += m.f1;
    r.rd_loc += m.rd_loc;
    r.rd_count += m.rd_count;
  }
  const auto n = static_cast<double>(r.per_image.size());
  r.precision /= n;
  r.recall /= n;
  r.f1 /= n;
  r.rd_loc /= n;
  r.rd_count /= n;
  return r;
}

}  // namespace cellmt
