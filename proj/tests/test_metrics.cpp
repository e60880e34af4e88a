#include <cellmt/components.hpp>
#include <cellmt/dataset.hpp>
#include <cellmt/metrics.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "oracles.hpp"

using namespace cellmt;

namespace {

BinaryMask disk_mask(int h, int w, const std::vector<std::pair<int, int>>& centers, int r) {
  BinaryMask m(h, w, 0);
  for (auto [cy, cx] : centers) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m(y, x) = 1;
      }
    }
  }
  return m;
}

Grid<float> probs_from(const BinaryMask& m, float on = 0.9f, float off = 0.1f) {
  Grid<float> g(m.height, m.width);
  for (std::size_t i = 0; i < m.size(); ++i) g.data[i] = m.data[i] ? on : off;
  return g;
}

}  // namespace

TEST(CountComponents, Basics) {
  EXPECT_EQ(count_components(disk_mask(32, 32, {{8, 8}, {24, 24}}, 3)).num_components, 2);
  EXPECT_EQ(count_components(BinaryMask(16, 16, 0)).num_components, 0);
  BinaryMask diag(4, 4, 0);
  diag(1, 1) = 1;
  diag(2, 2) = 1;
  int oracle_count = 0;
  oracle::flood_fill_labels(diag, &oracle_count);
  ASSERT_EQ(oracle_count, 1);
  const auto c = count_components(diag);
  EXPECT_EQ(c.num_components, 1);
  EXPECT_EQ(c.areas[0], 2);
  EXPECT_DOUBLE_EQ(c.centroids[0].row, 1.5);
  EXPECT_DOUBLE_EQ(c.centroids[0].col, 1.5);
}

TEST(CountComponents, UShapeNeedsMerging) {
  // two arms that only join at the bottom row
  BinaryMask m(5, 5, 0);
  for (int y = 0; y < 5; ++y) {
    m(y, 0) = 1;
    m(y, 4) = 1;
  }
  for (int x = 0; x < 5; ++x) m(4, x) = 1;
  const auto c = count_components(m);
  EXPECT_EQ(c.num_components, 1);
  EXPECT_EQ(c.areas[0], 13);
}

TEST(CountComponents, AgreesWithFloodFill) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> dim(1, 24);
    std::uniform_real_distribution<double> dens(0.1, 0.7);
    const int h = dim(rng), w = dim(rng);
    std::bernoulli_distribution on(dens(rng));
    BinaryMask m(h, w, 0);
    for (auto& v : m.data) v = on(rng);
    int n = 0;
    const auto expected = oracle::flood_fill_labels(m, &n);
    const auto got = count_components(m);
    ASSERT_EQ(got.num_components, n);
    ASSERT_EQ(got.label_map.data, expected.data);
    ASSERT_EQ(std::accumulate(got.areas.begin(), got.areas.end(), 0),
              std::accumulate(m.data.begin(), m.data.end(), 0));
  }
}

TEST(BinarizeAndClean, ThresholdOnlyWhenMinAreaZero) {
  Grid<float> p(3, 3, 0.2f);
  p(0, 0) = 0.7f;
  p(2, 2) = 0.5f;
  const auto m = binarize_and_clean(p, 0.5, 0);
  EXPECT_EQ(m(0, 0), 1);
  EXPECT_EQ(m(2, 2), 1);
  EXPECT_EQ(std::accumulate(m.data.begin(), m.data.end(), 0), 2);
}

TEST(BinarizeAndClean, RemovesSmallBlobs) {
  BinaryMask m(40, 40, 0);
  for (int y = 2; y < 6; ++y) {
    for (int x = 2; x < 7; ++x) m(y, x) = 1;  // 20 px
  }
  for (int y = 20; y < 30; ++y) {
    for (int x = 20; x < 25; ++x) m(y, x) = 1;  // 50 px
  }
  const auto clean = binarize_and_clean(probs_from(m), 0.5, 35);
  const auto comps = count_components(clean);
  ASSERT_EQ(comps.num_components, 1);
  EXPECT_EQ(comps.areas[0], 50);
  EXPECT_EQ(clean(25, 22), 1);
}

TEST(BinarizeAndClean, AllBelowThresholdIsEmpty) {
  const Grid<float> p(8, 8, 0.3f);
  const auto m = binarize_and_clean(p, 0.5, 0);
  EXPECT_EQ(std::accumulate(m.data.begin(), m.data.end(), 0), 0);
  EXPECT_THROW(binarize_and_clean(p, 1.0, 0), InvalidArgument);
  EXPECT_THROW(binarize_and_clean(p, 0.5, -1), InvalidArgument);
}

TEST(MatchPoints, SingleObjectWithinThreshold) {
  BinaryMask m(32, 32, 0);
  m(10, 19) = 1;
  const auto comps = count_components(m);
  const auto r = match_points(PointSet({{10, 10}}, 32, 32), comps, 10.0);
  EXPECT_EQ(r.tp, 1);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0], std::make_pair(0, 1));
  EXPECT_EQ(match_points(PointSet({{10, 8}}, 32, 32), comps, 10.0).tp, 0);  // distance 11
}

TEST(MatchPoints, SharedObjectDisqualifiesBothPoints) {
  const auto comps = count_components(disk_mask(32, 32, {{16, 16}}, 2));
  const PointSet pts({{12, 16}, {20, 16}}, 32, 32);
  const auto brute = oracle::brute_force_match({{12, 16}, {20, 16}}, comps.label_map, 1, 10.0);
  ASSERT_EQ(brute.tp, 0);
  EXPECT_EQ(match_points(pts, comps, 10.0).tp, 0);
}

TEST(MatchPoints, PointWithTwoCandidatesIsNotTp) {
  const auto comps = count_components(disk_mask(40, 40, {{10, 10}, {10, 22}}, 1));
  const auto r = match_points(PointSet({{10, 16}}, 40, 40), comps, 10.0);
  EXPECT_EQ(r.num_objects, 2);
  EXPECT_EQ(r.tp, 0);
}

TEST(MatchPoints, NearestPixelReference) {
  BinaryMask m(32, 32, 0);
  for (int x = 0; x < 30; ++x) m(5, x) = 1;  // long bar, centroid at col 14.5
  const auto comps = count_components(m);
  const PointSet pts({{5, 29}}, 32, 32);
  EXPECT_EQ(match_points(pts, comps, 10.0, DistanceReference::Centroid).tp, 0);
  EXPECT_EQ(match_points(pts, comps, 10.0, DistanceReference::NearestPixel).tp, 1);
}

TEST(MatchPoints, InvariantToPointOrderAndMonotoneInThreshold) {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> coord(0, 47);
  for (int trial = 0; trial < 100; ++trial) {
    BinaryMask m(48, 48, 0);
    std::bernoulli_distribution on(0.03);
    for (auto& v : m.data) v = on(rng);
    const auto comps = count_components(m);
    std::set<Point> uniq;
    while (uniq.size() < 8) uniq.insert({coord(rng), coord(rng)});
    std::vector<Point> pts(uniq.begin(), uniq.end());
    const auto r = match_points(PointSet(pts, 48, 48), comps, 6.0);
    std::shuffle(pts.begin(), pts.end(), rng);
    EXPECT_EQ(match_points(PointSet(pts, 48, 48), comps, 6.0).tp, r.tp);
    EXPECT_LE(r.tp, std::min(r.num_points, r.num_objects));
    std::set<int> labels;
    for (const auto& pair : r.pairs) EXPECT_TRUE(labels.insert(pair.second).second);
  }
}

// The exactly-one rule is not monotone in the threshold: shrinking it can
// remove a competing candidate and turn a point into a true positive.
TEST(MatchPoints, ShrinkingThresholdCanAddTruePositives) {
  const auto comps = count_components(disk_mask(40, 40, {{10, 10}, {10, 18}}, 1));
  const PointSet pts({{10, 11}}, 40, 40);
  EXPECT_EQ(match_points(pts, comps, 10.0).tp, 0);
  EXPECT_EQ(match_points(pts, comps, 3.0).tp, 1);
}

TEST(MatchPoints, RejectsNonPositiveThreshold) {
  const auto comps = count_components(BinaryMask(4, 4, 0));
  EXPECT_THROW(match_points(PointSet({{1, 1}}, 4, 4), comps, 0.0), InvalidArgument);
}

TEST(DetectionMetrics, Formulas) {
  MatchResult m{8, 10, 10, {}};
  auto s = detection_metrics(m);
  EXPECT_DOUBLE_EQ(s.precision, 0.8);
  EXPECT_DOUBLE_EQ(s.recall, 0.8);
  EXPECT_NEAR(s.f1, 0.8, 1e-12);
  s = detection_metrics({0, 10, 0, {}});
  EXPECT_EQ(s.precision, 0.0);
  EXPECT_EQ(s.recall, 0.0);
  EXPECT_EQ(s.f1, 0.0);
  s = detection_metrics({9, 10, 12, {}});
  EXPECT_DOUBLE_EQ(s.precision, 0.75);
  EXPECT_DOUBLE_EQ(s.recall, 0.9);
  EXPECT_NEAR(s.f1, 2 * 0.75 * 0.9 / 1.65, 1e-12);
  EXPECT_NEAR(s.f1, 0.818, 5e-4);
}

TEST(RelativeDifference, Values) {
  EXPECT_DOUBLE_EQ(relative_difference(50, 40), 0.2);
  EXPECT_DOUBLE_EQ(relative_difference(17, 17), 0.0);
  EXPECT_DOUBLE_EQ(relative_difference(10, std::max(0.0, -2.0)), 1.0);
  EXPECT_THROW(relative_difference(0, 1), InvalidArgument);
}

TEST(ScoreImage, ClampsNegativeCountAndAggregates) {
  const std::vector<std::pair<int, int>> centers{{8, 8}, {8, 24}, {24, 8}, {24, 24}};
  const auto m = disk_mask(32, 32, centers, 3);
  std::vector<Point> pts;
  for (auto [r, c] : centers) pts.push_back({r, c});
  EvalSettings settings;
  const auto a = score_image("a", PointSet(pts, 32, 32), probs_from(m), -2.0, settings);
  EXPECT_DOUBLE_EQ(a.f1, 1.0);
  EXPECT_DOUBLE_EQ(a.rd_loc, 0.0);
  EXPECT_DOUBLE_EQ(a.rd_count, 1.0);
  const auto b = score_image("b", PointSet(pts, 32, 32), Grid<float>(32, 32, 0.1f), 5.0, settings);
  EXPECT_DOUBLE_EQ(b.f1, 0.0);
  EXPECT_DOUBLE_EQ(b.rd_loc, 1.0);
  EXPECT_DOUBLE_EQ(b.rd_count, 0.25);
  const auto report = aggregate({a, b});
  EXPECT_DOUBLE_EQ(report.f1, 0.5);
  EXPECT_DOUBLE_EQ(report.rd_loc, 0.5);
  EXPECT_DOUBLE_EQ(report.rd_count, 0.625);
}

TEST(SelfConsistency, BorderClippingCanBreakSeparatedPoints) {
  // 10.77 px apart, but the clipped disk at the right border has its
  // centroid at column 35, 9.85 px from the other point.
  const std::vector<Point> pts{{64, 26}, {68, 36}};
  const PointSet ps(pts, 118, 37);
  const auto gt = generate_mask(ps, 3);
  const auto comps = count_components(gt.mask);
  ASSERT_EQ(comps.num_components, 2);
  const auto m = score_image("clip", ps, probs_from(gt.mask), 2.0, EvalSettings{});
  EXPECT_EQ(m.tp, 0);
  EXPECT_EQ(m.f1, 0.0);
}

TEST(SelfConsistency, InteriorSeparatedPointsScorePerfectly) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int r = 3;
    std::uniform_int_distribution<int> py(r, 63 - r), px(r, 63 - r);
    std::vector<Point> pts;
    for (int a = 0; a < 500 && pts.size() < 10; ++a) {
      const Point p{py(rng), px(rng)};
      bool far = true;
      for (const auto& q : pts) far &= std::hypot(p.row - q.row, p.col - q.col) > 10.0;
      if (far) pts.push_back(p);
    }
    const PointSet ps(pts, 64, 64);
    const auto gt = generate_mask(ps, r);
    const auto m = score_image("s", ps, probs_from(gt.mask), static_cast<double>(pts.size()), EvalSettings{});
    EXPECT_EQ(m.f1, 1.0);
    EXPECT_EQ(m.rd_loc, 0.0);
  }
}
