#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "cellmt/dataset.hpp"
#include "cellmt/error.hpp"

namespace cellmt {

// Generator settings for textured images with bright elliptical cells.
struct SynthConfig {
  int num_images = 16;
  int height = 64;
  int width = 64;
  int min_cells = 10;
  int max_cells = 40;
  double min_radius = 2.5;   // semi-major axis range, pixels
  double max_radius = 3.5;
  double min_aspect = 0.7;   // minor / major axis ratio
  double min_gap = 0.0;      // extra spacing beyond the sum of radii
  double eyeball_delta = 0.15;
  double texture_amplitude = 0.08;
  double noise_sigma = 0.03;
  int max_attempts_per_cell = 500;
  std::string id_prefix = "synth_";
};

struct SynthCell {
  double row = 0;
  double col = 0;
  double major = 0;
  double minor = 0;
  double angle = 0;
};

namespace detail {

inline void check_synth_config(const SynthConfig& c) {
  require(c.num_images >= 1, "synth: num_images must be >= 1");
  require(c.height > 0 && c.width > 0 && c.height % 16 == 0 && c.width % 16 == 0,
          "synth: image size must be positive and divisible by 16");
  require(c.min_cells >= 1 && c.max_cells >= c.min_cells,
          "synth: need 1 <= min_cells <= max_cells");
  require(c.min_radius > 0 && c.max_radius >= c.min_radius,
          "synth: need 0 < min_radius <= max_radius");
  require(c.min_aspect > 0 && c.min_aspect <= 1, "synth: min_aspect in (0, 1]");
  require(c.eyeball_delta >= 0, "synth: eyeball_delta must be >= 0");
  require(c.min_gap >= 0, "synth: min_gap must be >= 0");
  require(c.max_attempts_per_cell >= 1, "synth: max_attempts_per_cell >= 1");
}

// Rejection sampling of integer-centered cells, pairwise separated by at least
// the sum of their semi-major axes plus min_gap.
inline std::vector<SynthCell> place_cells(const SynthConfig& c, int n,
                                          std::mt19937_64& rng) {
  std::uniform_real_distribution<double> radius(c.min_radius, c.max_radius);
  std::uniform_real_distribution<double> aspect(c.min_aspect, 1.0);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::vector<SynthCell> cells;
  cells.reserve(n);
  const long budget = static_cast<long>(c.max_attempts_per_cell) * n;
  long attempts = 0;
  while (static_cast<int>(cells.size()) < n) {
    if (++attempts > budget) {
      throw InvalidArgument(
          "synth: could not place " + std::to_string(n) + " cells in a " +
          shape_string(c.height, c.width) + " image after " +
          std::to_string(budget) + " attempts (placed " +
          std::to_string(cells.size()) + "); reduce the cell count or radius");
    }
    SynthCell cell;
    cell.major = radius(rng);
    cell.minor = cell.major * aspect(rng);
    cell.angle = angle(rng);
    const int margin = static_cast<int>(std::ceil(cell.major));
    if (2 * margin >= c.height || 2 * margin >= c.width) continue;
    std::uniform_int_distribution<int> rows(margin, c.height - 1 - margin);
    std::uniform_int_distribution<int> cols(margin, c.width - 1 - margin);
    cell.row = rows(rng);
    cell.col = cols(rng);
    bool ok = true;
    for (const auto& o : cells) {
      const double need = cell.major + o.major + c.min_gap;
      const double dr = cell.row - o.row;
      const double dc = cell.col - o.col;
      if (dr * dr + dc * dc < need * need) {
        ok = false;
        break;
      }
    }
    if (ok) cells.push_back(cell);
  }
  return cells;
}

inline Tensor<float> render(const SynthConfig& c,
                            const std::vector<SynthCell>& cells,
                            std::mt19937_64& rng) {
  constexpr std::array<double, 3> kBackground{0.80, 0.55, 0.70};
  constexpr std::array<double, 3> kCell{0.98, 0.92, 0.60};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  struct Wave {
    double fy, fx, phase;
  };
  std::array<Wave, 4> waves{};
  for (auto& w : waves) {
    w.fy = (unit(rng) - 0.5) * 0.6;
    w.fx = (unit(rng) - 0.5) * 0.6;
    w.phase = unit(rng) * 2 * std::numbers::pi;
  }
  std::normal_distribution<double> noise(0.0, c.noise_sigma);
  Tensor<float> img(3, c.height, c.width);
  for (int y = 0; y < c.height; ++y) {
    for (int x = 0; x < c.width; ++x) {
      double tex = 0;
      for (const auto& w : waves) tex += std::sin(w.fy * y + w.fx * x + w.phase);
      tex *= c.texture_amplitude / static_cast<double>(waves.size());
      for (int ch = 0; ch < 3; ++ch) img(ch, y, x) = static_cast<float>(kBackground[ch] + tex);
    }
  }
  for (const auto& cell : cells) {
    const double gain = 0.75 + 0.25 * unit(rng);
    const double ca = std::cos(cell.angle);
    const double sa = std::sin(cell.angle);
    const int reach = static_cast<int>(std::ceil(cell.major + 2));
    for (int y = static_cast<int>(cell.row) - reach; y <= static_cast<int>(cell.row) + reach; ++y) {
      for (int x = static_cast<int>(cell.col) - reach; x <= static_cast<int>(cell.col) + reach; ++x) {
        if (y < 0 || y >= c.height || x < 0 || x >= c.width) continue;
        const double dy = y - cell.row;
        const double dx = x - cell.col;
        const double u = (dx * ca + dy * sa) / cell.major;
        const double v = (-dx * sa + dy * ca) / cell.minor;
        const double d = std::sqrt(u * u + v * v);
        // soft edge about one pixel wide
        const double wgt = gain / (1.0 + std::exp((d - 1.0) * cell.minor / 0.6));
        for (int ch = 0; ch < 3; ++ch) {
          auto& px = img(ch, y, x);
          px = static_cast<float>(px * (1 - wgt) + kCell[ch] * wgt);
        }
      }
    }
  }
  for (auto& v : img.data) {
    v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
  }
  return img;
}

}  // namespace detail

inline int eyeball_count(int exact, double delta, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> eps(-delta, delta);
  const double e = delta > 0 ? eps(rng) : 0.0;
  return std::max(1, static_cast<int>(std::lround(exact * (1.0 + e))));
}

// Every returned image is D1 (points + exact count) and also carries an
// eyeballed count, so the partitioner can demote it to D2.
inline std::vector<AnnotatedImage> synthesize_dataset(const SynthConfig& config,
                                                      std::uint64_t seed) {
  detail::check_synth_config(config);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count(config.min_cells, config.max_cells);
  std::vector<AnnotatedImage> out;
  out.reserve(config.num_images);
  for (int i = 0; i < config.num_images; ++i) {
    const int n = count(rng);
    const auto cells = detail::place_cells(config, n, rng);
    std::vector<Point> pts;
    pts.reserve(cells.size());
    for (const auto& c : cells) {
      pts.push_back({static_cast<int>(c.row), static_cast<int>(c.col)});
    }
    AnnotatedImage img;
    char id[32];
    std::snprintf(id, sizeof id, "%04d", i);
    img.image_id = config.id_prefix + id;
    img.pixels = detail::render(config, cells, rng);
    img.points = PointSet(std::move(pts), config.height, config.width);
    img.count = count_from_points(*img.points);
    img.level = SupervisionLevel::D1;
    img.eyeballed = eyeball_count(n, config.eyeball_delta, rng);
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace cellmt
