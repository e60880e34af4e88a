#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cellmt/components.hpp"
#include "cellmt/dataset.hpp"
#include "cellmt/error.hpp"
#include "cellmt/io.hpp"
#include "cellmt/metrics.hpp"
#include "cellmt/network.hpp"

namespace cellmt {

namespace fs = std::filesystem;

// Image with predicted object outlines in green and ground-truth points as
// red crosses.
inline void write_overlay(const fs::path& path, const AnnotatedImage& img, const BinaryMask& mask) {
  auto rgb = to_rgb8(img.pixels);
  const int h = img.height(), w = img.width();
  auto put = [&](int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const auto k = (static_cast<std::size_t>(y) * w + x) * 3;
    rgb[k] = r;
    rgb[k + 1] = g;
    rgb[k + 2] = b;
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      bool edge = false;
      for (int dy = -1; dy <= 1 && !edge; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (!mask.in_bounds(y + dy, x + dx) || !mask(y + dy, x + dx)) {
            edge = true;
            break;
          }
        }
      }
      if (edge) put(y, x, 0, 255, 0);
    }
  }
  if (img.points) {
    for (const auto& p : img.points->points()) {
      for (int d = -2; d <= 2; ++d) {
        if (p.row + d >= 0 && p.row + d < h) put(p.row + d, p.col, 255, 0, 0);
        if (p.col + d >= 0 && p.col + d < w) put(p.row, p.col + d, 255, 0, 0);
      }
    }
  }
  write_png_rgb(path, h, w, rgb);
}

// Ground-truth counts come from point annotations, so every test image must
// be D1.
template <typename T>
MetricsReport evaluate(const Network<T>& net, const std::vector<AnnotatedImage>& images,
                       const EvalSettings& settings,
                       const fs::path& overlay_dir = {}) {
  detail::require(!images.empty(), "evaluation set is empty");
  if (!overlay_dir.empty()) fs::create_directories(overlay_dir);
  std::vector<ImageMetrics> per_image;
  per_image.reserve(images.size());
  for (const auto& img : images) {
    if (!img.points) {
      throw InvalidArgument("evaluation image '" + img.image_id + "' has no point annotations");
    }
    const auto pred = net.forward(img.pixels);
    per_image.push_back(
        score_image(img.image_id, *img.points, pred.mask_probs, pred.count_estimate, settings));
    if (!overlay_dir.empty()) {
      const auto clean = binarize_and_clean(pred.mask_probs, settings.threshold, settings.min_area);
      write_overlay(overlay_dir / (img.image_id + ".png"), img, clean);
    }
  }
  return aggregate(std::move(per_image));
}

inline nlohmann::json to_json(const ImageMetrics& m) {
  return {{"image_id", m.image_id},   {"gt_count", m.gt_count},
          {"num_objects", m.num_objects}, {"tp", m.tp},
          {"count_estimate", m.count_estimate}, {"precision", m.precision},
          {"recall", m.recall},       {"f1", m.f1},
          {"rd_loc", m.rd_loc},       {"rd_count", m.rd_count}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["aggregate"] = {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
                    {"rd_loc", r.rd_loc},       {"rd_count", r.rd_count},
                    {"num_images", r.per_image.size()}};
  j["per_image"] = nlohmann::json::array();
  for (const auto& m : r.per_image) j["per_image"].push_back(to_json(m));
  return j;
}

inline void write_metrics(const fs::path& dir, const MetricsReport& r) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.json");
    if (!out) throw IoError("cannot write '" + (dir / "metrics.json").string() + "'");
    out << to_json(r).dump(2) << '\n';
  }
  std::ofstream csv(dir / "metrics.csv");
  if (!csv) throw IoError("cannot write '" + (dir / "metrics.csv").string() + "'");
  csv << "image_id,gt_count,num_objects,tp,count_estimate,precision,recall,f1,rd_loc,rd_count\n";
  csv.precision(10);
  for (const auto& m : r.per_image) {
    csv << m.image_id << ',' << m.gt_count << ',' << m.num_objects << ',' << m.tp << ','
        << m.count_estimate << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ','
        << m.rd_loc << ',' << m.rd_count << '\n';
  }
  csv << "mean,,,,," << r.precision << ',' << r.recall << ',' << r.f1 << ',' << r.rd_loc << ','
      << r.rd_count << '\n';
}

}  // namespace cellmt
