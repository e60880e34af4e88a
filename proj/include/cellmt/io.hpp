#pragma once

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cellmt/dataset.hpp"
#include "cellmt/error.hpp"
#include "cellmt/tensor.hpp"

namespace cellmt {

namespace fs = std::filesystem;

// 8-bit RGB PNG to a 3 x H x W tensor in [0, 1].
inline Tensor<float> read_png_rgb(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  const int h = static_cast<int>(image.height);
  const int w = static_cast<int>(image.width);
  Tensor<float> out(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
      }
    }
  }
  return out;
}

// Writes interleaved 8-bit RGB.
inline void write_png_rgb(const fs::path& path, int height, int width,
                          const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3) {
    throw InvalidArgument("RGB buffer size does not match " + shape_string(height, width));
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + image.message);
  }
}

inline std::vector<std::uint8_t> to_rgb8(const Tensor<float>& img) {
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(img.height) * img.width * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img(c, y, x), 0.0f, 1.0f);
        rgb[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return rgb;
}

inline void write_png_rgb(const fs::path& path, const Tensor<float>& img) {
  write_png_rgb(path, img.height, img.width, to_rgb8(img));
}

namespace detail {

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::optional<int> parse_int(const std::string& s) {
  int v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return v;
}

inline bool blank(const std::string& line) { return trim(line).empty(); }

}  // namespace detail

// Points file: header line, then one `row,col` pair of integers per line.
inline std::vector<Point> read_points_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open points file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("points file '" + path.string() + "' is empty");
  const auto header = detail::split_csv_line(line);
  if (header.size() != 2 || header[0] != "row" || header[1] != "col") {
    throw IoError("points file '" + path.string() + "' must start with the header 'row,col'");
  }
  std::vector<Point> pts;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    const auto cells = detail::split_csv_line(line);
    std::optional<int> r, c;
    if (cells.size() == 2) {
      r = detail::parse_int(cells[0]);
      c = detail::parse_int(cells[1]);
    }
    if (!r || !c) {
      throw IoError("points file '" + path.string() + "' line " + std::to_string(line_no) +
                    ": expected two integers 'row,col', got '" + line + "'");
    }
    pts.push_back({*r, *c});
  }
  return pts;
}

inline void write_points_csv(const fs::path& path, const PointSet& points) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write points file '" + path.string() + "'");
  out << "row,col\n";
  for (const auto& p : points.points()) out << p.row << ',' << p.col << '\n';
}

struct LoadOptions {
  // Crop images to the largest centered multiple of 16; points outside the
  // crop are dropped.
  bool center_crop = false;
};

namespace detail {

inline void center_crop(AnnotatedImage& img, std::vector<Point>& pts) {
  const int h = img.pixels.height, w = img.pixels.width;
  const int nh = h / 16 * 16, nw = w / 16 * 16;
  if (nh == 0 || nw == 0) {
    throw InvalidArgument("image '" + img.image_id + "' is smaller than 16x16");
  }
  const int oy = (h - nh) / 2, ox = (w - nw) / 2;
  Tensor<float> out(3, nh, nw);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < nh; ++y) {
      for (int x = 0; x < nw; ++x) out(c, y, x) = img.pixels(c, y + oy, x + ox);
    }
  }
  img.pixels = std::move(out);
  std::vector<Point> kept;
  for (const auto& p : pts) {
    const Point q{p.row - oy, p.col - ox};
    if (q.row >= 0 && q.row < nh && q.col >= 0 && q.col < nw) kept.push_back(q);
  }
  pts = std::move(kept);
}

}  // namespace detail

// Reads `manifest` (columns id, count, count_source, split_hint; only id is
// mandatory) with images under root/images and points under root/points.
// A row with a points file becomes D1; a row with only a count becomes D2.
inline std::vector<AnnotatedImage> load_dataset(const fs::path& root, const fs::path& manifest,
                                                const LoadOptions& options = {}) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest '" + manifest.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("manifest '" + manifest.string() + "' is empty");
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  if (!col.contains("id")) throw IoError("manifest '" + manifest.string() + "' has no 'id' column");
  auto field = [&](const std::vector<std::string>& cells, const std::string& name) {
    const auto it = col.find(name);
    return (it == col.end() || it->second >= cells.size()) ? std::string{} : cells[it->second];
  };

  std::vector<AnnotatedImage> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = "manifest line " + std::to_string(line_no);
    AnnotatedImage img;
    img.image_id = field(cells, "id");
    if (img.image_id.empty()) throw IoError(where + ": empty id");
    img.split_hint = field(cells, "split_hint");
    const auto image_path = root / "images" / (img.image_id + ".png");
    if (!fs::exists(image_path)) {
      throw IoError(where + ": image file '" + image_path.string() + "' not found");
    }
    img.pixels = read_png_rgb(image_path);

    std::optional<int> count;
    const auto count_text = field(cells, "count");
    if (!count_text.empty()) {
      count = detail::parse_int(count_text);
      if (!count) throw IoError(where + ": count '" + count_text + "' is not an integer");
      if (*count < 1) throw IoError(where + ": count must be >= 1, got " + count_text);
    }
    std::string source = field(cells, "count_source");
    if (source.empty()) source = "eyeballed";
    if (source != "eyeballed" && source != "exact") {
      throw IoError(where + ": count_source must be 'exact' or 'eyeballed', got '" + source + "'");
    }

    const auto points_path = root / "points" / (img.image_id + ".csv");
    const bool has_points = fs::exists(points_path);
    if (!has_points && !count) {
      throw IoError(where + ": image '" + img.image_id + "' has neither a points file nor a count");
    }
    try {
      if (has_points) {
        auto pts = read_points_csv(points_path);
        if (options.center_crop) detail::center_crop(img, pts);
        img.points = PointSet(std::move(pts), img.height(), img.width());
        img.count = count_from_points(*img.points);
        img.level = SupervisionLevel::D1;
        if (count && source == "exact" && *count != img.count.value) {
          throw IoError(where + ": exact count " + std::to_string(*count) + " differs from " +
                        std::to_string(img.count.value) + " points");
        }
        if (count && source == "eyeballed") img.eyeballed = *count;
      } else {
        if (source == "exact") {
          throw IoError(where + ": an exact count needs a points file");
        }
        if (options.center_crop) {
          std::vector<Point> none;
          detail::center_crop(img, none);
        }
        img.count = {*count, CountSource::Eyeballed};
        img.eyeballed = *count;
        img.level = SupervisionLevel::D2;
      }
      validate(img);
    } catch (const InvalidArgument& e) {
      throw IoError(where + ": " + e.what());
    }
    out.push_back(std::move(img));
  }
  return out;
}

inline std::vector<AnnotatedImage> load_dataset(const fs::path& root,
                                                const LoadOptions& options = {}) {
  return load_dataset(root, root / "manifest.csv", options);
}

// Inverse of load_dataset: the manifest count column carries the eyeballed
// estimate when one exists.
inline void write_dataset(const fs::path& root, const std::vector<AnnotatedImage>& images) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "points");
  std::ofstream manifest(root / "manifest.csv");
  if (!manifest) throw IoError("cannot write manifest under '" + root.string() + "'");
  manifest << "id,count,count_source,split_hint\n";
  for (const auto& img : images) {
    write_png_rgb(root / "images" / (img.image_id + ".png"), img.pixels);
    if (img.points) write_points_csv(root / "points" / (img.image_id + ".csv"), *img.points);
    manifest << img.image_id << ',';
    if (img.eyeballed) {
      manifest << *img.eyeballed << ",eyeballed";
    } else if (img.points) {
      manifest << img.count.value << ",exact";
    } else {
      manifest << img.count.value << ',' << to_string(img.count.source);
    }
    manifest << ',' << img.split_hint << '\n';
  }
}

}  // namespace cellmt
