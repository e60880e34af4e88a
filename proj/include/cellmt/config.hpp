#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cellmt/checkpoint.hpp"
#include "cellmt/dataset.hpp"
#include "cellmt/error.hpp"
#include "cellmt/metrics.hpp"
#include "cellmt/synth.hpp"
#include "cellmt/train.hpp"

namespace cellmt {

using nlohmann::json;

enum class Variant { MixedSupervision, SingleLocalization, SingleCounting, NoConsistency };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::MixedSupervision: return "mixed_supervision";
    case Variant::SingleLocalization: return "single_localization";
    case Variant::SingleCounting: return "single_counting";
    case Variant::NoConsistency: return "no_consistency";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::MixedSupervision, Variant::SingleLocalization, Variant::SingleCounting,
                 Variant::NoConsistency}) {
    if (s == to_string(v)) return v;
  }
  throw InvalidArgument("unknown variant '" + s +
                        "' (expected mixed_supervision, single_localization, single_counting or "
                        "no_consistency)");
}

struct DatasetSource {
  std::string path;  // empty: synthesize
  std::string manifest;  // default: <path>/manifest.csv
  bool center_crop = false;
  std::uint64_t synth_seed = 0;
  SynthConfig synth{};
};

struct ExperimentConfig {
  Variant variant = Variant::MixedSupervision;
  int p_percent = 100;
  std::vector<std::uint64_t> seeds{0};
  DatasetSource dataset{};
  SplitSettings split{};
  NetworkConfig network{};
  TrainConfig train{};
  EvalSettings eval{};
  bool emit_overlays = false;
  bool save_last_each_epoch = true;
  // Start the count output at the mean training count instead of
  // network.count_bias_init.
  bool count_bias_from_data = true;
  // Train, validate and evaluate on every image (smoke tests only).
  bool overfit = false;
};

inline void to_json(json& j, const SynthConfig& c) {
  j = json{{"num_images", c.num_images},     {"height", c.height},
           {"width", c.width},               {"min_cells", c.min_cells},
           {"max_cells", c.max_cells},       {"min_radius", c.min_radius},
           {"max_radius", c.max_radius},     {"min_aspect", c.min_aspect},
           {"min_gap", c.min_gap},           {"eyeball_delta", c.eyeball_delta},
           {"texture_amplitude", c.texture_amplitude}, {"noise_sigma", c.noise_sigma},
           {"max_attempts_per_cell", c.max_attempts_per_cell}, {"id_prefix", c.id_prefix}};
}

inline void from_json(const json& j, SynthConfig& c) {
  j.at("num_images").get_to(c.num_images);
  j.at("height").get_to(c.height);
  j.at("width").get_to(c.width);
  j.at("min_cells").get_to(c.min_cells);
  j.at("max_cells").get_to(c.max_cells);
  j.at("min_radius").get_to(c.min_radius);
  j.at("max_radius").get_to(c.max_radius);
  j.at("min_aspect").get_to(c.min_aspect);
  j.at("min_gap").get_to(c.min_gap);
  j.at("eyeball_delta").get_to(c.eyeball_delta);
  j.at("texture_amplitude").get_to(c.texture_amplitude);
  j.at("noise_sigma").get_to(c.noise_sigma);
  j.at("max_attempts_per_cell").get_to(c.max_attempts_per_cell);
  j.at("id_prefix").get_to(c.id_prefix);
}

inline json group_mask_json(const GroupMask& m) {
  return json{{"encoder", m.encoder}, {"decoder", m.decoder}, {"counting", m.counting}};
}

inline GroupMask group_mask_from(const json& j) {
  return {j.at("encoder").get<bool>(), j.at("decoder").get<bool>(), j.at("counting").get<bool>()};
}

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
           {"lr_decay", c.lr_decay},
           {"lr_decay_period", c.lr_decay_period},
           {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"alpha", c.weights.alpha},
           {"beta", c.weights.beta},
           {"warmup_epochs", c.weights.warmup_epochs},
           {"terms",
            {{"localization", c.terms.localization},
             {"count", c.terms.count},
             {"consistency", c.terms.consistency}}},
           {"mask_radius", c.mask_radius},
           {"consistency_threshold", c.consistency_threshold},
           {"pos_weight", c.pos_weight},
           {"reset_best_after_warmup", c.reset_best_after_warmup},
           {"d1_updates", group_mask_json(c.d1_updates)},
           {"d2_updates", group_mask_json(c.d2_updates)}};
}

inline void from_json(const json& j, TrainConfig& c) {
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("adam").at("beta1").get_to(c.adam.beta1);
  j.at("adam").at("beta2").get_to(c.adam.beta2);
  j.at("adam").at("epsilon").get_to(c.adam.epsilon);
  j.at("lr_decay").get_to(c.lr_decay);
  j.at("lr_decay_period").get_to(c.lr_decay_period);
  j.at("batch_size").get_to(c.batch_size);
  j.at("max_epochs").get_to(c.max_epochs);
  j.at("alpha").get_to(c.weights.alpha);
  j.at("beta").get_to(c.weights.beta);
  j.at("warmup_epochs").get_to(c.weights.warmup_epochs);
  j.at("terms").at("localization").get_to(c.terms.localization);
  j.at("terms").at("count").get_to(c.terms.count);
  j.at("terms").at("consistency").get_to(c.terms.consistency);
  j.at("mask_radius").get_to(c.mask_radius);
  j.at("consistency_threshold").get_to(c.consistency_threshold);
  j.at("pos_weight").get_to(c.pos_weight);
  j.at("reset_best_after_warmup").get_to(c.reset_best_after_warmup);
  c.d1_updates = group_mask_from(j.at("d1_updates"));
  c.d2_updates = group_mask_from(j.at("d2_updates"));
}

inline void to_json(json& j, const EvalSettings& e) {
  j = json{{"threshold", e.threshold},
           {"min_area", e.min_area},
           {"dist_threshold", e.dist_threshold},
           {"reference", e.reference == DistanceReference::Centroid ? "centroid" : "nearest_pixel"}};
}

inline void from_json(const json& j, EvalSettings& e) {
  j.at("threshold").get_to(e.threshold);
  j.at("min_area").get_to(e.min_area);
  j.at("dist_threshold").get_to(e.dist_threshold);
  const auto ref = j.at("reference").get<std::string>();
  if (ref == "centroid") {
    e.reference = DistanceReference::Centroid;
  } else if (ref == "nearest_pixel") {
    e.reference = DistanceReference::NearestPixel;
  } else {
    throw InvalidArgument("eval.reference must be 'centroid' or 'nearest_pixel', got '" + ref + "'");
  }
}

inline void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"variant", to_string(c.variant)},
           {"p_percent", c.p_percent},
           {"seeds", c.seeds},
           {"dataset",
            {{"path", c.dataset.path},
             {"manifest", c.dataset.manifest},
             {"center_crop", c.dataset.center_crop},
             {"synth_seed", c.dataset.synth_seed},
             {"synth", c.dataset.synth}}},
           {"split",
            {{"validation_fraction", c.split.validation_fraction},
             {"test_fraction", c.split.test_fraction},
             {"test_fold", c.split.test_fold},
             {"split_seed", c.split.split_seed}}},
           {"network", c.network},
           {"train", c.train},
           {"eval", c.eval},
           {"emit_overlays", c.emit_overlays},
           {"save_last_each_epoch", c.save_last_each_epoch},
           {"count_bias_from_data", c.count_bias_from_data},
           {"overfit", c.overfit}};
}

inline void from_json(const json& j, ExperimentConfig& c) {
  c.variant = parse_variant(j.at("variant").get<std::string>());
  j.at("p_percent").get_to(c.p_percent);
  j.at("seeds").get_to(c.seeds);
  const auto& d = j.at("dataset");
  d.at("path").get_to(c.dataset.path);
  d.at("manifest").get_to(c.dataset.manifest);
  d.at("center_crop").get_to(c.dataset.center_crop);
  d.at("synth_seed").get_to(c.dataset.synth_seed);
  d.at("synth").get_to(c.dataset.synth);
  const auto& s = j.at("split");
  s.at("validation_fraction").get_to(c.split.validation_fraction);
  s.at("test_fraction").get_to(c.split.test_fraction);
  s.at("test_fold").get_to(c.split.test_fold);
  s.at("split_seed").get_to(c.split.split_seed);
  j.at("network").get_to(c.network);
  j.at("train").get_to(c.train);
  j.at("eval").get_to(c.eval);
  j.at("emit_overlays").get_to(c.emit_overlays);
  j.at("save_last_each_epoch").get_to(c.save_last_each_epoch);
  j.at("count_bias_from_data").get_to(c.count_bias_from_data);
  j.at("overfit").get_to(c.overfit);
}

namespace detail {

// Recursively overlays `patch` on `base`, rejecting keys the defaults do not
// know about so that typos fail loudly.
inline void merge_strict(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw InvalidArgument("config section '" + prefix + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw InvalidArgument("unknown config key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

}  // namespace detail

// `key.path=value`; the value is read as JSON when it parses, else as a string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw InvalidArgument("override '" + assignment + "' must look like key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  json* node = &cfg;
  std::stringstream ss(path);
  std::string part, walked;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    walked += (i ? "." : "") + parts[i];
    if (!node->is_object() || !node->contains(parts[i])) {
      throw InvalidArgument("unknown config key '" + walked + "'");
    }
    node = &(*node)[parts[i]];
  }
  if (node->is_object()) throw InvalidArgument("override '" + path + "' names a section, not a value");
  *node = detail::parse_override_value(assignment.substr(eq + 1));
}

inline ExperimentConfig config_from_json(const json& j) {
  try {
    auto c = j.get<ExperimentConfig>();
    c.network.validate();
    detail::require(c.p_percent >= 0 && c.p_percent <= 100, "p_percent must lie in [0, 100]");
    detail::require(!c.seeds.empty(), "seeds must not be empty");
    return c;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad config: ") + e.what());
  }
}

// Defaults, then the optional file, then each override in order.
inline ExperimentConfig load_config(const std::filesystem::path& file,
                                    const std::vector<std::string>& overrides = {}) {
  json cfg = ExperimentConfig{};
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open config '" + file.string() + "'");
    json patch;
    try {
      patch = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw InvalidArgument("config '" + file.string() + "' is not valid JSON: " + e.what());
    }
    detail::merge_strict(cfg, patch, "");
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return config_from_json(cfg);
}

inline void write_config_snapshot(const std::filesystem::path& path, const ExperimentConfig& c) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << json(c).dump(2) << '\n';
}

}  // namespace cellmt
