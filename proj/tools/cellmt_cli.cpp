#include <cellmt/checkpoint.hpp>
#include <cellmt/config.hpp>
#include <cellmt/evaluate.hpp>
#include <cellmt/experiment.hpp>
#include <cellmt/io.hpp>
#include <cellmt/network.hpp>
#include <cellmt/synth.hpp>

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace cellmt;

namespace {

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  bool emit_overlays = false;
  bool center_crop = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_file, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "override a config value, key.path=value (repeatable)");
  cmd->add_option("--seed", o.seed, "run with this single seed");
  cmd->add_option("-o,--out-dir", o.out_dir, "output directory");
  cmd->add_flag("--emit-overlays", o.emit_overlays, "write prediction overlays for test images");
  cmd->add_flag("--center-crop", o.center_crop,
                "crop loaded images to the largest centered multiple of 16");
  cmd->add_flag("-q,--quiet", o.quiet, "no per-epoch progress lines");
}

ExperimentConfig resolve(const CommonOptions& o) {
  auto overrides = o.overrides;
  if (o.seed) overrides.push_back("seeds=[" + std::to_string(*o.seed) + "]");
  if (o.emit_overlays) overrides.emplace_back("emit_overlays=true");
  if (o.center_crop) overrides.emplace_back("dataset.center_crop=true");
  return load_config(o.config_file, overrides);
}

void print_summary(const RunSummary& s) {
  std::cout << std::fixed << std::setprecision(4) << s.variant << " p=" << s.p_percent
            << " seed=" << s.seed << "  F1=" << s.f1 << " P=" << s.precision << " R=" << s.recall
            << " RD_Loc=" << s.rd_loc << " RD_Count=" << s.rd_count << " best_epoch=" << s.best_epoch
            << " (" << std::setprecision(1) << s.wall_time << " s)\n";
}

int cmd_synth(const CommonOptions& o) {
  const auto c = resolve(o);
  const auto seed = o.seed.value_or(c.dataset.synth_seed);
  const auto images = synthesize_dataset(c.dataset.synth, seed);
  write_dataset(o.out_dir, images);
  std::cout << "wrote " << images.size() << " images to " << o.out_dir << '\n';
  return 0;
}

int cmd_train(const CommonOptions& o) {
  const auto c = resolve(o);
  fs::create_directories(o.out_dir);
  for (const auto& s : run_experiment(c, o.out_dir, o.quiet ? nullptr : &std::cerr)) print_summary(s);
  report(o.out_dir);
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& subset) {
  const auto c = resolve(o);
  auto net = network_from_checkpoint(load_checkpoint(checkpoint));
  const auto images = load_images(c);
  std::vector<AnnotatedImage> chosen;
  if (subset == "all") {
    chosen = images;
  } else {
    const auto split = make_split(images, c.p_percent, c.seeds.front(), c.split);
    const auto& ids = subset == "test" ? split.test : split.validation;
    chosen = select_images(images, ids);
  }
  const auto report =
      evaluate(net, chosen, c.eval, c.emit_overlays ? fs::path(o.out_dir) / "overlays" : fs::path{});
  write_metrics(o.out_dir, report);
  std::cout << std::fixed << std::setprecision(4) << "images=" << report.per_image.size()
            << " F1=" << report.f1 << " P=" << report.precision << " R=" << report.recall
            << " RD_Loc=" << report.rd_loc << " RD_Count=" << report.rd_count << '\n';
  return 0;
}

int cmd_sweep(const CommonOptions& o, const std::vector<int>& ps, const std::vector<std::string>& vs) {
  const auto c = resolve(o);
  std::vector<Variant> variants;
  for (const auto& v : vs) variants.push_back(parse_variant(v));
  fs::create_directories(o.out_dir);
  for (const auto& s : sweep(c, ps, variants, o.out_dir, o.quiet ? nullptr : &std::cerr)) print_summary(s);
  std::cout << "tables: " << (fs::path(o.out_dir) / "tables.md").string() << '\n';
  return 0;
}

int cmd_report(const CommonOptions& o) {
  const auto runs = report(o.out_dir);
  std::cout << render_tables(runs);
  return 0;
}

int cmd_describe(const CommonOptions& o, int height, int width, bool print_config) {
  const auto c = resolve(o);
  if (print_config) {
    std::cout << json(c).dump(2) << '\n';
    return 0;
  }
  const Network<float> net(c.network, Network<float>::Uninitialized{});
  net.check_input(c.network.input_channels, height, width);
  std::cout << std::left << std::setw(24) << "layer" << std::setw(14) << "kind" << std::setw(22)
            << "group" << std::right << std::setw(6) << "in" << std::setw(6) << "out" << std::setw(4)
            << "k" << std::setw(12) << "params" << '\n';
  for (const auto& r : net.describe()) {
    std::cout << std::left << std::setw(24) << r.name << std::setw(14) << r.kind << std::setw(22)
              << to_string(r.group) << std::right << std::setw(6) << r.in_channels << std::setw(6)
              << r.out_channels << std::setw(4) << r.kernel << std::setw(12) << r.parameters << '\n';
  }
  for (auto g : kAllGroups) {
    std::cout << to_string(g) << ": " << net.parameter_count(g) << " parameters\n";
  }
  std::cout << "total: " << net.parameter_count() << " parameters; input " << height << "x" << width
            << " -> mask " << height << "x" << width << " + scalar count\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cellmt: mixed-supervision cell localization and counting"};
  app.require_subcommand(1);

  CommonOptions o;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset (images, points, manifest)");
  add_common(synth, o);

  auto* train = app.add_subcommand("train", "train and evaluate one variant for every configured seed");
  add_common(train, o);

  std::string checkpoint, subset = "test";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, o);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--subset", subset, "test, validation or all")
      ->check(CLI::IsMember({"test", "validation", "all"}));

  std::vector<int> ps{100, 75, 50, 25};
  std::vector<std::string> vs{"mixed_supervision", "single_localization", "single_counting"};
  auto* sw = app.add_subcommand("sweep", "cross product of p values, variants and seeds");
  add_common(sw, o);
  sw->add_option("--p", ps, "p percentages")->delimiter(',');
  sw->add_option("--variants", vs, "variants")->delimiter(',');

  auto* rep = app.add_subcommand("report", "rebuild summary.csv, tables.md and plots from finished runs");
  add_common(rep, o);

  int height = 496, width = 496;
  auto* desc = app.add_subcommand("describe", "print the network layout and parameter counts");
  add_common(desc, o);
  desc->add_option("--height", height, "input height");
  desc->add_option("--width", width, "input width");
  bool print_config = false;
  desc->add_flag("--print-config", print_config, "print the resolved config as JSON instead");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o, checkpoint, subset);
    if (*sw) return cmd_sweep(o, ps, vs);
    if (*rep) return cmd_report(o);
    if (*desc) return cmd_describe(o, height, width, print_config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
