#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cellmt/checkpoint.hpp"
#include "cellmt/config.hpp"
#include "cellmt/dataset.hpp"
#include "cellmt/evaluate.hpp"
#include "cellmt/io.hpp"
#include "cellmt/synth.hpp"
#include "cellmt/train.hpp"

namespace cellmt {

namespace fs = std::filesystem;

struct RunSummary {
  std::string variant;
  int p_percent = 0;
  std::uint64_t seed = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double rd_loc = 0;
  double rd_count = 0;
  double wall_time = 0;
  int best_epoch = -1;
  double best_val_loss = 0;
  int num_d1 = 0;
  int num_d2 = 0;
  int num_test = 0;
};

inline void to_json(json& j, const RunSummary& s) {
  j = json{{"variant", s.variant},   {"p_percent", s.p_percent}, {"seed", s.seed},
           {"precision", s.precision}, {"recall", s.recall},   {"f1", s.f1},
           {"rd_loc", s.rd_loc},     {"rd_count", s.rd_count}, {"wall_time", s.wall_time},
           {"best_epoch", s.best_epoch}, {"best_val_loss", s.best_val_loss},
           {"num_d1", s.num_d1},     {"num_d2", s.num_d2},     {"num_test", s.num_test}};
}

inline void from_json(const json& j, RunSummary& s) {
  j.at("variant").get_to(s.variant);
  j.at("p_percent").get_to(s.p_percent);
  j.at("seed").get_to(s.seed);
  j.at("precision").get_to(s.precision);
  j.at("recall").get_to(s.recall);
  j.at("f1").get_to(s.f1);
  j.at("rd_loc").get_to(s.rd_loc);
  j.at("rd_count").get_to(s.rd_count);
  j.at("wall_time").get_to(s.wall_time);
  j.at("best_epoch").get_to(s.best_epoch);
  j.at("best_val_loss").get_to(s.best_val_loss);
  j.at("num_d1").get_to(s.num_d1);
  j.at("num_d2").get_to(s.num_d2);
  j.at("num_test").get_to(s.num_test);
}

inline std::vector<AnnotatedImage> load_images(const ExperimentConfig& c) {
  if (c.dataset.path.empty()) return synthesize_dataset(c.dataset.synth, c.dataset.synth_seed);
  const fs::path root = c.dataset.path;
  const fs::path manifest = c.dataset.manifest.empty() ? root / "manifest.csv" : fs::path(c.dataset.manifest);
  return load_dataset(root, manifest, LoadOptions{c.dataset.center_crop});
}

// Training settings with the variant's constraints applied.
inline TrainConfig variant_train_config(Variant v, TrainConfig t) {
  switch (v) {
    case Variant::MixedSupervision:
      break;
    case Variant::NoConsistency:
      t.weights.beta = 0;
      t.terms.consistency = false;
      break;
    case Variant::SingleLocalization:
      t.terms.count = false;
      t.terms.consistency = false;
      t.d1_updates = GroupMask::encoder_and_decoder();
      break;
    case Variant::SingleCounting:
      t.terms.localization = false;
      t.terms.consistency = false;
      t.d1_updates = GroupMask::encoder_and_counting();
      t.d2_updates = GroupMask::encoder_and_counting();
      break;
  }
  return t;
}

// Per-run seeds are offsets of the configured base seeds.
struct RunSeeds {
  std::uint64_t partition = 0;
  std::uint64_t init = 0;
  std::uint64_t train = 0;
};

inline RunSeeds run_seeds(const ExperimentConfig& c, std::uint64_t seed) {
  return {seed, c.network.init_seed + seed, c.train.seed + seed};
}

inline std::string run_name(Variant v, int p, std::uint64_t seed) {
  return std::string(to_string(v)) + "_p" + std::to_string(p) + "_s" + std::to_string(seed);
}

struct PreparedRun {
  DatasetSplit split;
  TrainingSet data;
  std::vector<AnnotatedImage> test;
  TrainConfig train;
  NetworkConfig network;
};

inline PreparedRun prepare_run(const ExperimentConfig& c, const std::vector<AnnotatedImage>& images,
                               std::uint64_t seed) {
  const auto seeds = run_seeds(c, seed);
  PreparedRun r;
  if (c.overfit) {
    std::vector<std::string> ids;
    for (const auto& img : images) ids.push_back(img.image_id);
    auto part = partition(ids, c.p_percent, seeds.partition);
    r.split.train_d1 = std::move(part.d1);
    r.split.train_d2 = std::move(part.d2);
    r.split.validation = r.split.train_d1;
    r.split.test = r.split.train_d1;
    r.split.p_percent = c.p_percent;
  } else {
    r.split = make_split(images, c.p_percent, seeds.partition, c.split);
  }
  r.data = build_training_set(images, r.split);
  if (c.variant == Variant::SingleLocalization) {
    std::erase_if(r.data.train, [](const AnnotatedImage& i) { return i.level == SupervisionLevel::D2; });
  }
  if (r.data.train.empty()) {
    throw InvalidArgument("variant " + std::string(to_string(c.variant)) + " at p=" +
                          std::to_string(c.p_percent) + " has no training images");
  }
  r.test = select_images(images, r.split.test);
  r.train = variant_train_config(c.variant, c.train);
  r.train.seed = seeds.train;
  r.network = c.network;
  r.network.init_seed = seeds.init;
  if (c.count_bias_from_data) {
    double sum = 0;
    for (const auto& img : r.data.train) sum += img.count.value;
    r.network.count_bias_init = sum / static_cast<double>(r.data.train.size());
  }
  return r;
}

namespace detail {

inline std::string opt_number(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream ss;
  ss << std::setprecision(9) << *v;
  return ss.str();
}

inline void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace detail

// One (variant, p, seed) run into `run_dir`. An existing summary.json means
// the run already finished and is returned as is.
inline RunSummary run_single(const ExperimentConfig& base, std::uint64_t seed,
                             const std::vector<AnnotatedImage>& images, const fs::path& run_dir,
                             std::ostream* progress = nullptr) {
  const auto summary_path = run_dir / "summary.json";
  if (fs::exists(summary_path)) {
    std::ifstream in(summary_path);
    return json::parse(in).get<RunSummary>();
  }
  ExperimentConfig c = base;
  c.seeds = {seed};
  fs::create_directories(run_dir / "checkpoints");
  write_config_snapshot(run_dir / "config.snapshot", c);

  const auto t0 = std::chrono::steady_clock::now();
  auto prepared = prepare_run(c, images, seed);
  Network<float> net(prepared.network);
  Trainer trainer(net, prepared.train);

  std::ofstream losses(run_dir / "losses.csv");
  losses << "epoch,image_id,level,l_s,l_c,l_t,alpha,beta_effective,joint\n";
  std::ofstream history(run_dir / "history.csv");
  history << "epoch,train_loss,val_loss,learning_rate,seconds,best\n";
  TrainObserver obs;
  obs.on_step = [&](const StepRecord& r) {
    const auto& b = r.loss;
    losses << b.epoch << ',' << r.image_id << ',' << to_string(b.level) << ','
           << detail::opt_number(b.l_s) << ',' << detail::opt_number(b.l_c) << ','
           << detail::opt_number(b.l_t) << ',' << b.alpha << ',' << b.beta_effective << ','
           << detail::opt_number(b.joint) << '\n';
  };
  obs.on_epoch = [&](const EpochRecord& e, const Network<float>& n) {
    history << e.epoch << ',' << detail::opt_number(e.train_loss) << ','
            << detail::opt_number(e.val_loss) << ',' << e.learning_rate << ',' << e.seconds << ','
            << (e.best ? 1 : 0) << std::endl;
    losses.flush();
    if (progress) {
      *progress << run_dir.filename().string() << " epoch " << e.epoch << " train " << e.train_loss
                << " val " << e.val_loss << (e.best ? " *" : "") << " (" << e.seconds << " s)"
                << std::endl;
    }
    if (c.save_last_each_epoch) save_checkpoint(run_dir / "checkpoints" / "last", make_checkpoint(n, e.epoch));
  };

  TrainResult result;
  try {
    result = trainer.train(prepared.data, obs);
  } catch (const std::exception& e) {
    losses.flush();
    history.flush();
    std::ofstream(run_dir / "error.txt") << e.what() << '\n';
    save_checkpoint(run_dir / "checkpoints" / "last", make_checkpoint(net, trainer.state().epoch));
    throw;
  }
  save_checkpoint(run_dir / "checkpoints" / "last", make_checkpoint(net, trainer.state().epoch - 1));
  save_checkpoint(run_dir / "checkpoints" / "best", result.best);
  apply_checkpoint(result.best, net);
  const auto report =
      evaluate(net, prepared.test, c.eval, c.emit_overlays ? run_dir / "overlays" : fs::path{});
  write_metrics(run_dir, report);

  RunSummary s;
  s.variant = to_string(c.variant);
  s.p_percent = c.p_percent;
  s.seed = seed;
  s.precision = report.precision;
  s.recall = report.recall;
  s.f1 = report.f1;
  s.rd_loc = report.rd_loc;
  s.rd_count = report.rd_count;
  s.best_epoch = result.best_epoch;
  s.best_val_loss = result.best_val_loss;
  s.num_d1 = static_cast<int>(prepared.split.train_d1.size());
  s.num_d2 = static_cast<int>(c.variant == Variant::SingleLocalization ? 0 : prepared.split.train_d2.size());
  s.num_test = static_cast<int>(prepared.test.size());
  s.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail::write_json_file(summary_path, s);
  return s;
}

inline std::vector<RunSummary> run_experiment(const ExperimentConfig& c, const fs::path& out_dir,
                                              std::ostream* progress = nullptr) {
  const auto images = load_images(c);
  std::vector<RunSummary> out;
  for (auto seed : c.seeds) {
    out.push_back(run_single(c, seed, images, out_dir / "runs" / run_name(c.variant, c.p_percent, seed),
                             progress));
  }
  return out;
}

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation; 0 for a single run
  int n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  r.n = static_cast<int>(v.size());
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= r.n;
  if (r.n > 1) {
    double ss = 0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / (r.n - 1));
  }
  return r;
}

inline const std::vector<std::string>& summary_metrics() {
  static const std::vector<std::string> m{"f1", "precision", "recall", "rd_loc", "rd_count"};
  return m;
}

inline double metric_of(const RunSummary& s, const std::string& m) {
  if (m == "f1") return s.f1;
  if (m == "precision") return s.precision;
  if (m == "recall") return s.recall;
  if (m == "rd_loc") return s.rd_loc;
  if (m == "rd_count") return s.rd_count;
  throw InvalidArgument("unknown metric '" + m + "'");
}

// (variant, p) -> per-metric statistics across seeds.
using AggregateTable = std::map<std::pair<std::string, int>, std::map<std::string, MeanStd>>;

inline AggregateTable aggregate_runs(const std::vector<RunSummary>& runs) {
  std::map<std::pair<std::string, int>, std::vector<const RunSummary*>> groups;
  for (const auto& r : runs) groups[{r.variant, r.p_percent}].push_back(&r);
  AggregateTable t;
  for (const auto& [key, members] : groups) {
    for (const auto& m : summary_metrics()) {
      std::vector<double> v;
      for (const auto* r : members) v.push_back(metric_of(*r, m));
      t[key][m] = mean_std(v);
    }
  }
  return t;
}

inline std::vector<RunSummary> read_summaries(const fs::path& out_dir) {
  std::vector<RunSummary> out;
  const auto runs = out_dir / "runs";
  if (!fs::exists(runs)) return out;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(runs)) {
    if (e.is_directory() && fs::exists(e.path() / "summary.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    std::ifstream in(d / "summary.json");
    out.push_back(json::parse(in).get<RunSummary>());
  }
  return out;
}

inline void write_summary_csv(const fs::path& path, const std::vector<RunSummary>& runs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "variant,p_percent,seed,precision,recall,f1,rd_loc,rd_count,best_epoch,best_val_loss,"
         "wall_time,num_d1,num_d2,num_test\n";
  out << std::setprecision(10);
  for (const auto& s : runs) {
    out << s.variant << ',' << s.p_percent << ',' << s.seed << ',' << s.precision << ',' << s.recall
        << ',' << s.f1 << ',' << s.rd_loc << ',' << s.rd_count << ',' << s.best_epoch << ','
        << s.best_val_loss << ',' << s.wall_time << ',' << s.num_d1 << ',' << s.num_d2 << ','
        << s.num_test << '\n';
  }
}

inline std::vector<std::string> variant_order(const std::vector<RunSummary>& runs) {
  std::vector<std::string> order;
  for (auto v : {Variant::MixedSupervision, Variant::SingleLocalization, Variant::SingleCounting,
                 Variant::NoConsistency}) {
    for (const auto& r : runs) {
      if (r.variant == to_string(v)) {
        order.emplace_back(to_string(v));
        break;
      }
    }
  }
  return order;
}

// One markdown table per metric: rows are p (descending), columns variants,
// cells mean ± std over seeds.
inline std::string render_tables(const std::vector<RunSummary>& runs) {
  detail::require(!runs.empty(), "no run summaries to tabulate");
  const auto table = aggregate_runs(runs);
  const auto variants = variant_order(runs);
  std::set<int, std::greater<>> ps;
  for (const auto& r : runs) ps.insert(r.p_percent);
  std::ostringstream md;
  md << std::fixed << std::setprecision(4);
  for (const auto& m : summary_metrics()) {
    md << "## " << m << "\n\n| p |";
    for (const auto& v : variants) md << ' ' << v << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < variants.size(); ++i) md << "---|";
    md << '\n';
    for (int p : ps) {
      md << "| " << p << " |";
      for (const auto& v : variants) {
        const auto it = table.find({v, p});
        if (it == table.end()) {
          md << " - |";
        } else {
          const auto& s = it->second.at(m);
          md << ' ' << s.mean << " ± " << s.std << " (n=" << s.n << ") |";
        }
      }
      md << '\n';
    }
    md << '\n';
  }
  return md.str();
}

// Metric-vs-p line with ±std error bars, as a standalone SVG.
inline std::string render_line_svg(const std::string& title, const std::vector<int>& ps,
                                   const std::vector<MeanStd>& ys) {
  const double W = 480, H = 320, L = 60, R = 20, T = 40, B = 50;
  double lo = 0, hi = 0;
  for (const auto& y : ys) hi = std::max(hi, y.mean + y.std);
  if (hi <= 0) hi = 1;
  hi *= 1.1;
  const int pmin = *std::min_element(ps.begin(), ps.end());
  const int pmax = *std::max_element(ps.begin(), ps.end());
  auto sx = [&](int p) {
    return pmax == pmin ? (L + W - R) / 2 : L + (p - pmin) * (W - L - R) / double(pmax - pmin);
  };
  auto sy = [&](double v) { return H - B - (v - lo) * (H - T - B) / (hi - lo); };
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"14\">" << title << "</text>\n"
    << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4;
    s << "<text x=\"" << L - 6 << "\" y=\"" << sy(v) + 4 << "\" text-anchor=\"end\" "
      << "font-family=\"sans-serif\" font-size=\"11\">" << v << "</text>\n";
  }
  for (int p : ps) {
    s << "<text x=\"" << sx(p) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"11\">" << p << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" "
    << "font-family=\"sans-serif\" font-size=\"12\">p (% of training images in D1)</text>\n";
  s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < ps.size(); ++i) s << sx(ps[i]) << ',' << sy(ys[i].mean) << ' ';
  s << "\"/>\n";
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double x = sx(ps[i]);
    s << "<line x1=\"" << x << "\" y1=\"" << sy(ys[i].mean - ys[i].std) << "\" x2=\"" << x
      << "\" y2=\"" << sy(ys[i].mean + ys[i].std) << "\" stroke=\"steelblue\"/>\n"
      << "<circle cx=\"" << x << "\" cy=\"" << sy(ys[i].mean) << "\" r=\"3.5\" fill=\"steelblue\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// Writes plots/<variant>_<metric>.svg for every variant and metric; returns
// the files written.
inline std::vector<fs::path> emit_plots(const std::vector<RunSummary>& runs, const fs::path& out_dir) {
  detail::require(!runs.empty(), "no run summaries to plot");
  const auto table = aggregate_runs(runs);
  const auto dir = out_dir / "plots";
  fs::create_directories(dir);
  std::vector<fs::path> written;
  for (const auto& v : variant_order(runs)) {
    std::vector<int> ps;
    for (const auto& [key, _] : table) {
      if (key.first == v) ps.push_back(key.second);
    }
    std::sort(ps.begin(), ps.end());
    for (const auto& m : {std::string("f1"), std::string("rd_loc"), std::string("rd_count")}) {
      std::vector<MeanStd> ys;
      for (int p : ps) ys.push_back(table.at({v, p}).at(m));
      const auto path = dir / (v + "_" + m + ".svg");
      std::ofstream(path) << render_line_svg(v + ": " + m + " vs p", ps, ys);
      written.push_back(path);
    }
  }
  return written;
}

// Rebuilds summary.csv, tables.md and plots from the persisted run summaries.
inline std::vector<RunSummary> report(const fs::path& out_dir) {
  const auto runs = read_summaries(out_dir);
  if (runs.empty()) throw InvalidArgument("no finished runs under '" + (out_dir / "runs").string() + "'");
  write_summary_csv(out_dir / "summary.csv", runs);
  std::ofstream(out_dir / "tables.md") << render_tables(runs);
  emit_plots(runs, out_dir);
  return runs;
}

// Cross product of p values, variants and the config's seeds.
inline std::vector<RunSummary> sweep(const ExperimentConfig& c, const std::vector<int>& p_values,
                                     const std::vector<Variant>& variants, const fs::path& out_dir,
                                     std::ostream* progress = nullptr) {
  detail::require(!p_values.empty() && !variants.empty(), "sweep needs p values and variants");
  const auto images = load_images(c);
  std::vector<RunSummary> out;
  for (auto v : variants) {
    for (int p : p_values) {
      ExperimentConfig rc = c;
      rc.variant = v;
      rc.p_percent = p;
      for (auto seed : c.seeds) {
        out.push_back(run_single(rc, seed, images, out_dir / "runs" / run_name(v, p, seed), progress));
      }
    }
  }
  report(out_dir);
  return out;
}

}  // namespace cellmt
