#pragma once

// One function per CLI stage. Each reads a ConfigFile (flags already merged
// in), writes its artifacts, and returns a JSON summary.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>

#include "vacuform/advisor.hpp"
#include "vacuform/config_file.hpp"
#include "vacuform/dataset.hpp"
#include "vacuform/knn_labeler.hpp"
#include "vacuform/regressor/evaluate.hpp"
#include "vacuform/regressor/train.hpp"
#include "vacuform/service.hpp"
#include "vacuform/sim_oracle.hpp"

namespace vacuform::pipeline {

namespace fs = std::filesystem;

/// `n` points drawn uniformly on the integer machine grid inside the design bounds.
inline std::vector<ProcessParams> random_machine_grid(int n, std::uint64_t seed) {
  require(n > 0, ErrorCode::configuration, "data.samples must be positive", "data.samples");
  const auto b = table1_bounds();
  Rng rng(derive_seed(seed, {0x6e1d}));
  std::vector<ProcessParams> out;
  for (int i = 0; i < n; ++i)
    out.push_back(snap_to_machine(
        {rng.uniform(b[0].min, b[0].max), rng.uniform(b[1].min, b[1].max), rng.uniform(b[2].min, b[2].max)}));
  return out;
}

/// Parameter grid from `[data] grid`: "table1", "random" (`samples` points on
/// the machine grid) or "table1+random" (both; the random points fill the
/// levels the design grid skips).
inline std::vector<ProcessParams> grid_from_config(const ConfigFile& cfg) {
  const auto kind = cfg.get<std::string>("data", "grid", "table1");
  const auto seed = cfg.get<std::uint64_t>("data", "seed", 1);
  if (kind == "table1") return table1_grid();
  if (kind == "random") return random_machine_grid(cfg.get("data", "samples", 100), seed);
  if (kind == "table1+random") {
    auto g = table1_grid();
    const auto extra = random_machine_grid(cfg.get("data", "samples", 100), seed);
    g.insert(g.end(), extra.begin(), extra.end());
    return g;
  }
  fail(ErrorCode::configuration, "data.grid must be table1, random or table1+random, got '" + kind + "'",
       "data.grid");
}

inline std::size_t train_count_for(std::size_t n, double fraction) {
  require(fraction > 0.0 && fraction < 1.0, ErrorCode::configuration, "data.train_fraction must lie in (0,1)",
          "data.train_fraction");
  return std::clamp<std::size_t>(std::size_t(std::lround(fraction * double(n))), 1, n - 1);
}

inline json mode_counts(const DatasetManifest& m) {
  json counts = json::object();
  for (auto mode : kAllFailureModes) counts[std::string(to_string(mode))] = 0;
  for (const auto& s : m.samples) counts[std::string(to_string(s.failure_mode))] = counts[std::string(to_string(s.failure_mode))].get<int>() + 1;
  return counts;
}

inline json gen_data(const ConfigFile& cfg, const fs::path& out_dir) {
  const auto oc = OracleConfig::from_config(cfg);
  const auto grid = grid_from_config(cfg);
  auto ds = synthesize_dataset(grid, oc, cfg.get<std::uint64_t>("data", "seed", 1), table1_bounds());
  if (ds.manifest.samples.size() >= 2)
    ds.manifest = split_dataset(ds.manifest,
                                train_count_for(ds.manifest.samples.size(), cfg.get("data", "train_fraction", 0.9)),
                                cfg.get<std::uint64_t>("data", "split_seed", 1));
  write_dataset(out_dir, ds.manifest, ds.views);
  return {{"schema_version", 1},
          {"dataset", out_dir.string()},
          {"samples", ds.manifest.samples.size()},
          {"train", ds.manifest.train_ids().size()},
          {"test", ds.manifest.test_ids().size()},
          {"failure_modes", mode_counts(ds.manifest)}};
}

inline json ingest(const fs::path& dataset_dir, const fs::path& entry_path, const fs::path& image_dir) {
  const auto r = ingest_sample(read_json_file(entry_path), image_dir, dataset_dir);
  return {{"schema_version", 1}, {"sample", record_to_json(r)}};
}

/// Labels the dataset; splits first when unsplit and `train_count` > 0, and
/// switches to observed bounds when `bounds_mode` is "observed".
inline json label(const fs::path& dataset_dir, std::size_t train_count = 0, std::uint64_t split_seed = 1,
                  const std::string& bounds_mode = "") {
  auto m = load_manifest(dataset_dir);
  bool changed = false;
  if (!bounds_mode.empty() && bounds_mode != m.bounds_mode) {
    if (bounds_mode == "observed") m.bounds = observed_bounds(m.samples);
    else if (bounds_mode == "design") m.bounds = table1_bounds();
    else fail(ErrorCode::validation, "bounds mode must be design or observed", "--bounds-mode");
    m.bounds_mode = bounds_mode;
    changed = true;
  }
  if (train_count > 0 && !m.split) {
    m = split_dataset(m, train_count, split_seed);
    changed = true;
  }
  if (changed) save_manifest(dataset_dir, m);
  const auto labels = label_dataset(m);
  save_labels(dataset_dir, labels);
  std::size_t zero = 0;
  for (const auto& [id, v] : labels.labels) zero += v.is_zero();
  return {{"schema_version", 1},
          {"labels", labels_path(dataset_dir).string()},
          {"count", labels.labels.size()},
          {"zero_vectors", zero},
          {"bounds_mode", m.bounds_mode}};
}

inline json train(const ConfigFile& cfg, const fs::path& dataset_dir, const fs::path& checkpoint,
                  const fs::path& metrics_dir, bool verbose = false) {
  const auto tc = TrainingConfig::from_config(cfg);
  const auto m = load_manifest(dataset_dir);
  const auto labels = load_labels(dataset_dir);
  const auto views = load_all_views(dataset_dir, m);
  auto progress = [&](int epoch, double tl, double vl, double lr) {
    if (verbose) std::cerr << "epoch " << epoch << " train " << tl << " val " << vl << " lr " << lr << '\n';
  };
  auto r = vacuform::train(tc, m, views, labels, progress);
  save_checkpoint(checkpoint, r.model);
  fs::create_directories(metrics_dir);
  write_json_file(metrics_dir / "metrics.json", r.metrics.to_json());
  write_training_csv(metrics_dir / "training.csv", r.metrics);
  return {{"schema_version", 1},
          {"checkpoint", checkpoint.string()},
          {"config_hash", r.model.config_hash},
          {"epochs_seen", r.metrics.epochs_seen},
          {"batches_seen", r.metrics.batches_seen},
          {"best_epoch", r.metrics.best_epoch},
          {"best_val_loss", r.metrics.best_val_loss},
          {"baseline_val_mse", r.metrics.baseline_val_mse},
          {"stop_reason", r.metrics.stop_reason}};
}

inline std::vector<std::string> partition_ids(const DatasetManifest& m, const std::string& partition) {
  if (partition == "test") return m.test_ids();
  if (partition == "train") return m.train_ids();
  if (partition == "all") {
    std::vector<std::string> ids;
    for (const auto& s : m.samples) ids.push_back(s.id);
    return ids;
  }
  fail(ErrorCode::validation, "partition must be test, train or all", "--partition");
}

inline json eval(const ConfigFile& cfg, const fs::path& checkpoint, const fs::path& dataset_dir,
                 const std::string& partition, const fs::path& out_dir) {
  auto model = load_checkpoint(checkpoint);
  const auto m = load_manifest(dataset_dir);
  const auto labels = load_labels(dataset_dir);
  const auto ids = partition_ids(m, partition);
  require(!ids.empty(), ErrorCode::validation, "partition '" + partition + "' is empty", "--partition");
  std::unordered_map<std::string, ViewSet> views;
  for (const auto& id : ids) views.emplace(id, load_views(dataset_dir, m.at(id)));
  const auto metrics = evaluate_model(model, ids, views, labels, cfg.get("eval", "composites_per_sample", 16),
                                      cfg.get<std::uint64_t>("eval", "seed", 1));
  fs::create_directories(out_dir);
  write_eval_csv(out_dir / "eval.csv", metrics);
  json summary = metrics.summary_json();
  summary["partition"] = partition;
  summary["samples"] = ids.size();
  summary["config_hash"] = model.config_hash;
  write_json_file(out_dir / "eval.json", summary);
  return summary;
}

/// The 17 *.png files of a directory, in natural numeric order.
inline ViewSet load_view_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::validation, "view directory " + dir.string() + " not found", "--views");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const auto sa = a.stem().string(), sb = b.stem().string();
    const bool da = !sa.empty() && std::all_of(sa.begin(), sa.end(), ::isdigit);
    const bool db = !sb.empty() && std::all_of(sb.begin(), sb.end(), ::isdigit);
    if (da && db) return std::stoul(sa) < std::stoul(sb);
    return sa < sb;
  });
  ViewSet vs;
  for (const auto& f : files) vs.views.push_back(read_png(f));
  vs.validate();
  return vs;
}

inline json suggest(const ConfigFile& cfg, const fs::path& checkpoint, const fs::path& view_dir,
                    const ProcessParams& current) {
  auto model = load_checkpoint(checkpoint);
  const auto views = load_view_dir(view_dir);
  const auto t0 = std::chrono::steady_clock::now();
  json out = vacuform::suggest(views, current, model, SuggestConfig::from_config(cfg)).to_json();
  out["latency_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

struct LoopOptions {
  std::size_t starts = 50;
  int max_cycles = 3;
  std::uint64_t seed = 1;
  bool baseline = true;

  static LoopOptions from_config(const ConfigFile& cfg) {
    LoopOptions o;
    o.starts = cfg.get<std::size_t>("loop", "starts", o.starts);
    o.max_cycles = cfg.get("loop", "max_cycles", o.max_cycles);
    o.seed = cfg.get<std::uint64_t>("loop", "seed", o.seed);
    o.baseline = cfg.get("loop", "baseline", o.baseline);
    require(o.starts > 0, ErrorCode::configuration, "loop.starts must be positive", "loop.starts");
    require(o.max_cycles >= 1, ErrorCode::configuration, "loop.max_cycles must be >= 1", "loop.max_cycles");
    return o;
  }
};

/// Closed loop from seeded bad starts with the oracle standing in for the
/// machine; optionally the random-delta baseline over the same starts.
inline json simulate_loop(const ConfigFile& cfg, Model& model, const fs::path& out_dir) {
  const auto oc = OracleConfig::from_config(cfg);
  const auto opt = LoopOptions::from_config(cfg);
  const auto sc = SuggestConfig::from_config(cfg);
  const auto starts = sample_bad_starts(opt.starts, oc, model.bounds, opt.seed);
  const auto run = vacuform::simulate_loop(model, oc, starts, opt.max_cycles, opt.seed, LoopPolicy::model, sc);
  json summary = {{"schema_version", 1},
                  {"config_hash", model.config_hash},
                  {"starts", starts.size()},
                  {"max_cycles", opt.max_cycles},
                  {"model", run.to_json()}};
  summary["model"].erase("runs");
  if (opt.baseline) {
    const auto base =
        vacuform::simulate_loop(model, oc, starts, opt.max_cycles, opt.seed, LoopPolicy::random_delta, sc);
    summary["random_baseline"] = base.to_json();
    summary["random_baseline"].erase("runs");
    summary["margin"] = run.fraction_fixed() - base.fraction_fixed();
    if (!out_dir.empty()) write_json_file(out_dir / "baseline_log.json", base.to_json());
  }
  if (!out_dir.empty()) {
    write_json_file(out_dir / "session_log.json", run.to_json());
    write_json_file(out_dir / "summary.json", summary);
  }
  return summary;
}

inline json simulate_loop(const ConfigFile& cfg, const fs::path& checkpoint, const fs::path& out_dir) {
  auto model = load_checkpoint(checkpoint);
  return simulate_loop(cfg, model, out_dir);
}

}  // namespace vacuform::pipeline
