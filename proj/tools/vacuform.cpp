// vacuform: batch entry points for the thermoforming advisor pipeline.
// Exit codes: 0 ok, 1 validation/usage error, 2 runtime error.

#include <csignal>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vacuform/pipeline.hpp"

namespace {

using vacuform::ConfigFile;
using vacuform::json;
namespace fs = std::filesystem;

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;  // section.key=value
  bool json_out = false;
};

ConfigFile load_config(const Globals& g) {
  ConfigFile cfg = g.config_path.empty() ? ConfigFile{} : ConfigFile::load(g.config_path);
  for (const auto& o : g.overrides) {
    const auto eq = o.find('=');
    const auto dot = o.rfind('.', eq);
    if (eq == std::string::npos || dot == std::string::npos || dot == 0)
      vacuform::fail(vacuform::ErrorCode::validation, "--set expects section.key=value, got '" + o + "'", "--set");
    cfg.set(o.substr(0, dot), o.substr(dot + 1, eq - dot - 1), o.substr(eq + 1));
  }
  return cfg;
}

/// Copies a flag into the config when the user gave it.
template <typename T>
void override_if(ConfigFile& cfg, const CLI::Option* opt, const std::string& section, const std::string& key,
                 const T& value) {
  if (opt->count() == 0) return;
  std::ostringstream s;
  s.precision(17);
  s << value;
  cfg.set(section, key, s.str());
}

void emit(const Globals& g, const json& result, const std::string& human) {
  if (g.json_out) std::cout << result.dump(2) << '\n';
  else std::cout << human << '\n';
}

vacuform::AdvisorService* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vacuform: vacuum-thermoforming parameter advisor"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "INI config file (see docs/config.md)")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override a config key: section.key=value (repeatable)");
  app.add_flag("--json", g.json_out, "Machine-readable JSON output on stdout");

  std::function<void()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset from the process oracle");
  std::string gen_out, gen_grid;
  int gen_samples = 0;
  std::uint64_t gen_seed = 0;
  double gen_fraction = 0;
  gen->add_option("--out", gen_out, "Dataset directory to create")->required();
  auto* o_grid = gen->add_option("--grid", gen_grid, "Parameter grid: table1 | random | table1+random");
  auto* o_samples = gen->add_option("--samples", gen_samples, "Sample count for --grid random");
  auto* o_seed = gen->add_option("--seed", gen_seed, "Render seed");
  auto* o_frac = gen->add_option("--train-fraction", gen_fraction, "Fraction of samples in the train partition");
  gen->callback([&] {
    action = [&] {
      auto cfg = load_config(g);
      override_if(cfg, o_grid, "data", "grid", gen_grid);
      override_if(cfg, o_samples, "data", "samples", gen_samples);
      override_if(cfg, o_seed, "data", "seed", gen_seed);
      override_if(cfg, o_frac, "data", "train_fraction", gen_fraction);
      const auto r = vacuform::pipeline::gen_data(cfg, gen_out);
      emit(g, r, "wrote " + std::to_string(r["samples"].get<int>()) + " samples to " + gen_out + " (" +
                     r["failure_modes"].dump() + ")");
    };
  });

  // ingest
  auto* ing = app.add_subcommand("ingest", "Add one photographed sample (17 views) to a dataset");
  std::string ing_dataset, ing_entry, ing_images;
  ing->add_option("--dataset", ing_dataset, "Dataset directory")->required();
  ing->add_option("--entry", ing_entry, "Sample record JSON (id, params, verdict, failure_mode, material)")
      ->required()
      ->check(CLI::ExistingFile);
  ing->add_option("--images", ing_images, "Directory holding the 17 view PNGs")->required();
  ing->callback([&] {
    action = [&] {
      const auto r = vacuform::pipeline::ingest(ing_dataset, ing_entry, ing_images);
      emit(g, r, "ingested " + r["sample"]["id"].get<std::string>());
    };
  });

  // label
  auto* lab = app.add_subcommand("label", "Compute nearest-good corrective labels (labels.json)");
  std::string lab_dataset, lab_bounds;
  std::size_t lab_train_count = 0;
  std::uint64_t lab_split_seed = 1;
  lab->add_option("--dataset", lab_dataset, "Dataset directory")->required();
  lab->add_option("--train-count", lab_train_count, "Split an unsplit dataset with this many train samples first");
  lab->add_option("--split-seed", lab_split_seed, "Seed for --train-count");
  lab->add_option("--bounds-mode", lab_bounds, "Normalization bounds: design | observed")
      ->check(CLI::IsMember({"design", "observed"}));
  lab->callback([&] {
    action = [&] {
      const auto r = vacuform::pipeline::label(lab_dataset, lab_train_count, lab_split_seed, lab_bounds);
      emit(g, r, "labeled " + std::to_string(r["count"].get<int>()) + " samples (" +
                     std::to_string(r["zero_vectors"].get<int>()) + " zero vectors)");
    };
  });

  // train
  auto* tr = app.add_subcommand("train", "Train the regressor; writes a checkpoint and metrics");
  std::string tr_dataset, tr_out, tr_metrics;
  int tr_epochs = 0, tr_cps = 0;
  std::uint64_t tr_seed = 0;
  bool tr_verbose = false;
  tr->add_option("--dataset", tr_dataset, "Labeled dataset directory")->required();
  tr->add_option("--out", tr_out, "Checkpoint path (.json)")->required();
  tr->add_option("--metrics-dir", tr_metrics, "Directory for metrics.json and training.csv (default: next to --out)");
  auto* o_epochs = tr->add_option("--max-epochs", tr_epochs, "Override train.max_epochs");
  auto* o_cps = tr->add_option("--composites-per-sample", tr_cps, "Override train.composites_per_sample");
  auto* o_tseed = tr->add_option("--seed", tr_seed, "Override train.seed");
  tr->add_flag("--verbose", tr_verbose, "Print per-epoch losses to stderr");
  tr->callback([&] {
    action = [&] {
      auto cfg = load_config(g);
      override_if(cfg, o_epochs, "train", "max_epochs", tr_epochs);
      override_if(cfg, o_cps, "train", "composites_per_sample", tr_cps);
      override_if(cfg, o_tseed, "train", "seed", tr_seed);
      const fs::path metrics = tr_metrics.empty() ? fs::path(tr_out).parent_path() / "metrics" : fs::path(tr_metrics);
      const auto r = vacuform::pipeline::train(cfg, tr_dataset, tr_out, metrics, tr_verbose);
      emit(g, r, "checkpoint " + tr_out + ": best val loss " + std::to_string(r["best_val_loss"].get<double>()) +
                     " at epoch " + std::to_string(r["best_epoch"].get<int>()) + " (" +
                     r["stop_reason"].get<std::string>() + ")");
    };
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset partition");
  std::string ev_ckpt, ev_dataset, ev_partition = "test", ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--dataset", ev_dataset, "Labeled dataset directory")->required();
  ev->add_option("--partition", ev_partition, "test | train | all")->check(CLI::IsMember({"test", "train", "all"}));
  ev->add_option("--out", ev_out, "Directory for eval.csv and eval.json")->required();
  ev->callback([&] {
    action = [&] {
      const auto cfg = load_config(g);
      const auto r = vacuform::pipeline::eval(cfg, ev_ckpt, ev_dataset, ev_partition, ev_out);
      emit(g, r, "mse " + std::to_string(r["mse"].get<double>()) + " over " + std::to_string(r["items"].get<int>()) +
                     " composites");
    };
  });

  // suggest
  auto* sg = app.add_subcommand("suggest", "Suggest a parameter change from 17 views of one part");
  std::string sg_ckpt, sg_views;
  double sg_power = 0, sg_time = 0, sg_vac = 0;
  int sg_n = 0;
  std::uint64_t sg_seed = 0;
  sg->add_option("--checkpoint", sg_ckpt, "Checkpoint path")->required();
  sg->add_option("--views", sg_views, "Directory with the 17 view PNGs (0.png = top)")->required();
  sg->add_option("--heat-power", sg_power, "Current heating power (%)")->required();
  sg->add_option("--heat-time", sg_time, "Current heating time (s)")->required();
  sg->add_option("--vacuum-time", sg_vac, "Current vacuum time (s)")->required();
  auto* o_n = sg->add_option("--composites", sg_n, "Override advisor.n_composites");
  auto* o_sseed = sg->add_option("--seed", sg_seed, "Override advisor.seed");
  sg->callback([&] {
    action = [&] {
      auto cfg = load_config(g);
      override_if(cfg, o_n, "advisor", "n_composites", sg_n);
      override_if(cfg, o_sseed, "advisor", "seed", sg_seed);
      const auto r = vacuform::pipeline::suggest(cfg, sg_ckpt, sg_views, {sg_power, sg_time, sg_vac});
      const auto& np = r["new_params"];
      std::ostringstream h;
      h << (r["needs_change"].get<bool>() ? "change to " : "no change needed; ") << "heat_power "
        << np["heat_power"] << " %, heat_time " << np["heat_time"] << " s, vacuum_time " << np["vacuum_time"]
        << " s";
      emit(g, r, h.str());
    };
  });

  // simulate-loop
  auto* sl = app.add_subcommand("simulate-loop", "Closed loop against the oracle from seeded bad starts");
  std::string sl_ckpt, sl_out;
  std::size_t sl_starts = 0;
  int sl_cycles = 0;
  std::uint64_t sl_seed = 0;
  bool sl_no_baseline = false;
  sl->add_option("--checkpoint", sl_ckpt, "Checkpoint path")->required();
  sl->add_option("--out", sl_out, "Directory for session_log.json and summary.json")->required();
  auto* o_starts = sl->add_option("--starts", sl_starts, "Override loop.starts");
  auto* o_cycles = sl->add_option("--max-cycles", sl_cycles, "Override loop.max_cycles");
  auto* o_lseed = sl->add_option("--seed", sl_seed, "Override loop.seed");
  sl->add_flag("--no-baseline", sl_no_baseline, "Skip the random-delta baseline");
  sl->callback([&] {
    action = [&] {
      auto cfg = load_config(g);
      override_if(cfg, o_starts, "loop", "starts", sl_starts);
      override_if(cfg, o_cycles, "loop", "max_cycles", sl_cycles);
      override_if(cfg, o_lseed, "loop", "seed", sl_seed);
      if (sl_no_baseline) cfg.set("loop", "baseline", "false");
      const auto r = vacuform::pipeline::simulate_loop(cfg, fs::path(sl_ckpt), sl_out);
      std::ostringstream h;
      h << "fixed within " << r["max_cycles"] << " cycles: " << r["model"]["fixed"] << "/" << r["starts"]
        << " (histogram " << r["model"]["cycles_to_good_histogram"].dump() << ")";
      if (r.contains("random_baseline")) h << "; random baseline " << r["random_baseline"]["fixed"];
      emit(g, r, h.str());
    };
  });

  // serve
  auto* sv = app.add_subcommand("serve", "Run the HTTP advisor service");
  std::string sv_models, sv_sessions, sv_host;
  int sv_port = 0;
  auto* o_models = sv->add_option("--models-dir", sv_models, "Directory of checkpoints (model id = file stem)");
  auto* o_sessions = sv->add_option("--sessions-dir", sv_sessions, "Directory for persisted sessions");
  auto* o_host = sv->add_option("--host", sv_host, "Bind address");
  auto* o_port = sv->add_option("--port", sv_port, "Port (0 = any free port)");
  sv->callback([&] {
    action = [&] {
      auto cfg = load_config(g);
      override_if(cfg, o_models, "serve", "models_dir", sv_models);
      override_if(cfg, o_sessions, "serve", "sessions_dir", sv_sessions);
      override_if(cfg, o_host, "serve", "host", sv_host);
      override_if(cfg, o_port, "serve", "port", sv_port);
      vacuform::Advisor advisor(cfg.get<std::string>("serve", "models_dir", "models"),
                                cfg.get<std::string>("serve", "sessions_dir", "sessions"));
      vacuform::AdvisorService service(advisor);
      const int port = service.bind(cfg.get<std::string>("serve", "host", "127.0.0.1"), cfg.get("serve", "port", 8080));
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      emit(g, {{"schema_version", 1}, {"port", port}}, "listening on port " + std::to_string(port));
      std::cout.flush();
      service.run();
      g_service = nullptr;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    action();
    return 0;
  } catch (const vacuform::Error& e) {
    std::cerr << "error [" << vacuform::to_string(e.code()) << "]"
              << (e.field().empty() ? "" : " (" + e.field() + ")") << ": " << e.what() << '\n';
    return e.is_validation() ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
