#pragma once

// Training loop: seeded per-epoch composite sampling, Adam with weight decay,
// learning-rate schedule, validation-based early stopping, best checkpoint.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vacuform/augmentation.hpp"
#include "vacuform/config_file.hpp"
#include "vacuform/dataset.hpp"
#include "vacuform/knn_labeler.hpp"
#include "vacuform/nn/adam.hpp"
#include "vacuform/nn/network.hpp"
#include "vacuform/regressor/model.hpp"

namespace vacuform {

struct LrSchedule {
  std::string type = "plateau";  // plateau | step | none
  int patience = 2;              // plateau: epochs without improvement before decay
  int step_size = 5;             // step: decay every step_size epochs
  double factor = 0.5;
  double min_lr = 1e-6;
};

struct TrainingConfig {
  int batch_size = 32;
  int max_epochs = 40;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  LrSchedule lr_schedule;
  int early_stop_patience = 4;
  double min_delta = 1e-4;
  std::uint64_t seed = 1;
  int composites_per_sample = 64;
  double validation_fraction = 0.1;
  int validation_composites = 16;
  nn::Architecture architecture;
  AdrConfig adr;
  AugmentConfig augment;
  InputNormStats lrn;  // mean/scale ignored; LRN constants used

  void validate() const {
    auto bad = [](const char* field, const char* msg) { fail(ErrorCode::configuration, msg, field); };
    if (batch_size <= 0) bad("train.batch_size", "batch_size must be positive");
    if (max_epochs <= 0) bad("train.max_epochs", "max_epochs must be positive");
    if (!(learning_rate >= 0.0)) bad("train.learning_rate", "learning_rate must be non-negative");
    if (!(weight_decay >= 0.0)) bad("train.weight_decay", "weight_decay must be non-negative");
    if (early_stop_patience < 1) bad("train.early_stop_patience", "early_stop_patience must be >= 1");
    if (composites_per_sample <= 0 || composites_per_sample > 680)
      bad("train.composites_per_sample", "composites_per_sample must lie in [1, 680]");
    if (validation_composites <= 0 || validation_composites > 680)
      bad("train.validation_composites", "validation_composites must lie in [1, 680]");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      bad("train.validation_fraction", "validation_fraction must lie in (0,1)");
    if (lr_schedule.type != "plateau" && lr_schedule.type != "step" && lr_schedule.type != "none")
      bad("train.lr_schedule.type", "lr_schedule.type must be plateau, step or none");
    if (!(lr_schedule.factor > 0.0 && lr_schedule.factor <= 1.0))
      bad("train.lr_schedule.factor", "lr_schedule.factor must lie in (0,1]");
    if (lr_schedule.patience < 1 || lr_schedule.step_size < 1)
      bad("train.lr_schedule.patience", "lr_schedule patience/step_size must be >= 1");
    architecture.validate();
  }

  json to_json() const {
    return {{"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"lr_schedule",
             {{"type", lr_schedule.type},
              {"patience", lr_schedule.patience},
              {"step_size", lr_schedule.step_size},
              {"factor", lr_schedule.factor},
              {"min_lr", lr_schedule.min_lr}}},
            {"early_stop_patience", early_stop_patience},
            {"min_delta", min_delta},
            {"seed", seed},
            {"composites_per_sample", composites_per_sample},
            {"validation_fraction", validation_fraction},
            {"validation_composites", validation_composites},
            {"architecture", architecture.to_json()},
            {"adr", adr_to_json(adr)},
            {"augment",
             {{"scale", augment.scale},
              {"rotation_deg", augment.rotation_deg},
              {"translation", augment.translation},
              {"brightness", augment.brightness},
              {"contrast", augment.contrast},
              {"saturation", augment.saturation}}},
            {"lrn", {{"k", lrn.lrn_k}, {"alpha", lrn.lrn_alpha}, {"beta", lrn.lrn_beta}}}};
  }

  std::string hash() const { return fnv1a_hex(to_json().dump()); }

  static TrainingConfig from_config(const ConfigFile& f) {
    TrainingConfig c;
    c.batch_size = f.get("train", "batch_size", c.batch_size);
    c.max_epochs = f.get("train", "max_epochs", c.max_epochs);
    c.learning_rate = f.get("train", "learning_rate", c.learning_rate);
    c.weight_decay = f.get("train", "weight_decay", c.weight_decay);
    c.early_stop_patience = f.get("train", "early_stop_patience", c.early_stop_patience);
    c.min_delta = f.get("train", "min_delta", c.min_delta);
    c.seed = f.get<std::uint64_t>("train", "seed", c.seed);
    c.composites_per_sample = f.get("train", "composites_per_sample", c.composites_per_sample);
    c.validation_fraction = f.get("train", "validation_fraction", c.validation_fraction);
    c.validation_composites = f.get("train", "validation_composites", c.validation_composites);
    c.lr_schedule.type = f.get<std::string>("train.lr_schedule", "type", c.lr_schedule.type);
    c.lr_schedule.patience = f.get("train.lr_schedule", "patience", c.lr_schedule.patience);
    c.lr_schedule.step_size = f.get("train.lr_schedule", "step_size", c.lr_schedule.step_size);
    c.lr_schedule.factor = f.get("train.lr_schedule", "factor", c.lr_schedule.factor);
    c.lr_schedule.min_lr = f.get("train.lr_schedule", "min_lr", c.lr_schedule.min_lr);
    auto& a = c.architecture;
    a.kind = f.get<std::string>("model", "kind", a.kind);
    a.input_size = f.get("model", "input_size", a.input_size);
    a.stem_channels = f.get("model", "stem_channels", a.stem_channels);
    if (auto s = f.raw("model", "stage_channels")) {
      a.stage_channels.clear();
      std::istringstream in(*s);
      std::string tok;
      while (std::getline(in, tok, ','))
        if (!tok.empty()) a.stage_channels.push_back(std::stoi(tok));
    }
    a.hidden_units = f.get("model", "hidden_units", a.hidden_units);
    c.adr = AdrConfig::from_config(f);
    c.augment = AugmentConfig::from_config(f);
    c.lrn.lrn_k = f.get("normalization", "lrn_k", c.lrn.lrn_k);
    c.lrn.lrn_alpha = f.get("normalization", "lrn_alpha", c.lrn.lrn_alpha);
    c.lrn.lrn_beta = f.get("normalization", "lrn_beta", c.lrn.lrn_beta);
    c.validate();
    return c;
  }
};

struct RunMetrics {
  std::vector<double> batch_losses;
  std::vector<double> epoch_train_losses;
  std::vector<double> epoch_val_losses;
  std::vector<double> epoch_learning_rates;
  std::string stop_reason;  // early_stop | max_epochs
  long batches_seen = 0;
  int epochs_seen = 0;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
  double baseline_val_mse = 0.0;  // MSE of predicting the mean train label
  std::vector<std::string> train_ids;
  std::vector<std::string> validation_ids;
  double seconds = 0.0;

  json to_json() const {
    return {{"batch_losses", batch_losses},
            {"epoch_train_losses", epoch_train_losses},
            {"epoch_val_losses", epoch_val_losses},
            {"epoch_learning_rates", epoch_learning_rates},
            {"stop_reason", stop_reason},
            {"batches_seen", batches_seen},
            {"epochs_seen", epochs_seen},
            {"best_epoch", best_epoch},
            {"best_val_loss", best_val_loss},
            {"baseline_val_mse", baseline_val_mse},
            {"train_ids", train_ids},
            {"validation_ids", validation_ids},
            {"seconds", seconds}};
  }
};

struct TrainResult {
  Model model;
  RunMetrics metrics;
};

/// One composite to build: which sample, which views, which seeds.
struct CompositeItem {
  std::size_t source = 0;
  ViewTriple triple{};
  std::uint64_t adr_seed = 0;
  std::uint64_t augment_seed = 0;
};

/// `count` distinct triples out of the 680, drawn by partial Fisher-Yates.
inline std::vector<ViewTriple> sample_triples(std::size_t count, std::uint64_t seed, int n_views = kViewCount) {
  static const auto all = enumerate_combinations(kViewCount);
  std::vector<ViewTriple> pool = n_views == kViewCount ? all : enumerate_combinations(n_views);
  count = std::min(count, pool.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

/// Sample-level validation carve-out from the train ids.
inline std::pair<std::vector<std::string>, std::vector<std::string>> carve_validation(
    std::vector<std::string> ids, double fraction, std::uint64_t seed) {
  require(ids.size() >= 2, ErrorCode::training, "need at least 2 train samples to carve a validation subset",
          "train_ids");
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, {0x7a1}));
  rng.shuffle(ids.begin(), ids.end());
  auto n_val = std::size_t(std::lround(fraction * double(ids.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, ids.size() - 1);
  std::vector<std::string> val(ids.begin(), ids.begin() + std::ptrdiff_t(n_val));
  std::vector<std::string> train(ids.begin() + std::ptrdiff_t(n_val), ids.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

/// Pixel mean/std over ADR-randomized views of the given sources.
inline InputNormStats compute_input_stats(const std::vector<CompositeSource>& sources, std::uint64_t seed,
                                          InputNormStats lrn = {}) {
  require(!sources.empty(), ErrorCode::training, "no sources for input statistics", "train_ids");
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s];
    // Triples (0..2), (3..5), ... cover each view once.
    for (int v = 0; v + 2 < int(src.view_count()); v += 3) {
      const auto c = src.make({v, v + 1, v + 2}, derive_seed(seed, {0x57a75, s, std::uint64_t(v)}));
      for (const auto& plane : c.channels)
        for (float x : plane.data) {
          sum += x;
          sq += double(x) * x;
          ++n;
        }
    }
  }
  InputNormStats st = lrn;
  st.mean = sum / double(n);
  st.scale = std::sqrt(std::max(sq / double(n) - st.mean * st.mean, 1e-12));
  return st;
}

inline Vec3 to_vec3(const AdjustmentVector& a) { return {a[0], a[1], a[2]}; }

using TrainProgress = std::function<void(int epoch, double train_loss, double val_loss, double lr)>;

inline TrainResult train(const TrainingConfig& cfg, const DatasetManifest& manifest,
                         const std::unordered_map<std::string, ViewSet>& views, const LabelSet& labels,
                         const TrainProgress& progress = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_all = manifest.train_ids();
  require(!train_all.empty(), ErrorCode::training, "train partition is empty", "train_ids");
  auto [train_ids, val_ids] = carve_validation(train_all, cfg.validation_fraction, cfg.seed);

  const int size = cfg.architecture.input_size;
  auto make_sources = [&](const std::vector<std::string>& ids) {
    std::vector<CompositeSource> out;
    std::vector<Vec3> targets;
    for (const auto& id : ids) {
      auto it = views.find(id);
      if (it == views.end()) fail(ErrorCode::training, "views missing for sample '" + id + "'", "views");
      out.emplace_back(id, it->second.views, size, cfg.adr);
      targets.push_back(to_vec3(labels.at(id)));
    }
    return std::pair{std::move(out), std::move(targets)};
  };
  auto [train_src, train_y] = make_sources(train_ids);
  auto [val_src, val_y] = make_sources(val_ids);

  const InputNormStats stats = compute_input_stats(train_src, cfg.seed, cfg.lrn);

  // Fixed, pre-normalized validation inputs.
  std::vector<nn::Tensor<float>> val_x;
  std::vector<Vec3> val_t;
  for (std::size_t s = 0; s < val_src.size(); ++s) {
    const auto triples = sample_triples(std::size_t(cfg.validation_composites), derive_seed(cfg.seed, {0x7a1, s}));
    for (std::size_t k = 0; k < triples.size(); ++k) {
      val_x.push_back(normalize_input<float>(val_src[s].make(triples[k], derive_seed(cfg.seed, {0x7a2, s, k})), stats));
      val_t.push_back(val_y[s]);
    }
  }

  RunMetrics metrics;
  metrics.train_ids = train_ids;
  metrics.validation_ids = val_ids;
  {
    Vec3 mean{0, 0, 0};
    for (const auto& y : train_y)
      for (int k = 0; k < 3; ++k) mean[k] += y[k] / double(train_y.size());
    std::vector<Vec3> base(val_t.size(), mean);
    metrics.baseline_val_mse = mse_loss(base, val_t);
  }

  nn::Network<float> net(cfg.architecture, cfg.seed);
  nn::Adam<float> opt(net, {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  nn::Network<float> best = net;

  auto validation_loss = [&]() {
    std::vector<Vec3> pred;
    pred.reserve(val_x.size());
    for (const auto& x : val_x) {
      const auto y = net.forward(x);
      pred.push_back({y.data[0], y.data[1], y.data[2]});
    }
    return mse_loss(pred, val_t);
  };

  int bad_epochs = 0, plateau = 0;
  double plateau_best = std::numeric_limits<double>::infinity();
  metrics.stop_reason = "max_epochs";
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<CompositeItem> items;
    for (std::size_t s = 0; s < train_src.size(); ++s) {
      const auto triples = sample_triples(std::size_t(cfg.composites_per_sample),
                                          derive_seed(cfg.seed, {0xe90c, std::uint64_t(epoch), s}));
      for (std::size_t k = 0; k < triples.size(); ++k)
        items.push_back({s, triples[k], derive_seed(cfg.seed, {0xad2, std::uint64_t(epoch), s, k}),
                         derive_seed(cfg.seed, {0xa06, std::uint64_t(epoch), s, k})});
    }
    Rng(derive_seed(cfg.seed, {0x5bf, std::uint64_t(epoch)})).shuffle(items.begin(), items.end());

    double epoch_loss = 0.0;
    std::size_t epoch_items = 0;
    for (std::size_t start = 0; start < items.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t end = std::min(items.size(), start + std::size_t(cfg.batch_size));
      const std::size_t bs = end - start;
      net.zero_grad();
      double loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& it = items[i];
        const auto composite =
            train_time_augment(train_src[it.source].make(it.triple, it.adr_seed), it.augment_seed, cfg.augment);
        const auto y = net.forward(normalize_input<float>(composite, stats));
        const Vec3 pred{y.data[0], y.data[1], y.data[2]};
        const Vec3& target = train_y[it.source];
        for (int k = 0; k < 3; ++k) loss += (pred[k] - target[k]) * (pred[k] - target[k]);
        const Vec3 g = mse_gradient(pred, target, bs);
        nn::Tensor<float> grad(3, 1, 1);
        for (int k = 0; k < 3; ++k) grad.data[k] = float(g[k]);
        net.backward(grad);
      }
      loss /= double(3 * bs);
      if (!std::isfinite(loss))
        fail(ErrorCode::training,
             "training diverged: batch loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                 ", batch " + std::to_string(metrics.batches_seen) + ", learning rate " +
                 std::to_string(opt.learning_rate()),
             "train.learning_rate");
      opt.step(net);
      if (!net.all_finite())
        fail(ErrorCode::training, "training diverged: non-finite weights after batch " +
                                      std::to_string(metrics.batches_seen) + " (epoch " + std::to_string(epoch) + ")",
             "train.learning_rate");
      metrics.batch_losses.push_back(loss);
      ++metrics.batches_seen;
      epoch_loss += loss * double(bs);
      epoch_items += bs;
    }

    const double val = validation_loss();
    if (!std::isfinite(val))
      fail(ErrorCode::training, "validation loss is not finite at epoch " + std::to_string(epoch), "train");
    metrics.epoch_train_losses.push_back(epoch_loss / double(std::max<std::size_t>(epoch_items, 1)));
    metrics.epoch_val_losses.push_back(val);
    metrics.epoch_learning_rates.push_back(opt.learning_rate());
    metrics.epochs_seen = epoch + 1;
    if (progress) progress(epoch, metrics.epoch_train_losses.back(), val, opt.learning_rate());

    if (val < metrics.best_val_loss - cfg.min_delta) {
      metrics.best_val_loss = val;
      metrics.best_epoch = epoch;
      best = net;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
    }

    if (cfg.lr_schedule.type == "plateau") {
      if (val < plateau_best - cfg.min_delta) {
        plateau_best = val;
        plateau = 0;
      } else if (++plateau >= cfg.lr_schedule.patience) {
        opt.set_learning_rate(std::max(cfg.lr_schedule.min_lr, opt.learning_rate() * cfg.lr_schedule.factor));
        plateau = 0;
      }
    } else if (cfg.lr_schedule.type == "step" && (epoch + 1) % cfg.lr_schedule.step_size == 0) {
      opt.set_learning_rate(std::max(cfg.lr_schedule.min_lr, opt.learning_rate() * cfg.lr_schedule.factor));
    }

    if (bad_epochs >= cfg.early_stop_patience) {
      metrics.stop_reason = "early_stop";
      break;
    }
  }
  metrics.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  TrainResult result;
  result.model.net = std::move(best);
  result.model.input_norm = stats;
  result.model.bounds = manifest.bounds;
  result.model.adr = cfg.adr;
  result.model.training_config = cfg.to_json();
  result.model.config_hash = cfg.hash();
  result.model.summary = {{"best_epoch", metrics.best_epoch},
                          {"best_val_loss", metrics.best_val_loss},
                          {"baseline_val_mse", metrics.baseline_val_mse},
                          {"epochs_seen", metrics.epochs_seen},
                          {"stop_reason", metrics.stop_reason}};
  result.metrics = std::move(metrics);
  return result;
}

}  // namespace vacuform
