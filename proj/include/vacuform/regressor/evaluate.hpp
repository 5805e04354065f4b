#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vacuform/augmentation.hpp"
#include "vacuform/dataset.hpp"
#include "vacuform/knn_labeler.hpp"
#include "vacuform/regressor/model.hpp"
#include "vacuform/regressor/train.hpp"

namespace vacuform {

struct EvalMetrics {
  double mse = 0.0;
  Vec3 mse_per_param{};
  Vec3 mae_per_param{};
  std::size_t items = 0;

  struct Row {
    std::string sample_id;
    ViewTriple triple{};
    Vec3 target{};
    Vec3 prediction{};
  };
  std::vector<Row> rows;

  json summary_json() const {
    json per = json::object();
    for (std::size_t k = 0; k < 3; ++k)
      per[kParamNames[k]] = {{"mse", mse_per_param[k]}, {"mae", mae_per_param[k]}};
    return {{"schema_version", 1}, {"items", items}, {"mse", mse}, {"per_parameter", per}};
  }
};

/// Metrics over paired predictions and targets.
inline EvalMetrics compute_metrics(std::span<const Vec3> pred, std::span<const Vec3> target) {
  require(pred.size() == target.size(), ErrorCode::validation, "prediction/target count mismatch", "batch");
  require(!pred.empty(), ErrorCode::validation, "cannot evaluate an empty partition", "partition");
  EvalMetrics m;
  m.items = pred.size();
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (int k = 0; k < 3; ++k) {
      const double r = pred[i][k] - target[i][k];
      m.mse_per_param[k] += r * r;
      m.mae_per_param[k] += std::abs(r);
    }
  for (int k = 0; k < 3; ++k) {
    m.mse_per_param[k] /= double(m.items);
    m.mae_per_param[k] /= double(m.items);
  }
  m.mse = (m.mse_per_param[0] + m.mse_per_param[1] + m.mse_per_param[2]) / 3.0;
  return m;
}

/// Runs `predict(CompositeImage) -> AdjustmentVector` over `composites_per_sample`
/// seeded composites of every sample in `ids`.
template <typename Predict>
EvalMetrics evaluate(Predict&& predict, const std::vector<std::string>& ids,
                     const std::unordered_map<std::string, ViewSet>& views, const LabelSet& labels, int input_size,
                     const AdrConfig& adr, int composites_per_sample, std::uint64_t seed) {
  require(!ids.empty(), ErrorCode::validation, "cannot evaluate an empty partition", "partition");
  std::vector<Vec3> pred, target;
  std::vector<EvalMetrics::Row> rows;
  for (std::size_t s = 0; s < ids.size(); ++s) {
    const auto& id = ids[s];
    auto it = views.find(id);
    if (it == views.end()) fail(ErrorCode::not_found, "views missing for sample '" + id + "'", "views");
    const CompositeSource src(id, it->second.views, input_size, adr);
    const Vec3 y = to_vec3(labels.at(id));
    const auto triples = sample_triples(std::size_t(composites_per_sample), derive_seed(seed, {0xe7a1, s}));
    for (std::size_t k = 0; k < triples.size(); ++k) {
      const AdjustmentVector a = predict(src.make(triples[k], derive_seed(seed, {0xe7a2, s, k})));
      const Vec3 p = to_vec3(a);
      pred.push_back(p);
      target.push_back(y);
      rows.push_back({id, triples[k], y, p});
    }
  }
  auto m = compute_metrics(pred, target);
  m.rows = std::move(rows);
  return m;
}

inline EvalMetrics evaluate_model(Model& model, const std::vector<std::string>& ids,
                                  const std::unordered_map<std::string, ViewSet>& views, const LabelSet& labels,
                                  int composites_per_sample = 16, std::uint64_t seed = 1) {
  return evaluate([&](const CompositeImage& c) { return model.predict(c); }, ids, views, labels,
                  model.input_size(), model.adr, composites_per_sample, seed);
}

inline void write_eval_csv(const std::filesystem::path& path, const EvalMetrics& m) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string(), "output");
  out.precision(9);
  out << "sample_id,view_a,view_b,view_c,target_power,target_time,target_vacuum,pred_power,pred_time,pred_vacuum\n";
  for (const auto& r : m.rows)
    out << r.sample_id << ',' << r.triple[0] << ',' << r.triple[1] << ',' << r.triple[2] << ',' << r.target[0] << ','
        << r.target[1] << ',' << r.target[2] << ',' << r.prediction[0] << ',' << r.prediction[1] << ','
        << r.prediction[2] << '\n';
}

inline void write_training_csv(const std::filesystem::path& path, const RunMetrics& m) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string(), "output");
  out.precision(9);
  out << "epoch,train_loss,val_loss,learning_rate\n";
  for (std::size_t e = 0; e < m.epoch_val_losses.size(); ++e)
    out << e << ',' << m.epoch_train_losses[e] << ',' << m.epoch_val_losses[e] << ',' << m.epoch_learning_rates[e]
        << '\n';
}

}  // namespace vacuform
