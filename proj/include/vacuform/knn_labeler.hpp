#pragma once

// Corrective labels: each bad sample gets the normalized parameter delta to
// its nearest good sample (Manhattan distance in the normalized cube); good
// samples get (0,0,0).

#include <cmath>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "vacuform/dataset.hpp"
#include "vacuform/error.hpp"
#include "vacuform/params.hpp"

namespace vacuform {

inline constexpr int kLabelsSchemaVersion = 1;

inline double manhattan_distance(const NormalizedParams& a, const NormalizedParams& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

struct NeighborMatch {
  std::string neighbor_id;
  double distance = 0.0;
  AdjustmentVector delta;
};

/// Distances closer than this count as a tie. Equal physical distances can
/// differ by an ulp after normalization, which would otherwise pick the winner.
inline constexpr double kTieTolerance = 1e-12;

/// Nearest good sample; ties resolved by the smallest sample_id, so the
/// result does not depend on the order of `goods`.
inline NeighborMatch nearest_good(const SampleRecord& bad, std::span<const SampleRecord> goods,
                                  const ParamBounds& b) {
  if (goods.empty())
    fail(ErrorCode::labeling, "no good samples to label against; expand the dataset with conforming parts",
         "goods");
  const NormalizedParams from = normalize_params(bad.params, b);
  const SampleRecord* best = nullptr;
  NormalizedParams best_point;
  double best_d = 0.0;
  for (const auto& g : goods) {
    const NormalizedParams to = normalize_params(g.params, b);
    const double d = manhattan_distance(from, to);
    if (!best || d < best_d - kTieTolerance || (std::abs(d - best_d) <= kTieTolerance && g.id < best->id)) {
      best = &g;
      best_d = d;
      best_point = to;
    }
  }
  NeighborMatch m;
  m.neighbor_id = best->id;
  m.distance = best_d;
  for (std::size_t i = 0; i < 3; ++i) m.delta[i] = best_point[i] - from[i];
  return m;
}

struct LabelSet {
  std::map<std::string, AdjustmentVector> labels;
  std::map<std::string, std::string> neighbors;  // bad sample -> matched good sample

  const AdjustmentVector& at(const std::string& id) const {
    auto it = labels.find(id);
    if (it == labels.end()) fail(ErrorCode::not_found, "no label for sample '" + id + "'", "sample_id");
    return it->second;
  }
  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

/// Labels every sample in the manifest. Reference goods come from the train
/// partition only (all samples when unsplit), so test samples never shape a
/// training label.
inline LabelSet label_dataset(const DatasetManifest& manifest) {
  const auto train = manifest.train_ids();
  std::vector<SampleRecord> goods;
  for (const auto& id : train) {
    const auto& s = manifest.at(id);
    if (s.verdict == Verdict::good) goods.push_back(s);
  }
  if (goods.empty())
    fail(ErrorCode::labeling,
         "train partition contains no good samples; add conforming parts before labeling", "samples");
  LabelSet out;
  for (const auto& s : manifest.samples) {
    if (s.verdict == Verdict::good) {
      out.labels[s.id] = AdjustmentVector{};
      continue;
    }
    auto m = nearest_good(s, goods, manifest.bounds);
    out.labels[s.id] = m.delta;
    out.neighbors[s.id] = m.neighbor_id;
  }
  return out;
}

inline json labels_to_json(const LabelSet& l) {
  json labels = json::object(), neighbors = json::object();
  for (const auto& [id, v] : l.labels) labels[id] = {v[0], v[1], v[2]};
  for (const auto& [id, n] : l.neighbors) neighbors[id] = n;
  return {{"schema_version", kLabelsSchemaVersion},
          {"order", {"heat_power", "heat_time", "vacuum_time"}},
          {"labels", labels},
          {"neighbors", neighbors}};
}

inline LabelSet labels_from_json(const json& j) {
  LabelSet l;
  try {
    require(j.at("schema_version").get<int>() == kLabelsSchemaVersion, ErrorCode::validation,
            "unsupported labels schema_version", "schema_version");
    for (const auto& [id, v] : j.at("labels").items()) {
      AdjustmentVector a{{v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()}};
      validate_adjustment(a);
      l.labels[id] = a;
    }
    if (j.contains("neighbors"))
      for (const auto& [id, n] : j["neighbors"].items()) l.neighbors[id] = n.get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::validation, std::string("malformed labels file: ") + e.what(), "labels");
  }
  return l;
}

inline std::filesystem::path labels_path(const std::filesystem::path& dataset_dir) {
  return dataset_dir / "labels.json";
}

inline void save_labels(const std::filesystem::path& dataset_dir, const LabelSet& l) {
  write_json_file(labels_path(dataset_dir), labels_to_json(l));
}

inline LabelSet load_labels(const std::filesystem::path& dataset_dir) {
  return labels_from_json(read_json_file(labels_path(dataset_dir)));
}

}  // namespace vacuform
