#pragma once

// Input normalization, MSE loss, and the trained-model container with its
// checkpoint format.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vacuform/augmentation.hpp"
#include "vacuform/dataset.hpp"
#include "vacuform/error.hpp"
#include "vacuform/nn/network.hpp"
#include "vacuform/params.hpp"

namespace vacuform {

using Vec3 = std::array<double, 3>;

inline constexpr int kCheckpointSchemaVersion = 1;
inline constexpr const char* kCheckpointFormat = "vacuform-checkpoint";

/// Dataset pixel statistics plus the cross-channel response constants.
/// normalized_c = z_c / (k + alpha/n * sum_c' z_c'^2)^beta, z = (x - mean)/scale,
/// with the sum over all n = 3 channels of the composite.
struct InputNormStats {
  double mean = 0.0;
  double scale = 1.0;
  double lrn_k = 1.0;
  double lrn_alpha = 0.1;
  double lrn_beta = 0.75;

  json to_json() const {
    return {{"mean", mean}, {"scale", scale}, {"lrn_k", lrn_k}, {"lrn_alpha", lrn_alpha}, {"lrn_beta", lrn_beta}};
  }
  static InputNormStats from_json(const json& j) {
    InputNormStats s;
    s.mean = j.at("mean").get<double>();
    s.scale = j.at("scale").get<double>();
    s.lrn_k = j.value("lrn_k", s.lrn_k);
    s.lrn_alpha = j.value("lrn_alpha", s.lrn_alpha);
    s.lrn_beta = j.value("lrn_beta", s.lrn_beta);
    require(s.scale > 0.0 && s.lrn_k > 0.0, ErrorCode::configuration, "input_norm scale and lrn_k must be positive",
            "input_norm");
    return s;
  }
  friend bool operator==(const InputNormStats&, const InputNormStats&) = default;
};

template <typename S = float>
nn::Tensor<S> normalize_input(const CompositeImage& c, const std::optional<InputNormStats>& stats) {
  if (!stats) fail(ErrorCode::configuration, "input normalization statistics are missing", "input_norm");
  const int w = c.width(), h = c.height();
  nn::Tensor<S> t(3, h, w);
  const double inv = 1.0 / stats->scale;
  const double a = stats->lrn_alpha / 3.0;
  for (std::size_t i = 0; i < std::size_t(w) * h; ++i) {
    double z[3], sq = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      z[ch] = (c.channels[ch].data[i] - stats->mean) * inv;
      sq += z[ch] * z[ch];
    }
    const double denom = std::pow(stats->lrn_k + a * sq, stats->lrn_beta);
    for (int ch = 0; ch < 3; ++ch) t.data[std::size_t(ch) * w * h + i] = S(z[ch] / denom);
  }
  return t;
}

template <typename S = float>
std::vector<nn::Tensor<S>> normalize_input(std::span<const CompositeImage> batch,
                                           const std::optional<InputNormStats>& stats) {
  std::vector<nn::Tensor<S>> out;
  out.reserve(batch.size());
  for (const auto& c : batch) out.push_back(normalize_input<S>(c, stats));
  return out;
}

/// Mean of squared residuals over every batch element and all 3 components.
inline double mse_loss(std::span<const Vec3> pred, std::span<const Vec3> target) {
  require(pred.size() == target.size(), ErrorCode::validation,
          "prediction batch size " + std::to_string(pred.size()) + " != target batch size " +
              std::to_string(target.size()),
          "batch");
  require(!pred.empty(), ErrorCode::validation, "empty batch", "batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (int k = 0; k < 3; ++k) {
      const double r = pred[i][k] - target[i][k];
      sum += r * r;
    }
  return sum / double(3 * pred.size());
}

/// dL/d(pred) of mse_loss for one item of a batch of `batch_size`.
inline Vec3 mse_gradient(const Vec3& pred, const Vec3& target, std::size_t batch_size) {
  const double k = 2.0 / double(3 * batch_size);
  return {k * (pred[0] - target[0]), k * (pred[1] - target[1]), k * (pred[2] - target[2])};
}

inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline json adr_to_json(const AdrConfig& a) {
  return {{"hue_max_deg", a.hue_max_deg}, {"brightness", a.brightness}, {"contrast", a.contrast}};
}
inline AdrConfig adr_from_json(const json& j) {
  AdrConfig a;
  a.hue_max_deg = j.value("hue_max_deg", a.hue_max_deg);
  a.brightness = j.value("brightness", a.brightness);
  a.contrast = j.value("contrast", a.contrast);
  return a;
}

/// A trained regressor and everything needed to run it on new views.
class Model {
 public:
  nn::Network<float> net;
  InputNormStats input_norm;
  ParamBounds bounds = table1_bounds();
  AdrConfig adr;
  json training_config = json::object();
  std::string config_hash;
  json summary = json::object();

  int input_size() const { return net.architecture().input_size; }

  /// Forward pass; mutates the network's activation caches, so concurrent
  /// callers must each hold their own copy.
  AdjustmentVector predict(const CompositeImage& c) {
    const auto y = net.forward(normalize_input<float>(c, input_norm));
    AdjustmentVector out;
    for (int k = 0; k < 3; ++k) out[k] = std::clamp(double(y.data[k]), -1.0, 1.0);
    return out;
  }

  json to_json() {
    json weights = json::object();
    for (auto& p : net.parameters()) weights[p.name] = *p.value;
    return {{"format", kCheckpointFormat},
            {"schema_version", kCheckpointSchemaVersion},
            {"architecture", net.architecture().to_json()},
            {"weights", weights},
            {"input_norm", input_norm.to_json()},
            {"bounds", bounds_to_json(bounds)},
            {"adr", adr_to_json(adr)},
            {"training_config", training_config},
            {"config_hash", config_hash},
            {"summary", summary}};
  }

  static Model from_json(const json& j) {
    Model m;
    try {
      require(j.at("format").get<std::string>() == kCheckpointFormat, ErrorCode::model,
              "not a vacuform checkpoint", "checkpoint");
      require(j.at("schema_version").get<int>() == kCheckpointSchemaVersion, ErrorCode::model,
              "unsupported checkpoint schema_version", "checkpoint");
      m.net = nn::Network<float>(nn::Architecture::from_json(j.at("architecture")), 0);
      const auto& w = j.at("weights");
      for (auto& p : m.net.parameters()) {
        if (!w.contains(p.name)) fail(ErrorCode::model, "checkpoint lacks weights for " + p.name, "weights");
        auto values = w[p.name].get<std::vector<float>>();
        if (values.size() != p.value->size())
          fail(ErrorCode::model, "weight " + p.name + " has wrong size", "weights");
        *p.value = std::move(values);
      }
      m.input_norm = InputNormStats::from_json(j.at("input_norm"));
      m.bounds = bounds_from_json(j.at("bounds"));
      m.adr = adr_from_json(j.value("adr", json::object()));
      m.training_config = j.value("training_config", json::object());
      m.config_hash = j.value("config_hash", std::string());
      m.summary = j.value("summary", json::object());
    } catch (const json::exception& e) {
      fail(ErrorCode::model, std::string("malformed checkpoint: ") + e.what(), "checkpoint");
    }
    require(m.net.all_finite(), ErrorCode::model, "checkpoint contains non-finite weights", "weights");
    return m;
  }
};

inline void save_checkpoint(const std::filesystem::path& path, Model& m) { write_json_file(path, m.to_json()); }

inline Model load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::not_found, "checkpoint " + path.string() + " not found", "checkpoint");
  return Model::from_json(read_json_file(path));
}

}  // namespace vacuform
