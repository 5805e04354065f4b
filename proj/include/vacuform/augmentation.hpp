#pragma once

// Segmentation, region-wise domain randomisation (ADR), three-view
// composition and train-time per-channel augmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "vacuform/config_file.hpp"
#include "vacuform/error.hpp"
#include "vacuform/image.hpp"
#include "vacuform/rng.hpp"

namespace vacuform {

using ViewTriple = std::array<int, 3>;

// ---------------------------------------------------------------------------
// Segmentation

/// Otsu threshold (0..255 bin index) of an 8-bit histogram. Returns -1 when
/// the histogram has a single populated level.
inline int otsu_threshold(const std::array<std::uint64_t, 256>& hist) {
  std::uint64_t total = 0;
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) {
    total += hist[i];
    sum_all += double(i) * double(hist[i]);
  }
  double sum_bg = 0.0, best = -1.0;
  std::uint64_t w_bg = 0;
  int threshold = -1;
  for (int t = 0; t < 255; ++t) {
    w_bg += hist[t];
    if (w_bg == 0) continue;
    const std::uint64_t w_fg = total - w_bg;
    if (w_fg == 0) break;
    sum_bg += double(t) * double(hist[t]);
    const double m_bg = sum_bg / double(w_bg);
    const double m_fg = (sum_all - sum_bg) / double(w_fg);
    const double between = double(w_bg) * double(w_fg) * (m_bg - m_fg) * (m_bg - m_fg);
    if (between > best) {
      best = between;
      threshold = t;
    }
  }
  return best > 0.0 ? threshold : -1;
}

namespace detail {

/// Labels 4-connected components of `value` pixels; returns the label image
/// (0 = not `value`) and the component sizes indexed by label.
inline std::vector<int> label_components(const Mask& m, std::uint8_t value, std::vector<std::size_t>& sizes) {
  std::vector<int> labels(m.data.size(), 0);
  sizes.assign(1, 0);
  std::vector<int> stack;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const std::size_t idx = std::size_t(y) * m.width + x;
      if (m.data[idx] != value || labels[idx] != 0) continue;
      const int label = int(sizes.size());
      sizes.push_back(0);
      stack.push_back(int(idx));
      labels[idx] = label;
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        ++sizes[label];
        const int cx = cur % m.width, cy = cur / m.width;
        const int nbr[4][2] = {{cx - 1, cy}, {cx + 1, cy}, {cx, cy - 1}, {cx, cy + 1}};
        for (const auto& n : nbr) {
          if (n[0] < 0 || n[1] < 0 || n[0] >= m.width || n[1] >= m.height) continue;
          const std::size_t ni = std::size_t(n[1]) * m.width + n[0];
          if (m.data[ni] == value && labels[ni] == 0) {
            labels[ni] = label;
            stack.push_back(int(ni));
          }
        }
      }
    }
  return labels;
}

}  // namespace detail

/// Global Otsu threshold on luminance; the class touching the image border
/// least is the sample. Keeps the largest connected sample component and
/// fills its enclosed holes.
inline Mask segment_sample(const Image& image) {
  require(!image.empty(), ErrorCode::validation, "cannot segment an empty image", "image");
  const Plane lum = luminance(image);
  std::array<std::uint64_t, 256> hist{};
  for (float v : lum.data) ++hist[to_u8(v)];
  const int t = otsu_threshold(hist);
  if (t < 0) fail(ErrorCode::segmentation, "degenerate image: constant luminance", "image");

  Mask dark(image.width, image.height);
  for (std::size_t i = 0; i < lum.data.size(); ++i) dark.data[i] = to_u8(lum.data[i]) <= t ? 1 : 0;
  std::size_t border_dark = 0, border_total = 0;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (x == 0 || y == 0 || x == image.width - 1 || y == image.height - 1) {
        ++border_total;
        border_dark += dark.at(x, y);
      }
  Mask fg = 2 * border_dark <= border_total ? dark : dark.complement();

  std::vector<std::size_t> sizes;
  auto labels = detail::label_components(fg, 1, sizes);
  const auto largest = int(std::max_element(sizes.begin() + 1, sizes.end()) - sizes.begin());
  if (sizes.size() <= 1 || sizes[largest] == 0)
    fail(ErrorCode::segmentation, "segmentation found no foreground", "image");
  Mask out(image.width, image.height);
  for (std::size_t i = 0; i < labels.size(); ++i) out.data[i] = labels[i] == largest ? 1 : 0;

  // Background components that do not reach the border are holes.
  std::vector<std::size_t> bg_sizes;
  auto bg = detail::label_components(out, 0, bg_sizes);
  std::vector<bool> touches(bg_sizes.size(), false);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      if (x == 0 || y == 0 || x == out.width - 1 || y == out.height - 1)
        touches[bg[std::size_t(y) * out.width + x]] = true;
  for (std::size_t i = 0; i < bg.size(); ++i)
    if (bg[i] != 0 && !touches[bg[i]]) out.data[i] = 1;
  return out;
}

// ---------------------------------------------------------------------------
// ADR

struct AdrConfig {
  double hue_max_deg = 180.0;
  double brightness = 0.2;   // additive shift range +/-
  double contrast = 0.3;     // multiplicative range 1 +/- contrast

  static AdrConfig from_config(const ConfigFile& f, const std::string& section = "augmentation.adr") {
    AdrConfig c;
    c.hue_max_deg = f.get(section, "hue_max_deg", c.hue_max_deg);
    c.brightness = f.get(section, "brightness", c.brightness);
    c.contrast = f.get(section, "contrast", c.contrast);
    require(c.hue_max_deg >= 0 && c.brightness >= 0 && c.contrast >= 0 && c.contrast < 1,
            ErrorCode::configuration, "ADR ranges must be non-negative (contrast < 1)", section);
    return c;
  }
};

namespace detail {

struct RegionTransform {
  std::array<float, 9> hue{};  // RGB rotation about the grey axis
  float contrast = 1.0f;
  float brightness = 0.0f;
};

inline RegionTransform draw_region_transform(Rng& rng, const AdrConfig& cfg) {
  RegionTransform t;
  const double angle = rng.uniform(-cfg.hue_max_deg, cfg.hue_max_deg) * M_PI / 180.0;
  const double c = std::cos(angle), s = std::sin(angle);
  const double k = 1.0 / 3.0, q = std::sqrt(k);
  // Rodrigues rotation about (1,1,1)/sqrt(3).
  t.hue = {float(c + (1 - c) * k), float((1 - c) * k - q * s), float((1 - c) * k + q * s),
           float((1 - c) * k + q * s), float(c + (1 - c) * k), float((1 - c) * k - q * s),
           float((1 - c) * k - q * s), float((1 - c) * k + q * s), float(c + (1 - c) * k)};
  t.contrast = float(rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast));
  t.brightness = float(rng.uniform(-cfg.brightness, cfg.brightness));
  return t;
}

}  // namespace detail

/// Independently recolours sample and background regions (hue rotation,
/// contrast, brightness), merges them and converts to one greyscale plane.
inline Plane apply_adr(const Image& image, const Mask& mask, std::uint64_t seed, const AdrConfig& cfg = {}) {
  require(mask.width == image.width && mask.height == image.height, ErrorCode::validation,
          "ADR mask dimensions do not match the image", "mask");
  Rng rng(derive_seed(seed, {0xad2}));
  const auto fg = detail::draw_region_transform(rng, cfg);
  const auto bg = detail::draw_region_transform(rng, cfg);
  Plane out(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const auto& t = mask.at(x, y) ? fg : bg;
      float rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = image.at(x, y, image.channels == 3 ? c : 0) / 255.0f;
      float rot[3];
      for (int r = 0; r < 3; ++r)
        rot[r] = t.hue[r * 3] * rgb[0] + t.hue[r * 3 + 1] * rgb[1] + t.hue[r * 3 + 2] * rgb[2];
      for (float& v : rot) v = std::clamp((v - 0.5f) * t.contrast + 0.5f + t.brightness, 0.0f, 1.0f);
      out.at(x, y) = std::clamp(luma(rot[0], rot[1], rot[2]), 0.0f, 1.0f);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Three-view composition

/// All unordered index triples i<j<k of [0, n_views), lexicographic order.
inline std::vector<ViewTriple> enumerate_combinations(int n_views = 17) {
  require(n_views >= 3, ErrorCode::validation, "need at least 3 views to form a triple", "n_views");
  std::vector<ViewTriple> out;
  out.reserve(std::size_t(n_views) * (n_views - 1) * (n_views - 2) / 6);
  for (int i = 0; i < n_views; ++i)
    for (int j = i + 1; j < n_views; ++j)
      for (int k = j + 1; k < n_views; ++k) out.push_back({i, j, k});
  return out;
}

/// Number of distinct composites a set of samples yields.
inline std::uint64_t composite_count(std::uint64_t samples, int n_views = 17) {
  const auto n = std::uint64_t(n_views);
  return samples * (n * (n - 1) * (n - 2) / 6);
}

struct CompositeImage {
  std::array<Plane, 3> channels;
  ViewTriple view_indices{};
  std::uint64_t adr_seed = 0;
  std::string sample_id;

  int width() const { return channels[0].width; }
  int height() const { return channels[0].height; }
  friend bool operator==(const CompositeImage&, const CompositeImage&) = default;
};

/// Stacks three greyscale views; channel c holds the view with the c-th
/// smallest index.
inline CompositeImage compose_three_channel(std::array<Plane, 3> views, ViewTriple indices,
                                            std::uint64_t adr_seed = 0, std::string sample_id = {}) {
  for (int c = 1; c < 3; ++c)
    require(views[c].same_shape(views[0]), ErrorCode::validation,
            "composite views must share dimensions", "views");
  require(views[0].width > 0 && views[0].height > 0, ErrorCode::validation, "composite views are empty",
          "views");
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return indices[a] < indices[b]; });
  CompositeImage out;
  for (int c = 0; c < 3; ++c) {
    out.channels[c] = std::move(views[order[c]]);
    out.view_indices[c] = indices[order[c]];
  }
  require(out.view_indices[0] < out.view_indices[1] && out.view_indices[1] < out.view_indices[2],
          ErrorCode::validation, "composite view indices must be distinct", "view_indices");
  out.adr_seed = adr_seed;
  out.sample_id = std::move(sample_id);
  return out;
}

inline std::array<Plane, 3> decompose(const CompositeImage& c) { return c.channels; }

// ---------------------------------------------------------------------------
// Train-time augmentation

struct AugmentConfig {
  double scale = 0.1;          // scale in [1-scale, 1+scale]
  double rotation_deg = 10.0;  // rotation in [-r, r]
  double translation = 0.05;   // fraction of side length
  double brightness = 0.1;
  double contrast = 0.1;
  double saturation = 0.1;

  static AugmentConfig none() { return {0, 0, 0, 0, 0, 0}; }

  static AugmentConfig from_config(const ConfigFile& f, const std::string& section = "augmentation") {
    AugmentConfig c;
    c.scale = f.get(section, "scale", c.scale);
    c.rotation_deg = f.get(section, "rotation_deg", c.rotation_deg);
    c.translation = f.get(section, "translation", c.translation);
    c.brightness = f.get(section, "brightness", c.brightness);
    c.contrast = f.get(section, "contrast", c.contrast);
    c.saturation = f.get(section, "saturation", c.saturation);
    require(c.scale >= 0 && c.scale < 1 && c.rotation_deg >= 0 && c.translation >= 0 && c.brightness >= 0 &&
                c.contrast >= 0 && c.saturation >= 0,
            ErrorCode::configuration, "augmentation ranges must be non-negative", section);
    return c;
  }
};

namespace detail {

inline Plane affine_warp(const Plane& src, double scale, double angle, double tx, double ty) {
  Plane out(src.width, src.height);
  const double cx = 0.5 * src.width, cy = 0.5 * src.height;
  const double c = std::cos(angle) / scale, s = std::sin(angle) / scale;
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      // Inverse map: output pixel centre back into the source.
      const double dx = x + 0.5 - cx - tx, dy = y + 0.5 - cy - ty;
      const double sx = std::clamp(c * dx + s * dy + cx - 0.5, 0.0, double(src.width - 1));
      const double sy = std::clamp(-s * dx + c * dy + cy - 0.5, 0.0, double(src.height - 1));
      const int x0 = int(sx), y0 = int(sy);
      const int x1 = std::min(x0 + 1, src.width - 1), y1 = std::min(y0 + 1, src.height - 1);
      const double fx = sx - x0, fy = sy - y0;
      const double top = src.at(x0, y0) * (1 - fx) + src.at(x1, y0) * fx;
      const double bot = src.at(x0, y1) * (1 - fx) + src.at(x1, y1) * fx;
      out.at(x, y) = float(top * (1 - fy) + bot * fy);
    }
  return out;
}

}  // namespace detail

/// Independent affine warp per channel, then brightness/contrast per channel
/// and a cross-channel saturation jitter. Output clamped to [0,1].
inline CompositeImage train_time_augment(const CompositeImage& in, std::uint64_t seed,
                                         const AugmentConfig& cfg = {}) {
  CompositeImage out = in;
  Rng rng(derive_seed(seed, {0xa06}));
  const double side = std::min(in.width(), in.height());
  for (int ch = 0; ch < 3; ++ch) {
    const double scale = rng.uniform(1.0 - cfg.scale, 1.0 + cfg.scale);
    const double angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) * M_PI / 180.0;
    const double tx = rng.uniform(-cfg.translation, cfg.translation) * side;
    const double ty = rng.uniform(-cfg.translation, cfg.translation) * side;
    const double bright = rng.uniform(-cfg.brightness, cfg.brightness);
    const double contrast = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
    auto& plane = out.channels[ch];
    if (scale != 1.0 || angle != 0.0 || tx != 0.0 || ty != 0.0)
      plane = detail::affine_warp(plane, scale, angle, tx, ty);
    if (contrast != 1.0) {
      const double mean = std::accumulate(plane.data.begin(), plane.data.end(), 0.0) / plane.data.size();
      for (float& v : plane.data) v = float((v - mean) * contrast + mean);
    }
    if (bright != 0.0)
      for (float& v : plane.data) v = float(v + bright);
  }
  const double sat = rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation);
  if (sat != 1.0) {
    for (std::size_t i = 0; i < out.channels[0].data.size(); ++i) {
      const double m = (out.channels[0].data[i] + out.channels[1].data[i] + out.channels[2].data[i]) / 3.0;
      for (auto& plane : out.channels) plane.data[i] = float(m + sat * (plane.data[i] - m));
    }
  }
  for (auto& plane : out.channels)
    for (float& v : plane.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

/// Builds composites lazily from a sample's views: masks are computed once,
/// ADR per view and seed on demand.
class CompositeSource {
 public:
  CompositeSource() = default;
  CompositeSource(std::string sample_id, const std::vector<Image>& views, int input_size, AdrConfig adr = {})
      : sample_id_(std::move(sample_id)), adr_(adr) {
    for (const auto& v : views) {
      Image img = input_size > 0 ? resize_bilinear(v, input_size, input_size) : v;
      masks_.push_back(segment_sample(img));
      views_.push_back(std::move(img));
    }
  }

  std::size_t view_count() const { return views_.size(); }
  const std::string& sample_id() const { return sample_id_; }

  /// ADR seeds are drawn per view so a view shared by two triples is
  /// recoloured identically under the same composite seed.
  CompositeImage make(const ViewTriple& triple, std::uint64_t adr_seed) const {
    std::array<Plane, 3> planes;
    for (int c = 0; c < 3; ++c) {
      const int v = triple[c];
      require(v >= 0 && std::size_t(v) < views_.size(), ErrorCode::validation, "view index out of range",
              "view_indices");
      planes[c] = apply_adr(views_[v], masks_[v], derive_seed(adr_seed, {std::uint64_t(v)}), adr_);
    }
    return compose_three_channel(std::move(planes), triple, adr_seed, sample_id_);
  }

 private:
  std::string sample_id_;
  AdrConfig adr_;
  std::vector<Image> views_;
  std::vector<Mask> masks_;
};

}  // namespace vacuform
