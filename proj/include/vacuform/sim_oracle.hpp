#pragma once

// Synthetic vacuum-forming process: parameters -> sheet temperature ->
// outcome (failure mode + severity) -> 17 rendered views. Serves as ground
// truth for desk-scale training and for closed-loop tests.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "vacuform/config_file.hpp"
#include "vacuform/error.hpp"
#include "vacuform/image.hpp"
#include "vacuform/params.hpp"
#include "vacuform/rng.hpp"

namespace vacuform {

enum class FailureMode { good, underheated, implosion, webbing, uneven_thickness };
enum class MouldShape { hemisphere, cut_cone, tall_box, short_box };

inline constexpr std::array<FailureMode, 5> kAllFailureModes = {
    FailureMode::good, FailureMode::underheated, FailureMode::implosion, FailureMode::webbing,
    FailureMode::uneven_thickness};

inline std::string_view to_string(FailureMode m) {
  switch (m) {
    case FailureMode::good: return "good";
    case FailureMode::underheated: return "underheated";
    case FailureMode::implosion: return "implosion";
    case FailureMode::webbing: return "webbing";
    case FailureMode::uneven_thickness: return "uneven_thickness";
  }
  return "good";
}

inline FailureMode failure_mode_from_string(std::string_view s) {
  for (auto m : kAllFailureModes)
    if (to_string(m) == s) return m;
  // "underheating" is accepted as a synonym on input.
  if (s == "underheating") return FailureMode::underheated;
  fail(ErrorCode::validation, "unknown failure mode '" + std::string(s) + "'", "failure_mode");
}

inline std::string_view to_string(MouldShape s) {
  switch (s) {
    case MouldShape::hemisphere: return "hemisphere";
    case MouldShape::cut_cone: return "cut_cone";
    case MouldShape::tall_box: return "tall_box";
    case MouldShape::short_box: return "short_box";
  }
  return "hemisphere";
}

inline MouldShape mould_shape_from_string(std::string_view s) {
  for (auto m : {MouldShape::hemisphere, MouldShape::cut_cone, MouldShape::tall_box, MouldShape::short_box})
    if (to_string(m) == s) return m;
  fail(ErrorCode::configuration, "unknown mould shape '" + std::string(s) + "'", "oracle.mould_shape");
}

struct Rgb {
  float r = 0, g = 0, b = 0;
};

inline Rgb material_rgb(std::string_view color) {
  if (color == "red") return {0.78f, 0.17f, 0.15f};
  if (color == "purple") return {0.50f, 0.22f, 0.62f};
  if (color == "green") return {0.22f, 0.58f, 0.26f};
  if (color == "orange") return {0.92f, 0.50f, 0.12f};
  if (color == "white") return {0.70f, 0.70f, 0.68f};
  fail(ErrorCode::configuration, "unknown material colour '" + std::string(color) + "'",
       "oracle.material_color");
}

struct OracleConfig {
  double ambient_temp = 25.0;      // °C
  double max_gain = 250.0;         // °C rise at 100 % power, infinite time
  double tau0 = 45.0;              // s, heating time constant at ref_thickness
  double ref_thickness = 1.0;      // mm
  double thickness = 1.0;          // mm
  Range form_window{120.0, 180.0};  // °C
  double vacuum_required = 4.0;    // s, below this the draw webs
  double vacuum_full = 6.0;        // s, vacuum time with zero draw severity
  double webbing_span = 1.0;       // s of deficit at which webbing severity saturates
  double good_threshold = 0.5;
  double edge_margin = 8.0;        // °C band inside each window edge -> uneven thickness
  double edge_severity = 0.7;      // severity exactly at a window edge
  double overflow = 60.0;          // °C outside the window at which severity saturates
  double severity_noise = 0.0;     // off by default
  MouldShape mould_shape = MouldShape::hemisphere;
  std::string material_color = "red";
  int image_size = 64;

  double tau() const { return tau0 * thickness / ref_thickness; }
  double window_center() const { return 0.5 * (form_window.min + form_window.max); }
  double window_half() const { return 0.5 * (form_window.max - form_window.min); }
  double core_half() const { return window_half() - edge_margin; }

  void validate() const {
    auto bad = [](const char* field, const std::string& msg) {
      fail(ErrorCode::configuration, msg, std::string("oracle.") + field);
    };
    if (!(tau0 > 0.0)) bad("tau0", "tau0 must be positive");
    if (!(thickness > 0.0)) bad("thickness", "thickness must be positive");
    if (!(ref_thickness > 0.0)) bad("ref_thickness", "ref_thickness must be positive");
    if (!(max_gain > 0.0)) bad("max_gain", "max_gain must be positive");
    if (!(ambient_temp < form_window.min && form_window.min < form_window.max))
      bad("form_window", "require ambient_temp < form_window.low < form_window.high");
    if (!(good_threshold > 0.0 && good_threshold < 1.0))
      bad("good_threshold", "good_threshold must lie in (0,1)");
    if (!(edge_severity > good_threshold && edge_severity < 1.0))
      bad("edge_severity", "edge_severity must lie in (good_threshold, 1)");
    if (!(edge_margin > 0.0 && edge_margin < window_half()))
      bad("edge_margin", "edge_margin must lie in (0, half window width)");
    if (!(overflow > 0.0)) bad("overflow", "overflow must be positive");
    const auto vb = table1_bounds()[2];
    if (!vb.contains(vacuum_required)) bad("vacuum_required", "vacuum_required outside machine vacuum range");
    if (!(vacuum_full > vacuum_required)) bad("vacuum_full", "vacuum_full must exceed vacuum_required");
    if (!(webbing_span > 0.0)) bad("webbing_span", "webbing_span must be positive");
    if (!(severity_noise >= 0.0 && severity_noise < 1.0)) bad("severity_noise", "severity_noise must lie in [0,1)");
    if (image_size < 32) bad("image_size", "image_size must be at least 32 px");
    material_rgb(material_color);
  }

  static OracleConfig from_config(const ConfigFile& f, const std::string& section = "oracle") {
    OracleConfig c;
    c.ambient_temp = f.get(section, "ambient_temp", c.ambient_temp);
    c.max_gain = f.get(section, "max_gain", c.max_gain);
    c.tau0 = f.get(section, "tau0", c.tau0);
    c.ref_thickness = f.get(section, "ref_thickness", c.ref_thickness);
    c.thickness = f.get(section, "thickness", c.thickness);
    c.form_window.min = f.get(section, "form_window_low", c.form_window.min);
    c.form_window.max = f.get(section, "form_window_high", c.form_window.max);
    c.vacuum_required = f.get(section, "vacuum_required", c.vacuum_required);
    c.vacuum_full = f.get(section, "vacuum_full", c.vacuum_full);
    c.webbing_span = f.get(section, "webbing_span", c.webbing_span);
    c.good_threshold = f.get(section, "good_threshold", c.good_threshold);
    c.edge_margin = f.get(section, "edge_margin", c.edge_margin);
    c.edge_severity = f.get(section, "edge_severity", c.edge_severity);
    c.overflow = f.get(section, "overflow", c.overflow);
    c.severity_noise = f.get(section, "severity_noise", c.severity_noise);
    c.mould_shape = mould_shape_from_string(f.get<std::string>(section, "mould_shape", "hemisphere"));
    c.material_color = f.get<std::string>(section, "material_color", c.material_color);
    c.image_size = f.get(section, "image_size", c.image_size);
    c.validate();
    return c;
  }
};

struct Outcome {
  FailureMode failure_mode = FailureMode::good;
  double severity = 0.0;
  double sheet_temp = 0.0;
};

/// T = ambient + (power/100) * max_gain * (1 - exp(-heat_time / tau)), with
/// tau = tau0 * thickness / ref_thickness. Vacuum time plays no part.
inline double sheet_temperature(const ProcessParams& p, const OracleConfig& c) {
  require(c.tau0 > 0.0 && c.thickness > 0.0 && c.ref_thickness > 0.0, ErrorCode::configuration,
          "tau0 and thickness must be positive", "oracle.tau0");
  require(std::isfinite(p.heat_power) && std::isfinite(p.heat_time) && p.heat_power >= 0.0 &&
              p.heat_time >= 0.0,
          ErrorCode::validation, "heating parameters must be finite and non-negative", "heat_power");
  return c.ambient_temp + (p.heat_power / 100.0) * c.max_gain * (1.0 - std::exp(-p.heat_time / c.tau()));
}

/// Severity contribution of the sheet temperature alone. Piecewise linear in
/// |T - window centre|: 0 at the centre, good_threshold at the core edge,
/// edge_severity at the window edge, 1 at overflow beyond it.
inline double thermal_severity(double temp, const OracleConfig& c) {
  const double d = std::abs(temp - c.window_center());
  const double core = c.core_half(), half = c.window_half(), th = c.good_threshold;
  if (d <= core) return th * d / core;
  if (d <= half) return th + (c.edge_severity - th) * (d - core) / c.edge_margin;
  return c.edge_severity + (1.0 - c.edge_severity) * std::min(1.0, (d - half) / c.overflow);
}

/// Severity contribution of the vacuum time alone: 0 at vacuum_full and above,
/// good_threshold at vacuum_required, 1 at webbing_span below it.
inline double vacuum_severity(double vacuum_time, const OracleConfig& c) {
  const double th = c.good_threshold;
  if (vacuum_time >= c.vacuum_full) return 0.0;
  if (vacuum_time >= c.vacuum_required)
    return th * (c.vacuum_full - vacuum_time) / (c.vacuum_full - c.vacuum_required);
  return th + (1.0 - th) * std::min(1.0, (c.vacuum_required - vacuum_time) / c.webbing_span);
}

namespace detail {
inline double params_hash_unit(const ProcessParams& p) {
  auto bits = [](double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, sizeof u);
    return u;
  };
  const auto h = derive_seed(bits(p.heat_power), {bits(p.heat_time), bits(p.vacuum_time)});
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}
}  // namespace detail

inline Outcome classify_outcome(const ProcessParams& p, const OracleConfig& c) {
  c.validate();
  Outcome o;
  o.sheet_temp = sheet_temperature(p, c);
  o.severity = std::max(thermal_severity(o.sheet_temp, c), vacuum_severity(p.vacuum_time, c));
  if (c.severity_noise > 0.0)
    o.severity = std::clamp(o.severity + c.severity_noise * detail::params_hash_unit(p), 0.0, 1.0);

  const double d = std::abs(o.sheet_temp - c.window_center());
  if (o.sheet_temp < c.form_window.min) {
    o.failure_mode = FailureMode::underheated;
  } else if (o.sheet_temp > c.form_window.max) {
    o.failure_mode = FailureMode::implosion;
  } else if (p.vacuum_time < c.vacuum_required) {
    o.failure_mode = FailureMode::webbing;
  } else if (d > c.core_half() || o.severity > c.good_threshold) {
    // With the noise knob on, severity can cross the threshold inside the
    // core; the nearest failure there is uneven wall thickness.
    o.failure_mode = FailureMode::uneven_thickness;
  } else {
    o.failure_mode = FailureMode::good;
  }
  if (c.severity_noise > 0.0) {
    if (o.failure_mode == FailureMode::good) o.severity = std::min(o.severity, c.good_threshold);
    else o.severity = std::max(o.severity, std::nextafter(c.good_threshold, 1.0));
  }
  return o;
}

/// Continuous parameters with severity exactly 0 (noise off): full power, the
/// heat time that puts T at the window centre, vacuum_full or more.
inline ProcessParams severity_minimizer(const OracleConfig& c, const ParamBounds& b = table1_bounds()) {
  const double power = b[0].max;
  const double frac = (c.window_center() - c.ambient_temp) / ((power / 100.0) * c.max_gain);
  require(frac > 0.0 && frac < 1.0, ErrorCode::configuration, "window centre unreachable at full power");
  const double t = -c.tau() * std::log(1.0 - frac);
  return {power, t, std::max(c.vacuum_full, b[2].min)};
}

/// Constant L with |severity(p) - severity(q)| <= L * ||norm(p) - norm(q)||_1
/// over the box `b` (noise off).
inline double severity_lipschitz_bound(const OracleConfig& c, const ParamBounds& b = table1_bounds()) {
  const double th = c.good_threshold;
  const double slope_temp = std::max({th / c.core_half(), (c.edge_severity - th) / c.edge_margin,
                                      (1.0 - c.edge_severity) / c.overflow});
  const double tau = c.tau();
  const double dT_dpower = b[0].span() / 100.0 * c.max_gain * (1.0 - std::exp(-b[1].max / tau));
  const double dT_dtime = b[1].span() * (b[0].max / 100.0) * c.max_gain / tau * std::exp(-b[1].min / tau);
  const double slope_vac = std::max(th / (c.vacuum_full - c.vacuum_required), (1.0 - th) / c.webbing_span);
  return std::max(slope_temp * std::max(dT_dpower, dT_dtime), slope_vac * b[2].span());
}

// ---------------------------------------------------------------------------
// Rendering

inline constexpr int kViewCount = 17;
inline constexpr int kViewsPerRing = 8;

enum class ViewKind { top, low_angle, high_angle };

inline ViewKind view_kind(int view_index) {
  if (view_index == 0) return ViewKind::top;
  return view_index <= kViewsPerRing ? ViewKind::low_angle : ViewKind::high_angle;
}

struct RenderedView {
  Image image;      // RGB
  Mask silhouette;  // pixels whose camera ray hits the formed sheet
};

struct RenderedViews {
  std::vector<RenderedView> views;  // 17, index 0 top, 1-8 low, 9-16 high
};

namespace detail {

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const { return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x}; }
  Vec3 normalized() const {
    const double n = std::sqrt(dot(*this));
    return {x / n, y / n, z / n};
  }
};

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// World: flange plate |X|,|Y| <= kFlangeHalf at height 0 standing kPlate above
// the table; the drawn dome sits at the centre with footprint radius kDomeRadius.
inline constexpr double kFlangeHalf = 0.8;
inline constexpr double kPlate = 0.06;
inline constexpr double kDomeRadius = 0.5;
inline constexpr double kTableZ = -kPlate;
inline constexpr double kBoundsTop = 0.75;
inline constexpr int kFolds = 6;

/// Everything the heightfield needs, derived once per sample.
struct Scene {
  MouldShape shape = MouldShape::hemisphere;
  double dome_height = 0.5;   // fully drawn = kDomeRadius
  double cap = 0.0;           // apex thinning radius fraction (temperature cue)
  double collapse = 0.0;      // implosion depth fraction
  double bridge = 0.0;        // vacuum deficit fraction -> base fillet width
  double sag = 0.0;           // heat-time cue: flange rim droop / corner rounding
  double fold_strength = 0.0; // webbing folds, 0 unless webbing
  double uneven = 0.0;        // asymmetric wall-thickness shading, 0 unless uneven
  double uneven_phase = 0.0;
  double fold_phase = 0.0;
  Rgb albedo;
};

inline double mould_profile(MouldShape shape, double X, double Y) {
  const double r = std::sqrt(X * X + Y * Y) / kDomeRadius;
  switch (shape) {
    case MouldShape::hemisphere: return r >= 1.0 ? 0.0 : std::sqrt(1.0 - r * r);
    case MouldShape::cut_cone: return clamp01((1.0 - r) / 0.55);
    case MouldShape::tall_box:
    case MouldShape::short_box: {
      const double s = std::max(std::abs(X), std::abs(Y)) / kDomeRadius;
      return clamp01((1.0 - s) / 0.3);
    }
  }
  return 0.0;
}

inline double flange_corner_radius(const Scene& s) { return 0.04 + 0.26 * s.sag; }

inline bool in_flange(const Scene& s, double X, double Y) {
  const double ax = std::abs(X), ay = std::abs(Y);
  if (ax > kFlangeHalf || ay > kFlangeHalf) return false;
  const double rc = flange_corner_radius(s);
  const double cx = ax - (kFlangeHalf - rc), cy = ay - (kFlangeHalf - rc);
  if (cx > 0 && cy > 0) return cx * cx + cy * cy <= rc * rc;
  return true;
}

/// Height of the formed sheet at (X,Y); only meaningful inside the flange.
inline double sheet_height(const Scene& s, double X, double Y) {
  const double r = std::sqrt(X * X + Y * Y) / kDomeRadius;
  const double edge = std::max(std::abs(X), std::abs(Y)) / kFlangeHalf;
  double z = -0.12 * s.sag * edge * edge * edge * edge;  // rim droop grows with heat time
  double dome = s.dome_height * mould_profile(s.shape, X, Y);
  if (s.collapse > 0.0) {
    const double c = std::max(0.0, 1.0 - r / 0.75);
    dome = dome * (1.0 - 0.35 * s.collapse) - s.collapse * s.dome_height * 0.75 * c * c;
  }
  if (s.bridge > 0.0) {
    // Sheet bridging the mould base when vacuum is short.
    const double reach = 0.7 * s.bridge;
    const double fillet = s.dome_height * 0.45 * s.bridge * clamp01(1.0 - (r - 0.75) / (0.25 + reach));
    dome = std::max(dome, std::min(fillet, s.dome_height * 0.45));
  }
  if (s.fold_strength > 0.0 && r > 0.4) {
    const double phi = std::atan2(Y, X);
    double ridge = 0.0;
    for (int k = 0; k < kFolds; ++k) {
      double dphi = std::remainder(phi - s.fold_phase - k * (2.0 * M_PI / kFolds), 2.0 * M_PI);
      const double perp = std::abs(dphi) * r * kDomeRadius;
      ridge = std::max(ridge, std::exp(-(perp * perp) / (0.035 * 0.035)));
    }
    const double radial = clamp01((r - 0.4) / 0.3) * clamp01((1.55 - r) / 0.3);
    dome = std::max(dome, 0.35 * s.fold_strength * s.dome_height * ridge * radial + 0.0);
  }
  return z + std::max(0.0, dome);
}

inline Rgb surface_albedo(const Scene& s, double X, double Y) {
  const double r = std::sqrt(X * X + Y * Y) / kDomeRadius;
  double k = 1.0;
  if (r < 1.0) {
    if (s.cap > 0.0 && r < 0.75 * s.cap) k *= 0.62;  // thinned apex reads darker
    if (s.uneven > 0.0) k *= 1.0 + 0.45 * s.uneven * std::cos(std::atan2(Y, X) - s.uneven_phase) * r;
  }
  return {float(s.albedo.r * k), float(s.albedo.g * k), float(s.albedo.b * k)};
}

inline Scene build_scene(const ProcessParams& p, const Outcome& o, const OracleConfig& c, std::uint64_t seed) {
  Scene s;
  s.shape = c.mould_shape;
  const double full = c.mould_shape == MouldShape::short_box ? 0.55 : 1.0;
  const double T = o.sheet_temp;
  const double lo = c.form_window.min, hi = c.form_window.max;
  const double warm = clamp01((T - c.ambient_temp) / (lo - c.ambient_temp));
  const double draw = T >= lo ? 1.0 : 0.12 + 0.88 * warm * warm;
  s.dome_height = kDomeRadius * full * draw;
  s.cap = clamp01((T - lo) / (hi - lo)) * (T <= hi ? 1.0 : 1.0);
  s.collapse = clamp01((T - hi) / (0.5 * c.overflow));
  if (s.collapse > 0.0) s.cap = 1.0;
  const auto vb = table1_bounds()[2];
  s.bridge = clamp01((c.vacuum_full - p.vacuum_time) / (c.vacuum_full - vb.min));
  const auto tb = table1_bounds()[1];
  s.sag = clamp01((p.heat_time - tb.min) / tb.span());
  const double excess = clamp01((o.severity - c.good_threshold) / (1.0 - c.good_threshold));
  if (o.failure_mode == FailureMode::webbing) s.fold_strength = 0.6 + 0.4 * excess;
  if (o.failure_mode == FailureMode::uneven_thickness) s.uneven = 0.6 + 0.4 * excess;
  Rng rng(derive_seed(seed, {0x5ce7e}));
  s.uneven_phase = rng.uniform(0.0, 2.0 * M_PI);
  s.fold_phase = rng.uniform(0.0, 2.0 * M_PI);
  s.albedo = material_rgb(c.material_color);
  return s;
}

struct Camera {
  Vec3 forward, right, up;
  double extent = 1.1;  // half-width of the view in world units
};

inline Camera make_camera(int view_index) {
  const ViewKind kind = view_kind(view_index);
  const double elevation = kind == ViewKind::top ? M_PI / 2 - 1e-9
                           : kind == ViewKind::low_angle ? 12.0 * M_PI / 180.0
                                                         : 45.0 * M_PI / 180.0;
  const int ring_pos = kind == ViewKind::top ? 0 : (view_index - 1) % kViewsPerRing;
  const double azimuth = ring_pos * (2.0 * M_PI / kViewsPerRing);
  Camera cam;
  // Camera sits at direction `back` from the origin, looking toward it.
  const Vec3 back{std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                  std::sin(elevation)};
  cam.forward = back * -1.0;
  cam.right = Vec3{-std::sin(azimuth), std::cos(azimuth), 0.0};
  cam.up = cam.right.cross(cam.forward).normalized() * -1.0;
  if (cam.up.z < 0) cam.up = cam.up * -1.0;
  if (kind == ViewKind::top) cam.up = Vec3{-std::cos(azimuth), -std::sin(azimuth), 0.0};
  return cam;
}

struct Hit {
  bool sample = false;  // true when the ray reached the formed sheet (incl. plate edge)
  Vec3 point;
};

inline Hit trace(const Scene& s, const Vec3& origin, const Vec3& dir) {
  // Parametric interval where the ray is between the table and the top bound.
  const double t_top = (kBoundsTop - origin.z) / dir.z;
  const double t_table = (kTableZ - origin.z) / dir.z;
  const int steps = std::abs(dir.z) > 0.99 ? 40 : 120;
  auto below_surface = [&](const Vec3& q) {
    if (!in_flange(s, q.x, q.y)) return false;
    return q.z <= sheet_height(s, q.x, q.y);
  };
  double prev = t_top;
  for (int i = 1; i <= steps; ++i) {
    const double t = t_top + (t_table - t_top) * double(i) / steps;
    const Vec3 q = origin + dir * t;
    if (below_surface(q)) {
      double a = prev, b = t;
      for (int k = 0; k < 10; ++k) {
        const double m = 0.5 * (a + b);
        if (below_surface(origin + dir * m)) b = m; else a = m;
      }
      return {true, origin + dir * b};
    }
    prev = t;
  }
  return {false, origin + dir * t_table};
}

inline RenderedView render_view(const Scene& s, int view_index, int size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x7133, std::uint64_t(view_index)}));
  const Camera cam = make_camera(view_index);
  const double shift_x = rng.uniform(-0.04, 0.04), shift_y = rng.uniform(-0.04, 0.04);
  const double exposure = rng.uniform(0.95, 1.05);
  const double light_az = rng.uniform(-0.3, 0.3) + 2.3;
  const Vec3 light = Vec3{std::cos(light_az) * 0.6, std::sin(light_az) * 0.6, 0.8}.normalized();
  const float table = float(rng.uniform(0.80, 0.86));
  const double noise_sigma = 0.008;

  RenderedView out;
  out.image = Image(size, size, 3);
  out.silhouette = Mask(size, size);
  const Vec3 focus{0.0, 0.0, view_kind(view_index) == ViewKind::low_angle ? 0.25 : 0.1};
  for (int py = 0; py < size; ++py) {
    for (int px = 0; px < size; ++px) {
      const double sx = ((px + 0.5) / size * 2.0 - 1.0) * cam.extent + shift_x;
      const double sy = (1.0 - (py + 0.5) / size * 2.0) * cam.extent + shift_y;
      const Vec3 origin = focus + cam.right * sx + cam.up * sy - cam.forward * 4.0;
      const Hit hit = trace(s, origin, cam.forward);
      float r, g, b;
      if (hit.sample) {
        out.silhouette.at(px, py) = 1;
        const double e = 2e-3;
        const double X = hit.point.x, Y = hit.point.y;
        Vec3 n;
        if (hit.point.z < sheet_height(s, X, Y) - 1e-3) {
          n = Vec3{X, Y, 0.0}.normalized();  // plate edge face
        } else {
          const double hx = sheet_height(s, X + e, Y) - sheet_height(s, X - e, Y);
          const double hy = sheet_height(s, X, Y + e) - sheet_height(s, X, Y - e);
          n = Vec3{-hx / (2 * e), -hy / (2 * e), 1.0}.normalized();
        }
        const double lambert = std::max(0.0, n.dot(light));
        const double view_term = std::max(0.0, -n.dot(cam.forward));
        const double shade = (0.30 + 0.62 * lambert + 0.12 * view_term) * exposure;
        const Rgb a = surface_albedo(s, X, Y);
        r = float(a.r * shade);
        g = float(a.g * shade);
        b = float(a.b * shade);
      } else {
        // Table with a soft vignette.
        const double rr = (sx * sx + sy * sy) / (cam.extent * cam.extent);
        const float t = float(table * (1.0 - 0.08 * rr) * exposure);
        r = t;
        g = t;
        b = float(t * 0.98);
      }
      const double nz = rng.normal() * noise_sigma;
      out.image.at(px, py, 0) = to_u8(r + nz);
      out.image.at(px, py, 1) = to_u8(g + nz);
      out.image.at(px, py, 2) = to_u8(b + nz);
    }
  }
  return out;
}

}  // namespace detail

/// Renders the 17 views with their ground-truth silhouettes. Geometry encodes
/// the outcome: dome height follows the draw (underheating), apex thinning
/// follows sheet temperature, implosion dents the crest, short vacuum bridges
/// the mould base, webbing adds radial folds, uneven thickness adds
/// asymmetric shading, and rim droop follows heat time.
inline RenderedViews render_views_with_masks(const ProcessParams& p, const Outcome& o, std::uint64_t seed,
                                             const OracleConfig& c) {
  require(c.image_size >= 32, ErrorCode::configuration, "image_size must be at least 32 px",
          "oracle.image_size");
  const auto scene = detail::build_scene(p, o, c, seed);
  RenderedViews out;
  out.views.reserve(kViewCount);
  for (int v = 0; v < kViewCount; ++v) out.views.push_back(detail::render_view(scene, v, c.image_size, seed));
  return out;
}

inline std::vector<Image> render_views(const ProcessParams& p, const Outcome& o, std::uint64_t seed,
                                       const OracleConfig& c) {
  auto rendered = render_views_with_masks(p, o, seed, c);
  std::vector<Image> images;
  images.reserve(kViewCount);
  for (auto& v : rendered.views) images.push_back(std::move(v.image));
  return images;
}

}  // namespace vacuform
