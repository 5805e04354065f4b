#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "vacuform/error.hpp"

namespace vacuform {

/// One machine setting. Heating power in percent, times in seconds.
struct ProcessParams {
  double heat_power = 0.0;
  double heat_time = 0.0;
  double vacuum_time = 0.0;

  std::array<double, 3> as_array() const { return {heat_power, heat_time, vacuum_time}; }
  static ProcessParams from_array(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

  friend bool operator==(const ProcessParams&, const ProcessParams&) = default;
  friend auto operator<=>(const ProcessParams&, const ProcessParams&) = default;
};

inline constexpr std::array<std::string_view, 3> kParamNames = {"heat_power", "heat_time",
                                                                "vacuum_time"};
inline constexpr std::array<std::string_view, 3> kParamUnits = {"%", "s", "s"};
/// Machine resolution per dimension: power 1 %, times 1 s.
inline constexpr std::array<double, 3> kMachineResolution = {1.0, 1.0, 1.0};

struct Range {
  double min = 0.0;
  double max = 1.0;
  double span() const { return max - min; }
  bool contains(double v) const { return v >= min && v <= max; }
  friend bool operator==(const Range&, const Range&) = default;
};

struct ParamBounds {
  std::array<Range, 3> dims{};

  const Range& operator[](std::size_t i) const { return dims[i]; }
  Range& operator[](std::size_t i) { return dims[i]; }

  void validate() const {
    for (std::size_t i = 0; i < 3; ++i)
      require(dims[i].min < dims[i].max, ErrorCode::validation,
              "bounds min must be below max for " + std::string(kParamNames[i]),
              std::string(kParamNames[i]));
  }

  bool contains(const ProcessParams& p) const {
    const auto a = p.as_array();
    for (std::size_t i = 0; i < 3; ++i)
      if (!dims[i].contains(a[i])) return false;
    return true;
  }

  friend bool operator==(const ParamBounds&, const ParamBounds&) = default;
};

/// Design ranges of the data-collection grid.
inline ParamBounds table1_bounds() { return ParamBounds{{Range{40, 100}, Range{10, 120}, Range{3, 7}}}; }

/// Levels of the data-collection grid.
struct ParameterGrid {
  std::array<double, 6> power{40, 50, 60, 70, 80, 100};
  std::array<double, 13> heat_time{10, 15, 17, 20, 25, 30, 40, 50, 60, 75, 90, 105, 120};
  std::array<double, 3> vacuum_time{3, 5, 7};
};

/// Full cross product of the data-collection levels (power-major order).
inline std::vector<ProcessParams> table1_grid() {
  ParameterGrid g;
  std::vector<ProcessParams> out;
  out.reserve(g.power.size() * g.heat_time.size() * g.vacuum_time.size());
  for (double p : g.power)
    for (double t : g.heat_time)
      for (double v : g.vacuum_time) out.push_back({p, t, v});
  return out;
}

inline void validate_in_bounds(const ProcessParams& p, const ParamBounds& b) {
  const auto a = p.as_array();
  for (std::size_t i = 0; i < 3; ++i) {
    require(std::isfinite(a[i]), ErrorCode::validation,
            std::string(kParamNames[i]) + " is not finite", std::string(kParamNames[i]));
    if (!b[i].contains(a[i]))
      fail(ErrorCode::validation,
           std::string(kParamNames[i]) + " = " + std::to_string(a[i]) + " outside bounds [" +
               std::to_string(b[i].min) + ", " + std::to_string(b[i].max) + "]",
           std::string(kParamNames[i]));
  }
}

/// Point in the min-max normalized parameter cube [0,1]^3.
struct NormalizedParams {
  std::array<double, 3> v{};
  double operator[](std::size_t i) const { return v[i]; }
  double& operator[](std::size_t i) { return v[i]; }
  friend bool operator==(const NormalizedParams&, const NormalizedParams&) = default;
};

/// Normalized correction in [-1,1]^3, ordered (power, heat time, vacuum time).
struct AdjustmentVector {
  std::array<double, 3> v{};
  double operator[](std::size_t i) const { return v[i]; }
  double& operator[](std::size_t i) { return v[i]; }
  double max_abs() const {
    return std::max({std::abs(v[0]), std::abs(v[1]), std::abs(v[2])});
  }
  bool is_zero() const { return v[0] == 0.0 && v[1] == 0.0 && v[2] == 0.0; }
  friend bool operator==(const AdjustmentVector&, const AdjustmentVector&) = default;
};

inline NormalizedParams normalize_params(const ProcessParams& p, const ParamBounds& b) {
  validate_in_bounds(p, b);
  const auto a = p.as_array();
  NormalizedParams n;
  for (std::size_t i = 0; i < 3; ++i) n[i] = (a[i] - b[i].min) / b[i].span();
  return n;
}

inline ProcessParams denormalize_params(const NormalizedParams& n, const ParamBounds& b) {
  std::array<double, 3> a{};
  for (std::size_t i = 0; i < 3; ++i) {
    require(n[i] >= 0.0 && n[i] <= 1.0, ErrorCode::validation,
            "normalized " + std::string(kParamNames[i]) + " outside [0,1]",
            std::string(kParamNames[i]));
    a[i] = b[i].min + n[i] * b[i].span();
  }
  return ProcessParams::from_array(a);
}

inline double snap_to_resolution(double value, double resolution) {
  return std::round(value / resolution) * resolution;
}

inline ProcessParams snap_to_machine(const ProcessParams& p) {
  auto a = p.as_array();
  for (std::size_t i = 0; i < 3; ++i) a[i] = snap_to_resolution(a[i], kMachineResolution[i]);
  return ProcessParams::from_array(a);
}

inline bool on_machine_grid(const ProcessParams& p) { return snap_to_machine(p) == p; }

inline void validate_adjustment(const AdjustmentVector& d) {
  for (std::size_t i = 0; i < 3; ++i) {
    require(std::isfinite(d[i]) && d[i] >= -1.0 && d[i] <= 1.0, ErrorCode::validation,
            "delta component " + std::string(kParamNames[i]) + " outside [-1,1]",
            std::string(kParamNames[i]));
  }
}

struct AdjustmentResult {
  ProcessParams unsnapped;  // clamp(params + denormalized delta)
  ProcessParams params;     // unsnapped, snapped to machine resolution
  bool clamped = false;
};

inline AdjustmentResult apply_adjustment_detailed(const ProcessParams& params,
                                                  const AdjustmentVector& delta,
                                                  const ParamBounds& bounds) {
  validate_adjustment(delta);
  bounds.validate();
  const auto a = params.as_array();
  AdjustmentResult r;
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    // Work in normalized coordinates so a label computed as a difference of
    // normalized points maps back onto the neighbor's physical value.
    const double n = (a[i] - bounds[i].min) / bounds[i].span() + delta[i];
    double v = bounds[i].min + n * bounds[i].span();
    if (v < bounds[i].min || v > bounds[i].max) r.clamped = true;
    out[i] = std::clamp(v, bounds[i].min, bounds[i].max);
  }
  r.unsnapped = ProcessParams::from_array(out);
  auto snapped = snap_to_machine(r.unsnapped).as_array();
  for (std::size_t i = 0; i < 3; ++i) snapped[i] = std::clamp(snapped[i], bounds[i].min, bounds[i].max);
  r.params = ProcessParams::from_array(snapped);
  return r;
}

inline ProcessParams apply_adjustment(const ProcessParams& params, const AdjustmentVector& delta,
                                      const ParamBounds& bounds) {
  if (delta.is_zero()) {
    validate_adjustment(delta);
    return params;
  }
  return apply_adjustment_detailed(params, delta, bounds).params;
}

/// Normalized delta in physical units (%, s, s).
inline std::array<double, 3> physical_delta(const AdjustmentVector& d, const ParamBounds& b) {
  return {d[0] * b[0].span(), d[1] * b[1].span(), d[2] * b[2].span()};
}

}  // namespace vacuform
