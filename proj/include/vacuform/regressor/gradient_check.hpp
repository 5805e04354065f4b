#pragma once

// Analytic vs central-difference gradients of the single-item MSE loss with
// respect to every network parameter. Meant for double-precision networks.

#include <algorithm>
#include <cmath>
#include <string>

#include "vacuform/nn/network.hpp"
#include "vacuform/regressor/model.hpp"

namespace vacuform {

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Small conv+head network for gradient checks (well under 1e4 parameters).
inline nn::Architecture tiny_architecture(int input_size = 8) {
  nn::Architecture a;
  a.input_size = input_size;
  a.stem_channels = 3;
  a.stage_channels = {4, 5};
  a.hidden_units = 6;
  return a;
}

inline nn::Architecture linear_architecture(int input_size = 4) {
  nn::Architecture a;
  a.kind = "linear";
  a.input_size = input_size;
  return a;
}

template <typename S>
double single_item_loss(nn::Network<S>& net, const nn::Tensor<S>& x, const Vec3& target) {
  const auto y = net.forward(x);
  const Vec3 pred{double(y.data[0]), double(y.data[1]), double(y.data[2])};
  return mse_loss(std::span<const Vec3>(&pred, 1), std::span<const Vec3>(&target, 1));
}

/// Relative error per parameter is |a - n| / max(|a|, |n|, floor); `floor`
/// keeps parameters whose true gradient is zero from dividing noise by noise.
template <typename S>
GradCheckReport gradient_check(nn::Network<S>& net, const nn::Tensor<S>& x, const Vec3& target, double step = 1e-5,
                               double floor = 1e-8) {
  net.zero_grad();
  const auto y = net.forward(x);
  const Vec3 pred{double(y.data[0]), double(y.data[1]), double(y.data[2])};
  const Vec3 g = mse_gradient(pred, target, 1);
  nn::Tensor<S> gy(3, 1, 1);
  for (int k = 0; k < 3; ++k) gy.data[k] = S(g[k]);
  net.backward(gy);

  GradCheckReport r;
  for (auto& p : net.parameters()) {
    const std::vector<S> analytic = *p.grad;
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      S& w = (*p.value)[i];
      const S saved = w;
      w = saved + S(step);
      const double lp = single_item_loss(net, x, target);
      w = saved - S(step);
      const double lm = single_item_loss(net, x, target);
      w = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      const double a = double(analytic[i]);
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      r.max_absolute_error = std::max(r.max_absolute_error, abs_err);
      if (rel > r.max_relative_error) {
        r.max_relative_error = rel;
        r.worst_parameter = p.name;
        r.worst_index = i;
      }
      ++r.checked;
    }
  }
  return r;
}

}  // namespace vacuform
