#pragma once

#include <cmath>
#include <vector>

#include "vacuform/nn/network.hpp"

namespace vacuform::nn {

/// Adam with decoupled weight decay (applied to weights, not biases).
template <typename S>
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-4;
  };

  explicit Adam(Network<S>& net, Options opt) : opt_(opt) {
    for (auto& p : net.parameters()) {
      m_.emplace_back(p.value->size(), 0.0);
      v_.emplace_back(p.value->size(), 0.0);
    }
  }

  double learning_rate() const { return opt_.learning_rate; }
  void set_learning_rate(double lr) { opt_.learning_rate = lr; }
  long steps() const { return t_; }

  void step(Network<S>& net) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
    auto params = net.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& value = *params[k].value;
      const auto& grad = *params[k].grad;
      auto& m = m_[k];
      auto& v = v_[k];
      const double decay = params[k].decay ? opt_.weight_decay : 0.0;
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.epsilon);
        value[i] = S(double(value[i]) - opt_.learning_rate * (update + decay * double(value[i])));
      }
    }
  }

 private:
  Options opt_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace vacuform::nn
