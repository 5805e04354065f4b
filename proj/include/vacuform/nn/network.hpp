#pragma once

// Minimal CNN building blocks with hand-written backward passes. Layers work
// on one example at a time (C x H x W); a batch is a loop that accumulates
// parameter gradients. Scalar is float for training and double for gradient
// checking.

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vacuform/error.hpp"
#include "vacuform/rng.hpp"

namespace vacuform::nn {

using json = nlohmann::json;

template <typename S>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<S> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, S fill = S(0))
      : c(channels), h(height), w(width), data(std::size_t(channels) * height * width, fill) {}

  std::size_t size() const { return data.size(); }
  S& at(int ch, int y, int x) { return data[(std::size_t(ch) * h + y) * w + x]; }
  S at(int ch, int y, int x) const { return data[(std::size_t(ch) * h + y) * w + x]; }
};

template <typename S>
struct ParamRef {
  std::string name;
  std::vector<S>* value;
  std::vector<S>* grad;
  bool decay;  // weight decay applies (weights yes, biases no)
};

template <typename S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<S> forward(const Tensor<S>& x) = 0;
  /// Consumes dL/d(output) of the most recent forward; accumulates parameter
  /// gradients and returns dL/d(input).
  virtual Tensor<S> backward(const Tensor<S>& grad_out) = 0;
  virtual void collect(std::vector<ParamRef<S>>& out, const std::string& prefix) {
    (void)out;
    (void)prefix;
  }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
class Conv2d final : public Layer<S> {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad)
      : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(pad),
        weight_(std::size_t(out_ch) * in_ch * kernel * kernel, S(0)), bias_(out_ch, S(0)),
        gweight_(weight_.size(), S(0)), gbias_(out_ch, S(0)) {}

  void init(Rng& rng, double gain = 1.0) {
    const double fan_in = double(in_) * k_ * k_;
    const double sd = gain * std::sqrt(2.0 / fan_in);
    for (auto& v : weight_) v = S(rng.normal() * sd);
    std::fill(bias_.begin(), bias_.end(), S(0));
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    if (x.c != in_) fail(ErrorCode::model, "conv input has " + std::to_string(x.c) + " channels, expected " + std::to_string(in_));
    in_h_ = x.h;
    in_w_ = x.w;
    out_h_ = (x.h + 2 * pad_ - k_) / stride_ + 1;
    out_w_ = (x.w + 2 * pad_ - k_) / stride_ + 1;
    const int rows = in_ * k_ * k_, cols = out_h_ * out_w_;
    cols_.setZero(rows, cols);
    for (int c = 0; c < in_; ++c)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const int r = (c * k_ + ky) * k_ + kx;
          for (int oy = 0; oy < out_h_; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int ox = 0; ox < out_w_; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.w) continue;
              cols_(r, oy * out_w_ + ox) = x.at(c, iy, ix);
            }
          }
        }
    Tensor<S> y(out_, out_h_, out_w_);
    Eigen::Map<const RowMat<S>> W(weight_.data(), out_, rows);
    Eigen::Map<RowMat<S>> Y(y.data.data(), out_, cols);
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> b(bias_.data(), out_);
    Y.noalias() = W * cols_;
    Y.colwise() += b;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& g) override {
    const int rows = in_ * k_ * k_, cols = out_h_ * out_w_;
    Eigen::Map<const RowMat<S>> G(g.data.data(), out_, cols);
    Eigen::Map<const RowMat<S>> W(weight_.data(), out_, rows);
    Eigen::Map<RowMat<S>> GW(gweight_.data(), out_, rows);
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> gb(gbias_.data(), out_);
    GW.noalias() += G * cols_.transpose();
    gb += G.rowwise().sum();
    const RowMat<S> dcols = W.transpose() * G;
    Tensor<S> dx(in_, in_h_, in_w_);
    for (int c = 0; c < in_; ++c)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const int r = (c * k_ + ky) * k_ + kx;
          for (int oy = 0; oy < out_h_; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= in_h_) continue;
            for (int ox = 0; ox < out_w_; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= in_w_) continue;
              dx.at(c, iy, ix) += dcols(r, oy * out_w_ + ox);
            }
          }
        }
    return dx;
  }

  void collect(std::vector<ParamRef<S>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".weight", &weight_, &gweight_, true});
    out.push_back({prefix + ".bias", &bias_, &gbias_, false});
  }

  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<Conv2d>(*this); }

 private:
  int in_, out_, k_, stride_, pad_;
  std::vector<S> weight_, bias_, gweight_, gbias_;
  RowMat<S> cols_;
  int in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
};

template <typename S>
class Relu final : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x) override {
    Tensor<S> y = x;
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y.data[i] > S(0)) mask_[i] = 1;
      else y.data[i] = S(0);
    }
    return y;
  }
  Tensor<S> backward(const Tensor<S>& g) override {
    Tensor<S> dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!mask_[i]) dx.data[i] = S(0);
    return dx;
  }
  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<Relu>(*this); }

 private:
  std::vector<std::uint8_t> mask_;
};

/// relu(conv3x3(relu(conv3x3_stride(x))) + skip(x)); skip is a strided 1x1
/// projection when the shape changes.
template <typename S>
class ResidualBlock final : public Layer<S> {
 public:
  ResidualBlock(int in_ch, int out_ch, int stride)
      : conv1_(in_ch, out_ch, 3, stride, 1), conv2_(out_ch, out_ch, 3, 1, 1) {
    if (stride != 1 || in_ch != out_ch) proj_ = std::make_unique<Conv2d<S>>(in_ch, out_ch, 1, stride, 0);
  }
  ResidualBlock(const ResidualBlock& o)
      : conv1_(o.conv1_), conv2_(o.conv2_), relu1_(o.relu1_), relu_out_(o.relu_out_) {
    if (o.proj_) proj_ = std::make_unique<Conv2d<S>>(*o.proj_);
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng, 0.5);
    if (proj_) proj_->init(rng, 0.5);
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    Tensor<S> main = conv2_.forward(relu1_.forward(conv1_.forward(x)));
    const Tensor<S> skip = proj_ ? proj_->forward(x) : x;
    for (std::size_t i = 0; i < main.size(); ++i) main.data[i] += skip.data[i];
    return relu_out_.forward(main);
  }

  Tensor<S> backward(const Tensor<S>& g) override {
    const Tensor<S> gsum = relu_out_.backward(g);
    Tensor<S> dx = conv1_.backward(relu1_.backward(conv2_.backward(gsum)));
    const Tensor<S> dskip = proj_ ? proj_->backward(gsum) : gsum;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dskip.data[i];
    return dx;
  }

  void collect(std::vector<ParamRef<S>>& out, const std::string& prefix) override {
    conv1_.collect(out, prefix + ".conv1");
    conv2_.collect(out, prefix + ".conv2");
    if (proj_) proj_->collect(out, prefix + ".proj");
  }

  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<ResidualBlock>(*this); }

 private:
  Conv2d<S> conv1_, conv2_;
  std::unique_ptr<Conv2d<S>> proj_;
  Relu<S> relu1_, relu_out_;
};

template <typename S>
class GlobalAvgPool final : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x) override {
    c_ = x.c;
    h_ = x.h;
    w_ = x.w;
    Tensor<S> y(x.c, 1, 1);
    const std::size_t hw = std::size_t(x.h) * x.w;
    for (int c = 0; c < x.c; ++c) {
      S sum = 0;
      for (std::size_t i = 0; i < hw; ++i) sum += x.data[c * hw + i];
      y.data[c] = sum / S(hw);
    }
    return y;
  }
  Tensor<S> backward(const Tensor<S>& g) override {
    Tensor<S> dx(c_, h_, w_);
    const std::size_t hw = std::size_t(h_) * w_;
    for (int c = 0; c < c_; ++c)
      for (std::size_t i = 0; i < hw; ++i) dx.data[c * hw + i] = g.data[c] / S(hw);
    return dx;
  }
  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }

 private:
  int c_ = 0, h_ = 0, w_ = 0;
};

/// Fully connected; flattens its input.
template <typename S>
class Dense final : public Layer<S> {
 public:
  Dense(int in, int out)
      : in_(in), out_(out), weight_(std::size_t(in) * out, S(0)), bias_(out, S(0)),
        gweight_(weight_.size(), S(0)), gbias_(out, S(0)) {}

  void init(Rng& rng, double gain = 1.0) {
    const double sd = gain * std::sqrt(2.0 / in_);
    for (auto& v : weight_) v = S(rng.normal() * sd);
  }

  Tensor<S> forward(const Tensor<S>& x) override {
    if (int(x.size()) != in_)
      fail(ErrorCode::model, "dense input has " + std::to_string(x.size()) + " values, expected " + std::to_string(in_));
    in_shape_ = {x.c, x.h, x.w};
    input_ = x.data;
    Tensor<S> y(out_, 1, 1);
    Eigen::Map<const RowMat<S>> W(weight_.data(), out_, in_);
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> xv(input_.data(), in_), b(bias_.data(), out_);
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> yv(y.data.data(), out_);
    yv.noalias() = W * xv + b;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& g) override {
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> gv(g.data.data(), out_), xv(input_.data(), in_);
    Eigen::Map<const RowMat<S>> W(weight_.data(), out_, in_);
    Eigen::Map<RowMat<S>> GW(gweight_.data(), out_, in_);
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> gb(gbias_.data(), out_);
    GW.noalias() += gv * xv.transpose();
    gb += gv;
    Tensor<S> dx(in_shape_[0], in_shape_[1], in_shape_[2]);
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> dxv(dx.data.data(), in_);
    dxv.noalias() = W.transpose() * gv;
    return dx;
  }

  void collect(std::vector<ParamRef<S>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".weight", &weight_, &gweight_, true});
    out.push_back({prefix + ".bias", &bias_, &gbias_, false});
  }

  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<Dense>(*this); }

 private:
  int in_, out_;
  std::vector<S> weight_, bias_, gweight_, gbias_;
  std::vector<S> input_;
  std::array<int, 3> in_shape_{};
};

template <typename S>
class TanhLayer final : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x) override {
    Tensor<S> y = x;
    for (auto& v : y.data) v = std::tanh(v);
    out_ = y.data;
    return y;
  }
  Tensor<S> backward(const Tensor<S>& g) override {
    Tensor<S> dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= S(1) - out_[i] * out_[i];
    return dx;
  }
  std::unique_ptr<Layer<S>> clone() const override { return std::make_unique<TanhLayer>(*this); }

 private:
  std::vector<S> out_;
};

// ---------------------------------------------------------------------------

/// Architecture descriptor. `residual_cnn`: stem conv3x3 -> one stride-2
/// residual block per stage -> global average pool -> dense(hidden) + relu
/// -> dense(3) -> tanh. `linear`: flatten -> dense(3) -> tanh.
struct Architecture {
  std::string kind = "residual_cnn";
  int input_channels = 3;
  int input_size = 64;
  int stem_channels = 8;
  std::vector<int> stage_channels{8, 16, 32, 48};
  int hidden_units = 32;
  int outputs = 3;

  json to_json() const {
    return {{"kind", kind},
            {"input_channels", input_channels},
            {"input_size", input_size},
            {"stem_channels", stem_channels},
            {"stage_channels", stage_channels},
            {"hidden_units", hidden_units},
            {"outputs", outputs}};
  }

  static Architecture from_json(const json& j) {
    Architecture a;
    try {
      a.kind = j.at("kind").get<std::string>();
      a.input_channels = j.at("input_channels").get<int>();
      a.input_size = j.at("input_size").get<int>();
      a.stem_channels = j.value("stem_channels", a.stem_channels);
      a.stage_channels = j.value("stage_channels", a.stage_channels);
      a.hidden_units = j.value("hidden_units", a.hidden_units);
      a.outputs = j.at("outputs").get<int>();
    } catch (const json::exception& e) {
      fail(ErrorCode::model, std::string("malformed architecture descriptor: ") + e.what(), "architecture");
    }
    a.validate();
    return a;
  }

  void validate() const {
    require(kind == "residual_cnn" || kind == "linear", ErrorCode::model, "unknown architecture kind '" + kind + "'",
            "architecture.kind");
    require(outputs == 3, ErrorCode::model, "regression head must have exactly 3 outputs", "architecture.outputs");
    require(input_channels > 0 && input_size > 0, ErrorCode::model, "input shape must be positive",
            "architecture.input_size");
    if (kind == "residual_cnn") {
      require(stem_channels > 0 && hidden_units > 0 && !stage_channels.empty(), ErrorCode::model,
              "residual_cnn needs a stem, at least one stage and hidden units", "architecture");
      for (int c : stage_channels) require(c > 0, ErrorCode::model, "stage channels must be positive", "architecture");
    }
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

template <typename S>
class Network {
 public:
  Network() = default;

  Network(const Architecture& arch, std::uint64_t seed) : arch_(arch) {
    arch.validate();
    Rng rng(derive_seed(seed, {0x1417}));
    if (arch.kind == "linear") {
      const int in = arch.input_channels * arch.input_size * arch.input_size;
      auto head = std::make_unique<Dense<S>>(in, arch.outputs);
      head->init(rng, 0.5);
      add(std::move(head), "head");
    } else {
      auto stem = std::make_unique<Conv2d<S>>(arch.input_channels, arch.stem_channels, 3, 1, 1);
      stem->init(rng);
      add(std::move(stem), "stem");
      add(std::make_unique<Relu<S>>(), "stem_relu");
      int ch = arch.stem_channels;
      for (std::size_t i = 0; i < arch.stage_channels.size(); ++i) {
        auto block = std::make_unique<ResidualBlock<S>>(ch, arch.stage_channels[i], 2);
        block->init(rng);
        add(std::move(block), "stage" + std::to_string(i));
        ch = arch.stage_channels[i];
      }
      add(std::make_unique<GlobalAvgPool<S>>(), "pool");
      auto fc = std::make_unique<Dense<S>>(ch, arch.hidden_units);
      fc->init(rng);
      add(std::move(fc), "fc");
      add(std::make_unique<Relu<S>>(), "fc_relu");
      auto head = std::make_unique<Dense<S>>(arch.hidden_units, arch.outputs);
      head->init(rng, 0.5);
      add(std::move(head), "head");
    }
    add(std::make_unique<TanhLayer<S>>(), "tanh");
  }

  Network(const Network& o) : arch_(o.arch_), names_(o.names_) {
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& o) {
    if (this != &o) {
      Network tmp(o);
      std::swap(arch_, tmp.arch_);
      std::swap(names_, tmp.names_);
      std::swap(layers_, tmp.layers_);
    }
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const Architecture& architecture() const { return arch_; }

  Tensor<S> forward(const Tensor<S>& x) {
    if (x.c != arch_.input_channels || x.h != arch_.input_size || x.w != arch_.input_size)
      fail(ErrorCode::model, "input shape " + std::to_string(x.c) + "x" + std::to_string(x.h) + "x" +
                                 std::to_string(x.w) + " does not match the network (" +
                                 std::to_string(arch_.input_channels) + "x" + std::to_string(arch_.input_size) +
                                 "x" + std::to_string(arch_.input_size) + ")",
           "input");
    Tensor<S> a = x;
    for (auto& l : layers_) a = l->forward(a);
    return a;
  }

  Tensor<S> backward(const Tensor<S>& grad_out) {
    Tensor<S> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<ParamRef<S>> parameters() {
    std::vector<ParamRef<S>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->collect(out, names_[i]);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) n += p.value->size();
    return n;
  }

  void zero_grad() {
    for (auto& p : parameters()) std::fill(p.grad->begin(), p.grad->end(), S(0));
  }

  /// All parameter values, concatenated in parameters() order.
  std::vector<double> flat_values() {
    std::vector<double> out;
    for (auto& p : parameters()) out.insert(out.end(), p.value->begin(), p.value->end());
    return out;
  }

  void set_flat_values(const std::vector<double>& flat) {
    std::size_t k = 0;
    for (auto& p : parameters()) {
      require(k + p.value->size() <= flat.size(), ErrorCode::model, "weight vector too short", "weights");
      for (auto& v : *p.value) v = S(flat[k++]);
    }
    require(k == flat.size(), ErrorCode::model, "weight vector too long", "weights");
  }

  bool all_finite() {
    for (auto& p : parameters())
      for (auto v : *p.value)
        if (!std::isfinite(double(v))) return false;
    return true;
  }

 private:
  void add(std::unique_ptr<Layer<S>> l, std::string name) {
    layers_.push_back(std::move(l));
    names_.push_back(std::move(name));
  }

  Architecture arch_;
  std::vector<std::unique_ptr<Layer<S>>> layers_;
  std::vector<std::string> names_;
};

/// Same weights, different scalar type.
template <typename To, typename From>
Network<To> convert_network(Network<From>& src) {
  Network<To> out(src.architecture(), 0);
  out.set_flat_values(src.flat_values());
  return out;
}

}  // namespace vacuform::nn
