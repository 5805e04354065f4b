#include <gtest/gtest.h>

#include "vacuform/nn/adam.hpp"
#include "vacuform/regressor/gradient_check.hpp"

using namespace vacuform;

namespace {

template <typename S>
nn::Tensor<S> random_input(int size, std::uint64_t seed, double sd = 1.0) {
  nn::Tensor<S> x(3, size, size);
  Rng r(seed);
  for (auto& v : x.data) v = S(r.normal() * sd);
  return x;
}

}  // namespace

TEST(GradCheck, TinyResidualNetworkBelow1e4) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    nn::Network<double> net(tiny_architecture(), seed);
    ASSERT_LT(net.parameter_count(), 10000u);
    const auto r = gradient_check(net, random_input<double>(8, seed + 10), Vec3{0.3, -0.2, 0.1});
    EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter << "[" << r.worst_index << "]";
    EXPECT_EQ(r.checked, net.parameter_count());
  }
}

TEST(GradCheck, LinearHeadBelow1e6) {
  nn::Network<double> net(linear_architecture(), 5);
  const auto r = gradient_check(net, random_input<double>(4, 6), Vec3{0.5, 0.0, -0.5});
  EXPECT_LT(r.max_relative_error, 1e-6) << r.worst_parameter;
}

TEST(GradCheck, ZeroInputOnLinearHead) {
  // A ReLU net at x = 0 sits on every kink; the linear head has no kinks, so
  // weight gradients are exactly zero and only the bias carries signal.
  nn::Network<double> net(linear_architecture(), 4);
  const auto r = gradient_check(net, nn::Tensor<double>(3, 4, 4), Vec3{0.2, 0.2, 0.2});
  EXPECT_LT(r.max_relative_error, 1e-6) << r.worst_parameter;
}

TEST(Network, OutputHasThreeBoundedValues) {
  nn::Network<float> net(nn::Architecture{}, 1);
  const auto y = net.forward(random_input<float>(64, 1));
  EXPECT_EQ(y.size(), 3u);
}

TEST(Network, TanhHeadKeepsOutputsInUnitRange) {
  nn::Network<float> net(linear_architecture(8), 2);
  for (std::uint64_t s = 0; s < 1000; ++s) {
    // Large inputs push the pre-activation far into saturation.
    const auto y = net.forward(random_input<float>(8, s, 50.0));
    for (float v : y.data) {
      ASSERT_GE(v, -1.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Network, SeedDeterminesWeights) {
  nn::Network<float> a(tiny_architecture(), 9), b(tiny_architecture(), 9), c(tiny_architecture(), 10);
  EXPECT_EQ(a.flat_values(), b.flat_values());
  EXPECT_NE(a.flat_values(), c.flat_values());
  const auto x = random_input<float>(8, 3);
  EXPECT_EQ(a.forward(x).data, b.forward(x).data);
}

TEST(Network, CopyIsIndependent) {
  nn::Network<float> a(tiny_architecture(), 9);
  nn::Network<float> b = a;
  auto flat = b.flat_values();
  flat[0] += 1.0;
  b.set_flat_values(flat);
  EXPECT_NE(a.flat_values()[0], b.flat_values()[0]);
}

TEST(Network, WrongInputShapeIsModelError) {
  nn::Network<float> net(tiny_architecture(), 1);
  try {
    net.forward(random_input<float>(16, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::model);
  }
}

TEST(Network, BadArchitectureIsRejected) {
  auto a = tiny_architecture();
  a.outputs = 4;
  EXPECT_THROW(nn::Network<float>(a, 1), Error);
  a = tiny_architecture();
  a.kind = "transformer";
  EXPECT_THROW(nn::Network<float>(a, 1), Error);
}

TEST(Network, ArchitectureJsonRoundTrip) {
  const auto a = tiny_architecture(12);
  EXPECT_EQ(nn::Architecture::from_json(a.to_json()), a);
}

TEST(Network, FloatAndDoubleAgree) {
  nn::Network<float> f(tiny_architecture(), 3);
  auto d = nn::convert_network<double>(f);
  const auto xf = random_input<float>(8, 4);
  nn::Tensor<double> xd(3, 8, 8);
  for (std::size_t i = 0; i < xf.size(); ++i) xd.data[i] = xf.data[i];
  const auto yf = f.forward(xf);
  const auto yd = d.forward(xd);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(yf.data[k], yd.data[k], 1e-5);
}

TEST(Adam, FirstStepMovesBySignedLearningRate) {
  // On step 1 the bias-corrected update is g/(|g|+eps), i.e. sign(g) for |g| >> eps.
  nn::Network<double> net(linear_architecture(2), 1);
  const auto before = net.flat_values();
  for (auto& p : net.parameters())
    for (std::size_t i = 0; i < p.grad->size(); ++i) (*p.grad)[i] = (i % 2 ? -0.5 : 2.0);
  nn::Adam<double> opt(net, {0.01, 0.9, 0.999, 1e-8, 0.0});
  opt.step(net);
  const auto after = net.flat_values();
  std::size_t k = 0;
  for (auto& p : net.parameters())
    for (std::size_t i = 0; i < p.value->size(); ++i, ++k)
      EXPECT_NEAR(after[k] - before[k], i % 2 ? 0.01 : -0.01, 1e-9);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, DecoupledDecayShrinksWeightsOnly) {
  nn::Network<double> net(linear_architecture(2), 1);
  auto params = net.parameters();
  // Give the bias a non-zero value so a decay on it would be visible.
  (*params[1].value)[0] = 1.0;
  const auto w0 = (*params[0].value)[0];
  net.zero_grad();
  nn::Adam<double> opt(net, {0.1, 0.9, 0.999, 1e-8, 0.5});
  opt.step(net);
  params = net.parameters();
  EXPECT_NEAR((*params[0].value)[0], w0 * (1.0 - 0.1 * 0.5), 1e-12);
  EXPECT_EQ((*params[1].value)[0], 1.0);
}

TEST(Adam, LearningRateCanBeChanged) {
  nn::Network<double> net(linear_architecture(2), 1);
  nn::Adam<double> opt(net, {});
  opt.set_learning_rate(0.25);
  EXPECT_EQ(opt.learning_rate(), 0.25);
}
