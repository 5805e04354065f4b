#include <gtest/gtest.h>

#include <random>

#include "vacuform/config_file.hpp"
#include "vacuform/params.hpp"
#include "vacuform/rng.hpp"

using namespace vacuform;

namespace {

void expect_params(const ProcessParams& p, double a, double b, double c, double tol = 0.0) {
  EXPECT_NEAR(p.heat_power, a, tol);
  EXPECT_NEAR(p.heat_time, b, tol);
  EXPECT_NEAR(p.vacuum_time, c, tol);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no vacuform::Error thrown";
  return ErrorCode::io;
}

}  // namespace

TEST(Normalize, TableMinimaMapToZero) {
  const auto n = normalize_params({40, 10, 3}, table1_bounds());
  EXPECT_EQ(n[0], 0.0);
  EXPECT_EQ(n[1], 0.0);
  EXPECT_EQ(n[2], 0.0);
}

TEST(Normalize, TableMaximaMapToOne) {
  const auto n = normalize_params({100, 120, 7}, table1_bounds());
  EXPECT_EQ(n[0], 1.0);
  EXPECT_EQ(n[1], 1.0);
  EXPECT_EQ(n[2], 1.0);
}

TEST(Normalize, MidpointsMapToHalf) {
  const auto n = normalize_params({70, 65, 5}, table1_bounds());
  EXPECT_DOUBLE_EQ(n[0], 0.5);
  EXPECT_DOUBLE_EQ(n[1], 0.5);
  EXPECT_DOUBLE_EQ(n[2], 0.5);
}

TEST(Normalize, OutOfBoundsIsValidationError) {
  EXPECT_EQ(code_of([] { normalize_params({110, 50, 5}, table1_bounds()); }), ErrorCode::validation);
  EXPECT_EQ(code_of([] { normalize_params({50, 5, 5}, table1_bounds()); }), ErrorCode::validation);
}

TEST(Denormalize, CornersInvert) {
  expect_params(denormalize_params(NormalizedParams{{0, 0, 0}}, table1_bounds()), 40, 10, 3);
  expect_params(denormalize_params(NormalizedParams{{1, 1, 1}}, table1_bounds()), 100, 120, 7);
}

TEST(Denormalize, ComponentOutsideUnitIsValidationError) {
  EXPECT_EQ(code_of([] { denormalize_params(NormalizedParams{{1.2, 0, 0}}, table1_bounds()); }),
            ErrorCode::validation);
}

TEST(Normalize, RandomRoundTripWithin1e9) {
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto b = table1_bounds();
  for (int i = 0; i < 100; ++i) {
    const ProcessParams p{b[0].min + u(gen) * b[0].span(), b[1].min + u(gen) * b[1].span(),
                          b[2].min + u(gen) * b[2].span()};
    const auto back = denormalize_params(normalize_params(p, b), b);
    expect_params(back, p.heat_power, p.heat_time, p.vacuum_time, 1e-9);
  }
}

TEST(Bounds, MinMustBeBelowMax) {
  ParamBounds b = table1_bounds();
  b[1] = Range{5, 5};
  EXPECT_THROW(b.validate(), Error);
}

TEST(ApplyAdjustment, ZeroDeltaIsIdentity) {
  const ProcessParams p{63.4, 41.2, 4.5};  // deliberately off the machine grid
  EXPECT_EQ(apply_adjustment(p, AdjustmentVector{}, table1_bounds()), p);
}

TEST(ApplyAdjustment, MinCornerPlusOnesReachesMaxCorner) {
  expect_params(apply_adjustment({40, 10, 3}, AdjustmentVector{{1, 1, 1}}, table1_bounds()), 100, 120, 7);
}

TEST(ApplyAdjustment, ClampsAtUpperBound) {
  const auto r = apply_adjustment_detailed({100, 120, 7}, AdjustmentVector{{0.3, 0.01, 1.0}}, table1_bounds());
  expect_params(r.params, 100, 120, 7);
  EXPECT_TRUE(r.clamped);
}

TEST(ApplyAdjustment, SnapsToMachineResolution) {
  // +0.1 of the heat-time span is 11 s exactly; +0.013 of power span is 0.78 %.
  const auto p = apply_adjustment({50, 20, 5}, AdjustmentVector{{0.013, 0.1, -0.2}}, table1_bounds());
  expect_params(p, 51, 31, 4);
  EXPECT_TRUE(on_machine_grid(p));
}

TEST(ApplyAdjustment, DeltaOutsideUnitIsValidationError) {
  EXPECT_EQ(code_of([] { apply_adjustment({50, 20, 5}, AdjustmentVector{{1.5, 0, 0}}, table1_bounds()); }),
            ErrorCode::validation);
  EXPECT_EQ(code_of([] { apply_adjustment({50, 20, 5}, AdjustmentVector{{0, -1.01, 0}}, table1_bounds()); }),
            ErrorCode::validation);
}

TEST(ApplyAdjustment, PhysicalDeltaScalesBySpan) {
  const auto d = physical_delta(AdjustmentVector{{0.5, -0.1, 0.25}}, table1_bounds());
  EXPECT_DOUBLE_EQ(d[0], 30.0);
  EXPECT_DOUBLE_EQ(d[1], -11.0);
  EXPECT_DOUBLE_EQ(d[2], 1.0);
}

TEST(Grid, Table1CrossProductHas234Points) {
  const auto g = table1_grid();
  EXPECT_EQ(g.size(), 6u * 13u * 3u);
  for (const auto& p : g) EXPECT_TRUE(table1_bounds().contains(p));
}

TEST(Rng, DerivedSeedsAreDeterministicAndDistinct) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  Rng a(9), b(9);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformStaysInRange) {
  Rng r(5);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(7), 7u);
  }
}

TEST(ConfigFile, ReadsSectionsAndNestedSections) {
  const auto c = ConfigFile::parse_string(
      "[train]\nbatch_size = 16\nuse = yes\n[train.lr_schedule]\ntype = step\n");
  EXPECT_EQ(c.get("train", "batch_size", 0), 16);
  EXPECT_TRUE(c.get("train", "use", false));
  EXPECT_EQ(c.get<std::string>("train.lr_schedule", "type", ""), "step");
  EXPECT_EQ(c.get("train", "missing", 7), 7);
}

TEST(ConfigFile, BadValueNamesTheField) {
  const auto c = ConfigFile::parse_string("[train]\nbatch_size = many\n");
  try {
    (void)c.get("train", "batch_size", 0);
    FAIL() << "expected a configuration error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::configuration);
    EXPECT_EQ(e.field(), "train.batch_size");
  }
}

TEST(ConfigFile, SetOverridesLoadedValue) {
  auto c = ConfigFile::parse_string("[data]\nseed = 1\n");
  c.set("data", "seed", "9");
  c.set("fresh.section", "k", "v");
  EXPECT_EQ(c.get("data", "seed", 0), 9);
  EXPECT_EQ(c.get<std::string>("fresh.section", "k", ""), "v");
}
