#include "plantopt/plant_physics.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace plantopt {
namespace {

const PlantSpec plant{};

// Ramp bounds written out in the constants of the reference plant.
double cmin_ref(double L) { return std::max(0.0, 4200.0 - 100.0 * std::sqrt((800.0 - L) / 0.3571)); }
double cmax_ref(double L) {
  return 500.0 - L >= 0.0 ? std::min(3017.0, 4200.0 - 100.0 * std::sqrt((500.0 - L) / 0.3571)) : 3017.0;
}

TEST(Output, PiecewiseLinear) {
  EXPECT_EQ(output(plant, 200.0), 0.0);
  EXPECT_NEAR(output(plant, 300.0), 150.0, 1e-12);
  EXPECT_NEAR(output(plant, 600.0), 400.0, 1e-12);
  EXPECT_NEAR(output(plant, 360.0), 200.0, 1e-12);
  EXPECT_THROW(output(plant, 10.0), DomainError);
  EXPECT_THROW(output(plant, 601.0), DomainError);
}

TEST(Output, SingleJumpAtGenerationThreshold) {
  EXPECT_NEAR(output(plant, 300.0) - output(plant, std::nextafter(300.0, 0.0)), 150.0, 1e-12);
  for (double L = 300.0; L < 600.0; L += 0.5) EXPECT_NEAR(output(plant, L + 0.5) - output(plant, L), 5.0 / 12.0, 1e-12);
}

TEST(EquilibriumTemp, Parabola) {
  EXPECT_EQ(equilibrium_curve(plant, 4200.0), 650.0);
  EXPECT_NEAR(equilibrium_temp(plant, 0.0), 650.0 - 0.00003571 * 4200.0 * 4200.0, 1e-12);
  EXPECT_NEAR(equilibrium_temp(plant, 0.0), 20.08, 0.01);
  EXPECT_NEAR(equilibrium_temp(plant, 3017.0), 600.02, 0.01);
  EXPECT_LE(equilibrium_temp(plant, plant.c_abs_max), plant.L_max + 0.1);
  EXPECT_THROW(equilibrium_temp(plant, 3100.0), DomainError);
  for (double c = 0.0; c < 3017.0; c += 1.0) EXPECT_LT(equilibrium_temp(plant, c), equilibrium_temp(plant, c + 1.0));
}

TEST(ControlBounds, Examples) {
  EXPECT_EQ(control_bounds(plant, 20.0).first, 0.0);
  EXPECT_NEAR(control_bounds(plant, 600.0).first, 1833.4, 0.05);
  EXPECT_NEAR(control_bounds(plant, 20.0).second, 533.7, 0.05);
  EXPECT_EQ(control_bounds(plant, 500.0).second, 3017.0);
  EXPECT_EQ(control_bounds(plant, 550.0).second, 3017.0);
}

TEST(ControlBounds, MatchWrittenOutFormulas) {
  for (double L = 20.0; L <= 600.0; L += 1.0) {
    const auto [lo, hi] = control_bounds(plant, L);
    EXPECT_NEAR(lo, cmin_ref(L), 1e-9) << L;
    EXPECT_NEAR(hi, cmax_ref(L), 1e-9) << L;
    EXPECT_LE(lo, hi);
  }
}

TEST(TemperatureDrift, RampLimitsAreReached) {
  const auto b300 = control_bounds(plant, 300.0);
  EXPECT_NEAR(b300.second, 1833.4, 0.05);
  EXPECT_NEAR(temperature_drift(plant, 300.0, b300.second), 15.0, 1e-6);
  const auto b600 = control_bounds(plant, 600.0);
  EXPECT_NEAR(temperature_drift(plant, 600.0, b600.first), -15.0, 1e-6);
  const double c = 2500.0;
  EXPECT_NEAR(temperature_drift(plant, equilibrium_temp(plant, c), c), 0.0, 1e-12);
}

TEST(TemperatureDrift, RampFeasibilitySweep) {
  for (double L = plant.L_min; L <= plant.L_max; L += 1.0) {
    const auto [lo, hi] = control_bounds(plant, L);
    for (int m = 0; m < 64; ++m) {
      const double c = lo + (hi - lo) * m / 63.0;
      EXPECT_LE(std::abs(temperature_drift(plant, L, c)), 15.0 + 1e-6) << "L=" << L << " c=" << c;
    }
  }
}

TEST(BoilerStep, EulerWithClamp) {
  const double c = 2500.0;
  const double Leq = equilibrium_temp(plant, c);
  EXPECT_NEAR(boiler_step(plant, Leq, c, 1.0), Leq, 1e-12);
  EXPECT_NEAR(boiler_step(plant, 300.0, control_bounds(plant, 300.0).second, 1.0), 315.0, 1e-6);
  EXPECT_EQ(boiler_step(plant, 600.0, 3017.0, 100.0), 600.0);
  EXPECT_EQ(boiler_step(plant, 25.0, 0.0, 100.0), 20.0);
  for (double L = 20.0; L <= 600.0; L += 7.0) {
    const double n = boiler_step(plant, L, 0.0, 50.0);
    EXPECT_GE(n, plant.L_min);
    EXPECT_LE(n, plant.L_max);
  }
}

TEST(PlantSpecValidation, Invariants) {
  EXPECT_NO_THROW(validate(plant));
  PlantSpec p = plant;
  p.c_abs_max = 5000.0;
  EXPECT_THROW(validate(p), SpecError);
  p = plant;
  p.L_gen = 700.0;
  EXPECT_THROW(validate(p), SpecError);
  p = plant;
  p.b1 = 0.0;
  EXPECT_THROW(validate(p), SpecError);
}

}  // namespace
}  // namespace plantopt
