#include "plantopt/market_model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

namespace plantopt {
namespace {

constexpr double pi = std::numbers::pi;

Seasonality elec_season() { return {15.0, -15.4 * pi, 24.0, 27.0, TrigShape::Sine}; }
Seasonality gas_season() { return {0.6, -36.0 * pi * pi, 24.0, 2.7, TrigShape::Cosine}; }

JumpSpec ig_jump(double lambda, double mean, double shape) { return {lambda, InverseGaussian{mean, shape}}; }

// Composite Simpson integration of a density on [0, x] after the change of
// variables s = sqrt(y), which removes the steep start of the IG density.
template <class Pdf>
double integrate_density(Pdf pdf, double x, int n = 20000) {
  const double top = std::sqrt(x);
  const double h = top / n;
  double acc = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double s = k * h;
    const double f = s == 0.0 ? 0.0 : pdf(s * s) * 2.0 * s;
    acc += f * (k == 0 || k == n ? 1.0 : (k % 2 ? 4.0 : 2.0));
  }
  return acc * h / 3.0;
}

double ig_pdf(double mu, double lam, double y) {
  return std::sqrt(lam / (2.0 * pi * y * y * y)) * std::exp(-lam * (y - mu) * (y - mu) / (2.0 * mu * mu * y));
}

TEST(Seasonality, ElectricityZeroAndPeak) {
  EXPECT_NEAR(seasonality_value(elec_season(), 7.7), 27.0, 1e-12);
  EXPECT_NEAR(seasonality_value(elec_season(), 13.7), 42.0, 1e-12);
}

TEST(Seasonality, GasCosinePeak) {
  // cosine argument (2 pi t - 36 pi^2) / 24 vanishes at t = 18 pi
  EXPECT_NEAR(seasonality_value(gas_season(), 18.0 * pi), 3.3, 1e-12);
}

TEST(Seasonality, DerivativeAtExtremumAndZero) {
  EXPECT_NEAR(seasonality_derivative(elec_season(), 13.7), 0.0, 1e-12);
  EXPECT_NEAR(seasonality_derivative(elec_season(), 7.7), 15.0 * 2.0 * pi / 24.0, 1e-12);
  const auto flat = Seasonality::constant(4.0);
  for (double t : {0.0, 3.3, 100.0}) EXPECT_EQ(seasonality_derivative(flat, t), 0.0);
}

TEST(Seasonality, DerivativeMatchesCentralDifferences) {
  const double h = 1e-5;
  for (const auto& f : {elec_season(), gas_season(), Seasonality{5.0, -15.4 * pi, 24.0, 10.0, TrigShape::Sine}}) {
    for (double t = 0.13; t < 200.0; t += 3.71) {
      const double fd = (seasonality_value(f, t + h) - seasonality_value(f, t - h)) / (2.0 * h);
      const double d = seasonality_derivative(f, t);
      EXPECT_LE(std::abs(fd - d), 1e-6 * std::max(1.0, std::abs(d))) << "t=" << t;
    }
  }
}

TEST(Seasonality, RejectsNonPositivePeriod) {
  Seasonality f = elec_season();
  f.period = 0.0;
  EXPECT_THROW(validate(f), SpecError);
}

TEST(JumpCdf, InverseGaussianClosedFormAtOne) {
  const auto j = ig_jump(1.0, 1.0, 1.0);
  const double expected = 0.5 + std::exp(2.0) * 0.5 * std::erfc(2.0 / std::sqrt(2.0));
  EXPECT_NEAR(jump_cdf(j, 1.0), expected, 1e-14);
  EXPECT_NEAR(jump_cdf(j, 1.0), 0.6681, 5e-5);
}

TEST(JumpCdf, InverseGaussianMatchesDensityQuadrature) {
  for (auto [mu, lam] : {std::pair{0.60, 0.56}, {0.54, 0.32}, {0.30, 0.46}, {0.42, 0.28}}) {
    const auto j = ig_jump(0.1, mu, lam);
    for (double x : {0.05, 0.3, 1.0, 2.5, 6.0}) {
      const double q = integrate_density([&](double y) { return ig_pdf(mu, lam, y); }, x);
      EXPECT_NEAR(jump_cdf(j, x), q, 1e-8) << "mu=" << mu << " x=" << x;
    }
  }
}

TEST(JumpCdf, TruncatedNormalMatchesDensityQuadrature) {
  const JumpSpec j{0.1, TruncatedNormal{1.0, 2.0}};
  const double mass = 0.5 * std::erfc(-0.5 / std::sqrt(2.0));
  for (double x : {0.5, 1.0, 3.0, 7.0}) {
    const double q = integrate_density(
        [](double y) { return std::exp(-0.5 * (y - 1.0) * (y - 1.0) / 4.0) / (2.0 * std::sqrt(2.0 * pi)); }, x);
    EXPECT_NEAR(jump_cdf(j, x), q / mass, 1e-9);
  }
}

TEST(JumpCdf, LimitsAndDomain) {
  const std::vector<JumpSpec> specs{ig_jump(0.1, 0.6, 0.56), {0.1, TruncatedNormal{700.0, 100.0}}, {1.0, PointMass{3.0}}};
  for (const auto& j : specs) {
    EXPECT_EQ(jump_cdf(j, 0.0), 0.0);
    EXPECT_NEAR(jump_cdf(j, 1e4), 1.0, 1e-9);
    EXPECT_THROW(jump_cdf(j, -1.0), DomainError);
    double prev = 0.0;
    for (double x = 0.0; x < 2000.0; x += 0.37) {
      const double d = jump_cdf(j, x);
      EXPECT_GE(d, prev);
      prev = d;
    }
  }
}

TEST(TailIntegral, Examples) {
  EXPECT_EQ(tail_integral(ig_jump(0.1, 0.6, 0.56), 0.0), 0.1);
  EXPECT_EQ(tail_integral(ig_jump(0.0, 0.6, 0.56), 2.0), 0.0);
  const auto j = ig_jump(0.4, 0.54, 0.32);
  const double median = numerics::bisect([&](double x) { return jump_cdf(j, x); }, 0.5, 0.0, 50.0);
  EXPECT_NEAR(tail_integral(j, median), 0.2, 1e-12);
}

TEST(TailIntegral, NonincreasingAndContinuous) {
  const auto j = ig_jump(0.4, 0.54, 0.32);
  double prev = tail_integral(j, 0.0);
  for (double x = 1e-3; x < 40.0; x += 1e-3) {
    const double u = tail_integral(j, x);
    EXPECT_LE(u, prev);
    EXPECT_LT(prev - u, 0.01);
    prev = u;
  }
}

TEST(JumpMean, MatchesIntegratedSurvival) {
  for (const JumpSpec& j : {ig_jump(1.0, 0.6, 0.56), JumpSpec{1.0, TruncatedNormal{1.0, 2.0}}}) {
    double acc = 0.0;
    const double h = 1e-3;
    for (double x = 0.5 * h; x < 200.0; x += h) acc += jump_survival(j, x) * h;
    EXPECT_NEAR(jump_mean(j), acc, 1e-5);
  }
}

TEST(CellMasses, ZeroIntensity) {
  for (double m : marginal_cell_masses(ig_jump(0.0, 0.6, 0.56), 0.5, 10)) EXPECT_EQ(m, 0.0);
}

TEST(CellMasses, PointMassLandsInItsCell) {
  const double dz = 0.25;
  const auto nu = marginal_cell_masses({1.0, PointMass{3.0 * dz}}, dz, 8);
  for (int k = 0; k <= 8; ++k) EXPECT_EQ(nu[k], k == 3 ? 1.0 : 0.0) << k;
}

TEST(CellMasses, SumsToIntensityMinusTruncatedTail) {
  const auto j = ig_jump(0.1, 0.60, 0.56);
  const auto nu = marginal_cell_masses(j, 0.5, 40);
  double s = 0.0;
  for (double m : nu) {
    EXPECT_GE(m, 0.0);
    s += m;
  }
  EXPECT_NEAR(s, 0.1, 1e-4);
  EXPECT_NEAR(s, 0.1 - tail_integral(j, 40.5 * 0.5), 1e-10);
}

TEST(CellMasses, RandomSpecsSumRule) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(0.1, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto j = ig_jump(U(rng), U(rng), U(rng));
    const double dz = 0.05 * U(rng);
    const int K = 20 + trial;
    const auto nu = marginal_cell_masses(j, dz, K);
    double s = 0.0;
    for (double m : nu) s += m;
    EXPECT_NEAR(s, j.intensity - tail_integral(j, (K + 0.5) * dz), 1e-10);
  }
}

TEST(TruncationBound, TailBelowTolerance) {
  const auto j = ig_jump(0.1, 0.60, 0.56);
  const double B = truncation_bound(j);
  EXPECT_LE(tail_integral(j, B), 1e-6 * 0.1 * (1.0 + 1e-9));
  EXPECT_GT(tail_integral(j, 0.99 * B), 1e-6 * 0.1);
  EXPECT_EQ(truncation_bound({0.1, TruncatedNormal{700.0, 100.0}}), 1300.0);
}

TEST(InverseTail, RoundTrip) {
  const auto j = ig_jump(0.4, 0.54, 0.32);
  for (double u : {0.39, 0.2, 0.01, 1e-5}) EXPECT_NEAR(tail_integral(j, inverse_tail(j, u)), u, 1e-12 * 0.4);
}

RegimeParams base_regime() {
  RegimeParams p;
  p.alpha_e = 0.1;
  p.alpha_g = 0.23;
  p.sigma_e = 0.11;
  p.sigma_g = 0.09;
  p.rho = 0.15;
  p.jump_e = ig_jump(0.1, 0.60, 0.56);
  p.jump_g = ig_jump(0.4, 0.54, 0.32);
  p.seasonality_e = elec_season();
  p.seasonality_g = gas_season();
  return p;
}

TEST(EffectiveDrift, FlatModelHasNoDrift) {
  RegimeParams p;
  p.seasonality_e = Seasonality::constant(30.0);
  for (auto conv : {DriftConvention::Literal, DriftConvention::Compensated})
    EXPECT_EQ(effective_drift(p, 30.0, 5.0, Commodity::Electricity, conv), 0.0);
}

TEST(EffectiveDrift, LiteralAtSeasonalLevel) {
  const auto p = base_regime();
  for (double t : {0.0, 7.0, 55.5}) {
    const double S = seasonality_value(p.seasonality_g, t);
    EXPECT_NEAR(effective_drift(p, S, t, Commodity::Gas, DriftConvention::Literal),
                seasonality_derivative(p.seasonality_g, t) - 0.4, 1e-12);
  }
}

TEST(EffectiveDrift, ConventionsDifferByJumpMeanIntensity) {
  const auto p = base_regime();
  for (double S : {0.0, 12.0, 150.0})
    for (double t : {0.0, 3.0, 150.0}) {
      const double d = effective_drift(p, S, t, Commodity::Electricity, DriftConvention::Compensated) -
                       effective_drift(p, S, t, Commodity::Electricity, DriftConvention::Literal);
      EXPECT_NEAR(d, 0.1 * 0.60, 1e-12);
    }
}

TEST(Validation, RejectsBadRegimesAndModels) {
  auto p = base_regime();
  p.rho = 1.5;
  EXPECT_THROW(validate(p), SpecError);
  p = base_regime();
  p.sigma_e = -1.0;
  EXPECT_THROW(validate(p), SpecError);
  p = base_regime();
  p.jump_e.size = InverseGaussian{0.0, 1.0};
  EXPECT_THROW(validate(p), SpecError);

  ModelSpec m{{base_regime()}, 0.05, 200.0};
  EXPECT_NO_THROW(validate(m));
  m.regimes.assign(3, base_regime());
  EXPECT_THROW(validate(m), SpecError);
  m.regimes.assign(1, base_regime());
  m.horizon = 0.0;
  EXPECT_THROW(validate(m), SpecError);
}

}  // namespace
}  // namespace plantopt
