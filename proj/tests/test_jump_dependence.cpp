#include "plantopt/jump_dependence.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

namespace plantopt {
namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

JumpSpec ig_jump(double lambda, double mean, double shape) { return {lambda, InverseGaussian{mean, shape}}; }

// Plain-power evaluation, fine away from overflow.
double clayton_direct(double th, double a, double b, double x, double y) {
  return std::pow((a * std::pow(y, -b) + 1.0) * std::pow(x, -th) + std::pow(y, -th), -1.0 / th);
}

TEST(CopulaValue, ClosedForms) {
  EXPECT_NEAR(copula_value(SkewedClayton{1.0, 0.0, 1.0}, 1.0, 1.0), 0.5, 1e-15);
  EXPECT_NEAR(copula_value(SkewedClayton{1.0, 1.0, 1.0}, 1.0, 1.0), 1.0 / 3.0, 1e-15);
}

TEST(CopulaValue, MatchesDirectPowers) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(0.01, 3.0);
  for (int k = 0; k < 500; ++k) {
    const double th = U(rng), a = U(rng), b = std::min(th + 1.0, U(rng)), x = U(rng), y = U(rng);
    EXPECT_NEAR(copula_value(SkewedClayton{th, a, b}, x, y), clayton_direct(th, a, b, x, y),
                1e-12 * clayton_direct(th, a, b, x, y));
  }
}

TEST(CopulaValue, LimitsAndVariants) {
  const CopulaSpec sc = SkewedClayton{2.0, 0.5, 1.5};
  EXPECT_EQ(copula_value(sc, 0.0, 3.0), 0.0);
  EXPECT_EQ(copula_value(sc, 3.0, 0.0), 0.0);
  EXPECT_EQ(copula_value(sc, 0.7, inf), 0.7);
  EXPECT_EQ(copula_value(sc, inf, 0.2), 0.2);
  EXPECT_EQ(copula_value(Independence{}, 0.3, 0.4), 0.0);
  EXPECT_EQ(copula_value(Independence{}, 0.3, inf), 0.3);
  EXPECT_EQ(copula_value(Comonotone{}, 0.3, 0.4), 0.3);
  EXPECT_THROW(copula_value(sc, -1.0, 1.0), DomainError);
}

TEST(CopulaValue, NoOverflowForSteepTails) {
  const CopulaSpec sc = SkewedClayton{5.0, 0.5, 1.0};
  const double v = copula_value(sc, 1e-80, 1e-90);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 0.0);
  EXPECT_LE(v, 1e-90);
}

TEST(CopulaValue, MarginRecovery) {
  for (const SkewedClayton& p : {SkewedClayton{1.0, 0.5, 1.0}, SkewedClayton{3.0, 2.0, 0.5}, SkewedClayton{0.4, 0.0, 1.4}}) {
    for (double x : {1e-4, 0.1, 0.4, 7.0}) {
      double prev = 0.0;
      for (double Y = 1e-3; Y < 1e30; Y *= 3.0) {
        const double v = copula_value(p, x, Y);
        EXPECT_GE(v, prev);
        prev = v;
        if (p.alpha * std::pow(Y, -p.beta) < 1e-8 && std::pow(Y / x, -p.theta) < 1e-8) {
          EXPECT_LE(std::abs(v - x), 1e-6 * x);
        }
      }
    }
  }
}

TEST(CopulaValue, TwoIncreasingOnRandomRectangles) {
  std::mt19937_64 rng(3);
  const double lam = 0.4;
  std::uniform_real_distribution<double> U(1e-9, 10.0 * lam);
  for (const SkewedClayton& p : {SkewedClayton{1.0, 0.5, 1.0}, SkewedClayton{2.5, 3.0, 3.5}, SkewedClayton{0.3, 0.0, 0.2}}) {
    double worst = 0.0;
    for (int k = 0; k < 10000; ++k) {
      double x1 = U(rng), x2 = U(rng), y1 = U(rng), y2 = U(rng);
      if (x1 > x2) std::swap(x1, x2);
      if (y1 > y2) std::swap(y1, y2);
      const double m = copula_value(p, x2, y2) - copula_value(p, x1, y2) - copula_value(p, x2, y1) + copula_value(p, x1, y1);
      worst = std::min(worst, m);
    }
    EXPECT_GE(worst, -1e-12);
  }
}

TEST(JointTail, AtOriginIsCopulaOfIntensities) {
  const auto je = ig_jump(0.1, 0.6, 0.56), jg = ig_jump(0.4, 0.54, 0.32);
  const CopulaSpec c = SkewedClayton{1.0, 0.5, 1.0};
  EXPECT_EQ(joint_tail(c, je, jg, 0.0, 0.0), copula_value(c, 0.1, 0.4));
  EXPECT_EQ(joint_tail(Independence{}, je, jg, 0.5, 0.5), 0.0);
}

TEST(JointTail, BaseMarginalsAtUnitJump) {
  const auto je = ig_jump(0.1, 0.6, 0.56), jg = ig_jump(0.4, 0.54, 0.32);
  // marginal tails from the IG closed form, composed by plain powers
  auto ig_sf = [](double mu, double lam, double x) {
    const double r = std::sqrt(lam / x);
    const double a = r * (x / mu - 1.0), b = r * (x / mu + 1.0);
    return 1.0 - (0.5 * std::erfc(-a / std::sqrt(2.0)) + std::exp(2.0 * lam / mu) * 0.5 * std::erfc(b / std::sqrt(2.0)));
  };
  const double u1 = 0.1 * ig_sf(0.6, 0.56, 1.0), u2 = 0.4 * ig_sf(0.54, 0.32, 1.0);
  EXPECT_NEAR(joint_tail(SkewedClayton{1.0, 0.5, 1.0}, je, jg, 1.0, 1.0), clayton_direct(1.0, 0.5, 1.0, u1, u2), 1e-13);
}

TEST(JointTail, NonincreasingInEachArgument) {
  const auto je = ig_jump(0.1, 0.6, 0.56), jg = ig_jump(0.4, 0.54, 0.32);
  const CopulaSpec c = SkewedClayton{1.0, 0.5, 1.0};
  for (double a = 0.0; a < 10.0; a += 0.25)
    for (double b = 0.0; b < 10.0; b += 0.25) {
      const double v = joint_tail(c, je, jg, a, b);
      EXPECT_LE(joint_tail(c, je, jg, a + 0.1, b), v);
      EXPECT_LE(joint_tail(c, je, jg, a, b + 0.1), v);
    }
}

TEST(JointTail, SymmetricWhenUnskewed) {
  const auto j = ig_jump(0.3, 0.5, 0.4);
  const CopulaSpec c = SkewedClayton{1.7, 0.0, 1.0};
  for (double a : {0.0, 0.3, 1.1, 4.0})
    for (double b : {0.0, 0.2, 2.5}) EXPECT_NEAR(joint_tail(c, j, j, a, b), joint_tail(c, j, j, b, a), 1e-15);
}

TEST(JointCellMasses, IndependenceHasNoMass) {
  const auto m = joint_cell_masses(Independence{}, ig_jump(0.1, 0.6, 0.56), ig_jump(0.4, 0.54, 0.32), 0.5, 0.5, 20, 20);
  for (int k = 0; k < m.rows; ++k)
    for (int l = 0; l < m.cols; ++l) EXPECT_EQ(m(k, l), 0.0);
}

TEST(JointCellMasses, ComonotoneIdenticalMarginalsSitOnDiagonal) {
  const auto j = ig_jump(0.3, 0.6, 0.56);
  const auto m = joint_cell_masses(Comonotone{}, j, j, 0.25, 0.25, 30, 30);
  const auto nu = marginal_cell_masses(j, 0.25, 30);
  for (int k = 0; k <= 30; ++k)
    for (int l = 0; l <= 30; ++l) {
      if (k == l) EXPECT_NEAR(m(k, l), nu[k], 1e-15);
      else EXPECT_NEAR(m(k, l), 0.0, 1e-16);
    }
}

TEST(JointCellMasses, TotalBoundedByCommonIntensity) {
  const auto je = ig_jump(0.1, 0.6, 0.56), jg = ig_jump(0.4, 0.54, 0.32);
  for (const SkewedClayton& p : {SkewedClayton{1.0, 0.5, 1.0}, SkewedClayton{4.0, 0.1, 2.0}, SkewedClayton{0.5, 2.0, 1.0}}) {
    const auto m = joint_cell_masses(p, je, jg, 0.2, 0.2, 60, 60);
    for (double v : m.data) EXPECT_GE(v, -1e-15);
    EXPECT_LE(m.sum(), 0.1 + 1e-12);
    // the sum telescopes to the common mass of [0, (K+1/2)dz)^2
    const double tail = copula_value(p, 0.1, 0.4) - joint_tail(p, je, jg, 60.5 * 0.2, 0.0) -
                        joint_tail(p, je, jg, 0.0, 60.5 * 0.2) + joint_tail(p, je, jg, 60.5 * 0.2, 60.5 * 0.2);
    EXPECT_NEAR(m.sum(), tail, 1e-12);
  }
}

TEST(CrossWeights, TrapezoidWeightsOfAConstantTail) {
  // Comonotone copula of two point masses beyond the window: U = min(1, 1) = 1
  // on [0, K dz]^2, so the weights integrate 1 to the window area.
  const JumpSpec j{1.0, PointMass{100.0}};
  const auto W = cross_weight_table(Comonotone{}, j, j, 0.5, 0.25, 8, 12);
  EXPECT_NEAR(W.sum(), 4.0 * 3.0, 1e-12);
  EXPECT_NEAR(W(0, 0), 0.25 * 0.125, 1e-15);
  EXPECT_NEAR(W(3, 0), 0.5 * 0.125, 1e-15);
  EXPECT_NEAR(W(3, 5), 0.125, 1e-15);
}

TEST(CopulaSpecValidation, ParameterConstraints) {
  EXPECT_THROW(validate(CopulaSpec{SkewedClayton{0.0, 0.5, 1.0}}), SpecError);
  EXPECT_THROW(validate(CopulaSpec{SkewedClayton{1.0, -0.5, 1.0}}), SpecError);
  EXPECT_THROW(validate(CopulaSpec{SkewedClayton{1.0, 0.5, 2.5}}), SpecError);
  EXPECT_NO_THROW(validate(CopulaSpec{SkewedClayton{1.0, 0.0, 2.0}}));
}

}  // namespace
}  // namespace plantopt
