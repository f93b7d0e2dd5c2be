#pragma once

// Levy-copula dependence between electricity and gas spikes. The joint tail
// integral is F(U_e(z_e), U_g(z_g)) for a positive Levy copula F.

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>
#include <variant>
#include <vector>

#include "plantopt/errors.hpp"
#include "plantopt/market_model.hpp"
#include "plantopt/numerics.hpp"

namespace plantopt {

/// F(x,y) = ((alpha y^-beta + 1) x^-theta + y^-theta)^(-1/theta).
/// alpha = 0 is the symmetric Clayton Levy copula.
struct SkewedClayton {
  double theta = 1.0;
  double alpha = 0.5;
  double beta = 1.0;
  bool operator==(const SkewedClayton&) const = default;
};

/// No common jumps.
struct Independence {
  bool operator==(const Independence&) const = default;
};

/// Complete positive dependence, F(x,y) = min(x,y).
struct Comonotone {
  bool operator==(const Comonotone&) const = default;
};

using CopulaSpec = std::variant<SkewedClayton, Independence, Comonotone>;

inline void validate(const CopulaSpec& c) {
  if (const auto* sc = std::get_if<SkewedClayton>(&c)) {
    if (!(sc->theta > 0.0) || !std::isfinite(sc->theta)) throw SpecError("copula: theta must be > 0");
    if (!(sc->alpha >= 0.0) || !std::isfinite(sc->alpha)) throw SpecError("copula: alpha must be >= 0");
    if (!(sc->beta > 0.0) || !(sc->beta <= sc->theta + 1.0)) throw SpecError("copula: beta must satisfy 0 < beta <= theta + 1");
  }
}

namespace detail {

inline double skewed_clayton(const SkewedClayton& p, double x, double y) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (x == 0.0 || y == 0.0) return 0.0;
  if (x == inf && y == inf) return inf;
  if (x == inf) return y;
  if (y == inf) return x;
  // Everything in logs: x^-theta overflows long before F underflows.
  const double lx = std::log(x);
  const double ly = std::log(y);
  const double skew = p.alpha > 0.0 ? numerics::softplus(std::log(p.alpha) - p.beta * ly) : 0.0;
  const double log_sum = numerics::log_add(skew - p.theta * lx, -p.theta * ly);
  return std::exp(-log_sum / p.theta);
}

}  // namespace detail

/// Copula value for x, y in [0, inf]; infinities give the margins back.
inline double copula_value(const CopulaSpec& c, double x, double y) {
  if (!(x >= 0.0) || !(y >= 0.0)) throw DomainError("copula_value: arguments must be >= 0");
  constexpr double inf = std::numeric_limits<double>::infinity();
  return std::visit(
      [x, y](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, SkewedClayton>) {
          return detail::skewed_clayton(p, x, y);
        } else if constexpr (std::is_same_v<P, Comonotone>) {
          return std::min(x, y);
        } else {
          if (x == inf) return y;
          if (y == inf) return x;
          return 0.0;
        }
      },
      c);
}

/// Joint tail integral U(z_e, z_g): intensity of common jumps with both sizes
/// above the given levels.
inline double joint_tail(const CopulaSpec& c, const JumpSpec& je, const JumpSpec& jg, double ze, double zg) {
  return copula_value(c, tail_integral(je, ze), tail_integral(jg, zg));
}

/// Row-major (rows x cols) table of doubles.
struct Table2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Table2D() = default;
  Table2D(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  double sum() const {
    double s = 0.0;
    for (double v : data) s += v;
    return s;
  }
};

/// Common-jump mass of the cells [a_k, a_{k+1}) x [b_l, b_{l+1}),
/// a_k = max(0, (k - 1/2) dz_e), k = 0..K_e, and likewise for b_l.
inline Table2D joint_cell_masses(const CopulaSpec& c, const JumpSpec& je, const JumpSpec& jg, double dze, double dzg,
                                 int Ke, int Kg) {
  if (!(dze > 0.0) || !(dzg > 0.0) || Ke < 1 || Kg < 1)
    throw DomainError("joint_cell_masses: need positive steps and K >= 1");
  std::vector<double> ue(static_cast<std::size_t>(Ke) + 2), ug(static_cast<std::size_t>(Kg) + 2);
  for (int k = 0; k <= Ke + 1; ++k) ue[k] = tail_integral(je, std::max(0.0, (k - 0.5) * dze));
  for (int l = 0; l <= Kg + 1; ++l) ug[l] = tail_integral(jg, std::max(0.0, (l - 0.5) * dzg));

  Table2D joint(Ke + 2, Kg + 2);
  for (int k = 0; k <= Ke + 1; ++k)
    for (int l = 0; l <= Kg + 1; ++l) joint(k, l) = copula_value(c, ue[k], ug[l]);

  Table2D m(Ke + 1, Kg + 1);
  for (int k = 0; k <= Ke; ++k)
    for (int l = 0; l <= Kg; ++l)
      m(k, l) = joint(k, l) - joint(k + 1, l) - joint(k, l + 1) + joint(k + 1, l + 1);
  return m;
}

/// Weights W(k1,k2) = w * U(k1 dz_e, k2 dz_g) * dz_e * dz_g of the 2-D
/// trapezoid rule on [0, K_e dz_e] x [0, K_g dz_g] (w = 1, 1/2 on edges,
/// 1/4 at corners). Integrating a mixed derivative against them gives the
/// common-jump part of the jump generator.
inline Table2D cross_weight_table(const CopulaSpec& c, const JumpSpec& je, const JumpSpec& jg, double dze, double dzg,
                                  int Ke, int Kg) {
  if (!(dze > 0.0) || !(dzg > 0.0) || Ke < 1 || Kg < 1)
    throw DomainError("cross_weight_table: need positive steps and K >= 1");
  Table2D w(Ke + 1, Kg + 1);
  if (std::holds_alternative<Independence>(c) || je.intensity == 0.0 || jg.intensity == 0.0) return w;
  std::vector<double> ug(static_cast<std::size_t>(Kg) + 1);
  for (int l = 0; l <= Kg; ++l) ug[l] = tail_integral(jg, l * dzg);
  for (int k = 0; k <= Ke; ++k) {
    const double ue = tail_integral(je, k * dze);
    const double wk = (k == 0 || k == Ke) ? 0.5 : 1.0;
    for (int l = 0; l <= Kg; ++l) {
      const double wl = (l == 0 || l == Kg) ? 0.5 : 1.0;
      w(k, l) = wk * wl * copula_value(c, ue, ug[l]) * dze * dzg;
    }
  }
  return w;
}

}  // namespace plantopt
