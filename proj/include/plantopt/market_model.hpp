#pragma once

// Regime-switching arithmetic spot model for electricity and gas:
// seasonality, mean-reverting drifts and compound-Poisson spike measures.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "plantopt/errors.hpp"
#include "plantopt/numerics.hpp"

namespace plantopt {

enum class TrigShape { Sine, Cosine };

/// amplitude * trig((2*pi*t + phase) / period) + offset, t in hours.
struct Seasonality {
  double amplitude = 0.0;
  double phase = 0.0;  // radians, added to 2*pi*t before dividing by period
  double period = 24.0;
  double offset = 0.0;
  TrigShape shape = TrigShape::Sine;

  static Seasonality constant(double level) { return {0.0, 0.0, 24.0, level, TrigShape::Sine}; }

  bool operator==(const Seasonality&) const = default;
};

inline void validate(const Seasonality& f) {
  if (!(f.period > 0.0) || !std::isfinite(f.period)) throw SpecError("seasonality: period must be > 0");
  if (!std::isfinite(f.amplitude) || !std::isfinite(f.phase) || !std::isfinite(f.offset))
    throw SpecError("seasonality: coefficients must be finite");
}

inline double seasonality_value(const Seasonality& f, double t) {
  const double arg = (2.0 * std::numbers::pi * t + f.phase) / f.period;
  const double trig = f.shape == TrigShape::Sine ? std::sin(arg) : std::cos(arg);
  return f.amplitude * trig + f.offset;
}

inline double seasonality_derivative(const Seasonality& f, double t) {
  const double arg = (2.0 * std::numbers::pi * t + f.phase) / f.period;
  const double dtrig = f.shape == TrigShape::Sine ? std::cos(arg) : -std::sin(arg);
  return f.amplitude * (2.0 * std::numbers::pi / f.period) * dtrig;
}

// ---------------------------------------------------------------------------
// Jump sizes

struct InverseGaussian {
  double mean = 1.0;
  double shape = 1.0;
  bool operator==(const InverseGaussian&) const = default;
};

/// Normal(mean, sd) conditioned on (0, inf).
struct TruncatedNormal {
  double mean = 0.0;
  double sd = 1.0;
  bool operator==(const TruncatedNormal&) const = default;
};

struct PointMass {
  double size = 1.0;
  bool operator==(const PointMass&) const = default;
};

using JumpSizeDist = std::variant<InverseGaussian, TruncatedNormal, PointMass>;

/// Compound-Poisson spike component: `intensity` events per hour, i.i.d. sizes.
struct JumpSpec {
  double intensity = 0.0;
  JumpSizeDist size = PointMass{1.0};

  static JumpSpec none() { return {}; }

  bool operator==(const JumpSpec&) const = default;
};

inline void validate(const JumpSpec& j) {
  if (!(j.intensity >= 0.0) || !std::isfinite(j.intensity)) throw SpecError("jump: intensity must be >= 0");
  std::visit(
      [](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, InverseGaussian>) {
          if (!(d.mean > 0.0) || !(d.shape > 0.0)) throw SpecError("jump: inverse Gaussian needs mean > 0 and shape > 0");
        } else if constexpr (std::is_same_v<D, TruncatedNormal>) {
          if (!(d.sd > 0.0) || !std::isfinite(d.mean)) throw SpecError("jump: truncated normal needs sd > 0");
          if (numerics::normal_sf(-d.mean / d.sd) <= 0.0) throw SpecError("jump: truncated normal has no mass on (0, inf)");
        } else {
          if (!(d.size > 0.0) || !std::isfinite(d.size)) throw SpecError("jump: point mass size must be > 0");
        }
      },
      j.size);
}

namespace detail {

inline double ig_survival(const InverseGaussian& d, double x);

inline double ig_cdf(const InverseGaussian& d, double x) {
  if (x <= 0.0) return 0.0;
  const double r = std::sqrt(d.shape / x);
  const double a = r * (x / d.mean - 1.0);
  if (a > 0.0) return 1.0 - ig_survival(d, x);  // keeps D monotone in the upper tail
  const double b = r * (x / d.mean + 1.0);
  // exp(2 shape / mean) * Phi(-b) evaluated in log space.
  const double tail = numerics::normal_sf(b);
  const double second = tail > 0.0 ? std::exp(2.0 * d.shape / d.mean + std::log(tail)) : 0.0;
  return std::min(1.0, numerics::normal_cdf(a) + second);
}

inline double ig_survival(const InverseGaussian& d, double x) {
  if (x <= 0.0) return 1.0;
  const double r = std::sqrt(d.shape / x);
  const double a = r * (x / d.mean - 1.0);
  if (a <= 0.0) return std::max(0.0, 1.0 - ig_cdf(d, x));
  const double b = r * (x / d.mean + 1.0);
  const double tail = numerics::normal_sf(b);
  const double second = tail > 0.0 ? std::exp(2.0 * d.shape / d.mean + std::log(tail)) : 0.0;
  return std::max(0.0, numerics::normal_sf(a) - second);
}

inline double tn_mass(const TruncatedNormal& d) { return numerics::normal_sf(-d.mean / d.sd); }

inline double tn_survival(const TruncatedNormal& d, double x);

inline double tn_cdf(const TruncatedNormal& d, double x) {
  if (x <= 0.0) return 0.0;
  const double z0 = -d.mean / d.sd;
  const double z = (x - d.mean) / d.sd;
  if (z > 0.0) return 1.0 - tn_survival(d, x);
  return std::clamp((numerics::normal_cdf(z) - numerics::normal_cdf(z0)) / tn_mass(d), 0.0, 1.0);
}

inline double tn_survival(const TruncatedNormal& d, double x) {
  if (x <= 0.0) return 1.0;
  return std::clamp(numerics::normal_sf((x - d.mean) / d.sd) / tn_mass(d), 0.0, 1.0);
}

}  // namespace detail

/// Jump-size distribution function D(x). Positive support: D(0) = 0.
inline double jump_cdf(const JumpSpec& j, double x) {
  if (!(x >= 0.0)) throw DomainError("jump_cdf: x must be >= 0");
  return std::visit(
      [x](const auto& d) -> double {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, InverseGaussian>) return detail::ig_cdf(d, x);
        else if constexpr (std::is_same_v<D, TruncatedNormal>) return detail::tn_cdf(d, x);
        else return x >= d.size ? 1.0 : 0.0;
      },
      j.size);
}

/// 1 - D(x), computed without cancellation in the upper tail.
inline double jump_survival(const JumpSpec& j, double x) {
  if (!(x >= 0.0)) throw DomainError("jump_survival: x must be >= 0");
  return std::visit(
      [x](const auto& d) -> double {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, InverseGaussian>) return detail::ig_survival(d, x);
        else if constexpr (std::is_same_v<D, TruncatedNormal>) return detail::tn_survival(d, x);
        else return x >= d.size ? 0.0 : 1.0;
      },
      j.size);
}

/// Marginal tail integral U(x) = intensity * (1 - D(x)).
inline double tail_integral(const JumpSpec& j, double x) { return j.intensity * jump_survival(j, x); }

/// Mean jump size m = E[z].
inline double jump_mean(const JumpSpec& j) {
  return std::visit(
      [](const auto& d) -> double {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, InverseGaussian>) {
          return d.mean;
        } else if constexpr (std::is_same_v<D, TruncatedNormal>) {
          const double a = -d.mean / d.sd;
          const double pdf = std::exp(-0.5 * a * a) / std::sqrt(2.0 * std::numbers::pi);
          return d.mean + d.sd * pdf / detail::tn_mass(d);
        } else {
          return d.size;
        }
      },
      j.size);
}

/// Smallest x with 1 - D(x) <= q, for q in (0, 1].
inline double survival_quantile(const JumpSpec& j, double q) {
  if (!(q > 0.0 && q <= 1.0)) throw DomainError("survival_quantile: q must lie in (0, 1]");
  if (const auto* pm = std::get_if<PointMass>(&j.size)) return q >= 1.0 ? 0.0 : pm->size;
  if (q >= 1.0) return 0.0;
  double hi = std::max(1.0, jump_mean(j));
  while (jump_survival(j, hi) > q) hi *= 2.0;
  return numerics::bisect([&](double x) { return jump_survival(j, x); }, q, 0.0, hi);
}

/// Inverse of the tail integral: z with U(z) = u, for u in (0, intensity].
inline double inverse_tail(const JumpSpec& j, double u) {
  if (!(j.intensity > 0.0) || !(u > 0.0) || u > j.intensity) throw DomainError("inverse_tail: u must lie in (0, intensity]");
  return survival_quantile(j, u / j.intensity);
}

/// Truncation bound B with U(B) <= rel_tol * intensity.
inline double truncation_bound(const JumpSpec& j, double rel_tol = 1e-6) {
  if (j.intensity <= 0.0) return 0.0;
  if (const auto* tn = std::get_if<TruncatedNormal>(&j.size)) return tn->mean + 6.0 * tn->sd;
  return survival_quantile(j, rel_tol);
}

/// nu_k = intensity * [D((k+1/2) dz) - D(max(0, (k-1/2) dz))], k = 0..K.
inline std::vector<double> marginal_cell_masses(const JumpSpec& j, double dz, int K) {
  if (!(dz > 0.0) || K < 1) throw DomainError("marginal_cell_masses: need dz > 0 and K >= 1");
  std::vector<double> nu(static_cast<std::size_t>(K) + 1);
  if (j.intensity == 0.0) return nu;
  // Differences of survival values keep precision in the tail.
  double upper_prev = jump_survival(j, 0.0);
  for (int k = 0; k <= K; ++k) {
    const double s_hi = jump_survival(j, (k + 0.5) * dz);
    nu[static_cast<std::size_t>(k)] = j.intensity * std::max(0.0, upper_prev - s_hi);
    upper_prev = s_hi;
  }
  return nu;
}

// ---------------------------------------------------------------------------
// Regimes

enum class Commodity { Electricity, Gas };

enum class DriftConvention { Literal, Compensated };

struct RegimeParams {
  double alpha_e = 0.0;
  double alpha_g = 0.0;
  double sigma_e = 0.0;
  double sigma_g = 0.0;
  double rho = 0.0;
  JumpSpec jump_e;
  JumpSpec jump_g;
  Seasonality seasonality_e;
  Seasonality seasonality_g;
  double switch_rate = 0.0;  // intensity of leaving this regime, 1/hour

  bool operator==(const RegimeParams&) const = default;
};

inline void validate(const RegimeParams& p) {
  auto finite_nonneg = [](double v, const char* what) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw SpecError(std::string("regime: ") + what + " must be finite and >= 0");
  };
  finite_nonneg(p.alpha_e, "alpha_e");
  finite_nonneg(p.alpha_g, "alpha_g");
  finite_nonneg(p.sigma_e, "sigma_e");
  finite_nonneg(p.sigma_g, "sigma_g");
  finite_nonneg(p.switch_rate, "switch_rate");
  if (!(std::abs(p.rho) <= 1.0)) throw SpecError("regime: |rho| must be <= 1");
  validate(p.jump_e);
  validate(p.jump_g);
  validate(p.seasonality_e);
  validate(p.seasonality_g);
}

struct ModelSpec {
  std::vector<RegimeParams> regimes;
  double discount_rate = 0.0;  // 1/hour
  double horizon = 0.0;        // hours
  DriftConvention drift_convention = DriftConvention::Compensated;

  int regime_count() const { return static_cast<int>(regimes.size()); }

  bool operator==(const ModelSpec&) const = default;
};

inline void validate(const ModelSpec& m) {
  if (m.regimes.empty() || m.regimes.size() > 2) throw SpecError("model: 1 or 2 regimes required");
  if (!(m.discount_rate >= 0.0) || !std::isfinite(m.discount_rate)) throw SpecError("model: discount rate must be >= 0");
  if (!(m.horizon > 0.0) || !std::isfinite(m.horizon)) throw SpecError("model: horizon must be > 0");
  for (const auto& r : m.regimes) validate(r);
}

/// Lambda-bar(t) = Lambda'(t) + alpha * Lambda(t).
inline double seasonal_drift(const RegimeParams& p, double t, Commodity which) {
  if (which == Commodity::Electricity)
    return seasonality_derivative(p.seasonality_e, t) + p.alpha_e * seasonality_value(p.seasonality_e, t);
  return seasonality_derivative(p.seasonality_g, t) + p.alpha_g * seasonality_value(p.seasonality_g, t);
}

/// Coefficient of V_S in the discretised HJB equation. The literal form is
/// Lambda-bar - alpha S - lambda; the consistent form adds back lambda * m.
inline double effective_drift(const RegimeParams& p, double S, double t, Commodity which, DriftConvention conv) {
  const bool elec = which == Commodity::Electricity;
  const double alpha = elec ? p.alpha_e : p.alpha_g;
  const JumpSpec& jump = elec ? p.jump_e : p.jump_g;
  double mu = seasonal_drift(p, t, which) - alpha * S - jump.intensity;
  if (conv == DriftConvention::Compensated && jump.intensity > 0.0) mu += jump.intensity * jump_mean(jump);
  return mu;
}

inline const char* to_string(DriftConvention c) {
  return c == DriftConvention::Literal ? "literal" : "compensation-consistent";
}

}  // namespace plantopt
