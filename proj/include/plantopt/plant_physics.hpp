#pragma once

// Boiler model: power output against temperature, the fuel-burn to
// equilibrium-temperature parabola, first-order boiler dynamics and the
// burn range that keeps |dL/dt| within the ramp limit.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "plantopt/errors.hpp"

namespace plantopt {

struct PlantSpec {
  double L_min = 20.0;  // deg C
  double L_max = 600.0;
  double L_gen = 300.0;  // below this the turbine produces nothing
  double output_slope = 5.0 / 6.0;  // MW per deg C
  double output_intercept = -100.0;  // MW
  double b0 = 650.0;
  double b1 = 0.00003571;
  double b2 = 4200.0;
  double eta = 0.1;  // 1/hour
  double c_abs_max = 3017.0;  // fuel units per hour
  double ramp_limit = 15.0;  // deg C per hour

  bool operator==(const PlantSpec&) const = default;
};

inline void validate(const PlantSpec& p) {
  auto bad = [](const std::string& m) { throw SpecError("plant: " + m); };
  if (!(p.L_min < p.L_gen && p.L_gen < p.L_max)) bad("need L_min < L_gen < L_max");
  if (!(p.b1 > 0.0)) bad("b1 must be > 0");
  if (!(p.c_abs_max > 0.0 && p.c_abs_max < p.b2)) bad("need 0 < c_abs_max < b2");
  if (!(p.eta > 0.0)) bad("eta must be > 0");
  if (!(p.ramp_limit > 0.0)) bad("ramp_limit must be > 0");
  for (double v : {p.L_min, p.L_max, p.L_gen, p.output_slope, p.output_intercept, p.b0, p.b1, p.b2, p.eta, p.c_abs_max,
                   p.ramp_limit})
    if (!std::isfinite(v)) bad("all coefficients must be finite");
}

namespace detail {

inline void check_temperature(const PlantSpec& p, double L, const char* who) {
  if (!(L >= p.L_min - 1e-9 && L <= p.L_max + 1e-9))
    throw DomainError(std::string(who) + ": temperature outside [L_min, L_max]");
}

inline void check_burn(const PlantSpec& p, double c, const char* who) {
  if (!(c >= -1e-9 && c <= p.c_abs_max + 1e-9)) throw DomainError(std::string(who) + ": burn outside [0, c_abs_max]");
}

}  // namespace detail

/// Parabola b0 - b1 (c - b2)^2 without range checks.
inline double equilibrium_curve(const PlantSpec& p, double c) { return p.b0 - p.b1 * (c - p.b2) * (c - p.b2); }

/// Power output in MW; zero below the generation threshold.
inline double output(const PlantSpec& p, double L) {
  detail::check_temperature(p, L, "output");
  return L < p.L_gen ? 0.0 : p.output_slope * L + p.output_intercept;
}

inline double equilibrium_temp(const PlantSpec& p, double c) {
  detail::check_burn(p, c, "equilibrium_temp");
  return equilibrium_curve(p, c);
}

/// Admissible burn range at temperature L: the set of c in [0, c_abs_max]
/// with |eta (Lbar(c) - L)| <= ramp_limit.
inline std::pair<double, double> control_bounds(const PlantSpec& p, double L) {
  detail::check_temperature(p, L, "control_bounds");
  const double swing = p.ramp_limit / p.eta;
  const double lo_rad = (p.b0 + swing - L) / p.b1;
  const double c_min = lo_rad > 0.0 ? std::max(0.0, p.b2 - std::sqrt(lo_rad)) : 0.0;
  // Negative radicand: even the hottest burn cannot heat faster than the limit.
  const double hi_rad = (p.b0 - swing - L) / p.b1;
  const double c_max = hi_rad >= 0.0 ? std::min(p.c_abs_max, p.b2 - std::sqrt(hi_rad)) : p.c_abs_max;
  return {std::min(c_min, c_max), c_max};
}

/// dL/dt = eta (Lbar(c) - L).
inline double temperature_drift(const PlantSpec& p, double L, double c) {
  detail::check_temperature(p, L, "temperature_drift");
  detail::check_burn(p, c, "temperature_drift");
  return p.eta * (equilibrium_curve(p, c) - L);
}

/// One explicit Euler step of the boiler, clamped to the operating range.
inline double boiler_step(const PlantSpec& p, double L, double c, double dt) {
  return std::clamp(L + dt * temperature_drift(p, L, c), p.L_min, p.L_max);
}

}  // namespace plantopt
