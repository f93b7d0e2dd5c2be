#pragma once

// Independent checks for the solver: Monte Carlo simulation of the regime
// chain and the spot prices, discounted cash flow of a stored policy along
// simulated paths, and dynamic programming for the price-frozen case.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "plantopt/errors.hpp"
#include "plantopt/hjb_engine.hpp"
#include "plantopt/market_model.hpp"
#include "plantopt/parallel.hpp"
#include "plantopt/plant_physics.hpp"

namespace plantopt {

enum class JumpMode { None, Independent, Comonotone };

inline const char* to_string(JumpMode m) {
  switch (m) {
    case JumpMode::None: return "none";
    case JumpMode::Independent: return "independent";
    case JumpMode::Comonotone: return "comonotone";
  }
  return "none";
}

struct PathConfig {
  double step = 0.05;  // hours
  int paths = 10000;
  std::uint64_t seed = 1;
  JumpMode mode = JumpMode::Independent;
};

inline void validate(const PathConfig& c) {
  if (!(c.step > 0.0) || !std::isfinite(c.step)) throw SpecError("simulation: step must be > 0");
  if (c.paths < 1) throw SpecError("simulation: paths must be >= 1");
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Generator for path `index`; streams depend only on (seed, index).
inline std::mt19937_64 path_rng(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ (index * 0xD1B54A32D192ED03ull + 1)));
}

// ---------------------------------------------------------------------------
// Regime chain

/// Piecewise-constant regime path: state[k] holds on [times[k], times[k+1]).
struct RegimePath {
  std::vector<double> times{0.0};
  std::vector<int> states{0};

  int at(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    return states[static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - times.begin() - 1))];
  }
};

/// Exact simulation by exponential holding times with the leaving rate of
/// the current regime.
inline RegimePath simulate_regime_chain(const ModelSpec& model, double horizon, int start, std::mt19937_64& rng) {
  if (start < 0 || start >= model.regime_count()) throw DomainError("simulate_regime_chain: bad start regime");
  RegimePath path;
  path.states[0] = start;
  if (model.regime_count() < 2) return path;
  double t = 0.0;
  int l = start;
  for (;;) {
    const double rate = model.regimes[static_cast<std::size_t>(l)].switch_rate;
    if (!(rate > 0.0)) break;
    t += std::exponential_distribution<double>(rate)(rng);
    if (t >= horizon) break;
    l = 1 - l;
    path.times.push_back(t);
    path.states.push_back(l);
  }
  return path;
}

inline RegimePath simulate_regime_chain(const ModelSpec& model, const PathConfig& config, int start = 0) {
  auto rng = path_rng(config.seed, 0);
  return simulate_regime_chain(model, model.horizon, start, rng);
}

// ---------------------------------------------------------------------------
// Jump sizes

/// Inverse Gaussian draw by the transformation method of Michael, Schucany
/// and Haas.
inline double sample_inverse_gaussian(const InverseGaussian& d, std::mt19937_64& rng) {
  const double nu = std::normal_distribution<double>(0.0, 1.0)(rng);
  const double y = nu * nu;
  const double mu = d.mean, lam = d.shape;
  const double x = mu + mu * mu * y / (2.0 * lam) - mu / (2.0 * lam) * std::sqrt(4.0 * mu * lam * y + mu * mu * y * y);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return u <= mu / (mu + x) ? x : mu * mu / x;
}

inline double sample_jump_size(const JumpSpec& j, std::mt19937_64& rng) {
  return std::visit(
      [&](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, InverseGaussian>) {
          return sample_inverse_gaussian(d, rng);
        } else if constexpr (std::is_same_v<T, TruncatedNormal>) {
          // Rejection is cheap while the mass below zero is modest; deep
          // truncation falls back to inversion.
          if (d.mean > -2.0 * d.sd) {
            std::normal_distribution<double> N(d.mean, d.sd);
            for (;;)
              if (const double z = N(rng); z >= 0.0) return z;
          }
          const double q = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
          return survival_quantile(j, std::max(q, std::numeric_limits<double>::min()));
        } else {
          return d.size;
        }
      },
      j.size);
}

// ---------------------------------------------------------------------------
// Spot prices

struct JumpEvent {
  double t = 0.0;
  double z_e = 0.0;  // 0 when the stream moves only the other price
  double z_g = 0.0;
  bool common = false;
};

struct PricePath {
  std::vector<double> t, S_e, S_g;
  std::vector<int> regime;
  std::vector<JumpEvent> jumps;
};

/// One Euler-Maruyama step of both prices; jumps are added per the mode.
class PriceStepper {
 public:
  PriceStepper(const ModelSpec& model, JumpMode mode) : model_(model), mode_(mode) {}

  template <class OnJump>
  void advance(double& Se, double& Sg, double t, double dt, int l, std::mt19937_64& rng, OnJump&& on_jump) const {
    const RegimeParams& p = model_.regimes[static_cast<std::size_t>(l)];
    std::normal_distribution<double> N(0.0, 1.0);
    const double z1 = N(rng), z2 = N(rng);
    const double sq = std::sqrt(dt);
    const double dBe = sq * z1;
    const double dBg = sq * (p.rho * z1 + std::sqrt(std::max(0.0, 1.0 - p.rho * p.rho)) * z2);
    double ne = Se + (seasonal_drift(p, t, Commodity::Electricity) - p.alpha_e * Se) * dt + p.sigma_e * dBe;
    double ng = Sg + (seasonal_drift(p, t, Commodity::Gas) - p.alpha_g * Sg) * dt + p.sigma_g * dBg;
    const double le = p.jump_e.intensity, lg = p.jump_g.intensity;
    auto count = [&](double rate) {
      return rate > 0.0 ? std::poisson_distribution<int>(rate * dt)(rng) : 0;
    };
    if (mode_ == JumpMode::Independent) {
      for (int k = count(le); k > 0; --k) {
        const double z = sample_jump_size(p.jump_e, rng);
        ne += z;
        on_jump(JumpEvent{t, z, 0.0, false});
      }
      for (int k = count(lg); k > 0; --k) {
        const double z = sample_jump_size(p.jump_g, rng);
        ng += z;
        on_jump(JumpEvent{t, 0.0, z, false});
      }
    } else if (mode_ == JumpMode::Comonotone) {
      // Common arrivals carry a uniform tail level u in (0, min rate); each
      // price jumps by the size with that tail level. Levels above the
      // smaller rate belong to the larger stream alone.
      const double lc = std::min(le, lg);
      for (int k = count(lc); k > 0; --k) {
        const double u = lc * (1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng));
        const double ze = inverse_tail(p.jump_e, u), zg = inverse_tail(p.jump_g, u);
        ne += ze;
        ng += zg;
        on_jump(JumpEvent{t, ze, zg, true});
      }
      const bool e_larger = le > lg;
      const JumpSpec& big = e_larger ? p.jump_e : p.jump_g;
      for (int k = count(big.intensity - lc); k > 0; --k) {
        const double u = lc + (big.intensity - lc) * (1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng));
        const double z = inverse_tail(big, u);
        if (e_larger) {
          ne += z;
          on_jump(JumpEvent{t, z, 0.0, false});
        } else {
          ng += z;
          on_jump(JumpEvent{t, 0.0, z, false});
        }
      }
    }
    Se = ne;
    Sg = ng;
  }

  void advance(double& Se, double& Sg, double t, double dt, int l, std::mt19937_64& rng) const {
    advance(Se, Sg, t, dt, l, rng, [](const JumpEvent&) {});
  }

 private:
  const ModelSpec& model_;
  JumpMode mode_;
};

inline int step_count(double horizon, double step) {
  return std::max(1, static_cast<int>(std::ceil(horizon / step - 1e-9)));
}

/// Samples prices on the grid t_k = k * step (the last step may be shorter)
/// over [0, horizon], starting from (Se0, Sg0).
inline PricePath simulate_path(const ModelSpec& model, const RegimePath& regimes, const PathConfig& config, double Se0,
                               double Sg0, std::mt19937_64& rng) {
  validate(config);
  for (const auto& p : model.regimes)
    if (std::max(p.alpha_e, p.alpha_g) * config.step >= 0.5) throw DomainError("simulate_path: alpha * step must be < 0.5");
  const PriceStepper stepper(model, config.mode);
  const int n = step_count(model.horizon, config.step);
  PricePath out;
  out.t.reserve(static_cast<std::size_t>(n) + 1);
  double Se = Se0, Sg = Sg0, t = 0.0;
  auto record = [&] {
    out.t.push_back(t);
    out.S_e.push_back(Se);
    out.S_g.push_back(Sg);
    out.regime.push_back(regimes.at(t));
  };
  record();
  for (int k = 0; k < n; ++k) {
    const double dt = std::min(config.step, model.horizon - t);
    stepper.advance(Se, Sg, t, dt, regimes.at(t), rng, [&](const JumpEvent& e) { out.jumps.push_back(e); });
    t = k + 1 == n ? model.horizon : t + dt;
    record();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policy evaluation

struct StartNode {
  int regime = 0;
  double S_e = 0.0;
  double S_g = 0.0;
  double L = 20.0;
};

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int paths = 0;
};

/// Multilinear interpolation of one policy snapshot, prices clamped to the grid.
inline double interpolate_policy(const PolicySurface& pol, int snapshot, int l, double Se, double Sg, double L) {
  const Geometry& g = pol.geo;
  auto locate = [](double x, double h, int n, int& k, double& w) {
    if (n == 1) {
      k = 0;
      w = 0.0;
      return;
    }
    const double s = std::clamp(x / h, 0.0, static_cast<double>(n - 1));
    k = std::min(static_cast<int>(s), n - 2);
    w = s - k;
  };
  int i, j, u;
  double wi, wj, wu;
  locate(Se, g.dSe, g.ne, i, wi);
  if (g.gas_collapsed) {
    j = 0;
    wj = 0.0;
  } else {
    locate(Sg, g.dSg, g.ng, j, wj);
  }
  locate(L - g.L_min, g.dL, g.nl, u, wu);
  double acc = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int d = 0; d < 2; ++d) {
        const double w = (a ? wi : 1.0 - wi) * (b ? wj : 1.0 - wj) * (d ? wu : 1.0 - wu);
        if (w == 0.0) continue;
        acc += w * pol.at(snapshot, l, i + a, j + b, u + d);
      }
  return acc;
}

inline int nearest_snapshot(const PolicySurface& pol, double tau) {
  int best = 0;
  for (int s = 1; s < static_cast<int>(pol.taus.size()); ++s)
    if (std::abs(pol.taus[static_cast<std::size_t>(s)] - tau) < std::abs(pol.taus[static_cast<std::size_t>(best)] - tau))
      best = s;
  return best;
}

/// Discounted cash flow of following `policy` from `start` at calendar time 0
/// until the horizon; mean and standard error over config.paths paths.
inline McEstimate evaluate_policy_mc(const ModelSpec& model, const PlantSpec& plant, const PolicySurface& policy,
                                     const StartNode& start, const PathConfig& config, int threads = 1) {
  validate(config);
  if (policy.controls.empty()) throw DomainError("evaluate_policy_mc: empty policy");
  if (start.regime < 0 || start.regime >= policy.geo.regimes || start.regime >= model.regime_count())
    throw DomainError("evaluate_policy_mc: bad start regime");
  if (start.L < plant.L_min || start.L > plant.L_max) throw DomainError("evaluate_policy_mc: start L outside the plant range");
  for (const auto& p : model.regimes)
    if (std::max(p.alpha_e, p.alpha_g) * config.step >= 0.5)
      throw DomainError("evaluate_policy_mc: alpha * step must be < 0.5");

  const double T = model.horizon, r = model.discount_rate;
  const int n = step_count(T, config.step);
  // snapshot index per time step, tau = T - t
  std::vector<int> snap(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) snap[static_cast<std::size_t>(k)] = nearest_snapshot(policy, T - std::min(T, k * config.step));

  const PriceStepper stepper(model, config.mode);
  std::vector<double> values(static_cast<std::size_t>(config.paths));
  parallel_for(config.paths, threads, [&](int begin, int end) {
    for (int path = begin; path < end; ++path) {
      auto rng = path_rng(config.seed, static_cast<std::uint64_t>(path));
      const RegimePath chain = simulate_regime_chain(model, T, start.regime, rng);
      double Se = start.S_e, Sg = start.S_g, L = start.L, t = 0.0, acc = 0.0;
      for (int k = 0; k < n; ++k) {
        const double dt = std::min(config.step, T - t);
        const int l = chain.at(t);
        const auto [lo, hi] = control_bounds(plant, L);
        const double c = std::clamp(interpolate_policy(policy, snap[static_cast<std::size_t>(k)], l, Se, Sg, L), lo, hi);
        acc += std::exp(-r * t) * (output(plant, L) * Se - Sg * c) * dt;
        L = boiler_step(plant, L, c, dt);
        stepper.advance(Se, Sg, t, dt, l, rng);
        t = k + 1 == n ? T : t + dt;
      }
      values[static_cast<std::size_t>(path)] = acc;
    }
  });

  McEstimate est;
  est.paths = config.paths;
  double sum = 0.0;
  for (double v : values) sum += v;
  est.mean = sum / config.paths;
  if (config.paths > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - est.mean) * (v - est.mean);
    est.std_error = std::sqrt(ss / (config.paths - 1) / config.paths);
  }
  return est;
}

// ---------------------------------------------------------------------------
// Frozen-price dynamic programming

struct DpOptions {
  double dL = 1.0;     // upper bound on the temperature spacing
  double dtau = 0.05;  // upper bound on the time step
};

/// Value of the frozen-price problem on a uniform L grid at tau = T.
struct DpCurve {
  double L_min = 0.0;
  double dL = 0.0;
  std::vector<double> values;

  double operator()(double L) const {
    const double s = std::clamp((L - L_min) / dL, 0.0, static_cast<double>(values.size() - 1));
    const std::size_t k = std::min(static_cast<std::size_t>(s), values.size() - 2);
    const double w = s - static_cast<double>(k);
    return (1.0 - w) * values[k] + w * values[k + 1];
  }
};

inline void require_frozen_prices(const ModelSpec& model) {
  if (model.regime_count() != 1) throw SpecError("deterministic_value: single regime required");
  const RegimeParams& p = model.regimes[0];
  if (p.sigma_e != 0.0 || p.sigma_g != 0.0 || p.jump_e.intensity != 0.0 || p.jump_g.intensity != 0.0 || p.alpha_e != 0.0 ||
      p.alpha_g != 0.0 || p.seasonality_e.amplitude != 0.0 || p.seasonality_g.amplitude != 0.0)
    throw SpecError("deterministic_value: prices must be frozen (sigma = lambda = alpha = 0, constant seasonality)");
}

/// Backward recursion V(L) <- max_c [(H(L) Se - Sg c) dtau + e^{-r dtau} V(L')]
/// with L' the boiler state after dtau, V linearly interpolated in L.
///
/// V(L') is piecewise linear in L', L' is increasing and concave in c, so the
/// maximum over a cell sits at a cell crossing, a bound, or the stationary
/// point of that cell's piece. Those candidates are searched exactly.
inline DpCurve deterministic_curve(const ModelSpec& model, const PlantSpec& plant, double Se, double Sg,
                                   const DpOptions& opt = {}) {
  require_frozen_prices(model);
  if (!(opt.dL > 0.0) || !(opt.dtau > 0.0)) throw DomainError("deterministic_value: resolutions must be > 0");
  const int nL = static_cast<int>(std::ceil((plant.L_max - plant.L_min) / opt.dL - 1e-9));
  const int M = static_cast<int>(std::ceil(model.horizon / opt.dtau - 1e-9));
  const double dL = (plant.L_max - plant.L_min) / nL, dtau = model.horizon / M;
  const double disc = std::exp(-model.discount_rate * dtau);
  const std::size_t n = static_cast<std::size_t>(nL) + 1;

  struct Node {
    double L, lo, hi, H;
  };
  std::vector<Node> nodes(n);
  for (std::size_t u = 0; u < n; ++u) {
    const double L = std::min(plant.L_max, plant.L_min + static_cast<double>(u) * dL);
    const auto [lo, hi] = control_bounds(plant, L);
    nodes[u] = {L, lo, hi, output(plant, L)};
  }

  DpCurve cur{plant.L_min, dL, std::vector<double>(n, 0.0)};
  std::vector<double> next(n);
  std::vector<double> cands;
  for (int m = 0; m < M; ++m) {
    for (std::size_t u = 0; u < n; ++u) {
      const Node& nd = nodes[u];
      auto landing = [&](double c) { return boiler_step(plant, nd.L, c, dtau); };
      auto objective = [&](double c) { return -Sg * c * dtau + disc * cur(landing(c)); };
      cands.assign({nd.lo, nd.hi});
      const double Llo = landing(nd.lo), Lhi = landing(nd.hi);
      const int klo = static_cast<int>(std::floor((Llo - plant.L_min) / dL));
      const int khi = static_cast<int>(std::ceil((Lhi - plant.L_min) / dL));
      // c reaching L' = Lk solves eta (Lbar(c) - L) dtau = Lk - L.
      auto burn_for = [&](double Lk) {
        const double target = nd.L + (Lk - nd.L) / (plant.eta * dtau);
        if (target > plant.b0) return nd.hi;
        return std::clamp(plant.b2 - std::sqrt((plant.b0 - target) / plant.b1), nd.lo, nd.hi);
      };
      for (int k = std::max(0, klo); k <= std::min(nL, khi); ++k) cands.push_back(burn_for(plant.L_min + k * dL));
      for (int k = std::max(0, klo); k < std::min(nL, khi); ++k) {
        const double slope = (cur.values[static_cast<std::size_t>(k) + 1] - cur.values[static_cast<std::size_t>(k)]) / dL;
        // disc * slope * eta dtau * 2 b1 (b2 - c) = Sg dtau
        if (slope > 0.0) {
          const double c = plant.b2 - Sg / (2.0 * plant.b1 * plant.eta * disc * slope);
          if (c > nd.lo && c < nd.hi) {
            const double Lc = landing(c);
            if (Lc >= plant.L_min + k * dL && Lc <= plant.L_min + (k + 1) * dL) cands.push_back(c);
          }
        }
      }
      double best = -std::numeric_limits<double>::infinity(), best_c = nd.lo;
      for (double c : cands) {
        const double f = objective(c);
        if (f > best || (f == best && c < best_c)) {
          best = f;
          best_c = c;
        }
      }
      next[u] = nd.H * Se * dtau + best;
    }
    cur.values.swap(next);
  }
  return cur;
}

inline double deterministic_value(const ModelSpec& model, const PlantSpec& plant, double L0, double Se, double Sg,
                                  const DpOptions& opt = {}) {
  if (L0 < plant.L_min || L0 > plant.L_max) throw DomainError("deterministic_value: start L outside the plant range");
  return deterministic_curve(model, plant, Se, Sg, opt)(L0);
}

}  // namespace plantopt
