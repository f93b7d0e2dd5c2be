#pragma once

// Explicit finite-difference solver for the coupled HJB integro-differential
// equations of the plant value V_l(S_e, S_g, L, tau), tau = time to horizon.
//
// Per step and node:  V^{n+1} = MUSCL_L(V^n) + dtau * (R V^n + payoff(c*)),
// where R collects diffusion, upwinded drift, the jump operators, -rV and the
// regime coupling, and the temperature transport a(L, c*) V_L is advanced by
// the slope-limited MUSCL update.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "plantopt/errors.hpp"
#include "plantopt/jump_dependence.hpp"
#include "plantopt/market_model.hpp"
#include "plantopt/parallel.hpp"
#include "plantopt/plant_physics.hpp"

namespace plantopt {

struct GridSpec {
  double S_e_max = 200.0;
  double S_g_max = 20.0;
  int N_e = 40;
  int N_g = 40;
  int N_L = 29;
  int M = 0;  // 0 selects the step count from stability_bound
  double B_e = 0.0;  // jump truncation; 0 derives it from the tails
  double B_g = 0.0;
  int K_e = 0;  // quadrature cells; 0 takes the smallest count covering B
  int K_g = 0;
  int N_c = 64;
  std::optional<double> gas_price;  // collapses the gas axis to one node

  bool operator==(const GridSpec&) const = default;
};

/// Node geometry shared by lattices and policies.
struct Geometry {
  int regimes = 1;
  int ne = 0, ng = 0, nl = 0;  // node counts
  double dSe = 0.0, dSg = 0.0, dL = 0.0;
  double L_min = 0.0;
  bool gas_collapsed = false;
  double gas_price = 0.0;

  double S_e(int i) const { return i * dSe; }
  double S_g(int j) const { return gas_collapsed ? gas_price : j * dSg; }
  double L(int u) const { return L_min + u * dL; }

  std::size_t plane() const { return static_cast<std::size_t>(ne) * ng * nl; }
  std::size_t size() const { return plane() * regimes; }
  std::size_t index(int l, int i, int j, int u) const {
    return ((static_cast<std::size_t>(l) * ne + i) * ng + j) * nl + u;
  }

  bool operator==(const Geometry&) const = default;
};

struct Lattice {
  Geometry geo;
  int time_index = 0;
  std::vector<double> values;

  Lattice() = default;
  explicit Lattice(const Geometry& g, double fill = 0.0) : geo(g), values(g.size(), fill) {}

  double& at(int l, int i, int j, int u) { return values[geo.index(l, i, j, u)]; }
  double at(int l, int i, int j, int u) const { return values[geo.index(l, i, j, u)]; }
};

/// Optimal burn rates, one lattice-shaped array per stored snapshot.
struct PolicySurface {
  Geometry geo;
  std::vector<double> taus;  // time to horizon of each snapshot (grid point)
  std::vector<int> steps;
  std::vector<std::vector<double>> controls;

  double at(int snapshot, int l, int i, int j, int u) const {
    return controls[static_cast<std::size_t>(snapshot)][geo.index(l, i, j, u)];
  }
};

struct ControlChoice {
  double c = 0.0;
  double hamiltonian = 0.0;  // H(L) S_e - S_g c + a(L, c) D_L V
};

inline double minmod(double a, double b) {
  return 0.5 * (numerics::sign(a) + numerics::sign(b)) * std::min(std::abs(a), std::abs(b));
}

inline double total_variation(const std::vector<double>& q) {
  double tv = 0.0;
  for (std::size_t k = 1; k < q.size(); ++k) tv += std::abs(q[k] - q[k - 1]);
  return tv;
}

/// One MUSCL step of q_tau = a(L) q_L on a column of n nodes spaced dL.
/// Courant number nu = -dtau a / dL; minmod slopes, linear ghost nodes.
/// Velocities must not point out of the column at its ends.
inline void advection_update(const double* q, const double* a, int n, double dtau, double dL, double* out) {
  auto slope = [&](int u) {
    if (n < 2) return 0.0;
    if (u == 0) return (q[1] - q[0]) / dL;
    if (u == n - 1) return (q[n - 1] - q[n - 2]) / dL;
    return minmod((q[u + 1] - q[u]) / dL, (q[u] - q[u - 1]) / dL);
  };
  for (int u = 0; u < n; ++u) {
    const double nu = -dtau * a[u] / dL;
    if (std::abs(nu) > 1.0) {
      std::ostringstream os;
      os << "advection: Courant number " << nu << " exceeds 1 at node " << u;
      throw NumericalError(os.str());
    }
    if (nu > 0.0) {
      if (u == 0) throw NumericalError("advection: inflow through the lower temperature edge");
      out[u] = q[u] - nu * (q[u] - q[u - 1]) - 0.5 * nu * (1.0 - nu) * dL * (slope(u) - slope(u - 1));
    } else if (nu < 0.0) {
      if (u == n - 1) throw NumericalError("advection: inflow through the upper temperature edge");
      out[u] = q[u] - nu * (q[u + 1] - q[u]) + 0.5 * nu * (1.0 + nu) * dL * (slope(u + 1) - slope(u));
    } else {
      out[u] = q[u];
    }
  }
}

inline std::vector<double> advection_update(const std::vector<double>& q, const std::vector<double>& a, double dtau,
                                            double dL) {
  if (q.size() != a.size()) throw DomainError("advection_update: size mismatch");
  std::vector<double> out(q.size());
  advection_update(q.data(), a.data(), static_cast<int>(q.size()), dtau, dL, out.data());
  return out;
}

/// Jump truncation bounds and quadrature counts actually used.
struct JumpGrid {
  double B_e = 0.0, B_g = 0.0;
  int K_e = 1, K_g = 1;
};

inline Geometry make_geometry(const ModelSpec& model, const PlantSpec& plant, const GridSpec& grid) {
  validate(model);
  validate(plant);
  auto bad = [](const std::string& m) { throw SpecError("grid: " + m); };
  if (grid.N_e < 2 || grid.N_L < 2) bad("N_e and N_L must be >= 2");
  if (!grid.gas_price && grid.N_g < 2) bad("N_g must be >= 2");
  if (!(grid.S_e_max > 0.0) || !std::isfinite(grid.S_e_max)) bad("S_e_max must be > 0");
  if (!grid.gas_price && (!(grid.S_g_max > 0.0) || !std::isfinite(grid.S_g_max))) bad("S_g_max must be > 0");
  if (grid.M < 0) bad("M must be >= 0 (0 = auto)");
  if (grid.N_c < 2) bad("N_c must be >= 2");
  if (!(grid.B_e >= 0.0) || !(grid.B_g >= 0.0)) bad("jump bounds must be >= 0");
  if (grid.K_e < 0 || grid.K_g < 0) bad("K must be >= 0 (0 = auto)");
  if (grid.gas_price) {
    if (!(*grid.gas_price >= 0.0) || !std::isfinite(*grid.gas_price)) bad("gas_price must be >= 0");
    for (const auto& r : model.regimes)
      if (r.sigma_g != 0.0 || r.alpha_g != 0.0 || r.jump_g.intensity != 0.0 || r.seasonality_g.amplitude != 0.0)
        bad("a collapsed gas axis needs sigma_g = alpha_g = lambda_g = 0 and constant gas seasonality");
  }
  Geometry g;
  g.regimes = model.regime_count();
  g.ne = grid.N_e + 1;
  g.gas_collapsed = grid.gas_price.has_value();
  g.ng = g.gas_collapsed ? 1 : grid.N_g + 1;
  g.nl = grid.N_L + 1;
  g.dSe = grid.S_e_max / grid.N_e;
  g.dSg = g.gas_collapsed ? 0.0 : grid.S_g_max / grid.N_g;
  g.dL = (plant.L_max - plant.L_min) / grid.N_L;
  g.L_min = plant.L_min;
  g.gas_price = g.gas_collapsed ? *grid.gas_price : 0.0;
  return g;
}

inline JumpGrid resolve_jump_grid(const ModelSpec& model, const GridSpec& grid, const Geometry& g) {
  JumpGrid jg;
  double be = 0.0, bg = 0.0;
  for (const auto& r : model.regimes) {
    be = std::max(be, truncation_bound(r.jump_e));
    bg = std::max(bg, truncation_bound(r.jump_g));
  }
  jg.B_e = grid.B_e > 0.0 ? grid.B_e : be;
  jg.B_g = grid.B_g > 0.0 ? grid.B_g : bg;
  auto count = [](double B, double dz) { return std::max(1, static_cast<int>(std::ceil(B / dz - 0.5))); };
  jg.K_e = count(jg.B_e, g.dSe);
  if (grid.K_e > 0) {
    if ((grid.K_e + 0.5) * g.dSe < jg.B_e) throw SpecError("grid: (K_e + 1/2) dS_e must cover B_e");
    jg.K_e = grid.K_e;
  }
  if (g.gas_collapsed) {
    jg.K_g = 1;
  } else {
    jg.K_g = count(jg.B_g, g.dSg);
    if (grid.K_g > 0) {
      if ((grid.K_g + 0.5) * g.dSg < jg.B_g) throw SpecError("grid: (K_g + 1/2) dS_g must cover B_g");
      jg.K_g = grid.K_g;
    }
  }
  return jg;
}

namespace detail {

/// Largest |mu(S, t)| over S in {0, S_max} and a dense sample of t in [0, T].
inline double max_abs_drift(const RegimeParams& p, const ModelSpec& m, Commodity which, double S_max) {
  double best = 0.0;
  constexpr int samples = 4000;
  for (int s = 0; s <= samples; ++s) {
    const double t = m.horizon * s / samples;
    best = std::max(best, std::abs(effective_drift(p, 0.0, t, which, m.drift_convention)));
    best = std::max(best, std::abs(effective_drift(p, S_max, t, which, m.drift_convention)));
  }
  return best;
}

}  // namespace detail

/// Largest stable explicit step (hours), with safety factor 0.9.
inline double stability_bound(const GridSpec& grid, const ModelSpec& model, const PlantSpec& plant) {
  const Geometry g = make_geometry(model, plant, grid);
  double worst = 0.0;
  for (const auto& p : model.regimes) {
    double rate = p.sigma_e * p.sigma_e / (g.dSe * g.dSe) +
                  detail::max_abs_drift(p, model, Commodity::Electricity, grid.S_e_max) / g.dSe;
    if (!g.gas_collapsed) {
      rate += p.sigma_g * p.sigma_g / (g.dSg * g.dSg) +
              std::abs(p.rho) * p.sigma_e * p.sigma_g / (2.0 * g.dSe * g.dSg) +
              detail::max_abs_drift(p, model, Commodity::Gas, grid.S_g_max) / g.dSg;
    }
    rate += model.discount_rate + p.jump_e.intensity + p.jump_g.intensity + p.switch_rate + plant.ramp_limit / g.dL;
    worst = std::max(worst, rate);
  }
  return worst > 0.0 ? 0.9 / worst : std::numeric_limits<double>::infinity();
}

/// Precomputed discretisation of one model on one grid.
class Engine {
 public:
  Engine(ModelSpec model, PlantSpec plant, CopulaSpec copula, GridSpec grid)
      : model_(std::move(model)), plant_(plant), copula_(std::move(copula)), grid_(std::move(grid)) {
    validate(copula_);
    geo_ = make_geometry(model_, plant_, grid_);
    jumps_ = resolve_jump_grid(model_, grid_, geo_);
    dtau_max_ = stability_bound(grid_, model_, plant_);
    if (grid_.M > 0) {
      steps_ = grid_.M;
      dtau_ = model_.horizon / steps_;
      if (dtau_ > dtau_max_) {
        std::ostringstream os;
        os << "time step " << dtau_ << " h exceeds the stability bound " << dtau_max_ << " h";
        throw NumericalError(os.str());
      }
    } else {
      steps_ = std::max(1, static_cast<int>(std::ceil(model_.horizon / dtau_max_)));
      dtau_ = model_.horizon / steps_;
    }
    build_regimes();
    build_controls();
  }

  const Geometry& geometry() const { return geo_; }
  const JumpGrid& jump_grid() const { return jumps_; }
  const ModelSpec& model() const { return model_; }
  const PlantSpec& plant() const { return plant_; }
  const CopulaSpec& copula() const { return copula_; }
  const GridSpec& grid() const { return grid_; }
  double delta_tau() const { return dtau_; }
  double delta_tau_max() const { return dtau_max_; }
  int steps() const { return steps_; }

  /// Calendar time of level n.
  double calendar_time(int n) const { return model_.horizon - n * dtau_; }

  const std::vector<double>& nu_e(int l) const { return regimes_[l].nu_e; }
  const std::vector<double>& nu_g(int l) const { return regimes_[l].nu_g; }
  const Table2D& cross_weights(int l) const { return regimes_[l].W; }

  double payoff_bound() const {
    const double Se_max = geo_.S_e(geo_.ne - 1);
    const double Sg_max = geo_.gas_collapsed ? geo_.gas_price : geo_.S_g(geo_.ng - 1);
    return model_.horizon * (output(plant_, plant_.L_max) * Se_max + plant_.c_abs_max * Sg_max);
  }

  // -- per-node operators (reference forms; the step uses the same kernels)

  /// Diffusion, upwinded drift and -rV at an interior price node.
  double diffusion_operator(const Lattice& V, int l, int i, int j, int u) const {
    require_interior(i, j, "diffusion_operator");
    const Drifts d = drifts(V.time_index, l);
    return price_terms(V, l, i, j, u, d);
  }

  double marginal_jump_operator_e(const Lattice& V, int l, int i, int j, int u) const {
    return jump_e(V, l, i, j, u);
  }

  double marginal_jump_operator_g(const Lattice& V, int l, int i, int j, int u) const {
    if (geo_.gas_collapsed) return 0.0;
    return jump_g(V, l, i, j, u);
  }

  /// Common-jump operator by direct summation of the four shifted sums.
  double cross_jump_operator(const Lattice& V, int l, int i, int j, int u) const {
    const auto& R = regimes_[l];
    if (!R.has_cross || geo_.gas_collapsed) return 0.0;
    auto C = [&](int p, int q) {
      double s = 0.0;
      for (int k1 = 0; k1 <= jumps_.K_e; ++k1)
        for (int k2 = 0; k2 <= jumps_.K_g; ++k2) s += R.W(k1, k2) * extended(V, l, p + k1, q + k2, u);
      return s;
    };
    return (C(i + 1, j + 1) - C(i + 1, j - 1) - C(i - 1, j + 1) + C(i - 1, j - 1)) /
           (4.0 * geo_.dSe * geo_.dSg);
  }

  ControlChoice optimize_control(const Lattice& V, int l, int i, int j, int u) const {
    return choose(V.values.data() + geo_.index(l, i, j, 0), i, j, u);
  }

  /// Rate of change (without the control term) at any node: interior
  /// operators or the reduced edge and corner equations, plus coupling.
  double spatial_rate(const Lattice& V, int l, int i, int j, int u) const {
    const Drifts d = drifts(V.time_index, l);
    double r = price_terms(V, l, i, j, u, d);
    if (interior_e(i)) r += jump_e(V, l, i, j, u);
    if (!geo_.gas_collapsed && interior_g(j)) r += jump_g(V, l, i, j, u);
    if (interior_e(i) && interior_g(j)) r += cross_jump_operator(V, l, i, j, u);
    return r + coupling(V, l, i, j, u);
  }

  /// Edge and corner rates for every boundary price node of regime l;
  /// interior entries are left at zero. Shape: (ne, ng, nl).
  std::vector<double> apply_boundary_conditions(const Lattice& V, int l) const {
    std::vector<double> out(geo_.plane(), 0.0);
    for (int i = 0; i < geo_.ne; ++i)
      for (int j = 0; j < geo_.ng; ++j) {
        if (interior_e(i) && interior_g(j)) continue;
        for (int u = 0; u < geo_.nl; ++u)
          out[(static_cast<std::size_t>(i) * geo_.ng + j) * geo_.nl + u] = spatial_rate(V, l, i, j, u);
      }
    return out;
  }

  /// Advances every regime from level n to n+1. Optionally stores c* of level n.
  void step(const Lattice& in, Lattice& out, std::vector<double>* policy = nullptr, int threads = 1) const {
    if (!(in.geo == geo_)) throw DomainError("step: lattice geometry mismatch");
    out.geo = geo_;
    out.values.resize(geo_.size());
    out.time_index = in.time_index + 1;
    if (policy) policy->resize(geo_.size());

    std::vector<Drifts> d(static_cast<std::size_t>(geo_.regimes));
    for (int l = 0; l < geo_.regimes; ++l) d[l] = drifts(in.time_index, l);
    std::vector<std::vector<double>> corr(static_cast<std::size_t>(geo_.regimes));
    for (int l = 0; l < geo_.regimes; ++l)
      if (regimes_[l].has_cross && !geo_.gas_collapsed) corr[l] = correlate(in, l);

    const int rows = geo_.regimes * geo_.ne;
    parallel_for(rows, threads, [&](int begin, int end) {
      const int nl = geo_.nl;
      std::vector<double> a(nl), cstar(nl), adv(nl), rate(nl);
      for (int row = begin; row < end; ++row) {
        const int l = row / geo_.ne;
        const int i = row % geo_.ne;
        for (int j = 0; j < geo_.ng; ++j) {
          const double* col = in.values.data() + geo_.index(l, i, j, 0);
          for (int u = 0; u < nl; ++u) {
            const ControlChoice ch = choose(col, i, j, u);
            cstar[u] = ch.c;
            a[u] = edge_velocity(u, drift_of(u, ch.c));
            double r = price_terms(in, l, i, j, u, d[l]);
            if (interior_e(i)) r += jump_e(in, l, i, j, u);
            if (!geo_.gas_collapsed && interior_g(j)) r += jump_g(in, l, i, j, u);
            if (!corr[l].empty() && interior_e(i) && interior_g(j)) r += cross_from(corr[l], i, j, u);
            r += coupling(in, l, i, j, u);
            rate[u] = r + H_[u] * geo_.S_e(i) - geo_.S_g(j) * ch.c;
          }
          advection_update(col, a.data(), nl, dtau_, geo_.dL, adv.data());
          double* dst = out.values.data() + geo_.index(l, i, j, 0);
          for (int u = 0; u < nl; ++u) {
            const double v = adv[u] + dtau_ * rate[u];
            if (!std::isfinite(v)) {
              std::ostringstream os;
              os << "non-finite value at step " << out.time_index << " (regime " << l << ", i=" << i << ", j=" << j
                 << ", u=" << u << ")";
              throw NumericalError(os.str());
            }
            dst[u] = v;
          }
          if (policy) std::copy(cstar.begin(), cstar.end(), policy->begin() + geo_.index(l, i, j, 0));
        }
      }
    });
  }

  /// Optimal controls of a whole lattice.
  std::vector<double> policy_of(const Lattice& V, int threads = 1) const {
    std::vector<double> pol(geo_.size());
    parallel_for(geo_.regimes * geo_.ne, threads, [&](int begin, int end) {
      for (int row = begin; row < end; ++row) {
        const int l = row / geo_.ne, i = row % geo_.ne;
        for (int j = 0; j < geo_.ng; ++j) {
          const double* col = V.values.data() + geo_.index(l, i, j, 0);
          for (int u = 0; u < geo_.nl; ++u) pol[geo_.index(l, i, j, u)] = choose(col, i, j, u).c;
        }
      }
    });
    return pol;
  }

  /// Admissible burn range at temperature node u.
  std::pair<double, double> bounds(int u) const { return {c_lo_[u], c_hi_[u]}; }

  /// Temperature velocity for burn c at node u, zeroed where it would leave
  /// [L_min, L_max].
  double velocity(int u, double c) const { return edge_velocity(u, drift_of(u, c)); }

 private:
  struct RegimeOps {
    std::vector<double> nu_e, nu_g;
    std::vector<double> pre0_e, pre1_e, pre0_g, pre1_g;  // prefix sums of nu_k and k nu_k
    Table2D W;
    bool has_cross = false;
  };

  struct Drifts {
    double base_e = 0.0, base_g = 0.0;  // mu at S = 0
    double alpha_e = 0.0, alpha_g = 0.0;
  };

  ModelSpec model_;
  PlantSpec plant_;
  CopulaSpec copula_;
  GridSpec grid_;
  Geometry geo_;
  JumpGrid jumps_;
  double dtau_ = 0.0, dtau_max_ = 0.0;
  int steps_ = 0;
  std::vector<RegimeOps> regimes_;
  // per temperature node
  std::vector<double> H_, c_lo_, c_hi_, c_eq_;

  static void prefix(const std::vector<double>& nu, std::vector<double>& p0, std::vector<double>& p1) {
    p0.assign(nu.size() + 1, 0.0);
    p1.assign(nu.size() + 1, 0.0);
    for (std::size_t k = 0; k < nu.size(); ++k) {
      p0[k + 1] = p0[k] + nu[k];
      p1[k + 1] = p1[k] + static_cast<double>(k) * nu[k];
    }
  }

  void build_regimes() {
    regimes_.resize(static_cast<std::size_t>(geo_.regimes));
    for (int l = 0; l < geo_.regimes; ++l) {
      const auto& p = model_.regimes[l];
      auto& R = regimes_[l];
      R.nu_e = marginal_cell_masses(p.jump_e, geo_.dSe, jumps_.K_e);
      prefix(R.nu_e, R.pre0_e, R.pre1_e);
      if (!geo_.gas_collapsed) {
        R.nu_g = marginal_cell_masses(p.jump_g, geo_.dSg, jumps_.K_g);
        prefix(R.nu_g, R.pre0_g, R.pre1_g);
        R.W = cross_weight_table(copula_, p.jump_e, p.jump_g, geo_.dSe, geo_.dSg, jumps_.K_e, jumps_.K_g);
        R.has_cross = std::any_of(R.W.data.begin(), R.W.data.end(), [](double w) { return w != 0.0; });
      }
    }
  }

  void build_controls() {
    const int nl = geo_.nl;
    H_.resize(nl);
    c_lo_.resize(nl);
    c_hi_.resize(nl);
    c_eq_.resize(nl);
    for (int u = 0; u < nl; ++u) {
      const double L = std::min(plant_.L_max, geo_.L(u));
      H_[u] = output(plant_, L);
      const auto [lo, hi] = control_bounds(plant_, L);
      c_lo_[u] = lo;
      c_hi_[u] = hi;
      const double rad = (plant_.b0 - L) / plant_.b1;
      c_eq_[u] = rad >= 0.0 ? plant_.b2 - std::sqrt(rad) : -1.0;
    }
  }

  double drift_of(int u, double c) const { return plant_.eta * (equilibrium_curve(plant_, c) - geo_.L(u)); }

  double edge_velocity(int u, double a) const {
    if (u == geo_.nl - 1 && a > 0.0) return 0.0;
    if (u == 0 && a < 0.0) return 0.0;
    return a;
  }

  bool interior_e(int i) const { return i > 0 && i < geo_.ne - 1; }
  bool interior_g(int j) const { return !geo_.gas_collapsed && j > 0 && j < geo_.ng - 1; }

  void require_interior(int i, int j, const char* who) const {
    if (!interior_e(i) || (!geo_.gas_collapsed && !interior_g(j)))
      throw DomainError(std::string(who) + ": node is not an interior price node");
  }

  Drifts drifts(int n, int l) const {
    const auto& p = model_.regimes[l];
    const double t = calendar_time(n);
    Drifts d;
    d.base_e = effective_drift(p, 0.0, t, Commodity::Electricity, model_.drift_convention);
    d.alpha_e = p.alpha_e;
    if (!geo_.gas_collapsed) {
      d.base_g = effective_drift(p, 0.0, t, Commodity::Gas, model_.drift_convention);
      d.alpha_g = p.alpha_g;
    }
    return d;
  }

  /// Price-space diffusion and drift plus -rV; edges drop the second-order
  /// terms normal to them and use inward one-sided drift differences.
  double price_terms(const Lattice& V, int l, int i, int j, int u, const Drifts& d) const {
    const auto& p = model_.regimes[l];
    const std::size_t se = static_cast<std::size_t>(geo_.ng) * geo_.nl;
    const std::size_t sg = static_cast<std::size_t>(geo_.nl);
    const double* v = V.values.data() + geo_.index(l, i, j, u);
    const double v0 = v[0];
    double r = -model_.discount_rate * v0;

    const double mue = d.base_e - d.alpha_e * geo_.S_e(i);
    const bool ie = interior_e(i);
    if (ie) {
      r += 0.5 * p.sigma_e * p.sigma_e * (v[se] - 2.0 * v0 + v[-static_cast<std::ptrdiff_t>(se)]) / (geo_.dSe * geo_.dSe);
      r += mue >= 0.0 ? mue * (v[se] - v0) / geo_.dSe : mue * (v0 - v[-static_cast<std::ptrdiff_t>(se)]) / geo_.dSe;
    } else if (i == 0) {
      r += mue * (v[se] - v0) / geo_.dSe;
    } else {
      r += mue * (v0 - v[-static_cast<std::ptrdiff_t>(se)]) / geo_.dSe;
    }
    if (geo_.gas_collapsed) return r;

    const double mug = d.base_g - d.alpha_g * geo_.S_g(j);
    const bool ig = interior_g(j);
    const std::ptrdiff_t msg = -static_cast<std::ptrdiff_t>(sg);
    if (ig) {
      r += 0.5 * p.sigma_g * p.sigma_g * (v[sg] - 2.0 * v0 + v[msg]) / (geo_.dSg * geo_.dSg);
      r += mug >= 0.0 ? mug * (v[sg] - v0) / geo_.dSg : mug * (v0 - v[msg]) / geo_.dSg;
    } else if (j == 0) {
      r += mug * (v[sg] - v0) / geo_.dSg;
    } else {
      r += mug * (v0 - v[msg]) / geo_.dSg;
    }

    if (ie && ig && p.rho != 0.0) {
      const std::ptrdiff_t mse = -static_cast<std::ptrdiff_t>(se);
      const double k = std::abs(p.rho) * p.sigma_e * p.sigma_g / (2.0 * geo_.dSe * geo_.dSg);
      const double axis = v[se] + v[mse] + v[sg] + v[msg];
      if (p.rho > 0.0) {
        r += k * (2.0 * v0 + v[se + sg] + v[mse + msg] - axis);
      } else {
        r += k * (2.0 * v0 + v[se + msg] + v[mse + sg] - axis);
      }
    }
    return r;
  }

  /// sum_{k=0}^{K} nu_k V(q + k) along one axis, linearly extrapolated
  /// beyond the last node.
  static double shifted_sum(const double* v, std::ptrdiff_t stride, int last, int q, const std::vector<double>& nu,
                            const std::vector<double>& p0, const std::vector<double>& p1) {
    const int K = static_cast<int>(nu.size()) - 1;
    const int kdirect = std::min(K, last - q);
    double s = 0.0;
    for (int k = 0; k <= kdirect; ++k) s += nu[k] * v[(q + k) * stride];
    if (kdirect < K) {
      const double vN = v[last * stride];
      const double slope = vN - v[(last - 1) * stride];
      const double m0 = p0[K + 1] - p0[kdirect + 1];
      const double m1 = p1[K + 1] - p1[kdirect + 1];
      // V(q + k) = vN + (q + k - last) slope for q + k > last
      s += vN * m0 + slope * ((q - last) * m0 + m1);
    }
    return s;
  }

  double jump_e(const Lattice& V, int l, int i, int j, int u) const {
    const auto& R = regimes_[l];
    if (R.pre0_e.back() == 0.0) return 0.0;
    const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(geo_.ng) * geo_.nl;
    const double* base = V.values.data() + geo_.index(l, 0, j, u);
    const int last = geo_.ne - 1;
    return (shifted_sum(base, stride, last, i + 1, R.nu_e, R.pre0_e, R.pre1_e) -
            shifted_sum(base, stride, last, i - 1, R.nu_e, R.pre0_e, R.pre1_e)) /
           (2.0 * geo_.dSe);
  }

  double jump_g(const Lattice& V, int l, int i, int j, int u) const {
    const auto& R = regimes_[l];
    if (R.pre0_g.back() == 0.0) return 0.0;
    const std::ptrdiff_t stride = geo_.nl;
    const double* base = V.values.data() + geo_.index(l, i, 0, u);
    const int last = geo_.ng - 1;
    return (shifted_sum(base, stride, last, j + 1, R.nu_g, R.pre0_g, R.pre1_g) -
            shifted_sum(base, stride, last, j - 1, R.nu_g, R.pre0_g, R.pre1_g)) /
           (2.0 * geo_.dSg);
  }

  double coupling(const Lattice& V, int l, int i, int j, int u) const {
    if (geo_.regimes < 2) return 0.0;
    const double lam = model_.regimes[l].switch_rate;
    if (lam == 0.0) return 0.0;
    return lam * (V.at(1 - l, i, j, u) - V.at(l, i, j, u));
  }

  /// Bilinear extension of V beyond the upper price edges.
  double extended(const Lattice& V, int l, int p, int q, int u) const {
    const int Ne = geo_.ne - 1, Ng = geo_.ng - 1;
    auto along_g = [&](int pp) {
      if (q <= Ng) return V.at(l, pp, q, u);
      const double vN = V.at(l, pp, Ng, u);
      return vN + (q - Ng) * (vN - V.at(l, pp, Ng - 1, u));
    };
    if (p <= Ne) return along_g(p);
    const double vN = along_g(Ne);
    return vN + (p - Ne) * (vN - along_g(Ne - 1));
  }

  /// C(p, q, u) = sum W(k1, k2) Vext(p + k1, q + k2, u) for p <= N_e, q <= N_g.
  std::vector<double> correlate(const Lattice& V, int l) const {
    const auto& W = regimes_[l].W;
    const int Ne = geo_.ne - 1, Ng = geo_.ng - 1, nl = geo_.nl;
    const int pe = Ne + jumps_.K_e + 1, pg = Ng + jumps_.K_g + 1;
    std::vector<double> ext(static_cast<std::size_t>(pe) * pg * nl);
    auto E = [&](int p, int q) { return ext.data() + (static_cast<std::size_t>(p) * pg + q) * nl; };
    for (int p = 0; p <= Ne; ++p) {
      for (int q = 0; q <= Ng; ++q) {
        const double* src = V.values.data() + geo_.index(l, p, q, 0);
        std::copy(src, src + nl, E(p, q));
      }
      for (int q = Ng + 1; q < pg; ++q) {
        const double* a = E(p, Ng);
        const double* b = E(p, Ng - 1);
        double* d = E(p, q);
        for (int u = 0; u < nl; ++u) d[u] = a[u] + (q - Ng) * (a[u] - b[u]);
      }
    }
    for (int p = Ne + 1; p < pe; ++p)
      for (int q = 0; q < pg; ++q) {
        const double* a = E(Ne, q);
        const double* b = E(Ne - 1, q);
        double* d = E(p, q);
        for (int u = 0; u < nl; ++u) d[u] = a[u] + (p - Ne) * (a[u] - b[u]);
      }

    const std::size_t row = static_cast<std::size_t>(Ng + 1) * nl;
    std::vector<double> C(static_cast<std::size_t>(Ne + 1) * row, 0.0);
    for (int k1 = 0; k1 <= jumps_.K_e; ++k1)
      for (int k2 = 0; k2 <= jumps_.K_g; ++k2) {
        const double w = W(k1, k2);
        if (w == 0.0) continue;
        for (int p = 0; p <= Ne; ++p) {
          const double* src = E(p + k1, k2);
          double* dst = C.data() + static_cast<std::size_t>(p) * row;
          for (std::size_t m = 0; m < row; ++m) dst[m] += w * src[m];
        }
      }
    return C;
  }

  double cross_from(const std::vector<double>& C, int i, int j, int u) const {
    const std::size_t row = static_cast<std::size_t>(geo_.ng) * geo_.nl;
    auto at = [&](int p, int q) { return C[static_cast<std::size_t>(p) * row + static_cast<std::size_t>(q) * geo_.nl + u]; };
    return (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1)) / (4.0 * geo_.dSe * geo_.dSg);
  }

  /// Argmax of H S_e - S_g c + a(c) D_L V over the admissible range, D_L V
  /// forward where a >= 0 and backward where a < 0. The objective is a
  /// continuous quadratic on each side of the junction c_eq (a = 0), so the
  /// best of the N_c uniform candidates sits next to an endpoint, the
  /// junction or a stationary point; only those grid points are evaluated,
  /// together with the continuous candidates themselves. Ties go to smaller c.
  ControlChoice choose(const double* col, int i, int j, int u) const {
    const int nl = geo_.nl;
    const double Dp = u < nl - 1 ? (col[u + 1] - col[u]) / geo_.dL : 0.0;
    const double Dm = u > 0 ? (col[u] - col[u - 1]) / geo_.dL : 0.0;
    const double Sg = geo_.S_g(j);
    const double lo = c_lo_[u], hi = c_hi_[u];
    const int last = grid_.N_c - 1;

    double best = -std::numeric_limits<double>::infinity();
    double best_c = hi;
    auto consider = [&](double c) {
      const double a = drift_of(u, c);
      const double v = a * (a >= 0.0 ? Dp : Dm) - Sg * c;
      if (v > best || (v == best && c < best_c)) {
        best = v;
        best_c = c;
      }
    };
    auto grid_point = [&](long m) { return lo + (hi - lo) * static_cast<double>(m) / last; };
    auto around = [&](double x) {
      if (!(hi > lo)) return;
      const long m = static_cast<long>(std::floor((x - lo) / (hi - lo) * last));
      for (long k = m - 1; k <= m + 2; ++k)
        if (k >= 0 && k <= last) consider(grid_point(k));
    };

    consider(lo);
    consider(hi);
    const double ceq = c_eq_[u];
    if (ceq > lo && ceq < hi) {
      consider(ceq);
      around(ceq);
    }
    const double k = 2.0 * plant_.eta * plant_.b1;
    if (Dp > 0.0) {
      const double c = plant_.b2 - Sg / (k * Dp);
      if (c >= std::max(lo, ceq) && c <= hi) {
        consider(c);
        around(c);
      }
    }
    if (Dm > 0.0) {
      const double c = plant_.b2 - Sg / (k * Dm);
      if (c >= lo && c <= hi && c < ceq) {
        consider(c);
        around(c);
      }
    }
    return {best_c, H_[u] * geo_.S_e(i) + best};
  }
};

struct ValueSnapshot {
  double tau = 0.0;  // time to horizon at the stored grid level
  int step = 0;
  Lattice lattice;
};

struct SolveResult {
  Geometry geo;
  JumpGrid jumps;
  double delta_tau = 0.0;
  double delta_tau_max = 0.0;
  int steps = 0;
  double wall_seconds = 0.0;
  std::vector<ValueSnapshot> values;
  PolicySurface policy;
};

/// Marches V from the zero terminal condition over tau in [0, T] and stores
/// value and policy at the grid levels nearest to the requested taus.
inline SolveResult solve(const Engine& engine, std::vector<double> snapshot_taus, int threads = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  const double T = engine.model().horizon;
  if (snapshot_taus.empty()) snapshot_taus.push_back(T);
  std::vector<int> wanted;
  for (double tau : snapshot_taus) {
    if (!(tau >= 0.0 && tau <= T)) throw DomainError("solve: snapshot times must lie in [0, T]");
    wanted.push_back(static_cast<int>(std::lround(tau / engine.delta_tau())));
  }
  for (int& n : wanted) n = std::clamp(n, 0, engine.steps());
  std::sort(wanted.begin(), wanted.end());
  wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());

  SolveResult res;
  res.geo = engine.geometry();
  res.jumps = engine.jump_grid();
  res.delta_tau = engine.delta_tau();
  res.delta_tau_max = engine.delta_tau_max();
  res.steps = engine.steps();
  res.policy.geo = res.geo;

  Lattice cur(res.geo), next(res.geo);
  std::vector<double> pol;
  std::size_t w = 0;
  for (int n = 0; n <= engine.steps(); ++n) {
    const bool store = w < wanted.size() && wanted[w] == n;
    if (n < engine.steps()) {
      engine.step(cur, next, store ? &pol : nullptr, threads);
    } else if (store) {
      pol = engine.policy_of(cur, threads);
    }
    if (store) {
      res.values.push_back({n * engine.delta_tau(), n, cur});
      res.policy.taus.push_back(n * engine.delta_tau());
      res.policy.steps.push_back(n);
      res.policy.controls.push_back(pol);
      ++w;
    }
    if (n < engine.steps()) std::swap(cur, next);
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline SolveResult solve(const ModelSpec& model, const PlantSpec& plant, const CopulaSpec& copula,
                         const GridSpec& grid, std::vector<double> snapshot_taus, int threads = 1) {
  return solve(Engine(model, plant, copula, grid), std::move(snapshot_taus), threads);
}

/// Counts nodes where V decreases in S_e or increases in S_g by more than tol.
struct MonotonicityReport {
  long checked = 0;
  long violations_e = 0;
  long violations_g = 0;
};

inline MonotonicityReport check_monotonicity(const Lattice& V, double tol = 0.0) {
  const auto& g = V.geo;
  MonotonicityReport rep;
  for (int l = 0; l < g.regimes; ++l)
    for (int i = 0; i < g.ne; ++i)
      for (int j = 0; j < g.ng; ++j)
        for (int u = 0; u < g.nl; ++u) {
          ++rep.checked;
          if (i + 1 < g.ne && V.at(l, i + 1, j, u) < V.at(l, i, j, u) - tol) ++rep.violations_e;
          if (j + 1 < g.ng && V.at(l, i, j + 1, u) > V.at(l, i, j, u) + tol) ++rep.violations_g;
        }
  return rep;
}

}  // namespace plantopt
