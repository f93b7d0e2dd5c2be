#pragma once

// Run configuration (TOML), orchestration of the solve / validate / simulate
// modes, CSV + JSON export and matplotlib plot scripts.
//
// Config layout (every key optional unless noted, unknown keys are errors):
//
//   [model]            horizon, discount_rate, drift_convention
//   [[model.regime]]   alpha_e alpha_g sigma_e sigma_g rho switch_rate
//     [model.regime.jump_e|jump_g]         intensity, distribution =
//         "none" | "inverse_gaussian" (mean, shape) |
//         "truncated_normal" (mean, sd) | "point_mass" (size)
//     [model.regime.seasonality_e|seasonality_g]
//         amplitude, phase | phase_over_pi, period, offset, shape = "sin"|"cos"
//   [plant]            PlantSpec fields
//   [copula]           family = "skewed_clayton" (theta, alpha, beta) |
//                      "independence" | "comonotone"
//   [grid]             S_e_max S_g_max N_e N_g N_L steps("auto"|int)
//                      B_e B_g K_e K_g N_c gas_price
//   [run]              mode snapshots outputs emit_plots threads
//   [plots]            S_g S_e L  (slice values)
//   [simulation]       step paths seed jump_mode regime S_e S_g L policy

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "plantopt/errors.hpp"
#include "plantopt/hjb_engine.hpp"
#include "plantopt/jump_dependence.hpp"
#include "plantopt/market_model.hpp"
#include "plantopt/plant_physics.hpp"
#include "plantopt/simulation_oracle.hpp"

namespace plantopt {

enum class RunMode { Solve, Validate, Simulate };

inline const char* to_string(RunMode m) {
  return m == RunMode::Solve ? "solve" : m == RunMode::Validate ? "validate" : "simulate";
}

struct PlotSlices {
  std::vector<double> S_g{0.0, 10.0, 14.0, 20.0};
  std::vector<double> S_e{0.0, 60.0, 150.0};
  std::vector<double> L{20.0, 300.0, 320.0, 420.0, 600.0};

  bool operator==(const PlotSlices&) const = default;
};

struct SimulationSpec {
  PathConfig paths;
  StartNode start;
  std::string policy;  // directory of a previous solve export

  bool operator==(const SimulationSpec& o) const {
    return paths.step == o.paths.step && paths.paths == o.paths.paths && paths.seed == o.paths.seed &&
           paths.mode == o.paths.mode && start.regime == o.start.regime && start.S_e == o.start.S_e &&
           start.S_g == o.start.S_g && start.L == o.start.L && policy == o.policy;
  }
};

struct RunConfig {
  ModelSpec model;
  PlantSpec plant;
  CopulaSpec copula = SkewedClayton{};
  GridSpec grid;
  std::vector<double> snapshots;  // empty: tau = T only
  std::string outputs = "out";
  bool emit_plots = false;
  RunMode mode = RunMode::Solve;
  int threads = 1;
  PlotSlices plots;
  SimulationSpec simulation;

  bool operator==(const RunConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Parsing

namespace config_detail {

inline int line_of(const toml::node& n) { return static_cast<int>(n.source().begin.line); }

inline void only_keys(const toml::table& t, std::initializer_list<std::string_view> allowed, const std::string& where) {
  for (auto&& [k, v] : t) {
    bool ok = false;
    for (auto a : allowed) ok = ok || k.str() == a;
    if (!ok) throw ConfigError("unknown key '" + std::string(k.str()) + "' in " + where, static_cast<int>(k.source().begin.line));
  }
}

inline double number(const toml::node& n, const std::string& key) {
  if (auto f = n.as_floating_point()) return f->get();
  if (auto i = n.as_integer()) return static_cast<double>(i->get());
  throw ConfigError(key + " must be a number", line_of(n));
}

inline void read(const toml::table& t, const char* key, double& out) {
  if (auto n = t.get(key)) out = number(*n, key);
}

inline void read(const toml::table& t, const char* key, int& out) {
  if (auto n = t.get(key)) {
    auto i = n->as_integer();
    if (!i) throw ConfigError(std::string(key) + " must be an integer", line_of(*n));
    if (i->get() < std::numeric_limits<int>::min() || i->get() > std::numeric_limits<int>::max())
      throw ConfigError(std::string(key) + " is out of range", line_of(*n));
    out = static_cast<int>(i->get());
  }
}

inline void read(const toml::table& t, const char* key, bool& out) {
  if (auto n = t.get(key)) {
    auto b = n->as_boolean();
    if (!b) throw ConfigError(std::string(key) + " must be true or false", line_of(*n));
    out = b->get();
  }
}

inline void read(const toml::table& t, const char* key, std::string& out) {
  if (auto n = t.get(key)) {
    auto s = n->as_string();
    if (!s) throw ConfigError(std::string(key) + " must be a string", line_of(*n));
    out = s->get();
  }
}

inline void read(const toml::table& t, const char* key, std::vector<double>& out) {
  if (auto n = t.get(key)) {
    auto a = n->as_array();
    if (!a) throw ConfigError(std::string(key) + " must be an array of numbers", line_of(*n));
    out.clear();
    for (auto&& e : *a) out.push_back(number(e, key));
  }
}

inline const toml::table* subtable(const toml::table& t, const char* key) {
  auto n = t.get(key);
  if (!n) return nullptr;
  auto s = n->as_table();
  if (!s) throw ConfigError(std::string(key) + " must be a table", line_of(*n));
  return s;
}

/// Rethrows spec-level failures with the line of the section that caused them.
template <class F>
void checked(int line, F&& f) {
  try {
    f();
  } catch (const SpecError& e) {
    throw ConfigError(e.what(), line);
  } catch (const DomainError& e) {
    throw ConfigError(e.what(), line);
  }
}

inline JumpSpec parse_jump(const toml::table& t, const std::string& where) {
  only_keys(t, {"intensity", "distribution", "mean", "shape", "sd", "size"}, where);
  JumpSpec j;
  std::string dist = "none";
  read(t, "distribution", dist);
  read(t, "intensity", j.intensity);
  auto need = [&](std::initializer_list<const char*> keys) {
    for (auto k : keys)
      if (!t.get(k)) throw ConfigError(where + ": distribution '" + dist + "' needs '" + k + "'", line_of(t));
    for (auto&& [k, v] : t) {
      const auto s = k.str();
      if (s == "intensity" || s == "distribution") continue;
      bool used = false;
      for (auto w : keys) used = used || s == w;
      if (!used) throw ConfigError(where + ": '" + std::string(s) + "' does not apply to '" + dist + "'", line_of(v));
    }
  };
  if (dist == "none") {
    need({});
    if (j.intensity != 0.0) throw ConfigError(where + ": distribution 'none' needs intensity 0", line_of(t));
    return JumpSpec::none();
  }
  if (dist == "inverse_gaussian") {
    need({"mean", "shape"});
    InverseGaussian d;
    read(t, "mean", d.mean);
    read(t, "shape", d.shape);
    j.size = d;
  } else if (dist == "truncated_normal") {
    need({"mean", "sd"});
    TruncatedNormal d;
    read(t, "mean", d.mean);
    read(t, "sd", d.sd);
    j.size = d;
  } else if (dist == "point_mass") {
    need({"size"});
    PointMass d;
    read(t, "size", d.size);
    j.size = d;
  } else {
    throw ConfigError(where + ": unknown distribution '" + dist + "'", line_of(*t.get("distribution")));
  }
  return j;
}

inline Seasonality parse_season(const toml::table& t, const std::string& where) {
  only_keys(t, {"amplitude", "phase", "phase_over_pi", "period", "offset", "shape"}, where);
  Seasonality f;
  read(t, "amplitude", f.amplitude);
  read(t, "period", f.period);
  read(t, "offset", f.offset);
  if (t.get("phase") && t.get("phase_over_pi"))
    throw ConfigError(where + ": give either phase or phase_over_pi", line_of(*t.get("phase_over_pi")));
  read(t, "phase", f.phase);
  if (t.get("phase_over_pi")) {
    double k = 0.0;
    read(t, "phase_over_pi", k);
    f.phase = k * std::numbers::pi;
  }
  std::string shape = "sin";
  read(t, "shape", shape);
  if (shape == "sin") f.shape = TrigShape::Sine;
  else if (shape == "cos") f.shape = TrigShape::Cosine;
  else throw ConfigError(where + ": shape must be \"sin\" or \"cos\"", line_of(*t.get("shape")));
  return f;
}

inline RegimeParams parse_regime(const toml::table& t, int index) {
  const std::string where = "model.regime[" + std::to_string(index) + "]";
  only_keys(t, {"alpha_e", "alpha_g", "sigma_e", "sigma_g", "rho", "switch_rate", "jump_e", "jump_g", "seasonality_e", "seasonality_g"},
            where);
  RegimeParams p;
  read(t, "alpha_e", p.alpha_e);
  read(t, "alpha_g", p.alpha_g);
  read(t, "sigma_e", p.sigma_e);
  read(t, "sigma_g", p.sigma_g);
  read(t, "rho", p.rho);
  read(t, "switch_rate", p.switch_rate);
  if (auto s = subtable(t, "jump_e")) p.jump_e = parse_jump(*s, where + ".jump_e");
  if (auto s = subtable(t, "jump_g")) p.jump_g = parse_jump(*s, where + ".jump_g");
  if (auto s = subtable(t, "seasonality_e")) p.seasonality_e = parse_season(*s, where + ".seasonality_e");
  if (auto s = subtable(t, "seasonality_g")) p.seasonality_g = parse_season(*s, where + ".seasonality_g");
  checked(line_of(t), [&] { validate(p); });
  return p;
}

inline JumpMode parse_jump_mode(const std::string& s, int line) {
  if (s == "none") return JumpMode::None;
  if (s == "independent") return JumpMode::Independent;
  if (s == "comonotone") return JumpMode::Comonotone;
  throw ConfigError("jump_mode must be none, independent or comonotone", line);
}

}  // namespace config_detail

inline RunMode parse_run_mode(const std::string& s, int line = 0) {
  if (s == "solve") return RunMode::Solve;
  if (s == "validate") return RunMode::Validate;
  if (s == "simulate") return RunMode::Simulate;
  throw ConfigError("mode must be solve, validate or simulate", line);
}

/// Parses and fully validates a run configuration.
inline RunConfig parse_config(std::string_view text) {
  using namespace config_detail;
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string(e.description()), static_cast<int>(e.source().begin.line));
  }
  only_keys(root, {"model", "plant", "copula", "grid", "run", "plots", "simulation"}, "the top level");
  RunConfig cfg;

  const toml::table* model = subtable(root, "model");
  if (!model) throw ConfigError("missing [model] section", 1);
  only_keys(*model, {"horizon", "discount_rate", "drift_convention", "regime"}, "[model]");
  read(*model, "horizon", cfg.model.horizon);
  read(*model, "discount_rate", cfg.model.discount_rate);
  std::string conv = to_string(DriftConvention::Compensated);
  read(*model, "drift_convention", conv);
  if (conv == to_string(DriftConvention::Compensated)) cfg.model.drift_convention = DriftConvention::Compensated;
  else if (conv == to_string(DriftConvention::Literal)) cfg.model.drift_convention = DriftConvention::Literal;
  else throw ConfigError("drift_convention must be \"compensation-consistent\" or \"literal\"", line_of(*model->get("drift_convention")));
  auto regimes = model->get("regime");
  if (!regimes || !regimes->is_array_of_tables()) throw ConfigError("[model] needs one or two [[model.regime]] tables", line_of(*model));
  int idx = 0;
  for (auto&& r : *regimes->as_array()) cfg.model.regimes.push_back(parse_regime(*r.as_table(), idx++));
  checked(line_of(*model), [&] { validate(cfg.model); });

  if (auto t = subtable(root, "plant")) {
    only_keys(*t, {"L_min", "L_max", "L_gen", "output_slope", "output_intercept", "b0", "b1", "b2", "eta", "c_abs_max", "ramp_limit"},
              "[plant]");
    auto& p = cfg.plant;
    read(*t, "L_min", p.L_min);
    read(*t, "L_max", p.L_max);
    read(*t, "L_gen", p.L_gen);
    read(*t, "output_slope", p.output_slope);
    read(*t, "output_intercept", p.output_intercept);
    read(*t, "b0", p.b0);
    read(*t, "b1", p.b1);
    read(*t, "b2", p.b2);
    read(*t, "eta", p.eta);
    read(*t, "c_abs_max", p.c_abs_max);
    read(*t, "ramp_limit", p.ramp_limit);
    checked(line_of(*t), [&] { validate(p); });
  }

  if (auto t = subtable(root, "copula")) {
    std::string family = "skewed_clayton";
    read(*t, "family", family);
    if (family == "skewed_clayton") {
      only_keys(*t, {"family", "theta", "alpha", "beta"}, "[copula]");
      SkewedClayton c;
      read(*t, "theta", c.theta);
      read(*t, "alpha", c.alpha);
      read(*t, "beta", c.beta);
      cfg.copula = c;
    } else if (family == "independence") {
      only_keys(*t, {"family"}, "[copula]");
      cfg.copula = Independence{};
    } else if (family == "comonotone") {
      only_keys(*t, {"family"}, "[copula]");
      cfg.copula = Comonotone{};
    } else {
      throw ConfigError("copula family must be skewed_clayton, independence or comonotone", line_of(*t->get("family")));
    }
    checked(line_of(*t), [&] { validate(cfg.copula); });
  }

  int grid_line = 1;
  if (auto t = subtable(root, "grid")) {
    grid_line = line_of(*t);
    only_keys(*t, {"S_e_max", "S_g_max", "N_e", "N_g", "N_L", "steps", "B_e", "B_g", "K_e", "K_g", "N_c", "gas_price"}, "[grid]");
    auto& g = cfg.grid;
    read(*t, "S_e_max", g.S_e_max);
    read(*t, "S_g_max", g.S_g_max);
    read(*t, "N_e", g.N_e);
    read(*t, "N_g", g.N_g);
    read(*t, "N_L", g.N_L);
    read(*t, "B_e", g.B_e);
    read(*t, "B_g", g.B_g);
    read(*t, "K_e", g.K_e);
    read(*t, "K_g", g.K_g);
    read(*t, "N_c", g.N_c);
    if (auto n = t->get("steps")) {
      if (auto s = n->as_string(); s && s->get() == "auto") g.M = 0;
      else if (auto i = n->as_integer(); i && i->get() > 0 && i->get() <= std::numeric_limits<int>::max()) g.M = static_cast<int>(i->get());
      else throw ConfigError("steps must be \"auto\" or a positive integer", line_of(*n));
    }
    if (auto n = t->get("gas_price")) g.gas_price = number(*n, "gas_price");
  }
  checked(grid_line, [&] {
    const Geometry geo = make_geometry(cfg.model, cfg.plant, cfg.grid);
    resolve_jump_grid(cfg.model, cfg.grid, geo);
  });

  if (auto t = subtable(root, "run")) {
    only_keys(*t, {"mode", "snapshots", "outputs", "emit_plots", "threads"}, "[run]");
    std::string mode = "solve";
    read(*t, "mode", mode);
    cfg.mode = parse_run_mode(mode, t->get("mode") ? line_of(*t->get("mode")) : line_of(*t));
    read(*t, "snapshots", cfg.snapshots);
    read(*t, "outputs", cfg.outputs);
    read(*t, "emit_plots", cfg.emit_plots);
    read(*t, "threads", cfg.threads);
    for (double tau : cfg.snapshots)
      if (!(tau >= 0.0 && tau <= cfg.model.horizon))
        throw ConfigError("snapshot tau must lie in [0, horizon]", line_of(*t->get("snapshots")));
    if (cfg.threads < 1) throw ConfigError("threads must be >= 1", line_of(*t->get("threads")));
  }

  if (auto t = subtable(root, "plots")) {
    only_keys(*t, {"S_g", "S_e", "L"}, "[plots]");
    read(*t, "S_g", cfg.plots.S_g);
    read(*t, "S_e", cfg.plots.S_e);
    read(*t, "L", cfg.plots.L);
  }

  if (auto t = subtable(root, "simulation")) {
    only_keys(*t, {"step", "paths", "seed", "jump_mode", "regime", "S_e", "S_g", "L", "policy"}, "[simulation]");
    auto& s = cfg.simulation;
    read(*t, "step", s.paths.step);
    read(*t, "paths", s.paths.paths);
    if (auto n = t->get("seed")) {
      auto i = n->as_integer();
      if (!i || i->get() < 0) throw ConfigError("seed must be a non-negative integer", line_of(*n));
      s.paths.seed = static_cast<std::uint64_t>(i->get());
    }
    std::string jm = to_string(s.paths.mode);
    read(*t, "jump_mode", jm);
    s.paths.mode = parse_jump_mode(jm, t->get("jump_mode") ? line_of(*t->get("jump_mode")) : line_of(*t));
    read(*t, "regime", s.start.regime);
    read(*t, "S_e", s.start.S_e);
    read(*t, "S_g", s.start.S_g);
    read(*t, "L", s.start.L);
    read(*t, "policy", s.policy);
    checked(line_of(*t), [&] {
      validate(s.paths);
      if (s.start.regime < 0 || s.start.regime >= cfg.model.regime_count()) throw SpecError("simulation: regime out of range");
      if (s.start.L < cfg.plant.L_min || s.start.L > cfg.plant.L_max) throw SpecError("simulation: L outside the plant range");
    });
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Emitting

namespace config_detail {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";  // keep floats floats
  return s;
}

inline std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + num(v[k]);
  return s + "]";
}

inline std::string quoted(const std::string& s) {
  std::ostringstream os;
  os << toml::value<std::string>(s);  // toml++ handles the escaping
  return os.str();
}

inline void emit_jump(std::ostream& os, const JumpSpec& j) {
  os << "intensity = " << num(j.intensity) << "\n";
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, InverseGaussian>)
          os << "distribution = \"inverse_gaussian\"\nmean = " << num(d.mean) << "\nshape = " << num(d.shape) << "\n";
        else if constexpr (std::is_same_v<T, TruncatedNormal>)
          os << "distribution = \"truncated_normal\"\nmean = " << num(d.mean) << "\nsd = " << num(d.sd) << "\n";
        else
          os << "distribution = \"point_mass\"\nsize = " << num(d.size) << "\n";
      },
      j.size);
}

inline void emit_season(std::ostream& os, const Seasonality& f) {
  os << "amplitude = " << num(f.amplitude) << "\nphase = " << num(f.phase) << "\nperiod = " << num(f.period)
     << "\noffset = " << num(f.offset) << "\nshape = \"" << (f.shape == TrigShape::Sine ? "sin" : "cos") << "\"\n";
}

}  // namespace config_detail

/// TOML text that parses back to `cfg` exactly.
inline std::string emit_config(const RunConfig& cfg) {
  using namespace config_detail;
  std::ostringstream os;
  os << "[model]\nhorizon = " << num(cfg.model.horizon) << "\ndiscount_rate = " << num(cfg.model.discount_rate)
     << "\ndrift_convention = \"" << to_string(cfg.model.drift_convention) << "\"\n";
  for (const auto& p : cfg.model.regimes) {
    os << "\n[[model.regime]]\nalpha_e = " << num(p.alpha_e) << "\nalpha_g = " << num(p.alpha_g) << "\nsigma_e = " << num(p.sigma_e)
       << "\nsigma_g = " << num(p.sigma_g) << "\nrho = " << num(p.rho) << "\nswitch_rate = " << num(p.switch_rate) << "\n";
    // JumpSpec::none() carries a default size law; write it out so the
    // round trip is exact.
    os << "\n[model.regime.jump_e]\n";
    emit_jump(os, p.jump_e);
    os << "\n[model.regime.jump_g]\n";
    emit_jump(os, p.jump_g);
    os << "\n[model.regime.seasonality_e]\n";
    emit_season(os, p.seasonality_e);
    os << "\n[model.regime.seasonality_g]\n";
    emit_season(os, p.seasonality_g);
  }
  const auto& pl = cfg.plant;
  os << "\n[plant]\nL_min = " << num(pl.L_min) << "\nL_max = " << num(pl.L_max) << "\nL_gen = " << num(pl.L_gen)
     << "\noutput_slope = " << num(pl.output_slope) << "\noutput_intercept = " << num(pl.output_intercept) << "\nb0 = " << num(pl.b0)
     << "\nb1 = " << num(pl.b1) << "\nb2 = " << num(pl.b2) << "\neta = " << num(pl.eta) << "\nc_abs_max = " << num(pl.c_abs_max)
     << "\nramp_limit = " << num(pl.ramp_limit) << "\n";
  os << "\n[copula]\n";
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, SkewedClayton>)
          os << "family = \"skewed_clayton\"\ntheta = " << num(c.theta) << "\nalpha = " << num(c.alpha) << "\nbeta = " << num(c.beta) << "\n";
        else if constexpr (std::is_same_v<T, Independence>)
          os << "family = \"independence\"\n";
        else
          os << "family = \"comonotone\"\n";
      },
      cfg.copula);
  const auto& g = cfg.grid;
  os << "\n[grid]\nS_e_max = " << num(g.S_e_max) << "\nS_g_max = " << num(g.S_g_max) << "\nN_e = " << g.N_e << "\nN_g = " << g.N_g
     << "\nN_L = " << g.N_L << "\nsteps = ";
  if (g.M == 0) os << "\"auto\"";
  else os << g.M;
  os << "\nB_e = " << num(g.B_e) << "\nB_g = " << num(g.B_g) << "\nK_e = " << g.K_e << "\nK_g = " << g.K_g << "\nN_c = " << g.N_c << "\n";
  if (g.gas_price) os << "gas_price = " << num(*g.gas_price) << "\n";
  os << "\n[run]\nmode = \"" << to_string(cfg.mode) << "\"\nsnapshots = " << list(cfg.snapshots) << "\noutputs = " << quoted(cfg.outputs)
     << "\nemit_plots = " << (cfg.emit_plots ? "true" : "false") << "\nthreads = " << cfg.threads << "\n";
  os << "\n[plots]\nS_g = " << list(cfg.plots.S_g) << "\nS_e = " << list(cfg.plots.S_e) << "\nL = " << list(cfg.plots.L) << "\n";
  const auto& s = cfg.simulation;
  os << "\n[simulation]\nstep = " << num(s.paths.step) << "\npaths = " << s.paths.paths << "\nseed = " << s.paths.seed
     << "\njump_mode = \"" << to_string(s.paths.mode) << "\"\nregime = " << s.start.regime << "\nS_e = " << num(s.start.S_e)
     << "\nS_g = " << num(s.start.S_g) << "\nL = " << num(s.start.L) << "\npolicy = " << quoted(s.policy) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Export

/// FNV-1a over the geometry and horizon; identifies compatible policy files.
inline std::string grid_hash(const Geometry& g, double horizon) {
  std::ostringstream os;
  os.precision(17);
  os << g.regimes << ';' << g.ne << ';' << g.ng << ';' << g.nl << ';' << g.dSe << ';' << g.dSg << ';' << g.dL << ';' << g.L_min << ';'
     << g.gas_collapsed << ';' << g.gas_price << ';' << horizon;
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : os.str()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

inline std::string csv_name(const char* kind, int regime, double tau) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s_r%d_tau%g.csv", kind, regime, tau);
  return buf;
}

namespace export_detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  return f;
}

inline void write_surface(const std::filesystem::path& p, const Geometry& g, int l, const std::vector<double>& data, const char* column) {
  auto f = open_out(p);
  f << "S_e,S_g,L," << column << "\n";
  char buf[160];
  for (int i = 0; i < g.ne; ++i)
    for (int j = 0; j < g.ng; ++j)
      for (int u = 0; u < g.nl; ++u) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g\n", g.S_e(i), g.S_g(j), g.L(u), data[g.index(l, i, j, u)]);
        f << buf;
      }
  if (!f) throw IoError("write failed: " + p.string());
}

}  // namespace export_detail

/// Writes one CSV per (regime, snapshot, kind) plus metadata.json; returns
/// the metadata document.
inline nlohmann::json export_surfaces(const RunConfig& cfg, const SolveResult& res, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const Geometry& g = res.geo;

  // controls are re-checked against the ramp window before they leave
  for (const auto& c : res.policy.controls)
    for (int l = 0; l < g.regimes; ++l)
      for (int i = 0; i < g.ne; ++i)
        for (int j = 0; j < g.ng; ++j)
          for (int u = 0; u < g.nl; ++u) {
            const auto [lo, hi] = control_bounds(cfg.plant, std::min(cfg.plant.L_max, g.L(u)));
            const double v = c[g.index(l, i, j, u)];
            if (!(v >= lo - 1e-9 && v <= hi + 1e-9)) throw NumericalError("exported control outside its ramp window");
          }

  nlohmann::json meta;
  meta["config"] = emit_config(cfg);
  meta["geometry"] = {{"regimes", g.regimes}, {"N_e", g.ne - 1}, {"N_g", g.ng - 1}, {"N_L", g.nl - 1}, {"dS_e", g.dSe},
                      {"dS_g", g.dSg},        {"dL", g.dL},        {"L_min", g.L_min}, {"gas_collapsed", g.gas_collapsed},
                      {"gas_price", g.gas_price}};
  meta["jump_grid"] = {{"K_e", res.jumps.K_e}, {"K_g", res.jumps.K_g}, {"B_e", res.jumps.B_e}, {"B_g", res.jumps.B_g}};
  meta["delta_tau"] = res.delta_tau;
  meta["delta_tau_max"] = res.delta_tau_max;
  meta["steps"] = res.steps;
  meta["wall_seconds"] = res.wall_seconds;
  meta["grid_hash"] = grid_hash(g, cfg.model.horizon);
  meta["drift_convention"] = to_string(cfg.model.drift_convention);
  nlohmann::json snaps = nlohmann::json::array();
  for (std::size_t s = 0; s < res.values.size(); ++s) {
    const double tau = res.values[s].tau;
    nlohmann::json files = {{"value", nlohmann::json::array()}, {"control", nlohmann::json::array()}};
    for (int l = 0; l < g.regimes; ++l) {
      const auto vname = csv_name("value", l, tau), cname = csv_name("control", l, tau);
      export_detail::write_surface(dir / vname, g, l, res.values[s].lattice.values, "value");
      export_detail::write_surface(dir / cname, g, l, res.policy.controls[s], "control");
      files["value"].push_back(vname);
      files["control"].push_back(cname);
    }
    snaps.push_back({{"tau", tau}, {"step", res.values[s].step}, {"files", files}});
  }
  meta["snapshots"] = snaps;
  auto f = export_detail::open_out(dir / "metadata.json");
  f << meta.dump(2) << "\n";
  if (!f) throw IoError("write failed: metadata.json");
  return meta;
}

/// Rebuilds the policy surface of an export made for geometry `g`.
inline PolicySurface load_policy(const std::filesystem::path& dir, const Geometry& g, double horizon) {
  std::ifstream mf(dir / "metadata.json");
  if (!mf) throw IoError("cannot read " + (dir / "metadata.json").string());
  nlohmann::json meta;
  try {
    mf >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("metadata.json: ") + e.what());
  }
  if (meta.value("grid_hash", std::string()) != grid_hash(g, horizon))
    throw ConfigError("policy grid hash " + meta.value("grid_hash", std::string("?")) + " does not match this configuration (" +
                      grid_hash(g, horizon) + ")");
  PolicySurface pol;
  pol.geo = g;
  for (const auto& s : meta.at("snapshots")) {
    pol.taus.push_back(s.at("tau").get<double>());
    pol.steps.push_back(s.at("step").get<int>());
    std::vector<double> c(g.size());
    for (int l = 0; l < g.regimes; ++l) {
      const auto path = dir / s.at("files").at("control").at(static_cast<std::size_t>(l)).get<std::string>();
      std::ifstream f(path);
      if (!f) throw IoError("cannot read " + path.string());
      std::string line;
      std::getline(f, line);
      std::size_t k = 0;
      const std::size_t plane = g.plane();
      while (std::getline(f, line)) {
        if (k >= plane) throw IoError(path.string() + ": too many rows");
        double se, sg, L, v;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &se, &sg, &L, &v) != 4) throw IoError(path.string() + ": bad row");
        c[static_cast<std::size_t>(l) * plane + k++] = v;
      }
      if (k != plane) throw IoError(path.string() + ": row count does not match the grid");
    }
    pol.controls.push_back(std::move(c));
  }
  return pol;
}

// ---------------------------------------------------------------------------
// Plot scripts

namespace plot_detail {

inline int nearest(double x, double h, int n) { return std::clamp(static_cast<int>(std::lround(x / h)), 0, n - 1); }

struct Slice {
  std::string fixed;  // column held fixed
  double value;
  std::string x, y;  // surface axes
};

inline std::string script(const std::vector<std::string>& csvs, const Slice& s, const std::string& stem) {
  std::ostringstream os;
  os << "import matplotlib\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\nimport numpy as np\nimport os\n\n"
     << "here = os.path.dirname(os.path.abspath(__file__))\n"
     << "cols = {\"S_e\": 0, \"S_g\": 1, \"L\": 2}\n\n"
     << "for name in " << "[";
  for (std::size_t k = 0; k < csvs.size(); ++k) os << (k ? ", " : "") << '"' << csvs[k] << '"';
  char val[40];
  std::snprintf(val, sizeof val, "%.9g", s.value);
  os << "]:\n"
     << "    data = np.genfromtxt(os.path.join(here, name), delimiter=\",\", names=True)\n"
     << "    kind = data.dtype.names[3]\n"
     << "    rows = data[np.isclose(data[\"" << s.fixed << "\"], " << val << ", rtol=0, atol=1e-6)]\n"
     << "    xs = np.unique(rows[\"" << s.x << "\"])\n"
     << "    ys = np.unique(rows[\"" << s.y << "\"])\n"
     << "    Z = np.full((ys.size, xs.size), np.nan)\n"
     << "    for r in rows:\n"
     << "        Z[np.searchsorted(ys, r[\"" << s.y << "\"]), np.searchsorted(xs, r[\"" << s.x << "\"])] = r[kind]\n"
     << "    X, Y = np.meshgrid(xs, ys)\n"
     << "    fig = plt.figure(figsize=(7, 5))\n"
     << "    ax = fig.add_subplot(projection=\"3d\")\n"
     << "    ax.plot_surface(X, Y, Z, cmap=\"viridis\")\n"
     << "    ax.set_xlabel(\"" << s.x << "\")\n"
     << "    ax.set_ylabel(\"" << s.y << "\")\n"
     << "    ax.set_zlabel(kind)\n"
     << "    ax.set_title(\"" << s.fixed << " = " << val << "\")\n"
     << "    fig.savefig(os.path.join(here, name[:-4] + \"_" << stem << ".png\"), dpi=120)\n"
     << "    plt.close(fig)\n";
  return os.str();
}

}  // namespace plot_detail

/// One script per requested slice, regime and snapshot; slices snap to the
/// nearest grid node. Returns the script file names.
inline std::vector<std::string> emit_plot_scripts(const RunConfig& cfg, const SolveResult& res, const std::filesystem::path& dir) {
  using plot_detail::Slice;
  const Geometry& g = res.geo;
  std::vector<Slice> slices;
  char buf[64];
  if (g.gas_collapsed) {
    slices.push_back({"S_g", g.gas_price, "S_e", "L"});
  } else {
    for (double v : cfg.plots.S_g) slices.push_back({"S_g", g.S_g(plot_detail::nearest(v, g.dSg, g.ng)), "S_e", "L"});
    for (double v : cfg.plots.S_e) slices.push_back({"S_e", g.S_e(plot_detail::nearest(v, g.dSe, g.ne)), "S_g", "L"});
    for (double v : cfg.plots.L) slices.push_back({"L", g.L(plot_detail::nearest(v - g.L_min, g.dL, g.nl)), "S_e", "S_g"});
  }
  std::vector<std::string> names;
  for (const auto& snap : res.values)
    for (int l = 0; l < g.regimes; ++l)
      for (const auto& s : slices) {
        std::snprintf(buf, sizeof buf, "%s%g", s.fixed.c_str(), s.value);
        const std::string stem = buf;
        std::snprintf(buf, sizeof buf, "plot_r%d_tau%g_%s.py", l, snap.tau, stem.c_str());
        const std::string name = buf;
        auto f = export_detail::open_out(dir / name);
        f << plot_detail::script({csv_name("value", l, snap.tau), csv_name("control", l, snap.tau)}, s, stem);
        if (!f) throw IoError("write failed: " + name);
        names.push_back(name);
      }
  return names;
}

// ---------------------------------------------------------------------------
// Validation suite

struct PropertyResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double tolerance = 0.0;
};

/// Post-solve properties of a configuration.
inline std::vector<PropertyResult> validate_properties(const RunConfig& cfg, const Engine& engine, const SolveResult& res) {
  std::vector<PropertyResult> out;
  const auto& V = res.values.back().lattice;
  const Geometry& g = res.geo;

  double worst = 0.0;
  bool finite = true;
  for (double v : V.values) {
    finite = finite && std::isfinite(v);
    worst = std::max(worst, std::abs(v));
  }
  out.push_back({"finite values below the payoff bound", finite && worst <= engine.payoff_bound(), worst, engine.payoff_bound()});

  double excess = 0.0;
  for (const auto& c : res.policy.controls)
    for (int l = 0; l < g.regimes; ++l)
      for (int i = 0; i < g.ne; ++i)
        for (int j = 0; j < g.ng; ++j)
          for (int u = 0; u < g.nl; ++u) {
            const auto [lo, hi] = engine.bounds(u);
            const double v = c[g.index(l, i, j, u)];
            excess = std::max({excess, lo - v, v - hi});
          }
  out.push_back({"policy inside the ramp window", excess <= 0.0, excess, 0.0});

  // TVD of the temperature transport under the final policy
  double tv_growth = 0.0;
  std::vector<double> col(static_cast<std::size_t>(g.nl)), a(col.size()), next(col.size());
  for (int l = 0; l < g.regimes; ++l)
    for (int i = 0; i < g.ne; ++i)
      for (int j = 0; j < g.ng; ++j) {
        for (int u = 0; u < g.nl; ++u) {
          col[static_cast<std::size_t>(u)] = V.at(l, i, j, u);
          a[static_cast<std::size_t>(u)] = engine.velocity(u, res.policy.controls.back()[g.index(l, i, j, u)]);
        }
        advection_update(col.data(), a.data(), g.nl, engine.delta_tau(), g.dL, next.data());
        tv_growth = std::max(tv_growth, total_variation(next) - total_variation(col));
      }
  out.push_back({"advection does not raise total variation", tv_growth <= 1e-12 * std::max(1.0, worst), tv_growth, 1e-12 * std::max(1.0, worst)});

  const auto mono = check_monotonicity(V, 1e-9 * std::max(1.0, worst));
  out.push_back({"value nondecreasing in S_e", mono.violations_e == 0, static_cast<double>(mono.violations_e), 0.0});
  out.push_back({"value nonincreasing in S_g", mono.violations_g == 0, static_cast<double>(mono.violations_g), 0.0});

  bool frozen = true;
  try {
    require_frozen_prices(cfg.model);
  } catch (const SpecError&) {
    frozen = false;
  }
  if (frozen) {
    double err = 0.0, scale = 0.0;
    for (int i = 0; i < g.ne; ++i)
      for (int j = 0; j < g.ng; ++j) {
        const auto curve = deterministic_curve(cfg.model, cfg.plant, g.S_e(i), g.S_g(j));
        for (int u = 0; u < g.nl; ++u) {
          const double dp = curve(std::min(cfg.plant.L_max, g.L(u)));
          err = std::max(err, std::abs(V.at(0, i, j, u) - dp));
          scale = std::max(scale, std::abs(dp));
        }
      }
    const double rel = scale > 0.0 ? err / scale : err;
    out.push_back({"matches the frozen-price dynamic program", rel <= 0.01, rel, 0.01});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failed = 1;  // validate found a failing property
inline constexpr int config = 2;
inline constexpr int numerical = 3;
inline constexpr int io = 4;
}  // namespace exit_code

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

inline int run(const RunConfig& cfg, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  namespace fs = std::filesystem;
  try {
    switch (cfg.mode) {
      case RunMode::Solve: {
        const Engine engine(cfg.model, cfg.plant, cfg.copula, cfg.grid);
        const auto res = solve(engine, cfg.snapshots, cfg.threads);
        const fs::path dir = cfg.outputs;
        export_surfaces(cfg, res, dir);
        std::size_t scripts = 0;
        if (cfg.emit_plots) scripts = emit_plot_scripts(cfg, res, dir).size();
        log << "solved " << res.steps << " steps of dtau " << res.delta_tau << " in " << res.wall_seconds << " s; wrote "
            << res.values.size() * 2 * static_cast<std::size_t>(res.geo.regimes) << " surfaces";
        if (scripts) log << " and " << scripts << " plot scripts";
        log << " to " << dir.string() << "\n";
        return exit_code::ok;
      }
      case RunMode::Validate: {
        const Engine engine(cfg.model, cfg.plant, cfg.copula, cfg.grid);
        const auto res = solve(engine, {cfg.model.horizon}, cfg.threads);
        bool all = true;
        for (const auto& p : validate_properties(cfg, engine, res)) {
          all = all && p.pass;
          log << (p.pass ? "PASS " : "FAIL ") << p.name << "  measured=" << p.measured << " tol=" << p.tolerance << "\n";
        }
        return all ? exit_code::ok : exit_code::failed;
      }
      case RunMode::Simulate: {
        if (cfg.simulation.policy.empty()) throw ConfigError("simulate needs [simulation] policy = <export directory>");
        const Geometry geo = make_geometry(cfg.model, cfg.plant, cfg.grid);
        const auto pol = load_policy(cfg.simulation.policy, geo, cfg.model.horizon);
        const auto est = evaluate_policy_mc(cfg.model, cfg.plant, pol, cfg.simulation.start, cfg.simulation.paths, cfg.threads);
        log << "value " << est.mean << " +- " << est.std_error << " (" << est.paths << " paths)\n";
        return exit_code::ok;
      }
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_code::config;
  } catch (const SpecError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_code::config;
  } catch (const DomainError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_code::config;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return exit_code::numerical;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return exit_code::io;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return exit_code::io;
  }
  return exit_code::ok;
}

}  // namespace plantopt
