#pragma once

// Scenario configs, runners and output writers behind the command-line tool.
// A run simulates, analyzes and pairs every extracted number with its
// analytic counterpart; outputs depend only on the resolved config.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fblab/io.hpp"
#include "fblab/pipelines.hpp"
#include "fblab/presets.hpp"

namespace fblab {

inline constexpr const char* kConfigSchema = "fblab/config/v1";
inline constexpr const char* kSummarySchema = "fblab/summary/v1";
inline constexpr const char* kModesSchema = "fblab/modes/v1";
inline constexpr std::uint64_t kDefaultSeed = 24301;

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> n = {"scan-detuning", "quench", "squeeze", "distance-scan", "kd-estimate", "sms"};
  return n;
}

// Numerical failure inside a pipeline, tagged with the module that raised it.
struct numerical_failure : std::runtime_error {
  numerical_failure(const std::string& module, const std::string& what)
      : std::runtime_error(module + ": " + what), module(module) {}
  std::string module;
};

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  unsigned threads = 1;
};

struct OutputPaths {
  std::string dir = "fblab-out";
  std::string psd = "psd.csv";
  std::string spectrogram = "spectrogram.csv";
  std::string modes = "modes.json";
  std::string correlations = "correlations.csv";
  std::string summary = "summary.json";
};

struct AnalysisSettings {
  double resolution_hz = 0.0;
  double fit_halfwidth_hz = 0.0;
  double max_lag_s = 0.0;
  int phase_bins = 36;
  std::vector<double> kd_pi;
  std::vector<double> delta_hz_grid;
  double f_lo_hz = 0.0, f_hi_hz = 0.0;
  double ridge_halfwidth_hz = 0.0;
  double gamma_fb_over_gamma = 10.0;
  double cooling_detuning_hz = 20e3;
  G2FitOptions g2;
  double tolerance = 0.1;
  double slope_tolerance = 0.05;
  double overlay_threshold = 0.99;
  bool coarse_grain = true;  // quench: compare means averaged over the 2 Delta_omega period
};

struct ScenarioConfig {
  std::string scenario;
  std::string preset;
  ModeParams params;
  ResonanceBranch branch;
  SimContext ctx;
  EnsembleSettings sim;
  AnalysisSettings analysis;
  OutputPaths output;
  ojson resolved;  // embedded in every JSON output
};

namespace detail {

inline ResonanceBranch parse_branch(const std::string& s) {
  if (s == "sum") return ResonanceBranch::sum();
  if (s == "single_mode_1") return ResonanceBranch::single_mode(1);
  if (s == "single_mode_2") return ResonanceBranch::single_mode(2);
  return ResonanceBranch::detuning();
}

inline const std::vector<std::string>& branch_names() {
  static const std::vector<std::string> n = {"detuning", "sum", "single_mode_1", "single_mode_2"};
  return n;
}

inline void set_occupations(ObjectReader& r, ModeParams& p, const std::string& occupation, double temperature) {
  if (occupation == "equal") {
    p.n1 = p.n2 = ModeParams::occupation(temperature, p.Omega_bar());
  } else {
    p.set_temperature(temperature);
  }
  const bool h1 = r.has("n1"), h2 = r.has("n2");
  if (h1 != h2) r.require(false, h1 ? "n2" : "n1", "n1 and n2 must be given together");
  if (h1) {
    p.n1 = r.number("n1");
    p.n2 = r.number("n2");
    r.require(p.n1 > 0.0, "n1", "must be positive");
    r.require(p.n2 > 0.0, "n2", "must be positive");
  } else {
    r.resolved["n1"] = p.n1;
    r.resolved["n2"] = p.n2;
  }
}

inline void read_params(const ojson* block, const std::optional<Preset>& pre, ScenarioConfig& c) {
  ObjectReader r(block, "/params");
  auto d = [&](auto f) { return pre ? std::optional<double>(f(*pre)) : std::nullopt; };
  ModeParams p;
  const double f1 = r.number("omega1_hz", d([](const Preset& q) { return q.omega1_hz; }));
  r.require(f1 > 0.0, "omega1_hz", "must be positive");
  const double f2 = r.number("omega2_hz", d([](const Preset& q) { return q.omega2_hz; }));
  r.require(f2 > 0.0, "omega2_hz", "must be positive");
  const double gam = r.number("gamma_hz", d([](const Preset& q) { return q.gamma_hz; }));
  r.require(gam > 0.0, "gamma_hz", "must be positive");
  const double g = r.number("g_hz", d([](const Preset& q) { return q.g_hz; }));
  r.require(g >= 0.0, "g_hz", "must be non-negative");
  const double kd = r.number("kd_pi", d([](const Preset& q) { return q.kd_pi; }));
  const std::string br = r.text("branch", pre ? std::optional<std::string>(pre->branch) : "detuning", branch_names());
  const double delta = r.number("delta_hz", pre ? pre->delta_hz : 0.0);
  p.Omega1 = hz_to_rad(f1);
  p.Omega2 = hz_to_rad(f2);
  p.gamma = hz_to_rad(gam);
  p.g = hz_to_rad(g);
  p.kd = kd * constants::pi;
  p.delta_phi = r.number("delta_phi_rad", 0.0);
  const double T = r.number("temperature_k", 295.0);
  r.require(T > 0.0, "temperature_k", "must be positive");
  const std::string occ = r.text("occupation", pre ? pre->occupation : "thermal", {"thermal", "equal"});
  set_occupations(r, p, occ, T);
  c.branch = parse_branch(br);
  p.delta_omega = delta_omega_for(p, c.branch, hz_to_rad(delta));
  r.finish();
  try {
    p.validate();
  } catch (const domain_error& e) {
    throw schema_error("/params", e.what());
  }
  c.params = p;
  c.ctx = SimContext{};
  c.resolved["params"] = r.resolved;
}

inline void read_physical(const ojson* block, ScenarioConfig& c) {
  ObjectReader r(block, "/physical");
  PhysicalConfig pc;
  pc.wavelength = r.number("wavelength_m", pc.wavelength);
  pc.rayleigh_length = r.number("rayleigh_length_m");  // no default: lens specific
  pc.radius = r.number("radius_m", pc.radius);
  pc.permittivity = r.number("permittivity", pc.permittivity);
  pc.density = r.number("density_kg_m3", pc.density);
  pc.polarization_angle = r.number("polarization_angle_rad", pc.polarization_angle);
  pc.field1 = r.number("field1_v_m", pc.field1);
  pc.field2 = r.number("field2_v_m", pc.field2);
  pc.separation = r.number("separation_m", pc.separation);
  pc.gamma = hz_to_rad(r.number("gamma_hz"));
  r.require(pc.gamma > 0.0, "gamma_hz", "must be positive");
  pc.temperature = r.number("temperature_k", pc.temperature);
  pc.phase1 = r.number("phase1_rad", 0.0);
  pc.phase2 = r.number("phase2_rad", 0.0);
  const double f1 = r.number("omega1_hz"), f2 = r.number("omega2_hz");
  const std::string br = r.text("branch", "detuning", branch_names());
  const double delta = r.number("delta_hz", 0.0);
  const std::string occ = r.text("occupation", "thermal", {"thermal", "equal"});
  ModeParams p;
  try {
    p = reduce(pc, hz_to_rad(f1), hz_to_rad(f2));
  } catch (const domain_error& e) {
    throw schema_error("/physical", e.what());
  }
  set_occupations(r, p, occ, pc.temperature);
  c.branch = parse_branch(br);
  p.delta_omega = delta_omega_for(p, c.branch, hz_to_rad(delta));
  r.finish();
  c.params = p;
  c.ctx = SimContext::from(pc);
  c.resolved["physical"] = r.resolved;
  ojson derived;
  derived["g_hz"] = rad_to_hz(p.g);
  derived["kd_pi"] = p.kd / constants::pi;
  derived["delta_phi_rad"] = p.delta_phi;
  derived["delta_omega_hz"] = rad_to_hz(p.delta_omega);
  derived["mass_kg"] = c.ctx.mass;
  c.resolved["derived"] = derived;
}

struct SimDefaults {
  double duration, burn_in;
  std::uint64_t n_traj;
};

inline SimDefaults sim_defaults(const std::string& scenario, double gamma) {
  if (scenario == "squeeze") return {50.0 / gamma, 40.0 / gamma, 100};
  if (scenario == "distance-scan") return {0.5, 10.0 / gamma, 20};
  if (scenario == "kd-estimate") return {0.25, 10.0 / gamma, 40};
  if (scenario == "scan-detuning") return {0.25, 0.01, 8};
  if (scenario == "quench") return {8e-3, 2e-3, 1000};  // free evolution, cooling
  return {100.0 / gamma, 20.0 / gamma, 40};
}

inline void read_simulation(const ojson* block, const RunOptions& o, ScenarioConfig& c) {
  ObjectReader r(block, "/simulation");
  const auto& p = c.params;
  const auto def = sim_defaults(c.scenario, p.gamma);
  EnsembleSettings& e = c.sim;
  e.dt = r.number("dt_s", 0.0);
  r.require(e.dt >= 0.0, "dt_s", "must be non-negative (0 selects the default step)");
  e.steps_per_period = r.number("steps_per_period", 200.0);
  r.require(e.steps_per_period >= 50.0, "steps_per_period", "must be at least 50");
  e.duration = r.number("duration_s", def.duration);
  r.require(e.duration > 0.0, "duration_s", "must be positive");
  e.burn_in = r.number("burn_in_s", def.burn_in);
  r.require(e.burn_in >= 0.0, "burn_in_s", "must be non-negative");
  if (c.scenario == "quench") r.require(e.burn_in > 0.0, "burn_in_s", "quench needs a positive cooling stage");
  e.n_traj = r.integer("n_traj", def.n_traj);
  r.require(e.n_traj >= 2, "n_traj", "at least two trajectories are required");
  e.seed = r.integer("seed", kDefaultSeed);
  if (o.seed) {
    e.seed = *o.seed;
    r.resolved["seed"] = e.seed;
  }
  e.record_stride = r.integer("record_stride", 0);
  const double delta_hz = std::abs(rad_to_hz(effective_detuning(p, c.branch)));
  // The decimation filter passes 0.4 of the output rate; a Lorentzian of
  // width gamma loses about gamma/(pi f_c) of its power beyond f_c, so 160
  // gamma keeps that below 0.5%.
  const double auto_rate = std::max(160.0 * rad_to_hz(p.gamma), 20.0 * (rad_to_hz(p.gamma) + rad_to_hz(p.g) + delta_hz));
  e.output_rate = r.number("output_rate_hz", auto_rate);
  r.require(e.output_rate > 0.0, "output_rate_hz", "must be positive");
  const std::string fm = r.text("force_model", "linearized", {"linearized", "full"});
  e.force = fm == "full" ? ForceModel::full : ForceModel::linearized;
  e.threads = std::max(1u, o.threads);
  r.finish();
  c.resolved["simulation"] = r.resolved;
}

inline std::vector<double> default_kd_grid(const ScenarioConfig& c, const std::optional<Preset>& pre) {
  if (pre && !pre->kd_grid_pi.empty()) return pre->kd_grid_pi;
  return {c.params.kd / constants::pi};
}

inline void read_analysis(const ojson* block, const std::optional<Preset>& pre, ScenarioConfig& c) {
  ObjectReader r(block, "/analysis");
  auto& a = c.analysis;
  const auto& p = c.params;
  const double gam = rad_to_hz(p.gamma), g = rad_to_hz(p.g);
  const std::string& s = c.scenario;
  auto bins = [&] {
    a.phase_bins = static_cast<int>(r.integer("phase_bins", 36));
    r.require(a.phase_bins >= 8 && a.phase_bins <= 4096, "phase_bins", "must lie in [8, 4096]");
  };
  auto positive = [&](const char* key, double def) {
    const double v = r.number(key, def);
    r.require(v > 0.0, key, "must be positive");
    return v;
  };
  auto kd_grid = [&] {
    a.kd_pi = r.numbers("kd_pi", default_kd_grid(c, pre));
  };
  if (s == "squeeze") {
    a.resolution_hz = positive("resolution_hz", gam / 10.0);
    bins();
    a.max_lag_s = positive("max_lag_s", 3.0 / p.gamma);
    a.tolerance = positive("tolerance_rel", 0.10);
  } else if (s == "distance-scan") {
    kd_grid();
    a.resolution_hz = r.number("resolution_hz", 0.0);
    r.require(a.resolution_hz >= 0.0, "resolution_hz", "must be non-negative (0 selects a tenth of the narrow linewidth)");
    a.fit_halfwidth_hz = positive("fit_halfwidth_hz", 2.0 * (gam + g));
    bins();
    a.tolerance = positive("tolerance_g", 0.15);
  } else if (s == "kd-estimate") {
    kd_grid();
    a.g2.window_gamma = positive("window_gamma", 3.0);
    a.max_lag_s = positive("max_lag_s", 2.0 * a.g2.window_gamma / p.gamma);
    a.g2.scale_hz = positive("band_scale_hz", 1000.0);
    a.g2.order = static_cast<int>(r.integer("filter_order", 2));
    r.require(a.g2.order >= 1 && a.g2.order <= 8, "filter_order", "must lie in [1, 8]");
    a.tolerance = positive("tolerance_kd_pi", 0.05);
    a.slope_tolerance = positive("slope_tolerance_rel", 0.05);
  } else if (s == "scan-detuning") {
    std::vector<double> grid;
    for (int i = -10; i <= 10; ++i) grid.push_back(0.3 * std::max(g, gam) * i);
    a.delta_hz_grid = r.numbers("delta_hz", grid);
    a.f_lo_hz = r.number("f_lo_hz", 0.0);
    a.f_hi_hz = r.number("f_hi_hz", 0.0);
    r.require(a.f_hi_hz >= a.f_lo_hz, "f_hi_hz", "must not be below f_lo_hz");
    a.resolution_hz = positive("resolution_hz", gam / 20.0);
    a.ridge_halfwidth_hz = positive("ridge_halfwidth_hz", 2.0 * g + 2.0 * gam);
    a.tolerance = positive("tolerance_rel", 0.05);
  } else if (s == "quench") {
    a.gamma_fb_over_gamma = positive("gamma_fb_over_gamma", 10.0);
    a.cooling_detuning_hz = r.number("cooling_detuning_hz", 20e3);
    a.tolerance = positive("tolerance_rel", 0.05);
    a.overlay_threshold = positive("overlay_threshold", 0.99);
    a.coarse_grain = r.boolean("coarse_grain", true);
  } else {
    kd_grid();
    a.resolution_hz = positive("resolution_hz", gam / 10.0);
    a.tolerance = positive("tolerance_rel", 0.10);
  }
  r.finish();
  c.resolved["analysis"] = r.resolved;
}

inline void read_output(const ojson* block, const RunOptions& o, ScenarioConfig& c) {
  ObjectReader r(block, "/output");
  auto& out = c.output;
  out.dir = r.text("dir", out.dir);
  r.require(!out.dir.empty(), "dir", "must not be empty");
  // The directory is left out of the embedded config so that outputs do not
  // depend on where they are written.
  r.resolved.erase("dir");
  auto file = [&](const char* key, std::string& v) {
    v = r.text(key, v);
    r.require(!v.empty() && v.find('/') == std::string::npos && v != "." && v != "..", key,
              "must be a plain file name");
  };
  file("psd", out.psd);
  file("spectrogram", out.spectrogram);
  file("modes", out.modes);
  file("correlations", out.correlations);
  file("summary", out.summary);
  if (o.out_dir) out.dir = *o.out_dir;
  r.finish();
  c.resolved["output"] = r.resolved;
}

}  // namespace detail

inline ScenarioConfig parse_config(const ojson& j, const RunOptions& o = {}) {
  if (!j.is_object()) throw schema_error("", "config must be a JSON object");
  ObjectReader top(&j, "");
  ScenarioConfig c;
  const std::string schema = top.text("schema", std::nullopt);
  if (schema != kConfigSchema)
    throw schema_error("/schema", "unsupported schema '" + schema + "', expected '" + kConfigSchema + "'");
  c.resolved["schema"] = schema;
  c.scenario = top.text("scenario", std::nullopt, scenario_names());
  c.resolved["scenario"] = c.scenario;
  std::optional<Preset> pre;
  if (top.has("preset")) {
    c.preset = top.text("preset", std::nullopt);
    pre = find_preset(c.preset);
    if (!pre) throw schema_error("/preset", "unknown preset '" + c.preset + "' (see fblab list-presets)");
    c.resolved["preset"] = c.preset;
  }
  auto block = [&](const char* key) { return top.block(key); };
  const ojson* params = block("params");
  const ojson* physical = block("physical");
  if (physical) {
    if (params) throw schema_error("/physical", "give either params or physical, not both");
    if (pre) throw schema_error("/physical", "a preset cannot be combined with a physical block");
    detail::read_physical(physical, c);
  } else {
    if (!params && !pre) throw schema_error("/params", "params block or preset required");
    detail::read_params(params, pre, c);
  }
  const bool single = c.branch.tag == BranchTag::single_mode;
  const std::string bp = physical ? "/physical/branch" : "/params/branch";
  if (c.scenario == "sms" && !single) throw schema_error(bp, "sms requires branch single_mode_1 or single_mode_2");
  if (c.scenario != "sms" && c.branch.tag != BranchTag::detuning)
    throw schema_error(bp, c.scenario + " runs on the detuning branch only");
  if (c.scenario == "kd-estimate" && effective_detuning(c.params, c.branch) == 0.0)
    throw schema_error(physical ? "/physical/delta_hz" : "/params/delta_hz", "kd-estimate requires a nonzero detuning");
  detail::read_simulation(block("simulation"), o, c);
  detail::read_analysis(block("analysis"), pre, c);
  detail::read_output(block("output"), o, c);
  top.finish();
  return c;
}

inline ScenarioConfig load_config(const std::filesystem::path& path, const RunOptions& o = {}) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw schema_error("", "cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  ojson j;
  try {
    j = ojson::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw schema_error("", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j, o);
}

// ---------------------------------------------------------------------------
// Summary entries: extracted value, analytic counterpart, errors, provenance.

class Summary {
 public:
  enum class Tol { none, relative, absolute, minimum };

  // `modulus` > 0 measures the error on a circle of that circumference.
  void add(const std::string& name, const std::string& unit, const std::string& provenance, double value,
           double analytic, Tol kind = Tol::none, double tolerance = 0.0, ojson at = nullptr, double modulus = 0.0) {
    ojson e;
    e["name"] = name;
    if (!at.is_null()) e["at"] = at;
    e["unit"] = unit;
    e["value"] = json_number(value);
    e["analytic"] = json_number(analytic);
    double abs_err = std::abs(value - analytic);
    if (modulus > 0.0 && std::isfinite(abs_err)) {
      abs_err = std::fmod(abs_err, modulus);
      abs_err = std::min(abs_err, modulus - abs_err);
    }
    // Analytic values at rounding level count as zero: no relative scale.
    const bool zero = !(std::abs(analytic) > 1e-12);
    const double rel_err = !zero ? abs_err / std::abs(analytic) : (abs_err == 0.0 ? 0.0 : NAN);
    e["abs_error"] = json_number(abs_err);
    e["rel_error"] = json_number(rel_err);
    e["provenance"] = provenance;
    e["analytic_provenance"] = "analytic";
    if (kind != Tol::none) {
      bool ok = false;
      const char* label = "relative";
      switch (kind) {
        // A zero analytic value leaves only the absolute scale.
        case Tol::relative: ok = abs_err <= tolerance * (zero ? 1.0 : std::abs(analytic)); break;
        case Tol::absolute: ok = abs_err <= tolerance; label = "absolute"; break;
        case Tol::minimum: ok = value >= tolerance; label = "minimum"; break;
        case Tol::none: break;
      }
      ok = ok && std::isfinite(value);
      e["tolerance"] = {{"kind", label}, {"value", tolerance}};
      e["within_tolerance"] = ok;
      all_within_ = all_within_ && ok;
      ++checked_;
    } else {
      e["tolerance"] = nullptr;
      e["within_tolerance"] = nullptr;
    }
    results_.push_back(std::move(e));
  }

  void diagnostic(const std::string& key, ojson v) { diagnostics_[key] = std::move(v); }
  void warn(const std::string& w) { warnings_.push_back(w); }
  bool all_within() const { return all_within_; }
  std::size_t checked() const { return checked_; }

  ojson to_json(const ScenarioConfig& c) const {
    ojson j;
    j["schema"] = kSummarySchema;
    j["scenario"] = c.scenario;
    j["all_within_tolerance"] = all_within_;
    j["n_checked"] = checked_;
    j["results"] = results_;
    j["diagnostics"] = diagnostics_;
    j["warnings"] = warnings_;
    j["config"] = c.resolved;
    return j;
  }

 private:
  ojson results_ = ojson::array();
  ojson diagnostics_ = ojson::object();
  ojson warnings_ = ojson::array();
  bool all_within_ = true;
  std::size_t checked_ = 0;
};

struct ScenarioOutputs {
  CsvTable spectrum;
  bool spectrogram = false;
  ojson modes = ojson::object();
  CsvTable correlations;
  Summary summary;
};

namespace detail {

inline ojson at_kd(double kd_pi) { return ojson{{"kd_pi", kd_pi}}; }

inline ojson mode_json(const ModeSolution& m) {
  ojson j;
  j["branch"] = to_string(m.branch);
  j["lambda_re_hz"] = rad_to_hz(m.Lambda.real());
  j["lambda_im_hz"] = rad_to_hz(m.Lambda.imag());
  j["omega_plus_re_hz"] = rad_to_hz(m.Omega_plus.real());
  j["omega_plus_im_hz"] = rad_to_hz(m.Omega_plus.imag());
  j["omega_minus_re_hz"] = rad_to_hz(m.Omega_minus.real());
  j["omega_minus_im_hz"] = rad_to_hz(m.Omega_minus.imag());
  j["linewidth_plus_hz"] = rad_to_hz(m.linewidth_plus());
  j["linewidth_minus_hz"] = rad_to_hz(m.linewidth_minus());
  j["exceptional"] = m.exceptional;
  j["provenance"] = "analytic";
  return j;
}

inline ojson bw_json(const BreitWignerFit& f) {
  ojson j;
  j["f0_hz"] = json_number(f.f0);
  j["f0_error_hz"] = json_number(f.f0_error());
  j["width_hz"] = json_number(f.width);
  j["width_error_hz"] = json_number(f.width_error());
  j["converged"] = f.converged;
  j["provenance"] = "fitted";
  return j;
}

inline ojson histogram_json(const PhaseLockHistogram& h) {
  ojson j;
  j["mean_phase_rad"] = json_number(h.mean_phase);
  j["width_rad"] = json_number(h.width);
  j["contrast"] = json_number(h.contrast);
  j["noise"] = json_number(h.noise);
  j["locked"] = h.locked;
  return j;
}

inline EnsembleSettings point_settings(const EnsembleSettings& e, std::size_t i) {
  EnsembleSettings s = e;
  s.seed = e.seed + 7919u * i;
  return s;
}

inline void run_squeeze(const ScenarioConfig& c, ScenarioOutputs& o) {
  const auto& p = c.params;
  const auto& a = c.analysis;
  const auto r = squeeze_pipeline(p, c.ctx, c.sim, a.resolution_hz, a.phase_bins, a.max_lag_s);
  const double s2 = 1.0 / std::sqrt(2.0);
  const cplx ph = std::polar(1.0, -r.delta_phi_analytic);
  const auto sum_an = combination_psd(p, Vec2(ph * s2, s2), r.psd_sum.freq);
  const auto diff_an = combination_psd(p, Vec2(ph * s2, -s2), r.psd_diff.freq);
  o.spectrum.columns = {"frequency_hz", "psd_in_phase_sim_quanta_per_hz", "psd_out_of_phase_sim_quanta_per_hz",
                        "psd_in_phase_analytic_quanta_per_hz", "psd_out_of_phase_analytic_quanta_per_hz"};
  for (std::size_t k = 0; k < r.psd_sum.freq.size(); ++k)
    o.spectrum.add({r.psd_sum.freq[k], r.psd_sum.density[k], r.psd_diff.density[k], sum_an[k], diff_an[k]});
  o.correlations.columns = {"tau_s", "g2_sim", "g2_sim_stderr", "g2_analytic"};
  for (std::size_t k = 0; k < r.g2.tau.size(); ++k)
    o.correlations.add({r.g2.tau[k], r.g2.value[k], r.g2.stderr_[k], r.g2_analytic[k]});
  o.modes["analytic"] = mode_json(eigen_solution(p, ResonanceBranch::detuning()));
  o.modes["phase_lock"] = histogram_json(r.histogram);

  auto& S = o.summary;
  const double tol = a.tolerance;
  S.add("squashed_variance_ratio", "1", "simulated", r.squashed, r.squashed_analytic, Summary::Tol::relative, tol);
  S.add("anti_squashed_variance_ratio", "1", "simulated", r.anti_squashed, r.anti_squashed_analytic,
        Summary::Tol::relative, tol);
  S.add("z_plus_over_n", "1", "analytic", r.variances.z_plus, r.variances.z_plus);
  S.add("z_minus_over_n", "1", "analytic", r.variances.z_minus, r.variances.z_minus);
  // Reference point with the same g and gamma: kd = pi/2, delta = 0, equal baths.
  ModeParams ideal = p;
  ideal.kd = constants::pi / 2;
  ideal.delta_phi = 0.0;
  ideal.delta_omega = delta_omega_for(ideal, ResonanceBranch::detuning(), 0.0);
  ideal.n1 = ideal.n2 = 0.5 * (p.n1 + p.n2);
  const auto iv = stationary_variances(ideal);
  S.add("squashed_ratio_vs_ideal_point", "1", "simulated", r.squashed, iv.squashed() / ideal.n1,
        Summary::Tol::relative, tol);
  S.add("anti_squashed_ratio_vs_ideal_point", "1", "simulated", r.anti_squashed, iv.anti_squashed() / ideal.n1,
        Summary::Tol::relative, tol);
  S.add("squeezing_gain_r", "1", "simulated", r.gain.r, r.gain_analytic.r, Summary::Tol::absolute, 0.02);
  S.add("squashing_db", "dB", "simulated", to_db(r.squashed), to_db(r.variances.squashed()), Summary::Tol::absolute,
        0.2);
  S.add("delta_phi_rad", "rad", "simulated", r.delta_phi_hat, r.delta_phi_analytic, Summary::Tol::none, 0.0, nullptr,
        constants::two_pi);
  S.diagnostic("squashed_stderr", r.squashed_se);
  S.diagnostic("anti_squashed_stderr", r.anti_squashed_se);
  S.diagnostic("gain_consistent", r.gain.consistent);
  S.diagnostic("r_max", r.gain_analytic.r_max);
  S.diagnostic("phase_locked", r.histogram.locked);
  S.diagnostic("n_traj", r.n_traj);
  S.diagnostic("samples_per_trajectory", r.n_samples);
}

inline void run_distance_scan(const ScenarioConfig& c, ScenarioOutputs& o) {
  const auto& a = c.analysis;
  const double g_hz = rad_to_hz(c.params.g);
  o.spectrum.columns = {"kd_pi", "frequency_hz", "psd_plus_sim_quanta_per_hz", "psd_minus_sim_quanta_per_hz",
                        "psd_plus_fit_quanta_per_hz", "psd_minus_fit_quanta_per_hz"};
  o.correlations.columns = {"kd_pi", "phase_rad", "pdf_sim_per_rad", "pdf_fit_per_rad"};
  o.modes["points"] = ojson::array();
  std::vector<double> circle_re, circle_im;
  double modulus_analytic = 0.0;
  for (std::size_t i = 0; i < a.kd_pi.size(); ++i) {
    ModeParams p = c.params;
    p.kd = a.kd_pi[i] * constants::pi;
    const auto r = eigenmode_spectra(p, c.ctx, point_settings(c.sim, i), a.resolution_hz, a.fit_halfwidth_hz,
                                     a.phase_bins);
    for (std::size_t k = 0; k < r.psd_plus.freq.size(); ++k) {
      const double f = r.psd_plus.freq[k];
      o.spectrum.add({a.kd_pi[i], f, r.psd_plus.density[k], r.psd_minus.density[k],
                      r.fit_ok ? r.fit_plus(f) : NAN, r.fit_ok ? r.fit_minus(f) : NAN});
    }
    for (std::size_t k = 0; k < r.histogram.centers.size(); ++k)
      o.correlations.add({a.kd_pi[i], r.histogram.centers[k], r.histogram.pdf[k],
                          r.histogram.fit.empty() ? NAN : r.histogram.fit[k]});
    ojson pt;
    pt["kd_pi"] = a.kd_pi[i];
    pt["analytic"] = mode_json(r.modes);
    pt["splitting_analytic_re_hz"] = rad_to_hz(r.splitting_analytic.real());
    pt["splitting_analytic_im_hz"] = rad_to_hz(r.splitting_analytic.imag());
    pt["fit_plus"] = bw_json(r.fit_plus);
    pt["fit_minus"] = bw_json(r.fit_minus);
    pt["fit_ok"] = r.fit_ok;
    pt["splitting_fitted_re_hz"] = r.fit_ok ? json_number(rad_to_hz(r.splitting.real())) : ojson(nullptr);
    pt["splitting_fitted_im_hz"] = r.fit_ok ? json_number(rad_to_hz(r.splitting.imag())) : ojson(nullptr);
    pt["delta_phi_hat_rad"] = r.delta_phi_hat;
    pt["phase_lock"] = histogram_json(r.histogram);
    pt["flipped"] = r.flipped;
    o.modes["points"].push_back(pt);
    const double re = r.fit_ok ? rad_to_hz(r.splitting.real()) : NAN;
    const double nim = r.fit_ok ? -rad_to_hz(r.splitting.imag()) : NAN;
    auto& S = o.summary;
    S.add("splitting_real_hz", "Hz", "fitted", re, rad_to_hz(r.splitting_analytic.real()), Summary::Tol::absolute,
          a.tolerance * g_hz, at_kd(a.kd_pi[i]));
    S.add("splitting_neg_imag_hz", "Hz", "fitted", nim, -rad_to_hz(r.splitting_analytic.imag()),
          Summary::Tol::absolute, a.tolerance * g_hz, at_kd(a.kd_pi[i]));
    if (!r.fit_ok) S.warn("kd_pi=" + compact_double(a.kd_pi[i]) + ": fit failed: " + r.fit_message);
    if (!r.warning.empty()) S.warn("kd_pi=" + compact_double(a.kd_pi[i]) + ": " + r.warning);
    if (r.fit_ok) {
      circle_re.push_back(re);
      circle_im.push_back(nim);
      modulus_analytic += rad_to_hz(std::abs(r.splitting_analytic));
    }
  }
  if (!circle_re.empty()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < circle_re.size(); ++i) acc += std::hypot(circle_re[i], circle_im[i]);
    // At delta = 0 the splitting lies on a circle of radius g.
    const double n = static_cast<double>(circle_re.size());
    o.summary.add("mean_splitting_modulus_hz", "Hz", "fitted", acc / n, modulus_analytic / n);
  }
}

inline void run_kd_estimate(const ScenarioConfig& c, ScenarioOutputs& o) {
  const auto& a = c.analysis;
  o.spectrum.columns = {"kd_pi", "frequency_hz", "psd_b1_sim_quanta_per_hz", "psd_b2_sim_quanta_per_hz",
                        "psd_b1_analytic_quanta_per_hz", "psd_b2_analytic_quanta_per_hz"};
  o.correlations.columns = {"kd_pi", "tau_s", "g2_sim", "g2_sim_stderr", "g2_filtered", "g2_analytic"};
  o.modes["points"] = ojson::array();
  std::vector<double> kds, phases;
  const double delta = effective_detuning(c.params, ResonanceBranch::detuning());
  for (std::size_t i = 0; i < a.kd_pi.size(); ++i) {
    ModeParams p = c.params;
    p.kd = a.kd_pi[i] * constants::pi;
    const auto r = kd_estimate(p, c.ctx, point_settings(c.sim, i), a.max_lag_s, a.g2);
    const auto b1 = combination_psd(p, Vec2(1.0, 0.0), r.psd1.freq);
    const auto b2 = combination_psd(p, Vec2(0.0, 1.0), r.psd2.freq);
    for (std::size_t k = 0; k < r.psd1.freq.size(); ++k)
      o.spectrum.add({a.kd_pi[i], r.psd1.freq[k], r.psd1.density[k], r.psd2.density[k], b1[k], b2[k]});
    for (std::size_t k = 0; k < r.g2.tau.size(); ++k)
      o.correlations.add({a.kd_pi[i], r.g2.tau[k], r.g2.value[k], r.g2.stderr_[k], r.fit.filtered[k],
                          r.g2_analytic[k]});
    ojson pt;
    pt["kd_pi"] = a.kd_pi[i];
    pt["analytic"] = mode_json(eigen_solution(p, ResonanceBranch::detuning()));
    pt["fitted_omega_plus_hz"] = json_number(rad_to_hz(r.fit.omega_plus));
    pt["fitted_omega_minus_hz"] = json_number(rad_to_hz(r.fit.omega_minus));
    pt["fitted_phase_plus_rad"] = json_number(r.fit.B_plus);
    pt["fitted_phase_minus_rad"] = json_number(r.fit.B_minus);
    pt["analytic_phase_plus_rad"] = r.phases_analytic.plus;
    pt["analytic_phase_minus_rad"] = r.phases_analytic.minus;
    pt["band_lo_hz"] = r.fit.band.lo;
    pt["band_hi_hz"] = r.fit.band.hi;
    o.modes["points"].push_back(pt);
    auto& S = o.summary;
    const ojson at = at_kd(a.kd_pi[i]);
    S.add("kd_estimate_pi", "pi rad", "fitted", r.kd / constants::pi, r.kd_true / constants::pi,
          Summary::Tol::absolute, a.tolerance, at, 1.0);
    S.add("mean_phase_rad", "rad", "fitted", r.fit.B_mean, r.phases_analytic.mean, Summary::Tol::none, 0.0, at,
          constants::two_pi);
    S.add("mean_phase_vs_law_rad", "rad", "fitted", r.fit.B_mean, r.law_phase, Summary::Tol::none, 0.0, at,
          constants::two_pi);
    kds.push_back(p.kd);
    phases.push_back(r.fit.B_mean);
  }
  if (kds.size() >= 2)
    o.summary.add("mean_phase_slope", "rad/rad", "fitted", phase_slope(kds, phases), -2.0 * sign_of(delta),
                  Summary::Tol::relative, a.slope_tolerance);
}

inline void run_scan(const ScenarioConfig& c, ScenarioOutputs& o) {
  const auto& a = c.analysis;
  const auto& p = c.params;
  std::vector<double> grid;
  for (double d : a.delta_hz_grid) grid.push_back(delta_omega_for(p, ResonanceBranch::detuning(), hz_to_rad(d)));
  ScanSettings s;
  s.ens = c.sim;
  s.f_lo = a.f_lo_hz;
  s.f_hi = a.f_hi_hz;
  s.resolution_hz = a.resolution_hz;
  s.ridge_halfwidth_hz = a.ridge_halfwidth_hz;
  const auto r = spectrogram_scan(p, c.ctx, grid, s);
  o.spectrogram = true;
  o.spectrum.columns = {"delta_omega_hz", "delta_hz", "frequency_hz", "psd_m2_per_hz"};
  o.correlations.columns = {"delta_hz", "n11_over_n1_analytic", "n22_over_n2_analytic", "abs_g12_over_nref_analytic"};
  o.modes["rows"] = ojson::array();
  auto& S = o.summary;
  for (const auto& row : r.rows) {
    const double dhz = rad_to_hz(row.delta);
    for (std::size_t k = 0; k < r.freq.size(); ++k)
      o.spectrum.add({rad_to_hz(row.delta_omega), dhz, r.freq[k], row.density[k]});
    ModeParams q = p;
    q.delta_omega = row.delta_omega;
    const Mat2 M = dynamical_matrix(q, ResonanceBranch::detuning());
    detail::require_stable(q, M, "scan-detuning");
    const Mat2 cov = detail::stationary_covariance(q, M);  // <b b^dag>
    o.correlations.add({dhz, cov(0, 0).real() / q.n1, cov(1, 1).real() / q.n2,
                        std::abs(cov(0, 1)) / (0.5 * (q.n1 + q.n2))});
    ojson j;
    j["delta_omega_hz"] = rad_to_hz(row.delta_omega);
    j["delta_hz"] = dhz;
    j["ridges_fitted_hz"] = row.ridges;
    j["ridges_analytic_hz"] = row.ridges_analytic;
    j["gap_fitted_hz"] = json_number(row.gap);
    j["gap_analytic_hz"] = row.gap_analytic;
    if (!row.fit_message.empty()) j["fit_message"] = row.fit_message;
    j["analytic"] = mode_json(eigen_solution(q, ResonanceBranch::detuning()));
    o.modes["rows"].push_back(j);
    if (std::isfinite(row.gap))
      S.add("ridge_gap_hz", "Hz", "fitted", row.gap, row.gap_analytic, Summary::Tol::none, 0.0,
            ojson{{"delta_hz", dhz}});
    else
      S.warn("delta_hz=" + compact_double(dhz) + ": ridges not resolved" +
             (row.fit_message.empty() ? "" : ": " + row.fit_message));
  }
  const double g_hz = rad_to_hz(p.g);
  S.add("min_ridge_gap_hz", "Hz", "fitted", r.min_gap, g_hz, Summary::Tol::relative, a.tolerance);
  S.add("hyperbola_g_hz", "Hz", "fitted", r.g_hyperbola, g_hz, Summary::Tol::relative, a.tolerance);
  S.diagnostic("min_gap_delta_hz", rad_to_hz(r.min_gap_delta));
  S.diagnostic("bin_width_hz", r.bin_width);
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline PsdEstimate periodogram(std::vector<double> x, double fs) {
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  for (double& v : x) v -= m;
  std::size_t n = 8;
  while (2 * n <= x.size()) n *= 2;
  WelchAccumulator acc(n, 0.5, fs, false);
  acc.add(x);
  return acc.result();
}

inline void run_quench_scenario(const ScenarioConfig& c, ScenarioOutputs& o) {
  const auto& a = c.analysis;
  const auto& p = c.params;
  QuenchSettings q;
  q.gamma_fb = a.gamma_fb_over_gamma * p.gamma;
  q.t_cool = c.sim.burn_in;
  q.t_free = c.sim.duration;
  q.cooling_detuning = hz_to_rad(a.cooling_detuning_hz);
  Protocol pr;
  pr.stages = {Stage{q.t_cool, q.gamma_fb, 0.0, true, p.delta_omega + q.cooling_detuning},
               Stage{q.t_free, 0.0, 0.0, true, std::nullopt}};
  q.dt = c.sim.dt > 0.0 ? c.sim.dt : default_dt(p, pr, c.sim.steps_per_period);
  q.n_traj = c.sim.n_traj;
  q.seed = c.sim.seed;
  q.record_stride = c.sim.record_stride > 0
                        ? c.sim.record_stride
                        : std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(
                                                       constants::two_pi / max_frequency(p, pr) / (10.0 * q.dt))));
  // Average over one period of the counter-rotating 2 Delta_omega term,
  // which the rotating-wave curves leave out.
  const double rdt = q.dt * static_cast<double>(q.record_stride);
  q.coarse_window = a.coarse_grain && p.delta_omega != 0.0
                        ? static_cast<std::size_t>(std::llround(constants::pi / std::abs(p.delta_omega) / rdt))
                        : 0;
  q.threads = c.sim.threads;
  const auto r = run_quench(p, c.ctx, q);
  const auto an = analyze_quench(r, p, q.gamma_fb);
  o.correlations.columns = {"t_s", "b1_sq_sim_quanta", "b1_sq_stderr_quanta", "b1_sq_analytic_quanta",
                            "b2_sq_sim_quanta", "b2_sq_stderr_quanta", "b2_sq_analytic_quanta",
                            "re_b1c_b2_sim_quanta", "im_b1c_b2_sim_quanta", "re_b1c_b2_analytic_quanta",
                            "im_b1c_b2_analytic_quanta", "b1_sq_coarse_sim_quanta", "b1_sq_coarse_stderr_quanta",
                            "b1_sq_coarse_analytic_quanta", "b2_sq_coarse_sim_quanta", "b2_sq_coarse_stderr_quanta",
                            "b2_sq_coarse_analytic_quanta"};
  std::vector<double> d_sim, d_an;
  for (std::size_t k = 0; k < r.t.size(); ++k) {
    const auto qp = quench_occupations(r.frame, an.n1_cooled, p.n2, r.t[k]);
    const bool cg = r.coarse_window > 1;
    o.correlations.add({r.t[k], r.b1_sq[k], r.b1_sq_se[k], qp.b1_sq, r.b2_sq[k], r.b2_sq_se[k], qp.b2_sq,
                        r.b1c_b2[k].real(), r.b1c_b2[k].imag(), qp.b1c_b2.real(), qp.b1c_b2.imag(),
                        cg ? r.b1_sq_coarse[k] : NAN, cg ? r.b1_sq_coarse_se[k] : NAN,
                        cg ? an.b1_coarse_analytic[k] : NAN, cg ? r.b2_sq_coarse[k] : NAN,
                        cg ? r.b2_sq_coarse_se[k] : NAN, cg ? an.b2_coarse_analytic[k] : NAN});
    d_sim.push_back(r.b1_sq[k] - r.b2_sq[k]);
    d_an.push_back(qp.b1_sq - qp.b2_sq);
  }
  const double fs = 1.0 / (r.t[1] - r.t[0]);
  const auto ps = periodogram(d_sim, fs), pa = periodogram(d_an, fs);
  o.spectrum.columns = {"frequency_hz", "psd_difference_sim_quanta2_per_hz", "psd_difference_analytic_quanta2_per_hz"};
  for (std::size_t k = 0; k < ps.freq.size(); ++k) o.spectrum.add({ps.freq[k], ps.density[k], pa.density[k]});
  o.modes["analytic"] = mode_json(eigen_solution(r.frame, ResonanceBranch::detuning()));
  ojson ex;
  ex["omega_hz"] = json_number(rad_to_hz(an.exchange.omega));
  ex["omega_error_hz"] = json_number(rad_to_hz(an.exchange.omega_error));
  ex["decay_per_s"] = json_number(an.exchange.decay);
  ex["converged"] = an.exchange.converged;
  ex["provenance"] = "fitted";
  o.modes["exchange_fit"] = ex;
  auto& S = o.summary;
  S.add("exchange_frequency_hz", "Hz", "fitted", rad_to_hz(an.exchange.omega), rad_to_hz(an.exchange_analytic),
        Summary::Tol::relative, a.tolerance);
  S.add("overlay_fraction_b1", "1", "simulated", an.overlay_fraction_1, 1.0, Summary::Tol::minimum,
        a.overlay_threshold);
  S.add("overlay_fraction_b2", "1", "simulated", an.overlay_fraction_2, 1.0, Summary::Tol::minimum,
        a.overlay_threshold);
  S.add("overlay_fraction_b1_per_record", "1", "simulated", an.overlay_fraction_raw_1, 1.0);
  S.add("overlay_fraction_b2_per_record", "1", "simulated", an.overlay_fraction_raw_2, 1.0);
  S.add("b1_sq_at_switch_quanta", "quanta", "simulated", r.b1_sq.front(), an.n1_cooled);
  S.add("b2_sq_at_switch_quanta", "quanta", "simulated", r.b2_sq.front(), p.n2);
  S.add("b1_sq_final_quanta", "quanta", "simulated", r.b1_sq.back(), an.b1_analytic.back());
  S.add("b2_sq_final_quanta", "quanta", "simulated", r.b2_sq.back(), an.b2_analytic.back());
  S.diagnostic("antiphase_correlation", an.antiphase_correlation);
  S.diagnostic("dt_s", q.dt);
  S.diagnostic("record_stride", q.record_stride);
  S.diagnostic("coarse_window_records", r.coarse_window);
  S.diagnostic("beat_phase_at_switch_rad", r.frame.delta_phi);
  S.diagnostic("n_traj", r.n_traj);
}

inline void run_sms(const ScenarioConfig& c, ScenarioOutputs& o) {
  const auto& a = c.analysis;
  const int j = c.branch.j;
  o.spectrum.columns = {"kd_pi", "frequency_hz", "psd_sim_quanta_per_hz", "psd_analytic_quanta_per_hz"};
  o.correlations.columns = {"kd_pi", "var_x_sim_quanta", "var_y_sim_quanta", "cov_xy_sim_quanta",
                            "var_x_analytic_quanta", "var_y_analytic_quanta", "cov_xy_analytic_quanta"};
  o.modes["points"] = ojson::array();
  auto& S = o.summary;
  double occ_lo = INFINITY, occ_hi = -INFINITY;
  for (std::size_t i = 0; i < a.kd_pi.size(); ++i) {
    ModeParams p = c.params;
    p.kd = a.kd_pi[i] * constants::pi;
    const auto r = single_mode_pipeline(p, j, c.ctx, point_settings(c.sim, i), a.resolution_hz);
    const auto an = combination_psd(p, Vec2(1.0, 0.0), r.psd.freq, c.branch);
    for (std::size_t k = 0; k < r.psd.freq.size(); ++k)
      o.spectrum.add({a.kd_pi[i], r.psd.freq[k], r.psd.density[k], an[k]});
    o.correlations.add({a.kd_pi[i], r.var_x, r.var_y, r.cov_xy, r.analytic.var_x, r.analytic.var_y,
                        r.analytic.cov_xy});
    ojson pt;
    pt["kd_pi"] = a.kd_pi[i];
    pt["analytic"] = mode_json(eigen_solution(p, c.branch));
    o.modes["points"].push_back(pt);
    const double n = p.n(j);
    const ojson at = at_kd(a.kd_pi[i]);
    S.add("occupation_over_n", "1", "simulated", r.occupation / n, r.analytic.occupation() / n, Summary::Tol::relative,
          a.tolerance, at);
    S.add("squashed_over_n", "1", "simulated", r.squashed / n, r.analytic.squashed() / n, Summary::Tol::relative,
          a.tolerance, at);
    S.add("anti_squashed_over_n", "1", "simulated", r.anti_squashed / n, r.analytic.anti_squashed() / n,
          Summary::Tol::relative, a.tolerance, at);
    occ_lo = std::min(occ_lo, r.occupation);
    occ_hi = std::max(occ_hi, r.occupation);
  }
  // The single-mode response does not depend on kd.
  if (a.kd_pi.size() >= 2)
    S.add("occupation_spread_over_kd", "1", "simulated", occ_hi / occ_lo, 1.0, Summary::Tol::relative, a.tolerance);
  S.diagnostic("particle", j);
}

}  // namespace detail

inline ScenarioOutputs compute_scenario(const ScenarioConfig& c) {
  ScenarioOutputs o;
  try {
    if (c.scenario == "squeeze") detail::run_squeeze(c, o);
    else if (c.scenario == "distance-scan") detail::run_distance_scan(c, o);
    else if (c.scenario == "kd-estimate") detail::run_kd_estimate(c, o);
    else if (c.scenario == "scan-detuning") detail::run_scan(c, o);
    else if (c.scenario == "quench") detail::run_quench_scenario(c, o);
    else if (c.scenario == "sms") detail::run_sms(c, o);
    else throw schema_error("/scenario", "unknown scenario '" + c.scenario + "'");
  } catch (const blowup_error& e) {
    throw numerical_failure("langevin", e.what());
  } catch (const instability_error& e) {
    throw numerical_failure("correlations", e.what());
  } catch (const numerical_error& e) {
    throw numerical_failure("rwa", e.what());
  } catch (const fit_error& e) {
    throw numerical_failure("sigproc", e.what());
  } catch (const statistical_power_error& e) {
    throw numerical_failure("sigproc", e.what());
  } catch (const config_error& e) {
    throw schema_error("/simulation", e.what());
  } catch (const domain_error& e) {
    throw schema_error("/params", e.what());
  }
  o.modes = [&] {
    ojson m;
    m["schema"] = kModesSchema;
    m["scenario"] = c.scenario;
    for (auto& [k, v] : o.modes.items()) m[k] = v;
    m["config"] = c.resolved;
    return m;
  }();
  return o;
}

struct RunReport {
  std::vector<std::filesystem::path> files;
  bool all_within_tolerance = true;
  std::size_t n_checked = 0;
};

inline RunReport write_outputs(const ScenarioConfig& c, const ScenarioOutputs& o) {
  namespace fs = std::filesystem;
  const fs::path dir(c.output.dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  RunReport rep;
  const fs::path spec = dir / (o.spectrogram ? c.output.spectrogram : c.output.psd);
  write_csv(spec, o.spectrum);
  write_json(dir / c.output.modes, o.modes);
  write_csv(dir / c.output.correlations, o.correlations);
  write_json(dir / c.output.summary, o.summary.to_json(c));
  rep.files = {spec, dir / c.output.modes, dir / c.output.correlations, dir / c.output.summary};
  rep.all_within_tolerance = o.summary.all_within();
  rep.n_checked = o.summary.checked();
  return rep;
}

inline RunReport run_scenario(const ScenarioConfig& c) { return write_outputs(c, compute_scenario(c)); }

}  // namespace fblab
