// End-to-end acceptance checks; one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "fblab/scenario.hpp"

using namespace fblab;

namespace {

// Tolerances, fixed here rather than read from any config.
constexpr double kSquashAnalyticTol = 1e-3;
constexpr double kSquashMonteCarloTol = 0.10;
constexpr double kGainTarget = 0.75, kGainTol = 0.02;
constexpr double kDbTarget = -2.4, kDbTol = 0.2;
constexpr double kRidgeGapTol = 0.05;
constexpr double kExchangeTol = 0.05;
constexpr double kOverlaySigmas = 3.0;
constexpr double kOverlayFraction = 0.99;
constexpr double kEpSqrtTol = 0.01;
constexpr double kCircleExact = 1e-12;
constexpr double kCircleFitTol = 0.15;
constexpr double kKdTol = 0.05;
constexpr double kSlopeTol = 0.05;
constexpr double kQuadratureTol = 1e-6;
constexpr double kExpmTol = 1e-10;
constexpr double kUnitTol = 1e-12;
constexpr double kDriftTol = 1e-6;
constexpr double kPinningFraction = 0.1;  // of gamma

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [x]");
  }
  void note(const std::string& what) { detail << (detail.tellp() > 0 ? "; " : "") << what; }
};

std::string fmt(double x, const char* spec = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ojson base_params(double gamma_hz, double g_hz, double kd_pi, double delta_hz) {
  return {{"omega1_hz", 27000.0}, {"omega2_hz", 33000.0}, {"gamma_hz", gamma_hz},
          {"g_hz", g_hz},         {"kd_pi", kd_pi},       {"delta_hz", delta_hz}};
}

ojson run_summary(const ojson& cfg, double& elapsed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = parse_config(cfg);
  const auto out = compute_scenario(c);
  elapsed = seconds_since(t0);
  return out.summary.to_json(c);
}

const ojson& entry(const ojson& summary, const std::string& name) {
  for (const auto& e : summary["results"])
    if (e["name"] == name) return e;
  throw std::runtime_error("summary has no entry " + name);
}

std::vector<const ojson*> entries(const ojson& summary, const std::string& name) {
  std::vector<const ojson*> out;
  for (const auto& e : summary["results"])
    if (e["name"] == name) out.push_back(&e);
  return out;
}

double value(const ojson& e) { return e["value"].is_null() ? NAN : e["value"].get<double>(); }

ModeParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ModeParams p;
  p.Omega1 = hz_to_rad(20e3 + 15e3 * u(rng));
  p.Omega2 = hz_to_rad(20e3 + 15e3 * u(rng));
  p.gamma = hz_to_rad(50.0 + 950.0 * u(rng));
  p.g = hz_to_rad(1500.0 * u(rng));
  p.kd = constants::two_pi * (u(rng) - 0.5);
  p.delta_phi = constants::two_pi * (u(rng) - 0.5);
  p.delta_omega = delta_omega_for(p, ResonanceBranch::detuning(), hz_to_rad(3000.0 * (u(rng) - 0.5)));
  p.n1 = 0.5 + u(rng);
  p.n2 = 0.5 + u(rng);
  return p;
}

// ---------------------------------------------------------------------------

struct SqueezeRun {
  ojson summary;
  double elapsed = 0.0;
};

SqueezeRun squeeze_run() {
  ojson params = base_params(474.0, 0.753 * 474.0, 0.5, 0.0);
  params["occupation"] = "equal";
  const double gamma = hz_to_rad(474.0);
  const ojson cfg = {{"schema", kConfigSchema},
                     {"scenario", "squeeze"},
                     {"params", params},
                     {"simulation", {{"n_traj", 500}, {"duration_s", 50.0 / gamma}, {"burn_in_s", 40.0 / gamma}}}};
  SqueezeRun r;
  r.summary = run_summary(cfg, r.elapsed);
  return r;
}

void c1(const SqueezeRun& run, Verdict& v) {
  ModeParams p;
  p.Omega1 = hz_to_rad(27e3);
  p.Omega2 = hz_to_rad(33e3);
  p.gamma = hz_to_rad(474.0);
  p.g = 0.753 * p.gamma;
  p.kd = constants::pi / 2;
  p.delta_omega = delta_omega_for(p, ResonanceBranch::detuning(), 0.0);
  p.n1 = p.n2 = 1.0;
  const auto sv = stationary_variances(p);
  // Closed form at kd = pi/2, delta = 0, equal baths: 1/(1 + r), 1/(1 - r) with r = g/gamma.
  const double r = p.g / p.gamma;
  v.check(std::abs(sv.squashed() - 1.0 / (1.0 + r)) <= kSquashAnalyticTol &&
              std::abs(sv.anti_squashed() - 1.0 / (1.0 - r)) <= kSquashAnalyticTol,
          "closed form");
  // The printed values carry three digits, so the comparison is relative.
  v.check(std::abs(sv.squashed() / 0.571 - 1.0) <= kSquashAnalyticTol, "analytic squashed/n " + fmt(sv.squashed(), "%.5f"));
  v.check(std::abs(sv.anti_squashed() / 4.05 - 1.0) <= kSquashAnalyticTol,
          "analytic anti-squashed/n " + fmt(sv.anti_squashed(), "%.5f"));
  const auto& sq = entry(run.summary, "squashed_variance_ratio");
  const auto& an = entry(run.summary, "anti_squashed_variance_ratio");
  v.check(std::abs(value(sq) / sv.squashed() - 1.0) <= kSquashMonteCarloTol, "MC squashed " + fmt(value(sq)));
  v.check(std::abs(value(an) / sv.anti_squashed() - 1.0) <= kSquashMonteCarloTol, "MC anti " + fmt(value(an)));
  v.check(run.elapsed < 300.0, "runtime " + fmt(run.elapsed, "%.0f") + " s");
}

void c2(const SqueezeRun& run, Verdict& v) {
  const double r = value(entry(run.summary, "squeezing_gain_r"));
  const double db = value(entry(run.summary, "squashing_db"));
  v.check(std::abs(r - kGainTarget) <= kGainTol, "r " + fmt(r, "%.3f"));
  v.check(std::abs(db - kDbTarget) <= kDbTol, "dB " + fmt(db, "%.2f"));
}

void c3(Verdict& v) {
  std::vector<double> grid;
  for (int i = -10; i <= 10; ++i) grid.push_back(300.0 * i);
  const ojson cfg = {{"schema", kConfigSchema},
                     {"scenario", "scan-detuning"},
                     {"params", base_params(570.0, 953.0, 0.0, 0.0)},
                     {"analysis", {{"delta_hz", grid}}}};
  double elapsed = 0.0;
  const auto s = run_summary(cfg, elapsed);
  const double gap = value(entry(s, "min_ridge_gap_hz"));
  v.check(std::abs(gap / 953.0 - 1.0) <= kRidgeGapTol, "min gap " + fmt(gap, "%.1f") + " Hz");
  v.check(elapsed < 900.0, "runtime " + fmt(elapsed, "%.0f") + " s");
}

void c4(Verdict& v) {
  const ojson cfg = {{"schema", kConfigSchema},
                     {"scenario", "quench"},
                     {"preset", "fig3a-top"},
                     {"simulation", {{"n_traj", 1000}}},
                     {"analysis", {{"overlay_threshold", kOverlayFraction}}}};
  double elapsed = 0.0;
  const auto s = run_summary(cfg, elapsed);
  // Oracle: Re Lambda on the detuning branch at the preset point.
  const auto c = parse_config(cfg);
  const double f_an = rad_to_hz(lambda(c.params, ResonanceBranch::detuning()).real());
  const double f = value(entry(s, "exchange_frequency_hz"));
  v.check(std::abs(f / f_an - 1.0) <= kExchangeTol, "exchange " + fmt(f, "%.1f") + " vs " + fmt(f_an, "%.1f") + " Hz");
  const double anti = s["diagnostics"]["antiphase_correlation"].get<double>();
  v.check(anti < -0.5, "antiphase corr " + fmt(anti, "%.3f"));
  // Means averaged over one 2 Delta_omega period, the resolution of the rotating-wave curves.
  for (const char* name : {"overlay_fraction_b1", "overlay_fraction_b2"}) {
    const double frac = value(entry(s, name));
    v.check(frac >= kOverlayFraction, std::string(name) + " " + fmt(frac, "%.4f") + " within " +
                                          fmt(kOverlaySigmas, "%.0f") + " SE");
  }
  v.note("per record " + fmt(value(entry(s, "overlay_fraction_b1_per_record")), "%.4f") + ", " +
         fmt(value(entry(s, "overlay_fraction_b2_per_record")), "%.4f"));
}

void c5(Verdict& v) {
  ModeParams p;
  p.Omega1 = hz_to_rad(27e3);
  p.Omega2 = hz_to_rad(33e3);
  p.gamma = hz_to_rad(474.0);
  p.g = hz_to_rad(357.0);
  p.kd = constants::pi / 2;
  const auto br = ResonanceBranch::detuning();
  double worst = 0.0;
  for (double sign : {1.0, -1.0}) {
    p.delta_omega = delta_omega_for(p, br, sign * p.g);
    v.check(eigen_solution(p, br).exceptional, sign > 0 ? "EP at +g" : "EP at -g");
    for (int k = 0; k <= 16; ++k) {
      const double eps = std::pow(10.0, -6.0 + 0.25 * k);
      p.delta_omega = delta_omega_for(p, br, sign * p.g * (1.0 + eps));
      // |Lambda| = g sqrt(2 eps) at leading order.
      const double ratio = std::abs(lambda(p, br)) / (p.g * std::sqrt(2.0 * eps));
      worst = std::max(worst, std::abs(ratio - 1.0));
      if (eigen_solution(p, br).exceptional) v.check(false, "flagged off the EP at eps " + fmt(eps));
    }
  }
  v.check(worst <= kEpSqrtTol, "sqrt scaling max dev " + fmt(worst, "%.2e"));
}

void c6(Verdict& v) {
  ModeParams p;
  p.Omega1 = hz_to_rad(27e3);
  p.Omega2 = hz_to_rad(33e3);
  p.gamma = hz_to_rad(466.0);
  p.g = hz_to_rad(276.0);
  p.delta_omega = delta_omega_for(p, ResonanceBranch::detuning(), 0.0);
  std::vector<double> grid;
  for (int i = 0; i <= 720; ++i) grid.push_back(-constants::pi + constants::two_pi * i / 720.0);
  const auto locus = eigenfrequency_locus(p, grid);
  double worst = 0.0, worst_matrix = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    worst = std::max(worst, std::abs(std::abs(locus[i]) - p.g) / p.g);
    ModeParams q = p;
    q.kd = grid[i];
    // Independent route: the eigenvalue of the dynamical matrix.
    worst_matrix = std::max(worst_matrix, std::abs(std::abs(lambda(q, ResonanceBranch::detuning())) - p.g) / p.g);
  }
  v.check(worst <= kCircleExact && worst_matrix <= kCircleExact,
          "|dOmega| = g to " + fmt(std::max(worst, worst_matrix), "%.1e"));

  const ojson cfg = {{"schema", kConfigSchema},
                     {"scenario", "distance-scan"},
                     {"preset", "fig4"},
                     {"simulation", {{"output_rate_hz", 8000.0}}}};
  double elapsed = 0.0;
  const auto s = run_summary(cfg, elapsed);
  const auto re = entries(s, "splitting_real_hz"), im = entries(s, "splitting_neg_imag_hz");
  const double g_hz = 276.0;
  double worst_re = 0.0, worst_im = 0.0;
  for (std::size_t i = 0; i < re.size(); ++i) {
    const double kd = (*re[i])["at"]["kd_pi"].get<double>() * constants::pi;
    worst_re = std::max(worst_re, std::abs(value(*re[i]) - g_hz * std::cos(kd)) / g_hz);
    worst_im = std::max(worst_im, std::abs(value(*im[i]) - g_hz * std::sin(kd)) / g_hz);
  }
  v.check(re.size() == 8 && im.size() == 8, std::to_string(re.size()) + " distances");
  v.check(worst_re <= kCircleFitTol, "Re max dev " + fmt(worst_re, "%.3f") + " g");
  v.check(worst_im <= kCircleFitTol, "-Im max dev " + fmt(worst_im, "%.3f") + " g");
}

void c7_one(double delta_hz, Verdict& v) {
  const std::vector<double> kd = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const ojson cfg = {{"schema", kConfigSchema},
                     {"scenario", "kd-estimate"},
                     {"params", base_params(100.0, 300.0, 0.5, delta_hz)},
                     {"simulation", {{"duration_s", 0.25}, {"n_traj", 60}, {"output_rate_hz", 20000.0}}},
                     {"analysis", {{"kd_pi", kd}}}};
  double elapsed = 0.0;
  const auto s = run_summary(cfg, elapsed);
  double worst = 0.0;
  const auto est = entries(s, "kd_estimate_pi");
  for (const auto* e : est) {
    double d = std::fmod(std::abs(value(*e) - (*e)["at"]["kd_pi"].get<double>()), 1.0);
    worst = std::max(worst, std::min(d, 1.0 - d));
  }
  const std::string tag = "delta " + fmt(delta_hz, "%+.0f") + " Hz: ";
  v.check(est.size() == kd.size() && worst <= kKdTol, tag + "kd max err " + fmt(worst, "%.3f") + " pi");
  const double slope = value(entry(s, "mean_phase_slope"));
  const double target = -2.0 * (delta_hz > 0 ? 1.0 : -1.0);
  v.check(std::abs(slope / target - 1.0) <= kSlopeTol, tag + "slope " + fmt(slope, "%.3f"));
}

void c7(Verdict& v) {
  c7_one(2000.0, v);
  c7_one(-2000.0, v);
}

void c8(Verdict& v) {
  std::mt19937_64 rng(20240917);
  const auto br = ResonanceBranch::detuning();

  // (a) quadrature against the projector and printed closed forms.
  double worst_a = 0.0;
  int drawn = 0;
  while (drawn < 100) {
    const ModeParams p = random_params(rng);
    const Mat2 M = dynamical_matrix(p, br);
    if (p.gamma - std::abs(lambda_of(M).imag()) < 0.05 * p.gamma) continue;  // unstable or marginal
    if (std::abs(lambda_of(M)) < 1e-3 * p.gamma) continue;                     // exceptional point
    bool flagged = false;
    double worst_here = 0.0;
    for (double s : {-2.5, -0.4, 0.0, 0.7, 3.0}) {
      const double tau = s / p.gamma;
      const auto cf = g1_closed_form_12(p, tau);
      if (cf.flagged) {
        flagged = true;
        break;
      }
      const double scale = p.n1 + p.n2;
      const cplx q = g1(p, 1, 2, tau);
      worst_here = std::max(worst_here, std::abs(cf.value - q) / scale);
      for (int j = 1; j <= 2; ++j)
        for (int k = 1; k <= 2; ++k)
          worst_here = std::max(worst_here, std::abs(g1_analytic(p, j, k, tau) - g1(p, j, k, tau)) / scale);
    }
    if (flagged) continue;
    worst_a = std::max(worst_a, worst_here);
    ++drawn;
  }
  v.check(worst_a < kQuadratureTol, "(a) " + fmt(worst_a, "%.1e"));

  // (b) closed-form propagator against the matrix exponential.
  const std::vector<ResonanceBranch> branches = {ResonanceBranch::detuning(), ResonanceBranch::sum(),
                                                 ResonanceBranch::single_mode(1), ResonanceBranch::single_mode(2)};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_b = 0.0;
  for (int i = 0; i < 1000; ++i) {
    ModeParams p = random_params(rng);
    const auto& b = branches[i % branches.size()];
    p.delta_omega = delta_omega_for(p, b, hz_to_rad(3000.0 * (u(rng) - 0.5)));
    const double tau = std::pow(10.0, -5.0 + 3.0 * u(rng));
    const Mat2 M = dynamical_matrix(p, b);
    const Mat2 ref = (0.5 * I_unit * tau * M).eval().exp();
    const Mat2 U = evolution_matrix(M, tau);
    worst_b = std::max(worst_b, (U - ref).cwiseAbs().maxCoeff() / std::max(1.0, ref.cwiseAbs().maxCoeff()));
  }
  v.check(worst_b < kExpmTol, "(b) " + fmt(worst_b, "%.1e"));

  // (c) det U = 1; unitarity when the coupling is reciprocal (kd = 0).
  double worst_det = 0.0, worst_unit = 0.0;
  for (int i = 0; i < 1000; ++i) {
    ModeParams p = random_params(rng);
    const double tau = std::pow(10.0, -5.0 + 3.0 * u(rng));
    const auto c = evolution(p, br, tau);
    // Growing solutions lose digits to cancellation, relative to |U|^2.
    const double scale = std::max({1.0, std::norm(c.alpha1 * c.alpha2), std::norm(c.beta1 * c.beta2)});
    worst_det = std::max(worst_det, std::abs(c.det() - 1.0) / std::sqrt(scale));
    p.kd = 0.0;
    const Mat2 U = evolution_matrix(p, br, tau);
    worst_unit = std::max(worst_unit, (U.adjoint() * U - Mat2::Identity()).cwiseAbs().maxCoeff());
  }
  v.check(worst_det < kUnitTol, "(c) det " + fmt(worst_det, "%.1e"));
  v.check(worst_unit < kUnitTol, "(c) unitarity " + fmt(worst_unit, "%.1e"));

  // (d) gamma = 0: |b1|^2 + |b2|^2 on the exchange branch, |b1|^2 - |b2|^2 on the pair branch.
  ModeParams p;
  p.Omega1 = hz_to_rad(27e3);
  p.Omega2 = hz_to_rad(33e3);
  p.gamma = 0.0;
  p.g = hz_to_rad(700.0);
  p.kd = 0.0;
  const Vec2 b0(cplx(0.8, -0.1), cplx(0.25, 0.4));
  std::vector<double> times;
  for (int i = 1; i <= 100; ++i) times.push_back(i * constants::two_pi / p.g);
  double drift = 0.0;
  for (int which = 0; which < 2; ++which) {
    const auto b = which == 0 ? ResonanceBranch::detuning() : ResonanceBranch::sum();
    const double sgn = which == 0 ? 1.0 : -1.0;
    p.delta_omega = delta_omega_for(p, b, (which == 0 ? 2.0 : 3.0) * p.g);
    const double q0 = std::norm(b0(0)) + sgn * std::norm(b0(1));
    for (const auto& x : integrate_envelope(p, b, b0, times))
      drift = std::max(drift, std::abs((std::norm(x(0)) + sgn * std::norm(x(1))) / q0 - 1.0));
  }
  v.check(drift < kDriftTol, "(d) drift " + fmt(drift, "%.1e"));
}

void c9(Verdict& v) {
  ModeParams p;
  p.Omega1 = hz_to_rad(27e3);
  p.Omega2 = hz_to_rad(33e3);
  p.gamma = hz_to_rad(570.0);
  p.g = hz_to_rad(724.0);
  p.kd = 0.0;
  p.n1 = p.n2 = 1e4;
  EnsembleSettings e;
  e.duration = 0.2;
  e.burn_in = 10.0 / p.gamma;
  e.n_traj = 20;
  e.seed = kDefaultSeed;
  const double tol = kPinningFraction * 570.0;
  const double res = 570.0 / 10.0, hw = 1500.0;
  auto peaks = [&](const ModeParams& q) { return lab_peaks(q, SimContext{}, e, res, hw, 27e3, 33e3); };

  ModeParams mod = p;
  mod.delta_omega = hz_to_rad(20e3);  // far from the 6 kHz trap-frequency difference
  const auto m = peaks(mod);
  const double dm1 = m.fit1.f0 - 27e3, dm2 = m.fit2.f0 - 33e3;
  v.check(std::abs(dm1) < tol && std::abs(dm2) < tol,
          "modulated shifts " + fmt(dm1, "%.1f") + ", " + fmt(dm2, "%.1f") + " Hz");

  ModeParams st = p;
  st.delta_omega = 0.0;
  const auto s = peaks(st);
  const auto [w1, w2] = static_mode_frequencies(st);
  const double ds1 = s.fit1.f0 - 27e3, ds2 = s.fit2.f0 - 33e3;
  v.check(std::abs(ds1) > tol && std::abs(ds2) > tol,
          "static shifts " + fmt(ds1, "%.1f") + ", " + fmt(ds2, "%.1f") + " Hz");
  const double e1 = s.fit1.f0 - rad_to_hz(w1), e2 = s.fit2.f0 - rad_to_hz(w2);
  v.check(std::abs(e1) < tol && std::abs(e2) < tol,
          "static vs normal modes " + fmt(e1, "%.1f") + ", " + fmt(e2, "%.1f") + " Hz");
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](const char* id, const char* title, const std::function<void(Verdict&)>& body) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body(v);
    } catch (const std::exception& ex) {
      v.check(false, std::string("exception: ") + ex.what());
    }
    if (!v.pass) ++failed;
    std::printf("%s %s %s (%s) [%.0f s]\n", v.pass ? "PASS" : "FAIL", id, title, v.detail.str().c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };

  SqueezeRun squeeze;
  std::string squeeze_error;
  try {
    squeeze = squeeze_run();
  } catch (const std::exception& ex) {
    squeeze_error = ex.what();
  }
  auto needs_squeeze = [&](void (*f)(const SqueezeRun&, Verdict&)) {
    return [&, f](Verdict& v) {
      if (!squeeze_error.empty()) throw std::runtime_error(squeeze_error);
      f(squeeze, v);
    };
  };
  report("C1", "squashing ratios", needs_squeeze(c1));
  report("C2", "squeezing gain and dB", needs_squeeze(c2));
  report("C3", "avoided crossing", c3);
  report("C4", "energy exchange", c4);
  report("C5", "exceptional points", c5);
  report("C6", "complex eigenfrequency circle", c6);
  report("C7", "kd estimation closure", c7);
  report("C8", "oracle equivalence", c8);
  report("C9", "frequency pinning", c9);
  std::printf("%d of 9 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
