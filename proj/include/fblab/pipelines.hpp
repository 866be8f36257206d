#pragma once

// End-to-end estimation chains shared by the command-line scenarios and the
// acceptance checks: simulate, move to the rotating frame, estimate, and pair
// each estimate with its analytic counterpart.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fblab/correlations.hpp"
#include "fblab/langevin.hpp"
#include "fblab/rwa.hpp"
#include "fblab/sigproc.hpp"

namespace fblab {

struct EnsembleSettings {
  double duration = 0.0;  // recorded span per trajectory, after burn-in
  double burn_in = 0.0;
  std::size_t n_traj = 1;
  std::uint64_t seed = 1;
  double dt = 0.0;  // 0 selects default_dt
  double steps_per_period = 200.0;
  std::size_t record_stride = 0;  // 0 keeps about ten samples per fastest period
  double output_rate = 0.0;       // Hz, decimated rotating-frame rate; 0 keeps the record rate
  ForceModel force = ForceModel::linearized;
  unsigned threads = 1;
};

inline Protocol ensemble_protocol(const EnsembleSettings& e) {
  if (!(e.duration > 0.0)) throw config_error("simulation: duration must be positive");
  if (!(e.burn_in >= 0.0)) throw config_error("simulation: burn_in must be non-negative");
  return Protocol::single(e.burn_in + e.duration);
}

inline SimSettings sim_settings(const ModeParams& p, const Protocol& pr, const EnsembleSettings& e) {
  SimSettings s;
  s.dt = e.dt > 0.0 ? e.dt : default_dt(p, pr, e.steps_per_period);
  s.n_traj = e.n_traj;
  s.seed = e.seed;
  s.record_start = e.burn_in;
  s.force = e.force;
  s.threads = e.threads;
  if (e.record_stride > 0) {
    s.record_stride = e.record_stride;
  } else {
    const double period = constants::two_pi / max_frequency(p, pr);
    s.record_stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(period / (10.0 * s.dt))));
  }
  return s;
}

inline std::size_t decimation_factor(double record_rate, double output_rate) {
  if (!(output_rate > 0.0) || output_rate >= record_rate) return 1;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(record_rate / output_rate)));
}

// Smallest power of two reaching the requested resolution, capped by the record.
inline std::size_t segment_for(double fs, double resolution_hz, std::size_t available) {
  if (available < 8) throw config_error("segment_for: record shorter than eight samples");
  std::size_t n = 8;
  while (static_cast<double>(n) < fs / resolution_hz && 2 * n <= available) n *= 2;
  return n;
}

struct RotatingEnsemble {
  std::vector<ComplexAmplitudeSeries> b1, b2;  // b2 empty on a single-mode branch
  ResonanceBranch branch;
  double dt = 0.0;
  double record_rate = 0.0;  // Hz, before decimation
};

// Single-mode frame: b_j = c_j e^{i Delta_omega t/2}, the pair (b_j, b_j*).
inline RotatingEnsemble rotating_ensemble(const ModeParams& p, const SimContext& ctx, const ResonanceBranch& br,
                                          const EnsembleSettings& e) {
  const Protocol pr = ensemble_protocol(e);
  const SimSettings s = sim_settings(p, pr, e);
  const LangevinIntegrator integ(p, ctx, pr, s);
  const double rdt = integ.record_dt(), t0 = integ.t0();
  const std::size_t factor = decimation_factor(1.0 / rdt, e.output_rate);
  RotatingEnsemble r;
  r.branch = br;
  r.record_rate = 1.0 / rdt;
  simulate_each(p, ctx, pr, s, [&](std::size_t, Trajectory&& tr) {
    if (br.tag == BranchTag::single_mode) {
      const auto& z = br.j == 1 ? tr.z1 : tr.z2;
      auto c = lab_amplitude(z, ctx.mass, p.Omega(br.j), t0, rdt);
      c = demodulate(std::move(c), rad_to_hz(0.5 * p.delta_omega), 1);
      r.b1.push_back(decimate(c, factor));
    } else {
      auto [c1, c2] = to_rotating_frame(tr.z1, tr.z2, p, ctx.mass, t0, rdt, br);
      r.b1.push_back(decimate(c1, factor));
      r.b2.push_back(decimate(c2, factor));
    }
  });
  r.dt = r.b1.front().dt;
  return r;
}

inline std::vector<CSeries> raw_series(const std::vector<ComplexAmplitudeSeries>& s) {
  std::vector<CSeries> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(x.x);
  return out;
}

// Two-sided Welch spectrum accumulated over an ensemble.
inline PsdEstimate ensemble_psd(const std::vector<ComplexAmplitudeSeries>& s, double resolution_hz) {
  const double fs = 1.0 / s.front().dt;
  const std::size_t n = segment_for(fs, resolution_hz, s.front().size());
  WelchAccumulator acc(n, 0.5, fs, true);
  for (const auto& x : s) acc.add(x.x);
  return acc.result();
}

// ---------------------------------------------------------------------------
// Two-mode squashing at a resonant point.

struct SqueezeResult {
  double n_ref = 0.0;  // uncoupled reference occupation (n1 + n2)/2
  double squashed = 0.0, anti_squashed = 0.0;  // simulated, over n_ref
  double squashed_se = 0.0, anti_squashed_se = 0.0;
  // Analytic counterparts of the phase-aligned estimator, (g11 + g22)/2 -+ |g12(0)|.
  double squashed_analytic = 0.0, anti_squashed_analytic = 0.0;
  StationaryVariances variances;  // z_plus, z_minus with Re g12(0)
  double delta_phi_hat = 0.0;
  double delta_phi_analytic = 0.0;  // arg <b1 b2*>
  PhaseLockHistogram histogram;
  SqueezingGain gain, gain_analytic;
  PsdEstimate psd_sum, psd_diff;  // in-phase and out-of-phase combinations
  EmpiricalG2 g2;                 // intensity cross-correlation of b1, b2
  std::vector<double> g2_analytic;
  std::size_t n_traj = 0;
  std::size_t n_samples = 0;
};

inline SqueezeResult squeeze_pipeline(const ModeParams& p, const SimContext& ctx, const EnsembleSettings& e,
                                      double resolution_hz = 0.0, int n_bins = 36, double max_lag_s = 0.0) {
  if (e.n_traj < 2) throw config_error("squeeze: at least two trajectories required");
  SqueezeResult r;
  r.n_ref = 0.5 * (p.n1 + p.n2);
  r.variances = stationary_variances(p);
  const double g11 = g1(p, 1, 1, 0.0).real(), g22 = g1(p, 2, 2, 0.0).real();
  const cplx g12 = g1(p, 1, 2, 0.0);
  r.squashed_analytic = (0.5 * (g11 + g22) - std::abs(g12)) / r.n_ref;
  r.anti_squashed_analytic = (0.5 * (g11 + g22) + std::abs(g12)) / r.n_ref;
  r.delta_phi_analytic = std::arg(std::conj(g12));
  r.variances.z_plus /= r.n_ref;
  r.variances.z_minus /= r.n_ref;
  r.variances.sum /= r.n_ref;
  r.variances.sum_closed_form /= r.n_ref;
  r.gain_analytic = squeezing_gain(r.variances.squashed(), r.variances.anti_squashed(), p);

  auto ens = rotating_ensemble(p, ctx, ResonanceBranch::detuning(), e);
  subtract_ensemble_mean(ens.b1);
  subtract_ensemble_mean(ens.b2);
  r.n_traj = ens.b1.size();
  r.n_samples = ens.b1.front().size();
  cplx acc = 0.0;
  for (std::size_t t = 0; t < ens.b1.size(); ++t)
    for (std::size_t k = 0; k < ens.b1[t].size(); ++k) acc += ens.b1[t].x[k] * std::conj(ens.b2[t].x[k]);
  r.delta_phi_hat = std::arg(acc);
  r.histogram = phase_lock_histogram(raw_series(ens.b1), raw_series(ens.b2), n_bins);
  const double lag_s = max_lag_s > 0.0 ? max_lag_s : 3.0 / p.gamma;
  r.g2 = empirical_g2(raw_series(ens.b1), raw_series(ens.b2), ens.dt,
                      static_cast<std::size_t>(std::ceil(lag_s / ens.dt)));
  r.g2_analytic = normalized_g2_series(p, r.g2.tau).value;
  const cplx rot = std::polar(1.0, -r.delta_phi_hat);
  std::vector<double> sp, sm;
  std::vector<ComplexAmplitudeSeries> sum, diff;
  for (std::size_t t = 0; t < ens.b1.size(); ++t) {
    double a = 0.0, b = 0.0;
    ComplexAmplitudeSeries u = ens.b1[t], v = ens.b1[t];
    for (std::size_t k = 0; k < ens.b1[t].size(); ++k) {
      const cplx x = ens.b1[t].x[k] * rot, y = ens.b2[t].x[k];
      u.x[k] = (x + y) / std::sqrt(2.0);
      v.x[k] = (x - y) / std::sqrt(2.0);
      a += std::norm(u.x[k]);
      b += std::norm(v.x[k]);
    }
    const double n = static_cast<double>(ens.b1[t].size());
    sp.push_back(a / n / r.n_ref);
    sm.push_back(b / n / r.n_ref);
    sum.push_back(std::move(u));
    diff.push_back(std::move(v));
  }
  auto mean_se = [](const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double v = 0.0;
    for (double y : x) v += (y - m) * (y - m);
    return std::pair<double, double>{m, std::sqrt(v / (n - 1.0) / n)};
  };
  std::tie(r.anti_squashed, r.anti_squashed_se) = mean_se(sp);
  std::tie(r.squashed, r.squashed_se) = mean_se(sm);
  r.gain = squeezing_gain(r.squashed, r.anti_squashed, p);
  const double res = resolution_hz > 0.0 ? resolution_hz : rad_to_hz(p.gamma) / 10.0;
  r.psd_sum = ensemble_psd(sum, res);
  r.psd_diff = ensemble_psd(diff, res);
  return r;
}

// ---------------------------------------------------------------------------
// Complex eigenfrequency splitting from reconstructed eigenmode spectra.

struct EigenmodeSpectra {
  PsdEstimate psd_plus, psd_minus;
  BreitWignerFit fit_plus, fit_minus;
  bool fit_ok = false;
  std::string fit_message;
  cplx splitting = 0.0;           // measured Omega_+ - Omega_-, rad/s
  cplx splitting_analytic = 0.0;  // continuous branch, sign fixed by the label rule
  ModeSolution modes;
  double delta_phi_hat = 0.0;
  bool locked = false;
  bool flipped = false;
  double contrast = 0.0;
  std::string warning;
  PhaseLockHistogram histogram;
};

// Lambda with the sign that makes n+ the narrow mode for sin(kd) > 0.
inline cplx labelled_splitting(const ModeParams& p, const ResonanceBranch& br = ResonanceBranch::detuning()) {
  const cplx L = lambda(p, br);
  const double s = std::sin(p.kd);
  if (L.imag() * s > 0.0) return -L;
  if (L.imag() == 0.0 && L.real() * std::cos(p.kd) < 0.0) return -L;
  return L;
}

inline EigenmodeSpectra eigenmode_spectra(const ModeParams& p, const SimContext& ctx, const EnsembleSettings& e,
                                          double resolution_hz = 0.0, double fit_halfwidth_hz = 0.0,
                                          int n_bins = 36) {
  if (e.n_traj < 2) throw config_error("distance-scan: at least two trajectories required");
  EigenmodeSpectra r;
  const auto br = ResonanceBranch::detuning();
  r.modes = eigen_solution(p, br);
  r.splitting_analytic = labelled_splitting(p, br);
  auto ens = rotating_ensemble(p, ctx, br, e);
  subtract_ensemble_mean(ens.b1);
  subtract_ensemble_mean(ens.b2);
  const auto rec = reconstruct_eigenmodes(ens.b1, ens.b2, p.kd, n_bins);
  r.delta_phi_hat = rec.delta_phi_hat;
  r.locked = rec.locked;
  r.flipped = rec.flipped;
  r.contrast = rec.contrast;
  r.warning = rec.warning;
  r.histogram = rec.histogram;
  const double narrow = std::max(std::min(r.modes.linewidth_plus(), r.modes.linewidth_minus()), 0.05 * p.gamma);
  const double res = resolution_hz > 0.0 ? resolution_hz : rad_to_hz(narrow) / 10.0;
  r.psd_plus = ensemble_psd(rec.n_plus, res);
  r.psd_minus = ensemble_psd(rec.n_minus, res);
  const double hw = fit_halfwidth_hz > 0.0 ? fit_halfwidth_hz : rad_to_hz(2.0 * (p.gamma + p.g));
  try {
    r.fit_plus = breit_wigner_fit(r.psd_plus, -hw, hw);
    r.fit_minus = breit_wigner_fit(r.psd_minus, -hw, hw);
    r.fit_ok = r.fit_plus.converged && r.fit_minus.converged;
    r.splitting = cplx(constants::two_pi * (r.fit_plus.f0 - r.fit_minus.f0),
                       constants::pi * (r.fit_plus.width - r.fit_minus.width));
  } catch (const fit_error& ex) {
    r.fit_ok = false;
    r.fit_message = ex.what();
  }
  return r;
}

// ---------------------------------------------------------------------------
// kd from the phase of the filtered intensity cross-correlation.

struct KdEstimate {
  EmpiricalG2 g2;
  std::vector<double> g2_analytic;
  G2PhaseFit fit;
  CosinePhases phases_analytic;
  double law_phase = 0.0;  // spectrally separated law for the mean phase
  double kd = 0.0;         // estimate in [0, pi)
  double kd_true = 0.0;    // kd reduced to [0, pi)
  PsdEstimate psd1, psd2;  // rotating-frame spectra at resolution gamma/10
};

inline KdEstimate kd_estimate(const ModeParams& p, const SimContext& ctx, const EnsembleSettings& e,
                              double max_lag_s = 0.0, const G2FitOptions& opt = {}) {
  const auto br = ResonanceBranch::detuning();
  const double delta = effective_detuning(p, br);
  if (delta == 0.0) throw config_error("kd-estimate: requires a nonzero detuning");
  KdEstimate r;
  auto ens = rotating_ensemble(p, ctx, br, e);
  if (ens.b1.size() >= 2) {
    subtract_ensemble_mean(ens.b1);
    subtract_ensemble_mean(ens.b2);
  }
  const double lag_s = max_lag_s > 0.0 ? max_lag_s : 2.0 * opt.window_gamma / p.gamma;
  const auto L = static_cast<std::size_t>(std::ceil(lag_s / ens.dt));
  r.g2 = empirical_g2(raw_series(ens.b1), raw_series(ens.b2), ens.dt, L);
  r.psd1 = ensemble_psd(ens.b1, rad_to_hz(p.gamma) / 10.0);
  r.psd2 = ensemble_psd(ens.b2, rad_to_hz(p.gamma) / 10.0);
  r.g2_analytic = normalized_g2_series(p, r.g2.tau, br).value;
  r.fit = filtered_g2_fit(r.g2.tau, r.g2.value, delta, p.gamma, opt);
  r.phases_analytic = cosine_phases(p, br);
  r.law_phase = gbar_prime(p, br);
  r.kd = kd_from_phase(r.fit.B_mean, br, delta);
  r.kd_true = std::fmod(p.kd, constants::pi);
  if (r.kd_true < 0.0) r.kd_true += constants::pi;
  return r;
}

// Least-squares slope of the mean phase against kd, after unwrapping.
inline double phase_slope(const std::vector<double>& kd, const std::vector<double>& phase) {
  if (kd.size() < 2 || kd.size() != phase.size()) throw std::invalid_argument("phase_slope: need two points");
  std::vector<double> u = phase;
  for (std::size_t i = 1; i < u.size(); ++i) u[i] = u[i - 1] + wrap_phase(phase[i] - phase[i - 1]);
  const double n = static_cast<double>(kd.size());
  const double mx = std::accumulate(kd.begin(), kd.end(), 0.0) / n;
  const double my = std::accumulate(u.begin(), u.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < kd.size(); ++i) {
    sxy += (kd[i] - mx) * (u[i] - my);
    sxx += (kd[i] - mx) * (kd[i] - mx);
  }
  return sxy / sxx;
}

// ---------------------------------------------------------------------------
// Lab-frame spectrogram against the optical detuning.

struct ScanRow {
  double delta_omega = 0.0;  // rad/s
  double delta = 0.0;        // effective detuning, rad/s
  std::vector<double> density;
  std::vector<double> ridges;  // fitted peak frequencies near Omega_1, Hz
  std::vector<double> ridges_analytic;
  double gap = std::numeric_limits<double>::quiet_NaN();  // Hz, when two ridges are resolved
  double gap_analytic = 0.0;                              // Re Lambda / 2 pi
  std::string fit_message;
};

struct ScanResult {
  std::vector<double> freq;  // Hz
  std::vector<ScanRow> rows;
  double min_gap = std::numeric_limits<double>::quiet_NaN();
  double min_gap_delta = 0.0;
  double g_hyperbola = std::numeric_limits<double>::quiet_NaN();  // Hz, fit of sqrt(delta^2 + g^2)
  double bin_width = 0.0;
};

struct ScanSettings {
  EnsembleSettings ens;
  double f_lo = 0.0, f_hi = 0.0;  // Hz; both zero selects the trap-frequency band
  double resolution_hz = 0.0;
  double ridge_halfwidth_hz = 0.0;
};

inline ScanResult spectrogram_scan(const ModeParams& base, const SimContext& ctx,
                                   const std::vector<double>& delta_omega_grid, const ScanSettings& s) {
  if (delta_omega_grid.empty()) throw config_error("scan-detuning: empty detuning grid");
  ScanResult out;
  const double f1 = rad_to_hz(base.Omega1), f2 = rad_to_hz(base.Omega2);
  const double gam = rad_to_hz(base.gamma);
  double f_lo = s.f_lo, f_hi = s.f_hi;
  if (f_lo == 0.0 && f_hi == 0.0) {
    const double m = 3.0 * (rad_to_hz(base.g) + gam);
    f_lo = std::min(f1, f2) - m;
    f_hi = std::max(f1, f2) + m;
  }
  if (!(f_hi > f_lo)) throw config_error("scan-detuning: empty frequency window");
  const double res = s.resolution_hz > 0.0 ? s.resolution_hz : gam / 20.0;
  const double hw = s.ridge_halfwidth_hz > 0.0 ? s.ridge_halfwidth_hz : 2.0 * rad_to_hz(base.g) + 2.0 * gam;
  std::vector<double> ds, gaps;
  for (std::size_t i = 0; i < delta_omega_grid.size(); ++i) {
    ModeParams p = base;
    p.delta_omega = delta_omega_grid[i];
    EnsembleSettings e = s.ens;
    e.seed = s.ens.seed + 7919u * i;
    const Protocol pr = ensemble_protocol(e);
    const SimSettings ss = sim_settings(p, pr, e);
    const LangevinIntegrator integ(p, ctx, pr, ss);
    const double fs = 1.0 / integ.record_dt();
    const std::size_t n = segment_for(fs, res, integ.n_records());
    WelchAccumulator acc(n, 0.5, fs, false);
    simulate_each(p, ctx, pr, ss, [&](std::size_t, Trajectory&& tr) {
      acc.add(tr.z1);
      acc.add(tr.z2);
    });
    const auto psd = acc.result();
    ScanRow row;
    row.delta_omega = p.delta_omega;
    row.delta = effective_detuning(p, ResonanceBranch::detuning());
    if (out.freq.empty()) {
      for (double f : psd.freq)
        if (f >= f_lo && f <= f_hi) out.freq.push_back(f);
      out.bin_width = psd.bin_width();
    }
    for (std::size_t k = 0; k < psd.freq.size(); ++k)
      if (psd.freq[k] >= f_lo && psd.freq[k] <= f_hi) row.density.push_back(psd.density[k]);
    // Lab frequencies of the dressed modes near Omega_1: Omega_1 - delta/2 -+ Re Lambda/2.
    const cplx L = lambda(p, ResonanceBranch::detuning());
    const double c = rad_to_hz(p.Omega1 - 0.5 * row.delta);
    row.ridges_analytic = {c - 0.5 * rad_to_hz(std::abs(L.real())), c + 0.5 * rad_to_hz(std::abs(L.real()))};
    row.gap_analytic = rad_to_hz(std::abs(L.real()));
    try {
      const auto fit = fit_lorentzians(psd, f1 - hw, f1 + hw, 2, gam);
      auto model = [&](double f) {
        double v = fit.offset;
        for (const auto& pk : fit.peaks) v += pk.amplitude / ((f - pk.f0) * (f - pk.f0) + 0.25 * pk.width * pk.width);
        return v;
      };
      for (const auto& pk : fit.peaks) row.ridges.push_back(pk.f0);
      // Two ridges count as resolved when the fitted spectrum dips between them.
      bool resolved = fit.converged && fit.peaks.size() == 2;
      if (resolved) {
        const double a = row.ridges[0], b = row.ridges[1];
        resolved = a > f1 - hw && b < f1 + hw && model(0.5 * (a + b)) < 0.9 * std::min(model(a), model(b));
      }
      if (resolved) {
        row.gap = row.ridges[1] - row.ridges[0];
        ds.push_back(row.delta);
        gaps.push_back(row.gap);
        if (!(row.gap >= out.min_gap)) {
          out.min_gap = row.gap;
          out.min_gap_delta = row.delta;
        }
      }
    } catch (const fit_error& ex) {
      row.fit_message = ex.what();
    }
    out.rows.push_back(std::move(row));
  }
  // gap^2 = (delta/2 pi)^2 + g^2 is linear in the unknown g^2.
  if (!gaps.empty()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < gaps.size(); ++i) acc += gaps[i] * gaps[i] - std::pow(rad_to_hz(ds[i]), 2);
    const double g2v = acc / static_cast<double>(gaps.size());
    if (g2v > 0.0) out.g_hyperbola = std::sqrt(g2v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quench: cooled particle 1 exchanges occupation with particle 2.

struct QuenchAnalysis {
  std::vector<double> b1_analytic, b2_analytic;
  double n1_cooled = 0.0;             // analytic start value n1 gamma/(gamma + gamma_fb)
  // Share of points within 3 standard errors, on the coarse-grained means
  // when the result carries them; the raw per-record shares alongside.
  double overlay_fraction_1 = 0.0;
  double overlay_fraction_2 = 0.0;
  double overlay_fraction_raw_1 = 0.0;
  double overlay_fraction_raw_2 = 0.0;
  std::vector<double> b1_coarse_analytic, b2_coarse_analytic;
  DampedCosineFit exchange;           // fit of <|b1|^2> - <|b2|^2>
  double exchange_analytic = 0.0;     // |Re Lambda|, rad/s
  double antiphase_correlation = 0.0; // of the detrended occupations
};

inline QuenchAnalysis analyze_quench(const QuenchResult& q, const ModeParams& p, double gamma_fb) {
  QuenchAnalysis a;
  a.n1_cooled = p.n1 * p.gamma / (p.gamma + gamma_fb);
  std::size_t in1 = 0, in2 = 0;
  for (std::size_t k = 0; k < q.t.size(); ++k) {
    const auto qp = quench_occupations(q.frame, a.n1_cooled, p.n2, q.t[k]);
    a.b1_analytic.push_back(qp.b1_sq);
    a.b2_analytic.push_back(qp.b2_sq);
    if (std::abs(q.b1_sq[k] - qp.b1_sq) <= 3.0 * q.b1_sq_se[k]) ++in1;
    if (std::abs(q.b2_sq[k] - qp.b2_sq) <= 3.0 * q.b2_sq_se[k]) ++in2;
  }
  a.overlay_fraction_raw_1 = static_cast<double>(in1) / static_cast<double>(q.t.size());
  a.overlay_fraction_raw_2 = static_cast<double>(in2) / static_cast<double>(q.t.size());
  a.overlay_fraction_1 = a.overlay_fraction_raw_1;
  a.overlay_fraction_2 = a.overlay_fraction_raw_2;
  if (q.coarse_window > 1) {
    // The analytic curves get the same centred window as the simulation.
    const std::size_t w = q.coarse_window, h = w / 2, n = q.t.size();
    a.b1_coarse_analytic.assign(n, NAN);
    a.b2_coarse_analytic.assign(n, NAN);
    std::size_t c1 = 0, c2 = 0, used = 0;
    for (std::size_t c = h; c + h < n; ++c) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = c - h; j <= c + h; ++j) {
        m1 += a.b1_analytic[j];
        m2 += a.b2_analytic[j];
      }
      a.b1_coarse_analytic[c] = m1 / static_cast<double>(w);
      a.b2_coarse_analytic[c] = m2 / static_cast<double>(w);
      if (std::abs(q.b1_sq_coarse[c] - a.b1_coarse_analytic[c]) <= 3.0 * q.b1_sq_coarse_se[c]) ++c1;
      if (std::abs(q.b2_sq_coarse[c] - a.b2_coarse_analytic[c]) <= 3.0 * q.b2_sq_coarse_se[c]) ++c2;
      ++used;
    }
    if (used > 0) {
      a.overlay_fraction_1 = static_cast<double>(c1) / static_cast<double>(used);
      a.overlay_fraction_2 = static_cast<double>(c2) / static_cast<double>(used);
    }
  }
  a.exchange_analytic = std::abs(lambda(q.frame, ResonanceBranch::detuning()).real());
  std::vector<double> d(q.t.size()), sd(q.t.size());
  for (std::size_t k = 0; k < d.size(); ++k) {
    d[k] = q.b1_sq[k] - q.b2_sq[k];
    const double v = q.b1_sq_se[k] * q.b1_sq_se[k] + q.b2_sq_se[k] * q.b2_sq_se[k] - 2.0 * q.cov_12[k];
    sd[k] = std::sqrt(std::max(v, 1e-6 * q.b1_sq_se[k] * q.b1_sq_se[k]));
  }
  a.exchange = fit_damped_cosine(q.t, d, sd);
  // Remove the slow relaxation with a moving average over one fitted period.
  const double dt = q.t[1] - q.t[0];
  const auto w = static_cast<std::size_t>(std::llround(constants::two_pi / a.exchange.omega / dt));
  if (w >= 2 && 2 * w < q.t.size()) {
    std::vector<double> x, y;
    for (std::size_t k = w / 2; k + w - w / 2 < q.t.size(); ++k) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = k - w / 2; j < k - w / 2 + w; ++j) {
        m1 += q.b1_sq[j];
        m2 += q.b2_sq[j];
      }
      x.push_back(q.b1_sq[k] - m1 / static_cast<double>(w));
      y.push_back(q.b2_sq[k] - m2 / static_cast<double>(w));
    }
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      sxy += (x[k] - mx) * (y[k] - my);
      sxx += (x[k] - mx) * (x[k] - mx);
      syy += (y[k] - my) * (y[k] - my);
    }
    a.antiphase_correlation = sxy / std::sqrt(sxx * syy);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Single-mode squeezing from driving at twice one trap frequency.

struct SingleModeResult {
  int particle = 1;
  double var_x = 0.0, var_y = 0.0, cov_xy = 0.0;  // simulated quadrature covariance
  SingleModeVariances analytic;
  double occupation = 0.0, squashed = 0.0, anti_squashed = 0.0;
  PsdEstimate psd;
};

inline SingleModeResult single_mode_pipeline(const ModeParams& p, int j, const SimContext& ctx,
                                             const EnsembleSettings& e, double resolution_hz = 0.0) {
  SingleModeResult r;
  r.particle = j;
  r.analytic = single_mode_variances(p, j);
  auto ens = rotating_ensemble(p, ctx, ResonanceBranch::single_mode(j), e);
  if (ens.b1.size() >= 2) subtract_ensemble_mean(ens.b1);
  double sxx = 0.0, syy = 0.0, sxy = 0.0, n = 0.0;
  for (const auto& s : ens.b1)
    for (const auto& v : s.x) {
      sxx += v.real() * v.real();
      syy += v.imag() * v.imag();
      sxy += v.real() * v.imag();
      n += 1.0;
    }
  r.var_x = sxx / n;
  r.var_y = syy / n;
  r.cov_xy = sxy / n;
  const SingleModeVariances sim{r.var_x, r.var_y, r.cov_xy};
  r.occupation = sim.occupation();
  r.squashed = sim.squashed();
  r.anti_squashed = sim.anti_squashed();
  const double res = resolution_hz > 0.0 ? resolution_hz : rad_to_hz(p.gamma) / 10.0;
  r.psd = ensemble_psd(ens.b1, res);
  return r;
}

// ---------------------------------------------------------------------------
// Lab-frame peak positions; the static case has an exact normal-mode oracle.

// Normal-mode frequencies of the linearized pair for a constant beat phase
// (Delta_omega = 0), damping neglected.
inline std::pair<double, double> static_mode_frequencies(const ModeParams& p) {
  const double K = 2.0 * p.g * std::sqrt(p.Omega1 * p.Omega2);
  const double c1 = std::cos(p.kd - p.delta_phi), c2 = std::cos(p.kd + p.delta_phi);
  Eigen::Matrix2d A;
  A << p.Omega1 * p.Omega1 + K * c1, -K * c1, -K * c2, p.Omega2 * p.Omega2 + K * c2;
  Eigen::EigenSolver<Eigen::Matrix2d> es(A);
  double w[2];
  for (int i = 0; i < 2; ++i) {
    const auto ev = es.eigenvalues()(i);
    if (!(ev.real() > 0.0) || std::abs(ev.imag()) > 1e-9 * std::abs(ev.real()))
      throw numerical_error("static_mode_frequencies: unstable static coupling");
    w[i] = std::sqrt(ev.real());
  }
  if (w[0] > w[1]) std::swap(w[0], w[1]);
  return {w[0], w[1]};
}

struct LabPeaks {
  BreitWignerFit fit1, fit2;  // near Omega_1 and Omega_2
  PsdEstimate psd1, psd2;
};

inline LabPeaks lab_peaks(const ModeParams& p, const SimContext& ctx, const EnsembleSettings& e,
                          double resolution_hz, double halfwidth_hz, double center1_hz, double center2_hz) {
  const Protocol pr = ensemble_protocol(e);
  const SimSettings s = sim_settings(p, pr, e);
  const LangevinIntegrator integ(p, ctx, pr, s);
  const double fs = 1.0 / integ.record_dt();
  const std::size_t n = segment_for(fs, resolution_hz, integ.n_records());
  WelchAccumulator a1(n, 0.5, fs, false), a2(n, 0.5, fs, false);
  simulate_each(p, ctx, pr, s, [&](std::size_t, Trajectory&& tr) {
    a1.add(tr.z1);
    a2.add(tr.z2);
  });
  LabPeaks out;
  out.psd1 = a1.result();
  out.psd2 = a2.result();
  out.fit1 = breit_wigner_fit(out.psd1, center1_hz - halfwidth_hz, center1_hz + halfwidth_hz);
  out.fit2 = breit_wigner_fit(out.psd2, center2_hz - halfwidth_hz, center2_hz + halfwidth_hz);
  return out;
}

}  // namespace fblab
