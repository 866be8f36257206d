#pragma once

// Analysis pipeline for simulated trajectories: analytic signals, rotating
// frames, Welch spectra, Lorentzian fits, eigenmode reconstruction, phase
// locking and the intensity-correlation route to kd.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fblab/detail/fft.hpp"
#include "fblab/detail/filter.hpp"
#include "fblab/detail/lsq.hpp"
#include "fblab/langevin.hpp"
#include "fblab/model.hpp"
#include "fblab/rwa.hpp"

namespace fblab {

struct fit_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct statistical_power_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using CSeries = std::vector<cplx>;

// Samples x[k] at t0 + k dt. x_frame(t) = x_lab(t) e^{i 2 pi frequency_shift t}
// times e^{-i phase_correction}.
struct ComplexAmplitudeSeries {
  CSeries x;
  double dt = 0.0;
  double t0 = 0.0;
  double frequency_shift = 0.0;  // Hz, signed
  double phase_correction = 0.0;
  bool conjugated = false;  // channel holds the conjugate of the lab amplitude

  double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
  std::size_t size() const { return x.size(); }
};

// x + i H[x] by the one-sided spectrum construction.
inline CSeries analytic_signal(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 64) throw config_error("analytic_signal: need at least 64 samples");
  CSeries buf(x.begin(), x.end());
  auto X = detail::fft(buf);
  for (std::size_t k = 1; k < n; ++k) {
    if (2 * k < n)
      X[k] *= 2.0;
    else if (2 * k > n)
      X[k] = 0.0;
  }
  auto y = detail::fft(X, true);
  for (std::size_t k = 0; k < n; ++k) y[k] = cplx(x[k], y[k].imag() / static_cast<double>(n));
  return y;
}

// Multiply by e^{i sign 2 pi f t}.
inline ComplexAmplitudeSeries demodulate(ComplexAmplitudeSeries s, double f_demod, int sign) {
  if (sign != 1 && sign != -1) throw std::invalid_argument("demodulate: sign must be +1 or -1");
  if (s.dt > 0.0 && std::abs(f_demod) >= 0.5 / s.dt) throw config_error("demodulate: frequency above Nyquist");
  const double w = sign * constants::two_pi * f_demod;
  for (std::size_t k = 0; k < s.x.size(); ++k) s.x[k] *= std::polar(1.0, w * s.time(k));
  s.frequency_shift += sign * f_demod;
  return s;
}

inline ComplexAmplitudeSeries conjugate(ComplexAmplitudeSeries s) {
  for (auto& v : s.x) v = std::conj(v);
  s.frequency_shift = -s.frequency_shift;
  s.phase_correction = -s.phase_correction;
  s.conjugated = !s.conjugated;
  return s;
}

// Lab-frame amplitude c_j = a_j e^{-i Omega_j t} from a recorded position via
// the Hilbert transform, c = conj(z + i H[z]) / (2 z_zpf), 5% guard bands removed.
inline ComplexAmplitudeSeries lab_amplitude(const std::vector<double>& z, double mass, double Omega, double t0,
                                            double dt) {
  const auto an = analytic_signal(z);
  const std::size_t guard = z.size() / 20;
  const double s = 1.0 / (2.0 * zero_point(mass, Omega));
  ComplexAmplitudeSeries c;
  c.dt = dt;
  c.t0 = t0 + static_cast<double>(guard) * dt;
  c.x.reserve(z.size() - 2 * guard);
  for (std::size_t k = guard; k < z.size() - guard; ++k) c.x.push_back(std::conj(an[k]) * s);
  return c;
}

// Rotating-frame amplitudes for a branch. Detuning: b_j = c_j e^{i Omega_bar t}
// e^{i (-1)^j Delta_omega t/2}. Sum: (b_1, b_2*) with b_j = c_j e^{i (Omega_j + delta/2) t}.
inline std::pair<ComplexAmplitudeSeries, ComplexAmplitudeSeries> to_rotating_frame(
    const std::vector<double>& z1, const std::vector<double>& z2, const ModeParams& p, double mass, double t0,
    double dt, const ResonanceBranch& br = ResonanceBranch::detuning()) {
  auto c1 = lab_amplitude(z1, mass, p.Omega1, t0, dt);
  auto c2 = lab_amplitude(z2, mass, p.Omega2, t0, dt);
  if (br.tag == BranchTag::detuning) {
    const double fb = rad_to_hz(p.Omega_bar()), fd = rad_to_hz(p.delta_omega) / 2.0;
    c1 = demodulate(demodulate(std::move(c1), fb, 1), fd, -1);
    c2 = demodulate(demodulate(std::move(c2), fb, 1), fd, 1);
    return {std::move(c1), std::move(c2)};
  }
  if (br.tag == BranchTag::sum) {
    const double d = effective_detuning(p, br);
    c1 = demodulate(std::move(c1), rad_to_hz(p.Omega1 + 0.5 * d), 1);
    c2 = conjugate(demodulate(std::move(c2), rad_to_hz(p.Omega2 + 0.5 * d), 1));
    return {std::move(c1), std::move(c2)};
  }
  throw std::invalid_argument("to_rotating_frame: single-mode branch has no two-particle frame");
}

// Removes the ensemble mean sample-wise (deterministic drive) with the
// N/(N-1) correction so that second moments stay unbiased.
inline void subtract_ensemble_mean(std::vector<ComplexAmplitudeSeries>& ens) {
  if (ens.size() < 2) throw std::invalid_argument("subtract_ensemble_mean: need at least two members");
  const std::size_t n = ens.front().size();
  for (const auto& s : ens)
    if (s.size() != n) throw std::invalid_argument("subtract_ensemble_mean: length mismatch");
  const double N = static_cast<double>(ens.size());
  const double c = std::sqrt(N / (N - 1.0));
  for (std::size_t k = 0; k < n; ++k) {
    cplx m = 0.0;
    for (const auto& s : ens) m += s.x[k];
    m /= N;
    for (auto& s : ens) s.x[k] = (s.x[k] - m) * c;
  }
}

// Low-pass (Blackman-windowed sinc, cutoff 0.8 of the new Nyquist) and keep
// every `factor`-th sample. Samples whose filter support leaves the record are
// dropped, so t0 moves forward by half the filter length.
inline ComplexAmplitudeSeries decimate(const ComplexAmplitudeSeries& s, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("decimate: factor must be positive");
  if (factor == 1) return s;
  const std::size_t half = 8 * factor;
  const std::size_t L = 2 * half + 1;
  if (s.size() < L + factor) throw config_error("decimate: series shorter than the filter");
  const double fc = 0.4 / static_cast<double>(factor);  // cycles per input sample
  std::vector<double> h(L);
  double sum = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    const double m = static_cast<double>(i) - static_cast<double>(half);
    const double x = constants::two_pi * fc * m;
    const double sinc = m == 0.0 ? 1.0 : std::sin(x) / x;
    const double u = constants::two_pi * static_cast<double>(i) / static_cast<double>(L - 1);
    const double w = 0.42 - 0.5 * std::cos(u) + 0.08 * std::cos(2.0 * u);
    h[i] = sinc * w;
    sum += h[i];
  }
  for (auto& v : h) v /= sum;
  ComplexAmplitudeSeries out = s;
  out.x.clear();
  out.dt = s.dt * static_cast<double>(factor);
  out.t0 = s.t0 + static_cast<double>(half) * s.dt;
  for (std::size_t c = half; c + half < s.size(); c += factor) {
    cplx acc = 0.0;
    const cplx* p = s.x.data() + (c - half);
    for (std::size_t i = 0; i < L; ++i) acc += h[i] * p[i];
    out.x.push_back(acc);
  }
  return out;
}


struct PsdEstimate {
  std::vector<double> freq;     // Hz, ascending
  std::vector<double> density;  // per Hz
  std::size_t n_segments = 0;
  std::size_t segment_length = 0;
  std::string window = "hann";
  bool two_sided = false;
  double fs = 0.0;

  double bin_width() const { return fs / static_cast<double>(segment_length); }
  double integral() const {
    double s = 0.0;
    for (double d : density) s += d;
    return s * bin_width();
  }
};

enum class Window { hann, rectangular };

// Averaged modified periodograms; accumulates across any number of series.
class WelchAccumulator {
 public:
  WelchAccumulator(std::size_t segment_length, double overlap, double fs, bool two_sided,
                   Window window = Window::hann)
      : n_(segment_length), fs_(fs), two_sided_(two_sided), window_(window), plan_(segment_length, FFTW_FORWARD) {
    if (segment_length < 8) throw config_error("welch_psd: segment too short");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw config_error("welch_psd: overlap must lie in [0, 1)");
    step_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n_ * (1.0 - overlap))));
    w_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i)
      w_[i] = window == Window::hann ? 0.5 * (1.0 - std::cos(constants::two_pi * i / static_cast<double>(n_))) : 1.0;
    wss_ = 0.0;
    for (double v : w_) wss_ += v * v;
    acc_.assign(n_, 0.0);
  }

  template <class T>
  void add(const std::vector<T>& x) {
    if (x.size() < n_) throw config_error("welch_psd: segment longer than series");
    for (std::size_t start = 0; start + n_ <= x.size(); start += step_) {
      cplx* in = plan_.input();
      for (std::size_t i = 0; i < n_; ++i) in[i] = cplx(x[start + i]) * w_[i];
      plan_.execute();
      const cplx* out = plan_.output();
      for (std::size_t i = 0; i < n_; ++i) acc_[i] += std::norm(out[i]);
      ++segments_;
    }
  }

  PsdEstimate result() const {
    if (segments_ == 0) throw config_error("welch_psd: no segments accumulated");
    PsdEstimate e;
    e.n_segments = segments_;
    e.segment_length = n_;
    e.window = window_ == Window::hann ? "hann" : "rectangular";
    e.two_sided = two_sided_;
    e.fs = fs_;
    const double scale = 1.0 / (fs_ * wss_ * static_cast<double>(segments_));
    const double df = fs_ / static_cast<double>(n_);
    if (two_sided_) {
      const std::size_t half = n_ / 2;
      for (std::size_t j = 0; j < n_; ++j) {
        const std::size_t k = (j + n_ - half) % n_;  // ascending frequency
        const double kk = static_cast<double>(j) - static_cast<double>(half);
        e.freq.push_back(kk * df);
        e.density.push_back(acc_[k] * scale);
      }
    } else {
      for (std::size_t k = 0; k <= n_ / 2; ++k) {
        double v = acc_[k] * scale;
        if (k != 0 && !(n_ % 2 == 0 && k == n_ / 2)) v *= 2.0;
        e.freq.push_back(static_cast<double>(k) * df);
        e.density.push_back(v);
      }
    }
    return e;
  }

 private:
  std::size_t n_;
  double fs_;
  bool two_sided_;
  Window window_;
  detail::FftPlan plan_;
  std::size_t step_ = 1;
  std::vector<double> w_;
  double wss_ = 0.0;
  std::vector<double> acc_;
  std::size_t segments_ = 0;
};

inline PsdEstimate welch_psd(const std::vector<double>& x, double fs, std::size_t segment_length,
                             double overlap = 0.5, Window window = Window::hann) {
  WelchAccumulator acc(segment_length, overlap, fs, false, window);
  acc.add(x);
  return acc.result();
}

inline PsdEstimate welch_psd(const CSeries& x, double fs, std::size_t segment_length, double overlap = 0.5,
                             Window window = Window::hann) {
  WelchAccumulator acc(segment_length, overlap, fs, true, window);
  acc.add(x);
  return acc.result();
}

struct BreitWignerFit {
  double f0 = 0.0;         // Hz
  double width = 0.0;      // full width at half maximum, Hz
  double amplitude = 0.0;  // a in a / ((f - f0)^2 + (width/2)^2)
  double offset = 0.0;
  double residual = 0.0;   // rms residual relative to the peak height
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();  // (f0, width, amplitude, offset)
  bool converged = false;

  double operator()(double f) const {
    const double h = 0.5 * width;
    return amplitude / ((f - f0) * (f - f0) + h * h) + offset;
  }
  double f0_error() const { return std::sqrt(covariance(0, 0)); }
  double width_error() const { return std::sqrt(covariance(1, 1)); }
};

namespace detail {

inline std::pair<std::vector<double>, std::vector<double>> psd_window(const PsdEstimate& psd, double f_lo,
                                                                      double f_hi) {
  std::vector<double> f, y;
  for (std::size_t i = 0; i < psd.freq.size(); ++i)
    if (psd.freq[i] >= f_lo && psd.freq[i] <= f_hi) {
      f.push_back(psd.freq[i]);
      y.push_back(psd.density[i]);
    }
  return {f, y};
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  return v[m];
}

}  // namespace detail

// Least-squares Breit-Wigner fit on [f_lo, f_hi], initialized from the peak
// bin and its half-maximum width.
inline BreitWignerFit breit_wigner_fit(const PsdEstimate& psd, double f_lo, double f_hi) {
  auto [f, y] = detail::psd_window(psd, f_lo, f_hi);
  if (f.size() < 6) throw fit_error("breit_wigner_fit: fewer than 6 points in the fit window");
  const auto ipk = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double peak = y[ipk];
  const double med = detail::median(y);
  if (!(peak > 5.0 * med)) throw fit_error("breit_wigner_fit: no detectable peak (max/median <= 5)");
  const double base = *std::min_element(y.begin(), y.end());
  const double half = base + 0.5 * (peak - base);
  std::size_t l = ipk, r = ipk;
  while (l > 0 && y[l] > half) --l;
  while (r + 1 < y.size() && y[r] > half) ++r;
  const double df = f.size() > 1 ? f[1] - f[0] : 1.0;
  const double w0 = std::max(f[r] - f[l], 2.0 * df);
  const double a0 = (peak - base) * 0.25 * w0 * w0;
  const double fpk = f[ipk];
  const int m = static_cast<int>(f.size());
  // Scaled parameters: (f0 - fpk)/w0, width/w0, a/a0, offset/peak.
  detail::ResidualFn fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res) {
    const double f0 = fpk + x(0) * w0, w = std::abs(x(1)) * w0, a = x(2) * a0, c = x(3) * peak;
    for (int i = 0; i < m; ++i) {
      const double d = f[static_cast<std::size_t>(i)] - f0;
      res(i) = (a / (d * d + 0.25 * w * w) + c - y[static_cast<std::size_t>(i)]) / peak;
    }
  };
  Eigen::VectorXd x0(4);
  x0 << 0.0, 1.0, 1.0, base / peak;
  const auto sol = detail::least_squares(fn, x0, m);
  BreitWignerFit out;
  out.f0 = fpk + sol.x(0) * w0;
  out.width = std::abs(sol.x(1)) * w0;
  out.amplitude = sol.x(2) * a0;
  out.offset = sol.x(3) * peak;
  out.residual = std::sqrt(sol.ssr / m);
  Eigen::Vector4d sc(w0, w0, a0, peak);
  out.covariance = sc.asDiagonal() * sol.covariance * sc.asDiagonal();
  out.converged = sol.converged && out.width > 0.0 && std::isfinite(out.f0);
  if (!out.converged)
    throw fit_error("breit_wigner_fit: no convergence (status " + std::to_string(sol.status) + ", " +
                    std::to_string(sol.evaluations) + " evaluations)");
  return out;
}

struct LorentzianPeak {
  double f0 = 0.0, width = 0.0, amplitude = 0.0;
  double f0_error = 0.0;
};

struct MultiLorentzianFit {
  std::vector<LorentzianPeak> peaks;  // sorted by f0
  double offset = 0.0;
  double residual = 0.0;
  bool converged = false;
};

// Sum of `n_peaks` Lorentzians plus a constant on [f_lo, f_hi]. Initial
// centers come from the strongest local maxima of the smoothed spectrum.
inline MultiLorentzianFit fit_lorentzians(const PsdEstimate& psd, double f_lo, double f_hi, int n_peaks,
                                          double width_guess) {
  auto [f, y] = detail::psd_window(psd, f_lo, f_hi);
  const int m = static_cast<int>(f.size());
  if (m < 4 * n_peaks + 2) throw fit_error("fit_lorentzians: too few points");
  const double df = f[1] - f[0];
  const int hw = std::max(1, static_cast<int>(0.25 * width_guess / df));
  std::vector<double> sm(f.size());
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    int c = 0;
    for (int k = std::max(0, i - hw); k <= std::min(m - 1, i + hw); ++k, ++c) s += y[static_cast<std::size_t>(k)];
    sm[static_cast<std::size_t>(i)] = s / c;
  }
  // Local maxima ranked by topographic prominence, so that noise ripples on
  // the flank of a strong peak do not displace a weaker genuine one.
  std::vector<std::pair<double, int>> maxima;
  for (int i = 1; i + 1 < m; ++i) {
    if (!(sm[i] >= sm[i - 1] && sm[i] > sm[i + 1])) continue;
    double left = sm[i], right = sm[i];
    for (int k = i - 1; k >= 0 && sm[k] <= sm[i]; --k) left = std::min(left, sm[k]);
    for (int k = i + 1; k < m && sm[k] <= sm[i]; ++k) right = std::min(right, sm[k]);
    maxima.emplace_back(sm[i] - std::max(left, right), i);
  }
  std::sort(maxima.begin(), maxima.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> centers;
  for (const auto& [prom, i] : maxima) {
    bool far = true;
    for (double c : centers) far = far && std::abs(f[i] - c) > 0.5 * width_guess;
    if (far) centers.push_back(f[i]);
    if (static_cast<int>(centers.size()) == n_peaks) break;
  }
  const auto ipk = static_cast<std::size_t>(std::max_element(sm.begin(), sm.end()) - sm.begin());
  while (static_cast<int>(centers.size()) < n_peaks)
    centers.push_back(f[ipk] + (centers.size() % 2 ? -0.5 : 0.5) * width_guess * static_cast<double>(centers.size()));
  const double peak = sm[ipk];
  const double base = *std::min_element(sm.begin(), sm.end());
  const double w0 = width_guess;
  const double a0 = peak * 0.25 * w0 * w0;
  const int np = n_peaks;
  detail::ResidualFn fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res) {
    for (int i = 0; i < m; ++i) {
      const double fi = f[static_cast<std::size_t>(i)];
      double v = x(3 * np) * peak;
      for (int k = 0; k < np; ++k) {
        const double d = fi - (centers[static_cast<std::size_t>(k)] + x(3 * k) * w0);
        const double w = std::abs(x(3 * k + 1)) * w0;
        v += x(3 * k + 2) * a0 / (d * d + 0.25 * w * w);
      }
      res(i) = (v - y[static_cast<std::size_t>(i)]) / peak;
    }
  };
  Eigen::VectorXd x0(3 * np + 1);
  for (int k = 0; k < np; ++k) {
    const auto idx = static_cast<std::size_t>(
        std::lower_bound(f.begin(), f.end(), centers[static_cast<std::size_t>(k)]) - f.begin());
    const double h = sm[std::min(idx, sm.size() - 1)];
    x0(3 * k) = 0.0;
    x0(3 * k + 1) = 1.0;
    x0(3 * k + 2) = std::max(h - base, 0.05 * peak) / peak;
  }
  x0(3 * np) = base / peak;
  const auto sol = detail::least_squares(fn, x0, m);
  MultiLorentzianFit out;
  out.offset = sol.x(3 * np) * peak;
  out.residual = std::sqrt(sol.ssr / m);
  out.converged = sol.converged;
  for (int k = 0; k < np; ++k) {
    LorentzianPeak pk;
    pk.f0 = centers[static_cast<std::size_t>(k)] + sol.x(3 * k) * w0;
    pk.width = std::abs(sol.x(3 * k + 1)) * w0;
    pk.amplitude = sol.x(3 * k + 2) * a0;
    pk.f0_error = std::sqrt(std::max(0.0, sol.covariance(3 * k, 3 * k))) * w0;
    out.peaks.push_back(pk);
    if (!(pk.f0 >= f.front() && pk.f0 <= f.back()) || !std::isfinite(pk.f0)) out.converged = false;
  }
  std::sort(out.peaks.begin(), out.peaks.end(), [](const auto& a, const auto& b) { return a.f0 < b.f0; });
  return out;
}

struct PhaseLockHistogram {
  std::vector<double> centers;  // bin centers on (-pi, pi]
  std::vector<double> pdf;
  std::vector<double> fit;      // fitted wrapped Gaussian at the bin centers
  double mean_phase = 0.0;      // fitted center of arg(b1* b2)
  double width = 0.0;
  double contrast = 0.0;        // max - min of the fitted curve
  double noise = 0.0;           // bin standard error of a uniform histogram
  double n_effective = 0.0;
  bool locked = false;
  bool fit_ok = false;
};

namespace detail {

// Integrated autocorrelation time (in samples) of the unit phasor, truncated
// at the first non-positive lag.
inline double phasor_correlation_time(const CSeries& u) {
  const std::size_t n = u.size();
  if (n < 4) return 1.0;
  cplx mean = std::accumulate(u.begin(), u.end(), cplx(0.0)) / static_cast<double>(n);
  const std::size_t nf = good_fft_size(2 * n);
  CSeries buf(nf, 0.0);
  for (std::size_t i = 0; i < n; ++i) buf[i] = u[i] - mean;
  auto X = fft(buf);
  for (auto& v : X) v = std::norm(v);
  auto r = fft(X, true);
  const double r0 = r[0].real();
  if (!(r0 > 0.0)) return 1.0;
  double tau = 1.0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    const double rho = r[k].real() / r0 * static_cast<double>(n) / static_cast<double>(n - k);
    if (rho <= 0.0) break;
    tau += 2.0 * rho;
  }
  return tau;
}

inline double wrapped_gaussian(double phi, double mu, double sigma) {
  double s = 0.0;
  for (int m = -3; m <= 3; ++m) {
    const double d = phi - mu - constants::two_pi * m;
    s += std::exp(-d * d / (2.0 * sigma * sigma));
  }
  return s;
}

}  // namespace detail

// Histogram of arg(b1* b2) over an ensemble, fitted with a 2 pi-periodic
// Gaussian plus a constant.
inline PhaseLockHistogram phase_lock_histogram(const std::vector<CSeries>& b1, const std::vector<CSeries>& b2,
                                               int n_bins = 36) {
  if (b1.size() != b2.size() || b1.empty()) throw std::invalid_argument("phase_lock_histogram: ensemble mismatch");
  if (n_bins < 8) throw std::invalid_argument("phase_lock_histogram: need at least 8 bins");
  PhaseLockHistogram h;
  const double bw = constants::two_pi / n_bins;
  std::vector<double> counts(static_cast<std::size_t>(n_bins), 0.0);
  double total = 0.0, n_eff = 0.0;
  cplx resultant = 0.0;
  for (std::size_t t = 0; t < b1.size(); ++t) {
    if (b1[t].size() != b2[t].size()) throw std::invalid_argument("phase_lock_histogram: length mismatch");
    CSeries u(b1[t].size());
    for (std::size_t k = 0; k < u.size(); ++k) {
      const cplx z = std::conj(b1[t][k]) * b2[t][k];
      const double ph = std::arg(z);
      u[k] = std::polar(1.0, ph);
      resultant += u[k];
      auto bin = static_cast<int>(std::floor((ph + constants::pi) / bw));
      bin = std::clamp(bin, 0, n_bins - 1);
      counts[static_cast<std::size_t>(bin)] += 1.0;
    }
    total += static_cast<double>(u.size());
    n_eff += static_cast<double>(u.size()) / detail::phasor_correlation_time(u);
  }
  h.n_effective = n_eff;
  for (int i = 0; i < n_bins; ++i) {
    h.centers.push_back(-constants::pi + (i + 0.5) * bw);
    h.pdf.push_back(counts[static_cast<std::size_t>(i)] / (total * bw));
  }
  const double p = 1.0 / n_bins;
  h.noise = std::sqrt(n_eff * p * (1.0 - p)) / (n_eff * bw);

  const double R = std::abs(resultant) / total;
  const double mu0 = std::arg(resultant);
  const double sig0 = std::clamp(std::sqrt(std::max(1e-6, -2.0 * std::log(std::max(R, 1e-12)))), bw, constants::pi);
  const double pmax = *std::max_element(h.pdf.begin(), h.pdf.end());
  const double pmin = *std::min_element(h.pdf.begin(), h.pdf.end());
  detail::ResidualFn fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res) {
    const double sigma = bw + std::abs(x(2));
    for (int i = 0; i < n_bins; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      res(i) = x(3) + x(0) * detail::wrapped_gaussian(h.centers[ii], x(1), sigma) - h.pdf[ii];
    }
  };
  Eigen::VectorXd x0(4);
  x0 << std::max(pmax - pmin, 1e-6), mu0, std::max(sig0 - bw, 1e-3), pmin;
  h.fit_ok = false;
  try {
    const auto sol = detail::least_squares(fn, x0, n_bins);
    if (sol.x.allFinite()) {
      const double sigma = bw + std::abs(sol.x(2));
      h.mean_phase = std::remainder(sol.x(1), constants::two_pi);
      h.width = sigma;
      double fmax = -std::numeric_limits<double>::infinity(), fmin = std::numeric_limits<double>::infinity();
      for (int i = 0; i < 720; ++i) {
        const double ph = -constants::pi + constants::two_pi * i / 720.0;
        const double v = sol.x(3) + sol.x(0) * detail::wrapped_gaussian(ph, sol.x(1), sigma);
        fmax = std::max(fmax, v);
        fmin = std::min(fmin, v);
      }
      for (double c : h.centers) h.fit.push_back(sol.x(3) + sol.x(0) * detail::wrapped_gaussian(c, sol.x(1), sigma));
      h.contrast = fmax - fmin;
      h.fit_ok = true;
    }
  } catch (const std::exception&) {
    h.fit_ok = false;
  }
  if (!h.fit_ok) h.contrast = pmax - pmin;
  h.locked = h.fit_ok && h.contrast > 5.0 * h.noise;
  return h;
}

struct EigenmodeReconstruction {
  std::vector<ComplexAmplitudeSeries> n_plus, n_minus;
  double delta_phi_hat = 0.0;  // arg <b1 b2*>
  bool locked = false;
  bool flipped = false;
  double contrast = 0.0;
  std::string warning;
  PhaseLockHistogram histogram;
};

// Removes the mean phase difference and forms (b1 e^{-i dphi} +- b2)/sqrt(2).
// The in-phase combination carries the reduced-linewidth mode. That mode is
// n+ when sin(kd) > 0; for sin(kd) < 0 the labels are flipped.
inline EigenmodeReconstruction reconstruct_eigenmodes(const std::vector<ComplexAmplitudeSeries>& b1,
                                                      const std::vector<ComplexAmplitudeSeries>& b2, double kd,
                                                      int n_bins = 36) {
  if (b1.size() != b2.size() || b1.empty()) throw std::invalid_argument("reconstruct_eigenmodes: ensemble mismatch");
  std::vector<CSeries> x1, x2;
  cplx acc = 0.0;
  for (std::size_t t = 0; t < b1.size(); ++t) {
    if (b1[t].size() != b2[t].size()) throw std::invalid_argument("reconstruct_eigenmodes: length mismatch");
    x1.push_back(b1[t].x);
    x2.push_back(b2[t].x);
    for (std::size_t k = 0; k < b1[t].size(); ++k) acc += b1[t].x[k] * std::conj(b2[t].x[k]);
  }
  const auto hist = phase_lock_histogram(x1, x2, n_bins);
  EigenmodeReconstruction r;
  r.locked = hist.locked;
  r.contrast = hist.contrast;
  r.histogram = hist;
  r.delta_phi_hat = std::arg(acc);
  if (!r.locked) {
    r.warning = "unresolved phase: no phase locking detected, using delta_phi = 0";
    r.delta_phi_hat = 0.0;
  }
  r.flipped = std::sin(kd) < 0.0;
  const cplx rot = std::polar(1.0, -r.delta_phi_hat);
  const double s = 1.0 / std::sqrt(2.0);
  for (std::size_t t = 0; t < b1.size(); ++t) {
    ComplexAmplitudeSeries sum = b1[t], diff = b1[t];
    sum.phase_correction = diff.phase_correction = r.delta_phi_hat;
    for (std::size_t k = 0; k < b1[t].size(); ++k) {
      const cplx u = b1[t].x[k] * rot;
      sum.x[k] = (u + b2[t].x[k]) * s;
      diff.x[k] = (u - b2[t].x[k]) * s;
    }
    if (r.flipped) std::swap(sum, diff);
    r.n_plus.push_back(std::move(sum));
    r.n_minus.push_back(std::move(diff));
  }
  return r;
}

struct EmpiricalG2 {
  std::vector<double> tau;
  std::vector<double> value;   // <I1(t) I2(t+tau)>/(<I1><I2>) - 1
  std::vector<double> stderr_; // spread of independent blocks
};

// Normalized intensity cross-correlation over an ensemble, lags up to max_lag.
inline EmpiricalG2 empirical_g2(const std::vector<CSeries>& a1, const std::vector<CSeries>& a2, double dt,
                                std::size_t max_lag) {
  if (a1.size() != a2.size() || a1.empty()) throw std::invalid_argument("empirical_g2: ensemble mismatch");
  // Independent blocks: the trajectories, or eight slices of a single record.
  std::vector<std::pair<const CSeries*, const CSeries*>> members;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t t = 0; t < a1.size(); ++t) {
    if (a1[t].size() != a2[t].size()) throw std::invalid_argument("empirical_g2: length mismatch");
    const std::size_t n = a1[t].size();
    if (a1.size() == 1) {
      const std::size_t blk = n / 8;
      for (std::size_t b = 0; b < 8; ++b) {
        members.emplace_back(&a1[t], &a2[t]);
        ranges.emplace_back(b * blk, b == 7 ? n : (b + 1) * blk);
      }
    } else {
      members.emplace_back(&a1[t], &a2[t]);
      ranges.emplace_back(0, n);
    }
  }
  for (const auto& r : ranges)
    if (r.second - r.first < 4 * max_lag + 1)
      throw statistical_power_error("empirical_g2: records shorter than four times the lag range");
  const std::size_t L = max_lag;
  const std::size_t nlag = 2 * L + 1;
  double s1 = 0.0, s2 = 0.0, cnt = 0.0;
  std::vector<std::vector<double>> block_sum(members.size(), std::vector<double>(nlag, 0.0));
  std::vector<std::vector<double>> block_cnt(members.size(), std::vector<double>(nlag, 0.0));
  std::vector<double> block_m1(members.size()), block_m2(members.size());
  for (std::size_t b = 0; b < members.size(); ++b) {
    const auto [p1, p2] = members[b];
    const auto [lo, hi] = ranges[b];
    const std::size_t n = hi - lo;
    const std::size_t nf = detail::good_fft_size(n + L + 1);
    CSeries x(nf, 0.0), y(nf, 0.0);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      x[k] = std::norm((*p1)[lo + k]);
      y[k] = std::norm((*p2)[lo + k]);
      m1 += x[k].real();
      m2 += y[k].real();
    }
    s1 += m1;
    s2 += m2;
    cnt += static_cast<double>(n);
    block_m1[b] = m1 / static_cast<double>(n);
    block_m2[b] = m2 / static_cast<double>(n);
    auto X = detail::fft(x), Y = detail::fft(y);
    for (std::size_t k = 0; k < nf; ++k) X[k] = std::conj(X[k]) * Y[k];
    auto c = detail::fft(X, true);  // c[k] = sum_t x[t] y[t + k] (times nf)
    for (std::size_t j = 0; j < nlag; ++j) {
      const long lag = static_cast<long>(j) - static_cast<long>(L);
      const std::size_t idx = lag >= 0 ? static_cast<std::size_t>(lag) : nf - static_cast<std::size_t>(-lag);
      block_sum[b][j] = c[idx].real() / static_cast<double>(nf);
      block_cnt[b][j] = static_cast<double>(n - static_cast<std::size_t>(std::labs(lag)));
    }
  }
  const double m1 = s1 / cnt, m2 = s2 / cnt;
  EmpiricalG2 out;
  out.tau.resize(nlag);
  out.value.resize(nlag);
  out.stderr_.resize(nlag);
  const double nb = static_cast<double>(members.size());
  for (std::size_t j = 0; j < nlag; ++j) {
    double num = 0.0, den = 0.0;
    std::vector<double> est(members.size());
    for (std::size_t b = 0; b < members.size(); ++b) {
      num += block_sum[b][j];
      den += block_cnt[b][j];
      est[b] = block_sum[b][j] / block_cnt[b][j] / (m1 * m2) - 1.0;
    }
    out.tau[j] = (static_cast<double>(j) - static_cast<double>(L)) * dt;
    out.value[j] = num / den / (m1 * m2) - 1.0;
    const double mean = std::accumulate(est.begin(), est.end(), 0.0) / nb;
    double var = 0.0;
    for (double e : est) var += (e - mean) * (e - mean);
    out.stderr_[j] = nb > 1 ? std::sqrt(var / (nb - 1.0) / nb) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

struct BandEdges {
  double lo = 0.0, hi = 0.0;  // Hz
};

// Band around |delta| with edges sqrt(0.4 f^2 + (0.1 s)^2), sqrt(1.5 f^2 + (0.5 s)^2),
// f = |delta|/2 pi; s = 1 kHz reproduces the kHz-valued constants.
inline BandEdges g2_band(double delta, double scale_hz = 1000.0) {
  const double f = std::abs(rad_to_hz(delta));
  return {std::sqrt(0.4 * f * f + 0.01 * scale_hz * scale_hz), std::sqrt(1.5 * f * f + 0.25 * scale_hz * scale_hz)};
}

struct G2PhaseFit {
  double B_plus = 0.0;   // phase at origin, tau >= 0 side
  double B_minus = 0.0;  // tau < 0 side
  double B_mean = 0.0;   // circular mean
  double omega_plus = 0.0, omega_minus = 0.0;
  std::vector<double> filtered;
  BandEdges band;
};

struct G2FitOptions {
  double scale_hz = 1000.0;
  int order = 2;
  double window_gamma = 3.0;  // fit |tau| <= window_gamma / gamma
};

namespace detail {

inline std::pair<double, double> fit_side_cosine(const std::vector<double>& tau, const std::vector<double>& y,
                                                 double side, double tmax, double delta, double gamma) {
  std::vector<double> t, v;
  for (std::size_t i = 0; i < tau.size(); ++i)
    if (side * tau[i] >= 0.0 && std::abs(tau[i]) <= tmax) {
      t.push_back(tau[i]);
      v.push_back(y[i]);
    }
  const int m = static_cast<int>(t.size());
  if (m < 10) throw statistical_power_error("filtered_g2_fit: too few lags in the fit window");
  double vmax = 0.0;
  for (double x : v) vmax = std::max(vmax, std::abs(x));
  if (!(vmax > 0.0)) throw fit_error("filtered_g2_fit: filtered series vanishes");
  const double w0 = std::abs(delta);
  // Scaled parameters: C/vmax, kappa/gamma, omega/w0, phase.
  detail::ResidualFn fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res) {
    for (int i = 0; i < m; ++i) {
      const double ti = t[static_cast<std::size_t>(i)];
      res(i) = (x(0) * vmax * std::exp(-std::abs(x(1)) * gamma * std::abs(ti)) * std::cos(x(2) * w0 * ti - x(3)) -
                v[static_cast<std::size_t>(i)]) /
               vmax;
    }
  };
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd bx;
  for (int s = 0; s < 8; ++s) {
    Eigen::VectorXd x0(4);
    x0 << 1.0, 1.0, 1.0, -constants::pi + constants::two_pi * s / 8.0;
    const auto sol = least_squares(fn, x0, m);
    if (sol.x.allFinite() && sol.ssr < best) {
      best = sol.ssr;
      bx = sol.x;
    }
  }
  if (!(best < std::numeric_limits<double>::infinity())) throw fit_error("filtered_g2_fit: cosine fit failed");
  double C = bx(0), w = bx(2) * w0, p = bx(3);
  if (C < 0.0) p += constants::pi;
  if (w < 0.0) {
    p = -p;
    w = -w;
  }
  return {std::arg(std::polar(1.0, p)), w};
}

}  // namespace detail

// Band-pass (zero-phase) around |delta| and fit C e^{-k|tau|} cos(w tau - B)
// separately on each side of tau = 0.
inline G2PhaseFit filtered_g2_fit(const std::vector<double>& tau, const std::vector<double>& value, double delta,
                                  double gamma, const G2FitOptions& opt = {}) {
  if (tau.size() != value.size() || tau.size() < 16) throw std::invalid_argument("filtered_g2_fit: bad series");
  const double dt = tau[1] - tau[0];
  const double tmax = opt.window_gamma / gamma;
  if (!(tau.back() >= tmax && -tau.front() >= tmax))
    throw statistical_power_error("filtered_g2_fit: lag range shorter than the fit window");
  G2PhaseFit out;
  out.band = g2_band(delta, opt.scale_hz);
  const double fs = 1.0 / dt;
  const auto sos = detail::butter_bandpass(opt.order, out.band.lo, out.band.hi, fs);
  const auto pad = static_cast<std::size_t>(3.0 * fs / out.band.lo);
  out.filtered = detail::sos_filtfilt(sos, value, pad);
  const auto [bp, wp] = detail::fit_side_cosine(tau, out.filtered, 1.0, tmax, delta, gamma);
  const auto [bm, wm] = detail::fit_side_cosine(tau, out.filtered, -1.0, tmax, delta, gamma);
  out.B_plus = bp;
  out.B_minus = bm;
  out.omega_plus = wp;
  out.omega_minus = wm;
  out.B_mean = std::arg(std::polar(1.0, bp) + std::polar(1.0, bm));
  return out;
}

struct DampedCosineFit {
  double omega = 0.0;  // rad/s
  double omega_error = 0.0;
  double decay = 0.0;
  double amplitude = 0.0;
  double phase = 0.0;
  bool converged = false;
};

// y(t) = A e^{-k t} cos(w t + p) + B e^{-m t} + C; w initialized from the
// periodogram peak of the detrended series. Optional per-sample standard
// errors weight the residuals.
inline DampedCosineFit fit_damped_cosine(const std::vector<double>& t, const std::vector<double>& y,
                                         const std::vector<double>& sigma = {}) {
  const int m = static_cast<int>(t.size());
  if (m < 16 || y.size() != t.size()) throw fit_error("fit_damped_cosine: too few samples");
  if (!sigma.empty() && sigma.size() != t.size()) throw std::invalid_argument("fit_damped_cosine: sigma length");
  std::vector<double> w(t.size(), 1.0);
  if (!sigma.empty()) {
    double ms = 0.0;
    for (double v : sigma) ms += v;
    ms /= static_cast<double>(sigma.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!(sigma[i] > 0.0)) throw std::invalid_argument("fit_damped_cosine: sigma must be positive");
      w[i] = ms / sigma[i];
    }
  }
  const double T = t.back() - t.front();
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / m;
  double ymax = 0.0;
  for (double v : y) ymax = std::max(ymax, std::abs(v - mean));
  if (!(ymax > 0.0)) throw fit_error("fit_damped_cosine: constant series");
  // Coarse periodogram scan for the initial frequency.
  const double dt = T / (m - 1);
  double best_w = 0.0, best_p = -1.0;
  const int nscan = 4 * m;
  for (int k = 1; k < nscan / 2; ++k) {
    const double w = constants::pi * k / (nscan / 2) / dt;
    if (w * T < constants::two_pi) continue;
    cplx s = 0.0;
    for (int i = 0; i < m; ++i) s += (y[static_cast<std::size_t>(i)] - mean) * std::polar(1.0, -w * t[static_cast<std::size_t>(i)]);
    if (std::norm(s) > best_p) {
      best_p = std::norm(s);
      best_w = w;
    }
  }
  const double t0 = t.front();
  detail::ResidualFn fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res) {
    for (int i = 0; i < m; ++i) {
      const double ti = t[static_cast<std::size_t>(i)] - t0;
      const double v = x(0) * std::exp(-x(1) / T * ti) * std::cos(x(2) * best_w * ti + x(3)) +
                       x(4) * std::exp(-std::abs(x(5)) / T * ti) + x(6);
      res(i) = w[static_cast<std::size_t>(i)] * (v * ymax - (y[static_cast<std::size_t>(i)] - mean)) / ymax;
    }
  };
  double best = std::numeric_limits<double>::infinity();
  detail::LsqResult bs;
  for (int s = 0; s < 4; ++s) {
    Eigen::VectorXd x0(7);
    x0 << 1.0, 1.0, 1.0, -constants::pi + constants::pi * s / 2.0, 0.0, 1.0, 0.0;
    auto sol = detail::least_squares(fn, x0, m);
    if (sol.x.allFinite() && sol.ssr < best) {
      best = sol.ssr;
      bs = sol;
    }
  }
  if (!(best < std::numeric_limits<double>::infinity())) throw fit_error("fit_damped_cosine: fit failed");
  DampedCosineFit out;
  out.omega = std::abs(bs.x(2)) * best_w;
  out.omega_error = std::sqrt(std::max(0.0, bs.covariance(2, 2))) * best_w;
  out.decay = bs.x(1) / T;
  out.amplitude = bs.x(0) * ymax;
  out.phase = bs.x(3);
  out.converged = bs.converged;
  return out;
}

}  // namespace fblab
