#pragma once

// Stationary first- and second-order correlations of the rotating-frame
// amplitudes, two-mode squashing and the parametric gain.
//
// g1_jk(tau) = <b_j*(t) b_k(t + tau)> in occupation units. The defining
// integrals (evaluated by quadrature) are the reference; the projector and
// printed closed forms are checked against them.

#include <array>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "fblab/detail/quadrature.hpp"
#include "fblab/model.hpp"
#include "fblab/rwa.hpp"

namespace fblab {

struct instability_error : numerical_error {
  using numerical_error::numerical_error;
};

namespace detail {

inline void require_stable(const ModeParams& p, const Mat2& M, const char* who) {
  const double lpp = std::abs(lambda_of(M).imag());
  if (!(p.gamma > 0.0) || !(lpp < p.gamma))
    throw instability_error(std::string(who) + ": no stationary state (|Im Lambda| = " +
                            std::to_string(lpp) + " >= gamma = " + std::to_string(p.gamma) + ")");
}

inline int check_index(int j) {
  if (j != 1 && j != 2) throw std::invalid_argument("correlations: index must be 1 or 2");
  return j - 1;
}

}  // namespace detail

// Quadrature of the stationary integrals. For tau < 0 the roles of the two
// time arguments are swapped so that the integrand stays decaying.
inline cplx g1(const ModeParams& p, int j, int k, double tau,
               const ResonanceBranch& br = ResonanceBranch::detuning()) {
  const Mat2 M = dynamical_matrix(p, br);
  detail::require_stable(p, M, "g1");
  const int a = detail::check_index(j), b = detail::check_index(k);
  const double n[2] = {p.n1, p.n2};
  const double rate = p.gamma - std::abs(lambda_of(M).imag());
  const double shift = std::abs(tau);
  const Mat2 Ushift = evolution_matrix(M, shift);
  auto integrand = [&](double s) {
    const Mat2 Us = evolution_matrix(M, s);
    const Mat2 Ust = Ushift * Us;  // U(s + |tau|)
    cplx acc = 0.0;
    for (int l = 0; l < 2; ++l) {
      if (tau >= 0.0)
        acc += n[l] * std::conj(Us(a, l)) * Ust(b, l);
      else
        acc += n[l] * std::conj(Ust(a, l)) * Us(b, l);
    }
    return std::exp(-p.gamma * s) * acc;
  };
  const double scale = (p.n1 + p.n2) / rate;
  const cplx I = detail::integrate_complex_half_line(integrand, rate, 1e-10, scale, "g1");
  return p.gamma * std::exp(-0.5 * p.gamma * shift) * I;
}

// Exponential-sum form: g1_jk(tau) = e^{-gamma|tau|/2} (C+ e^{i L tau/2} + C- e^{-i L tau/2})
// for tau >= 0 and e^{-gamma|tau|/2} (D+ e^{-i L* |tau|/2} + D- e^{i L* |tau|/2}) for tau < 0.
struct G1Coefficients {
  cplx Lambda;
  cplx C_plus, C_minus, D_plus, D_minus;
  double gamma = 0.0;

  cplx operator()(double tau) const {
    const double a = std::abs(tau);
    const double env = std::exp(-0.5 * gamma * a);
    if (tau >= 0.0) {
      const cplx e = std::exp(0.5 * I_unit * Lambda * tau);
      return env * (C_plus * e + C_minus / e);
    }
    const cplx e = std::exp(-0.5 * I_unit * std::conj(Lambda) * a);
    return env * (D_plus * e + D_minus / e);
  }
};

inline G1Coefficients g1_coefficients(const ModeParams& p, int j, int k,
                                      const ResonanceBranch& br = ResonanceBranch::detuning()) {
  const Mat2 M = dynamical_matrix(p, br);
  detail::require_stable(p, M, "g1_coefficients");
  if (is_exceptional(M)) throw numerical_error("g1_coefficients: exceptional point, projectors undefined");
  const int a = detail::check_index(j), b = detail::check_index(k);
  const double n[2] = {p.n1, p.n2};
  const cplx L = lambda_of(M);
  const Mat2 P[2] = {0.5 * (Mat2::Identity() + M / L), 0.5 * (Mat2::Identity() - M / L)};
  const double sg[2] = {1.0, -1.0};
  G1Coefficients c;
  c.Lambda = L;
  c.gamma = p.gamma;
  cplx C[2] = {0.0, 0.0}, D[2] = {0.0, 0.0};
  for (int l = 0; l < 2; ++l)
    for (int s = 0; s < 2; ++s)      // sigma, attached to U_k
      for (int sp = 0; sp < 2; ++sp) {  // sigma', attached to conj(U_j)
        const cplx w = p.gamma * n[l] * std::conj(P[sp](a, l)) * P[s](b, l) /
                       (p.gamma - 0.5 * I_unit * (sg[s] * L - sg[sp] * std::conj(L)));
        C[s] += w;
        D[sp] += w;
      }
  c.C_plus = C[0];
  c.C_minus = C[1];
  c.D_plus = D[0];
  c.D_minus = D[1];
  return c;
}

inline cplx g1_analytic(const ModeParams& p, int j, int k, double tau,
                        const ResonanceBranch& br = ResonanceBranch::detuning()) {
  return g1_coefficients(p, j, k, br)(tau);
}

struct ClosedFormG1 {
  cplx value;
  cplx A;
  cplx B;
  double probe_rel_error = 0.0;
  bool flagged = false;
};

namespace detail {

// Printed A, B for the detuning-branch cross correlation, before sign resolution.
inline std::pair<cplx, cplx> printed_AB(const ModeParams& p, bool positive) {
  const double d = effective_detuning(p, ResonanceBranch::detuning());
  const double g = p.g, gam = p.gamma, n1 = p.n1, n2 = p.n2;
  const cplx L = lambda(p, ResonanceBranch::detuning());
  const double Lp = L.real(), Lpp = L.imag();
  const cplx gt = g * std::exp(I_unit * p.delta_phi);
  const cplx E = std::exp(I_unit * p.kd), Em = std::conj(E), E2 = E * E;
  const cplx i = I_unit;
  cplx A, B;
  if (positive) {
    const cplx f1 = (n1 * (2.0 * i * gam - d + L) * Em + n2 * (L + d) * E) /
                    (4.0 * i * L * (gam + Lpp) * (gam - i * Lp));
    const cplx f2 = (n1 * (-(2.0 * i * gam - d) + L) * Em + n2 * (L - d) * E) /
                    (4.0 * i * L * (gam - Lpp) * (gam + i * Lp));
    A = 2.0 * gam * std::conj(gt) * std::sqrt(f1 * f2);
    const cplx num = 2.0 * gam * gam * gam * n1 - 2.0 * i * gam * Lpp * Lp * n1 +
                     d * (i * gam * gam + Lpp * Lp) * (n1 - E2 * n2) + gam * L * L * (n1 + E2 * n2);
    const cplx den = d * gam * L * (n1 - E2 * n2) + L * Lpp * Lp * (n1 + E2 * n2) -
                     i * gam * gam * L * (n1 - E2 * n2);
    B = -i * std::atanh(num / den);
  } else {
    const cplx Lc = std::conj(L);
    const cplx f1 = (n2 * (2.0 * i * gam - d + Lc) * E + n1 * (Lc + d) * Em) /
                    (4.0 * i * Lc * (gam - Lpp) * (gam - i * Lp));
    const cplx f2 = (n2 * (-(2.0 * i * gam - d) + Lc) * E + n1 * (Lc - d) * Em) /
                    (4.0 * i * Lc * (gam + Lpp) * (gam + i * Lp));
    A = 2.0 * gam * std::conj(gt) * std::sqrt(f1 * f2);
    const cplx num = (gam * gam + i * Lpp * Lp) * (-i * d * n1 + E2 * (i * d + 2.0 * gam) * n2) +
                     gam * Lc * Lc * (n1 + E2 * n2);
    const cplx den = d * gam * Lc * n1 + i * Lc * E2 * gam * (i * d + 2.0 * gam) * n2 +
                     (-i * gam * gam + Lpp * Lp) * (n1 + E2 * n2) * Lc;
    B = i * std::atanh(num / den);
  }
  return {A, B};
}

inline cplx closed_form_value(const ModeParams& p, cplx A, cplx B, double tau) {
  const cplx L = lambda(p, ResonanceBranch::detuning());
  const double a = std::abs(tau);
  const double env = std::exp(-0.5 * p.gamma * a);
  // Negative lags run with the conjugate eigenvalue on |tau|.
  if (tau >= 0.0) return env * A * std::cos(0.5 * L * tau - B);
  return env * A * std::cos(0.5 * std::conj(L) * a - B);
}

}  // namespace detail

// e^{-gamma|tau|/2} A cos(Lambda tau/2 - B); the overall sign left open by the
// square root and the arctanh branch is fixed against quadrature at one probe lag.
inline ClosedFormG1 g1_closed_form_12(const ModeParams& p, double tau) {
  const Mat2 M = dynamical_matrix(p, ResonanceBranch::detuning());
  detail::require_stable(p, M, "g1_closed_form_12");
  const bool positive = tau >= 0.0;
  auto [A, B] = detail::printed_AB(p, positive);
  ClosedFormG1 r;
  const double probe = (positive ? 1.0 : -1.0) * 0.7 / p.gamma;
  const cplx ref = g1(p, 1, 2, probe);
  const cplx v = detail::closed_form_value(p, A, B, probe);
  const double e_plus = std::abs(v - ref), e_minus = std::abs(v + ref);
  if (e_minus < e_plus) A = -A;
  const double scale = std::abs(ref) + 1e-12 * (p.n1 + p.n2);
  r.probe_rel_error = std::min(e_plus, e_minus) / scale;
  r.flagged = !(r.probe_rel_error <= 1e-4);
  r.A = A;
  r.B = B;
  r.value = detail::closed_form_value(p, A, B, tau);
  return r;
}

struct StationaryVariances {
  double z_plus = 0.0;   // (g11 + g22)/2 + Re g12(0)
  double z_minus = 0.0;  // (g11 + g22)/2 - Re g12(0)
  double sum = 0.0;      // g11(0) + g22(0), quadrature
  double sum_closed_form = 0.0;
  double squashed() const { return std::min(z_plus, z_minus); }
  double anti_squashed() const { return std::max(z_plus, z_minus); }
};

// Printed sum of the motional variances, detuning branch.
inline double variance_sum_closed_form(const ModeParams& p) {
  const cplx L = lambda(p, ResonanceBranch::detuning());
  const double Lp = L.real(), Lpp = L.imag();
  const double d = effective_detuning(p, ResonanceBranch::detuning());
  const double gam = p.gamma, g = p.g;
  const double den = 2.0 * (gam * gam - Lpp * Lpp) * (gam * gam + Lp * Lp);
  return 2.0 * gam * d * Lp * Lpp * (p.n1 - p.n2) / den +
         gam * gam * (p.n1 + p.n2) * (2.0 * gam * gam + Lp * Lp - Lpp * Lpp + d * d + g * g) / den;
}

inline StationaryVariances stationary_variances(const ModeParams& p) {
  StationaryVariances v;
  const double g11 = g1(p, 1, 1, 0.0).real();
  const double g22 = g1(p, 2, 2, 0.0).real();
  const double re12 = g1(p, 1, 2, 0.0).real();
  v.z_plus = 0.5 * (g11 + g22) + re12;
  v.z_minus = 0.5 * (g11 + g22) - re12;
  v.sum = g11 + g22;
  v.sum_closed_form = variance_sum_closed_form(p);
  return v;
}

// Stationary quadrature covariance for one particle driven at twice its own
// frequency. The pair (b, b*) evolves with the single-mode matrix; in real
// quadratures b = X + iY the Lyapunov equation A C + C A^T + D = 0 is solved
// directly.
struct SingleModeVariances {
  double var_x = 0.0, var_y = 0.0, cov_xy = 0.0;
  double occupation() const { return var_x + var_y; }  // <|b|^2>
  double squashed() const {
    return 0.5 * (var_x + var_y) - std::hypot(0.5 * (var_x - var_y), cov_xy);
  }
  double anti_squashed() const {
    return 0.5 * (var_x + var_y) + std::hypot(0.5 * (var_x - var_y), cov_xy);
  }
};

inline SingleModeVariances single_mode_variances(const ModeParams& p, int j) {
  const auto br = ResonanceBranch::single_mode(j);
  const Mat2 M = dynamical_matrix(p, br);
  detail::require_stable(p, M, "single_mode_variances");
  const Mat2 Ac = -0.5 * p.gamma * Mat2::Identity() + 0.5 * I_unit * M;
  Mat2 T;
  T << 1.0, I_unit, 1.0, -I_unit;
  const Mat2 Ar = T.inverse() * Ac * T;
  if (Ar.imag().cwiseAbs().maxCoeff() > 1e-9 * Ar.real().cwiseAbs().maxCoeff())
    throw numerical_error("single_mode_variances: quadrature drift matrix is not real");
  const Eigen::Matrix2d A = Ar.real();
  const double d = 0.5 * p.gamma * p.n(j);  // per quadrature
  // vec(A C + C A^T) = (I x A + A x I) vec(C), column-major.
  Eigen::Matrix4d K = Eigen::Matrix4d::Zero();
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      for (int k = 0; k < 2; ++k) {
        K(r + 2 * c, k + 2 * c) += A(r, k);
        K(r + 2 * c, r + 2 * k) += A(c, k);
      }
  Eigen::Vector4d rhs(-d, 0.0, 0.0, -d);
  const Eigen::Vector4d C = K.fullPivLu().solve(rhs);
  return {C(0), C(3), 0.5 * (C(1) + C(2))};
}

struct SqueezingGain {
  double r = 0.0;
  double r_squashed = 0.0;  // from sigma_s^2 = 1/(1 + r)
  double r_anti = 0.0;      // from sigma_a^2 = 1/(1 - r)
  double r_max = 0.0;       // g/gamma when parameters are known
  bool consistent = true;
};

// Least-squares r over the two relations; inputs normalized to the uncoupled variance.
inline SqueezingGain squeezing_gain(double squashed_norm, double anti_norm) {
  if (!(squashed_norm > 0.0) || !(anti_norm > 0.0))
    throw std::invalid_argument("squeezing_gain: variances must be positive");
  SqueezingGain s;
  s.r_squashed = 1.0 / squashed_norm - 1.0;
  s.r_anti = 1.0 - 1.0 / anti_norm;
  s.r = 0.5 * (s.r_squashed + s.r_anti);
  const double spread = std::abs(s.r_squashed - s.r_anti);
  s.consistent = squashed_norm <= 1.0 && anti_norm >= 1.0 && spread <= 0.2 * std::abs(s.r) + 1e-12;
  return s;
}

inline SqueezingGain squeezing_gain(double squashed_norm, double anti_norm, const ModeParams& p) {
  SqueezingGain s = squeezing_gain(squashed_norm, anti_norm);
  s.r_max = p.gamma > 0.0 ? p.g / p.gamma : 0.0;
  return s;
}

inline double to_db(double variance_ratio) { return 10.0 * std::log10(variance_ratio); }

// Intensity correlation <|b_j|^2(t) |b_k|^2(t + tau)> for Gaussian statistics.
inline double g2(const ModeParams& p, int j, int k, double tau,
                 const ResonanceBranch& br = ResonanceBranch::detuning()) {
  const Mat2 M = dynamical_matrix(p, br);
  if (is_exceptional(M)) {
    const double gjj = g1(p, j, j, 0.0, br).real(), gkk = g1(p, k, k, 0.0, br).real();
    return gjj * gkk + std::norm(g1(p, j, k, tau, br));
  }
  const auto cjj = g1_coefficients(p, j, j, br), ckk = g1_coefficients(p, k, k, br);
  const auto cjk = g1_coefficients(p, j, k, br);
  return cjj(0.0).real() * ckk(0.0).real() + std::norm(cjk(tau));
}

struct CorrelationSeries {
  std::vector<double> tau;
  std::vector<double> value;
  std::string label;
};

// Normalized cross-intensity correlation g2_12(tau)/(n11 n22) - 1 on a grid.
inline CorrelationSeries normalized_g2_series(const ModeParams& p, const std::vector<double>& tau,
                                              const ResonanceBranch& br = ResonanceBranch::detuning()) {
  CorrelationSeries s;
  s.tau = tau;
  s.label = "g2_12/(n11 n22) - 1, analytic";
  s.value.reserve(tau.size());
  // Projectors are undefined at an exceptional point; quadrature still holds there.
  if (is_exceptional(dynamical_matrix(p, br))) {
    const double norm = g1(p, 1, 1, 0.0, br).real() * g1(p, 2, 2, 0.0, br).real();
    for (double t : tau) s.value.push_back(std::norm(g1(p, 1, 2, t, br)) / norm);
    return s;
  }
  const auto c11 = g1_coefficients(p, 1, 1, br), c22 = g1_coefficients(p, 2, 2, br);
  const auto c12 = g1_coefficients(p, 1, 2, br);
  const double norm = c11(0.0).real() * c22(0.0).real();
  for (double t : tau) s.value.push_back(std::norm(c12(t)) / norm);
  return s;
}

// Two-sided spectral density, per Hz, of u = c1 a1 + c2 a2 for the branch's
// amplitude pair a: S(f) = c^T G D G^dag c*, G = (i 2 pi f - A)^{-1},
// D = gamma diag(noise). The pair is (b_j, b_j*) on a single-mode branch.
inline std::vector<double> combination_psd(const ModeParams& p, const Vec2& c, const std::vector<double>& freq,
                                           const ResonanceBranch& br = ResonanceBranch::detuning()) {
  const Mat2 M = dynamical_matrix(p, br);
  detail::require_stable(p, M, "combination_psd");
  const Mat2 A = -0.5 * p.gamma * Mat2::Identity() + 0.5 * I_unit * M;
  const double n1 = br.tag == BranchTag::single_mode ? p.n(br.j) : p.n1;
  const double n2 = br.tag == BranchTag::single_mode ? p.n(br.j) : p.n2;
  std::vector<double> out;
  out.reserve(freq.size());
  for (double f : freq) {
    const Mat2 G = (I_unit * hz_to_rad(f) * Mat2::Identity() - A).inverse();
    const Vec2 h = G.transpose() * c;  // u(f) = h . xi(f)
    out.push_back(p.gamma * (n1 * std::norm(h(0)) + n2 * std::norm(h(1))));
  }
  return out;
}

// Phase at the origin of the oscillating part of |g1_12|^2 on each side of
// tau = 0, written as cos(Lambda' tau - phase), and their circular mean.
struct CosinePhases {
  double plus = 0.0;
  double minus = 0.0;
  double mean = 0.0;
};

inline CosinePhases cosine_phases(const ModeParams& p, const ResonanceBranch& br = ResonanceBranch::detuning()) {
  const auto c = g1_coefficients(p, 1, 2, br);
  CosinePhases out;
  out.plus = -std::arg(c.C_plus * std::conj(c.C_minus));
  out.minus = -std::arg(c.D_plus * std::conj(c.D_minus));
  out.mean = std::arg(std::exp(I_unit * out.plus) + std::exp(I_unit * out.minus));
  return out;
}

inline double wrap_phase(double x) { return std::arg(std::exp(I_unit * x)); }

inline double sign_of(double x) { return x >= 0.0 ? 1.0 : -1.0; }

// Linear law for the mean phase in the spectrally separated regime |delta| > g.
inline double gbar_prime(double kd, const ResonanceBranch& br, double delta_sign) {
  const double s = sign_of(delta_sign);
  if (br.tag == BranchTag::sum) return wrap_phase(-s * 2.0 * kd);
  return wrap_phase(-s * (2.0 * kd - constants::pi));
}

inline double gbar_prime(const ModeParams& p, const ResonanceBranch& br = ResonanceBranch::detuning()) {
  return gbar_prime(p.kd, br, effective_detuning(p, br));
}

// Inverse of the linear law; kd is returned in [0, pi).
inline double kd_from_phase(double phase, const ResonanceBranch& br, double delta_sign) {
  const double s = sign_of(delta_sign);
  const double b = wrap_phase(phase);
  double kd = br.tag == BranchTag::sum ? -s * b / 2.0 : (constants::pi - s * b) / 2.0;
  kd = std::fmod(kd, constants::pi);
  if (kd < 0.0) kd += constants::pi;
  return kd;
}

}  // namespace fblab
