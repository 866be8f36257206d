#pragma once

// Rotating-wave analytics: branch matrices, complex eigenfrequencies,
// exceptional points, evolution matrices and quench solutions.
//
// Convention: b' = -gamma/2 b + (i/2) M b + noise, with M traceless.
// Eigenfrequencies of H = M/2 are +-Lambda/2, Lambda = sqrt(a^2 + b c) for
// M = [[a, b], [c, -a]] (principal root). A mode with eigenfrequency W decays
// in amplitude at gamma/2 + Im W, so its linewidth is gamma + 2 Im W.

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <boost/numeric/odeint.hpp>

#include "fblab/detail/quadrature.hpp"
#include "fblab/model.hpp"

namespace fblab {

using cplx = std::complex<double>;
using Mat2 = Eigen::Matrix2cd;
using Vec2 = Eigen::Vector2cd;

inline constexpr cplx I_unit{0.0, 1.0};

// Bracketed branch matrix (the factor i/2 and -gamma/2 are applied by callers).
// Single-mode rows satisfy M21 = -conj(M12), M22 = -conj(M11), as required for
// the pair (b_j, b_j*); this fixes the sign of kd in M21.
inline Mat2 dynamical_matrix(const ModeParams& p, const ResonanceBranch& br) {
  const double d = effective_detuning(p, br);
  const cplx gt = p.g * std::exp(I_unit * p.delta_phi);
  const cplx ekd = std::exp(I_unit * p.kd);
  Mat2 M;
  switch (br.tag) {
    case BranchTag::detuning:
      M << -d, gt * std::conj(ekd), std::conj(gt) * std::conj(ekd), d;
      break;
    case BranchTag::sum:
      M << d, std::conj(gt) * ekd, -gt * ekd, -d;
      break;
    case BranchTag::single_mode: {
      const int jp = br.j == 1 ? 2 : 1;
      const double gs = p.g * std::sqrt(p.Omega(jp) / p.Omega(br.j));
      const cplx gst = gs * std::exp(I_unit * p.delta_phi);
      M << d, -std::conj(gst) * ekd, gst * std::conj(ekd), -d;
      break;
    }
  }
  return M;
}

inline cplx lambda_of(const Mat2& M) { return std::sqrt(M(0, 0) * M(0, 0) + M(0, 1) * M(1, 0)); }

inline cplx lambda(const ModeParams& p, const ResonanceBranch& br) {
  return lambda_of(dynamical_matrix(p, br));
}

// Lambda^2 vanishes up to rounding of its two terms.
inline bool is_exceptional(const Mat2& M) {
  const cplx a2 = M(0, 0) * M(0, 0), bc = M(0, 1) * M(1, 0);
  const double scale = std::abs(a2) + std::abs(bc);
  return std::abs(a2 + bc) <= 64.0 * std::numeric_limits<double>::epsilon() * scale;
}

struct ModeSolution {
  ResonanceBranch branch;
  cplx Lambda;
  cplx Omega_plus;
  cplx Omega_minus;
  Vec2 n_plus = Vec2::Zero();
  Vec2 n_minus = Vec2::Zero();
  double gamma = 0.0;
  bool exceptional = false;

  double linewidth_plus() const { return gamma + 2.0 * Omega_plus.imag(); }
  double linewidth_minus() const { return gamma + 2.0 * Omega_minus.imag(); }
};

namespace detail {

inline Vec2 eigenvector(const Mat2& M, cplx lam, cplx phase) {
  const cplx a = M(0, 0), b = M(0, 1), c = M(1, 0);
  Vec2 v1(a + lam, c);
  Vec2 v2(b, lam - a);
  Vec2 v = v1.norm() >= v2.norm() ? Vec2(v1 * phase) : v2;
  return v / v.norm();
}

}  // namespace detail

inline ModeSolution eigen_solution(const ModeParams& p, const ResonanceBranch& br) {
  const Mat2 M = dynamical_matrix(p, br);
  ModeSolution s;
  s.branch = br;
  s.gamma = p.gamma;
  s.Lambda = lambda_of(M);
  s.Omega_plus = 0.5 * s.Lambda;
  s.Omega_minus = -0.5 * s.Lambda;
  s.exceptional = is_exceptional(M);
  if (s.exceptional) return s;
  // Global phases follow the printed eigenvectors where they are defined.
  cplx phase = 1.0;
  if (br.tag == BranchTag::detuning)
    phase = std::exp(I_unit * (p.delta_phi + p.kd));
  else if (br.tag == BranchTag::sum)
    phase = -std::exp(-I_unit * (p.delta_phi + p.kd));
  s.n_plus = detail::eigenvector(M, s.Lambda, phase);
  s.n_minus = detail::eigenvector(M, -s.Lambda, phase);
  return s;
}

// Delta Omega_det = g exp(-i kd) at delta = 0: the continuous branch, which
// traces the full circle as kd runs over [-pi, pi].
inline std::vector<cplx> eigenfrequency_locus(const ModeParams& p, const std::vector<double>& kd_grid) {
  std::vector<cplx> out;
  out.reserve(kd_grid.size());
  for (double kd : kd_grid) out.push_back(p.g * std::exp(-I_unit * kd));
  return out;
}

namespace detail {

// sin(x)/x for complex x.
inline cplx sinc(cplx x) {
  if (std::abs(x) < 1e-4) {
    const cplx x2 = x * x;
    return 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
  }
  return std::sin(x) / x;
}

}  // namespace detail

// U(tau) = cos(Lambda tau/2) I + i (sin(Lambda tau/2)/Lambda) M; the sinc form
// is continuous through the exceptional point.
inline Mat2 evolution_matrix(const Mat2& M, double tau) {
  const cplx L = lambda_of(M);
  const cplx x = 0.5 * L * tau;
  return std::cos(x) * Mat2::Identity() + I_unit * (0.5 * tau) * detail::sinc(x) * M;
}

inline Mat2 evolution_matrix(const ModeParams& p, const ResonanceBranch& br, double tau) {
  return evolution_matrix(dynamical_matrix(p, br), tau);
}

struct EvolutionCoefficients {
  cplx alpha1, alpha2, beta1, beta2;
  double tau = 0.0;
  cplx det() const { return alpha1 * alpha2 - beta1 * beta2; }
};

inline EvolutionCoefficients evolution(const ModeParams& p, const ResonanceBranch& br, double tau) {
  const Mat2 U = evolution_matrix(p, br, tau);
  return {U(0, 0), U(1, 1), U(0, 1), U(1, 0), tau};
}

struct QuenchPoint {
  double t = 0.0;
  double b1_sq = 0.0;
  double b2_sq = 0.0;
  cplx b1c_b2;  // <b1* b2>
};

namespace detail {

// Stationary S = <b b^dag> from A S + S A^dag + gamma N = 0, A = -gamma/2 + (i/2) M.
inline Mat2 stationary_covariance(const ModeParams& p, const Mat2& M) {
  const Mat2 A = -0.5 * p.gamma * Mat2::Identity() + 0.5 * I_unit * M;
  const Mat2 Ah = A.conjugate();
  Eigen::Matrix4cd K = Eigen::Matrix4cd::Zero();
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      for (int k = 0; k < 2; ++k) {
        K(r + 2 * c, k + 2 * c) += A(r, k);
        K(r + 2 * c, r + 2 * k) += Ah(c, k);
      }
  const Eigen::Vector4cd rhs(-p.gamma * p.n1, 0.0, 0.0, -p.gamma * p.n2);
  const Eigen::Vector4cd v = K.fullPivLu().solve(rhs);
  Mat2 S;
  S << v(0), v(2), v(1), v(3);
  return S;
}

inline Mat2 quench_initial(double n1m, double n2m, double t) {
  if (t < 0.0) throw std::invalid_argument("quench_occupations: t must be non-negative");
  if (n1m < 0.0 || n2m < 0.0) throw std::invalid_argument("quench_occupations: negative occupation");
  Mat2 S0 = Mat2::Zero();
  S0(0, 0) = n1m;
  S0(1, 1) = n2m;
  return S0;
}

}  // namespace detail

// Detuning-branch quench from uncorrelated occupations (n1m, n2m) at t = 0.
// Reference form: homogeneous part plus the noise integral by quadrature.
inline QuenchPoint quench_occupations_quadrature(const ModeParams& p, double n1m, double n2m, double t) {
  const Mat2 S0 = detail::quench_initial(n1m, n2m, t);
  const Mat2 M = dynamical_matrix(p, ResonanceBranch::detuning());
  const Mat2 U = evolution_matrix(M, t);
  // S_jk = <b_j b_k*>
  Mat2 S = std::exp(-p.gamma * t) * U * S0 * U.adjoint();
  if (t > 0.0 && p.gamma > 0.0) {
    Mat2 N = Mat2::Zero();
    N(0, 0) = p.n1;
    N(1, 1) = p.n2;
    const double scale = p.n1 + p.n2;
    auto entry = [&](int r, int c) {
      return detail::integrate_complex(
          [&](double s) {
            const Mat2 Us = evolution_matrix(M, s);
            const Mat2 X = Us * N * Us.adjoint();
            return std::exp(-p.gamma * s) * X(r, c);
          },
          0.0, t, 1e-8, scale / p.gamma, "quench_occupations");
    };
    S(0, 0) += p.gamma * entry(0, 0);
    S(1, 1) += p.gamma * entry(1, 1);
    S(1, 0) += p.gamma * entry(1, 0);
  }
  return {t, S(0, 0).real(), S(1, 1).real(), S(1, 0)};
}

// Same quantity through the stationary covariance: S(t) = S_inf + F (S0 - S_inf) F^dag,
// F = e^{-gamma t/2} U(t). Falls back to quadrature when no stationary state exists.
inline QuenchPoint quench_occupations(const ModeParams& p, double n1m, double n2m, double t) {
  const Mat2 S0 = detail::quench_initial(n1m, n2m, t);
  const Mat2 M = dynamical_matrix(p, ResonanceBranch::detuning());
  if (!(p.gamma > 0.0) || !(std::abs(lambda_of(M).imag()) < p.gamma))
    return quench_occupations_quadrature(p, n1m, n2m, t);
  const Mat2 Sinf = detail::stationary_covariance(p, M);
  const Mat2 F = std::exp(-0.5 * p.gamma * t) * evolution_matrix(M, t);
  const Mat2 S = Sinf + F * (S0 - Sinf) * F.adjoint();
  return {t, S(0, 0).real(), S(1, 1).real(), S(1, 0)};
}

// Deterministic envelope dynamics b' = (-gamma/2 + (i/2) M) b, integrated with
// an adaptive Dormand-Prince scheme; returns b at each requested time.
inline std::vector<Vec2> integrate_envelope(const ModeParams& p, const ResonanceBranch& br, const Vec2& b0,
                                            const std::vector<double>& times, double abs_tol = 1e-13,
                                            double rel_tol = 1e-13) {
  using state = std::array<double, 4>;
  const Mat2 A = -0.5 * p.gamma * Mat2::Identity() + 0.5 * I_unit * dynamical_matrix(p, br);
  auto rhs = [&A](const state& x, state& dx, double) {
    const Vec2 b(cplx(x[0], x[1]), cplx(x[2], x[3]));
    const Vec2 db = A * b;
    dx = {db(0).real(), db(0).imag(), db(1).real(), db(1).imag()};
  };
  namespace ode = boost::numeric::odeint;
  auto stepper = ode::make_controlled(abs_tol, rel_tol, ode::runge_kutta_dopri5<state>());
  state x = {b0(0).real(), b0(0).imag(), b0(1).real(), b0(1).imag()};
  std::vector<Vec2> out;
  out.reserve(times.size());
  double t_prev = 0.0;
  for (double t : times) {
    if (t < t_prev) throw std::invalid_argument("integrate_envelope: times must be non-decreasing");
    if (t > t_prev) {
      const double h0 = std::min(t - t_prev, 1e-3 / (std::abs(A(0, 0)) + std::abs(A(0, 1)) + std::abs(A(1, 0)) + 1e-300));
      ode::integrate_adaptive(stepper, rhs, x, t_prev, t, h0);
    }
    out.emplace_back(cplx(x[0], x[1]), cplx(x[2], x[3]));
    t_prev = t;
  }
  return out;
}

}  // namespace fblab
