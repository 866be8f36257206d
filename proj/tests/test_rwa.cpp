#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "fblab/rwa.hpp"

using namespace fblab;

namespace {

ModeParams base(double kd, double delta_hz) {
  ModeParams p;
  p.Omega1 = hz_to_rad(27e3);
  p.Omega2 = hz_to_rad(33e3);
  p.gamma = hz_to_rad(200.0);
  p.g = hz_to_rad(700.0);
  p.kd = kd;
  p.delta_phi = 0.3;
  p.delta_omega = delta_omega_for(p, ResonanceBranch::detuning(), hz_to_rad(delta_hz));
  p.n1 = 2.0e8;
  p.n2 = 1.6e8;
  return p;
}

const std::vector<ResonanceBranch> kBranches = {ResonanceBranch::detuning(), ResonanceBranch::sum(),
                                                ResonanceBranch::single_mode(1), ResonanceBranch::single_mode(2)};

}  // namespace

TEST(Rwa, MatrixIsTracelessWithEigenvaluesPlusMinusLambda) {
  for (double kd : {-0.9, 0.0, 0.4, 1.57, 2.8})
    for (const auto& br : kBranches) {
      auto p = base(kd, 150.0);
      p.delta_omega = delta_omega_for(p, br, hz_to_rad(150.0));
      const Mat2 M = dynamical_matrix(p, br);
      EXPECT_NEAR(std::abs(M.trace()), 0.0, 1e-9);
      const cplx L = lambda_of(M);
      Eigen::ComplexEigenSolver<Mat2> es(M);
      const auto ev = es.eigenvalues();
      const double e = std::min(std::abs(ev(0) - L) + std::abs(ev(1) + L), std::abs(ev(0) + L) + std::abs(ev(1) - L));
      EXPECT_LT(e, 1e-9 * std::abs(L)) << to_string(br) << " kd=" << kd;
    }
}

TEST(Rwa, EigenvectorsSolveTheEigenproblem) {
  for (double kd : {-0.9, 0.3, 1.2, 2.5})
    for (const auto& br : {ResonanceBranch::detuning(), ResonanceBranch::sum()}) {
      const auto p = base(kd, -300.0);
      const auto s = eigen_solution(p, br);
      const Mat2 M = dynamical_matrix(p, br);
      ASSERT_FALSE(s.exceptional);
      EXPECT_LT((M * s.n_plus - s.Lambda * s.n_plus).norm(), 1e-9 * std::abs(s.Lambda));
      EXPECT_LT((M * s.n_minus + s.Lambda * s.n_minus).norm(), 1e-9 * std::abs(s.Lambda));
      EXPECT_NEAR(s.n_plus.norm(), 1.0, 1e-12);
      EXPECT_NEAR(s.linewidth_plus() + s.linewidth_minus(), 2.0 * p.gamma, 1e-9);
      EXPECT_NEAR(s.linewidth_plus() - s.linewidth_minus(), 2.0 * s.Lambda.imag(), 1e-9);
    }
}

TEST(Rwa, ResonantSplittingTracesCircle) {
  std::vector<double> grid;
  for (int i = 0; i <= 40; ++i) grid.push_back(-constants::pi + constants::two_pi * i / 40.0);
  auto p = base(0.0, 0.0);
  const auto locus = eigenfrequency_locus(p, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    EXPECT_NEAR(std::abs(locus[i]), p.g, 1e-9);
    p.kd = grid[i];
    const cplx L = lambda(p, ResonanceBranch::detuning());
    EXPECT_LT(std::min(std::abs(L - locus[i]), std::abs(L + locus[i])), 1e-9 * p.g);
  }
}

TEST(Rwa, SingleModeSplittingIndependentOfKd) {
  for (int j : {1, 2}) {
    auto p = base(0.0, 0.0);
    const auto br = ResonanceBranch::single_mode(j);
    const double gs = p.g * std::sqrt(p.Omega(3 - j) / p.Omega(j));
    for (double d : {0.3 * gs, 2.0 * gs})
      for (double kd : {0.0, 0.7, 2.1, -1.4}) {
        p.kd = kd;
        p.delta_omega = delta_omega_for(p, br, d);
        const cplx L2 = lambda(p, br) * lambda(p, br);
        EXPECT_NEAR(L2.real(), d * d - gs * gs, 1e-6 * gs * gs);
        EXPECT_NEAR(L2.imag(), 0.0, 1e-6 * gs * gs);
      }
  }
}

TEST(Rwa, EvolutionMatchesMatrixExponential) {
  double worst = 0.0;
  for (double kd : {0.0, 0.6, constants::pi / 2, 2.4})
    for (const auto& br : kBranches)
      for (double tau : {1e-5, 3e-4, 2e-3, 1e-2}) {
        auto p = base(kd, 250.0);
        p.delta_omega = delta_omega_for(p, br, hz_to_rad(250.0));
        const Mat2 M = dynamical_matrix(p, br);
        const Mat2 X = (0.5 * I_unit * tau * M).eval();
        const Mat2 ref = X.exp();
        const Mat2 U = evolution_matrix(M, tau);
        worst = std::max(worst, (U - ref).cwiseAbs().maxCoeff() / std::max(1.0, ref.cwiseAbs().maxCoeff()));
      }
  EXPECT_LT(worst, 1e-10);
}

TEST(Rwa, DeterminantOneAndUnitaryWhenHermitian) {
  for (double tau : {1e-4, 1e-3, 1.7e-2}) {
    for (double kd : {0.0, 0.5, 1.3, 2.9}) {
      const auto c = evolution(base(kd, 80.0), ResonanceBranch::detuning(), tau);
      // Growing solutions lose digits to cancellation, relative to |U|^2.
      const double scale = std::max({1.0, std::norm(c.alpha1 * c.alpha2), std::norm(c.beta1 * c.beta2)});
      EXPECT_LT(std::abs(c.det() - 1.0), 1e-12 * std::sqrt(scale)) << "kd=" << kd << " tau=" << tau;
    }
    // kd = 0: M is Hermitian on the detuning branch, sigma_z-Hermitian on the sum branch.
    const auto p = base(0.0, 80.0);
    const Mat2 U = evolution_matrix(p, ResonanceBranch::detuning(), tau);
    EXPECT_LT((U.adjoint() * U - Mat2::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    auto q = p;
    q.delta_omega = delta_omega_for(q, ResonanceBranch::sum(), 3.0 * q.g);
    const Mat2 V = evolution_matrix(q, ResonanceBranch::sum(), tau);
    Mat2 sz = Mat2::Identity();
    sz(1, 1) = -1.0;
    EXPECT_LT((V.adjoint() * sz * V - sz).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Rwa, ExceptionalPointFlagAndSquareRootScaling) {
  auto p = base(constants::pi / 2, 0.0);
  p.delta_omega = delta_omega_for(p, ResonanceBranch::detuning(), p.g);
  EXPECT_TRUE(is_exceptional(dynamical_matrix(p, ResonanceBranch::detuning())));
  EXPECT_TRUE(eigen_solution(p, ResonanceBranch::detuning()).exceptional);
  // U stays finite and exact through the exceptional point.
  const Mat2 M = dynamical_matrix(p, ResonanceBranch::detuning());
  const Mat2 ref = (0.5 * I_unit * 1e-3 * M).eval().exp();
  EXPECT_LT((evolution_matrix(M, 1e-3) - ref).cwiseAbs().maxCoeff(), 1e-10);
  // Away from it, |Lambda| grows as sqrt(epsilon).
  std::vector<double> le, ll;
  for (double eps : {1e-8, 1e-7, 1e-6, 1e-5, 1e-4}) {
    p.delta_omega = delta_omega_for(p, ResonanceBranch::detuning(), p.g * (1.0 + eps));
    EXPECT_FALSE(is_exceptional(dynamical_matrix(p, ResonanceBranch::detuning())));
    le.push_back(std::log(eps));
    ll.push_back(std::log(std::abs(lambda(p, ResonanceBranch::detuning()))));
  }
  const double slope = (ll.back() - ll.front()) / (le.back() - le.front());
  EXPECT_NEAR(slope, 0.5, 0.005);
}

TEST(Rwa, EnvelopeIntegratorMatchesPropagator) {
  const auto p = base(0.9, 120.0);
  const Vec2 b0(cplx(1.0, 0.2), cplx(-0.3, 0.5));
  std::vector<double> times = {0.0, 1e-4, 7e-4, 3e-3, 1e-2};
  for (const auto& br : {ResonanceBranch::detuning(), ResonanceBranch::sum()}) {
    const auto out = integrate_envelope(p, br, b0, times);
    for (std::size_t i = 0; i < times.size(); ++i) {
      const Vec2 ref = std::exp(-0.5 * p.gamma * times[i]) * evolution_matrix(p, br, times[i]) * b0;
      EXPECT_LT((out[i] - ref).norm(), 2e-8) << to_string(br) << " t=" << times[i];
    }
  }
}

// Lossless dynamics with a real spectrum conserves |L^dag b| for each left
// eigenvector L of M; at kd = 0 this reduces to |b1|^2 + |b2|^2.
TEST(Rwa, LosslessInvariantsConserved) {
  for (double kd : {0.0, constants::pi / 2}) {
    auto p = base(kd, 0.0);
    p.gamma = 0.0;
    p.delta_omega = delta_omega_for(p, ResonanceBranch::detuning(), 2.0 * p.g);
    const Mat2 M = dynamical_matrix(p, ResonanceBranch::detuning());
    Eigen::ComplexEigenSolver<Mat2> es(M.adjoint().eval());
    const Vec2 b0(cplx(0.8, -0.1), cplx(0.25, 0.4));
    const double period = constants::two_pi / p.g;
    std::vector<double> times;
    for (int i = 1; i <= 100; ++i) times.push_back(i * period);
    const auto out = integrate_envelope(p, ResonanceBranch::detuning(), b0, times);
    double drift = 0.0;
    for (int k = 0; k < 2; ++k) {
      const Vec2 L = es.eigenvectors().col(k);
      const double i0 = std::norm(L.dot(b0));
      for (const auto& b : out) drift = std::max(drift, std::abs(std::norm(L.dot(b)) / i0 - 1.0));
    }
    EXPECT_LT(drift, 1e-6) << "kd=" << kd;
    if (kd == 0.0) {
      for (const auto& b : out) EXPECT_NEAR(b.squaredNorm(), b0.squaredNorm(), 1e-6 * b0.squaredNorm());
    }
  }
}

TEST(Rwa, QuenchLimits) {
  auto p = base(0.3, 90.0);
  const auto q0 = quench_occupations(p, 1e6, p.n2, 0.0);
  EXPECT_DOUBLE_EQ(q0.b1_sq, 1e6);
  EXPECT_DOUBLE_EQ(q0.b2_sq, p.n2);
  // Uncoupled: exponential relaxation to the bath.
  p.g = 0.0;
  const double t = 2.0 / p.gamma;
  const auto q = quench_occupations(p, 1e6, p.n2, t);
  const double e = std::exp(-p.gamma * t);
  EXPECT_NEAR(q.b1_sq, 1e6 * e + p.n1 * (1.0 - e), 1e-7 * p.n1);
  EXPECT_NEAR(q.b2_sq, p.n2, 1e-7 * p.n2);
  EXPECT_NEAR(std::abs(q.b1c_b2), 0.0, 1e-7 * p.n1);
  // Total occupation is conserved by the Hermitian coupling at kd = 0 with equal baths.
  auto h = base(0.0, 90.0);
  h.n1 = h.n2 = 1e8;
  for (double s : {0.5, 3.0, 11.0}) {
    const auto r = quench_occupations(h, 1e6, h.n2, s / h.gamma);
    const double es = std::exp(-h.gamma * s / h.gamma);
    EXPECT_NEAR(r.b1_sq + r.b2_sq, (1e6 + h.n2) * es + 2e8 * (1.0 - es), 1e-6 * 2e8);
  }
}

TEST(Rwa, QuenchStationaryFormMatchesQuadrature) {
  for (double kd : {-0.09, 0.7, 1.6}) {
    auto p = base(kd, 202.0);
    p.gamma = hz_to_rad(400.0);
    for (double t : {0.0, 2e-4, 1.5e-3, 6e-3}) {
      const auto a = quench_occupations(p, 1e7, p.n2, t);
      const auto b = quench_occupations_quadrature(p, 1e7, p.n2, t);
      EXPECT_NEAR(a.b1_sq, b.b1_sq, 1e-7 * p.n1) << "kd=" << kd << " t=" << t;
      EXPECT_NEAR(a.b2_sq, b.b2_sq, 1e-7 * p.n1);
      EXPECT_LT(std::abs(a.b1c_b2 - b.b1c_b2), 1e-7 * p.n1);
    }
  }
}
