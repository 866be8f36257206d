#pragma once

// Nonlinear least squares via Eigen's Levenberg-Marquardt with a
// forward-difference Jacobian, plus the usual covariance estimate.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

namespace fblab::detail {

using ResidualFn = std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& r)>;

struct LsqResult {
  Eigen::VectorXd x;
  Eigen::MatrixXd covariance;
  double ssr = 0.0;
  int status = 0;
  bool converged = false;
  int evaluations = 0;
};

struct LsqFunctor {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  ResidualFn fn;
  int n_in = 0, n_out = 0;
  int inputs() const { return n_in; }
  int values() const { return n_out; }
  int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& r) const {
    fn(x, r);
    return 0;
  }
};

inline LsqResult least_squares(const ResidualFn& fn, const Eigen::VectorXd& x0, int n_residuals,
                               int max_evaluations = 4000) {
  if (n_residuals < x0.size()) throw std::invalid_argument("least_squares: fewer residuals than parameters");
  LsqFunctor f{fn, static_cast<int>(x0.size()), n_residuals};
  Eigen::NumericalDiff<LsqFunctor> nd(f);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<LsqFunctor>> lm(nd);
  lm.parameters.maxfev = max_evaluations;
  lm.parameters.xtol = 1e-12;
  lm.parameters.ftol = 1e-12;
  LsqResult out;
  out.x = x0;
  const auto status = lm.minimize(out.x);
  out.status = static_cast<int>(status);
  out.evaluations = static_cast<int>(lm.nfev);
  out.converged = status == Eigen::LevenbergMarquardtSpace::RelativeReductionTooSmall ||
                  status == Eigen::LevenbergMarquardtSpace::RelativeErrorTooSmall ||
                  status == Eigen::LevenbergMarquardtSpace::RelativeErrorAndReductionTooSmall ||
                  status == Eigen::LevenbergMarquardtSpace::CosinusTooSmall ||
                  status == Eigen::LevenbergMarquardtSpace::FtolTooSmall ||
                  status == Eigen::LevenbergMarquardtSpace::XtolTooSmall ||
                  status == Eigen::LevenbergMarquardtSpace::GtolTooSmall;
  Eigen::VectorXd r(n_residuals);
  fn(out.x, r);
  out.ssr = r.squaredNorm();
  Eigen::MatrixXd J(n_residuals, x0.size());
  nd.df(out.x, J);
  const int dof = std::max(1, n_residuals - static_cast<int>(x0.size()));
  const Eigen::MatrixXd JtJ = J.transpose() * J;
  out.covariance = JtJ.completeOrthogonalDecomposition().pseudoInverse() * (out.ssr / dof);
  if (!out.x.allFinite() || !std::isfinite(out.ssr)) out.converged = false;
  return out;
}

}  // namespace fblab::detail
