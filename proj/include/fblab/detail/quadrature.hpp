#pragma once

// Adaptive Gauss-Kronrod helpers for complex integrands.

#include <cmath>
#include <cstdio>
#include <complex>
#include <stdexcept>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace fblab {

struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

using cplx = std::complex<double>;

// `scale` sets the absolute error floor rel_tol * scale, needed when the
// integral itself vanishes. Results whose error estimate exceeds accept_rel
// (default 1e3 rel_tol) times (|value| + scale) are rejected.
template <class F>
cplx integrate_complex(F&& f, double a, double b, double rel_tol, double scale, const char* who,
                       double accept_rel = 0.0) {
  if (!(accept_rel > 0.0)) accept_rel = 1e3 * rel_tol;
  using gk = boost::math::quadrature::gauss_kronrod<double, 31>;
  double err_re = 0.0, err_im = 0.0;
  const double re = gk::integrate([&](double x) { return f(x).real(); }, a, b, 12, rel_tol, &err_re);
  const double im = gk::integrate([&](double x) { return f(x).imag(); }, a, b, 12, rel_tol, &err_im);
  const double mag = std::hypot(re, im);
  const double err = std::hypot(err_re, err_im);
  if (!std::isfinite(mag) || err > accept_rel * (mag + scale))
  {
    char buf[96];
    std::snprintf(buf, sizeof buf, " (value %.3e, error estimate %.3e, on [%.3e, %.3e])", mag, err, a, b);
    throw numerical_error(std::string(who) + ": quadrature did not converge" + buf);
  }
  return {re, im};
}

// Integral over [0, inf) of an integrand decaying at least like exp(-rate x).
// The half-line is cut into panels of a few decay lengths until the panel
// contribution is negligible.
template <class F>
cplx integrate_complex_half_line(F&& f, double rate, double rel_tol, double scale, const char* who) {
  if (!(rate > 0.0)) throw numerical_error(std::string(who) + ": integrand does not decay");
  const double panel = 4.0 / rate;
  cplx total = 0.0;
  double a = 0.0;
  for (int i = 0; i < 400; ++i) {
    const cplx part = integrate_complex(f, a, a + panel, rel_tol, scale, who, rel_tol * 1e2);
    total += part;
    a += panel;
    if (std::abs(part) <= rel_tol * 1e-3 * (std::abs(total) + scale)) return total;
  }
  throw numerical_error(std::string(who) + ": half-line integral did not converge");
}

}  // namespace detail
}  // namespace fblab
