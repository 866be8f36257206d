#pragma once

// Digital Butterworth band-pass as second-order sections and zero-phase
// forward-backward filtering.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace fblab::detail {

struct Biquad {
  double b0, b1, b2, a1, a2;  // a0 = 1
};

// Order-n analog prototype, band-pass transform, bilinear map with prewarping.
inline std::vector<Biquad> butter_bandpass(int order, double f_lo, double f_hi, double fs) {
  if (order < 1) throw std::invalid_argument("butter_bandpass: order must be positive");
  if (!(0.0 < f_lo && f_lo < f_hi && f_hi < 0.5 * fs))
    throw std::invalid_argument("butter_bandpass: need 0 < f_lo < f_hi < fs/2");
  using cd = std::complex<double>;
  const double pi = std::numbers::pi;
  const double fs2 = 2.0 * fs;
  const double w1 = fs2 * std::tan(pi * f_lo / fs), w2 = fs2 * std::tan(pi * f_hi / fs);
  const double bw = w2 - w1, wo = std::sqrt(w1 * w2);
  std::vector<cd> poles;
  for (int m = -order + 1; m < order; m += 2) {
    const cd p = -std::exp(cd(0.0, pi * m / (2.0 * order)));
    const cd ps = p * bw / 2.0;
    const cd r = std::sqrt(ps * ps - wo * wo);
    poles.push_back(ps + r);
    poles.push_back(ps - r);
  }
  // Bilinear map; analog zeros at s = 0 go to z = 1, those at infinity to z = -1.
  double gain = std::pow(bw, order);
  cd num = 1.0, den = 1.0;
  for (int i = 0; i < order; ++i) num *= fs2;  // (fs2 - 0) for each zero at s = 0
  std::vector<cd> zp;
  for (const cd& p : poles) {
    den *= fs2 - p;
    zp.push_back((fs2 + p) / (fs2 - p));
  }
  gain *= (num / den).real();
  // Keep one pole of each conjugate pair (Im > 0).
  std::vector<cd> upper;
  for (const cd& z : zp)
    if (z.imag() > 0.0) upper.push_back(z);
  if (static_cast<int>(upper.size()) != order) throw std::runtime_error("butter_bandpass: pole pairing failed");
  std::vector<Biquad> sos;
  for (std::size_t i = 0; i < upper.size(); ++i) {
    const cd z = upper[i];
    Biquad q{1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)};
    if (i == 0) {
      q.b0 *= gain;
      q.b1 *= gain;
      q.b2 *= gain;
    }
    sos.push_back(q);
  }
  return sos;
}

inline void sos_filter_inplace(const std::vector<Biquad>& sos, std::vector<double>& x) {
  for (const auto& q : sos) {
    double s1 = 0.0, s2 = 0.0;  // transposed direct form II
    for (double& v : x) {
      const double y = q.b0 * v + s1;
      s1 = q.b1 * v - q.a1 * y + s2;
      s2 = q.b2 * v - q.a2 * y;
      v = y;
    }
  }
}

// Forward-backward filtering with odd extension at both ends.
inline std::vector<double> sos_filtfilt(const std::vector<Biquad>& sos, const std::vector<double>& x,
                                        std::size_t padlen) {
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("sos_filtfilt: series too short");
  padlen = std::min(padlen, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x.back() - x[n - 1 - i]);
  sos_filter_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());
  sos_filter_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(padlen), ext.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

// |H(e^{i 2 pi f/fs})| of a cascade.
inline double sos_magnitude(const std::vector<Biquad>& sos, double f, double fs) {
  const std::complex<double> z = std::polar(1.0, -2.0 * std::numbers::pi * f / fs);  // z^{-1}
  std::complex<double> h = 1.0;
  for (const auto& q : sos) h *= (q.b0 + q.b1 * z + q.b2 * z * z) / (1.0 + q.a1 * z + q.a2 * z * z);
  return std::abs(h);
}

}  // namespace fblab::detail
