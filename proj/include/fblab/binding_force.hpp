#pragma once

// Time-dependent optical binding force between the two particles.

#include <cmath>
#include <stdexcept>
#include <utility>

#include "fblab/model.hpp"

namespace fblab {

struct ForceSample {
  double F1 = 0.0;
  double F2 = 0.0;
  double t = 0.0;
  // Motion-independent part of F1, F2 (the drive at the optical beat).
  double drive1 = 0.0;
  double drive2 = 0.0;
};

// Beat phase Delta_phi + Delta_omega t.
inline double beat_phase(const ModeParams& p, double t) { return p.delta_phi + p.delta_omega * t; }

// phi_j(t) = kd -+ (Delta_phi + Delta_omega t), upper sign for j = 1.
inline double interference_phase(const ModeParams& p, int j, double t) {
  if (j != 1 && j != 2) throw std::invalid_argument("interference_phase: j must be 1 or 2");
  const double th = beat_phase(p, t);
  return j == 1 ? p.kd - th : p.kd + th;
}

inline double interference_phase(const PhysicalConfig& c, int j, double t) {
  const double th = (c.phase2 - c.phase1) + c.delta_omega * t;
  const double kd = c.k() * c.separation;
  return j == 1 ? kd - th : kd + th;
}

inline ForceSample full_force(const PhysicalConfig& c, double z1, double z2, double t) {
  const double P = c.force_prefactor();
  const double kp = c.k_prime();
  ForceSample f;
  f.t = t;
  const double p1 = interference_phase(c, 1, t), p2 = interference_phase(c, 2, t);
  f.F1 = P * std::sin(p1 + kp * (z2 - z1));
  f.F2 = P * std::sin(p2 + kp * (z1 - z2));
  f.drive1 = P * std::sin(p1);
  f.drive2 = P * std::sin(p2);
  return f;
}

// Linearized force. `k` is the wavenumber in the motion-independent term;
// the printed convention uses the bare laser wavenumber.
inline ForceSample linearized_force(const ModeParams& p, double m, double k, double z1, double z2,
                                    double t) {
  const double scale = m * std::sqrt(p.Omega1 * p.Omega2) * 2.0 * p.g;
  const double p1 = interference_phase(p, 1, t), p2 = interference_phase(p, 2, t);
  ForceSample f;
  f.t = t;
  f.drive1 = scale * std::sin(p1) / k;
  f.drive2 = scale * std::sin(p2) / k;
  f.F1 = f.drive1 + scale * std::cos(p1) * (z2 - z1);
  f.F2 = f.drive2 + scale * std::cos(p2) * (z1 - z2);
  return f;
}

// (g12, g21) = (g cos(Dw t + Dphi), g cos(Dw t + Dphi + 2 kd)).
inline std::pair<double, double> directional_rates(const ModeParams& p, double t) {
  const double th = beat_phase(p, t);
  return {p.g * std::cos(th), p.g * std::cos(th + 2.0 * p.kd)};
}

}  // namespace fblab
