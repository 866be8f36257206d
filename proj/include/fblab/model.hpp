#pragma once

// Parameter records, unit conventions and the resonance-branch taxonomy.
// SI units throughout: frequencies in rad/s, lengths in m, time in s.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fblab {

namespace constants {
inline constexpr double hbar = 1.054571817e-34;   // J s
inline constexpr double k_B = 1.380649e-23;       // J/K
inline constexpr double eps0 = 8.8541878128e-12;  // F/m
inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;
}  // namespace constants

struct domain_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double hz_to_rad(double f) { return constants::two_pi * f; }
inline double rad_to_hz(double w) { return w / constants::two_pi; }

struct PhysicalConfig {
  double wavelength = 1064e-9;
  double rayleigh_length = 1.0e-6;  // must be supplied for the actual lens
  double radius = 105e-9;
  double permittivity = 2.1;  // relative, silica at 1064 nm
  double density = 2200.0;
  double polarization_angle = constants::pi / 2;
  double field1 = 1.0e7;  // |E_0,1|, V/m
  double field2 = 1.0e7;
  double separation = 10.0e-6;
  double gamma = 0.0;
  double temperature = 295.0;
  double phase1 = 0.0;
  double phase2 = 0.0;
  double delta_omega = 0.0;

  double k() const { return constants::two_pi / wavelength; }
  double k_prime() const { return k() - 1.0 / rayleigh_length; }
  double volume() const { return 4.0 / 3.0 * constants::pi * radius * radius * radius; }
  double mass() const { return density * volume(); }
  double polarizability() const {
    return 3.0 * constants::eps0 * volume() * (permittivity - 1.0) / (permittivity + 2.0);
  }

  void validate() const {
    auto positive = [](double v, const char* what) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw domain_error(std::string("PhysicalConfig: ") + what + " must be positive");
    };
    positive(wavelength, "wavelength");
    positive(rayleigh_length, "rayleigh_length");
    positive(radius, "radius");
    positive(density, "density");
    positive(field1, "field1");
    positive(field2, "field2");
    positive(separation, "separation");
    positive(temperature, "temperature");
    if (!(permittivity > 1.0)) throw domain_error("PhysicalConfig: permittivity must exceed 1");
    if (!(gamma >= 0.0)) throw domain_error("PhysicalConfig: gamma must be non-negative");
    const double kp = k_prime();
    if (!(kp > 0.0 && kp < k()))
      throw domain_error("PhysicalConfig: k' = k - 1/z_R must lie in (0, k)");
  }

  // Prefactor of the full sinusoidal binding force, N.
  double force_prefactor() const {
    const double a = polarizability();
    const double s = std::sin(polarization_angle);
    return k() * k() * k_prime() * a * a * s * s * field1 * field2 /
           (8.0 * constants::pi * constants::eps0 * separation);
  }
};

struct ModeParams {
  double Omega1 = 0.0;
  double Omega2 = 0.0;
  double gamma = 0.0;
  double g = 0.0;
  double delta_omega = 0.0;
  double delta_phi = 0.0;
  double kd = 0.0;  // not reduced modulo 2 pi
  double n1 = 1.0;
  double n2 = 1.0;

  double delta_Omega() const { return Omega2 - Omega1; }
  double Omega_bar() const { return 0.5 * (Omega1 + Omega2); }
  double n(int j) const { return j == 1 ? n1 : n2; }
  double Omega(int j) const { return j == 1 ? Omega1 : Omega2; }

  void validate() const {
    if (!(Omega1 > 0.0) || !(Omega2 > 0.0)) throw domain_error("ModeParams: Omega_j must be positive");
    if (!(gamma >= 0.0)) throw domain_error("ModeParams: gamma must be non-negative");
    if (!(g >= 0.0)) throw domain_error("ModeParams: g must be non-negative");
    if (!(n1 > 0.0) || !(n2 > 0.0)) throw domain_error("ModeParams: occupations must be positive");
    for (double v : {delta_omega, delta_phi, kd})
      if (!std::isfinite(v)) throw domain_error("ModeParams: non-finite field");
  }

  static double occupation(double temperature, double Omega) {
    return constants::k_B * temperature / (constants::hbar * Omega);
  }
  // Bath temperature reproducing occupation n at frequency Omega.
  static double temperature_for(double n, double Omega) {
    return n * constants::hbar * Omega / constants::k_B;
  }
  void set_temperature(double temperature) {
    n1 = occupation(temperature, Omega1);
    n2 = occupation(temperature, Omega2);
  }
};

enum class BranchTag { detuning, sum, single_mode };

struct ResonanceBranch {
  BranchTag tag = BranchTag::detuning;
  int j = 1;  // particle index, single_mode only

  static ResonanceBranch detuning() { return {BranchTag::detuning, 1}; }
  static ResonanceBranch sum() { return {BranchTag::sum, 1}; }
  static ResonanceBranch single_mode(int j) {
    if (j != 1 && j != 2) throw std::invalid_argument("single_mode: particle index must be 1 or 2");
    return {BranchTag::single_mode, j};
  }
};

inline std::string to_string(const ResonanceBranch& b) {
  switch (b.tag) {
    case BranchTag::detuning: return "detuning";
    case BranchTag::sum: return "sum";
    case BranchTag::single_mode: return b.j == 1 ? "single_mode_1" : "single_mode_2";
  }
  return "unknown";
}

inline double effective_detuning(const ModeParams& p, const ResonanceBranch& b) {
  switch (b.tag) {
    case BranchTag::detuning: return p.delta_omega - p.delta_Omega();
    case BranchTag::sum: return p.delta_omega - 2.0 * p.Omega_bar();
    case BranchTag::single_mode: return p.delta_omega - 2.0 * p.Omega(b.j);
  }
  return 0.0;
}

// Optical detuning that places the branch at effective detuning delta.
inline double delta_omega_for(const ModeParams& p, const ResonanceBranch& b, double delta) {
  switch (b.tag) {
    case BranchTag::detuning: return delta + p.delta_Omega();
    case BranchTag::sum: return delta + 2.0 * p.Omega_bar();
    case BranchTag::single_mode: return delta + 2.0 * p.Omega(b.j);
  }
  return delta;
}

inline double coupling_magnitude(const PhysicalConfig& c, double Omega1, double Omega2) {
  const double a = c.polarizability();
  const double s = std::sin(c.polarization_angle);
  const double k = c.k(), kp = c.k_prime();
  return k * k * kp * kp * a * a * s * s * c.field1 * c.field2 /
         (16.0 * constants::pi * constants::eps0 * c.mass() * c.separation *
          std::sqrt(Omega1 * Omega2));
}

inline ModeParams reduce(const PhysicalConfig& c, double Omega1, double Omega2) {
  c.validate();
  if (!(Omega1 > 0.0) || !(Omega2 > 0.0)) throw domain_error("reduce: Omega_j must be positive");
  ModeParams p;
  p.Omega1 = Omega1;
  p.Omega2 = Omega2;
  p.gamma = c.gamma;
  p.g = coupling_magnitude(c, Omega1, Omega2);
  p.delta_omega = c.delta_omega;
  p.delta_phi = c.phase2 - c.phase1;
  p.kd = c.k() * c.separation;
  p.set_temperature(c.temperature);
  if (!std::isfinite(p.g) || !std::isfinite(p.kd)) throw domain_error("reduce: non-finite coupling");
  return p;
}

// Field product |E_0,1 E_0,2| giving coupling g; inverse of coupling_magnitude.
inline double field_product_for_coupling(const PhysicalConfig& c, double Omega1, double Omega2,
                                         double g) {
  PhysicalConfig unit = c;
  unit.field1 = 1.0;
  unit.field2 = 1.0;
  return g / coupling_magnitude(unit, Omega1, Omega2);
}

}  // namespace fblab
