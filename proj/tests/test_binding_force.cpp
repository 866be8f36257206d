#include <gtest/gtest.h>

#include <cmath>

#include "fblab/binding_force.hpp"

using namespace fblab;

namespace {

PhysicalConfig config() {
  PhysicalConfig c;
  c.rayleigh_length = 2.0e-6;
  c.separation = 9.7e-6;
  c.phase1 = 0.2;
  c.phase2 = -0.4;
  c.delta_omega = hz_to_rad(6e3);
  return c;
}

}  // namespace

TEST(BindingForce, PhasesAreSymmetricAboutKd) {
  ModeParams p;
  p.kd = 0.37;
  p.delta_phi = 0.1;
  p.delta_omega = 5.0;
  for (double t : {0.0, 0.3, 1.7}) {
    const double p1 = interference_phase(p, 1, t), p2 = interference_phase(p, 2, t);
    EXPECT_NEAR(0.5 * (p1 + p2), p.kd, 1e-14);
    EXPECT_NEAR(0.5 * (p2 - p1), beat_phase(p, t), 1e-14);
  }
}

// Taylor remainder of the full force about zero displacement scales as
// epsilon^2 once the drive uses the same wavenumber k'.
TEST(BindingForce, LinearizationIsFirstOrderTaylor) {
  const auto c = config();
  const double W1 = hz_to_rad(27e3), W2 = hz_to_rad(33e3);
  const auto p = reduce(c, W1, W2);
  const double m = c.mass(), kp = c.k_prime();
  const double t = 1.3e-4;
  double prev = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double eps = 1e-9 * std::pow(0.5, i);
    const double z1 = 0.7 * eps, z2 = -1.3 * eps;
    const auto full = full_force(c, z1, z2, t);
    const auto lin = linearized_force(p, m, kp, z1, z2, t);
    const double r = std::abs(full.F1 - lin.F1) + std::abs(full.F2 - lin.F2);
    EXPECT_NEAR(full.drive1, lin.drive1, 1e-10 * std::abs(full.drive1));
    if (i > 0) {
      EXPECT_NEAR(r / prev, 0.25, 0.02);
    }
    prev = r;
  }
}

TEST(BindingForce, PrintedDriveUsesBareWavenumber) {
  const auto c = config();
  const auto p = reduce(c, hz_to_rad(27e3), hz_to_rad(33e3));
  const auto a = linearized_force(p, c.mass(), c.k(), 0.0, 0.0, 0.0);
  const auto b = linearized_force(p, c.mass(), c.k_prime(), 0.0, 0.0, 0.0);
  EXPECT_NEAR(a.drive1 / b.drive1, c.k_prime() / c.k(), 1e-12);
}

TEST(BindingForce, ActionReactionOnlyWithoutBeat) {
  // F1 + F2 vanishes for the motion-dependent part when the spring constants
  // cos(phi_1) and cos(phi_2) coincide, i.e. theta = 0 mod pi.
  ModeParams p;
  p.Omega1 = p.Omega2 = hz_to_rad(30e3);
  p.g = 100.0;
  p.kd = 0.8;
  const double m = 1e-17, k = 5e6;
  const auto f0 = linearized_force(p, m, k, 0.0, 0.0, 0.0);
  const auto f = linearized_force(p, m, k, 1e-9, -2e-9, 0.0);
  EXPECT_NEAR((f.F1 - f0.F1) + (f.F2 - f0.F2), 0.0, 1e-12 * std::abs(f.F1 - f0.F1));
  p.delta_phi = 0.9;
  const auto h0 = linearized_force(p, m, k, 0.0, 0.0, 0.0);
  const auto h = linearized_force(p, m, k, 1e-9, -2e-9, 0.0);
  EXPECT_GT(std::abs((h.F1 - h0.F1) + (h.F2 - h0.F2)), 1e-3 * std::abs(h.F1 - h0.F1));
}

TEST(BindingForce, DirectionalRatesNonreciprocal) {
  ModeParams p;
  p.g = 2.0;
  p.kd = constants::pi / 4;
  const auto [g12, g21] = directional_rates(p, 0.0);
  EXPECT_NEAR(g12, 2.0, 1e-14);
  EXPECT_NEAR(g21, 0.0, 1e-14);
  p.kd = 0.0;
  const auto [a, b] = directional_rates(p, 0.0);
  EXPECT_DOUBLE_EQ(a, b);
}
