#pragma once

// Stochastic time-domain integration of the two coupled oscillators
//   m z_j'' + m (gamma + gamma_fb,j) z_j' + m Omega_j^2 z_j = F_bind,j + F_th,j
// with the full time-dependent binding force, staged protocols and
// conversion to complex amplitudes.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fblab/binding_force.hpp"
#include "fblab/model.hpp"

namespace fblab {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct blowup_error : std::runtime_error {
  blowup_error(const std::string& what, std::size_t step) : std::runtime_error(what), step(step) {}
  std::size_t step;
};

// Particle and optical context for a ModeParams-level simulation.
struct SimContext {
  double mass = PhysicalConfig{}.mass();
  double k = PhysicalConfig{}.k();              // drive term of the linearized force
  double k_prime = PhysicalConfig{}.k_prime();  // argument of the full sinusoid

  static SimContext from(const PhysicalConfig& c) { return {c.mass(), c.k(), c.k_prime()}; }
};

enum class ForceModel { linearized, full };

struct Stage {
  double duration = 0.0;
  double gamma_fb1 = 0.0;
  double gamma_fb2 = 0.0;
  bool interaction = true;
  std::optional<double> delta_omega;  // overrides ModeParams::delta_omega
};

struct Protocol {
  std::vector<Stage> stages;
  // Occupations of the initial Gaussian state; thermal (n1, n2) when unset.
  std::optional<std::array<double, 2>> initial_occupations;

  static Protocol single(double duration) { return Protocol{{Stage{duration, 0.0, 0.0, true, std::nullopt}}, std::nullopt}; }

  double total_duration() const {
    double t = 0.0;
    for (const auto& s : stages) t += s.duration;
    return t;
  }
  void validate() const {
    if (stages.empty()) throw config_error("Protocol: at least one stage required");
    for (const auto& s : stages) {
      if (!(s.duration > 0.0)) throw config_error("Protocol: stage durations must be positive");
      if (!(s.gamma_fb1 >= 0.0) || !(s.gamma_fb2 >= 0.0))
        throw config_error("Protocol: feedback damping must be non-negative");
    }
  }
};

struct SimSettings {
  double dt = 0.0;
  std::size_t n_traj = 1;
  std::uint64_t seed = 1;
  std::size_t record_stride = 1;
  double record_start = 0.0;
  ForceModel force = ForceModel::linearized;
  unsigned threads = 1;
};

struct Trajectory {
  std::vector<double> z1, v1, z2, v2;
};

struct TrajectoryEnsemble {
  double dt = 0.0;         // integration step
  double record_dt = 0.0;  // spacing of stored samples
  double t0 = 0.0;         // time of the first stored sample
  std::size_t n_steps = 0;
  std::size_t n_records = 0;
  std::size_t n_traj = 0;
  std::uint64_t seed = 0;
  Protocol protocol;
  std::vector<Trajectory> traj;
};

inline double max_frequency(const ModeParams& p, const Protocol& pr) {
  double w = std::max(p.Omega1, p.Omega2);
  for (const auto& s : pr.stages) w = std::max(w, std::abs(s.delta_omega.value_or(p.delta_omega)));
  return w;
}

// Resolution guard: at least 50 steps per fastest period.
inline void check_resolution(const ModeParams& p, const Protocol& pr, double dt) {
  const double limit = constants::two_pi / (50.0 * max_frequency(p, pr));
  if (!(dt > 0.0) || dt > limit * (1.0 + 1e-12))
    throw config_error("simulate: dt = " + std::to_string(dt) + " s exceeds resolution limit " +
                       std::to_string(limit) + " s");
}

// Default step: `steps_per_period` steps per fastest period. Heun's phase error
// per step is (Omega dt)^3/6, so a few hundred steps keep frequency errors
// below the linewidths of interest.
inline double default_dt(const ModeParams& p, const Protocol& pr, double steps_per_period = 200.0) {
  return constants::two_pi / (steps_per_period * max_frequency(p, pr));
}

namespace detail {

inline std::mt19937_64 particle_engine(std::uint64_t seed, std::size_t traj, int particle) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(traj & 0xffffffffu), static_cast<std::uint32_t>(traj >> 32),
                    static_cast<std::uint32_t>(particle)};
  return std::mt19937_64(seq);
}

struct StagePlan {
  std::size_t first_step = 0;
  std::size_t n_steps = 0;
  double t_start = 0.0;
  double theta_start = 0.0;
  double delta_omega = 0.0;
  double gamma1 = 0.0, gamma2 = 0.0;
  bool interaction = true;
};

inline std::vector<StagePlan> plan_stages(const ModeParams& p, const Protocol& pr, double dt) {
  std::vector<StagePlan> plan;
  std::size_t step = 0;
  double theta = p.delta_phi;
  for (const auto& s : pr.stages) {
    StagePlan sp;
    sp.first_step = step;
    sp.n_steps = static_cast<std::size_t>(std::llround(s.duration / dt));
    sp.t_start = static_cast<double>(step) * dt;
    sp.theta_start = theta;
    sp.delta_omega = s.delta_omega.value_or(p.delta_omega);
    sp.gamma1 = p.gamma + s.gamma_fb1;
    sp.gamma2 = p.gamma + s.gamma_fb2;
    sp.interaction = s.interaction;
    plan.push_back(sp);
    step += sp.n_steps;
    theta += sp.delta_omega * static_cast<double>(sp.n_steps) * dt;
  }
  return plan;
}

}  // namespace detail

// Beat phase theta(t) accumulated continuously across stages.
inline double protocol_beat_phase(const ModeParams& p, const Protocol& pr, double dt, double t) {
  const auto plan = detail::plan_stages(p, pr, dt);
  const detail::StagePlan* cur = &plan.front();
  for (const auto& s : plan)
    if (t >= s.t_start) cur = &s;
  return cur->theta_start + cur->delta_omega * (t - cur->t_start);
}

class LangevinIntegrator {
 public:
  LangevinIntegrator(const ModeParams& p, const SimContext& ctx, const Protocol& pr, const SimSettings& s)
      : p_(p), ctx_(ctx), pr_(pr), s_(s) {
    p_.validate();
    pr_.validate();
    if (!(ctx_.mass > 0.0)) throw config_error("simulate: mass must be positive");
    if (s_.record_stride == 0) throw config_error("simulate: record_stride must be positive");
    check_resolution(p_, pr_, s_.dt);
    plan_ = detail::plan_stages(p_, pr_, s_.dt);
    n_steps_ = plan_.back().first_step + plan_.back().n_steps;
    if (n_steps_ == 0) throw config_error("simulate: duration shorter than dt");
    start_step_ = static_cast<std::size_t>(std::ceil(s_.record_start / s_.dt - 1e-9));
    if (start_step_ > n_steps_) throw config_error("simulate: record_start beyond protocol end");
    n_records_ = (n_steps_ - start_step_ + s_.record_stride - 1) / s_.record_stride;
  }

  std::size_t n_steps() const { return n_steps_; }
  std::size_t n_records() const { return n_records_; }
  double record_dt() const { return s_.dt * static_cast<double>(s_.record_stride); }
  double t0() const { return static_cast<double>(start_step_) * s_.dt; }

  Trajectory run(std::size_t traj_index) const {
    auto eng1 = detail::particle_engine(s_.seed, traj_index, 1);
    auto eng2 = detail::particle_engine(s_.seed, traj_index, 2);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double m = ctx_.mass;
    const double W1 = p_.Omega1, W2 = p_.Omega2;
    const double T1 = ModeParams::temperature_for(p_.n1, W1);
    const double T2 = ModeParams::temperature_for(p_.n2, W2);
    const double n01 = pr_.initial_occupations ? (*pr_.initial_occupations)[0] : p_.n1;
    const double n02 = pr_.initial_occupations ? (*pr_.initial_occupations)[1] : p_.n2;
    const double Ti1 = ModeParams::temperature_for(n01, W1), Ti2 = ModeParams::temperature_for(n02, W2);
    double z1 = normal(eng1) * std::sqrt(constants::k_B * Ti1 / (m * W1 * W1));
    double v1 = normal(eng1) * std::sqrt(constants::k_B * Ti1 / m);
    double z2 = normal(eng2) * std::sqrt(constants::k_B * Ti2 / (m * W2 * W2));
    double v2 = normal(eng2) * std::sqrt(constants::k_B * Ti2 / m);

    const double h = s_.dt;
    const double sqh = std::sqrt(h);
    const double sig1 = std::sqrt(2.0 * p_.gamma * constants::k_B * T1 / m) * sqh;
    const double sig2 = std::sqrt(2.0 * p_.gamma * constants::k_B * T2 / m) * sqh;
    const double K = 2.0 * p_.g * std::sqrt(W1 * W2);
    const double ck = std::cos(p_.kd), sk = std::sin(p_.kd);
    const double inv_k = 1.0 / ctx_.k, kp = ctx_.k_prime;
    const bool full = s_.force == ForceModel::full;

    Trajectory tr;
    tr.z1.reserve(n_records_);
    tr.v1.reserve(n_records_);
    tr.z2.reserve(n_records_);
    tr.v2.reserve(n_records_);

    // Accelerations from the binding force given cos/sin of theta.
    auto bind = [&](double cth, double sth, double a1z, double a2z, double& f1, double& f2) {
      // phi_1 = kd - theta, phi_2 = kd + theta
      const double c1 = ck * cth + sk * sth, s1 = sk * cth - ck * sth;
      const double c2 = ck * cth - sk * sth, s2 = sk * cth + ck * sth;
      if (!full) {
        f1 = K * (s1 * inv_k + c1 * (a2z - a1z));
        f2 = K * (s2 * inv_k + c2 * (a1z - a2z));
      } else {
        const double x = kp * (a2z - a1z);
        const double cx = std::cos(x), sx = std::sin(x);
        f1 = (K / kp) * (s1 * cx + c1 * sx);
        f2 = (K / kp) * (s2 * cx - c2 * sx);
      }
    };

    std::size_t step = 0;
    for (const auto& st : plan_) {
      const double G1 = st.gamma1, G2 = st.gamma2;
      const std::complex<double> rot = std::polar(1.0, st.delta_omega * h);
      std::complex<double> e_th;
      for (std::size_t i = 0; i < st.n_steps; ++i, ++step) {
        if (i % 1024 == 0)
          e_th = std::polar(1.0, st.theta_start + st.delta_omega * static_cast<double>(i) * h);
        const std::complex<double> e_next = e_th * rot;
        if (step >= start_step_ && (step - start_step_) % s_.record_stride == 0) {
          tr.z1.push_back(z1);
          tr.v1.push_back(v1);
          tr.z2.push_back(z2);
          tr.v2.push_back(v2);
        }
        double f1 = 0.0, f2 = 0.0, g1n = 0.0, g2n = 0.0;
        if (st.interaction) bind(e_th.real(), e_th.imag(), z1, z2, f1, f2);
        const double a1 = -G1 * v1 - W1 * W1 * z1 + f1;
        const double a2 = -G2 * v2 - W2 * W2 * z2 + f2;
        const double w1 = sig1 * normal(eng1), w2 = sig2 * normal(eng2);
        const double pz1 = z1 + h * v1, pv1 = v1 + h * a1 + w1;
        const double pz2 = z2 + h * v2, pv2 = v2 + h * a2 + w2;
        if (st.interaction) bind(e_next.real(), e_next.imag(), pz1, pz2, g1n, g2n);
        const double b1 = -G1 * pv1 - W1 * W1 * pz1 + g1n;
        const double b2 = -G2 * pv2 - W2 * W2 * pz2 + g2n;
        z1 += 0.5 * h * (v1 + pv1);
        z2 += 0.5 * h * (v2 + pv2);
        v1 += 0.5 * h * (a1 + b1) + w1;
        v2 += 0.5 * h * (a2 + b2) + w2;
        e_th = e_next;
        if ((step & 0xffff) == 0 && !(std::isfinite(z1) && std::isfinite(z2) && std::isfinite(v1) && std::isfinite(v2)))
          throw blowup_error("simulate: non-finite state at step " + std::to_string(step) + " (trajectory " +
                                 std::to_string(traj_index) + ")",
                             step);
      }
    }
    if (!(std::isfinite(z1) && std::isfinite(z2) && std::isfinite(v1) && std::isfinite(v2)))
      throw blowup_error("simulate: non-finite state at step " + std::to_string(step), step);
    return tr;
  }

 private:
  ModeParams p_;
  SimContext ctx_;
  Protocol pr_;
  SimSettings s_;
  std::vector<detail::StagePlan> plan_;
  std::size_t n_steps_ = 0;
  std::size_t start_step_ = 0;
  std::size_t n_records_ = 0;
};

// Runs trajectories and hands each to `visit` in trajectory-index order. With
// several threads, batches are computed concurrently and visited in order.
inline void simulate_each(const ModeParams& p, const SimContext& ctx, const Protocol& pr, const SimSettings& s,
                          const std::function<void(std::size_t, Trajectory&&)>& visit) {
  const LangevinIntegrator integ(p, ctx, pr, s);
  const unsigned nt = std::max(1u, s.threads);
  if (nt == 1) {
    for (std::size_t i = 0; i < s.n_traj; ++i) visit(i, integ.run(i));
    return;
  }
  const std::size_t batch = 2 * nt;
  for (std::size_t first = 0; first < s.n_traj; first += batch) {
    const std::size_t count = std::min(batch, s.n_traj - first);
    std::vector<Trajectory> out(count);
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < std::min<std::size_t>(nt, count); ++w)
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < count; k = next++) {
          try {
            out[k] = integ.run(first + k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    for (std::size_t k = 0; k < count; ++k) {
      if (errors[k]) std::rethrow_exception(errors[k]);
      visit(first + k, std::move(out[k]));
    }
  }
}

inline TrajectoryEnsemble simulate(const ModeParams& p, const SimContext& ctx, const Protocol& pr,
                                   const SimSettings& s) {
  const LangevinIntegrator integ(p, ctx, pr, s);
  TrajectoryEnsemble e;
  e.dt = s.dt;
  e.record_dt = integ.record_dt();
  e.t0 = integ.t0();
  e.n_steps = integ.n_steps();
  e.n_records = integ.n_records();
  e.n_traj = s.n_traj;
  e.seed = s.seed;
  e.protocol = pr;
  e.traj.resize(s.n_traj);
  simulate_each(p, ctx, pr, s, [&](std::size_t i, Trajectory&& t) { e.traj[i] = std::move(t); });
  return e;
}

inline double zero_point(double mass, double Omega) {
  return std::sqrt(constants::hbar / (2.0 * mass * Omega));
}

// a_j(t) = e^{i Omega_j t} (z_j + i v_j/Omega_j) / (2 z_zpf,j), sample k at t0 + k dt.
inline std::vector<std::complex<double>> to_complex_amplitude(const std::vector<double>& z,
                                                              const std::vector<double>& v, double Omega,
                                                              double mass, double t0, double dt) {
  if (z.size() != v.size()) throw std::invalid_argument("to_complex_amplitude: length mismatch");
  const double s = 1.0 / (2.0 * zero_point(mass, Omega));
  std::vector<std::complex<double>> a(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    a[k] = std::polar(s, Omega * t) * std::complex<double>(z[k], v[k] / Omega);
  }
  return a;
}

inline std::pair<std::vector<std::complex<double>>, std::vector<std::complex<double>>> to_complex_amplitudes(
    const Trajectory& tr, const ModeParams& p, double mass, double t0, double dt) {
  return {to_complex_amplitude(tr.z1, tr.v1, p.Omega1, mass, t0, dt),
          to_complex_amplitude(tr.z2, tr.v2, p.Omega2, mass, t0, dt)};
}

struct QuenchResult {
  std::vector<double> t;  // time since the interaction switch-on
  std::vector<double> b1_sq, b2_sq;
  std::vector<double> b1_sq_se, b2_sq_se;
  std::vector<std::complex<double>> b1c_b2;
  // Ensemble covariance of (|b1|^2, |b2|^2) at each time, for difference errors.
  std::vector<double> cov_12;
  // Occupations averaged per trajectory over a centred window of
  // coarse_window records, with their standard errors; NaN where the window
  // leaves the record. Empty when no window was requested.
  std::size_t coarse_window = 0;
  std::vector<double> b1_sq_coarse, b2_sq_coarse;
  std::vector<double> b1_sq_coarse_se, b2_sq_coarse_se;
  // Parameters in the frame of the free stage (delta_phi is the beat phase at switch-on).
  ModeParams frame;
  std::size_t n_traj = 0;
};

struct QuenchSettings {
  double gamma_fb = 0.0;
  double t_cool = 0.0;
  double t_free = 0.0;
  double dt = 0.0;
  std::size_t n_traj = 0;
  std::uint64_t seed = 1;
  std::size_t record_stride = 1;
  double cooling_detuning = 0.0;  // added to delta_omega while cooling
  std::size_t coarse_window = 0;  // records; rounded up to odd, 0 or 1 disables
  unsigned threads = 1;
};

// Cooling of particle 1 with far-detuned interaction, then resonant free
// evolution. Deterministic drive components are removed by subtracting the
// ensemble mean of each rotating-frame amplitude.
inline QuenchResult run_quench(const ModeParams& p, const SimContext& ctx, const QuenchSettings& q) {
  if (!(q.gamma_fb >= 0.0)) throw config_error("run_quench: gamma_fb must be non-negative");
  if (q.n_traj < 2) throw config_error("run_quench: at least two trajectories required");
  Protocol pr;
  Stage cool{q.t_cool, q.gamma_fb, 0.0, true, p.delta_omega + q.cooling_detuning};
  Stage free{q.t_free, 0.0, 0.0, true, std::nullopt};
  pr.stages = {cool, free};
  SimSettings s;
  s.dt = q.dt;
  s.n_traj = q.n_traj;
  s.seed = q.seed;
  s.record_stride = q.record_stride;
  s.threads = q.threads;
  const auto plan = detail::plan_stages(p, pr, q.dt);
  const double t_switch = plan[1].t_start;
  s.record_start = t_switch;
  const double delta = effective_detuning(p, ResonanceBranch::detuning());

  QuenchResult r;
  r.frame = p;
  r.frame.delta_phi = std::remainder(plan[1].theta_start, constants::two_pi);
  r.n_traj = q.n_traj;
  const LangevinIntegrator integ(p, ctx, pr, s);
  const std::size_t n = integ.n_records();
  const double rdt = integ.record_dt();
  const double t0 = integ.t0() - t_switch;
  std::vector<std::vector<std::complex<double>>> B1, B2;
  B1.reserve(q.n_traj);
  B2.reserve(q.n_traj);
  simulate_each(p, ctx, pr, s, [&](std::size_t, Trajectory&& tr) {
    auto a1 = to_complex_amplitude(tr.z1, tr.v1, p.Omega1, ctx.mass, t0, rdt);
    auto a2 = to_complex_amplitude(tr.z2, tr.v2, p.Omega2, ctx.mass, t0, rdt);
    for (std::size_t k = 0; k < n; ++k) {
      const double t = t0 + static_cast<double>(k) * rdt;
      a1[k] *= std::polar(1.0, -0.5 * delta * t);
      a2[k] *= std::polar(1.0, 0.5 * delta * t);
    }
    B1.push_back(std::move(a1));
    B2.push_back(std::move(a2));
  });
  const double N = static_cast<double>(q.n_traj);
  r.t.resize(n);
  r.b1_sq.resize(n);
  r.b2_sq.resize(n);
  r.b1_sq_se.resize(n);
  r.b2_sq_se.resize(n);
  r.b1c_b2.resize(n);
  r.cov_12.resize(n);
  std::vector<double> x1(q.n_traj), x2(q.n_traj);
  std::vector<std::complex<double>> M1(n), M2(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < q.n_traj; ++i) {
      m1 += B1[i][k];
      m2 += B2[i][k];
    }
    m1 /= N;
    m2 /= N;
    M1[k] = m1;
    M2[k] = m2;
    double s1 = 0.0, s2 = 0.0;
    std::complex<double> c12 = 0.0;
    for (std::size_t i = 0; i < q.n_traj; ++i) {
      const auto d1 = B1[i][k] - m1, d2 = B2[i][k] - m2;
      x1[i] = std::norm(d1) * N / (N - 1.0);
      x2[i] = std::norm(d2) * N / (N - 1.0);
      s1 += x1[i];
      s2 += x2[i];
      c12 += std::conj(d1) * d2;
    }
    const double mu1 = s1 / N, mu2 = s2 / N;
    double v1 = 0.0, v2 = 0.0, cv = 0.0;
    for (std::size_t i = 0; i < q.n_traj; ++i) {
      v1 += (x1[i] - mu1) * (x1[i] - mu1);
      v2 += (x2[i] - mu2) * (x2[i] - mu2);
      cv += (x1[i] - mu1) * (x2[i] - mu2);
    }
    r.t[k] = t0 + static_cast<double>(k) * rdt;
    r.b1_sq[k] = mu1;
    r.b2_sq[k] = mu2;
    r.b1_sq_se[k] = std::sqrt(v1 / (N - 1.0) / N);
    r.b2_sq_se[k] = std::sqrt(v2 / (N - 1.0) / N);
    r.cov_12[k] = cv / (N - 1.0) / N;
    r.b1c_b2[k] = c12 / (N - 1.0);
  }
  std::size_t w = q.coarse_window | 1;
  if (w > 1 && w <= n) {
    r.coarse_window = w;
    const std::size_t h = w / 2;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> s1(n, 0.0), ss1(n, 0.0), s2(n, 0.0), ss2(n, 0.0);
    std::vector<double> y1(n), y2(n);
    for (std::size_t i = 0; i < q.n_traj; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        y1[k] = std::norm(B1[i][k] - M1[k]) * N / (N - 1.0);
        y2[k] = std::norm(B2[i][k] - M2[k]) * N / (N - 1.0);
      }
      double a1 = 0.0, a2 = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        a1 += y1[k];
        a2 += y2[k];
        if (k >= w) {
          a1 -= y1[k - w];
          a2 -= y2[k - w];
        }
        if (k + 1 < w) continue;
        const std::size_t c = k + 1 - w + h;
        const double v1 = a1 / static_cast<double>(w), v2 = a2 / static_cast<double>(w);
        s1[c] += v1;
        ss1[c] += v1 * v1;
        s2[c] += v2;
        ss2[c] += v2 * v2;
      }
    }
    auto finish = [&](const std::vector<double>& s, const std::vector<double>& ss, std::vector<double>& mean,
                      std::vector<double>& se) {
      mean.assign(n, nan);
      se.assign(n, nan);
      for (std::size_t c = h; c + h < n; ++c) {
        mean[c] = s[c] / N;
        se[c] = std::sqrt(std::max(0.0, ss[c] / N - mean[c] * mean[c]) / (N - 1.0));
      }
    };
    finish(s1, ss1, r.b1_sq_coarse, r.b1_sq_coarse_se);
    finish(s2, ss2, r.b2_sq_coarse, r.b2_sq_coarse_se);
  }
  return r;
}

}  // namespace fblab
