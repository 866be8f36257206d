#pragma once

// Thin RAII wrapper around FFTW complex transforms. Planning is not
// thread-safe in FFTW, so plan creation and destruction share one mutex;
// execution on distinct plans is safe.

#include <complex>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

namespace fblab::detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class FftPlan {
 public:
  FftPlan(std::size_t n, int direction) : n_(n) {
    if (n == 0) throw std::invalid_argument("FftPlan: zero length");
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    in_ = fftw_alloc_complex(n);
    out_ = fftw_alloc_complex(n);
    if (!in_ || !out_) throw std::bad_alloc();
    plan_ = fftw_plan_dft_1d(static_cast<int>(n), in_, out_, direction, FFTW_ESTIMATE);
    if (!plan_) throw std::runtime_error("FftPlan: planning failed");
  }
  ~FftPlan() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  std::size_t size() const { return n_; }
  std::complex<double>* input() { return reinterpret_cast<std::complex<double>*>(in_); }
  const std::complex<double>* output() const { return reinterpret_cast<const std::complex<double>*>(out_); }
  void execute() { fftw_execute(plan_); }

 private:
  std::size_t n_;
  fftw_complex* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

// Unnormalized forward (e^{-2 pi i k n/N}) or backward transform.
inline std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& x, bool inverse = false) {
  FftPlan plan(x.size(), inverse ? FFTW_BACKWARD : FFTW_FORWARD);
  std::memcpy(static_cast<void*>(plan.input()), x.data(), x.size() * sizeof(std::complex<double>));
  plan.execute();
  return {plan.output(), plan.output() + x.size()};
}

// Smallest 2^a 3^b 5^c not below n.
inline std::size_t good_fft_size(std::size_t n) {
  std::size_t best = 1;
  while (best < n) best <<= 1;
  for (std::size_t p5 = 1; p5 < best; p5 *= 5)
    for (std::size_t p35 = p5; p35 < best; p35 *= 3) {
      std::size_t v = p35;
      while (v < n) v <<= 1;
      if (v < best) best = v;
    }
  return best;
}

}  // namespace fblab::detail
