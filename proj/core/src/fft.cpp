#include "fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>

namespace dbsfm::detail {
namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

class R2CPlan {
 public:
  explicit R2CPlan(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(),
                                 reinterpret_cast<fftw_complex*>(out_.get()), FFTW_ESTIMATE);
  }
  ~R2CPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  R2CPlan(const R2CPlan&) = delete;
  R2CPlan& operator=(const R2CPlan&) = delete;

  void run(std::span<const double> input, std::vector<std::complex<double>>& out) {
    std::copy(input.begin(), input.end(), in_.get());
    fftw_execute(plan_);
    out.resize(n_ / 2 + 1);
    const auto* bins = reinterpret_cast<const fftw_complex*>(out_.get());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = {bins[k][0], bins[k][1]};
  }

 private:
  std::size_t n_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<void, FftwFree> out_;
  fftw_plan plan_{};
};

class C2RPlan {
 public:
  explicit C2RPlan(std::size_t n)
      : n_(n),
        in_(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1))),
        out_(static_cast<double*>(fftw_malloc(sizeof(double) * n))) {
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(in_.get()),
                                 out_.get(), FFTW_ESTIMATE);
  }
  ~C2RPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  C2RPlan(const C2RPlan&) = delete;
  C2RPlan& operator=(const C2RPlan&) = delete;

  void run(std::span<const std::complex<double>> bins, std::vector<double>& out) {
    // c2r destroys its input, so the staging buffer is refilled every call.
    auto* dst = reinterpret_cast<fftw_complex*>(in_.get());
    for (std::size_t k = 0; k < n_ / 2 + 1; ++k) {
      dst[k][0] = bins[k].real();
      dst[k][1] = bins[k].imag();
    }
    fftw_execute(plan_);
    out.assign(out_.get(), out_.get() + n_);
  }

 private:
  std::size_t n_;
  std::unique_ptr<void, FftwFree> in_;
  std::unique_ptr<double, FftwFree> out_;
  fftw_plan plan_{};
};

template <typename Plan>
Plan& cached_plan(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<Plan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<Plan>(n);
  return *slot;
}

}  // namespace

void rfft(std::span<const double> input, std::vector<std::complex<double>>& out) {
  cached_plan<R2CPlan>(input.size()).run(input, out);
}

void irfft(std::span<const std::complex<double>> bins, std::size_t n, std::vector<double>& out) {
  cached_plan<C2RPlan>(n).run(bins, out);
}

}  // namespace dbsfm::detail
