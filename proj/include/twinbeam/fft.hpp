#pragma once

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "twinbeam/errors.hpp"

namespace twinbeam {

namespace detail {
// FFTW's planner is not thread-safe; execution of distinct plans is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Real-to-complex forward transform of a fixed length (unnormalized).
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    if (n == 0) throw ParameterError("RealFft: length must be > 0");
    in_ = fftw_alloc_real(n_);
    out_ = fftw_alloc_complex(n_ / 2 + 1);
    if (!in_ || !out_) throw InternalError("RealFft: allocation failed");
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n_), in_, out_, FFTW_ESTIMATE);
    if (!plan_) throw InternalError("RealFft: planning failed");
  }

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  ~RealFft() {
    {
      std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
      if (plan_) fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// |X_k|^2 for k = 0 .. n/2. Input shorter than n is zero-padded.
  void power(std::span<const double> x, std::vector<double>& out) {
    load(x);
    fftw_execute(plan_);
    out.resize(bins());
    for (std::size_t k = 0; k < bins(); ++k)
      out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

  std::vector<std::complex<double>> forward(std::span<const double> x) {
    load(x);
    fftw_execute(plan_);
    std::vector<std::complex<double>> out(bins());
    for (std::size_t k = 0; k < bins(); ++k) out[k] = {out_[k][0], out_[k][1]};
    return out;
  }

 private:
  void load(std::span<const double> x) {
    if (x.size() > n_) throw ParameterError("RealFft: input longer than transform");
    std::size_t i = 0;
    for (; i < x.size(); ++i) in_[i] = x[i];
    for (; i < n_; ++i) in_[i] = 0.0;
  }

  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

/// Smallest n' >= n whose prime factors are 2, 3 and 5.
inline std::size_t fast_fft_size(std::size_t n) {
  for (std::size_t m = std::max<std::size_t>(n, 1);; ++m) {
    std::size_t r = m;
    for (std::size_t f : {2u, 3u, 5u})
      while (r % f == 0) r /= f;
    if (r == 1) return m;
  }
}

/// y[i] = sum_j h[j] x[i + j] for i in [0, n_out), computed with FFTs.
/// x must hold at least n_out + h.size() - 1 samples.
class ValidCorrelator {
 public:
  ValidCorrelator(std::span<const double> h, std::size_t n_out)
      : taps_(h.size()), n_out_(n_out), n_(fast_fft_size(n_out + h.size() - 1)) {
    if (h.empty()) throw ParameterError("ValidCorrelator: empty taps");
    const std::size_t bins = n_ / 2 + 1;
    buf_ = fftw_alloc_real(n_);
    spec_ = fftw_alloc_complex(bins);
    if (!buf_ || !spec_) throw InternalError("ValidCorrelator: allocation failed");
    {
      std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
      fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n_), buf_, spec_, FFTW_ESTIMATE);
      inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(n_), spec_, buf_, FFTW_ESTIMATE);
    }
    if (!fwd_ || !inv_) throw InternalError("ValidCorrelator: planning failed");
    // Correlation is convolution with the reversed taps.
    std::fill(buf_, buf_ + n_, 0.0);
    for (std::size_t j = 0; j < taps_; ++j) buf_[j] = h[taps_ - 1 - j];
    fftw_execute(fwd_);
    kernel_.resize(bins);
    for (std::size_t k = 0; k < bins; ++k) kernel_[k] = {spec_[k][0], spec_[k][1]};
  }

  ValidCorrelator(const ValidCorrelator&) = delete;
  ValidCorrelator& operator=(const ValidCorrelator&) = delete;

  ~ValidCorrelator() {
    {
      std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
      if (fwd_) fftw_destroy_plan(fwd_);
      if (inv_) fftw_destroy_plan(inv_);
    }
    fftw_free(buf_);
    fftw_free(spec_);
  }

  std::size_t input_size() const { return n_out_ + taps_ - 1; }

  /// out[i] += scale * y[i].
  void apply_add(std::span<const double> x, std::span<double> out, double scale) {
    if (x.size() < input_size() || out.size() < n_out_)
      throw ParameterError("ValidCorrelator: buffer sizes do not match");
    std::size_t i = 0;
    for (; i < input_size(); ++i) buf_[i] = x[i];
    for (; i < n_; ++i) buf_[i] = 0.0;
    fftw_execute(fwd_);
    for (std::size_t k = 0; k < kernel_.size(); ++k) {
      const std::complex<double> v = std::complex<double>(spec_[k][0], spec_[k][1]) * kernel_[k];
      spec_[k][0] = v.real();
      spec_[k][1] = v.imag();
    }
    fftw_execute(inv_);
    const double norm = scale / static_cast<double>(n_);
    for (std::size_t m = 0; m < n_out_; ++m) out[m] += norm * buf_[m + taps_ - 1];
  }

 private:
  std::size_t taps_;
  std::size_t n_out_;
  std::size_t n_;
  double* buf_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
  std::vector<std::complex<double>> kernel_;
};

}  // namespace twinbeam
