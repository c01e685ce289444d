#pragma once

// Balanced-detector simulation: per-pulse photon-number differences are turned
// into a sampled oscilloscope record by summing shifted copies of the detector
// response kernel, adding band-limited electronic noise and quantizing with a
// symmetric ADC.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "twinbeam/errors.hpp"
#include "twinbeam/fft.hpp"
#include "twinbeam/seeding.hpp"
#include "twinbeam/twinbeam_model.hpp"

namespace twinbeam {

enum class KernelShape { second_order_lowpass, gaussian, user_sampled };

inline std::string to_string(KernelShape s) {
  switch (s) {
    case KernelShape::second_order_lowpass: return "second_order_lowpass";
    case KernelShape::gaussian: return "gaussian";
    case KernelShape::user_sampled: return "user_sampled";
  }
  throw ConfigurationError("unsupported kernel shape");
}

inline KernelShape parse_kernel_shape(std::string_view name) {
  if (name == "second_order_lowpass") return KernelShape::second_order_lowpass;
  if (name == "gaussian") return KernelShape::gaussian;
  if (name == "user_sampled") return KernelShape::user_sampled;
  throw ConfigurationError("unsupported kernel shape '" + std::string(name) + "'");
}

// Electronics the reference kernel area is normalized against: 2 kOhm load
// followed by a 21 V/V non-inverting amplifier.
inline constexpr double kReferenceTransimpedance = 2000.0;
inline constexpr double kReferenceAmpGain = 21.0;

struct DetectorModel {
  double bandwidth_hz = 80e6;
  KernelShape kernel_shape = KernelShape::second_order_lowpass;
  std::vector<double> user_kernel;  // only for KernelShape::user_sampled
  double electronic_noise_rms_v = 0.0;
  double cmrr_db = 50.0;  // +infinity means perfect rejection
  double transimpedance_v_per_a = kReferenceTransimpedance;
  double amp_gain_v_per_v = kReferenceAmpGain;
  int adc_bits = 12;
  double adc_full_scale_v = 0.02;  // symmetric range [-fs, +fs]
  double sample_rate_hz = 5e9;
  double pulse_period_s = 20e-9;
  std::size_t record_samples = 25000;
  double first_pulse_offset_s = 10e-9;  // centre of the first pulse slot

  std::size_t samples_per_period() const {
    return static_cast<std::size_t>(std::llround(pulse_period_s * sample_rate_hz));
  }

  std::size_t first_pulse_index() const {
    return static_cast<std::size_t>(std::llround(first_pulse_offset_s * sample_rate_hz));
  }

  /// Pulse slots that fit in one record (floor(record / period)).
  std::size_t pulses_per_record() const {
    return record_samples / samples_per_period();
  }

  double lsb() const { return 2.0 * adc_full_scale_v / std::ldexp(1.0, adc_bits); }

  double electrical_gain_scale() const {
    return (transimpedance_v_per_a * amp_gain_v_per_v) /
           (kReferenceTransimpedance * kReferenceAmpGain);
  }

  void validate() const {
    if (!(sample_rate_hz > 0) || !(bandwidth_hz > 0))
      throw ParameterError("DetectorModel: sample rate and bandwidth must be > 0");
    if (!(sample_rate_hz > 2.0 * bandwidth_hz))
      throw ParameterError("DetectorModel: sample rate must exceed twice the bandwidth");
    const double spp = pulse_period_s * sample_rate_hz;
    if (!(spp >= 4.0) || std::abs(spp - std::round(spp)) > 1e-6)
      throw ParameterError("DetectorModel: pulse period must be an integer number (>= 4) of samples");
    const double off = first_pulse_offset_s * sample_rate_hz;
    if (!(off >= 0.0) || std::abs(off - std::round(off)) > 1e-6)
      throw ParameterError("DetectorModel: first pulse offset must lie on the sample grid");
    if (adc_bits < 8 || adc_bits > 16)
      throw ParameterError("DetectorModel: adc_bits must be in [8, 16]");
    if (!(adc_full_scale_v > 0))
      throw ParameterError("DetectorModel: adc_full_scale_v must be > 0");
    if (!(cmrr_db >= 0))
      throw ParameterError("DetectorModel: cmrr_db must be >= 0");
    if (!(electronic_noise_rms_v >= 0) || !std::isfinite(electronic_noise_rms_v))
      throw ParameterError("DetectorModel: electronic_noise_rms_v must be >= 0");
    if (!(transimpedance_v_per_a > 0) || !(amp_gain_v_per_v > 0))
      throw ParameterError("DetectorModel: electrical gains must be > 0");
    if (record_samples < samples_per_period())
      throw ParameterError("DetectorModel: record shorter than one pulse period");
  }
};

/// Sampled response to one detected photon (before the kappa scale).
/// The shape has area -electrical_gain_scale() in sample units.
struct ResponseKernel {
  std::vector<double> taps;
  std::size_t peak_index = 0;  // tap with the largest magnitude

  double area() const {
    double a = 0.0;
    for (double t : taps) a += t;
    return a;
  }
};

namespace detail {

inline ResponseKernel finish_kernel(std::vector<double> shape, double scale) {
  double peak = 0.0;
  for (double v : shape) peak = std::max(peak, std::abs(v));
  if (!(peak > 0.0)) throw ConfigurationError("response kernel is identically zero");
  const double cut = 1e-6 * peak;
  std::size_t lo = 0;
  std::size_t hi = shape.size();
  while (lo < hi && std::abs(shape[lo]) < cut) ++lo;
  while (hi > lo && std::abs(shape[hi - 1]) < cut) --hi;
  shape = std::vector<double>(shape.begin() + static_cast<std::ptrdiff_t>(lo),
                              shape.begin() + static_cast<std::ptrdiff_t>(hi));
  double sum = 0.0;
  for (double v : shape) sum += v;
  if (sum == 0.0) throw ConfigurationError("response kernel has zero area");
  ResponseKernel k;
  k.taps.resize(shape.size());
  for (std::size_t j = 0; j < shape.size(); ++j) k.taps[j] = -scale * shape[j] / sum;
  std::size_t best = 0;
  for (std::size_t j = 1; j < k.taps.size(); ++j)
    if (std::abs(k.taps[j]) > std::abs(k.taps[best])) best = j;
  k.peak_index = best;
  return k;
}

}  // namespace detail

/// Sampled detector response. Negative polarity, unit |area| at the reference
/// electronics, -3 dB point at m.bandwidth_hz for the analytic shapes.
inline ResponseKernel response_kernel(const DetectorModel& m) {
  m.validate();
  const double fs = m.sample_rate_hz;
  const double scale = m.electrical_gain_scale();
  std::vector<double> shape;
  switch (m.kernel_shape) {
    case KernelShape::second_order_lowpass: {
      // Critically damped: h(t) = t/tau^2 exp(-t/tau), |H|^2 = 1/(1 + (2 pi f tau)^2)^2.
      const double tau = std::sqrt(std::sqrt(2.0) - 1.0) /
                         (2.0 * std::numbers::pi * m.bandwidth_hz) * fs;  // samples
      // Far enough out that t/tau exp(1 - t/tau) < 1e-6.
      const auto n = static_cast<std::size_t>(std::ceil(25.0 * tau)) + 2;
      shape.resize(n);
      for (std::size_t j = 0; j < n; ++j) {
        const double t = static_cast<double>(j);
        shape[j] = t / tau * std::exp(-t / tau);
      }
      break;
    }
    case KernelShape::gaussian: {
      // |H(f)| = exp(-2 pi^2 sigma^2 f^2), half power at f = sqrt(ln 2) / (2 pi sigma).
      const double sigma = std::sqrt(std::log(2.0)) /
                           (2.0 * std::numbers::pi * m.bandwidth_hz) * fs;
      const auto half = static_cast<std::ptrdiff_t>(std::ceil(6.0 * sigma)) + 1;
      for (std::ptrdiff_t j = -half; j <= half; ++j) {
        const double t = static_cast<double>(j) / sigma;
        shape.push_back(std::exp(-0.5 * t * t));
      }
      break;
    }
    case KernelShape::user_sampled:
      if (m.user_kernel.empty())
        throw ConfigurationError("user_sampled kernel requires user_kernel samples");
      // Normalize to negative area regardless of the user's polarity.
      shape = m.user_kernel;
      {
        double sum = 0.0;
        for (double v : shape) sum += v;
        if (sum == 0.0) throw ConfigurationError("user kernel has zero area");
        if (sum < 0.0)
          for (double& v : shape) v = -v;
      }
      break;
    default:
      throw ConfigurationError("unsupported kernel shape");
  }
  return detail::finish_kernel(std::move(shape), scale);
}

/// Frequency where |K(f)|^2 first drops to half its DC value, measured on a
/// zero-padded transform of the sampled kernel.
inline double kernel_3db_frequency(const ResponseKernel& k, double sample_rate_hz,
                                   std::size_t fft_size = 1u << 18) {
  RealFft fft(std::max(fft_size, k.taps.size()));
  std::vector<double> p;
  fft.power(k.taps, p);
  const double half = 0.5 * p[0];
  const double df = sample_rate_hz / static_cast<double>(fft.size());
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] <= half) {
      const double frac = (p[i - 1] - half) / (p[i - 1] - p[i]);
      return (static_cast<double>(i - 1) + frac) * df;
    }
  }
  return 0.5 * sample_rate_hz;
}

/// Unit-energy FIR used to colour the electronic noise with the detector's
/// own response shape.
inline std::vector<double> noise_filter_taps(const ResponseKernel& k) {
  double energy = 0.0;
  for (double t : k.taps) energy += t * t;
  std::vector<double> h(k.taps.size());
  const double norm = 1.0 / std::sqrt(energy);
  for (std::size_t j = 0; j < h.size(); ++j) h[j] = k.taps[j] * norm;
  return h;
}

/// Exact variance of a sum over `window` consecutive samples of the filtered
/// electronic noise, for unit RMS.
inline double window_noise_variance_per_unit_rms(const DetectorModel& m,
                                                 std::size_t window) {
  const auto h = noise_filter_taps(response_kernel(m));
  const auto L = static_cast<std::ptrdiff_t>(h.size());
  const auto W = static_cast<std::ptrdiff_t>(window);
  double total = 0.0;
  for (std::ptrdiff_t d = -(L - 1); d <= L - 1; ++d) {
    if (std::abs(d) >= W) continue;
    double rho = 0.0;
    const std::ptrdiff_t ad = std::abs(d);
    for (std::ptrdiff_t j = 0; j + ad < L; ++j)
      rho += h[static_cast<std::size_t>(j)] * h[static_cast<std::size_t>(j + ad)];
    total += static_cast<double>(W - ad) * rho;
  }
  return total;
}

/// Windowed-integral variance contributed by ADC rounding (uniform, white).
inline double window_quantization_variance(const DetectorModel& m, std::size_t window) {
  const double q = m.lsb();
  return static_cast<double>(window) * q * q / 12.0;
}

/// Expected sigma^2_EN of a one-period windowed integral with no light.
inline double expected_electronic_window_variance(const DetectorModel& m) {
  const std::size_t w = m.samples_per_period();
  const double rms = m.electronic_noise_rms_v;
  return rms * rms * window_noise_variance_per_unit_rms(m, w) +
         window_quantization_variance(m, w);
}

/// Electronic noise RMS such that the no-light windowed integrals have
/// variance `target_v2` (quantization noise included).
inline double electronic_noise_rms_for_window_variance(const DetectorModel& m,
                                                       double target_v2) {
  const std::size_t w = m.samples_per_period();
  const double rest = target_v2 - window_quantization_variance(m, w);
  if (!(rest >= 0.0))
    throw ParameterError("target electronic variance is below the quantization floor");
  return std::sqrt(rest / window_noise_variance_per_unit_rms(m, w));
}

struct VoltageTrace {
  std::vector<double> samples;  // volts
  double sample_rate_hz = 5e9;
  double pulse_period_s = 20e-9;
  double first_pulse_offset_s = 10e-9;
  std::size_t n_saturated = 0;  // samples beyond full scale before quantization

  bool saturated() const { return n_saturated > 0; }

  std::size_t samples_per_period() const {
    return static_cast<std::size_t>(std::llround(pulse_period_s * sample_rate_hz));
  }
  std::size_t first_pulse_index() const {
    return static_cast<std::size_t>(std::llround(first_pulse_offset_s * sample_rate_hz));
  }
};

/// Noise-free, unquantized sum of kappa * I_d,n * k(t - n dT - offset). The
/// kernel peak of pulse n lands on sample first_pulse_index + n * period.
inline std::vector<double> clean_trace(std::span<const double> diffs, double kappa,
                                       const ResponseKernel& k,
                                       const DetectorModel& m) {
  const std::size_t spp = m.samples_per_period();
  const std::size_t first = m.first_pulse_index();
  const std::size_t len = m.record_samples;
  if (!diffs.empty() && first + (diffs.size() - 1) * spp >= len)
    throw PreconditionError("synthesize_trace: more pulses than fit in the record");
  std::vector<double> v(len, 0.0);
  const auto peak = static_cast<std::ptrdiff_t>(k.peak_index);
  const auto L = static_cast<std::ptrdiff_t>(k.taps.size());
  for (std::size_t n = 0; n < diffs.size(); ++n) {
    const double a = kappa * diffs[n];
    if (a == 0.0) continue;
    const auto start = static_cast<std::ptrdiff_t>(first + n * spp) - peak;
    const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -start);
    const std::ptrdiff_t j1 =
        std::min<std::ptrdiff_t>(L, static_cast<std::ptrdiff_t>(len) - start);
    for (std::ptrdiff_t j = j0; j < j1; ++j)
      v[static_cast<std::size_t>(start + j)] += a * k.taps[static_cast<std::size_t>(j)];
  }
  return v;
}

/// Symmetric mid-tread quantizer over [-full_scale, +full_scale].
/// Returns the number of input samples that exceeded full scale.
inline std::size_t quantize(std::vector<double>& v, int bits, double full_scale) {
  const double q = 2.0 * full_scale / std::ldexp(1.0, bits);
  const double max_code = std::ldexp(1.0, bits - 1) - 1.0;
  const double min_code = -std::ldexp(1.0, bits - 1);
  std::size_t saturated = 0;
  for (double& x : v) {
    if (std::abs(x) > full_scale) ++saturated;
    const double code = std::clamp(std::round(x / q), min_code, max_code);
    x = code * q;
  }
  return saturated;
}

/// Adds band-limited Gaussian noise of the configured RMS in place.
inline void add_electronic_noise(std::vector<double>& v, const ResponseKernel& k,
                                 double rms, std::uint64_t seed) {
  if (rms <= 0.0 || v.empty()) return;
  const auto h = noise_filter_taps(k);
  std::vector<double> white(v.size() + h.size() - 1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& w : white) w = normal(rng);
  ValidCorrelator(h, v.size()).apply_add(white, v, rms);
}

/// Full detector chain for one record: kernel sum, electronic noise, ADC.
inline VoltageTrace synthesize_trace(std::span<const double> diffs,
                                     const DetectionChain& d,
                                     const DetectorModel& m,
                                     std::uint64_t rng_seed) {
  d.validate();
  m.validate();
  const ResponseKernel k = response_kernel(m);
  VoltageTrace t;
  t.sample_rate_hz = m.sample_rate_hz;
  t.pulse_period_s = m.pulse_period_s;
  t.first_pulse_offset_s = m.first_pulse_offset_s;
  t.samples = clean_trace(diffs, d.volts_per_photon_kappa, k, m);
  add_electronic_noise(t.samples, k, m.electronic_noise_rms_v, rng_seed);
  t.n_saturated = quantize(t.samples, m.adc_bits, m.adc_full_scale_v);
  return t;
}

/// Amplitude fraction of the common mode that survives subtraction.
inline double common_mode_leakage(double cmrr_db) {
  if (std::isinf(cmrr_db)) return 0.0;
  return std::pow(10.0, -cmrr_db / 20.0);
}

/// Photocurrent difference (in photons) seen by a balanced detector with
/// finite common-mode rejection: n1 - r n2 + leak * (n1 + r n2) / 2.
inline double differential_photons(double n1, double n2, double r, double leak) {
  return n1 - r * n2 + leak * 0.5 * (n1 + r * n2);
}

/// R as the time-domain measurement sees it: the twin-beam difference carries
/// leaked common mode, and so does the calibration light it is referenced to.
/// With a = 1 + leak/2 and b = r (1 - leak/2) the difference is a n1 - b n2.
inline double predict_R_with_leakage(const TwinBeamStats& s, double r, double cmrr_db) {
  const double l = 0.5 * common_mode_leakage(cmrr_db);
  const double a = 1.0 + l;
  const double b = r * (1.0 - l);
  const double var = a * a * s.var_s + b * b * s.var_i - 2.0 * a * b * s.cov_si;
  // Calibration: P photons on each diode, independent shot noise, abscissa P (1 + r^2).
  const double snl = (a * a + b * b) * s.shot_noise(r) / (1.0 + r * r);
  if (!(snl > 0.0)) throw DegenerateInputError("predict_R_with_leakage: no detected light");
  return var / snl;
}

/// Calibration light: one pulse train split 50:50 onto the two diodes.
struct CalibrationLight {
  double power_per_pd = 0.0;          // mean detected photons per pulse per diode
  double classical_noise_frac = 0.0;  // RMS common pulse-energy fluctuation / mean
};

/// Shot-noise-equivalent photon number of a calibration pulse, i.e. the
/// abscissa used by calibration fits: P (1 + r^2).
inline double calibration_shot_photons(double power_per_pd, double r) {
  return power_per_pd * (1.0 + r * r);
}

/// Photon differences for one calibration record. Each pulse carries a common
/// classical fluctuation plus independent (Gaussian-approximated) shot noise on
/// each diode; the difference keeps a cmrr-suppressed share of the common mode.
inline std::vector<double> calibration_differences(const CalibrationLight& light,
                                                   double r, double cmrr_db,
                                                   std::size_t n_t,
                                                   std::uint64_t seed) {
  if (!(light.power_per_pd >= 0.0))
    throw ParameterError("calibration light power must be >= 0");
  if (!(light.classical_noise_frac >= 0.0))
    throw ParameterError("classical_noise_frac must be >= 0");
  std::vector<double> diffs(n_t, 0.0);
  const double p = light.power_per_pd;
  if (p == 0.0) return diffs;
  const double leak = common_mode_leakage(cmrr_db);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t n = 0; n < n_t; ++n) {
    const double common = p * (1.0 + light.classical_noise_frac * normal(rng));
    const double shot = std::sqrt(std::max(common, 0.0));
    const double n1 = common + shot * normal(rng);
    const double n2 = common + shot * normal(rng);
    diffs[n] = differential_photons(n1, n2, r, leak);
  }
  return diffs;
}

inline VoltageTrace synthesize_snl_calibration_pair(const CalibrationLight& light,
                                                    const DetectorModel& m,
                                                    const DetectionChain& d,
                                                    std::size_t n_t,
                                                    std::uint64_t rng_seed) {
  const auto diffs = calibration_differences(
      light, d.gain_ratio_r, m.cmrr_db, n_t,
      derive_seed(rng_seed, SeedStream::calibration_light, 0));
  return synthesize_trace(diffs, d, m,
                          derive_seed(rng_seed, SeedStream::calibration_trace, 0));
}

/// The fast time-domain detector: 80 MHz, 5 GS/s, 12 bit, electronic noise
/// set so that no-light windowed integrals have variance 3.86e-4 V^2.
inline DetectorModel time_domain_detector(KernelShape shape = KernelShape::second_order_lowpass,
                                          double electronic_window_variance = 3.86e-4) {
  DetectorModel m;
  m.kernel_shape = shape;
  m.electronic_noise_rms_v =
      electronic_noise_rms_for_window_variance(m, electronic_window_variance);
  return m;
}

}  // namespace twinbeam
