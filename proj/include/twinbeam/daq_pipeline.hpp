#pragma once

// Time-domain analysis of recorded detector traces: locate the pulse in each
// repetition slot, sum the samples of one period around it (e_n), and derive
// statistics from the resulting series.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include "twinbeam/detector_sim.hpp"
#include "twinbeam/errors.hpp"
#include "twinbeam/fft.hpp"

namespace twinbeam {

enum class PeakSearch {
  grid_locked,  // one common phase per record, estimated from folded pulse energy
  per_pulse,    // independent minimum search in every slot
};

struct PulsePeaks {
  std::vector<std::size_t> indices;  // sample index of each pulse peak
  std::vector<std::size_t> slots;    // slot number n of each peak
  std::ptrdiff_t phase_offset = 0;   // grid_locked: common shift from nominal
  std::size_t n_snapped = 0;         // per_pulse: peaks reset to the slot centre
  bool low_confidence = false;
};

struct PulseEstimates {
  std::vector<double> e;
  double mean_e = 0.0;
  double var_e = 0.0;  // unbiased
  std::size_t n_pulses = 0;

  static PulseEstimates from_values(std::vector<double> values) {
    PulseEstimates est;
    est.n_pulses = values.size();
    if (!values.empty()) {
      est.mean_e = std::accumulate(values.begin(), values.end(), 0.0) /
                   static_cast<double>(values.size());
      if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - est.mean_e) * (v - est.mean_e);
        est.var_e = ss / static_cast<double>(values.size() - 1);
      }
    }
    est.e = std::move(values);
    return est;
  }
};

/// Allowed per-record timing deviation from the nominal pulse grid.
inline std::size_t drift_tolerance_samples(std::size_t samples_per_period) {
  return static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(samples_per_period)));
}

namespace detail {

struct SlotGrid {
  std::vector<std::size_t> slots;
  std::vector<std::size_t> centres;
  std::size_t spp = 0;
  std::size_t half = 0;
  std::size_t tol = 0;
};

// Slots whose window, shifted by up to the drift tolerance, stays in-record.
inline SlotGrid interior_slots(const VoltageTrace& t) {
  SlotGrid g;
  g.spp = t.samples_per_period();
  g.half = g.spp / 2;
  g.tol = drift_tolerance_samples(g.spp);
  const std::size_t len = t.samples.size();
  const std::size_t first = t.first_pulse_index();
  const std::size_t n_slots = len / g.spp;
  for (std::size_t n = 0; n < n_slots; ++n) {
    const std::size_t c = first + n * g.spp;
    if (c < g.half + g.tol) continue;
    if (c - g.half + g.spp + g.tol > len) continue;
    g.slots.push_back(n);
    g.centres.push_back(c);
  }
  return g;
}

}  // namespace detail

inline PulsePeaks find_pulse_peaks(const VoltageTrace& t,
                                   PeakSearch mode = PeakSearch::grid_locked) {
  const std::size_t spp = t.samples_per_period();
  if (spp == 0 || t.samples.size() < spp)
    throw PreconditionError("find_pulse_peaks: trace shorter than one pulse period");
  const auto grid = detail::interior_slots(t);
  PulsePeaks out;
  out.slots = grid.slots;
  if (grid.slots.empty()) {
    out.low_confidence = true;
    return out;
  }
  const auto half = static_cast<std::ptrdiff_t>(grid.half);
  const auto tol = static_cast<std::ptrdiff_t>(grid.tol);
  const auto& v = t.samples;

  if (mode == PeakSearch::grid_locked) {
    // Fold pulse energy over all slots; both pulse polarities add up.
    const auto span = static_cast<std::ptrdiff_t>(spp);
    std::vector<double> energy(spp, 0.0);
    for (std::size_t c : grid.centres) {
      for (std::ptrdiff_t d = -half; d < span - half; ++d) {
        const auto i = static_cast<std::ptrdiff_t>(c) + d;
        if (i < 0 || i >= static_cast<std::ptrdiff_t>(v.size())) continue;
        const double x = v[static_cast<std::size_t>(i)];
        energy[static_cast<std::size_t>(d + half)] += x * x;
      }
    }
    std::ptrdiff_t best = 0;
    double best_e = energy[static_cast<std::size_t>(half)];
    double lowest = best_e;
    for (std::ptrdiff_t d = -half; d < span - half; ++d) {
      const double e = energy[static_cast<std::size_t>(d + half)];
      lowest = std::min(lowest, e);
      const bool closer = std::abs(d) < std::abs(best);
      if (e > best_e || (e == best_e && closer)) {
        best = d;
        best_e = e;
      }
    }
    if (best_e == lowest) {
      best = 0;  // flat fold: nothing to lock onto
      out.low_confidence = true;
    } else if (std::abs(best) > tol) {
      best = 0;
      out.low_confidence = true;
    }
    out.phase_offset = best;
    out.indices.reserve(grid.centres.size());
    for (std::size_t c : grid.centres)
      out.indices.push_back(static_cast<std::size_t>(static_cast<std::ptrdiff_t>(c) + best));
    return out;
  }

  // Per-pulse: global minimum in [c - half, c - half + spp), ties to the centre.
  out.indices.reserve(grid.centres.size());
  for (std::size_t c : grid.centres) {
    const std::size_t lo = c - grid.half;
    std::size_t arg = c;
    double best = v[c];
    const auto [wmin, wmax] = std::minmax_element(v.begin() + static_cast<std::ptrdiff_t>(lo),
                                                  v.begin() + static_cast<std::ptrdiff_t>(lo + spp));
    if (*wmin == *wmax) out.low_confidence = true;  // flat window: centre by tie-break
    for (std::size_t i = lo; i < lo + spp; ++i) {
      const auto dist = [&](std::size_t k) {
        return k > c ? k - c : c - k;
      };
      if (v[i] < best || (v[i] == best && dist(i) < dist(arg))) {
        best = v[i];
        arg = i;
      }
    }
    const auto dev = static_cast<std::ptrdiff_t>(arg) - static_cast<std::ptrdiff_t>(c);
    if (std::abs(dev) > tol) {
      arg = c;
      ++out.n_snapped;
      out.low_confidence = true;
    }
    out.indices.push_back(arg);
  }
  return out;
}

/// e_n = sum of samples in [peak_n - dT/2, peak_n + dT/2).
inline PulseEstimates integrate_windows(const VoltageTrace& t, const PulsePeaks& peaks) {
  const std::size_t spp = t.samples_per_period();
  const std::size_t half = spp / 2;
  std::vector<double> e;
  e.reserve(peaks.indices.size());
  std::size_t prev_end = 0;
  bool first = true;
  for (std::size_t p : peaks.indices) {
    if (p < half || p - half + spp > t.samples.size())
      throw PreconditionError("integrate_windows: window extends outside the record");
    const std::size_t lo = p - half;
    if (!first && lo < prev_end)
      throw PreconditionError("integrate_windows: overlapping windows (peak finding failed)");
    double s = 0.0;
    for (std::size_t i = lo; i < lo + spp; ++i) s += t.samples[i];
    e.push_back(s);
    prev_end = lo + spp;
    first = false;
  }
  return PulseEstimates::from_values(std::move(e));
}

/// find_pulse_peaks followed by integrate_windows.
inline PulseEstimates analyze_trace(const VoltageTrace& t,
                                    PeakSearch mode = PeakSearch::grid_locked) {
  return integrate_windows(t, find_pulse_peaks(t, mode));
}

/// Normalized correlation between e_n and e_{n-N}:
///   C(N) = 1/(N_t - N) * sum_{n=N}^{N_t-1} (e_n - mean)(e_{n-N} - mean) / sigma^2
/// with one shared mean and sigma^2 = mean squared deviation, so C(0) = 1.
inline double correlation_coefficient(const PulseEstimates& est, std::size_t n_shift) {
  const std::size_t n = est.e.size();
  if (n_shift >= n)
    throw PreconditionError("correlation_coefficient: shift must be smaller than the series");
  double mean = 0.0;
  for (double x : est.e) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : est.e) ss += (x - mean) * (x - mean);
  const double sigma2 = ss / static_cast<double>(n);
  if (!(sigma2 > 0.0))
    throw DegenerateInputError("correlation_coefficient: zero variance");
  double acc = 0.0;
  for (std::size_t i = n_shift; i < n; ++i)
    acc += (est.e[i] - mean) * (est.e[i - n_shift] - mean);
  return acc / static_cast<double>(n - n_shift) / sigma2;
}

/// C(N) for N = 0..max_shift averaged over records.
inline std::vector<double> mean_correlation_profile(std::span<const PulseEstimates> records,
                                                    std::size_t max_shift) {
  if (records.empty()) throw PreconditionError("mean_correlation_profile: no records");
  std::vector<double> c(max_shift + 1, 0.0);
  for (const auto& r : records)
    for (std::size_t s = 0; s <= max_shift; ++s) c[s] += correlation_coefficient(r, s);
  for (double& x : c) x /= static_cast<double>(records.size());
  return c;
}

/// Variance pooled across records, each about its own mean.
inline double pooled_variance(std::span<const PulseEstimates> records) {
  double num = 0.0;
  double dof = 0.0;
  for (const auto& r : records) {
    if (r.n_pulses < 2) continue;
    num += r.var_e * static_cast<double>(r.n_pulses - 1);
    dof += static_cast<double>(r.n_pulses - 1);
  }
  if (dof == 0.0) throw PreconditionError("pooled_variance: not enough pulses");
  return num / dof;
}

struct PsdEstimate {
  std::vector<double> freqs;  // Hz, ascending
  std::vector<double> psd;    // V^2 / Hz, one-sided
  std::size_t n_averages = 0;

  double bin_width() const { return freqs.size() > 1 ? freqs[1] - freqs[0] : 0.0; }

  /// Sum of psd * df over bins with centre frequency in [f_lo, f_hi].
  double band_power(double f_lo, double f_hi) const {
    const double df = bin_width();
    double p = 0.0;
    for (std::size_t k = 0; k < freqs.size(); ++k)
      if (freqs[k] >= f_lo && freqs[k] <= f_hi) p += psd[k] * df;
    return p;
  }

  double total_power() const {
    double p = 0.0;
    for (double x : psd) p += x;
    return p * bin_width();
  }
};

/// Streaming ensemble periodogram; traces are accumulated in call order.
class PsdAccumulator {
 public:
  void add(const VoltageTrace& t) {
    if (!fft_) {
      length_ = t.samples.size();
      rate_ = t.sample_rate_hz;
      if (length_ < 2) throw PreconditionError("ensemble_psd: trace too short");
      fft_ = std::make_unique<RealFft>(length_);
      sum_.assign(fft_->bins(), 0.0);
    } else if (t.samples.size() != length_ || t.sample_rate_hz != rate_) {
      throw PreconditionError("ensemble_psd: traces differ in length or sample rate");
    }
    fft_->power(t.samples, scratch_);
    for (std::size_t k = 0; k < sum_.size(); ++k) sum_[k] += scratch_[k];
    ++count_;
  }

  std::size_t count() const { return count_; }

  PsdEstimate result() const {
    if (count_ == 0) throw PreconditionError("ensemble_psd: no traces");
    PsdEstimate out;
    const double n = static_cast<double>(length_);
    const double df = rate_ / n;
    out.n_averages = count_;
    out.freqs.resize(sum_.size());
    out.psd.resize(sum_.size());
    for (std::size_t k = 0; k < sum_.size(); ++k) {
      out.freqs[k] = static_cast<double>(k) * df;
      const bool edge = (k == 0) || (length_ % 2 == 0 && k == sum_.size() - 1);
      const double fold = edge ? 1.0 : 2.0;
      out.psd[k] = fold * sum_[k] / (n * n * df) / static_cast<double>(count_);
    }
    return out;
  }

 private:
  std::size_t length_ = 0;
  double rate_ = 0.0;
  std::size_t count_ = 0;
  std::unique_ptr<RealFft> fft_;
  std::vector<double> sum_;
  std::vector<double> scratch_;
};

/// Averaged one-sided periodogram, normalized so that sum(psd) * df equals the
/// mean square voltage of the traces.
inline PsdEstimate ensemble_psd(std::span<const VoltageTrace> traces) {
  if (traces.empty()) throw PreconditionError("ensemble_psd: no traces");
  PsdAccumulator acc;
  for (const auto& t : traces) acc.add(t);
  return acc.result();
}

/// -3 dB frequency of a low-pass PSD: the reference level is the median over
/// [ref_lo, ref_hi]; the PSD is median-smoothed over `smooth_bins` bins (which
/// also removes isolated spectral lines) and scanned upward from ref_hi.
inline double psd_3db_frequency(const PsdEstimate& p, double ref_lo, double ref_hi,
                                std::size_t smooth_bins = 21) {
  std::vector<double> ref;
  for (std::size_t k = 0; k < p.freqs.size(); ++k)
    if (p.freqs[k] >= ref_lo && p.freqs[k] <= ref_hi) ref.push_back(p.psd[k]);
  if (ref.empty()) throw ParameterError("psd_3db_frequency: empty reference band");
  std::nth_element(ref.begin(), ref.begin() + static_cast<std::ptrdiff_t>(ref.size() / 2), ref.end());
  const double level = ref[ref.size() / 2];
  const std::size_t h = smooth_bins / 2;
  std::vector<double> smooth(p.psd.size(), 0.0);
  std::vector<double> win;
  for (std::size_t k = 0; k < p.psd.size(); ++k) {
    const std::size_t lo = k >= h ? k - h : 0;
    const std::size_t hi = std::min(p.psd.size(), k + h + 1);
    win.assign(p.psd.begin() + static_cast<std::ptrdiff_t>(lo),
               p.psd.begin() + static_cast<std::ptrdiff_t>(hi));
    std::nth_element(win.begin(), win.begin() + static_cast<std::ptrdiff_t>(win.size() / 2), win.end());
    smooth[k] = win[win.size() / 2];
  }
  for (std::size_t k = 1; k < p.freqs.size(); ++k) {
    if (p.freqs[k] <= ref_hi) continue;
    if (smooth[k] <= 0.5 * level) {
      const double a = smooth[k - 1] - 0.5 * level;
      const double b = smooth[k - 1] - smooth[k];
      const double frac = b > 0.0 ? a / b : 0.0;
      return p.freqs[k - 1] + frac * (p.freqs[k] - p.freqs[k - 1]);
    }
  }
  return p.freqs.back();
}

struct Histogram {
  double lo = 0.0;
  double width = 0.0;
  std::vector<std::size_t> counts;

  std::size_t total() const {
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  }
  double centre(std::size_t b) const { return lo + (static_cast<double>(b) + 0.5) * width; }
  std::size_t occupied_bins() const {
    return static_cast<std::size_t>(
        std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }));
  }

  /// Unbiased variance using bin centres.
  double variance_from_moments() const {
    const double n = static_cast<double>(total());
    if (n < 2) return 0.0;
    double m = 0.0;
    for (std::size_t b = 0; b < counts.size(); ++b) m += centre(b) * static_cast<double>(counts[b]);
    m /= n;
    double ss = 0.0;
    for (std::size_t b = 0; b < counts.size(); ++b) {
      const double d = centre(b) - m;
      ss += d * d * static_cast<double>(counts[b]);
    }
    return ss / (n - 1.0);
  }
};

/// Equal-width bins spanning [min, max] of the series.
inline Histogram histogram(const PulseEstimates& est, std::size_t n_bins) {
  if (est.e.empty()) throw PreconditionError("histogram: no pulses");
  if (n_bins == 0) throw ParameterError("histogram: n_bins must be > 0");
  const auto [mn, mx] = std::minmax_element(est.e.begin(), est.e.end());
  Histogram h;
  h.counts.assign(n_bins, 0);
  if (*mn == *mx) {
    // Degenerate range: a single unit-width bin around the value.
    h.lo = *mn - 0.5;
    h.width = 1.0;
    h.counts.assign(1, est.e.size());
    return h;
  }
  h.lo = *mn;
  h.width = (*mx - *mn) / static_cast<double>(n_bins);
  for (double x : est.e) {
    auto b = static_cast<std::size_t>((x - h.lo) / h.width);
    if (b >= n_bins) b = n_bins - 1;
    ++h.counts[b];
  }
  return h;
}

}  // namespace twinbeam
