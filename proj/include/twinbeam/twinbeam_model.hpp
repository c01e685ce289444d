#pragma once

// Linearized Gaussian statistics of seeded parametric-amplifier twin beams,
// their degradation by lossy detection, the intensity-difference noise ratio
// R, the electronic gain ratio that minimizes it, and a Monte-Carlo sampler of
// detected pulse pairs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "twinbeam/errors.hpp"

namespace twinbeam {

namespace constants {
inline constexpr double planck_j_s = 6.62607015e-34;
inline constexpr double speed_of_light_m_s = 299792458.0;
inline constexpr double electron_charge_c = 1.602176634e-19;
}  // namespace constants

/// Mean photon number per pulse of a pulse train with average optical power
/// `power_w` at `wavelength_m` and repetition rate `rep_rate_hz`.
inline double photons_per_pulse(double power_w, double wavelength_m,
                                double rep_rate_hz) {
  if (power_w < 0 || wavelength_m <= 0 || rep_rate_hz <= 0)
    throw ParameterError("photons_per_pulse: invalid arguments");
  const double photon_energy =
      constants::planck_j_s * constants::speed_of_light_m_s / wavelength_m;
  return power_w / (rep_rate_hz * photon_energy);
}

/// Seed below which fluctuations are no longer small compared to the mean.
inline constexpr double kMinReliableSeedPhotons = 100.0;

/// 1 uW seed at 1533 nm, 50 MHz repetition rate.
inline const double kDefaultSeedPhotons = photons_per_pulse(1e-6, 1533e-9, 50e6);

struct FopaParams {
  double gain_g = 64.0;
  double seed_photons_n0 = kDefaultSeedPhotons;
  // Variance multiplier on every squeezer-output second moment; 1 means a
  // shot-noise-limited seed.
  double seed_excess_noise_xi = 1.0;
  // Uncorrelated Poissonian background photons per pulse in each channel.
  double raman_photons_s = 0.0;
  double raman_photons_i = 0.0;

  void validate() const {
    if (!(gain_g >= 1.0) || !std::isfinite(gain_g))
      throw ParameterError("FopaParams: gain_g must be >= 1");
    if (!(seed_photons_n0 > 0.0) || !std::isfinite(seed_photons_n0))
      throw ParameterError("FopaParams: seed_photons_n0 must be > 0");
    if (!(seed_excess_noise_xi >= 1.0) || !std::isfinite(seed_excess_noise_xi))
      throw ParameterError("FopaParams: seed_excess_noise_xi must be >= 1");
    if (!(raman_photons_s >= 0.0) || !(raman_photons_i >= 0.0))
      throw ParameterError("FopaParams: raman photon numbers must be >= 0");
  }

  bool linearization_reliable() const {
    return seed_photons_n0 >= kMinReliableSeedPhotons;
  }
};

struct DetectionChain {
  double eta_s = 0.70;
  double eta_i = 0.68;
  double gain_ratio_r = 1.0;
  // Integrated pulse area (V*sample) produced by one detected photon with the
  // reference electronics. The default puts the reference operating point
  // (balanced, g = 64, 1 uW seed) at sigma^2_SNL - sigma^2_EN ~ 2.25e-4 V^2.
  double volts_per_photon_kappa = 4.125e-6;

  void validate() const {
    if (!(eta_s >= 0.0 && eta_s <= 1.0) || !(eta_i >= 0.0 && eta_i <= 1.0))
      throw ParameterError("DetectionChain: efficiencies must lie in [0, 1]");
    if (!(gain_ratio_r > 0.0) || !std::isfinite(gain_ratio_r))
      throw ParameterError("DetectionChain: gain_ratio_r must be > 0");
    if (!(volts_per_photon_kappa > 0.0) || !std::isfinite(volts_per_photon_kappa))
      throw ParameterError("DetectionChain: volts_per_photon_kappa must be > 0");
  }
};

/// First and second photon-number moments of one signal/idler pulse pair.
struct TwinBeamStats {
  double mean_s = 0.0;
  double mean_i = 0.0;
  double var_s = 0.0;
  double var_i = 0.0;
  double cov_si = 0.0;
  bool reliable = true;  // false when the linearization is questionable

  bool valid() const {
    const double tol = 1e-12 * std::max(1.0, var_s * var_i);
    return var_s >= 0.0 && var_i >= 0.0 &&
           cov_si * cov_si <= var_s * var_i + tol;
  }

  /// Var(N_s - r N_i).
  double difference_variance(double r) const {
    return var_s + r * r * var_i - 2.0 * r * cov_si;
  }

  /// Shot-noise variance of the same weighted difference.
  double shot_noise(double r) const { return mean_s + r * r * mean_i; }
};

struct PulsePairSeries {
  std::vector<double> i_s;
  std::vector<double> i_i;
  std::size_t n_t = 0;
  std::size_t clamped = 0;  // draws that went negative and were set to zero

  double clamp_fraction() const {
    return n_t == 0 ? 0.0 : static_cast<double>(clamped) / (2.0 * n_t);
  }

  /// I_d,n = I_s,n - r I_i,n.
  std::vector<double> differences(double r) const {
    std::vector<double> d(n_t);
    for (std::size_t n = 0; n < n_t; ++n) d[n] = i_s[n] - r * i_i[n];
    return d;
  }
};

/// Pre-detection moments of the amplified seed (signal) and generated idler.
/// Raman photons are Poissonian and uncorrelated with everything else.
inline TwinBeamStats covariance_linearized(const FopaParams& p) {
  p.validate();
  const double g = p.gain_g;
  const double n0 = p.seed_photons_n0;
  const double xi = p.seed_excess_noise_xi;
  TwinBeamStats s;
  s.mean_s = g * n0 + p.raman_photons_s;
  s.mean_i = (g - 1.0) * n0 + p.raman_photons_i;
  s.var_s = xi * g * (2.0 * g - 1.0) * n0 + p.raman_photons_s;
  s.var_i = xi * (g - 1.0) * (2.0 * g - 1.0) * n0 + p.raman_photons_i;
  s.cov_si = xi * 2.0 * g * (g - 1.0) * n0;
  s.reliable = p.linearization_reliable();
  return s;
}

/// Independent binomial (beam-splitter) loss on each channel.
inline TwinBeamStats apply_detection(const TwinBeamStats& s,
                                     const DetectionChain& d) {
  d.validate();
  const double es = d.eta_s;
  const double ei = d.eta_i;
  TwinBeamStats out;
  out.mean_s = es * s.mean_s;
  out.mean_i = ei * s.mean_i;
  out.var_s = es * es * s.var_s + es * (1.0 - es) * s.mean_s;
  out.var_i = ei * ei * s.var_i + ei * (1.0 - ei) * s.mean_i;
  out.cov_si = es * ei * s.cov_si;
  out.reliable = s.reliable;
  return out;
}

inline TwinBeamStats detected_stats(const FopaParams& p, const DetectionChain& d) {
  return apply_detection(covariance_linearized(p), d);
}

/// Noise ratio of the weighted difference relative to its shot-noise level,
/// from already-detected moments.
inline double predict_R(const TwinBeamStats& detected, double r) {
  const double denom = detected.shot_noise(r);
  if (!(denom > 0.0))
    throw DegenerateInputError("predict_R: no detected light (zero shot noise)");
  return detected.difference_variance(r) / denom;
}

inline double predict_R(const FopaParams& p, const DetectionChain& d) {
  return predict_R(detected_stats(p, d), d.gain_ratio_r);
}

struct OptimalGainRatio {
  double r_opt = 1.0;
  double r_min = 1.0;  // R at r_opt
  bool closed_form = true;
};

/// Golden-section search for the minimum of R over log(r) in [r_lo, r_hi].
inline OptimalGainRatio optimal_r_bracketed(const TwinBeamStats& detected,
                                            double r_lo = 1e-6,
                                            double r_hi = 1e6) {
  if (!(r_lo > 0.0) || !(r_hi > r_lo))
    throw ParameterError("optimal_r_bracketed: invalid bracket");
  const auto f = [&](double log_r) {
    return predict_R(detected, std::exp(log_r));
  };
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = std::log(r_lo);
  double b = std::log(r_hi);
  double c = b - phi * (b - a);
  double e = a + phi * (b - a);
  double fc = f(c);
  double fe = f(e);
  for (int it = 0; it < 300 && (b - a) > 1e-13; ++it) {
    if (fc <= fe) {
      b = e;
      e = c;
      fe = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = e;
      fc = fe;
      e = a + phi * (b - a);
      fe = f(e);
    }
  }
  OptimalGainRatio out;
  out.r_opt = std::exp(0.5 * (a + b));
  out.r_min = predict_R(detected, out.r_opt);
  out.closed_form = false;
  return out;
}

/// Minimizes R(r) = (A + r^2 B - 2 r C) / (D + r^2 E) over r > 0.
///
/// Stationary points satisfy C E r^2 + (B D - A E) r - C D = 0. For C > 0 the
/// roots have opposite signs and the positive one is the global minimum; when
/// no positive minimizing root exists (C <= 0) the bracketed search is used.
inline OptimalGainRatio optimal_r(const TwinBeamStats& detected) {
  const double A = detected.var_s;
  const double B = detected.var_i;
  const double C = detected.cov_si;
  const double D = detected.mean_s;
  const double E = detected.mean_i;
  if (!(E > 0.0))
    throw DegenerateInputError("optimal_r: no detected idler, r is undefined");
  if (!(D > 0.0))
    throw DegenerateInputError("optimal_r: no detected signal");

  const double qa = C * E;
  const double qb = B * D - A * E;
  const double qc = -C * D;
  std::vector<double> roots;
  if (qa != 0.0) {
    const double disc = qb * qb - 4.0 * qa * qc;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      // Cancellation-free pair of roots.
      const double q = -0.5 * (qb + std::copysign(sq, qb));
      if (q != 0.0) {
        roots.push_back(q / qa);
        roots.push_back(qc / q);
      } else {
        roots.push_back(0.0);
      }
    }
  } else if (qb != 0.0) {
    roots.push_back(-qc / qb);
  }

  OptimalGainRatio best;
  bool found = false;
  std::sort(roots.begin(), roots.end());
  for (double r : roots) {
    if (!(r > 0.0) || !std::isfinite(r)) continue;
    // Keep only minima: derivative numerator changes sign from - to +.
    const double slope_sign = 2.0 * qa * r + qb;
    if (!(slope_sign > 0.0)) continue;
    const double value = predict_R(detected, r);
    if (!found || value < best.r_min) {  // ties keep the smaller r
      best = {r, value, true};
      found = true;
    }
  }
  if (!found) return optimal_r_bracketed(detected);
  return best;
}

inline OptimalGainRatio optimal_r(const FopaParams& p, double eta_s,
                                  double eta_i) {
  DetectionChain d;
  d.eta_s = eta_s;
  d.eta_i = eta_i;
  return optimal_r(detected_stats(p, d));
}

/// Draws n_t independent detected pulse pairs from the bivariate Gaussian
/// with the detected moments. Negative draws are clamped to zero and counted.
inline PulsePairSeries sample_pulse_pairs(const FopaParams& p,
                                          const DetectionChain& d,
                                          std::size_t n_t,
                                          std::uint64_t rng_seed) {
  if (n_t < 1) throw ParameterError("sample_pulse_pairs: n_t must be >= 1");
  const TwinBeamStats s = detected_stats(p, d);
  if (!s.valid())
    throw InternalError("sample_pulse_pairs: detected covariance is not positive semidefinite");

  // Cholesky factor of [[var_s, cov], [cov, var_i]].
  const double l11 = std::sqrt(s.var_s);
  const double l21 = l11 > 0.0 ? s.cov_si / l11 : 0.0;
  const double det = s.var_s * s.var_i - s.cov_si * s.cov_si;
  const double l22 =
      l11 > 0.0 ? std::sqrt(std::max(0.0, det / s.var_s)) : std::sqrt(s.var_i);

  PulsePairSeries out;
  out.n_t = n_t;
  out.i_s.resize(n_t);
  out.i_i.resize(n_t);
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t n = 0; n < n_t; ++n) {
    const double z1 = normal(rng);
    const double z2 = normal(rng);
    double xs = s.mean_s + l11 * z1;
    double xi = s.mean_i + l21 * z1 + l22 * z2;
    if (xs < 0.0) {
      xs = 0.0;
      ++out.clamped;
    }
    if (xi < 0.0) {
      xi = 0.0;
      ++out.clamped;
    }
    out.i_s[n] = xs;
    out.i_i[n] = xi;
  }
  return out;
}

/// Adds attenuation to the brighter detected channel so that
/// mean_s' = r * mean_i'. Efficiencies never increase.
inline DetectionChain balance_attenuation(const FopaParams& p,
                                          const DetectionChain& d) {
  const TwinBeamStats s = detected_stats(p, d);
  if (!(s.mean_s > 0.0) || !(s.mean_i > 0.0))
    throw DegenerateInputError("balance_attenuation: both detected means must be > 0");
  DetectionChain out = d;
  const double weighted_idler = d.gain_ratio_r * s.mean_i;
  if (s.mean_s > weighted_idler) {
    out.eta_s = d.eta_s * (weighted_idler / s.mean_s);
  } else if (weighted_idler > s.mean_s) {
    out.eta_i = d.eta_i * (s.mean_s / weighted_idler);
  }
  return out;
}

/// Excess-noise factor xi for which predict_R(p with xi, d) equals target_R.
/// R is affine in xi, so this is a direct solve; values below 1 are reported
/// as-is and must be rejected by the caller if a physical fit is required.
inline double solve_excess_noise_for_R(FopaParams p, const DetectionChain& d,
                                       double target_R) {
  p.seed_excess_noise_xi = 1.0;
  const double r1 = predict_R(p, d);
  p.seed_excess_noise_xi = 2.0;
  const double r2 = predict_R(p, d);
  const double slope = r2 - r1;
  if (!(std::abs(slope) > 0.0))
    throw DegenerateInputError("solve_excess_noise_for_R: R does not depend on xi");
  return 1.0 + (target_R - r1) / slope;
}

/// Parametric gain map g(P) = 1 + sinh^2(c P) used to label pump-power axes.
inline double gain_from_pump(double pump, double c) {
  if (pump < 0) throw ParameterError("gain_from_pump: negative pump power");
  const double s = std::sinh(c * pump);
  return 1.0 + s * s;
}

}  // namespace twinbeam
