#pragma once

#include <cmath>
#include <optional>
#include <span>

#include "twinbeam/daq_pipeline.hpp"
#include "twinbeam/errors.hpp"

namespace twinbeam {

inline double to_db(double ratio) { return 10.0 * std::log10(ratio); }
inline double from_db(double db) { return std::pow(10.0, db / 10.0); }

struct LossCorrection {
  std::optional<double> ratio;
  std::optional<double> db;
  bool unphysical = false;
};

/// Inverts R_meas = eta R_true + (1 - eta). No number is produced when the
/// measured ratio is at or below the pure-loss floor 1 - eta.
inline LossCorrection loss_correct(double ratio_rt, double eta_bar) {
  if (!(eta_bar > 0.0 && eta_bar <= 1.0))
    throw ParameterError("loss_correct: eta_bar must lie in (0, 1]");
  LossCorrection out;
  const double corrected = (ratio_rt - (1.0 - eta_bar)) / eta_bar;
  if (!(corrected > 0.0)) {
    out.unphysical = true;
    return out;
  }
  out.ratio = corrected;
  out.db = to_db(corrected);
  return out;
}

struct SqueezingResult {
  double var_id = 0.0;
  double var_snl = 0.0;
  double var_en = 0.0;
  std::optional<double> ratio_rt;
  std::optional<double> rt_db;
  std::optional<double> rt_corrected_db;
  double eta_bar = 1.0;
  bool unphysical_subtraction = false;
  bool unphysical_correction = false;
};

/// R_t = (var_id - var_en) / (var_snl - var_en).
inline SqueezingResult compute_Rt(double var_id, double var_snl, double var_en) {
  if (!(var_snl > var_en))
    throw PreconditionError("compute_Rt: SNL variance must exceed the electronic-noise variance");
  SqueezingResult r;
  r.var_id = var_id;
  r.var_snl = var_snl;
  r.var_en = var_en;
  if (!(var_id > var_en)) {
    r.unphysical_subtraction = true;
    return r;
  }
  r.ratio_rt = (var_id - var_en) / (var_snl - var_en);
  r.rt_db = to_db(*r.ratio_rt);
  return r;
}

/// Fills the loss-corrected figure using the mean detection efficiency.
inline SqueezingResult with_loss_correction(SqueezingResult r, double eta_bar) {
  r.eta_bar = eta_bar;
  if (!r.ratio_rt) return r;
  const auto c = loss_correct(*r.ratio_rt, eta_bar);
  r.unphysical_correction = c.unphysical;
  r.rt_corrected_db = c.db;
  return r;
}

inline double mean_efficiency(double eta_s, double eta_i) { return 0.5 * (eta_s + eta_i); }

struct FrequencyBand {
  double center_hz = 2.5e6;
  double width_hz = 1e6;
  double lo() const { return center_hz - 0.5 * width_hz; }
  double hi() const { return center_hz + 0.5 * width_hz; }
};

struct FreqDomainResult {
  double p_signal = 0.0;
  double p_snl = 0.0;
  double p_electronic = 0.0;
  double ratio = 0.0;
  bool unphysical = false;  // numerator not positive
};

/// Band-integrated spectral analogue of R_t:
/// (P_signal - P_electronic) / (P_snl - P_electronic).
inline FreqDomainResult freq_domain_R(const PsdEstimate& signal, const PsdEstimate& snl,
                                      const PsdEstimate& electronic,
                                      const FrequencyBand& band = {}) {
  if (signal.freqs.size() != snl.freqs.size() ||
      signal.freqs.size() != electronic.freqs.size() ||
      signal.bin_width() != snl.bin_width() || signal.bin_width() != electronic.bin_width())
    throw PreconditionError("freq_domain_R: ensembles have different trace geometry");
  if (signal.freqs.empty()) throw PreconditionError("freq_domain_R: empty PSD");
  const double nyquist = signal.freqs.back();
  if (!(band.width_hz > 0.0) || band.lo() < 0.0 || band.hi() > nyquist)
    throw ParameterError("freq_domain_R: analysis band outside [0, Nyquist]");
  FreqDomainResult out;
  out.p_signal = signal.band_power(band.lo(), band.hi());
  out.p_snl = snl.band_power(band.lo(), band.hi());
  out.p_electronic = electronic.band_power(band.lo(), band.hi());
  const double denom = out.p_snl - out.p_electronic;
  if (!(denom > 0.0))
    throw PreconditionError("freq_domain_R: SNL band power does not exceed electronic noise");
  const double num = out.p_signal - out.p_electronic;
  out.ratio = num / denom;
  out.unphysical = !(num > 0.0);
  return out;
}

inline FreqDomainResult freq_domain_R(std::span<const VoltageTrace> signal,
                                      std::span<const VoltageTrace> snl,
                                      std::span<const VoltageTrace> electronic,
                                      const FrequencyBand& band = {}) {
  return freq_domain_R(ensemble_psd(signal), ensemble_psd(snl), ensemble_psd(electronic), band);
}

}  // namespace twinbeam
