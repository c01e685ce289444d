#pragma once

// Scenario configuration: every knob of a simulated experiment in one JSON
// document, with defaults matching the reference setup.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "twinbeam/daq_pipeline.hpp"
#include "twinbeam/detector_sim.hpp"
#include "twinbeam/errors.hpp"
#include "twinbeam/parallel.hpp"
#include "twinbeam/squeezing_metrics.hpp"
#include "twinbeam/twinbeam_model.hpp"

namespace twinbeam {

inline constexpr double kDefaultWavelength = 1533e-9;
inline constexpr double kTimeDomainElectronicVariance = 3.86e-4;  // V^2

struct SourceConfig {
  double gain_g = 64.0;
  double seed_power_w = 1e-6;
  double wavelength_m = kDefaultWavelength;
  double seed_excess_noise_xi = 1.0;
  double raman_photons_s = 0.0;
  double raman_photons_i = 0.0;
};

struct DetectorConfig {
  double bandwidth_hz = 80e6;
  KernelShape kernel_shape = KernelShape::second_order_lowpass;
  std::vector<double> user_kernel;
  double electronic_window_variance = kTimeDomainElectronicVariance;  // V^2, no light
  double cmrr_db = 50.0;
  double transimpedance_v_per_a = kReferenceTransimpedance;
  double amp_gain_v_per_v = kReferenceAmpGain;
  int adc_bits = 12;
  double adc_full_scale_v = 0.02;
  double sample_rate_hz = 5e9;
  double pulse_period_s = 20e-9;
  std::size_t record_samples = 25000;
};

struct DaqPlan {
  std::size_t pulses_per_record = 250;
  std::size_t records_per_run = 1000;
  std::size_t runs = 1;
  PeakSearch peak_search = PeakSearch::grid_locked;
  std::size_t total_records() const { return records_per_run * runs; }
};

struct CalibrationPlan {
  // Multiples of the operating detected photons per diode.
  std::vector<double> power_fractions{0.0, 0.4, 0.8, 1.2, 1.6, 2.0};
  std::size_t records_per_power = 200;
  double classical_noise_frac = 0.0;
};

struct SweepPlan {
  std::vector<double> gains{20.0, 30.0, 40.0, 50.0, 64.0, 80.0};
  // xi(g) = 1 + (xi_ref - 1) (g / reference_gain)^exponent
  double xi_gain_exponent = 2.0;
  double xi_reference_gain = 64.0;
  bool balance = true;
  std::size_t records_per_gain = 200;
  std::size_t histogram_bins = 60;
};

struct FreqDomainPlan {
  double bandwidth_hz = 20e6;
  double eta_s = 0.91;
  double eta_i = 0.89;
  double electronic_window_variance = 1e-5;
  FrequencyBand band;
  std::size_t records = 1000;
  std::vector<double> gains{5.0, 10.0, 20.0, 30.0, 40.0};
  std::vector<double> seed_powers_w{0.2e-6, 1e-6};
};

struct ScenarioConfig {
  SourceConfig source;
  DetectionChain detection;
  DetectorConfig detector;
  DaqPlan daq;
  CalibrationPlan calibration;
  SweepPlan sweep;
  FreqDomainPlan freq;
  std::uint64_t master_seed = 20190521;
  unsigned workers = 0;  // 0: one per hardware thread
  std::string output_dir = "out";

  unsigned worker_count() const { return workers == 0 ? default_worker_count() : workers; }

  double repetition_rate_hz() const { return 1.0 / detector.pulse_period_s; }

  FopaParams fopa() const { return fopa_at_gain(source.gain_g); }

  /// Source parameters at gain g, with the excess noise grown per the sweep law.
  FopaParams fopa_at_gain(double g) const {
    FopaParams p;
    p.gain_g = g;
    p.seed_photons_n0 =
        photons_per_pulse(source.seed_power_w, source.wavelength_m, repetition_rate_hz());
    p.seed_excess_noise_xi = xi_at_gain(g);
    p.raman_photons_s = source.raman_photons_s;
    p.raman_photons_i = source.raman_photons_i;
    return p;
  }

  double xi_at_gain(double g) const {
    const double xi = source.seed_excess_noise_xi;
    if (g == sweep.xi_reference_gain || xi == 1.0) return xi;
    return 1.0 + (xi - 1.0) * std::pow(g / sweep.xi_reference_gain, sweep.xi_gain_exponent);
  }

  /// Detection chain at gain g (balanced by extra attenuation when requested).
  DetectionChain detection_at_gain(double g) const {
    const FopaParams p = fopa_at_gain(g);
    if (!sweep.balance || g <= 1.0) return detection;
    return balance_attenuation(p, detection);
  }

  DetectorModel detector_model() const {
    DetectorModel m;
    m.bandwidth_hz = detector.bandwidth_hz;
    m.kernel_shape = detector.kernel_shape;
    m.user_kernel = detector.user_kernel;
    m.cmrr_db = detector.cmrr_db;
    m.transimpedance_v_per_a = detector.transimpedance_v_per_a;
    m.amp_gain_v_per_v = detector.amp_gain_v_per_v;
    m.adc_bits = detector.adc_bits;
    m.adc_full_scale_v = detector.adc_full_scale_v;
    m.sample_rate_hz = detector.sample_rate_hz;
    m.pulse_period_s = detector.pulse_period_s;
    m.record_samples = detector.record_samples;
    m.first_pulse_offset_s = 0.5 * detector.pulse_period_s;
    m.electronic_noise_rms_v =
        electronic_noise_rms_for_window_variance(m, detector.electronic_window_variance);
    return m;
  }

  DetectorModel freq_detector_model() const {
    DetectorModel m = detector_model();
    m.bandwidth_hz = freq.bandwidth_hz;
    m.electronic_noise_rms_v =
        electronic_noise_rms_for_window_variance(m, freq.electronic_window_variance);
    return m;
  }

  DetectionChain freq_detection() const {
    DetectionChain d = detection;
    d.eta_s = freq.eta_s;
    d.eta_i = freq.eta_i;
    return d;
  }

  void validate() const {
    fopa().validate();
    detection.validate();
    const DetectorModel m = detector_model();
    if (daq.pulses_per_record < 1)
      throw ConfigurationError("daq.pulses_per_record must be >= 1");
    if (daq.pulses_per_record > m.pulses_per_record())
      throw ConfigurationError("daq.pulses_per_record exceeds the pulse slots in one record");
    if (daq.records_per_run < 1 || daq.runs < 1)
      throw ConfigurationError("daq.records_per_run and daq.runs must be >= 1");
    if (calibration.records_per_power < 1)
      throw ConfigurationError("calibration.records_per_power must be >= 1");
    for (double f : calibration.power_fractions)
      if (!(f >= 0.0)) throw ConfigurationError("calibration.power_fractions must be >= 0");
    for (double g : sweep.gains)
      if (!(g >= 1.0)) throw ConfigurationError("sweep.gains must be >= 1");
    if (!(sweep.xi_reference_gain > 0.0))
      throw ConfigurationError("sweep.xi_reference_gain must be > 0");
    if (sweep.histogram_bins < 1) throw ConfigurationError("sweep.histogram_bins must be >= 1");
    if (!(freq.eta_s >= 0 && freq.eta_s <= 1 && freq.eta_i >= 0 && freq.eta_i <= 1))
      throw ConfigurationError("freq efficiencies must lie in [0, 1]");
    if (freq.records < 1) throw ConfigurationError("freq.records must be >= 1");
    freq_detector_model();
  }
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

inline std::string peak_search_name(PeakSearch s) {
  return s == PeakSearch::grid_locked ? "grid_locked" : "per_pulse";
}

inline PeakSearch parse_peak_search(const std::string& s) {
  if (s == "grid_locked") return PeakSearch::grid_locked;
  if (s == "per_pulse") return PeakSearch::per_pulse;
  throw ConfigurationError("unknown peak_search '" + s + "'");
}

// Reads j[key] into out when present; rejects keys not listed in `known`.
class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigurationError("config section '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    known_.push_back(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigurationError("config key '" + name_ + "." + key + "': " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    known_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      bool ok = false;
      for (const auto& n : known_) ok = ok || n == k;
      if (!ok) throw ConfigurationError("unknown config key '" + name_ + "." + k + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::vector<std::string> known_;
};

}  // namespace detail

inline nlohmann::json to_json(const ScenarioConfig& c) {
  using nlohmann::json;
  json j;
  j["source"] = {{"gain_g", c.source.gain_g},
                 {"seed_power_w", c.source.seed_power_w},
                 {"wavelength_m", c.source.wavelength_m},
                 {"seed_excess_noise_xi", c.source.seed_excess_noise_xi},
                 {"raman_photons_s", c.source.raman_photons_s},
                 {"raman_photons_i", c.source.raman_photons_i}};
  j["detection"] = {{"eta_s", c.detection.eta_s},
                    {"eta_i", c.detection.eta_i},
                    {"gain_ratio_r", c.detection.gain_ratio_r},
                    {"volts_per_photon_kappa", c.detection.volts_per_photon_kappa}};
  j["detector"] = {{"bandwidth_hz", c.detector.bandwidth_hz},
                   {"kernel_shape", to_string(c.detector.kernel_shape)},
                   {"user_kernel", c.detector.user_kernel},
                   {"electronic_window_variance", c.detector.electronic_window_variance},
                   {"cmrr_db", std::isinf(c.detector.cmrr_db) ? json("inf") : json(c.detector.cmrr_db)},
                   {"transimpedance_v_per_a", c.detector.transimpedance_v_per_a},
                   {"amp_gain_v_per_v", c.detector.amp_gain_v_per_v},
                   {"adc_bits", c.detector.adc_bits},
                   {"adc_full_scale_v", c.detector.adc_full_scale_v},
                   {"sample_rate_hz", c.detector.sample_rate_hz},
                   {"pulse_period_s", c.detector.pulse_period_s},
                   {"record_samples", c.detector.record_samples}};
  j["daq"] = {{"pulses_per_record", c.daq.pulses_per_record},
              {"records_per_run", c.daq.records_per_run},
              {"runs", c.daq.runs},
              {"peak_search", detail::peak_search_name(c.daq.peak_search)}};
  j["calibration"] = {{"power_fractions", c.calibration.power_fractions},
                      {"records_per_power", c.calibration.records_per_power},
                      {"classical_noise_frac", c.calibration.classical_noise_frac}};
  j["sweep"] = {{"gains", c.sweep.gains},
                {"xi_gain_exponent", c.sweep.xi_gain_exponent},
                {"xi_reference_gain", c.sweep.xi_reference_gain},
                {"balance", c.sweep.balance},
                {"records_per_gain", c.sweep.records_per_gain},
                {"histogram_bins", c.sweep.histogram_bins}};
  j["freq"] = {{"bandwidth_hz", c.freq.bandwidth_hz},
               {"eta_s", c.freq.eta_s},
               {"eta_i", c.freq.eta_i},
               {"electronic_window_variance", c.freq.electronic_window_variance},
               {"band_center_hz", c.freq.band.center_hz},
               {"band_width_hz", c.freq.band.width_hz},
               {"records", c.freq.records},
               {"gains", c.freq.gains},
               {"seed_powers_w", c.freq.seed_powers_w}};
  j["master_seed"] = c.master_seed;
  j["workers"] = c.workers;
  j["output_dir"] = c.output_dir;
  return j;
}

/// Overlays `j` on the defaults. Unknown keys are configuration errors.
inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  detail::Section top(j, "");
  if (const auto* s = top.child("source")) {
    detail::Section sec(*s, "source");
    sec.get("gain_g", c.source.gain_g);
    sec.get("seed_power_w", c.source.seed_power_w);
    sec.get("wavelength_m", c.source.wavelength_m);
    sec.get("seed_excess_noise_xi", c.source.seed_excess_noise_xi);
    sec.get("raman_photons_s", c.source.raman_photons_s);
    sec.get("raman_photons_i", c.source.raman_photons_i);
    sec.finish();
  }
  if (const auto* s = top.child("detection")) {
    detail::Section sec(*s, "detection");
    sec.get("eta_s", c.detection.eta_s);
    sec.get("eta_i", c.detection.eta_i);
    sec.get("gain_ratio_r", c.detection.gain_ratio_r);
    sec.get("volts_per_photon_kappa", c.detection.volts_per_photon_kappa);
    sec.finish();
  }
  if (const auto* s = top.child("detector")) {
    detail::Section sec(*s, "detector");
    auto& d = c.detector;
    sec.get("bandwidth_hz", d.bandwidth_hz);
    std::string shape = to_string(d.kernel_shape);
    sec.get("kernel_shape", shape);
    d.kernel_shape = parse_kernel_shape(shape);
    sec.get("user_kernel", d.user_kernel);
    sec.get("electronic_window_variance", d.electronic_window_variance);
    if (const auto* cm = sec.child("cmrr_db")) {
      if (cm->is_string() && cm->get<std::string>() == "inf")
        d.cmrr_db = std::numeric_limits<double>::infinity();
      else if (cm->is_number())
        d.cmrr_db = cm->get<double>();
      else
        throw ConfigurationError("detector.cmrr_db must be a number or \"inf\"");
    }
    sec.get("transimpedance_v_per_a", d.transimpedance_v_per_a);
    sec.get("amp_gain_v_per_v", d.amp_gain_v_per_v);
    sec.get("adc_bits", d.adc_bits);
    sec.get("adc_full_scale_v", d.adc_full_scale_v);
    sec.get("sample_rate_hz", d.sample_rate_hz);
    sec.get("pulse_period_s", d.pulse_period_s);
    sec.get("record_samples", d.record_samples);
    sec.finish();
  }
  if (const auto* s = top.child("daq")) {
    detail::Section sec(*s, "daq");
    sec.get("pulses_per_record", c.daq.pulses_per_record);
    sec.get("records_per_run", c.daq.records_per_run);
    sec.get("runs", c.daq.runs);
    std::string mode = detail::peak_search_name(c.daq.peak_search);
    sec.get("peak_search", mode);
    c.daq.peak_search = detail::parse_peak_search(mode);
    sec.finish();
  }
  if (const auto* s = top.child("calibration")) {
    detail::Section sec(*s, "calibration");
    sec.get("power_fractions", c.calibration.power_fractions);
    sec.get("records_per_power", c.calibration.records_per_power);
    sec.get("classical_noise_frac", c.calibration.classical_noise_frac);
    sec.finish();
  }
  if (const auto* s = top.child("sweep")) {
    detail::Section sec(*s, "sweep");
    sec.get("gains", c.sweep.gains);
    sec.get("xi_gain_exponent", c.sweep.xi_gain_exponent);
    sec.get("xi_reference_gain", c.sweep.xi_reference_gain);
    sec.get("balance", c.sweep.balance);
    sec.get("records_per_gain", c.sweep.records_per_gain);
    sec.get("histogram_bins", c.sweep.histogram_bins);
    sec.finish();
  }
  if (const auto* s = top.child("freq")) {
    detail::Section sec(*s, "freq");
    sec.get("bandwidth_hz", c.freq.bandwidth_hz);
    sec.get("eta_s", c.freq.eta_s);
    sec.get("eta_i", c.freq.eta_i);
    sec.get("electronic_window_variance", c.freq.electronic_window_variance);
    sec.get("band_center_hz", c.freq.band.center_hz);
    sec.get("band_width_hz", c.freq.band.width_hz);
    sec.get("records", c.freq.records);
    sec.get("gains", c.freq.gains);
    sec.get("seed_powers_w", c.freq.seed_powers_w);
    sec.finish();
  }
  top.get("master_seed", c.master_seed);
  top.get("workers", c.workers);
  top.get("output_dir", c.output_dir);
  top.finish();
  return c;
}

/// Applies "section.key=value" overrides. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
inline nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigurationError("override must look like key.path=value: '" + s + "'");
    const std::string path = s.substr(0, eq);
    const std::string text = s.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
      if (key.empty()) throw ConfigurationError("bad override path '" + path + "'");
      if (!node->is_object()) *node = nlohmann::json::object();
      node = &(*node)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    *node = value;
  }
  return j;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigurationError(path.string() + " is not valid JSON");
  return j;
}

/// Loads a scenario (defaults when `path` is empty) and applies overrides.
inline ScenarioConfig load_scenario(const std::filesystem::path& path,
                                    const std::vector<std::string>& sets = {}) {
  nlohmann::json j = path.empty() ? nlohmann::json::object() : read_json_file(path);
  ScenarioConfig c = scenario_from_json(apply_overrides(std::move(j), sets));
  c.validate();
  return c;
}

/// FNV-1a over the canonical (sorted-key) JSON of the resolved config.
/// Worker count and output directory do not change results and are left out.
inline std::string config_hash(const ScenarioConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("workers");
  j.erase("output_dir");
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace twinbeam
