#pragma once

// Simulation workflows and the command implementations behind the CLI.
// Every output file starts with a "# config_hash=..." line; numbers are
// written with %.17g so identical inputs give identical bytes.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "twinbeam/calibration.hpp"
#include "twinbeam/daq_pipeline.hpp"
#include "twinbeam/detector_sim.hpp"
#include "twinbeam/errors.hpp"
#include "twinbeam/parallel.hpp"
#include "twinbeam/scenario.hpp"
#include "twinbeam/seeding.hpp"
#include "twinbeam/squeezing_metrics.hpp"
#include "twinbeam/trace_io.hpp"
#include "twinbeam/twinbeam_model.hpp"

namespace twinbeam {

// ---------------------------------------------------------------------------
// CSV output

struct CsvCell {
  std::string text;
  CsvCell(double v) {  // NOLINT(google-explicit-constructor)
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    text = buf;
  }
  CsvCell(std::size_t v) : text(std::to_string(v)) {}  // NOLINT
  CsvCell(int v) : text(std::to_string(v)) {}          // NOLINT
  CsvCell(bool v) : text(v ? "1" : "0") {}             // NOLINT
  CsvCell(std::string v) : text(std::move(v)) {}       // NOLINT
  CsvCell(const char* v) : text(v) {}                  // NOLINT
};

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& config_hash,
            std::initializer_list<std::string> columns)
      : path_(path), out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
    out_ << "# config_hash=" << config_hash << '\n';
    bool first = true;
    for (const auto& c : columns) {
      out_ << (first ? "" : ",") << c;
      first = false;
    }
    out_ << '\n';
    width_ = columns.size();
  }

  void row(std::initializer_list<CsvCell> cells) {
    if (cells.size() != width_) throw InternalError("CsvWriter: row width mismatch in " + path_.string());
    bool first = true;
    for (const auto& c : cells) {
      out_ << (first ? "" : ",") << c.text;
      first = false;
    }
    out_ << '\n';
    if (!out_) throw IoError("failed writing " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t width_ = 0;
};

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::filesystem::path ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  return dir;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Workflows

/// Detected shot-noise photons P_s + r^2 P_i for a source and chain: the power
/// reading used to look up sigma^2_SNL.
inline double shot_noise_photons(const FopaParams& p, const DetectionChain& d) {
  return detected_stats(p, d).shot_noise(d.gain_ratio_r);
}

/// Calibration light per diode with the same shot noise as the twin beams.
inline double equivalent_power_per_pd(const FopaParams& p, const DetectionChain& d) {
  const double r = d.gain_ratio_r;
  return shot_noise_photons(p, d) / (1.0 + r * r);
}

inline double operating_power_per_pd(const ScenarioConfig& c) {
  return equivalent_power_per_pd(c.fopa(), c.detection_at_gain(c.source.gain_g));
}

inline std::vector<double> calibration_powers(const ScenarioConfig& c) {
  const double op = operating_power_per_pd(c);
  std::vector<double> powers;
  for (double f : c.calibration.power_fractions) powers.push_back(f * op);
  return powers;
}

inline CalibrationFit simulate_calibration(const ScenarioConfig& c) {
  CalibrationSimConfig sim;
  sim.detector = c.detector_model();
  sim.detection = c.detection_at_gain(c.source.gain_g);
  sim.classical_noise_frac = c.calibration.classical_noise_frac;
  sim.peak_search = c.daq.peak_search;
  sim.workers = c.worker_count();
  const auto powers = calibration_powers(c);
  return run_snl_calibration(powers, c.calibration.records_per_power, sim,
                             derive_seed(c.master_seed, SeedStream::calibration_light, 0));
}

struct RecordSet {
  std::vector<PulseEstimates> records;
  std::size_t clamped = 0;
  std::size_t saturated_samples = 0;
  std::size_t low_confidence = 0;
  std::size_t n_pulses = 0;

  double pooled() const { return pooled_variance(records); }
};

/// Photon differences I_s - r I_i seen by the detector, with the common mode
/// leaking through the finite CMRR.
inline std::vector<double> twin_beam_differences(const PulsePairSeries& s, double r,
                                                 double cmrr_db) {
  const double leak = common_mode_leakage(cmrr_db);
  std::vector<double> diffs(s.n_t);
  for (std::size_t n = 0; n < s.n_t; ++n)
    diffs[n] = differential_photons(s.i_s[n], s.i_i[n], r, leak);
  return diffs;
}

/// One twin-beam record: pulse pairs, detector trace. Seeds split from `seed`.
inline VoltageTrace twin_beam_trace(const FopaParams& p, const DetectionChain& d,
                                    const DetectorModel& m, std::size_t n_t,
                                    std::uint64_t seed, std::size_t index,
                                    std::size_t* clamped = nullptr) {
  const auto pairs =
      sample_pulse_pairs(p, d, n_t, derive_seed(seed, SeedStream::pulse_pairs, index));
  if (clamped) *clamped = pairs.clamped;
  const auto diffs = twin_beam_differences(pairs, d.gain_ratio_r, m.cmrr_db);
  return synthesize_trace(diffs, d, m, derive_seed(seed, SeedStream::electronic_noise, index));
}

inline VoltageTrace electronic_trace(const DetectionChain& d, const DetectorModel& m,
                                     std::size_t n_t, std::uint64_t seed, std::size_t index) {
  const std::vector<double> none(n_t, 0.0);
  return synthesize_trace(none, d, m, derive_seed(seed, SeedStream::electronic_noise, index));
}

namespace detail {

template <class MakeTrace>
RecordSet collect_records(std::size_t n_records, unsigned workers, PeakSearch mode,
                          MakeTrace&& make) {
  struct Item {
    PulseEstimates est;
    std::size_t clamped = 0;
    std::size_t saturated = 0;
    bool low = false;
  };
  RecordSet out;
  out.records.reserve(n_records);
  ordered_parallel_for(
      n_records, workers,
      [&](std::size_t j) {
        Item it;
        const VoltageTrace t = make(j, &it.clamped);
        const auto peaks = find_pulse_peaks(t, mode);
        it.low = peaks.low_confidence;
        it.saturated = t.n_saturated;
        it.est = integrate_windows(t, peaks);
        return it;
      },
      [&](std::size_t, Item&& it) {
        out.clamped += it.clamped;
        out.saturated_samples += it.saturated;
        out.low_confidence += it.low ? 1 : 0;
        out.n_pulses += it.est.n_pulses;
        out.records.push_back(std::move(it.est));
      });
  return out;
}

}  // namespace detail

inline RecordSet simulate_twin_beam_records(const FopaParams& p, const DetectionChain& d,
                                            const DetectorModel& m, std::size_t n_t,
                                            std::size_t n_records, PeakSearch mode,
                                            unsigned workers, std::uint64_t seed) {
  return detail::collect_records(n_records, workers, mode,
                                 [&](std::size_t j, std::size_t* clamped) {
                                   return twin_beam_trace(p, d, m, n_t, seed, j, clamped);
                                 });
}

inline RecordSet simulate_electronic_records(const DetectionChain& d, const DetectorModel& m,
                                             std::size_t n_t, std::size_t n_records,
                                             PeakSearch mode, unsigned workers,
                                             std::uint64_t seed) {
  return detail::collect_records(n_records, workers, mode,
                                 [&](std::size_t j, std::size_t*) {
                                   return electronic_trace(d, m, n_t, seed, j);
                                 });
}

inline RecordSet simulate_snl_records(double power_per_pd, double classical_noise_frac,
                                      const DetectionChain& d, const DetectorModel& m,
                                      std::size_t n_t, std::size_t n_records, PeakSearch mode,
                                      unsigned workers, std::uint64_t seed) {
  const CalibrationLight light{power_per_pd, classical_noise_frac};
  return detail::collect_records(
      n_records, workers, mode, [&](std::size_t j, std::size_t*) {
        return synthesize_snl_calibration_pair(
            light, m, d, n_t, derive_seed(seed, SeedStream::calibration_trace, j));
      });
}

/// sigma^2_EN from light-blocked records.
inline double measure_electronic_variance(const ScenarioConfig& c, std::size_t n_records) {
  const auto set = simulate_electronic_records(
      c.detection, c.detector_model(), c.daq.pulses_per_record, n_records, c.daq.peak_search,
      c.worker_count(), derive_seed(c.master_seed, SeedStream::electronic_only, 0));
  return set.pooled();
}

/// Analytic R at gain g including the detector's common-mode leakage.
inline double predict_R_detector(const ScenarioConfig& c, const FopaParams& p,
                                 const DetectionChain& d) {
  return predict_R_with_leakage(detected_stats(p, d), d.gain_ratio_r, c.detector.cmrr_db);
}

/// Seed excess noise xi (at the reference gain of the sweep law, here taken at
/// gain g) for which the simulated measurement, CMRR leakage included,
/// yields target_R. R is affine in xi, so two evaluations solve it.
inline double fit_excess_noise(const ScenarioConfig& c, double g, double target_R) {
  const DetectionChain d = c.detection_at_gain(g);
  FopaParams p = c.fopa_at_gain(g);
  p.seed_excess_noise_xi = 1.0;
  const double r1 = predict_R_detector(c, p, d);
  p.seed_excess_noise_xi = 2.0;
  const double r2 = predict_R_detector(c, p, d);
  if (!(std::abs(r2 - r1) > 0.0))
    throw DegenerateInputError("fit_excess_noise: R does not depend on xi");
  return 1.0 + (target_R - r1) / (r2 - r1);
}

struct MeasurementPoint {
  double gain = 1.0;
  FopaParams fopa;
  DetectionChain detection;
  TwinBeamStats stats;
  double predicted_R = 1.0;           // source model
  double predicted_R_detector = 1.0;  // with common-mode leakage
  double shot_photons = 0.0;
  SnlValue snl;
  SqueezingResult result;
  bool snl_not_above_en = false;
  RecordSet set;
};

/// Time-domain R_t at gain g against a stored calibration and sigma^2_EN.
inline MeasurementPoint measure_at_gain(const ScenarioConfig& c, double g,
                                        const CalibrationFit& fit, double var_en,
                                        std::size_t n_records, std::uint64_t seed) {
  MeasurementPoint mp;
  mp.gain = g;
  mp.fopa = c.fopa_at_gain(g);
  mp.detection = c.detection_at_gain(g);
  mp.stats = detected_stats(mp.fopa, mp.detection);
  mp.predicted_R = predict_R(mp.stats, mp.detection.gain_ratio_r);
  mp.predicted_R_detector = predict_R_detector(c, mp.fopa, mp.detection);
  mp.shot_photons = mp.stats.shot_noise(mp.detection.gain_ratio_r);
  mp.set = simulate_twin_beam_records(mp.fopa, mp.detection, c.detector_model(),
                                      c.daq.pulses_per_record, n_records, c.daq.peak_search,
                                      c.worker_count(), seed);
  mp.snl = snl_at_power(fit, mp.shot_photons);
  if (!(mp.snl.variance > var_en)) {
    // Too little light for this calibration: report the point without a ratio.
    mp.snl_not_above_en = true;
    mp.result.var_id = mp.set.pooled();
    mp.result.var_snl = mp.snl.variance;
    mp.result.var_en = var_en;
    return mp;
  }
  mp.result = with_loss_correction(compute_Rt(mp.set.pooled(), mp.snl.variance, var_en),
                                   mean_efficiency(mp.detection.eta_s, mp.detection.eta_i));
  return mp;
}

struct FreqDomainPoint {
  double gain = 1.0;
  double seed_power_w = 0.0;
  DetectionChain detection;
  double predicted_R = 1.0;
  FreqDomainResult result;
};

/// Ensemble PSD of `n_records` traces made by make(j).
template <class MakeTrace>
PsdEstimate simulate_psd(std::size_t n_records, unsigned workers, MakeTrace&& make) {
  PsdAccumulator acc;
  ordered_parallel_for(n_records, workers, [&](std::size_t j) { return make(j); },
                       [&](std::size_t, VoltageTrace&& t) { acc.add(t); });
  return acc.result();
}

/// Frequency-domain R around the configured band for one source setting.
/// `electronic` is the shared light-blocked ensemble PSD.
inline FreqDomainPoint freq_domain_point(const ScenarioConfig& c, const FopaParams& p,
                                         const PsdEstimate& electronic, std::size_t n_records,
                                         std::uint64_t seed) {
  FreqDomainPoint fp;
  fp.gain = p.gain_g;
  const DetectorModel m = c.freq_detector_model();
  const DetectionChain d0 = c.freq_detection();
  fp.detection = p.gain_g > 1.0 ? balance_attenuation(p, d0) : d0;
  fp.predicted_R = predict_R(p, fp.detection);
  const std::size_t n_t = c.daq.pulses_per_record;
  const unsigned w = c.worker_count();
  const PsdEstimate signal = simulate_psd(n_records, w, [&](std::size_t j) {
    return twin_beam_trace(p, fp.detection, m, n_t, seed, j);
  });
  const CalibrationLight light{equivalent_power_per_pd(p, fp.detection), 0.0};
  const std::uint64_t snl_seed = derive_seed(seed, SeedStream::calibration_light, 0);
  const PsdEstimate snl = simulate_psd(n_records, w, [&](std::size_t j) {
    return synthesize_snl_calibration_pair(
        light, m, fp.detection, n_t, derive_seed(snl_seed, SeedStream::calibration_trace, j));
  });
  fp.result = freq_domain_R(signal, snl, electronic, c.freq.band);
  return fp;
}

inline PsdEstimate freq_domain_electronic_psd(const ScenarioConfig& c, std::size_t n_records,
                                              std::uint64_t seed) {
  const DetectorModel m = c.freq_detector_model();
  const DetectionChain d = c.freq_detection();
  return simulate_psd(n_records, c.worker_count(), [&](std::size_t j) {
    return electronic_trace(d, m, c.daq.pulses_per_record, seed, j);
  });
}

// ---------------------------------------------------------------------------
// Commands

struct RunContext {
  ScenarioConfig config;
  std::string hash;
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;

  explicit RunContext(ScenarioConfig c, std::ostream* log_stream = nullptr)
      : config(std::move(c)), hash(config_hash(config)), out_dir(config.output_dir),
        log(log_stream) {}

  void note(const std::string& msg) const {
    if (log) *log << msg << '\n';
  }
};

inline nlohmann::json calibration_inputs(const ScenarioConfig& c) {
  const DetectorModel m = c.detector_model();
  return {{"config_hash", config_hash(c)},
          {"operating_power_per_pd_photons", operating_power_per_pd(c)},
          {"powers_per_pd_photons", calibration_powers(c)},
          {"records_per_power", c.calibration.records_per_power},
          {"pulses_per_record", c.daq.pulses_per_record},
          {"classical_noise_frac", c.calibration.classical_noise_frac},
          {"volts_per_photon_kappa", c.detection.volts_per_photon_kappa},
          {"electronic_noise_rms_v", m.electronic_noise_rms_v},
          {"kernel_shape", to_string(m.kernel_shape)},
          {"bandwidth_hz", m.bandwidth_hz}};
}

inline void write_calibration_points(const std::filesystem::path& path, const std::string& hash,
                                     const CalibrationFit& fit) {
  CsvWriter csv(path, hash, {"power_photons", "variance_v2", "n_pulses", "fit_v2"});
  for (const auto& p : fit.points)
    csv.row({p.power, p.variance, p.n_pulses, fit.slope * p.power + fit.intercept});
}

/// Runs the SNL calibration sweep; writes calibration.json and
/// calibration_points.csv into the output directory.
inline CalibrationFit cmd_calibrate(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto dir = ensure_dir(ctx.out_dir);
  ctx.note("calibrating: " + std::to_string(c.calibration.power_fractions.size()) + " powers x " +
           std::to_string(c.calibration.records_per_power) + " records");
  const CalibrationFit fit = simulate_calibration(c);
  write_json_file(dir / "calibration.json",
                  calibration_to_json(fit, calibration_inputs(c), c.master_seed, utc_timestamp()));
  write_calibration_points(dir / "calibration_points.csv", ctx.hash, fit);
  ctx.note("slope " + CsvCell(fit.slope).text + " V^2/photon, intercept " +
           CsvCell(fit.intercept).text + " V^2, r^2 " + CsvCell(fit.r_squared).text);
  return fit;
}

inline void write_histogram(const std::filesystem::path& path, const std::string& hash,
                            const Histogram& h) {
  CsvWriter csv(path, hash, {"bin_centre_v_sample", "count"});
  for (std::size_t b = 0; b < h.counts.size(); ++b) csv.row({h.centre(b), h.counts[b]});
}

inline std::string gain_tag(double g) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "g%g", g);
  return buf;
}

/// Time-domain R_t over the configured gain sweep against a stored
/// calibration. Writes measurement.csv and one histogram per gain.
inline std::vector<MeasurementPoint> cmd_measure(const RunContext& ctx,
                                                 const std::filesystem::path& calibration_file) {
  const auto& c = ctx.config;
  const CalibrationFit fit = read_calibration(calibration_file);
  const auto dir = ensure_dir(ctx.out_dir);
  const std::size_t n_rec = c.sweep.records_per_gain;
  ctx.note("measuring electronic noise: " + std::to_string(n_rec) + " records");
  const double var_en = measure_electronic_variance(c, n_rec);
  std::vector<MeasurementPoint> points;
  CsvWriter csv(dir / "measurement.csv", ctx.hash,
                {"g", "xi", "eta_s", "eta_i", "r", "var_id_v2", "var_snl_v2", "var_en_v2", "R_t",
                 "R_t_db", "R_t_corrected_db", "predicted_R", "predicted_db", "predicted_cmrr_db",
                 "snl_extrapolated",
                 "snl_not_above_en", "unphysical_subtraction", "unphysical_correction", "clamp_fraction",
                 "saturated_samples", "n_pulses"});
  for (std::size_t k = 0; k < c.sweep.gains.size(); ++k) {
    const double g = c.sweep.gains[k];
    ctx.note("measuring g = " + CsvCell(g).text);
    auto mp = measure_at_gain(c, g, fit, var_en, n_rec,
                              derive_seed(c.master_seed, SeedStream::measurement, k));
    const auto& r = mp.result;
    const auto opt = [](const std::optional<double>& v) -> CsvCell {
      return v ? CsvCell(*v) : CsvCell("nan");
    };
    csv.row({g, mp.fopa.seed_excess_noise_xi, mp.detection.eta_s, mp.detection.eta_i,
             mp.detection.gain_ratio_r, r.var_id, r.var_snl, r.var_en, opt(r.ratio_rt),
             opt(r.rt_db), opt(r.rt_corrected_db), mp.predicted_R, to_db(mp.predicted_R),
             to_db(mp.predicted_R_detector), mp.snl.extrapolated, mp.snl_not_above_en, r.unphysical_subtraction, r.unphysical_correction,
             static_cast<double>(mp.set.clamped) / (2.0 * static_cast<double>(mp.set.n_pulses)),
             mp.set.saturated_samples, mp.set.n_pulses});
    PulseEstimates all;
    for (const auto& rec : mp.set.records) all.e.insert(all.e.end(), rec.e.begin(), rec.e.end());
    all = PulseEstimates::from_values(std::move(all.e));
    write_histogram(dir / ("histogram_" + gain_tag(g) + ".csv"), ctx.hash,
                    histogram(all, c.sweep.histogram_bins));
    mp.set.records.clear();
    points.push_back(std::move(mp));
  }
  return points;
}

/// Gains used for analytic curves.
inline std::vector<double> prediction_gains() {
  std::vector<double> g{1.5, 2.0, 3.0, 4.0, 5.0, 7.5};
  for (double x = 10.0; x <= 100.0; x += 5.0) g.push_back(x);
  return g;
}

/// Analytic R for both detection settings, at r = 1 (balanced) and optimal r.
inline void cmd_predict(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto dir = ensure_dir(ctx.out_dir);
  CsvWriter csv(dir / "predict.csv", ctx.hash,
                {"g", "xi", "td_R_balanced", "td_R_balanced_db", "td_r_opt", "td_R_min",
                 "td_R_min_db", "fd_R_balanced", "fd_R_balanced_db", "fd_r_opt", "fd_R_min",
                 "fd_R_min_db"});
  for (double g : prediction_gains()) {
    const FopaParams p = c.fopa_at_gain(g);
    const DetectionChain td = c.detection;
    const DetectionChain fd = c.freq_detection();
    const double td_bal = predict_R(p, balance_attenuation(p, td));
    const double fd_bal = predict_R(p, balance_attenuation(p, fd));
    const auto td_opt = optimal_r(p, td.eta_s, td.eta_i);
    const auto fd_opt = optimal_r(p, fd.eta_s, fd.eta_i);
    csv.row({g, p.seed_excess_noise_xi, td_bal, to_db(td_bal), td_opt.r_opt, td_opt.r_min,
             to_db(td_opt.r_min), fd_bal, to_db(fd_bal), fd_opt.r_opt, fd_opt.r_min,
             to_db(fd_opt.r_min)});
  }
}

enum class TraceKind { twin_beam, snl, electronic };

inline TraceKind parse_trace_kind(const std::string& s) {
  if (s == "twin") return TraceKind::twin_beam;
  if (s == "snl") return TraceKind::snl;
  if (s == "electronic") return TraceKind::electronic;
  throw ConfigurationError("unknown trace kind '" + s + "' (expected twin, snl or electronic)");
}

inline std::string trace_file_name(std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "trace_%05zu.tbt", j);
  return buf;
}

/// Writes `count` TBT1 trace files and a manifest into <out>/traces.
inline std::vector<std::filesystem::path> cmd_simulate_traces(const RunContext& ctx,
                                                              TraceKind kind,
                                                              std::size_t count) {
  const auto& c = ctx.config;
  if (count < 1) throw ConfigurationError("simulate-traces: count must be >= 1");
  const auto dir = ensure_dir(ctx.out_dir / "traces");
  const FopaParams p = c.fopa();
  const DetectionChain d = c.detection_at_gain(c.source.gain_g);
  const DetectorModel m = c.detector_model();
  const std::size_t n_t = c.daq.pulses_per_record;
  const std::uint64_t seed = derive_seed(c.master_seed, SeedStream::measurement, 1000);
  const double power_pd = equivalent_power_per_pd(p, d);
  std::vector<std::filesystem::path> files;
  ordered_parallel_for(
      count, c.worker_count(),
      [&](std::size_t j) {
        switch (kind) {
          case TraceKind::twin_beam:
            return twin_beam_trace(p, d, m, n_t, seed, j);
          case TraceKind::snl:
            return synthesize_snl_calibration_pair(
                {power_pd, c.calibration.classical_noise_frac}, m, d, n_t,
                derive_seed(seed, SeedStream::calibration_trace, j));
          case TraceKind::electronic:
            break;
        }
        return electronic_trace(d, m, n_t, seed, j);
      },
      [&](std::size_t j, VoltageTrace&& t) {
        const auto path = dir / trace_file_name(j);
        write_trace(path, t);
        files.push_back(path);
      });
  const TwinBeamStats s = detected_stats(p, d);
  nlohmann::json manifest = {
      {"config_hash", ctx.hash},
      {"kind", kind == TraceKind::twin_beam ? "twin" : kind == TraceKind::snl ? "snl" : "electronic"},
      {"count", count},
      {"gain_g", p.gain_g},
      {"eta_s", d.eta_s},
      {"eta_i", d.eta_i},
      {"gain_ratio_r", d.gain_ratio_r},
      {"volts_per_photon_kappa", d.volts_per_photon_kappa},
      {"shot_noise_photons", kind == TraceKind::electronic ? 0.0 : s.shot_noise(d.gain_ratio_r)},
      {"predicted_R", kind == TraceKind::twin_beam ? predict_R(s, d.gain_ratio_r) : 1.0},
      {"master_seed", c.master_seed}};
  write_json_file(dir / "manifest.json", manifest);
  return files;
}

struct AnalyzeOptions {
  std::vector<std::filesystem::path> inputs;  // files or directories of *.tbt
  std::optional<std::filesystem::path> calibration;
  std::optional<double> shot_noise_photons;  // power reading for sigma^2_SNL
  std::optional<double> electronic_variance;
  double eta_bar = 0.0;  // > 0 enables loss correction
  std::size_t max_shift = 10;
};

struct AnalyzeSummary {
  std::size_t n_files = 0;
  std::size_t n_pulses = 0;
  double pooled_variance = 0.0;
  std::vector<double> correlation;
  std::optional<SqueezingResult> squeezing;
};

inline std::vector<std::filesystem::path> expand_trace_inputs(
    const std::vector<std::filesystem::path>& inputs) {
  std::vector<std::filesystem::path> files;
  for (const auto& in : inputs) {
    if (std::filesystem::is_directory(in)) {
      std::vector<std::filesystem::path> found;
      for (const auto& e : std::filesystem::directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".tbt") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (std::filesystem::exists(in)) {
      files.push_back(in);
    } else {
      throw IoError("no such trace file or directory: " + in.string());
    }
  }
  if (files.empty()) throw IoError("analyze: no trace files found");
  return files;
}

/// Ingests TBT1 traces: per-file statistics, pooled variance, C_Id profile and,
/// when a calibration and power reading are supplied, R_t.
inline AnalyzeSummary cmd_analyze(const RunContext& ctx, const AnalyzeOptions& opt) {
  const auto& c = ctx.config;
  const auto files = expand_trace_inputs(opt.inputs);
  const auto dir = ensure_dir(ctx.out_dir);
  std::vector<PulseEstimates> records;
  CsvWriter csv(dir / "analysis.csv", ctx.hash,
                {"file", "n_pulses", "mean_e", "var_e", "low_confidence"});
  std::vector<std::pair<PulseEstimates, PulsePeaks>> results(files.size());
  ordered_parallel_for(
      files.size(), c.worker_count(),
      [&](std::size_t j) {
        const VoltageTrace t = read_trace(files[j]);
        auto peaks = find_pulse_peaks(t, c.daq.peak_search);
        auto est = integrate_windows(t, peaks);
        return std::pair{std::move(est), std::move(peaks)};
      },
      [&](std::size_t j, std::pair<PulseEstimates, PulsePeaks>&& r) {
        csv.row({files[j].filename().string(), r.first.n_pulses, r.first.mean_e, r.first.var_e,
                 r.second.low_confidence});
        records.push_back(std::move(r.first));
      });
  AnalyzeSummary s;
  s.n_files = files.size();
  for (const auto& r : records) s.n_pulses += r.n_pulses;
  s.pooled_variance = pooled_variance(records);
  std::size_t shortest = records.front().n_pulses;
  for (const auto& r : records) shortest = std::min(shortest, r.n_pulses);
  if (shortest > 1)
    s.correlation = mean_correlation_profile(records, std::min(opt.max_shift, shortest - 1));
  {
    CsvWriter cid(dir / "analysis_cid.csv", ctx.hash, {"N", "C_Id"});
    for (std::size_t n = 0; n < s.correlation.size(); ++n) cid.row({n, s.correlation[n]});
  }
  nlohmann::json summary = {{"config_hash", ctx.hash},
                            {"n_files", s.n_files},
                            {"n_pulses", s.n_pulses},
                            {"pooled_variance_v2", s.pooled_variance},
                            {"c_id", s.correlation}};
  if (opt.calibration) {
    if (!opt.shot_noise_photons || !opt.electronic_variance)
      throw ConfigurationError(
          "analyze: R_t needs --shot-noise-photons and --en-variance with --calibration");
    const CalibrationFit fit = read_calibration(*opt.calibration);
    const SnlValue snl = snl_at_power(fit, *opt.shot_noise_photons);
    SqueezingResult r = compute_Rt(s.pooled_variance, snl.variance, *opt.electronic_variance);
    if (opt.eta_bar > 0.0) r = with_loss_correction(r, opt.eta_bar);
    s.squeezing = r;
    summary["var_snl_v2"] = r.var_snl;
    summary["var_en_v2"] = r.var_en;
    summary["snl_extrapolated"] = snl.extrapolated;
    summary["unphysical_subtraction"] = r.unphysical_subtraction;
    if (r.ratio_rt) summary["R_t"] = *r.ratio_rt;
    if (r.rt_db) summary["R_t_db"] = *r.rt_db;
    if (r.rt_corrected_db) summary["R_t_corrected_db"] = *r.rt_corrected_db;
  }
  write_json_file(dir / "analysis_summary.json", summary);
  return s;
}

// ---------------------------------------------------------------------------
// Figure data bundles

inline const std::vector<std::string>& figure_ids() {
  static const std::vector<std::string> ids{"fig2b", "fig2c", "fig2d", "fig3a", "fig3c", "fig4"};
  return ids;
}

namespace detail {

inline std::uint64_t figure_seed(const ScenarioConfig& c, std::size_t fig, std::size_t part) {
  return derive_seed(derive_seed(c.master_seed, SeedStream::figure, fig), 0, part);
}

// Height of the 50 MHz-harmonic bin over the median of its neighbours.
inline double line_excess_db(const PsdEstimate& p, double f) {
  const double df = p.bin_width();
  const auto k = static_cast<std::size_t>(std::llround(f / df));
  if (k < 12 || k + 12 >= p.psd.size()) return 0.0;
  std::vector<double> nb;
  for (std::size_t i = k - 11; i <= k + 11; ++i)
    if (i + 1 < k || i > k + 1) nb.push_back(p.psd[i]);
  std::nth_element(nb.begin(), nb.begin() + static_cast<std::ptrdiff_t>(nb.size() / 2), nb.end());
  return to_db(p.psd[k] / nb[nb.size() / 2]);
}

inline void fig2b(const RunContext& ctx, const std::filesystem::path& dir) {
  const auto& c = ctx.config;
  const DetectorModel m = c.detector_model();
  const DetectionChain d = c.detection_at_gain(c.source.gain_g);
  const double op = operating_power_per_pd(c);
  const std::vector<double> fractions{0.0, 0.5, 1.0, 2.0};
  std::vector<PsdEstimate> psds;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const CalibrationLight light{fractions[i] * op, c.calibration.classical_noise_frac};
    const std::uint64_t seed = figure_seed(c, 0, i);
    psds.push_back(simulate_psd(c.calibration.records_per_power, c.worker_count(),
                                [&](std::size_t j) {
                                  return synthesize_snl_calibration_pair(
                                      light, m, d, c.daq.pulses_per_record,
                                      derive_seed(seed, SeedStream::calibration_trace, j));
                                }));
  }
  CsvWriter csv(dir / "fig2b_psd.csv", ctx.hash,
                {"freq_hz", "psd_dark_v2_per_hz", "psd_0.5x_v2_per_hz", "psd_1x_v2_per_hz",
                 "psd_2x_v2_per_hz"});
  const auto& f = psds[0].freqs;
  for (std::size_t k = 0; k < f.size() && f[k] <= 250e6; ++k)
    csv.row({f[k], psds[0].psd[k], psds[1].psd[k], psds[2].psd[k], psds[3].psd[k]});
  CsvWriter sum(dir / "fig2b_summary.csv", ctx.hash,
                {"power_fraction", "power_per_pd_photons", "f_3db_hz", "line_50mhz_excess_db"});
  for (std::size_t i = 1; i < fractions.size(); ++i) {
    // Shot-noise part only: subtract the dark spectrum before locating -3 dB.
    PsdEstimate shot = psds[i];
    for (std::size_t k = 0; k < shot.psd.size(); ++k) shot.psd[k] -= psds[0].psd[k];
    sum.row({fractions[i], fractions[i] * op, psd_3db_frequency(shot, 0.2e6, 10e6),
             line_excess_db(psds[i], 1.0 / c.detector.pulse_period_s)});
  }
}

inline void fig2c(const RunContext& ctx, const std::filesystem::path& dir) {
  const auto& c = ctx.config;
  const auto set = simulate_twin_beam_records(
      c.fopa(), c.detection_at_gain(c.source.gain_g), c.detector_model(),
      c.daq.pulses_per_record, c.daq.total_records(), c.daq.peak_search, c.worker_count(),
      figure_seed(c, 1, 0));
  const auto prof = mean_correlation_profile(set.records, 10);
  CsvWriter csv(dir / "fig2c_cid.csv", ctx.hash, {"N", "C_Id"});
  for (std::size_t n = 0; n < prof.size(); ++n) csv.row({n, prof[n]});
}

inline void fig2d(const RunContext& ctx, const std::filesystem::path& dir) {
  const CalibrationFit fit = simulate_calibration(ctx.config);
  write_calibration_points(dir / "fig2d_points.csv", ctx.hash, fit);
  const auto ci = fit.intercept_interval(0.95);
  CsvWriter csv(dir / "fig2d_fit.csv", ctx.hash,
                {"slope_v2_per_photon", "intercept_v2", "r_squared", "slope_stderr",
                 "intercept_stderr", "intercept_ci95_lo", "intercept_ci95_hi",
                 "configured_electronic_v2"});
  csv.row({fit.slope, fit.intercept, fit.r_squared, fit.slope_stderr, fit.intercept_stderr,
           ci.first, ci.second, expected_electronic_window_variance(ctx.config.detector_model())});
}

inline PulseEstimates flatten(const RecordSet& set) {
  std::vector<double> all;
  for (const auto& r : set.records) all.insert(all.end(), r.e.begin(), r.e.end());
  return PulseEstimates::from_values(std::move(all));
}

inline void fig3a(const RunContext& ctx, const std::filesystem::path& dir) {
  const auto& c = ctx.config;
  const FopaParams p = c.fopa();
  const DetectionChain d = c.detection_at_gain(c.source.gain_g);
  const DetectorModel m = c.detector_model();
  const std::size_t n = c.sweep.records_per_gain;
  const auto twin = simulate_twin_beam_records(p, d, m, c.daq.pulses_per_record, n,
                                               c.daq.peak_search, c.worker_count(),
                                               figure_seed(c, 3, 0));
  const auto snl = simulate_snl_records(equivalent_power_per_pd(p, d), 0.0, d, m,
                                        c.daq.pulses_per_record, n, c.daq.peak_search,
                                        c.worker_count(), figure_seed(c, 3, 1));
  // Both histograms on one grid so the widths can be compared directly.
  const auto a = flatten(twin);
  const auto b = flatten(snl);
  const double lo = std::min(*std::min_element(a.e.begin(), a.e.end()),
                             *std::min_element(b.e.begin(), b.e.end()));
  const double hi = std::max(*std::max_element(a.e.begin(), a.e.end()),
                             *std::max_element(b.e.begin(), b.e.end()));
  const std::size_t bins = c.sweep.histogram_bins;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> ca(bins, 0), cb(bins, 0);
  const auto bin = [&](double x) {
    return std::min(bins - 1, static_cast<std::size_t>((x - lo) / width));
  };
  for (double x : a.e) ++ca[bin(x)];
  for (double x : b.e) ++cb[bin(x)];
  CsvWriter csv(dir / "fig3a_histogram.csv", ctx.hash,
                {"bin_centre_v_sample", "count_twin_beam", "count_snl"});
  for (std::size_t k = 0; k < bins; ++k)
    csv.row({lo + (static_cast<double>(k) + 0.5) * width, ca[k], cb[k]});
  CsvWriter sum(dir / "fig3a_summary.csv", ctx.hash,
                {"series", "mean_e", "var_e", "n_pulses"});
  sum.row({"twin_beam", a.mean_e, a.var_e, a.n_pulses});
  sum.row({"snl", b.mean_e, b.var_e, b.n_pulses});
}

inline void fig3c(const RunContext& ctx, const std::filesystem::path& dir) {
  const auto& c = ctx.config;
  const CalibrationFit fit = simulate_calibration(c);
  const double var_en = measure_electronic_variance(c, c.sweep.records_per_gain);
  CsvWriter csv(dir / "fig3c_measured.csv", ctx.hash,
                {"g", "xi", "R_t_simulated", "R_t_simulated_db", "predicted_R", "predicted_db",
                 "predicted_cmrr_db"});
  for (std::size_t k = 0; k < c.sweep.gains.size(); ++k) {
    const auto mp = measure_at_gain(c, c.sweep.gains[k], fit, var_en, c.sweep.records_per_gain,
                                    figure_seed(c, 4, k));
    const double rt = mp.result.ratio_rt.value_or(std::nan(""));
    csv.row({mp.gain, mp.fopa.seed_excess_noise_xi, rt, to_db(rt), mp.predicted_R,
             to_db(mp.predicted_R), to_db(mp.predicted_R_detector)});
  }
  CsvWriter curve(dir / "fig3c_curve.csv", ctx.hash,
                  {"g", "xi", "predicted_R", "predicted_db", "predicted_cmrr_db"});
  for (double g : prediction_gains()) {
    const auto p = c.fopa_at_gain(g);
    const auto d = c.detection_at_gain(g);
    const double r = predict_R(p, d);
    curve.row({g, c.xi_at_gain(g), r, to_db(r), to_db(predict_R_detector(c, p, d))});
  }
}

inline void fig4(const RunContext& ctx, const std::filesystem::path& dir) {
  const auto& c = ctx.config;
  const PsdEstimate electronic = freq_domain_electronic_psd(c, c.freq.records, figure_seed(c, 5, 0));
  CsvWriter csv(dir / "fig4_measured.csv", ctx.hash,
                {"seed_power_w", "g", "R_freq", "R_freq_db", "predicted_R", "predicted_db",
                 "unphysical"});
  std::size_t part = 1;
  for (double pw : c.freq.seed_powers_w) {
    ScenarioConfig local = c;
    local.source.seed_power_w = pw;
    for (double g : c.freq.gains) {
      const auto fp = freq_domain_point(local, local.fopa_at_gain(g), electronic, c.freq.records,
                                        figure_seed(c, 5, part++));
      csv.row({pw, g, fp.result.ratio, to_db(fp.result.ratio), fp.predicted_R,
               to_db(fp.predicted_R), fp.result.unphysical});
    }
  }
  CsvWriter curve(dir / "fig4_curve.csv", ctx.hash,
                  {"g", "R_balanced", "R_balanced_db", "r_opt", "R_opt", "R_opt_db"});
  const DetectionChain d = c.freq_detection();
  for (double g : prediction_gains()) {
    const FopaParams p = c.fopa_at_gain(g);
    const double bal = predict_R(p, balance_attenuation(p, d));
    const auto opt = optimal_r(p, d.eta_s, d.eta_i);
    curve.row({g, bal, to_db(bal), opt.r_opt, opt.r_min, to_db(opt.r_min)});
  }
}

}  // namespace detail

/// Writes the data behind one figure into <out>/<id>/.
inline std::filesystem::path cmd_reproduce_figure(const RunContext& ctx, const std::string& id) {
  using Fn = void (*)(const RunContext&, const std::filesystem::path&);
  static const std::map<std::string, Fn> table{{"fig2b", detail::fig2b}, {"fig2c", detail::fig2c},
                                               {"fig2d", detail::fig2d}, {"fig3a", detail::fig3a},
                                               {"fig3c", detail::fig3c}, {"fig4", detail::fig4}};
  const auto it = table.find(id);
  if (it == table.end()) {
    std::string known;
    for (const auto& k : figure_ids()) known += (known.empty() ? "" : ", ") + k;
    throw ConfigurationError("unknown figure '" + id + "' (known: " + known + ")");
  }
  const auto dir = ensure_dir(ctx.out_dir / id);
  ctx.note("reproducing " + id);
  it->second(ctx, dir);
  return dir;
}

}  // namespace twinbeam
