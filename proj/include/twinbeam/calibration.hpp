#pragma once

// Shot-noise-limit calibration: sweep the calibration light power, measure
// the variance of the windowed pulse integrals at each power and fit a line.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "twinbeam/daq_pipeline.hpp"
#include "twinbeam/detector_sim.hpp"
#include "twinbeam/errors.hpp"
#include "twinbeam/parallel.hpp"
#include "twinbeam/seeding.hpp"
#include "twinbeam/twinbeam_model.hpp"

namespace twinbeam {

struct CalibrationPoint {
  double power = 0.0;     // shot-noise-equivalent detected photons per pulse
  double variance = 0.0;  // pooled e_n variance, V^2
  std::size_t n_pulses = 0;
};

struct CalibrationFit {
  double slope = 0.0;      // V^2 per photon
  double intercept = 0.0;  // V^2, the electronic-noise floor
  double r_squared = 0.0;
  double slope_stderr = 0.0;
  double intercept_stderr = 0.0;
  std::size_t dof = 0;
  std::vector<CalibrationPoint> points;
  std::string power_unit = "photons";

  double min_power() const {
    double m = points.empty() ? 0.0 : points.front().power;
    for (const auto& p : points) m = std::min(m, p.power);
    return m;
  }
  double max_power() const {
    double m = 0.0;
    for (const auto& p : points) m = std::max(m, p.power);
    return m;
  }

  /// Two-sided Student-t confidence interval on the intercept.
  std::pair<double, double> intercept_interval(double level = 0.95) const {
    if (dof == 0) return {intercept, intercept};
    boost::math::students_t dist(static_cast<double>(dof));
    const double t = boost::math::quantile(dist, 0.5 + 0.5 * level);
    return {intercept - t * intercept_stderr, intercept + t * intercept_stderr};
  }

  bool physical() const { return slope > 0.0 && intercept >= 0.0; }
};

/// Unweighted ordinary least squares y = slope * x + intercept.
inline CalibrationFit fit_line(std::span<const CalibrationPoint> pts) {
  if (pts.size() < 2) throw PreconditionError("fit_line: need at least two points");
  const double n = static_cast<double>(pts.size());
  double mx = 0.0;
  double my = 0.0;
  for (const auto& p : pts) {
    mx += p.power;
    my += p.variance;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (const auto& p : pts) {
    sxx += (p.power - mx) * (p.power - mx);
    sxy += (p.power - mx) * (p.variance - my);
    syy += (p.variance - my) * (p.variance - my);
  }
  if (!(sxx > 0.0)) throw PreconditionError("fit_line: all powers are equal");
  CalibrationFit fit;
  fit.points.assign(pts.begin(), pts.end());
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (const auto& p : pts) {
    const double r = p.variance - (fit.slope * p.power + fit.intercept);
    sse += r * r;
  }
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - sse / syy, 0.0, 1.0) : 1.0;
  fit.dof = pts.size() - 2;
  if (fit.dof > 0) {
    const double s2 = sse / static_cast<double>(fit.dof);
    fit.slope_stderr = std::sqrt(s2 / sxx);
    fit.intercept_stderr = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  }
  return fit;
}

struct CalibrationSimConfig {
  DetectorModel detector = time_domain_detector();
  DetectionChain detection;
  double classical_noise_frac = 0.0;
  PeakSearch peak_search = PeakSearch::grid_locked;
  unsigned workers = 1;
};

/// Pooled e_n variance of `n_reps` simulated calibration records at one power.
inline CalibrationPoint measure_calibration_point(double power_per_pd, std::size_t n_reps,
                                                  const CalibrationSimConfig& cfg,
                                                  std::uint64_t seed) {
  const std::size_t n_t = cfg.detector.pulses_per_record();
  const CalibrationLight light{power_per_pd, cfg.classical_noise_frac};
  std::vector<PulseEstimates> records(n_reps);
  ordered_parallel_for(
      n_reps, cfg.workers,
      [&](std::size_t j) {
        const auto trace = synthesize_snl_calibration_pair(
            light, cfg.detector, cfg.detection, n_t,
            derive_seed(seed, SeedStream::calibration_trace, j));
        return analyze_trace(trace, cfg.peak_search);
      },
      [&](std::size_t j, PulseEstimates&& est) { records[j] = std::move(est); });
  CalibrationPoint pt;
  pt.power = calibration_shot_photons(power_per_pd, cfg.detection.gain_ratio_r);
  pt.variance = pooled_variance(records);
  for (const auto& r : records) pt.n_pulses += r.n_pulses;
  return pt;
}

/// Simulated calibration sweep. `powers_per_pd` are mean detected photons per
/// pulse on each diode; the fit abscissa is P (1 + r^2).
inline CalibrationFit run_snl_calibration(std::span<const double> powers_per_pd,
                                          std::size_t n_reps,
                                          const CalibrationSimConfig& cfg,
                                          std::uint64_t rng_seed) {
  if (n_reps < 1) throw PreconditionError("run_snl_calibration: n_reps must be >= 1");
  std::vector<double> distinct(powers_per_pd.begin(), powers_per_pd.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3)
    throw PreconditionError("run_snl_calibration: need at least 3 distinct powers");
  for (double p : powers_per_pd)
    if (!(p >= 0.0)) throw ParameterError("run_snl_calibration: negative power");
  std::vector<CalibrationPoint> pts;
  pts.reserve(powers_per_pd.size());
  for (std::size_t i = 0; i < powers_per_pd.size(); ++i)
    pts.push_back(measure_calibration_point(
        powers_per_pd[i], n_reps, cfg, derive_seed(rng_seed, SeedStream::calibration_light, i)));
  return fit_line(pts);
}

struct SnlValue {
  double variance = 0.0;
  bool extrapolated = false;  // power beyond twice the calibrated range
};

/// sigma^2_SNL = slope * power + intercept.
inline SnlValue snl_at_power(const CalibrationFit& fit, double total_power) {
  if (!(total_power >= 0.0)) throw ParameterError("snl_at_power: negative power");
  SnlValue v;
  v.variance = fit.slope * total_power + fit.intercept;
  v.extrapolated = !fit.points.empty() && total_power > 2.0 * fit.max_power();
  return v;
}

// ---------------------------------------------------------------------------
// Calibration record files (JSON, schema "twinbeam.calibration" v1).
//
//   schema, schema_version, slope, intercept, r_squared, slope_stderr,
//   intercept_stderr, dof, power_unit, variance_unit,
//   points: [{power, variance, n_pulses}], inputs: {...}, master_seed, timestamp

inline constexpr int kCalibrationSchemaVersion = 1;

inline nlohmann::json calibration_to_json(const CalibrationFit& fit,
                                          const nlohmann::json& inputs,
                                          std::uint64_t master_seed,
                                          const std::string& timestamp) {
  nlohmann::json j;
  j["schema"] = "twinbeam.calibration";
  j["schema_version"] = kCalibrationSchemaVersion;
  j["slope"] = fit.slope;
  j["intercept"] = fit.intercept;
  j["r_squared"] = fit.r_squared;
  j["slope_stderr"] = fit.slope_stderr;
  j["intercept_stderr"] = fit.intercept_stderr;
  j["dof"] = fit.dof;
  j["power_unit"] = fit.power_unit;
  j["variance_unit"] = "V^2";
  j["points"] = nlohmann::json::array();
  for (const auto& p : fit.points)
    j["points"].push_back({{"power", p.power}, {"variance", p.variance}, {"n_pulses", p.n_pulses}});
  j["inputs"] = inputs;
  j["master_seed"] = master_seed;
  j["timestamp"] = timestamp;
  return j;
}

inline CalibrationFit calibration_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<std::string>() != "twinbeam.calibration")
      throw IoError("calibration record: wrong schema");
    if (j.at("schema_version").get<int>() != kCalibrationSchemaVersion)
      throw IoError("calibration record: unsupported schema_version");
    CalibrationFit fit;
    fit.slope = j.at("slope").get<double>();
    fit.intercept = j.at("intercept").get<double>();
    fit.r_squared = j.at("r_squared").get<double>();
    fit.slope_stderr = j.at("slope_stderr").get<double>();
    fit.intercept_stderr = j.at("intercept_stderr").get<double>();
    fit.dof = j.at("dof").get<std::size_t>();
    fit.power_unit = j.at("power_unit").get<std::string>();
    for (const auto& p : j.at("points"))
      fit.points.push_back({p.at("power").get<double>(), p.at("variance").get<double>(),
                            p.at("n_pulses").get<std::size_t>()});
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("calibration record: ") + e.what());
  }
}

inline CalibrationFit read_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("calibration file not found: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("calibration file " + path.string() + " is not valid JSON: " + e.what());
  }
  return calibration_from_json(j);
}

}  // namespace twinbeam
