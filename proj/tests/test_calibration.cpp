#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "twinbeam/calibration.hpp"
#include "twinbeam/runner.hpp"

namespace tb = twinbeam;

namespace {

std::vector<tb::CalibrationPoint> line_points(double slope, double intercept,
                                              std::initializer_list<double> xs) {
  std::vector<tb::CalibrationPoint> pts;
  for (double x : xs) pts.push_back({x, slope * x + intercept, 100});
  return pts;
}

double kappa_area_sq(const tb::DetectorModel& m, const tb::DetectionChain& d) {
  const double ka = d.volts_per_photon_kappa * tb::response_kernel(m).area();
  return ka * ka;
}

// Operating detected photons per diode at g = 64 with the default scenario.
double operating_power() { return tb::operating_power_per_pd(tb::ScenarioConfig{}); }

std::vector<double> default_grid() {
  std::vector<double> p;
  for (double f : tb::ScenarioConfig{}.calibration.power_fractions) p.push_back(f * operating_power());
  return p;
}

}  // namespace

TEST(FitLine, RecoversExactLines) {
  const auto a = tb::fit_line(line_points(1.0, 0.0, {0, 1, 2, 3, 4}));
  EXPECT_NEAR(a.slope, 1.0, 1e-15);
  EXPECT_NEAR(a.intercept, 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(a.r_squared, 1.0);
  EXPECT_EQ(a.dof, 3u);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double s = u(rng), c = u(rng);
    const auto f = tb::fit_line(line_points(s, c, {0.5, 1.0, 2.5, 7.0}));
    EXPECT_NEAR(f.slope, s, 1e-12);
    EXPECT_NEAR(f.intercept, c, 1e-12);
  }
}

TEST(FitLine, DegenerateInputs) {
  EXPECT_THROW(tb::fit_line(line_points(1.0, 0.0, {2, 2, 2})), tb::PreconditionError);
  EXPECT_THROW(tb::fit_line(line_points(1.0, 0.0, {2})), tb::PreconditionError);
  const double same[] = {1.0, 1.0, 1.0};
  EXPECT_THROW(tb::run_snl_calibration(same, 2, {}, 1), tb::PreconditionError);
  const double two[] = {1.0, 2.0, 1.0};
  EXPECT_THROW(tb::run_snl_calibration(two, 2, {}, 1), tb::PreconditionError);
  const double neg[] = {-1.0, 1.0, 2.0};
  EXPECT_THROW(tb::run_snl_calibration(neg, 2, {}, 1), tb::ParameterError);
}

TEST(FitLine, InterceptIntervalUsesStudentT) {
  auto pts = line_points(2.0, 1.0, {0, 1, 2, 3, 4, 5});
  pts[1].variance += 0.3;
  pts[4].variance -= 0.2;
  const auto f = tb::fit_line(pts);
  ASSERT_EQ(f.dof, 4u);
  const auto [lo, hi] = f.intercept_interval();
  // t quantile for 4 degrees of freedom at 97.5%.
  EXPECT_NEAR((hi - lo) / (2.0 * f.intercept_stderr), 2.7764451051977987, 1e-9);
  EXPECT_NEAR(0.5 * (hi + lo), f.intercept, 1e-12);
}

TEST(SnlAtPower, Arithmetic) {
  const auto f = tb::fit_line(line_points(2.0, 1.0, {0, 1, 2}));
  EXPECT_NEAR(tb::snl_at_power(f, 3.0).variance, 7.0, 1e-12);
  EXPECT_NEAR(tb::snl_at_power(f, 0.0).variance, 1.0, 1e-12);
  EXPECT_FALSE(tb::snl_at_power(f, 4.0).extrapolated);
  EXPECT_TRUE(tb::snl_at_power(f, 4.5).extrapolated);
  EXPECT_THROW(tb::snl_at_power(f, -1.0), tb::ParameterError);
}

TEST(SnlCalibration, IdealShotNoiseSlopeAndZeroIntercept) {
  tb::CalibrationSimConfig cfg;
  cfg.detector.electronic_noise_rms_v = 0.0;
  cfg.detector.cmrr_db = std::numeric_limits<double>::infinity();
  const auto powers = default_grid();
  const auto fit = tb::run_snl_calibration(powers, 40, cfg, 2);
  // Abscissa is P(1 + r^2) = 2P, so the per-photon slope is kappa^2 area^2
  // (twice that per unit of single-diode power).
  const double expect = kappa_area_sq(cfg.detector, cfg.detection);
  EXPECT_NEAR(fit.slope / expect, 1.0, 0.03);
  // ADC rounding alone gives 100 * lsb^2 / 12 ~ 8e-9 V^2.
  EXPECT_LT(std::abs(fit.intercept), 3.0 * fit.intercept_stderr + 1e-8);
  EXPECT_GT(fit.r_squared, 0.99);
}

TEST(SnlCalibration, InterceptMatchesElectronicNoise) {
  tb::CalibrationSimConfig cfg;  // electronic noise at the calibrated 3.86e-4 V^2
  const auto fit = tb::run_snl_calibration(default_grid(), 60, cfg, 3);
  const auto [lo, hi] = fit.intercept_interval();
  EXPECT_LE(lo, 3.86e-4);
  EXPECT_GE(hi, 3.86e-4);
  EXPECT_TRUE(fit.physical());
}

TEST(SnlCalibration, CommonModeLeakageOfClassicalNoise) {
  // Common random numbers: the three sweeps share every draw, so the slope
  // differences come from the leaked classical term only.
  tb::CalibrationSimConfig ideal;
  ideal.classical_noise_frac = 0.1;
  ideal.detector.cmrr_db = std::numeric_limits<double>::infinity();
  auto at50 = ideal;
  at50.detector.cmrr_db = 50.0;
  auto at80 = ideal;
  at80.detector.cmrr_db = 80.0;
  const auto grid = default_grid();
  const double s_inf = tb::run_snl_calibration(grid, 20, ideal, 6).slope;
  const double s50 = tb::run_snl_calibration(grid, 20, at50, 6).slope;
  const double s80 = tb::run_snl_calibration(grid, 20, at80, 6).slope;

  EXPECT_LT(std::abs(s80 / s_inf - 1.0), 0.01);

  // At 50 dB the leaked term (leak * 0.1 * P)^2 is quadratic in P. An OLS line
  // through x^2 on an even grid from 0 to X has slope X, so over x = 2P up to
  // 4 P_op the relative slope shift is (leak * 0.1)^2 * P_op, about 0.66.
  const double leak = tb::common_mode_leakage(50.0);
  const double predicted = leak * leak * 0.01 * operating_power();
  EXPECT_GT(predicted, 0.5);
  EXPECT_NEAR((s50 / s_inf - 1.0) / predicted, 1.0, 0.1);
}

TEST(SnlCalibration, InterpolationMatchesDirectSimulation) {
  tb::ScenarioConfig c;
  c.calibration.records_per_power = 60;
  c.workers = 1;
  const auto fit = tb::simulate_calibration(c);
  // 55 uW on each diode.
  const double per_pd = tb::photons_per_pulse(55e-6, c.source.wavelength_m, 50e6);
  const auto d = c.detection_at_gain(c.source.gain_g);
  const auto direct = tb::simulate_snl_records(per_pd, 0.0, d, c.detector_model(), 250, 60,
                                               c.daq.peak_search, 1, 12345);
  const double x = tb::calibration_shot_photons(per_pd, d.gain_ratio_r);
  const auto snl = tb::snl_at_power(fit, x);
  EXPECT_FALSE(snl.extrapolated);
  EXPECT_NEAR(snl.variance / direct.pooled(), 1.0, 0.05);
}

TEST(CalibrationRecord, JsonRoundTripAndErrors) {
  const auto fit = tb::fit_line(line_points(2.0, 1.0, {0, 1, 2, 3}));
  const auto j = tb::calibration_to_json(fit, {{"note", "x"}}, 7, "2020-01-01T00:00:00Z");
  const auto back = tb::calibration_from_json(j);
  EXPECT_EQ(back.slope, fit.slope);
  EXPECT_EQ(back.intercept, fit.intercept);
  EXPECT_EQ(back.dof, fit.dof);
  ASSERT_EQ(back.points.size(), 4u);
  EXPECT_EQ(back.points[3].variance, 7.0);

  auto bad = j;
  bad["schema"] = "other";
  EXPECT_THROW(tb::calibration_from_json(bad), tb::IoError);
  bad = j;
  bad["schema_version"] = 2;
  EXPECT_THROW(tb::calibration_from_json(bad), tb::IoError);
  bad = j;
  bad.erase("slope");
  EXPECT_THROW(tb::calibration_from_json(bad), tb::IoError);

  const auto dir = std::filesystem::temp_directory_path();
  EXPECT_THROW(tb::read_calibration(dir / "twinbeam_missing_cal.json"), tb::IoError);
  const auto garbage = dir / "twinbeam_garbage_cal.json";
  std::ofstream(garbage) << "{ not json";
  EXPECT_THROW(tb::read_calibration(garbage), tb::IoError);
  std::filesystem::remove(garbage);
}
