// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are fixed here and nowhere else.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "twinbeam/twinbeam.hpp"

using namespace twinbeam;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Electronic-noise-subtracted ratio arithmetic.
Outcome criterion1() {
  const auto r = compute_Rt(4.80e-4, 6.11e-4, 3.86e-4);
  const double db = r.rt_db.value_or(0.0);
  return {r.rt_db && std::abs(db - (-3.79)) <= 0.02, fmt("R_t = %.4f dB (target -3.79 +- 0.02)", db)};
}

// 2. Loss correction of the two reference values.
Outcome criterion2() {
  const auto a = loss_correct(from_db(-3.8), 0.69);
  const auto b = loss_correct(from_db(-7.2), 0.90);
  const bool ok = a.db && b.db && std::abs(*a.db - (-8.1)) <= 0.1 && std::abs(*b.db - (-10.1)) <= 0.3;
  return {ok, fmt("-3.8 dB @0.69 -> %.3f dB, -7.2 dB @0.90 -> %.3f dB", a.db.value_or(0.0),
                  b.db.value_or(0.0))};
}

// 3. Lossless symmetric identity.
Outcome criterion3() {
  double worst = 0.0;
  double db64 = 0.0;
  for (double g : {2.0, 10.0, 64.0}) {
    FopaParams p;
    p.gain_g = g;
    DetectionChain d;
    d.eta_s = d.eta_i = 1.0;
    const double R = predict_R(p, d);
    const double expect = 1.0 / (2.0 * g - 1.0);
    worst = std::max(worst, std::abs(R - expect) / expect);
    if (g == 64.0) db64 = to_db(R);
  }
  return {worst <= 1e-12, fmt("max relative error %.2e, g=64 -> %.2f dB", worst, db64)};
}

// 4. Monte-Carlo pulse pairs against the analytic ratio, 3 standard errors.
Outcome criterion4() {
  constexpr std::size_t kPairs = 1'000'000;
  constexpr std::size_t kBatches = 100;
  std::size_t points = 0, bad = 0;
  double worst_z = 0.0;
  std::uint64_t index = 0;
  for (double g : {2.0, 20.0, 64.0}) {
    for (double eta : {0.7, 0.9, 1.0}) {
      FopaParams p;
      p.gain_g = g;
      DetectionChain d;
      d.eta_s = d.eta_i = eta;
      const auto stats = detected_stats(p, d);
      for (double r : {1.0, optimal_r(stats).r_opt}) {
        d.gain_ratio_r = r;
        const auto pairs = sample_pulse_pairs(p, d, kPairs, derive_seed(4, 0, index++));
        // Batch means give the standard error without assuming Gaussian moments.
        const std::size_t per = kPairs / kBatches;
        std::vector<double> ratios;
        double sum_ratio = 0.0;
        for (std::size_t b = 0; b < kBatches; ++b) {
          double ms = 0, mi = 0, md = 0, mdd = 0;
          for (std::size_t n = b * per; n < (b + 1) * per; ++n) {
            const double x = pairs.i_s[n] - r * pairs.i_i[n];
            ms += pairs.i_s[n];
            mi += pairs.i_i[n];
            md += x;
            mdd += x * x;
          }
          const double k = static_cast<double>(per);
          ms /= k;
          mi /= k;
          md /= k;
          const double var = (mdd - k * md * md) / (k - 1.0);
          ratios.push_back(var / (ms + r * r * mi));
          sum_ratio += ratios.back();
        }
        const double mean = sum_ratio / kBatches;
        double ss = 0.0;
        for (double x : ratios) ss += (x - mean) * (x - mean);
        const double se = std::sqrt(ss / (kBatches - 1.0) / kBatches);
        const double z = std::abs(mean - predict_R(stats, r)) / se;
        worst_z = std::max(worst_z, z);
        ++points;
        if (z > 3.0 || pairs.clamped > 0) ++bad;
      }
    }
  }
  return {bad == 0, fmt("%zu grid points, %zu beyond 3 SE, worst |z| = %.2f", points, bad, worst_z)};
}

// 5. Full trace pipeline at the operating point, shot-noise seed and fitted xi.
Outcome criterion5() {
  ScenarioConfig c;
  c.validate();
  const std::size_t records = 1000;
  const CalibrationFit fit = simulate_calibration(c);
  const double var_en = measure_electronic_variance(c, records);
  const auto d = c.detection_at_gain(64.0);

  const auto ideal = measure_at_gain(c, 64.0, fit, var_en, records,
                                     derive_seed(c.master_seed, SeedStream::measurement, 0));
  // xi is fitted through the detector model, common-mode leakage included.
  const double xi = fit_excess_noise(c, 64.0, from_db(-3.8));
  const double xi_source = solve_excess_noise_for_R(c.fopa(), d, from_db(-3.8));
  ScenarioConfig noisy = c;
  noisy.source.seed_excess_noise_xi = xi;
  const auto fitted = measure_at_gain(noisy, 64.0, fit, var_en, records,
                                      derive_seed(c.master_seed, SeedStream::measurement, 1));
  const double a = ideal.result.rt_db.value_or(std::nan(""));
  const double b = fitted.result.rt_db.value_or(std::nan(""));
  const double pa = to_db(ideal.predicted_R);
  const bool ok = std::abs(a - pa) <= 0.3 && std::abs(b - (-3.8)) <= 0.3 &&
                  ideal.set.n_pulses == records * 248;
  return {ok, fmt("eta_s=%.4f eta_i=%.2f; xi=1: %.3f dB (analytic %.3f); fitted xi=%.2f: %.3f dB "
                  "(target -3.8; source-only fit would give xi=%.2f); %zu pulses each",
                  d.eta_s, d.eta_i, a, pa, xi, b, xi_source, ideal.set.n_pulses)};
}

// 6. Pulse-to-pulse correlation of independent pairs through the detector.
Outcome criterion6() {
  ScenarioConfig c;
  DetectorModel m = c.detector_model();
  m.electronic_noise_rms_v = 0.0;
  const FopaParams p = c.fopa();
  const DetectionChain d = c.detection_at_gain(64.0);
  const std::size_t records = 1008;  // x 248 interior pulses ~ 250k
  const auto set = simulate_twin_beam_records(p, d, m, 250, records, c.daq.peak_search,
                                              c.worker_count(), derive_seed(6, 0, 0));
  const auto prof = mean_correlation_profile(set.records, 10);
  double worst = 0.0;
  for (std::size_t n = 1; n <= 10; ++n) worst = std::max(worst, std::abs(prof[n]));
  const bool ok = prof[0] == 1.0 && worst < 0.01;
  return {ok, fmt("%zu pulses, C(0) = %.17g, max |C(1..10)| = %.4f", set.n_pulses, prof[0], worst)};
}

// 7. PSD roll-off and the repetition-rate line.
Outcome criterion7() {
  ScenarioConfig c;
  const DetectorModel m = c.detector_model();
  const DetectionChain d = c.detection_at_gain(64.0);
  const std::size_t n = 200;
  const auto psd_at = [&](double power, double cmrr, std::uint64_t seed) {
    DetectorModel mm = m;
    mm.cmrr_db = cmrr;
    const CalibrationLight light{power, 0.0};
    return simulate_psd(n, c.worker_count(), [&](std::size_t j) {
      return synthesize_snl_calibration_pair(light, mm, d, 250,
                                             derive_seed(seed, SeedStream::calibration_trace, j));
    });
  };
  const double op = operating_power_per_pd(c);
  const double inf = std::numeric_limits<double>::infinity();
  const auto dark = psd_at(0.0, inf, 71);
  auto shot = psd_at(op, inf, 72);
  const auto leaky = psd_at(op, 50.0, 73);
  const double line_off = detail::line_excess_db(shot, 50e6);
  const double line_on = detail::line_excess_db(leaky, 50e6);
  for (std::size_t k = 0; k < shot.psd.size(); ++k) shot.psd[k] -= dark.psd[k];
  const double f3 = psd_3db_frequency(shot, 0.2e6, 10e6);
  const bool ok = std::abs(f3 / 80e6 - 1.0) <= 0.05 && line_on >= 10.0 && line_off < 3.0;
  return {ok, fmt("f_3dB = %.2f MHz (80 +- 4); 50 MHz line %.1f dB over floor at 50 dB CMRR, "
                  "%.1f dB with ideal rejection",
                  f3 / 1e6, line_on, line_off)};
}

// 8. Calibration linearity and the electronic-noise intercept.
Outcome criterion8() {
  const ScenarioConfig c;
  const CalibrationFit fit = simulate_calibration(c);
  const auto [lo, hi] = fit.intercept_interval(0.95);
  const double en = expected_electronic_window_variance(c.detector_model());
  const bool ok = fit.r_squared > 0.99 && lo <= en && en <= hi;
  return {ok, fmt("r^2 = %.5f; intercept %.4e, 95%% CI [%.4e, %.4e], configured %.4e V^2",
                  fit.r_squared, fit.intercept, lo, hi, en)};
}

// 9. Optimized gain ratio never loses to r = 1.
Outcome criterion9() {
  std::size_t points = 0, bad = 0;
  for (double g : prediction_gains()) {
    for (double es : {0.5, 0.7, 0.9, 1.0}) {
      for (double ei : {0.5, 0.7, 0.9, 1.0}) {
        for (double xi : {1.0, 5.0}) {
          FopaParams p;
          p.gain_g = g;
          p.seed_excess_noise_xi = xi;
          DetectionChain d;
          d.eta_s = es;
          d.eta_i = ei;
          const double r1 = predict_R(p, d);
          const auto opt = optimal_r(p, es, ei);
          ++points;
          if (opt.r_min > r1 * (1.0 + 1e-12)) ++bad;
        }
      }
    }
  }
  FopaParams p;
  p.gain_g = 100.0;
  const double best = to_db(optimal_r(p, 0.90, 0.90).r_min);
  return {bad == 0 && best <= -9.8,
          fmt("%zu grid points, %zu with R(r_opt) > R(1); g=100, eta=0.90: %.3f dB", points, bad,
              best)};
}

std::vector<fs::path> csv_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".csv")
      out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 10. Same master seed, same bytes.
Outcome criterion10() {
  const auto base = fs::temp_directory_path() / "twinbeam_acceptance_determinism";
  fs::remove_all(base);
  const auto run = [&](const std::string& name, unsigned workers) {
    ScenarioConfig c;
    c.calibration.records_per_power = 10;
    c.sweep.records_per_gain = 10;
    c.sweep.gains = {20.0, 64.0};
    c.daq.records_per_run = 10;
    c.workers = workers;
    c.output_dir = (base / name).string();
    const RunContext ctx(c);
    cmd_calibrate(ctx);
    cmd_measure(ctx, base / name / "calibration.json");
    cmd_predict(ctx);
    cmd_reproduce_figure(ctx, "fig2c");
    cmd_reproduce_figure(ctx, "fig3a");
    return base / name;
  };
  const auto a = run("a", 1);
  const auto b = run("b", 0);
  const auto fa = csv_files(a);
  const auto fb = csv_files(b);
  std::size_t differing = 0;
  for (const auto& f : fa)
    if (!fs::exists(b / f) || slurp(a / f) != slurp(b / f)) ++differing;
  const bool ok = !fa.empty() && fa == fb && differing == 0;
  fs::remove_all(base);
  return {ok, fmt("%zu CSV files compared across two runs (1 worker vs all cores), %zu differ",
                  fa.size(), differing)};
}

}  // namespace

int main() {
  const std::vector<std::function<Outcome()>> criteria{
      criterion1, criterion2, criterion3, criterion4, criterion5,
      criterion6, criterion7, criterion8, criterion9, criterion10};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("ACCEPTANCE %zu: %s  %s  [%.1f s]\n", i + 1, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
