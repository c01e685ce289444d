// twinbeam: command-line front end for the simulated twin-beam experiment.
//
// Exit codes: 0 success, 1 internal error, 2 configuration or parameter
// error, 3 precondition failure (fit, calibration, degenerate input),
// 4 I/O failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "twinbeam/twinbeam.hpp"

namespace tb = twinbeam;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPrecondition = 3;
constexpr int kExitIo = 4;

int exit_code_for(tb::ErrorKind k) {
  switch (k) {
    case tb::ErrorKind::parameter:
    case tb::ErrorKind::configuration:
      return kExitConfig;
    case tb::ErrorKind::precondition:
    case tb::ErrorKind::degenerate_input:
      return kExitPrecondition;
    case tb::ErrorKind::io:
      return kExitIo;
    case tb::ErrorKind::internal:
      break;
  }
  return kExitInternal;
}

struct GlobalOptions {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  bool quiet = false;
};

tb::ScenarioConfig resolve_config(const GlobalOptions& g) {
  std::string path = g.config;
  if (path.empty())
    if (const char* env = std::getenv("TWINBEAM_CONFIG")) path = env;
  std::vector<std::string> sets = g.sets;
  if (g.out) sets.push_back("output_dir=\"" + *g.out + "\"");
  if (g.seed) sets.push_back("master_seed=" + std::to_string(*g.seed));
  if (g.workers) sets.push_back("workers=" + std::to_string(*g.workers));
  return tb::load_scenario(path, sets);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pulsed twin-beam squeezing: simulation, calibration and analysis"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("-c,--config", g.config,
                 "Scenario JSON file (default: $TWINBEAM_CONFIG, else built-in defaults)");
  app.add_option("-s,--set", g.sets, "Override a config key, e.g. --set sweep.gains=[20,40]")
      ->take_all();
  app.add_option("-o,--out", g.out, "Output directory (overrides output_dir)");
  app.add_option("--seed", g.seed, "Master seed (overrides master_seed)");
  app.add_option("-j,--workers", g.workers, "Worker threads, 0 = all cores");
  app.add_flag("-q,--quiet", g.quiet, "No progress messages");

  auto* calibrate = app.add_subcommand("calibrate", "Shot-noise calibration sweep and linear fit");

  std::string calibration_file;
  auto* measure = app.add_subcommand("measure", "Time-domain R_t over the configured gain sweep");
  measure->add_option("--calibration", calibration_file, "Calibration record from 'calibrate'")
      ->required();

  auto* predict = app.add_subcommand("predict", "Analytic R and optimal-r tables");

  std::string kind = "twin";
  std::size_t count = 10;
  auto* simulate = app.add_subcommand("simulate-traces", "Write TBT1 trace files");
  simulate->add_option("--kind", kind, "twin, snl or electronic")
      ->check(CLI::IsMember({"twin", "snl", "electronic"}));
  simulate->add_option("--count", count, "Number of records");

  tb::AnalyzeOptions analyze_opt;
  std::vector<std::string> inputs;
  std::string analyze_cal;
  std::optional<double> shot_photons, en_variance;
  auto* analyze = app.add_subcommand("analyze", "Analyze TBT1 trace files or directories");
  analyze->add_option("inputs", inputs, "Trace files or directories")->required();
  analyze->add_option("--calibration", analyze_cal, "Calibration record for R_t");
  analyze->add_option("--shot-noise-photons", shot_photons,
                      "Detected P_s + r^2 P_i per pulse for the SNL lookup");
  analyze->add_option("--en-variance", en_variance, "Electronic-noise variance sigma^2_EN (V^2)");
  analyze->add_option("--eta-bar", analyze_opt.eta_bar, "Mean efficiency for loss correction");
  analyze->add_option("--max-shift", analyze_opt.max_shift, "Largest N for C_Id(N)");

  std::string figure;
  auto* reproduce = app.add_subcommand("reproduce-figure", "Write the data behind one figure");
  reproduce->add_option("figure", figure, "fig2b, fig2c, fig2d, fig3a, fig3c or fig4")->required();

  auto* show = app.add_subcommand("show-config", "Print the resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    const tb::RunContext ctx(resolve_config(g), g.quiet ? nullptr : &std::cerr);
    if (*show) {
      std::cout << tb::to_json(ctx.config).dump(2) << "\nconfig_hash " << ctx.hash << '\n';
    } else if (*calibrate) {
      const auto fit = tb::cmd_calibrate(ctx);
      if (!fit.physical()) ctx.note("warning: fit is unphysical (slope <= 0 or intercept < 0)");
    } else if (*measure) {
      tb::cmd_measure(ctx, calibration_file);
    } else if (*predict) {
      tb::cmd_predict(ctx);
    } else if (*simulate) {
      const auto files = tb::cmd_simulate_traces(ctx, tb::parse_trace_kind(kind), count);
      ctx.note("wrote " + std::to_string(files.size()) + " traces");
    } else if (*analyze) {
      for (const auto& s : inputs) analyze_opt.inputs.emplace_back(s);
      if (!analyze_cal.empty()) analyze_opt.calibration = analyze_cal;
      analyze_opt.shot_noise_photons = shot_photons;
      analyze_opt.electronic_variance = en_variance;
      const auto s = tb::cmd_analyze(ctx, analyze_opt);
      std::cout << "pulses " << s.n_pulses << ", pooled variance "
                << tb::CsvCell(s.pooled_variance).text << " V^2\n";
      if (s.squeezing && s.squeezing->rt_db)
        std::cout << "R_t " << tb::CsvCell(*s.squeezing->rt_db).text << " dB\n";
    } else if (*reproduce) {
      const auto dir = tb::cmd_reproduce_figure(ctx, figure);
      ctx.note("wrote " + dir.string());
    }
    return 0;
  } catch (const tb::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}
