#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "nvmag/commands.hpp"
#include "nvmag/io.hpp"

using namespace nvmag;

namespace {

void add_common(CLI::App* app, CommandOptions& o, std::string& out_dir) {
  app->add_option("--config", o.config, "Configuration file (JSON or key = value lines)")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Master random seed");
  app->add_option("--out", out_dir, std::string("Output directory (default: $") + kOutDirEnv + " or .)");
  app->add_option("--threads", o.threads, "Worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
}

void add_preset(CLI::App* app, CommandOptions& o) {
  static const std::map<std::string, Scenario> presets{{"bulk", Scenario::kBulk},
                                                       {"nanodiamond", Scenario::kNanodiamond}};
  app->add_option("--preset", o.preset, "Scenario preset")->transform(CLI::CheckedTransformer(presets, CLI::ignore_case));
}

void add_noise_mode(CLI::App* app, CommandOptions& o) {
  static const std::map<std::string, NoiseMode> modes{{"frequency", NoiseMode::kFrequency},
                                                      {"amplitude", NoiseMode::kAmplitude}};
  app->add_option("--noise-mode", o.noise_mode, "Noise model")->transform(CLI::CheckedTransformer(modes, CLI::ignore_case));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NV-center vector magnetometry pipeline: simulate, fit, reconstruct, calibrate, sweep"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  CommandOptions o;
  std::string out_dir;

  auto* sim = app.add_subcommand("simulate", "Synthesize ODMR spectra, one CSV per bias field");
  add_common(sim, o, out_dir);
  add_preset(sim, o);
  add_noise_mode(sim, o);
  sim->add_option("--noise", o.noise, "Noise level: MHz (frequency) or contrast units (amplitude)");
  sim->add_flag("--hyperfine", o.hyperfine, "Split every line into a 3.03 MHz hyperfine pair");

  auto* fit = app.add_subcommand("fit", "Fit spectra and emit a splitting table");
  add_common(fit, o, out_dir);
  fit->add_option("inputs", o.inputs, "Spectrum CSV files or directories")->required();
  fit->add_option("--peaks", o.expected_peaks, "Expected number of dips (default 8, or 16 with --merge-hyperfine)");
  fit->add_flag("--merge-hyperfine", o.merge_hyperfine, "Merge hyperfine pairs before pairing lines");
  fit->add_option("--format", o.format, "Table format")->check(CLI::IsMember({"json", "csv"}));

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct the NV axes and B_loc");
  add_common(rec, o, out_dir);
  rec->add_option("--table", o.table, "Splitting table JSON")->required()->check(CLI::ExistingFile);
  rec->add_option("--bias", o.bias, "Bias fields JSON")->required()->check(CLI::ExistingFile);
  rec->add_flag("--svg", o.svg, "Also write an SVG scatter of the solution clusters");

  auto* cal = app.add_subcommand("calibrate", "Fit a linear coil model together with the axes and B_loc");
  add_common(cal, o, out_dir);
  cal->add_option("--table", o.table, "Splitting table JSON")->required()->check(CLI::ExistingFile);
  cal->add_option("--bias", o.bias, "Coil currents JSON")->required()->check(CLI::ExistingFile);
  cal->add_flag("--svg", o.svg, "Also write an SVG scatter of the solution clusters");

  auto* sweep = app.add_subcommand("sweep", "Monte-Carlo accuracy sweep");
  add_common(sweep, o, out_dir);
  add_preset(sweep, o);
  add_noise_mode(sweep, o);
  static const std::map<std::string, SweepKind> kinds{
      {"noise", SweepKind::kNoise}, {"scaling", SweepKind::kScaling}, {"saturation", SweepKind::kSaturation}};
  sweep->add_option("--kind", o.sweep_kind, "Sweep kind")->transform(CLI::CheckedTransformer(kinds, CLI::ignore_case));
  sweep->add_option("--trials", o.trials, "Trials per cell")->check(CLI::PositiveNumber);

  auto* deg = app.add_subcommand("degeneracy", "Geometry of 1-4 bias-field constraints");
  add_common(deg, o, out_dir);
  add_preset(deg, o);
  deg->add_option("--n", o.n_fields, "Number of bias fields (1-4)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  o.out_dir = out_dir.empty() ? default_out_dir() : std::filesystem::path(out_dir);
  if (*sim) return cmd_simulate(o, std::cout, std::cerr);
  if (*fit) return cmd_fit(o, std::cout, std::cerr);
  if (*rec) return cmd_reconstruct(o, std::cout, std::cerr);
  if (*cal) return cmd_calibrate(o, std::cout, std::cerr);
  if (*sweep) return cmd_sweep(o, std::cout, std::cerr);
  if (*deg) return cmd_degeneracy(o, std::cout, std::cerr);
  return kExitOther;
}
