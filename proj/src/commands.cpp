#include "nvmag/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>

#include "nvmag/io.hpp"
#include "nvmag/reconstruction.hpp"
#include "nvmag/svg.hpp"

namespace nvmag {

namespace fs = std::filesystem;

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

std::string label(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Runs a command body and maps failures to exit codes.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitOther;
  }
}

class Run {
 public:
  Run(std::string command, const CommandOptions& opts) : opts_(opts), start_(std::chrono::steady_clock::now()) {
    manifest_.command = std::move(command);
  }

  RunManifest& manifest() { return manifest_; }

  fs::path write(const std::string& name, const std::string& content) {
    const fs::path p = opts_.out_dir / name;
    write_file_atomic(p, content);
    manifest_.outputs.push_back(p.string());
    return p;
  }

  void finish() {
    manifest_.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_file_atomic(opts_.out_dir / (manifest_.command + "_manifest.json"), dump_json(to_json(manifest_)));
  }

 private:
  const CommandOptions& opts_;
  RunManifest manifest_;
  std::chrono::steady_clock::time_point start_;
};

GroundTruth preset_truth(Scenario s) {
  return s == Scenario::kNanodiamond ? nanodiamond_ground_truth() : bulk_ground_truth();
}

std::vector<FieldVector> preset_pool(Scenario s) {
  return s == Scenario::kNanodiamond ? nanodiamond_pool() : bulk_pool();
}

double preset_linewidth(Scenario s) {
  return s == Scenario::kNanodiamond ? kNanodiamondLinewidthMhz : kBulkLinewidthMhz;
}

AxesSet axes_from_config(const Json& j, const AxesSet& fallback) {
  if (j.contains("axes")) return axes_from_json(j["axes"]);
  if (j.contains("orientation")) return axes_from_params(orientation_from_json(j["orientation"]));
  return fallback;
}

std::vector<fs::path> expand_inputs(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(in);
    }
  }
  return files;
}

void print_clusters(std::ostream& out, const ReconstructionResult& r) {
  out << std::left << std::setw(4) << "#" << std::right << std::setw(14) << "cost" << std::setw(12) << "bx_uT"
      << std::setw(12) << "by_uT" << std::setw(12) << "bz_uT" << std::setw(10) << "theta1" << std::setw(10) << "phi1"
      << std::setw(10) << "alpha" << std::setw(9) << "members" << std::setw(7) << "bound" << '\n';
  for (std::size_t i = 0; i < r.clusters.size(); ++i) {
    const auto& c = r.clusters[i];
    const auto& s = c.representative;
    out << std::left << std::setw(4) << i << std::right << std::setw(14) << std::setprecision(6) << std::scientific
        << s.cost << std::fixed << std::setprecision(3) << std::setw(12) << 1e3 * s.b_loc.x() << std::setw(12)
        << 1e3 * s.b_loc.y() << std::setw(12) << 1e3 * s.b_loc.z() << std::setprecision(4) << std::setw(10)
        << s.params.theta1 << std::setw(10) << s.params.phi1 << std::setw(10) << s.params.alpha << std::setw(9)
        << c.members << std::setw(7) << (c.at_bound ? "yes" : "no") << '\n';
  }
  out << std::defaultfloat << std::setprecision(6);
  out << "tied clusters: " << r.tied_clusters << (r.underdetermined ? " (underdetermined: fewer than 3 fields)" : "")
      << ", converged fraction: " << r.converged_fraction << '\n';
}

ReconstructionConfig reconstruction_config(const CommandOptions& opts, RunManifest& manifest) {
  ReconstructionConfig rc;
  if (opts.config) {
    Json j = load_config_file(*opts.config);
    manifest.add_input(*opts.config);
    if (j.contains("reconstruction")) j = j["reconstruction"];
    rc = reconstruction_config_from_json(j, rc);
  }
  if (opts.seed) rc.rng_seed = *opts.seed;
  rc.threads = opts.threads;
  rc.validate();
  manifest.config = to_json(rc);
  manifest.seed = rc.rng_seed;
  return rc;
}

struct LoadedProblem {
  SplittingTable table;
  BiasInput bias;
};

LoadedProblem load_problem(const CommandOptions& opts, RunManifest& manifest) {
  if (!opts.table) fail(ErrorKind::kInvalidInput, "--table is required");
  if (!opts.bias) fail(ErrorKind::kInvalidInput, "--bias is required");
  LoadedProblem p;
  p.table = splitting_table_from_json(load_json_file(*opts.table));
  manifest.add_input(*opts.table);
  p.bias = bias_input_from_json(load_json_file(*opts.bias));
  manifest.add_input(*opts.bias);
  const auto n = static_cast<Eigen::Index>(p.bias.has_currents() ? p.bias.currents.size() : p.bias.fields.size());
  if (n != p.table.rows()) {
    fail(ErrorKind::kInvalidInput, "splitting table has " + std::to_string(p.table.rows()) + " rows but " +
                                       std::to_string(n) + " bias entries were given");
  }
  return p;
}

std::string result_svg(const ReconstructionResult& r, const std::string& title) {
  std::vector<FieldVector> pts;
  for (const auto& c : r.clusters) pts.push_back(c.representative.b_loc);
  return scatter_svg(pts, title, &r.best.b_loc);
}

Eigen::MatrixXd grid_values(const SweepResult& r, const std::vector<double>& rows, const std::vector<double>& cols,
                            const std::function<double(const CellKey&, bool)>& coord,
                            const std::function<double(const CellStats&)>& value) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(rows.size()),
                                                static_cast<Eigen::Index>(cols.size()),
                                                std::numeric_limits<double>::quiet_NaN());
  for (const auto& cell : r.cells) {
    const auto ri = std::find(rows.begin(), rows.end(), coord(cell.key, true)) - rows.begin();
    const auto ci = std::find(cols.begin(), cols.end(), coord(cell.key, false)) - cols.begin();
    if (ri < static_cast<long>(rows.size()) && ci < static_cast<long>(cols.size())) m(ri, ci) = value(cell.stats);
  }
  return m;
}

}  // namespace

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return kExitConfig;
    case ErrorKind::kFitFailure: return kExitFitFailure;
    case ErrorKind::kDegenerate: return kExitDegenerate;
    case ErrorKind::kNonConvergence: return kExitNonConvergence;
    case ErrorKind::kInconsistent:
    case ErrorKind::kIo: return kExitOther;
  }
  return kExitOther;
}

fs::path default_out_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return (env && *env) ? fs::path(env) : fs::path(".");
}

// -- simulate ---------------------------------------------------------------

int cmd_simulate(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Run run("simulate", opts);
    const Scenario scenario = opts.preset.value_or(Scenario::kBulk);
    GroundTruth truth = preset_truth(scenario);
    std::vector<FieldVector> fields = preset_pool(scenario);
    SynthesisOptions so;
    so.linewidth_fwhm = preset_linewidth(scenario);
    so.hyperfine = opts.hyperfine;
    so.noise.mode = opts.noise_mode.value_or(NoiseMode::kNone);
    so.noise.amplitude = opts.noise;
    std::uint64_t seed = opts.seed.value_or(0);

    if (opts.config) {
      const Json j = load_config_file(*opts.config);
      run.manifest().add_input(*opts.config);
      if (!j.is_object()) fail(ErrorKind::kInvalidInput, opts.config->string() + ": expected an object");
      for (auto it = j.begin(); it != j.end(); ++it) {
        static const char* known[] = {"axes",          "orientation", "b_loc_mt", "bias_fields", "linewidth_mhz",
                                      "peak_contrast", "grid",        "noise",    "hyperfine",   "seed"};
        if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
            std::end(known)) {
          fail(ErrorKind::kInvalidInput, "field '" + it.key() + "': unknown key");
        }
      }
      truth.axes = axes_from_config(j, truth.axes);
      if (j.contains("b_loc_mt")) truth.b_loc = vector_from_json(j["b_loc_mt"], "b_loc_mt");
      if (j.contains("bias_fields")) fields = bias_input_from_json(j["bias_fields"]).resolved_fields();
      if (j.contains("linewidth_mhz")) so.linewidth_fwhm = j["linewidth_mhz"].get<double>();
      if (j.contains("peak_contrast")) so.peak_contrast = j["peak_contrast"].get<double>();
      if (j.contains("grid")) {
        const Json& g = j["grid"];
        so.grid = FrequencyGrid{g.at("start_mhz").get<double>(), g.at("stop_mhz").get<double>(),
                                g.at("step_mhz").get<double>()};
      }
      if (j.contains("noise")) {
        const Json& n = j["noise"];
        if (n.contains("mode")) {
          const std::string m = n["mode"].get<std::string>();
          if (m == "frequency") so.noise.mode = NoiseMode::kFrequency;
          else if (m == "amplitude") so.noise.mode = NoiseMode::kAmplitude;
          else if (m == "none") so.noise.mode = NoiseMode::kNone;
          else fail(ErrorKind::kInvalidInput, "field 'noise.mode': unknown mode '" + m + "'");
        }
        if (n.contains("amplitude")) so.noise.amplitude = n["amplitude"].get<double>();
      }
      if (j.contains("hyperfine")) so.hyperfine = so.hyperfine || j["hyperfine"].get<bool>();
      if (j.contains("seed") && !opts.seed) seed = j["seed"].get<std::uint64_t>();
    }
    // Command-line noise settings win over the file.
    if (opts.noise_mode) so.noise.mode = *opts.noise_mode;
    if (opts.noise > 0.0) so.noise.amplitude = opts.noise;
    if (!(so.linewidth_fwhm > 0.0)) fail(ErrorKind::kInvalidInput, "field 'linewidth_mhz': must be positive");
    if (!(so.noise.amplitude >= 0.0)) fail(ErrorKind::kInvalidInput, "noise amplitude must be >= 0");
    if (fields.empty()) fail(ErrorKind::kInvalidInput, "field 'bias_fields': no bias fields");

    Json centers = Json::array();
    for (std::size_t i = 0; i < fields.size(); ++i) {
      SynthesisOptions o = so;
      o.bias_id = static_cast<int>(i);
      o.noise.seed = splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(i));
      const auto s = synthesize_with_truth(truth.axes, fields[i] + truth.b_loc, o);
      centers.push_back(s.centers);
      char name[32];
      std::snprintf(name, sizeof(name), "spectrum_%03zu.csv", i);
      run.write(name, spectrum_to_csv(s.spectrum));
    }
    run.write("bias_fields.json", dump_json(bias_fields_to_json(fields)));
    // Dip centers as synthesized (after jitter), one list per spectrum.
    run.write("truth.json", dump_json(Json{{"axes", to_json(truth.axes)},
                                           {"b_loc_mt", vector_to_json(truth.b_loc)},
                                           {"line_centers_mhz", centers}}));

    run.manifest().seed = seed;
    run.manifest().config = Json{{"scenario", to_string(scenario)},
                                 {"axes", to_json(truth.axes)},
                                 {"b_loc_mt", vector_to_json(truth.b_loc)},
                                 {"bias_fields", bias_fields_to_json(fields)},
                                 {"linewidth_mhz", so.linewidth_fwhm},
                                 {"peak_contrast", so.peak_contrast},
                                 {"hyperfine", so.hyperfine},
                                 {"noise", Json{{"mode", so.noise.mode == NoiseMode::kAmplitude   ? "amplitude"
                                                         : so.noise.mode == NoiseMode::kFrequency ? "frequency"
                                                                                                  : "none"},
                                                {"amplitude", so.noise.amplitude}}}};
    if (so.grid) {
      run.manifest().config["grid"] = Json{{"start_mhz", so.grid->start_mhz},
                                           {"stop_mhz", so.grid->stop_mhz},
                                           {"step_mhz", so.grid->step_mhz}};
    }
    run.finish();
    out << "wrote " << fields.size() << " spectra (" << (so.hyperfine ? 16 : 8) << " lines each) to "
        << opts.out_dir.string() << '\n';
    return kExitOk;
  });
}

// -- fit --------------------------------------------------------------------

int cmd_fit(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Run run("fit", opts);
    if (opts.format != "json" && opts.format != "csv") {
      fail(ErrorKind::kInvalidInput, "--format must be json or csv");
    }
    const std::vector<fs::path> files = expand_inputs(opts.inputs);
    if (files.empty()) fail(ErrorKind::kInvalidInput, "no spectrum files given");
    const int expected = opts.expected_peaks > 0 ? opts.expected_peaks : (opts.merge_hyperfine ? 16 : 8);
    const PhysicalConstants c;

    struct Item {
      fs::path path;
      int bias_id = 0;
      std::optional<OdmrSpectrum> spectrum;
      std::string error;
    };
    std::vector<Item> items;
    for (const auto& f : files) {
      Item it{f, 0, std::nullopt, ""};
      try {
        it.spectrum = spectrum_from_csv(read_file(f), f.string());
        it.bias_id = it.spectrum->meta.bias_id;
        run.manifest().add_input(f);
      } catch (const Error& e) {
        it.error = e.what();
      }
      items.push_back(std::move(it));
    }
    std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.bias_id < b.bias_id; });

    std::vector<SplittingRow> rows;
    Json report = Json::array();
    Json bias_ids = Json::array();
    int failures = 0;
    for (const auto& it : items) {
      Json entry{{"path", it.path.string()}, {"bias_id", it.bias_id}};
      if (!it.spectrum) {
        ++failures;
        entry["status"] = "error";
        entry["error"] = it.error;
        err << it.path.string() << ": " << it.error << '\n';
        report.push_back(entry);
        continue;
      }
      try {
        PeakSet peaks;
        std::string method = "lorentzian";
        try {
          peaks = fit_peaks(*it.spectrum, expected);
          entry["fitted"] = to_json(peaks);
          if (opts.merge_hyperfine) peaks = merge_hyperfine(peaks, c.hyperfine_pair_sep, 0.3, true).peaks;
        } catch (const Error& e) {
          // Overlapping hyperfine components: fit the doublets as such.
          if (!opts.merge_hyperfine || e.kind() != ErrorKind::kFitFailure || expected % 2 != 0) throw;
          peaks = fit_doublets(*it.spectrum, expected / 2, c.hyperfine_pair_sep);
          method = "doublet";
        }
        entry["method"] = method;
        const SplittingRow row = splittings_from_peaks(peaks);
        rows.push_back(row);
        bias_ids.push_back(it.bias_id);
        entry["status"] = "ok";
        entry["peaks"] = to_json(peaks);
        entry["ambiguous"] = row.ambiguous;
        if (row.ambiguous) err << it.path.string() << ": warning: line pairing is ambiguous\n";
      } catch (const Error& e) {
        ++failures;
        const std::vector<double> minima = detect_minima(*it.spectrum);
        std::ostringstream os;
        os << e.what() << " (found " << minima.size() << " minima";
        std::vector<double> sorted = minima;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t k = 0; k < sorted.size() && k < 24; ++k) os << (k == 0 ? ": " : ", ") << sorted[k];
        os << ")";
        entry["status"] = "error";
        entry["error"] = os.str();
        entry["found_minima_mhz"] = sorted;
        err << it.path.string() << ": " << os.str() << '\n';
      }
      report.push_back(entry);
    }

    run.manifest().config = Json{{"expected_peaks", expected},
                                 {"merge_hyperfine", opts.merge_hyperfine},
                                 {"format", opts.format}};
    run.write("fit_report.json", dump_json(Json{{"bias_ids", bias_ids}, {"files", report}}));
    if (!rows.empty()) {
      const SplittingTable table = make_table(rows);
      if (opts.format == "csv") {
        run.write("table.csv", splitting_table_csv(table));
      } else {
        run.write("table.json", dump_json(to_json(table)));
      }
    }
    run.finish();
    out << "fitted " << rows.size() << " of " << items.size() << " spectra\n";
    if (rows.empty()) return kExitFitFailure;
    return failures > 0 ? kExitPartial : kExitOk;
  });
}

// -- reconstruct ------------------------------------------------------------

int cmd_reconstruct(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Run run("reconstruct", opts);
    const ReconstructionConfig rc = reconstruction_config(opts, run.manifest());
    const LoadedProblem p = load_problem(opts, run.manifest());
    const ReconstructionResult r = reconstruct(p.table, p.bias.resolved_fields(), rc);
    run.write("reconstruction.json", dump_json(to_json(r)));
    if (opts.svg) run.write("reconstruction.svg", result_svg(r, "Reconstructed B_loc (cluster representatives)"));
    run.finish();
    print_clusters(out, r);
    if (r.degenerate()) {
      err << "warning: solution is not unique (" << r.tied_clusters << " tied clusters"
          << (r.underdetermined ? ", fewer than 3 bias fields" : "") << ")\n";
      return kExitDegenerate;
    }
    return kExitOk;
  });
}

int cmd_calibrate(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Run run("calibrate", opts);
    const ReconstructionConfig rc = reconstruction_config(opts, run.manifest());
    const LoadedProblem p = load_problem(opts, run.manifest());
    if (!p.bias.has_currents()) fail(ErrorKind::kInvalidInput, "calibrate needs a bias file with currents_a entries");
    const FieldVector offset = p.bias.coil ? p.bias.coil->offset : FieldVector::Zero();
    const CoilCalibration cal = calibrate_coils(p.bias.currents, p.table, rc, {}, offset);
    run.write("coil_model.json", dump_json(to_json(cal.model)));
    run.write("calibration.json",
              dump_json(Json{{"coil_model", to_json(cal.model)}, {"reconstruction", to_json(cal.reconstruction)}}));
    if (opts.svg) run.write("calibration.svg", result_svg(cal.reconstruction, "Calibrated B_loc (cluster representatives)"));
    run.finish();
    out << "coil matrix (mT/A):\n" << cal.model.m << "\n";
    print_clusters(out, cal.reconstruction);
    if (cal.reconstruction.degenerate()) {
      err << "warning: solution is not unique\n";
      return kExitDegenerate;
    }
    return kExitOk;
  });
}

// -- sweep ------------------------------------------------------------------

int cmd_sweep(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Run run("sweep", opts);
    SweepConfig cfg = SweepConfig::preset(opts.preset.value_or(Scenario::kBulk));
    SweepKind kind = opts.sweep_kind;
    if (opts.config) {
      Json j = load_config_file(*opts.config);
      run.manifest().add_input(*opts.config);
      if (j.is_object() && j.contains("kind")) {
        const std::string k = j["kind"].get<std::string>();
        if (k == "noise") kind = SweepKind::kNoise;
        else if (k == "scaling") kind = SweepKind::kScaling;
        else if (k == "saturation") kind = SweepKind::kSaturation;
        else fail(ErrorKind::kInvalidInput, "field 'kind': unknown sweep kind '" + k + "'");
        j.erase("kind");
      }
      cfg = sweep_config_from_json(j, cfg);
    }
    if (opts.seed) cfg.rng_seed = *opts.seed;
    if (opts.noise_mode) cfg.noise_mode = *opts.noise_mode;
    if (opts.trials) cfg.trials_per_cell = *opts.trials;
    cfg.threads = opts.threads;
    cfg.validate();

    SweepResult r;
    switch (kind) {
      case SweepKind::kNoise: r = run_noise_sweep(cfg); break;
      case SweepKind::kScaling: r = run_bias_scaling_sweep(cfg); break;
      case SweepKind::kSaturation: r = run_saturation_study(cfg); break;
    }
    run.write("sweep.json", dump_json(to_json(r)));
    run.write("sweep_trials.csv", sweep_trials_csv(r));

    std::vector<double> rows;
    std::vector<double> cols;
    std::string row_title = "noise";
    std::string col_title = "bias fields";
    std::function<double(const CellKey&, bool)> coord;
    if (kind == SweepKind::kScaling) {
      rows = cfg.noise_levels;
      cols = cfg.bias_scaling;
      col_title = "bias scaling";
      coord = [](const CellKey& k, bool row) { return row ? k.noise : k.scaling; };
    } else if (kind == SweepKind::kSaturation) {
      rows = {cfg.noise_levels.front()};
      for (int k : cfg.field_counts) cols.push_back(k);
      coord = [](const CellKey& k, bool row) { return row ? k.noise : static_cast<double>(k.count); };
    } else {
      rows = cfg.noise_levels;
      for (int k : cfg.field_counts) cols.push_back(k);
      coord = [](const CellKey& k, bool row) { return row ? k.noise : static_cast<double>(k.count); };
    }
    std::vector<std::string> rl;
    std::vector<std::string> cl;
    for (double v : rows) rl.push_back(label(v));
    for (double v : cols) cl.push_back(label(v));
    const std::string unit = cfg.noise_mode == NoiseMode::kAmplitude ? "noise (contrast)" : "noise (MHz)";
    row_title = unit;
    const std::string tag = to_string(kind);
    run.write("heatmap_" + tag + "_dgc.svg",
              heatmap_svg(grid_values(r, rows, cols, coord, [](const CellStats& s) { return s.mean_dgc * kRadToDeg; }),
                          rl, cl, row_title, col_title, "mean d_gc (deg)"));
    run.write("heatmap_" + tag + "_delta_b.svg",
              heatmap_svg(grid_values(r, rows, cols, coord, [](const CellStats& s) { return 1e3 * s.delta_b_norm; }),
                          rl, cl, row_title, col_title, "|delta B| (uT)"));

    Json snapshot = to_json(cfg);
    snapshot["kind"] = tag;
    run.manifest().config = snapshot;
    run.manifest().seed = cfg.rng_seed;
    run.finish();

    out << std::setw(8) << "noise" << std::setw(7) << "count" << std::setw(9) << "scaling" << std::setw(10) << "success"
        << std::setw(12) << "dB_uT" << std::setw(12) << "dgc_deg" << std::setw(14) << "median_err_uT" << '\n';
    int partial = 0;
    for (const auto& cell : r.cells) {
      const auto& s = cell.stats;
      out << std::setw(8) << cell.key.noise << std::setw(7) << cell.key.count << std::setw(9) << cell.key.scaling
          << std::setw(10) << (std::to_string(s.successes) + "/" + std::to_string(s.trials)) << std::fixed
          << std::setprecision(3) << std::setw(12) << 1e3 * s.delta_b_norm << std::setw(12) << s.mean_dgc * kRadToDeg
          << std::setw(14) << 1e3 * s.median_b_error << std::defaultfloat << std::setprecision(6) << '\n';
      if (!s.complete) ++partial;
    }
    if (partial > 0) {
      err << "warning: " << partial << " cell(s) had fewer than 80 % successful trials\n";
    }
    return kExitOk;
  });
}

// -- degeneracy -------------------------------------------------------------

int cmd_degeneracy(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Run run("degeneracy", opts);
    const Scenario scenario = opts.preset.value_or(Scenario::kBulk);
    GroundTruth truth = preset_truth(scenario);
    std::vector<FieldVector> pool = preset_pool(scenario);
    if (opts.config) {
      const Json j = load_config_file(*opts.config);
      run.manifest().add_input(*opts.config);
      if (j.contains("ground_truth")) {
        const Json& g = j["ground_truth"];
        truth.axes = axes_from_config(g, truth.axes);
        if (g.contains("b_loc_mt")) truth.b_loc = vector_from_json(g["b_loc_mt"], "ground_truth.b_loc_mt");
      }
      if (j.contains("bias_fields")) pool = bias_input_from_json(j["bias_fields"]).resolved_fields();
    }
    const std::uint64_t seed = opts.seed.value_or(0);
    const DegeneracyDemo demo = degeneracy_demo(opts.n_fields, truth, pool, {}, seed);

    std::vector<SphereConstraint> spheres;
    for (const auto& b : demo.bias_fields) spheres.push_back(SphereConstraint::from_bias(b, (b + truth.b_loc).norm()));
    run.write("degeneracy.json", dump_json(Json{{"n_fields", opts.n_fields},
                                                {"bias_fields", bias_fields_to_json(demo.bias_fields)},
                                                {"truth", Json{{"axes", to_json(truth.axes)},
                                                               {"b_loc_mt", vector_to_json(truth.b_loc)}}},
                                                {"geometry", to_json(demo.geometry)},
                                                {"reconstruction", to_json(demo.reconstruction)}}));
    run.write("degeneracy.svg",
              degeneracy_svg(spheres, demo.geometry, truth.b_loc,
                             std::to_string(opts.n_fields) + " bias field(s): " + to_string(demo.geometry.kind)));
    run.manifest().config = Json{{"scenario", to_string(scenario)}, {"n_fields", opts.n_fields}};
    run.manifest().seed = seed;
    run.finish();

    out << "manifold: " << to_string(demo.geometry.kind) << '\n';
    for (const auto& s : demo.geometry.solutions) {
      out << "  point (uT): " << 1e3 * s.x() << ", " << 1e3 * s.y() << ", " << 1e3 * s.z() << '\n';
    }
    if (demo.geometry.ring) {
      out << "  ring radius (uT): " << 1e3 * demo.geometry.ring->radius << '\n';
    }
    print_clusters(out, demo.reconstruction);
    return kExitOk;
  });
}

}  // namespace nvmag
