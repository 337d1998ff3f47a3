#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "nvmag/commands.hpp"
#include "nvmag/io.hpp"
#include "nvmag/reconstruction.hpp"

using namespace nvmag;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nvmag_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(NVMAG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("simulate, fit and reconstruct recover the bulk ground truth") {
  const fs::path dir = fresh_dir("pipeline");
  std::ostringstream out, err;
  CommandOptions o;
  o.out_dir = dir;
  o.seed = 3;
  o.threads = 2;
  REQUIRE(cmd_simulate(o, out, err) == kExitOk);
  CHECK(fs::exists(dir / "spectrum_000.csv"));
  CHECK(fs::exists(dir / "simulate_manifest.json"));

  o.inputs = {dir};
  REQUIRE(cmd_fit(o, out, err) == kExitOk);
  REQUIRE(fs::exists(dir / "table.json"));

  o.table = dir / "table.json";
  o.bias = dir / "bias_fields.json";
  o.svg = true;
  REQUIRE(cmd_reconstruct(o, out, err) == kExitOk);
  const Json r = load_json_file(dir / "reconstruction.json");
  const FieldVector b = vector_from_json(r["best"]["b_loc_mt"], "b_loc_mt");
  CHECK((b - bulk_ground_truth().b_loc).norm() < 1e-6);
  CHECK(fs::exists(dir / "reconstruction.svg"));
  fs::remove_all(dir);
}

TEST_CASE("three bias fields exit as degenerate") {
  const fs::path dir = fresh_dir("degenerate");
  const auto pool = bulk_pool();
  const GroundTruth truth = bulk_ground_truth();
  const std::vector<FieldVector> fields(pool.begin(), pool.begin() + 3);
  write_file_atomic(dir / "bias.json", dump_json(bias_fields_to_json(fields)));
  const Eigen::MatrixX4d model = calculated_splittings(truth.axes, truth.b_loc, fields);
  SplittingTable t(3);
  for (int i = 0; i < 3; ++i) {
    Eigen::RowVector4d row = model.row(i);
    std::sort(row.data(), row.data() + 4, std::greater<>());
    t.s.row(i) = row;
  }
  write_file_atomic(dir / "table.json", dump_json(to_json(t)));
  write_file_atomic(dir / "wide.json", R"({"b_loc_lower_mt": [-2.7, -2.7, -2.7], "b_loc_upper_mt": [2.7, 2.7, 2.7]})");
  std::ostringstream out, err;
  CommandOptions o;
  o.out_dir = dir;
  o.table = dir / "table.json";
  o.bias = dir / "bias.json";
  o.config = dir / "wide.json";
  CHECK(cmd_reconstruct(o, out, err) == kExitDegenerate);
  fs::remove_all(dir);
}

TEST_CASE("degeneracy command writes the geometry") {
  const fs::path dir = fresh_dir("ladder");
  std::ostringstream out, err;
  CommandOptions o;
  o.out_dir = dir;
  o.n_fields = 2;
  cmd_degeneracy(o, out, err);
  const Json j = load_json_file(dir / "degeneracy.json");
  CHECK(j.dump().find("ring") != std::string::npos);
  CHECK(fs::exists(dir / "degeneracy.svg"));
  fs::remove_all(dir);
}

TEST_CASE("error paths map to exit codes") {
  CHECK(exit_code(ErrorKind::kInvalidInput) == kExitConfig);
  CHECK(exit_code(ErrorKind::kFitFailure) == kExitFitFailure);
  CHECK(exit_code(ErrorKind::kDegenerate) == kExitDegenerate);
  CHECK(exit_code(ErrorKind::kNonConvergence) == kExitNonConvergence);
  CHECK(exit_code(ErrorKind::kIo) == kExitOther);

  const fs::path dir = fresh_dir("errors");
  write_file_atomic(dir / "broken.json", "{\"n_starts\": }");
  std::ostringstream out, err;
  CommandOptions o;
  o.out_dir = dir;
  o.config = dir / "broken.json";
  o.table = dir / "broken.json";
  o.bias = dir / "broken.json";
  CHECK(cmd_reconstruct(o, out, err) == kExitConfig);
  CHECK(err.str().find("broken.json") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("the binary rejects bad arguments with exit code 2") {
  CHECK(run_cli("--version") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("reconstruct --table /nonexistent.json --bias /nonexistent.json") == 2);
  CHECK(run_cli("sweep --kind bogus") == 2);
}

namespace {

int count_dips(const fs::path& file) { return static_cast<int>(detect_minima(spectrum_from_csv(read_file(file))).size()); }

SplittingTable sorted_model(const GroundTruth& truth, const std::vector<FieldVector>& fields) {
  const Eigen::MatrixX4d model = calculated_splittings(truth.axes, truth.b_loc, fields);
  SplittingTable t(static_cast<Eigen::Index>(fields.size()));
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    Eigen::RowVector4d row = model.row(i);
    std::sort(row.data(), row.data() + 4, std::greater<>());
    t.s.row(i) = row;
  }
  return t;
}

}  // namespace

TEST_CASE("bulk simulate writes 28 spectra with 8 dips, 16 with hyperfine") {
  for (const bool hyperfine : {false, true}) {
    const fs::path dir = fresh_dir(hyperfine ? "sim_hf" : "sim");
    std::ostringstream out, err;
    CommandOptions o;
    o.out_dir = dir;
    o.hyperfine = hyperfine;
    REQUIRE(cmd_simulate(o, out, err) == kExitOk);
    const int lines = hyperfine ? 16 : 8;
    const Json centers = load_json_file(dir / "truth.json")["line_centers_mhz"];
    REQUIRE(centers.size() == 28);
    int resolved = 0;
    for (std::size_t i = 0; i < centers.size(); ++i) {
      auto c = centers[i].get<std::vector<double>>();
      REQUIRE(c.size() == static_cast<std::size_t>(lines));
      char name[32];
      std::snprintf(name, sizeof(name), "spectrum_%03zu.csv", i);
      REQUIRE(fs::exists(dir / name));
      // Dips at least two linewidths apart must all show up as minima.
      std::sort(c.begin(), c.end());
      double gap = 1e9;
      for (std::size_t k = 1; k < c.size(); ++k) gap = std::min(gap, c[k] - c[k - 1]);
      if (gap >= 1.2) {
        ++resolved;
        CHECK(count_dips(dir / name) == lines);
      }
    }
    CHECK(resolved >= (hyperfine ? 1 : 28));
    fs::remove_all(dir);
  }
}

TEST_CASE("zero total field gives a single dip") {
  const fs::path dir = fresh_dir("zero");
  write_file_atomic(dir / "cfg.json", R"({"b_loc_mt": [0, 0, 0], "bias_fields": [{"bx_mt": 0, "by_mt": 0, "bz_mt": 0}]})");
  std::ostringstream out, err;
  CommandOptions o;
  o.out_dir = dir;
  o.config = dir / "cfg.json";
  REQUIRE(cmd_simulate(o, out, err) == kExitOk);
  const auto minima = detect_minima(spectrum_from_csv(read_file(dir / "spectrum_000.csv")));
  REQUIRE(minima.size() == 1);
  CHECK(std::abs(minima[0] - 2870.0) < 0.5);
  fs::remove_all(dir);
}

TEST_CASE("fitted table matches the forward model; merged hyperfine table matches it too") {
  const fs::path plain = fresh_dir("table_plain");
  const fs::path hf = fresh_dir("table_hf");
  std::ostringstream out, err;
  CommandOptions o;
  o.out_dir = plain;
  REQUIRE(cmd_simulate(o, out, err) == kExitOk);
  o.inputs = {plain};
  REQUIRE(cmd_fit(o, out, err) == kExitOk);
  o.out_dir = hf;
  o.hyperfine = true;
  REQUIRE(cmd_simulate(o, out, err) == kExitOk);
  o.inputs = {hf};
  o.merge_hyperfine = true;
  REQUIRE(cmd_fit(o, out, err) == kExitOk);

  const auto fields = bias_input_from_json(load_json_file(plain / "bias_fields.json")).resolved_fields();
  const SplittingTable model = sorted_model(bulk_ground_truth(), fields);
  const SplittingTable a = splitting_table_from_json(load_json_file(plain / "table.json"));
  const SplittingTable b = splitting_table_from_json(load_json_file(hf / "table.json"));
  REQUIRE(a.rows() == model.rows());
  REQUIRE(b.rows() == model.rows());
  CHECK((a.s - model.s).cwiseAbs().maxCoeff() < 1e-3);
  CHECK((a.s - b.s).cwiseAbs().maxCoeff() < 1e-6);
  fs::remove_all(plain);
  fs::remove_all(hf);
}

TEST_CASE("a wrong peak count is reported per file with the minima found") {
  const fs::path dir = fresh_dir("wrong_count");
  std::ostringstream out, err;
  CommandOptions o;
  o.out_dir = dir;
  REQUIRE(cmd_simulate(o, out, err) == kExitOk);
  o.inputs = {dir / "spectrum_000.csv"};
  o.expected_peaks = 12;
  std::ostringstream fit_err;
  CHECK(cmd_fit(o, out, fit_err) == kExitFitFailure);
  const std::string msg = fit_err.str();
  CHECK(msg.find("spectrum_000.csv") != std::string::npos);
  CHECK(msg.find("found 8 minima") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("bundled bulk fixture reconstructs the local field and axes") {
  const fs::path dir = fresh_dir("fixture");
  const fs::path fixture = fs::path(NVMAG_FIXTURES) / "bulk";
  std::ostringstream out, err;
  CommandOptions o;
  o.out_dir = dir;
  o.seed = 0;
  o.table = fixture / "table.json";
  o.bias = fixture / "bias_fields.json";
  REQUIRE(cmd_reconstruct(o, out, err) == kExitOk);
  const Json r = load_json_file(dir / "reconstruction.json");
  const GroundTruth truth = bulk_ground_truth();
  // Table fitted from spectra with 0.3 MHz line jitter over 28 fields.
  CHECK((vector_from_json(r["best"]["b_loc_mt"], "b_loc_mt") - truth.b_loc).norm() < 0.010);
  const AxesSet axes = axes_from_params(orientation_from_json(r["best"]["params"]));
  CHECK(match_axes(axes, truth.axes).mean_dgc < 0.5 * std::numbers::pi / 180.0);
  fs::remove_all(dir);
}

TEST_CASE("three-field reconstruction JSON lists both mirror clusters") {
  const fs::path dir = fresh_dir("mirror_json");
  const auto pool = bulk_pool();
  const std::vector<FieldVector> fields(pool.begin(), pool.begin() + 3);
  write_file_atomic(dir / "bias.json", dump_json(bias_fields_to_json(fields)));
  write_file_atomic(dir / "table.json", dump_json(to_json(sorted_model(bulk_ground_truth(), fields))));
  write_file_atomic(dir / "wide.json", R"({"b_loc_lower_mt": [-2.7, -2.7, -2.7], "b_loc_upper_mt": [2.7, 2.7, 2.7]})");
  std::ostringstream out, err;
  CommandOptions o;
  o.out_dir = dir;
  o.table = dir / "table.json";
  o.bias = dir / "bias.json";
  o.config = dir / "wide.json";
  REQUIRE(cmd_reconstruct(o, out, err) == kExitDegenerate);
  const ReconstructionResult r = reconstruction_result_from_json(load_json_file(dir / "reconstruction.json"));
  REQUIRE(r.tied_clusters >= 2);
  REQUIRE(r.clusters.size() >= 2);
  CHECK((r.clusters[0].representative.b_loc - r.clusters[1].representative.b_loc).norm() > 1e-3);
  CHECK(std::abs(r.clusters[0].representative.cost - r.clusters[1].representative.cost) < 1e-9);
  fs::remove_all(dir);
}

TEST_CASE("calibrate writes a coil model") {
  const fs::path dir = fresh_dir("calibrate");
  const GroundTruth truth = bulk_ground_truth();
  CoilModel coil;
  coil.m << 0.5, 0.02, 0.0, 0.0, 0.5, -0.01, 0.0, 0.0, 0.5;
  std::vector<Eigen::Vector3d> currents;
  std::vector<FieldVector> fields;
  for (const FieldVector& f : bulk_pool()) {
    if (currents.size() == 8) break;
    currents.push_back(coil.m.inverse() * f);
    fields.push_back(f);
  }
  write_file_atomic(dir / "currents.json", dump_json(currents_to_json(currents, std::nullopt)));
  write_file_atomic(dir / "table.json", dump_json(to_json(sorted_model(truth, fields))));
  std::ostringstream out, err;
  CommandOptions o;
  o.out_dir = dir;
  o.seed = 1;
  o.table = dir / "table.json";
  o.bias = dir / "currents.json";
  REQUIRE(cmd_calibrate(o, out, err) == kExitOk);
  const CoilModel fitted = coil_model_from_json(load_json_file(dir / "coil_model.json"));
  CHECK((fitted.m - coil.m).norm() / coil.m.norm() < 1e-3);
  fs::remove_all(dir);
}

TEST_CASE("sweep presets span the documented grids") {
  const SweepConfig bulk = SweepConfig::preset(Scenario::kBulk);
  const SweepConfig nano = SweepConfig::preset(Scenario::kNanodiamond);
  CHECK(bulk.noise_levels.size() == 5);
  CHECK(bulk.field_counts.size() == 7);
  CHECK(nano.noise_levels.size() == 5);
  CHECK(nano.field_counts.size() == 17);
}
