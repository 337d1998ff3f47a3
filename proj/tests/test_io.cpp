#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nvmag/error.hpp"
#include "nvmag/io.hpp"

using namespace nvmag;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nvmag_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an nvmag::Error");
  return ErrorKind::kIo;
}

}  // namespace

TEST_CASE("splitting tables round-trip bit for bit") {
  SplittingTable t(2);
  t.s << 55.123456789012345, 40.1, 1.0 / 3.0, 0.1, 60.0, 50.0, 40.0, 30.0;
  t.sigma.setConstant(0.1 + 0.2);
  const SplittingTable back = splitting_table_from_json(parse_json(dump_json(to_json(t)), "t"));
  CHECK(back.s == t.s);
  CHECK(back.sigma == t.sigma);
}

TEST_CASE("peak sets, orientation, axes and coil models round-trip") {
  PeakSet p;
  p.peaks.push_back({2850.25, 0.01, 0.02, 0.6});
  p.peaks.push_back({2890.5, 0.02, 0.019, 0.61});
  const PeakSet pb = peak_set_from_json(to_json(p));
  REQUIRE(pb.peaks.size() == 2);
  CHECK(pb.peaks[1].center == 2890.5);
  CHECK(pb.peaks[0].width == 0.6);

  const OrientationParams o{0.1, 2.2, 3.3};
  const OrientationParams ob = orientation_from_json(to_json(o));
  CHECK(ob.theta1 == o.theta1);
  CHECK(ob.alpha == o.alpha);

  const AxesSet a = axes_from_params(o);
  const AxesSet ab = axes_from_json(to_json(a));
  for (int k = 0; k < 4; ++k) CHECK(ab.n[k] == a.n[k]);

  CoilModel m;
  m.m << 0.5, 0.01, 0.0, 0.0, 0.49, 0.02, 0.0, 0.0, 0.51;
  m.offset = FieldVector(0.001, 0.0, -0.002);
  const CoilModel mb = coil_model_from_json(to_json(m));
  CHECK(mb.m == m.m);
  CHECK(mb.offset == m.offset);
}

TEST_CASE("reconstruction configs drop seed and threads and reject unknown keys") {
  ReconstructionConfig c;
  c.rng_seed = 99;
  c.threads = 7;
  c.n_starts = 12;
  const Json j = to_json(c);
  CHECK_FALSE(j.contains("rng_seed"));
  CHECK_FALSE(j.contains("threads"));
  const ReconstructionConfig back = reconstruction_config_from_json(j, ReconstructionConfig{});
  CHECK(back.n_starts == 12);
  CHECK(kind_of([] { reconstruction_config_from_json(Json{{"n_strats", 3}}, {}); }) == ErrorKind::kInvalidInput);
}

TEST_CASE("bias inputs accept fields, currents and a coil model") {
  const std::vector<FieldVector> f{{0.1, 0.2, 0.3}, {-1.0, 0.0, 0.5}};
  const BiasInput a = bias_input_from_json(bias_fields_to_json(f));
  CHECK_FALSE(a.has_currents());
  CHECK(a.resolved_fields() == f);

  CoilModel m;
  m.m = 2.0 * Eigen::Matrix3d::Identity();
  const std::vector<Eigen::Vector3d> cur{{1.0, 0.0, 0.0}, {0.0, 0.5, 0.0}};
  const BiasInput b = bias_input_from_json(currents_to_json(cur, m));
  REQUIRE(b.has_currents());
  CHECK(b.resolved_fields()[1] == FieldVector(0.0, 1.0, 0.0));
}

TEST_CASE("sweep results round-trip and the trial CSV has one row per trial") {
  SweepResult r;
  r.kind = SweepKind::kNoise;
  r.config = SweepConfig::preset(Scenario::kBulk);
  r.config.noise_levels = {0.1};
  r.config.field_counts = {4};
  CellResult cell;
  cell.key = {0.1, 4, 1.0};
  cell.stats.trials = 2;
  cell.stats.successes = 0;
  cell.stats.mean_b_error = NAN;
  r.cells.push_back(cell);
  TrialRecord t;
  t.subset = {0, 3, 5, 9};
  t.seed = 12345678901234567ULL;
  r.trials = {t, t};
  r.trials[1].trial = 1;
  const std::string text = dump_json(to_json(r));
  const SweepResult back = sweep_result_from_json(parse_json(text, "sweep"));
  CHECK(dump_json(to_json(back)) == text);
  CHECK(std::isnan(back.cells[0].stats.mean_b_error));
  CHECK(back.trials[0].seed == t.seed);
  const std::string csv = sweep_trials_csv(r);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("spectrum CSV round trip and diagnostics") {
  OdmrSpectrum s;
  s.frequencies = {2800.0, 2800.1, 2800.2};
  s.contrast = {1.0, 0.99, 0.9999999999};
  s.meta = {3, 0.6, 42};
  const OdmrSpectrum b = spectrum_from_csv(spectrum_to_csv(s), "x.csv");
  CHECK(b.frequencies == s.frequencies);
  CHECK(b.contrast == s.contrast);
  CHECK(b.meta.bias_id == 3);
  CHECK(b.meta.seed == 42);
  try {
    spectrum_from_csv("frequency_mhz,contrast\n2800,1\n2801,abc\n", "bad.csv");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidInput);
    CHECK(std::string(e.what()).find("bad.csv") != std::string::npos);
  }
}

TEST_CASE("JSON syntax errors carry line and column") {
  try {
    parse_json("{\n  \"a\": 1,\n  \"b\": ]\n}", "cfg.json");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidInput);
    const std::string msg = e.what();
    CHECK(msg.find("cfg.json") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
  }
}

TEST_CASE("key = value config files") {
  const fs::path dir = scratch_dir("kv");
  const fs::path p = dir / "run.cfg";
  write_file_atomic(p, "# comment\nn_starts = 32\nnoise_levels = 0.1, 0.2\nname = bulk  # trailing\n");
  const Json j = load_config_file(p);
  CHECK(j["n_starts"] == 32);
  CHECK(j["noise_levels"].size() == 2);
  CHECK(j["name"] == "bulk");
  fs::remove_all(dir);
}

TEST_CASE("atomic writes leave no temporary files") {
  const fs::path dir = scratch_dir("atomic");
  const fs::path p = dir / "out.json";
  write_file_atomic(p, "first\n");
  write_file_atomic(p, "second\n");
  CHECK(read_file(p) == "second\n");
  CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator()) == 1);
  CHECK(kind_of([&] { read_file(dir / "missing.json"); }) == ErrorKind::kIo);
  fs::remove_all(dir);
}

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("run manifests round-trip") {
  RunManifest m;
  m.command = "fit";
  m.seed = 5;
  m.config = Json{{"n_starts", 8}};
  m.inputs.push_back({"a.csv", sha256_hex("x")});
  m.outputs.push_back("table.json");
  m.duration_s = 1.25;
  const RunManifest b = manifest_from_json(to_json(m));
  CHECK(b.command == "fit");
  CHECK(b.seed == 5);
  CHECK(b.inputs == m.inputs);
  CHECK(b.outputs == m.outputs);
  CHECK(b.tool_version == kToolVersion);
}
