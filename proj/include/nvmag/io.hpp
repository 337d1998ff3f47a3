#pragma once

// File formats and run persistence.
//
// JSON numbers are written in shortest round-trip form, so load(save(x))
// reproduces every double bit for bit. NaN statistics (undefined for empty
// cells) are written as null and read back as NaN. Spectra are two-column CSV
// files with `#key=value` header lines.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nvmag/experiments.hpp"
#include "nvmag/geometry.hpp"
#include "nvmag/reconstruction.hpp"
#include "nvmag/spectra.hpp"
#include "nvmag/splitting_table.hpp"

namespace nvmag {

inline constexpr const char* kToolVersion = "0.1.0";

using Json = nlohmann::json;

// -- JSON schemas -----------------------------------------------------------

Json to_json(const SplittingTable& t);
SplittingTable splitting_table_from_json(const Json& j);

Json to_json(const PeakSet& p);
PeakSet peak_set_from_json(const Json& j);

Json to_json(const OrientationParams& p);
OrientationParams orientation_from_json(const Json& j);

Json to_json(const AxesSet& a);
AxesSet axes_from_json(const Json& j);

Json vector_to_json(const Eigen::Vector3d& v);
Eigen::Vector3d vector_from_json(const Json& j, const std::string& field);

Json to_json(const CoilModel& m);
CoilModel coil_model_from_json(const Json& j);

Json to_json(const ReconstructionResult& r);
ReconstructionResult reconstruction_result_from_json(const Json& j);

Json to_json(const DegeneracyResult& d);

/// rng_seed and threads are accepted on input but never written.
Json to_json(const ReconstructionConfig& c);
/// Missing keys keep the values of `base`; unknown keys are rejected.
ReconstructionConfig reconstruction_config_from_json(const Json& j, const ReconstructionConfig& base);

/// Bias file: a list of {bx_mt, by_mt, bz_mt} or {currents_a: [3]} entries,
/// or an object {"fields": [...], "coil_model": {...}}.
struct BiasInput {
  std::vector<FieldVector> fields;
  std::vector<Eigen::Vector3d> currents;
  std::optional<CoilModel> coil;

  bool has_currents() const { return !currents.empty(); }
  /// Fields, with currents converted through the coil model.
  std::vector<FieldVector> resolved_fields() const;
};

Json bias_fields_to_json(const std::vector<FieldVector>& fields);
Json currents_to_json(const std::vector<Eigen::Vector3d>& currents, const std::optional<CoilModel>& coil);
BiasInput bias_input_from_json(const Json& j);

/// Thread counts are deliberately left out so that results serialize the same
/// at any parallelism.
Json to_json(const SweepConfig& c);
/// Missing keys keep the values of `base`.
SweepConfig sweep_config_from_json(const Json& j, const SweepConfig& base);

Json to_json(const SweepResult& r);
SweepResult sweep_result_from_json(const Json& j);

/// One row per trial: cell key, seed, B_loc estimate, cost, d_gc.
std::string sweep_trials_csv(const SweepResult& r);

// -- spectra ----------------------------------------------------------------

std::string spectrum_to_csv(const OdmrSpectrum& s);
/// `source` names the file in diagnostics.
OdmrSpectrum spectrum_from_csv(const std::string& text, const std::string& source = "<spectrum>");

std::string splitting_table_csv(const SplittingTable& t);

// -- files ------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
/// Two-space indented JSON with a trailing newline.
std::string dump_json(const Json& j);

/// Parses JSON, reporting line and column on syntax errors (kInvalidInput).
Json parse_json(const std::string& text, const std::string& source);
Json load_json_file(const std::filesystem::path& path);

/// A JSON document, or plain `key = value` lines. Values are parsed as JSON
/// where possible; bare comma-separated lists become arrays, everything else
/// a string. `#` starts a comment.
Json load_config_file(const std::filesystem::path& path);

std::string sha256_hex(const std::string& data);

struct RunManifest {
  std::string command;
  Json config;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, sha256
  std::vector<std::string> outputs;
  double duration_s = 0.0;

  void add_input(const std::filesystem::path& path);
};

Json to_json(const RunManifest& m);
RunManifest manifest_from_json(const Json& j);

}  // namespace nvmag
