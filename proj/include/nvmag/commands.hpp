#pragma once

// The command-line pipeline stages as library calls. Each returns a process
// exit code and reports on the given streams; every run writes its outputs
// plus a <command>_manifest.json into `out_dir`.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nvmag/error.hpp"
#include "nvmag/experiments.hpp"
#include "nvmag/spectra.hpp"

namespace nvmag {

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,
  kExitFitFailure = 3,
  kExitDegenerate = 4,
  kExitNonConvergence = 5,
  kExitPartial = 6,
};

int exit_code(ErrorKind kind);

inline constexpr const char* kOutDirEnv = "NVMAG_OUT_DIR";

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = ".";
  int threads = 0;
  std::optional<Scenario> preset;
  bool hyperfine = false;
  bool merge_hyperfine = false;
  std::optional<NoiseMode> noise_mode;
  std::string format = "json";

  // simulate
  double noise = 0.0;  // MHz (frequency) or contrast units (amplitude)
  // fit
  std::vector<std::filesystem::path> inputs;  // files or directories of *.csv
  int expected_peaks = 0;                     // 0: 8, or 16 with --merge-hyperfine
  // reconstruct / calibrate
  std::optional<std::filesystem::path> table;
  std::optional<std::filesystem::path> bias;
  bool svg = false;
  // sweep
  SweepKind sweep_kind = SweepKind::kNoise;
  std::optional<int> trials;
  // degeneracy
  int n_fields = 4;
};

/// Output directory: the explicit flag, else $NVMAG_OUT_DIR, else ".".
std::filesystem::path default_out_dir();

int cmd_simulate(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_fit(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_reconstruct(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_calibrate(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_sweep(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_degeneracy(const CommandOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace nvmag
