#pragma once

// Monte-Carlo studies of reconstruction accuracy: noise and field-count
// sweeps, bias-scaling sweeps, saturation with field count, and the
// geometric degeneracy ladder.
//
// Every trial draws its own subset and noise from a seed derived from
// (master seed, cell key, trial index), so results do not depend on how work
// is scheduled across threads.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nvmag/geometry.hpp"
#include "nvmag/reconstruction.hpp"
#include "nvmag/spectra.hpp"

namespace nvmag {

enum class Scenario { kBulk, kNanodiamond, kCustom };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct GroundTruth {
  AxesSet axes;
  FieldVector b_loc = FieldVector::Zero();
};

/// [100]-cut axes with B_loc = (9, -17, -50) uT.
GroundTruth bulk_ground_truth();
/// A generic particle orientation with a few-tens-of-uT local field.
GroundTruth nanodiamond_ground_truth();

// The preset pools keep only directions whose eight lines are at least two
// linewidths apart for the preset ground truth, so every spectrum shows eight
// resolvable dips.

/// 28 well-spread directions of about 1 mT.
std::vector<FieldVector> bulk_pool();
/// 34 well-spread directions with magnitudes 5-10 mT.
std::vector<FieldVector> nanodiamond_pool();

enum class SweepKind { kNoise, kScaling, kSaturation };

std::string to_string(SweepKind k);

struct SweepConfig {
  Scenario scenario = Scenario::kBulk;
  std::vector<double> noise_levels;  // MHz (frequency jitter) or contrast units (amplitude)
  std::vector<int> field_counts;
  std::vector<FieldVector> bias_pool;
  std::vector<double> bias_scaling{1.0};
  int trials_per_cell = 50;
  GroundTruth ground_truth;
  std::uint64_t rng_seed = 0;
  // kFrequency jitters the eight transition frequencies directly. kAmplitude
  // synthesizes spectra with per-point noise and fits them.
  NoiseMode noise_mode = NoiseMode::kFrequency;
  double linewidth_mhz = kBulkLinewidthMhz;  // amplitude mode only
  ReconstructionConfig reconstruction;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;

  static SweepConfig preset(Scenario scenario);
};

struct SubsetSample {
  std::vector<std::vector<int>> subsets;  // indices into the pool, ascending
  int rejections = 0;
};

/// n subsets of size k drawn without replacement. Subsets of four or more
/// fields must be non-coplanar, three-field subsets non-collinear.
SubsetSample sample_subsets(const std::vector<FieldVector>& pool, int k, int n, std::uint64_t seed);

struct CellKey {
  double noise = 0.0;
  int count = 0;
  double scaling = 1.0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// splitmix64-based seed for one trial.
std::uint64_t trial_seed(std::uint64_t master, const CellKey& key, int trial);

struct TrialRecord {
  std::size_t cell = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  std::vector<int> subset;
  int rejections = 0;
  bool success = false;
  std::string error;
  FieldVector b_loc = FieldVector::Zero();
  double cost = 0.0;
  AxesSet axes;              // matched to the ground truth labels and signs
  double b_error = 0.0;      // |B_loc - truth|, mT
  double axis_error = 0.0;   // mean d_gc to the truth axes, rad
};

struct CellStats {
  int trials = 0;
  int successes = 0;
  bool complete = false;  // at least 80 % of trials succeeded
  FieldVector delta_b = FieldVector::Zero();  // population std per component, mT
  double delta_b_norm = 0.0;
  std::array<double, 4> dgc{};  // per-axis dispersion about the mean axis, rad
  double mean_dgc = 0.0;
  double mean_b_error = 0.0;
  double median_b_error = 0.0;
  double mean_axis_error = 0.0;
  double median_axis_error = 0.0;
};

/// Statistics of one cell recomputed from its trial records.
CellStats compute_cell_stats(const std::vector<TrialRecord>& trials);

struct CellResult {
  CellKey key;
  CellStats stats;
};

struct SweepResult {
  SweepKind kind = SweepKind::kNoise;
  SweepConfig config;
  std::vector<CellResult> cells;
  std::vector<TrialRecord> trials;  // grouped by cell, ascending trial index
};

/// Cells over noise_levels x field_counts (scaling fixed at bias_scaling[0]).
SweepResult run_noise_sweep(const SweepConfig& config);
/// Cells over noise_levels x bias_scaling at field_counts[0].
SweepResult run_bias_scaling_sweep(const SweepConfig& config);
/// Cells over field_counts at noise_levels[0].
SweepResult run_saturation_study(const SweepConfig& config);

/// delta_b_norm of each cell relative to the first cell.
std::vector<double> relative_improvement(const SweepResult& result);

/// One reconstruction trial, exposed for tests.
TrialRecord run_trial(const SweepConfig& config, const CellKey& key, int trial);

struct DegeneracyDemo {
  std::vector<FieldVector> bias_fields;
  DegeneracyResult geometry;
  ReconstructionResult reconstruction;
};

/// Noise-free data from the first n_fields pool entries, analysed both
/// geometrically and by multistart reconstruction. The B_loc box is widened to
/// +-2.5 max|B_bias| so that mirror solutions are not cut off.
DegeneracyDemo degeneracy_demo(int n_fields, const GroundTruth& truth, const std::vector<FieldVector>& pool,
                               const PhysicalConstants& c = {}, std::uint64_t seed = 0);

}  // namespace nvmag
