#pragma once

// CW-ODMR spectra: Lorentzian-dip synthesis, multi-peak fitting, hyperfine
// pair merging and conversion of fitted centers into splittings.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "nvmag/geometry.hpp"
#include "nvmag/physics.hpp"
#include "nvmag/splitting_table.hpp"

namespace nvmag {

inline constexpr double kBulkLinewidthMhz = 0.6;
inline constexpr double kNanodiamondLinewidthMhz = 10.0;

enum class NoiseMode { kNone, kFrequency, kAmplitude };

struct NoiseSpec {
  NoiseMode mode = NoiseMode::kNone;
  double amplitude = 0.0;  // MHz for kFrequency, contrast units for kAmplitude
  std::uint64_t seed = 0;
};

struct FrequencyGrid {
  double start_mhz = 0.0;
  double stop_mhz = 0.0;
  double step_mhz = 0.0;

  std::vector<double> points() const;
};

struct SpectrumMeta {
  int bias_id = 0;
  double linewidth_mhz = 0.0;
  std::uint64_t seed = 0;
};

struct OdmrSpectrum {
  std::vector<double> frequencies;  // strictly increasing, MHz
  std::vector<double> contrast;     // 1 = off resonance
  SpectrumMeta meta;

  void validate() const;
};

/// One m_s = 0 -> +-1 line.
struct Resonance {
  double frequency_mhz = 0.0;
  int axis = 0;    // 0..3
  int branch = 0;  // -1 or +1
};

/// The eight transition frequencies (ascending) for a total field on the given axes.
std::vector<Resonance> resonance_lines(const AxesSet& axes, const FieldVector& b_total,
                                       const PhysicalConstants& c = {});

/// Grid spanning the lines with `margin_fwhm` linewidths on each side and
/// `points_per_fwhm` samples per linewidth.
FrequencyGrid auto_grid(const std::vector<double>& centers, double linewidth_fwhm, double margin_fwhm = 6.0,
                        double points_per_fwhm = 10.0);

struct SynthesisOptions {
  double linewidth_fwhm = kBulkLinewidthMhz;
  double peak_contrast = 0.02;
  NoiseSpec noise;
  std::optional<FrequencyGrid> grid;  // default: auto_grid over the lines
  bool hyperfine = false;
  int bias_id = 0;
};

struct SynthesizedSpectrum {
  OdmrSpectrum spectrum;
  std::vector<double> centers;  // dip centers actually used (after jitter), ascending
};

SynthesizedSpectrum synthesize_with_truth(const AxesSet& axes, const FieldVector& b_total,
                                          const SynthesisOptions& opts, const PhysicalConstants& c = {});

OdmrSpectrum synthesize(const AxesSet& axes, const FieldVector& b_total, const SynthesisOptions& opts,
                        const PhysicalConstants& c = {});

double lorentzian_dip(double f, double center, double depth, double fwhm);

struct Peak {
  double center = 0.0;       // MHz
  double uncertainty = 0.0;  // 1-sigma, MHz
  double depth = 0.0;
  double width = 0.0;        // FWHM, MHz
};

struct PeakSet {
  std::vector<Peak> peaks;  // ascending center
};

struct FitOptions {
  // Smoothing window for minimum detection, in units of the spectrum
  // linewidth (falls back to 8 grid steps when the linewidth is unknown).
  double smoothing_fwhm = 0.25;
  double prominence_sigma = 5.0;
};

/// Multi-Lorentzian least-squares fit. Throws kFitFailure when fewer than
/// `expected_count` minima can be located or the fit fails.
PeakSet fit_peaks(const OdmrSpectrum& spectrum, int expected_count,
                  const std::optional<std::vector<double>>& initial_guesses = std::nullopt,
                  const FitOptions& opts = {});

/// Fit for hyperfine doublets that are too close to resolve individually:
/// every center carries two equal Lorentzians pair_sep apart. Returns the
/// doublet centers, i.e. what merge_hyperfine would produce.
PeakSet fit_doublets(const OdmrSpectrum& spectrum, int parent_count, double pair_sep,
                     const std::optional<std::vector<double>>& initial_guesses = std::nullopt,
                     const FitOptions& opts = {});

/// Local minima of the smoothed spectrum, most prominent first.
std::vector<double> detect_minima(const OdmrSpectrum& spectrum, const FitOptions& opts = {});

struct MergeResult {
  PeakSet peaks;
  std::vector<std::size_t> unpaired;  // indices into peaks.peaks passed through unmerged
};

MergeResult merge_hyperfine(const PeakSet& peaks, double pair_sep = 3.03, double tol = 0.3,
                            bool strict = false);

struct SplittingRow {
  std::array<double, 4> s{};      // descending, MHz
  std::array<double, 4> sigma{};
  bool ambiguous = false;
};

/// Pairs the k-th lowest center with the k-th highest (symmetric about the
/// spectrum center).
SplittingRow splittings_from_peaks(const PeakSet& peaks);

SplittingTable make_table(const std::vector<SplittingRow>& rows);

}  // namespace nvmag
