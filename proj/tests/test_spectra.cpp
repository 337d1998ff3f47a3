#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nvmag/error.hpp"
#include "nvmag/experiments.hpp"
#include "nvmag/spectra.hpp"

using namespace nvmag;

namespace {

const FieldVector kBias(0.55, -0.35, 0.75);

std::vector<double> line_frequencies(const AxesSet& axes, const FieldVector& b) {
  std::vector<double> f;
  for (const auto& r : resonance_lines(axes, b)) f.push_back(r.frequency_mhz);
  return f;
}

}  // namespace

TEST_CASE("eight lines, symmetric pairs around the zero-field gap") {
  const AxesSet axes = hundred_cut_axes();
  const FieldVector b(0.3, 0.5, -0.4);
  const auto lines = resonance_lines(axes, b);
  REQUIRE(lines.size() == 8);
  CHECK(std::is_sorted(lines.begin(), lines.end(),
                       [](const Resonance& a, const Resonance& c) { return a.frequency_mhz < c.frequency_mhz; }));
  const auto p = project(b, axes);
  for (int k = 0; k < 4; ++k) {
    double lo = 0.0, hi = 0.0;
    for (const auto& r : lines) {
      if (r.axis != k) continue;
      (r.branch < 0 ? lo : hi) = r.frequency_mhz;
    }
    CHECK(hi - lo == doctest::Approx(splitting(p.p[k], b.norm())).epsilon(1e-12));
  }
}

TEST_CASE("Lorentzian dip shape") {
  CHECK(lorentzian_dip(10.0, 10.0, 0.02, 1.0) == doctest::Approx(0.02));
  CHECK(lorentzian_dip(10.5, 10.0, 0.02, 1.0) == doctest::Approx(0.01));
}

TEST_CASE("noise-free synthesis shows eight minima and fits back exactly") {
  const GroundTruth truth = bulk_ground_truth();
  const FieldVector b = kBias + truth.b_loc;
  SynthesisOptions o;
  const OdmrSpectrum s = synthesize(truth.axes, b, o);
  CHECK_NOTHROW(s.validate());
  CHECK(detect_minima(s).size() >= 8);
  const PeakSet fit = fit_peaks(s, 8);
  const auto ref = line_frequencies(truth.axes, b);
  REQUIRE(fit.peaks.size() == 8);
  for (int i = 0; i < 8; ++i) CHECK(fit.peaks[i].center == doctest::Approx(ref[i]).epsilon(1e-9));
  const SplittingRow row = splittings_from_peaks(fit);
  CHECK(std::is_sorted(row.s.rbegin(), row.s.rend()));
  CHECK(row.s[0] == doctest::Approx(ref[7] - ref[0]).epsilon(1e-9));
}

TEST_CASE("frequency jitter is reproducible from the seed") {
  const GroundTruth truth = bulk_ground_truth();
  SynthesisOptions o;
  o.noise = {NoiseMode::kFrequency, 0.3, 77};
  const auto a = synthesize_with_truth(truth.axes, kBias, o);
  const auto b = synthesize_with_truth(truth.axes, kBias, o);
  CHECK(a.centers == b.centers);
  o.noise.seed = 78;
  CHECK(synthesize_with_truth(truth.axes, kBias, o).centers != a.centers);
}

TEST_CASE("amplitude noise fit stays near the truth") {
  const GroundTruth truth = bulk_ground_truth();
  const FieldVector b = kBias + truth.b_loc;
  SynthesisOptions o;
  o.noise = {NoiseMode::kAmplitude, 5e-4, 3};
  const PeakSet fit = fit_peaks(synthesize(truth.axes, b, o), 8);
  const auto ref = line_frequencies(truth.axes, b);
  for (int i = 0; i < 8; ++i) {
    CHECK(std::abs(fit.peaks[i].center - ref[i]) < 0.05);
    CHECK(fit.peaks[i].uncertainty > 0.0);
  }
}

TEST_CASE("hyperfine spectra merge back to the eight-line table") {
  const GroundTruth truth = nanodiamond_ground_truth();
  const FieldVector b = nanodiamond_pool()[0] + truth.b_loc;
  SynthesisOptions o;
  o.linewidth_fwhm = 1.0;
  o.hyperfine = true;
  const OdmrSpectrum s = synthesize(truth.axes, b, o);
  const PeakSet sixteen = fit_peaks(s, 16);
  const MergeResult merged = merge_hyperfine(sixteen, 3.03, 0.3, true);
  CHECK(merged.unpaired.empty());
  const auto ref = line_frequencies(truth.axes, b);
  REQUIRE(merged.peaks.peaks.size() == 8);
  for (int i = 0; i < 8; ++i) CHECK(merged.peaks.peaks[i].center == doctest::Approx(ref[i]).epsilon(1e-9));
}

TEST_CASE("doublet fit handles unresolved hyperfine pairs") {
  const GroundTruth truth = nanodiamond_ground_truth();
  const FieldVector b = nanodiamond_pool()[1] + truth.b_loc;
  SynthesisOptions o;
  o.linewidth_fwhm = 4.0;  // wider than the pair spacing
  o.hyperfine = true;
  const PeakSet doublets = fit_doublets(synthesize(truth.axes, b, o), 8, 3.03);
  const auto ref = line_frequencies(truth.axes, b);
  REQUIRE(doublets.peaks.size() == 8);
  for (int i = 0; i < 8; ++i) CHECK(doublets.peaks[i].center == doctest::Approx(ref[i]).epsilon(1e-8));
}

TEST_CASE("merge keeps unmatched peaks unless strict") {
  PeakSet p;
  for (double c : {2800.0, 2803.03, 2850.0}) p.peaks.push_back({c, 0.01, 0.02, 1.0});
  const MergeResult m = merge_hyperfine(p);
  CHECK(m.peaks.peaks.size() == 2);
  CHECK(m.unpaired.size() == 1);
  CHECK(m.peaks.peaks[0].center == doctest::Approx(2801.515));
  CHECK_THROWS_AS(merge_hyperfine(p, 3.03, 0.3, true), Error);
}

TEST_CASE("too few dips is a fit failure") {
  const GroundTruth truth = bulk_ground_truth();
  // Field along [001]: all four axes share |projection|, so only two dips.
  SynthesisOptions o;
  const OdmrSpectrum s = synthesize(truth.axes, FieldVector(0, 0, 1), o);
  try {
    fit_peaks(s, 8);
    FAIL("expected a fit failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFitFailure);
  }
}

TEST_CASE("malformed spectra are rejected") {
  OdmrSpectrum s;
  s.frequencies = {1.0, 2.0, 2.0};
  s.contrast = {1.0, 1.0, 1.0};
  CHECK_THROWS_AS(s.validate(), Error);
  s.frequencies = {1.0, 2.0};
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("splitting table assembly") {
  SplittingRow r;
  r.s = {40.0, 30.0, 20.0, 10.0};
  const SplittingTable t = make_table({r, r});
  CHECK(t.rows() == 2);
  CHECK(t.s(1, 2) == 20.0);
  SplittingTable bad(1);
  bad.s(0, 0) = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("field along the first [100]-cut axis: outer dips at D +- 28 MHz") {
  const AxesSet axes = hundred_cut_axes();
  const auto lines = resonance_lines(axes, 1.0 * axes.n[0]);
  CHECK(std::abs(lines.front().frequency_mhz - 2842.0) < 1e-9);
  CHECK(std::abs(lines.back().frequency_mhz - 2898.0) < 1e-9);
}

TEST_CASE("hyperfine synthesis doubles every dip symmetrically") {
  const PhysicalConstants c;
  const GroundTruth truth = nanodiamond_ground_truth();
  const FieldVector b = nanodiamond_pool()[3] + truth.b_loc;
  SynthesisOptions o;
  o.linewidth_fwhm = 1.0;
  const auto eight = synthesize_with_truth(truth.axes, b, o, c).centers;
  o.hyperfine = true;
  const auto sixteen = synthesize_with_truth(truth.axes, b, o, c).centers;
  REQUIRE(eight.size() == 8);
  REQUIRE(sixteen.size() == 16);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(std::abs(0.5 * (sixteen[2 * i] + sixteen[2 * i + 1]) - eight[i]) < 1e-12);
    CHECK(std::abs(sixteen[2 * i + 1] - sixteen[2 * i] - c.hyperfine_pair_sep) < 1e-12);
  }
}

TEST_CASE("noise-free fits reproduce centers and splittings") {
  const PhysicalConstants c;
  const GroundTruth truth = bulk_ground_truth();
  for (const FieldVector& bias : bulk_pool()) {
    const FieldVector b = bias + truth.b_loc;
    SynthesisOptions o;
    const auto syn = synthesize_with_truth(truth.axes, b, o, c);
    const PeakSet fit = fit_peaks(syn.spectrum, 8);
    for (int i = 0; i < 8; ++i) CHECK(std::abs(fit.peaks[i].center - syn.centers[i]) < 1e-3);
    const SplittingRow row = splittings_from_peaks(fit);
    const auto p = project(b, truth.axes);
    std::array<double, 4> model{};
    for (int k = 0; k < 4; ++k) model[k] = splitting(p.p[k], b.norm(), c);
    std::sort(model.begin(), model.end(), std::greater<>());
    for (int k = 0; k < 4; ++k) CHECK(std::abs(row.s[k] - model[k]) < 1e-6);
  }
}

TEST_CASE("merged hyperfine centers match the eight-line centers to 1e-6 MHz") {
  const GroundTruth truth = nanodiamond_ground_truth();
  const FieldVector b = nanodiamond_pool()[5] + truth.b_loc;
  SynthesisOptions o;
  o.linewidth_fwhm = 1.0;
  const auto eight = synthesize_with_truth(truth.axes, b, o).centers;
  o.hyperfine = true;
  const MergeResult m = merge_hyperfine(fit_peaks(synthesize(truth.axes, b, o), 16), 3.03, 0.3, true);
  REQUIRE(m.peaks.peaks.size() == 8);
  for (int i = 0; i < 8; ++i) CHECK(std::abs(m.peaks.peaks[i].center - eight[i]) < 1e-6);
}

TEST_CASE("broad-line amplitude noise: centers within a tenth of the linewidth") {
  // Per-point noise of 10 % of the dip depth, 10 MHz lines, 1000 noise draws.
  const GroundTruth truth = nanodiamond_ground_truth();
  const FieldVector b = nanodiamond_pool()[0] + truth.b_loc;
  SynthesisOptions o;
  o.linewidth_fwhm = 10.0;
  o.noise.mode = NoiseMode::kAmplitude;
  o.noise.amplitude = 0.1 * o.peak_contrast;
  const auto ref = synthesize_with_truth(truth.axes, b, SynthesisOptions{.linewidth_fwhm = 10.0}).centers;
  int good = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    o.noise.seed = static_cast<std::uint64_t>(t);
    try {
      const PeakSet fit = fit_peaks(synthesize(truth.axes, b, o), 8);
      bool all = true;
      for (int i = 0; i < 8; ++i) all = all && std::abs(fit.peaks[i].center - ref[i]) <= 1.0;
      good += all ? 1 : 0;
    } catch (const Error&) {
    }
  }
  MESSAGE("trials with all eight centers within 1 MHz: " << good << " / " << trials);
  CHECK(good >= 950);
}

TEST_CASE("pairing near a line crossing is flagged as ambiguous") {
  // Scan a strong field through a great circle until two lines on the same
  // side of the spectrum nearly coincide.
  const PhysicalConstants c;
  const AxesSet axes = hundred_cut_axes();
  bool found = false;
  for (int i = 0; i < 20000 && !found; ++i) {
    const double t = 2.0 * std::numbers::pi * i / 20000.0;
    const FieldVector b = 30.0 * FieldVector(std::cos(t), 0.37 * std::sin(t), 0.93 * std::sin(t)).normalized();
    const auto lines = resonance_lines(axes, b, c);
    for (int k = 0; k < 3 && !found; ++k) {
      const double gap_low = lines[k + 1].frequency_mhz - lines[k].frequency_mhz;
      const double gap_high = lines[7 - k].frequency_mhz - lines[6 - k].frequency_mhz;
      if (std::min(gap_low, gap_high) < 0.05) {
        PeakSet p;
        for (const auto& r : lines) p.peaks.push_back({r.frequency_mhz, 0.1, 0.02, 0.6});
        CHECK(splittings_from_peaks(p).ambiguous);
        found = true;
      }
    }
  }
  CHECK(found);
  // Far from any crossing the pairing is unambiguous.
  PeakSet clear;
  for (const auto& r : resonance_lines(axes, FieldVector(0.55, -0.35, 0.75), c)) clear.peaks.push_back({r.frequency_mhz, 0.01, 0.02, 0.6});
  CHECK_FALSE(splittings_from_peaks(clear).ambiguous);
}
