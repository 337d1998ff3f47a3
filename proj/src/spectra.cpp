#include "nvmag/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "nvmag/error.hpp"
#include "nvmag/least_squares.hpp"

namespace nvmag {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), mid));
  }
  return m;
}

double grid_step(const OdmrSpectrum& s) {
  std::vector<double> d(s.frequencies.size() - 1);
  for (std::size_t i = 0; i + 1 < s.frequencies.size(); ++i) d[i] = s.frequencies[i + 1] - s.frequencies[i];
  return median(d);
}

std::vector<double> smooth(const std::vector<double>& y, int half) {
  const int n = static_cast<int>(y.size());
  std::vector<double> prefix(n + 1, 0.0);
  for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + y[i];
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    out[i] = (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1);
  }
  return out;
}

int smoothing_half_window(const OdmrSpectrum& s, const FitOptions& opts, double step) {
  if (s.meta.linewidth_mhz > 0.0) {
    return std::max(0, static_cast<int>(std::lround(0.5 * opts.smoothing_fwhm * s.meta.linewidth_mhz / step)));
  }
  return 4;
}

double raw_noise_sigma(const std::vector<double>& y) {
  std::vector<double> d(y.size() - 1);
  for (std::size_t i = 0; i + 1 < y.size(); ++i) d[i] = y[i + 1] - y[i];
  const double med = median(d);
  for (double& v : d) v = std::abs(v - med);
  return 1.4826 * median(d) / std::sqrt(2.0);
}

struct Minimum {
  std::size_t index = 0;
  double prominence = 0.0;
};

std::vector<Minimum> find_minima(const std::vector<double>& s, double threshold) {
  const std::size_t n = s.size();
  std::vector<Minimum> out;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (!(s[i] < s[i - 1] && s[i] <= s[i + 1])) continue;
    double left_max = s[i];
    for (std::size_t k = i; k-- > 0;) {
      if (s[k] < s[i]) break;
      left_max = std::max(left_max, s[k]);
    }
    double right_max = s[i];
    for (std::size_t k = i + 1; k < n; ++k) {
      if (s[k] < s[i]) break;
      right_max = std::max(right_max, s[k]);
    }
    const double prom = std::min(left_max, right_max) - s[i];
    if (prom > threshold) out.push_back({i, prom});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Minimum& a, const Minimum& b) { return a.prominence > b.prominence; });
  return out;
}

// Parabolic refinement of a sampled minimum.
double refine_minimum(const std::vector<double>& f, const std::vector<double>& s, std::size_t i) {
  if (i == 0 || i + 1 >= s.size()) return f[i];
  const double denom = s[i - 1] - 2.0 * s[i] + s[i + 1];
  if (denom <= 0.0) return f[i];
  const double offset = 0.5 * (s[i - 1] - s[i + 1]) / denom;
  return f[i] + std::clamp(offset, -1.0, 1.0) * (f[i + 1] - f[i]);
}

std::size_t nearest_index(const std::vector<double>& f, double x) {
  const auto it = std::lower_bound(f.begin(), f.end(), x);
  if (it == f.begin()) return 0;
  if (it == f.end()) return f.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - f.begin());
  return (x - f[hi - 1] <= f[hi] - x) ? hi - 1 : hi;
}

double half_depth_width(const std::vector<double>& f, const std::vector<double>& s, std::size_t i,
                        double baseline) {
  const double half = s[i] + 0.5 * (baseline - s[i]);
  std::size_t lo = i, hi = i;
  while (lo > 0 && s[lo] < half) --lo;
  while (hi + 1 < s.size() && s[hi] < half) ++hi;
  return std::max(f[hi] - f[lo], 2.0 * (f.size() > 1 ? f[1] - f[0] : 1.0));
}

}  // namespace

std::vector<double> FrequencyGrid::points() const {
  if (!(step_mhz > 0.0) || !(stop_mhz > start_mhz) || !std::isfinite(start_mhz) || !std::isfinite(stop_mhz)) {
    fail(ErrorKind::kInvalidInput, "frequency grid needs start < stop and a positive step");
  }
  const auto n = static_cast<std::size_t>(std::floor((stop_mhz - start_mhz) / step_mhz + 1e-9)) + 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = start_mhz + static_cast<double>(i) * step_mhz;
  return out;
}

void OdmrSpectrum::validate() const {
  if (frequencies.size() != contrast.size()) {
    fail(ErrorKind::kInvalidInput, "spectrum: frequency and contrast lengths differ");
  }
  if (frequencies.size() < 3) fail(ErrorKind::kInvalidInput, "spectrum: need at least 3 points");
  for (std::size_t i = 0; i < frequencies.size(); ++i) {
    if (!std::isfinite(frequencies[i]) || !std::isfinite(contrast[i])) {
      fail(ErrorKind::kInvalidInput, "spectrum: non-finite value at row " + std::to_string(i));
    }
    if (i > 0 && !(frequencies[i] > frequencies[i - 1])) {
      fail(ErrorKind::kInvalidInput, "spectrum: frequencies not strictly increasing at row " + std::to_string(i));
    }
  }
}

std::vector<Resonance> resonance_lines(const AxesSet& axes, const FieldVector& b_total, const PhysicalConstants& c) {
  const double mag = b_total.norm();
  std::vector<Resonance> out;
  out.reserve(8);
  for (int j = 0; j < 4; ++j) {
    const SpinLevels lv = solve_levels(b_total.dot(axes.n[j]), mag, c);
    out.push_back({lv.lower_transition(), j, -1});
    out.push_back({lv.upper_transition(), j, +1});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Resonance& a, const Resonance& b) { return a.frequency_mhz < b.frequency_mhz; });
  return out;
}

FrequencyGrid auto_grid(const std::vector<double>& centers, double linewidth_fwhm, double margin_fwhm,
                        double points_per_fwhm) {
  if (centers.empty()) fail(ErrorKind::kInvalidInput, "auto_grid: no lines");
  const auto [lo, hi] = std::minmax_element(centers.begin(), centers.end());
  return FrequencyGrid{*lo - margin_fwhm * linewidth_fwhm, *hi + margin_fwhm * linewidth_fwhm,
                       linewidth_fwhm / points_per_fwhm};
}

double lorentzian_dip(double f, double center, double depth, double fwhm) {
  const double g = 0.5 * fwhm;
  const double d = f - center;
  return depth * g * g / (d * d + g * g);
}

SynthesizedSpectrum synthesize_with_truth(const AxesSet& axes, const FieldVector& b_total,
                                          const SynthesisOptions& opts, const PhysicalConstants& c) {
  if (!(opts.linewidth_fwhm > 0.0)) fail(ErrorKind::kInvalidInput, "synthesize: linewidth must be positive");
  if (!b_total.allFinite()) fail(ErrorKind::kInvalidInput, "synthesize: non-finite field");

  std::mt19937_64 rng(opts.noise.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> parents;
  for (const auto& r : resonance_lines(axes, b_total, c)) parents.push_back(r.frequency_mhz);
  if (opts.noise.mode == NoiseMode::kFrequency) {
    for (double& f : parents) f += opts.noise.amplitude * gauss(rng);
  }
  std::vector<double> centers;
  if (opts.hyperfine) {
    for (double f : parents) {
      centers.push_back(f - 0.5 * c.hyperfine_pair_sep);
      centers.push_back(f + 0.5 * c.hyperfine_pair_sep);
    }
  } else {
    centers = parents;
  }
  std::sort(centers.begin(), centers.end());

  const FrequencyGrid grid = opts.grid ? *opts.grid : auto_grid(centers, opts.linewidth_fwhm);
  SynthesizedSpectrum out;
  out.spectrum.frequencies = grid.points();
  const double f_lo = out.spectrum.frequencies.front();
  const double f_hi = out.spectrum.frequencies.back();
  std::ostringstream outside;
  for (double f : centers) {
    if (f < f_lo || f > f_hi) outside << ' ' << f;
  }
  if (!outside.str().empty()) {
    fail(ErrorKind::kInvalidInput, "synthesize: resonances outside the grid [" + std::to_string(f_lo) + ", " +
                                       std::to_string(f_hi) + "] MHz:" + outside.str());
  }

  out.spectrum.contrast.assign(out.spectrum.frequencies.size(), 1.0);
  for (std::size_t i = 0; i < out.spectrum.frequencies.size(); ++i) {
    double dip = 0.0;
    for (double f0 : centers) dip += lorentzian_dip(out.spectrum.frequencies[i], f0, opts.peak_contrast, opts.linewidth_fwhm);
    out.spectrum.contrast[i] -= dip;
  }
  if (opts.noise.mode == NoiseMode::kAmplitude) {
    for (double& y : out.spectrum.contrast) y += opts.noise.amplitude * gauss(rng);
  }
  out.spectrum.meta = SpectrumMeta{opts.bias_id, opts.linewidth_fwhm, opts.noise.seed};
  out.centers = std::move(centers);
  return out;
}

OdmrSpectrum synthesize(const AxesSet& axes, const FieldVector& b_total, const SynthesisOptions& opts,
                        const PhysicalConstants& c) {
  return synthesize_with_truth(axes, b_total, opts, c).spectrum;
}

std::vector<double> detect_minima(const OdmrSpectrum& spectrum, const FitOptions& opts) {
  spectrum.validate();
  const double step = grid_step(spectrum);
  const int half = smoothing_half_window(spectrum, opts, step);
  const std::vector<double> s = smooth(spectrum.contrast, half);
  const double sigma = raw_noise_sigma(spectrum.contrast) / std::sqrt(2.0 * half + 1.0);
  const double threshold = std::max(opts.prominence_sigma * sigma, 1e-12);
  std::vector<double> out;
  for (const auto& m : find_minima(s, threshold)) out.push_back(refine_minimum(spectrum.frequencies, s, m.index));
  return out;
}

namespace {

// Least-squares fit of baseline - sum of Lorentzian dips. With pair_sep > 0
// every center carries two equal dips at +-pair_sep/2.
PeakSet fit_dips(const OdmrSpectrum& spectrum, std::vector<double> guesses, double pair_sep, const FitOptions& opts,
                 const char* who) {
  const auto& f = spectrum.frequencies;
  const auto& y = spectrum.contrast;
  const std::size_t n_pts = f.size();
  const double step = grid_step(spectrum);
  std::sort(guesses.begin(), guesses.end());

  const int half = smoothing_half_window(spectrum, opts, step);
  const std::vector<double> s = smooth(y, half);
  const double baseline = median(y);
  const int k_peaks = static_cast<int>(guesses.size());
  const Eigen::Index n_par = 1 + 3 * k_peaks;
  const double h = 0.5 * pair_sep;
  const int n_comp = pair_sep > 0.0 ? 2 : 1;
  const double offsets[2] = {pair_sep > 0.0 ? -h : 0.0, h};
  Eigen::VectorXd x(n_par);
  x(0) = baseline;
  for (int k = 0; k < k_peaks; ++k) {
    const std::size_t i = nearest_index(f, guesses[k] + offsets[0]);
    const double fwhm = spectrum.meta.linewidth_mhz > 0.0 ? spectrum.meta.linewidth_mhz
                                                          : half_depth_width(f, s, i, baseline);
    x(1 + 3 * k) = guesses[k];
    x(2 + 3 * k) = std::max(baseline - s[i], 1e-6) / n_comp;
    x(3 + 3 * k) = 0.5 * fwhm;
  }

  const double min_hwhm = 0.05 * step;
  LeastSquaresProblem problem;
  problem.num_residuals = static_cast<Eigen::Index>(n_pts);
  problem.residuals = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
    for (std::size_t i = 0; i < n_pts; ++i) {
      double model = p(0);
      for (int k = 0; k < k_peaks; ++k) {
        const double g = p(3 + 3 * k);
        for (int m = 0; m < n_comp; ++m) {
          const double d = f[i] - p(1 + 3 * k) - offsets[m];
          model -= p(2 + 3 * k) * g * g / (d * d + g * g);
        }
      }
      r(static_cast<Eigen::Index>(i)) = model - y[i];
    }
  };
  problem.jacobian = [&](const Eigen::VectorXd& p, Eigen::MatrixXd& jac) {
    jac.setZero(static_cast<Eigen::Index>(n_pts), n_par);
    jac.col(0).setOnes();
    for (int k = 0; k < k_peaks; ++k) {
      const double c0 = p(1 + 3 * k), a = p(2 + 3 * k), g = p(3 + 3 * k);
      for (std::size_t i = 0; i < n_pts; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        for (int m = 0; m < n_comp; ++m) {
          const double d = f[i] - c0 - offsets[m];
          const double den = d * d + g * g;
          const double den2 = den * den;
          jac(row, 1 + 3 * k) -= a * 2.0 * g * g * d / den2;
          jac(row, 2 + 3 * k) -= g * g / den;
          jac(row, 3 + 3 * k) -= a * 2.0 * g * d * d / den2;
        }
      }
    }
  };
  problem.project = [&](Eigen::VectorXd& p) {
    for (int k = 0; k < k_peaks; ++k) {
      p(2 + 3 * k) = std::max(p(2 + 3 * k), 1e-12);
      p(3 + 3 * k) = std::max(p(3 + 3 * k), min_hwhm);
    }
  };

  LeastSquaresOptions lso;
  lso.max_iter = 300;
  lso.cost_tol = 1e-14;
  const LeastSquaresSummary sum = levenberg_marquardt(problem, x, lso);
  if (!sum.converged() || !sum.x.allFinite()) {
    fail(ErrorKind::kFitFailure, std::string(who) + ": least-squares fit did not converge (" + to_string(sum.reason) + ")");
  }
  const Eigen::MatrixXd cov = gauss_newton_covariance(sum.jacobian, sum.cost);

  PeakSet out;
  for (int k = 0; k < k_peaks; ++k) {
    const double center = sum.x(1 + 3 * k);
    if (center < f.front() || center > f.back()) {
      fail(ErrorKind::kFitFailure, std::string(who) + ": fitted center " + std::to_string(center) + " MHz left the grid");
    }
    const Eigen::Index ic = 1 + 3 * k;
    out.peaks.push_back(Peak{center, std::sqrt(std::max(0.0, cov(ic, ic))), sum.x(2 + 3 * k), 2.0 * sum.x(3 + 3 * k)});
  }
  std::sort(out.peaks.begin(), out.peaks.end(), [](const Peak& a, const Peak& b) { return a.center < b.center; });
  return out;
}

[[noreturn]] void too_few_minima(const char* who, const std::vector<double>& found, int expected) {
  std::ostringstream os;
  os << who << ": found " << found.size() << " resolvable minima, expected " << expected << " (at";
  for (double m : found) os << ' ' << m;
  os << " MHz)";
  fail(ErrorKind::kFitFailure, os.str());
}

std::vector<double> checked_guesses(const std::optional<std::vector<double>>& initial_guesses, int expected,
                                    const char* who) {
  if (static_cast<int>(initial_guesses->size()) != expected) {
    fail(ErrorKind::kInvalidInput, std::string(who) + ": initial guess count does not match the expected count");
  }
  return *initial_guesses;
}

}  // namespace

PeakSet fit_peaks(const OdmrSpectrum& spectrum, int expected_count,
                  const std::optional<std::vector<double>>& initial_guesses, const FitOptions& opts) {
  spectrum.validate();
  if (expected_count < 1) fail(ErrorKind::kInvalidInput, "fit_peaks: expected_count must be >= 1");
  std::vector<double> guesses;
  if (initial_guesses) {
    guesses = checked_guesses(initial_guesses, expected_count, "fit_peaks");
  } else {
    const std::vector<double> found = detect_minima(spectrum, opts);
    if (static_cast<int>(found.size()) < expected_count) too_few_minima("fit_peaks", found, expected_count);
    guesses.assign(found.begin(), found.begin() + expected_count);
  }
  return fit_dips(spectrum, std::move(guesses), 0.0, opts, "fit_peaks");
}

PeakSet fit_doublets(const OdmrSpectrum& spectrum, int parent_count, double pair_sep,
                     const std::optional<std::vector<double>>& initial_guesses, const FitOptions& opts) {
  spectrum.validate();
  if (parent_count < 1) fail(ErrorKind::kInvalidInput, "fit_doublets: parent_count must be >= 1");
  if (!(pair_sep > 0.0)) fail(ErrorKind::kInvalidInput, "fit_doublets: pair_sep must be positive");
  std::vector<double> guesses;
  if (initial_guesses) {
    guesses = checked_guesses(initial_guesses, parent_count, "fit_doublets");
  } else {
    // Matched filter: summing the dip depth at f - sep/2 and f + sep/2 turns
    // each doublet into one dip at its center with twice the depth of the
    // side lobes it leaves at +-sep.
    const auto& f = spectrum.frequencies;
    const auto& y = spectrum.contrast;
    const double baseline = median(y);
    auto depth_at = [&](double q) {
      if (q <= f.front() || q >= f.back()) return 0.0;
      const auto it = std::upper_bound(f.begin(), f.end(), q);
      const std::size_t i = static_cast<std::size_t>(it - f.begin());
      const double t = (q - f[i - 1]) / (f[i] - f[i - 1]);
      return baseline - ((1.0 - t) * y[i - 1] + t * y[i]);
    };
    OdmrSpectrum filtered = spectrum;
    for (std::size_t i = 0; i < f.size(); ++i) {
      filtered.contrast[i] = baseline - depth_at(f[i] - 0.5 * pair_sep) - depth_at(f[i] + 0.5 * pair_sep);
    }
    const std::vector<double> found = detect_minima(filtered, opts);
    if (static_cast<int>(found.size()) < parent_count) too_few_minima("fit_doublets", found, parent_count);
    guesses.assign(found.begin(), found.begin() + parent_count);
  }
  return fit_dips(spectrum, std::move(guesses), pair_sep, opts, "fit_doublets");
}

MergeResult merge_hyperfine(const PeakSet& peaks, double pair_sep, double tol, bool strict) {
  const auto& p = peaks.peaks;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i].center < p[i - 1].center) fail(ErrorKind::kInvalidInput, "merge_hyperfine: peaks must be sorted");
  }
  std::vector<bool> used(p.size(), false);
  std::vector<std::pair<Peak, bool>> merged;  // (peak, paired)
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (used[i]) continue;
    std::size_t partner = p.size();
    double best = tol;
    for (std::size_t k = i + 1; k < p.size(); ++k) {
      if (used[k]) continue;
      const double miss = std::abs((p[k].center - p[i].center) - pair_sep);
      if (miss <= best) {
        best = miss;
        partner = k;
      }
      if (p[k].center - p[i].center > pair_sep + tol) break;
    }
    used[i] = true;
    if (partner == p.size()) {
      merged.push_back({p[i], false});
      continue;
    }
    used[partner] = true;
    const Peak& a = p[i];
    const Peak& b = p[partner];
    merged.push_back({Peak{0.5 * (a.center + b.center), 0.5 * std::hypot(a.uncertainty, b.uncertainty),
                           0.5 * (a.depth + b.depth), 0.5 * (a.width + b.width)},
                      true});
  }
  std::stable_sort(merged.begin(), merged.end(),
                   [](const auto& a, const auto& b) { return a.first.center < b.first.center; });
  MergeResult out;
  for (std::size_t i = 0; i < merged.size(); ++i) {
    out.peaks.peaks.push_back(merged[i].first);
    if (!merged[i].second) out.unpaired.push_back(i);
  }
  if (strict && !out.unpaired.empty()) {
    fail(ErrorKind::kFitFailure, "merge_hyperfine: " + std::to_string(out.unpaired.size()) +
                                     " peak(s) left without a partner at " + std::to_string(pair_sep) + " MHz");
  }
  return out;
}

namespace {

using Pairing = std::array<std::pair<int, int>, 4>;

// Whether every pair of a pairing matches the level model: the pair midpoint
// has to sit where the splitting puts it at the row's |B|.
bool pairing_consistent(const std::vector<Peak>& c, const Pairing& pairing, const PhysicalConstants& pc) {
  SplittingTable t(1);
  for (int k = 0; k < 4; ++k) t.s(0, k) = std::abs(c[pairing[k].second].center - c[pairing[k].first].center);
  MagnitudeOptions mo;
  mo.consistency_mhz = std::numeric_limits<double>::infinity();
  double mag = 0.0;
  try {
    mag = estimate_total_magnitudes(t, pc, mo)[0];
  } catch (const Error&) {
    return false;
  }
  double mid_obs[4];
  double mid_model[4];
  for (int k = 0; k < 4; ++k) {
    const Peak& lo = c[pairing[k].first];
    const Peak& hi = c[pairing[k].second];
    const double p = invert_splitting(t.s(0, k), mag, pc);
    const SpinLevels lv = solve_levels(p, mag, pc);
    mid_obs[k] = 0.5 * (lo.center + hi.center);
    mid_model[k] = 0.5 * (lv.lower_transition() + lv.upper_transition());
  }
  // Midpoints relative to the first pair, so a common offset in D does not matter.
  for (int k = 1; k < 4; ++k) {
    const double sig = std::sqrt(c[pairing[k].first].uncertainty * c[pairing[k].first].uncertainty +
                                 c[pairing[k].second].uncertainty * c[pairing[k].second].uncertainty +
                                 c[pairing[0].first].uncertainty * c[pairing[0].first].uncertainty +
                                 c[pairing[0].second].uncertainty * c[pairing[0].second].uncertainty);
    const double miss = std::abs((mid_obs[k] - mid_obs[0]) - (mid_model[k] - mid_model[0]));
    if (miss > 3.0 * sig + 1e-6 + 0.5 * std::abs(mid_model[k] - mid_model[0]) * 1e-3) return false;
  }
  return true;
}

}  // namespace

SplittingRow splittings_from_peaks(const PeakSet& peaks) {
  if (peaks.peaks.size() != 8) {
    fail(ErrorKind::kInvalidInput,
         "splittings_from_peaks: need exactly 8 centers, got " + std::to_string(peaks.peaks.size()));
  }
  std::vector<Peak> c = peaks.peaks;
  std::sort(c.begin(), c.end(), [](const Peak& a, const Peak& b) { return a.center < b.center; });
  SplittingRow row;
  Pairing symmetric{};
  for (int k = 0; k < 4; ++k) {
    symmetric[k] = {k, 7 - k};
    row.s[k] = c[7 - k].center - c[k].center;
    row.sigma[k] = std::hypot(c[7 - k].uncertainty, c[k].uncertainty);
  }
  // Alternatives: swap two neighbouring lines on one side of the center.
  const PhysicalConstants pc;
  for (int side = 0; side < 2 && !row.ambiguous; ++side) {
    for (int k = 0; k < 3 && !row.ambiguous; ++k) {
      Pairing alt = symmetric;
      if (side == 0) {
        std::swap(alt[k].first, alt[k + 1].first);
      } else {
        std::swap(alt[k].second, alt[k + 1].second);
      }
      row.ambiguous = pairing_consistent(c, alt, pc);
    }
  }
  return row;
}

SplittingTable make_table(const std::vector<SplittingRow>& rows) {
  SplittingTable t(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < 4; ++j) {
      t.s(static_cast<Eigen::Index>(i), j) = rows[i].s[j];
      t.sigma(static_cast<Eigen::Index>(i), j) = rows[i].sigma[j];
    }
  }
  return t;
}

}  // namespace nvmag
