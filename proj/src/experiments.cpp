#include "nvmag/experiments.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "nvmag/error.hpp"
#include "nvmag/parallel.hpp"

namespace nvmag {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::vector<FieldVector> fibonacci_pool(int n, double mag_lo, double mag_hi, int stride) {
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<FieldVector> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(1.0 - z * z);
    const double phi = golden * i;
    // Magnitudes visit the range in a scrambled order so they do not follow z.
    const double mag = mag_lo + (mag_hi - mag_lo) * static_cast<double>((i * stride) % n) / (n - 1);
    out.push_back(mag * FieldVector(r * std::cos(phi), r * std::sin(phi), z));
  }
  return out;
}

double min_line_gap(const GroundTruth& truth, const FieldVector& bias) {
  const auto lines = resonance_lines(truth.axes, bias + truth.b_loc);
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < lines.size(); ++i) gap = std::min(gap, lines[i].frequency_mhz - lines[i - 1].frequency_mhz);
  return gap;
}

// n directions from a 4n-point Fibonacci candidate set whose eight lines are
// at least min_gap_mhz apart for the given truth, picked by farthest-point
// sampling so that every prefix of the pool is well spread.
std::vector<FieldVector> resolved_pool(const GroundTruth& truth, int n, double mag_lo, double mag_hi, int stride,
                                       double min_gap_mhz) {
  std::vector<FieldVector> cand;
  for (const auto& b : fibonacci_pool(4 * n, mag_lo, mag_hi, stride)) {
    if (min_line_gap(truth, b) >= min_gap_mhz) cand.push_back(b);
  }
  if (static_cast<int>(cand.size()) < n) fail(ErrorKind::kInvalidInput, "resolved_pool: too few resolvable directions");
  std::vector<FieldVector> out{cand.front()};
  std::vector<double> nearest(cand.size(), std::numeric_limits<double>::infinity());
  std::vector<bool> used(cand.size(), false);
  used[0] = true;
  std::size_t last = 0;
  while (static_cast<int>(out.size()) < n) {
    std::size_t pick = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (used[i]) continue;
      nearest[i] = std::min(nearest[i], angle_between(cand[i], cand[last]));
      if (nearest[i] > best) {
        best = nearest[i];
        pick = i;
      }
    }
    used[pick] = true;
    last = pick;
    out.push_back(cand[pick]);
  }
  return out;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

bool subset_ok(const std::vector<FieldVector>& pts) {
  if (pts.size() >= 4) return is_non_coplanar(pts);
  if (pts.size() == 3) return is_non_collinear(pts);
  return true;
}

SweepResult run_cells(const SweepConfig& config, SweepKind kind, std::vector<CellKey> keys) {
  config.validate();
  SweepResult out;
  out.kind = kind;
  out.config = config;
  const auto per_cell = static_cast<std::size_t>(config.trials_per_cell);
  out.trials.resize(keys.size() * per_cell);
  parallel_for(out.trials.size(), config.threads, [&](std::size_t item) {
    const std::size_t cell = item / per_cell;
    TrialRecord rec = run_trial(config, keys[cell], static_cast<int>(item % per_cell));
    rec.cell = cell;
    out.trials[item] = std::move(rec);
  });
  for (std::size_t cell = 0; cell < keys.size(); ++cell) {
    const std::vector<TrialRecord> members(out.trials.begin() + static_cast<std::ptrdiff_t>(cell * per_cell),
                                           out.trials.begin() + static_cast<std::ptrdiff_t>((cell + 1) * per_cell));
    out.cells.push_back(CellResult{keys[cell], compute_cell_stats(members)});
  }
  return out;
}

}  // namespace

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::kBulk: return "bulk";
    case Scenario::kNanodiamond: return "nanodiamond";
    case Scenario::kCustom: return "custom";
  }
  return "custom";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "bulk") return Scenario::kBulk;
  if (s == "nanodiamond") return Scenario::kNanodiamond;
  if (s == "custom") return Scenario::kCustom;
  fail(ErrorKind::kInvalidInput, "unknown scenario '" + s + "' (expected bulk, nanodiamond or custom)");
}

std::string to_string(SweepKind k) {
  switch (k) {
    case SweepKind::kNoise: return "noise";
    case SweepKind::kScaling: return "scaling";
    case SweepKind::kSaturation: return "saturation";
  }
  return "noise";
}

GroundTruth bulk_ground_truth() { return GroundTruth{hundred_cut_axes(), FieldVector(0.009, -0.017, -0.050)}; }

GroundTruth nanodiamond_ground_truth() {
  return GroundTruth{axes_from_params(OrientationParams{0.7, 1.3, 2.1}), FieldVector(-0.007, -0.033, -0.007)};
}

std::vector<FieldVector> bulk_pool() {
  return resolved_pool(bulk_ground_truth(), 28, 0.95, 1.05, 11, 2.0 * kBulkLinewidthMhz);
}

std::vector<FieldVector> nanodiamond_pool() {
  return resolved_pool(nanodiamond_ground_truth(), 34, 5.0, 10.0, 13, 2.0 * kNanodiamondLinewidthMhz);
}

void SweepConfig::validate() const {
  if (noise_levels.empty() || field_counts.empty() || bias_pool.empty() || bias_scaling.empty()) {
    fail(ErrorKind::kInvalidInput, "sweep config: noise_levels, field_counts, bias_pool and bias_scaling must be nonempty");
  }
  if (trials_per_cell < 2) fail(ErrorKind::kInvalidInput, "sweep config: trials_per_cell must be >= 2");
  for (double n : noise_levels) {
    if (!(n >= 0.0) || !std::isfinite(n)) fail(ErrorKind::kInvalidInput, "sweep config: noise levels must be >= 0");
  }
  for (int k : field_counts) {
    if (k < 1 || k > static_cast<int>(bias_pool.size())) {
      fail(ErrorKind::kInvalidInput, "sweep config: field count " + std::to_string(k) + " outside 1.." +
                                         std::to_string(bias_pool.size()));
    }
  }
  for (double s : bias_scaling) {
    if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorKind::kInvalidInput, "sweep config: bias scaling must be positive");
  }
  for (const auto& b : bias_pool) {
    if (!b.allFinite()) fail(ErrorKind::kInvalidInput, "sweep config: non-finite bias field in pool");
  }
  if (!ground_truth.axes.is_valid()) fail(ErrorKind::kInvalidInput, "sweep config: ground-truth axes are not tetrahedral");
  if (noise_mode == NoiseMode::kAmplitude && !(linewidth_mhz > 0.0)) {
    fail(ErrorKind::kInvalidInput, "sweep config: amplitude mode needs a positive linewidth");
  }
  reconstruction.validate();
}

SweepConfig SweepConfig::preset(Scenario scenario) {
  SweepConfig cfg;
  cfg.scenario = scenario;
  if (scenario == Scenario::kNanodiamond) {
    cfg.noise_levels = {1.0, 2.0, 3.0, 4.0, 5.0};
    for (int k = 4; k <= 20; ++k) cfg.field_counts.push_back(k);
    cfg.bias_pool = nanodiamond_pool();
    cfg.ground_truth = nanodiamond_ground_truth();
    cfg.linewidth_mhz = kNanodiamondLinewidthMhz;
  } else {
    cfg.noise_levels = {0.1, 0.2, 0.3, 0.4, 0.5};
    for (int k = 4; k <= 10; ++k) cfg.field_counts.push_back(k);
    cfg.bias_pool = bulk_pool();
    cfg.ground_truth = bulk_ground_truth();
    cfg.linewidth_mhz = kBulkLinewidthMhz;
  }
  return cfg;
}

SubsetSample sample_subsets(const std::vector<FieldVector>& pool, int k, int n, std::uint64_t seed) {
  if (k < 1 || n < 0) fail(ErrorKind::kInvalidInput, "sample_subsets: need k >= 1 and n >= 0");
  if (k > static_cast<int>(pool.size())) {
    fail(ErrorKind::kInvalidInput, "sample_subsets: pool of " + std::to_string(pool.size()) +
                                       " fields is too small for subsets of " + std::to_string(k));
  }
  std::mt19937_64 rng(seed);
  SubsetSample out;
  std::vector<int> idx(pool.size());
  const long max_attempts = 100L * n + 100;
  long attempts = 0;
  while (static_cast<int>(out.subsets.size()) < n) {
    if (++attempts > max_attempts) {
      fail(ErrorKind::kInvalidInput, "sample_subsets: " + std::to_string(out.rejections) + " of " +
                                         std::to_string(attempts - 1) +
                                         " draws rejected as coplanar/collinear; pool cannot supply valid subsets");
    }
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first k entries are a uniform draw.
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<int> pick(i, static_cast<int>(idx.size()) - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    std::vector<int> subset(idx.begin(), idx.begin() + k);
    std::sort(subset.begin(), subset.end());
    std::vector<FieldVector> pts;
    for (int i : subset) pts.push_back(pool[static_cast<std::size_t>(i)]);
    if (!subset_ok(pts)) {
      ++out.rejections;
      continue;
    }
    out.subsets.push_back(std::move(subset));
  }
  return out;
}

std::uint64_t trial_seed(std::uint64_t master, const CellKey& key, int trial) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ std::bit_cast<std::uint64_t>(key.noise));
  h = splitmix64(h ^ static_cast<std::uint64_t>(key.count));
  h = splitmix64(h ^ std::bit_cast<std::uint64_t>(key.scaling));
  return splitmix64(h ^ static_cast<std::uint64_t>(trial));
}

TrialRecord run_trial(const SweepConfig& config, const CellKey& key, int trial) {
  TrialRecord rec;
  rec.trial = trial;
  rec.seed = trial_seed(config.rng_seed, key, trial);
  const PhysicalConstants c;
  const GroundTruth& truth = config.ground_truth;
  try {
    std::vector<FieldVector> pool = config.bias_pool;
    for (auto& b : pool) b *= key.scaling;
    const SubsetSample draw = sample_subsets(pool, key.count, 1, rec.seed);
    rec.subset = draw.subsets.front();
    rec.rejections = draw.rejections;

    std::vector<FieldVector> bias;
    for (int i : rec.subset) bias.push_back(pool[static_cast<std::size_t>(i)]);
    SplittingTable table(static_cast<Eigen::Index>(bias.size()));
    std::mt19937_64 rng(splitmix64(rec.seed + 1));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < bias.size(); ++i) {
      const FieldVector total = bias[i] + truth.b_loc;
      std::array<double, 4> s{};
      std::array<double, 4> sig{};
      if (config.noise_mode == NoiseMode::kAmplitude) {
        SynthesisOptions so;
        so.linewidth_fwhm = config.linewidth_mhz;
        so.noise = NoiseSpec{NoiseMode::kAmplitude, key.noise, rng()};
        so.bias_id = static_cast<int>(i);
        const SplittingRow row = splittings_from_peaks(fit_peaks(synthesize(truth.axes, total, so, c), 8));
        s = row.s;
        sig = row.sigma;
      } else {
        std::array<double, 4> lo{}, hi{};
        for (const auto& line : resonance_lines(truth.axes, total, c)) {
          const double f = line.frequency_mhz + key.noise * gauss(rng);
          (line.branch < 0 ? lo : hi)[static_cast<std::size_t>(line.axis)] = f;
        }
        for (int j = 0; j < 4; ++j) {
          s[j] = std::abs(hi[j] - lo[j]);
          sig[j] = key.noise * std::sqrt(2.0);
        }
        std::sort(s.begin(), s.end(), std::greater<>());
      }
      for (int j = 0; j < 4; ++j) {
        table.s(static_cast<Eigen::Index>(i), j) = s[j];
        table.sigma(static_cast<Eigen::Index>(i), j) = sig[j];
      }
    }

    ReconstructionConfig rc = config.reconstruction;
    rc.rng_seed = rec.seed;
    rc.threads = 1;
    const ReconstructionResult res = reconstruct(table, bias, rc, c);
    const AxesMatch m = match_axes(res.best.axes(), truth.axes);
    rec.b_loc = res.best.b_loc;
    rec.cost = res.best.cost;
    rec.axes = m.apply(res.best.axes());
    rec.b_error = (res.best.b_loc - truth.b_loc).norm();
    rec.axis_error = m.mean_dgc;
    rec.success = true;
  } catch (const Error& e) {
    rec.success = false;
    rec.error = e.what();
  }
  return rec;
}

CellStats compute_cell_stats(const std::vector<TrialRecord>& trials) {
  CellStats st;
  st.trials = static_cast<int>(trials.size());
  std::vector<FieldVector> fields;
  std::vector<AxesSet> axes;
  std::vector<double> b_err, ax_err;
  for (const auto& t : trials) {
    if (!t.success) continue;
    fields.push_back(t.b_loc);
    axes.push_back(t.axes);
    b_err.push_back(t.b_error);
    ax_err.push_back(t.axis_error);
  }
  st.successes = static_cast<int>(fields.size());
  st.complete = 5 * st.successes >= 4 * st.trials;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (fields.empty()) {
    st.delta_b = FieldVector::Constant(nan);
    st.delta_b_norm = nan;
  } else {
    st.delta_b = delta_b(fields);
    st.delta_b_norm = st.delta_b.norm();
  }
  st.dgc.fill(nan);
  st.mean_dgc = nan;
  if (axes.size() >= 2) {
    try {
      st.dgc = axes_dispersion(axes);
      st.mean_dgc = 0.25 * (st.dgc[0] + st.dgc[1] + st.dgc[2] + st.dgc[3]);
    } catch (const Error&) {
      // Left as NaN: the matched axes do not define a mean direction.
    }
  }
  st.mean_b_error = mean_of(b_err);
  st.median_b_error = median_of(b_err);
  st.mean_axis_error = mean_of(ax_err);
  st.median_axis_error = median_of(ax_err);
  return st;
}

SweepResult run_noise_sweep(const SweepConfig& config) {
  std::vector<CellKey> keys;
  for (double n : config.noise_levels) {
    for (int k : config.field_counts) keys.push_back(CellKey{n, k, config.bias_scaling.front()});
  }
  return run_cells(config, SweepKind::kNoise, std::move(keys));
}

SweepResult run_bias_scaling_sweep(const SweepConfig& config) {
  std::vector<CellKey> keys;
  for (double n : config.noise_levels) {
    for (double s : config.bias_scaling) keys.push_back(CellKey{n, config.field_counts.front(), s});
  }
  return run_cells(config, SweepKind::kScaling, std::move(keys));
}

SweepResult run_saturation_study(const SweepConfig& config) {
  std::vector<CellKey> keys;
  for (int k : config.field_counts) keys.push_back(CellKey{config.noise_levels.front(), k, config.bias_scaling.front()});
  return run_cells(config, SweepKind::kSaturation, std::move(keys));
}

std::vector<double> relative_improvement(const SweepResult& result) {
  std::vector<double> out;
  if (result.cells.empty()) return out;
  const double base = result.cells.front().stats.delta_b_norm;
  for (const auto& cell : result.cells) out.push_back(cell.stats.delta_b_norm / base);
  return out;
}

DegeneracyDemo degeneracy_demo(int n_fields, const GroundTruth& truth, const std::vector<FieldVector>& pool,
                               const PhysicalConstants& c, std::uint64_t seed) {
  if (n_fields < 1 || n_fields > 4) fail(ErrorKind::kInvalidInput, "degeneracy_demo: n_fields must be in 1..4");
  if (static_cast<int>(pool.size()) < n_fields) {
    fail(ErrorKind::kInvalidInput, "degeneracy_demo: pool has fewer than " + std::to_string(n_fields) + " fields");
  }
  DegeneracyDemo out;
  out.bias_fields.assign(pool.begin(), pool.begin() + n_fields);
  std::vector<SphereConstraint> spheres;
  double reach = 0.0;
  for (const auto& b : out.bias_fields) {
    spheres.push_back(SphereConstraint::from_bias(b, (b + truth.b_loc).norm()));
    reach = std::max(reach, b.norm());
  }
  out.geometry = resolve_unique(spheres);

  SplittingTable table(n_fields);
  table.s = calculated_splittings(truth.axes, truth.b_loc, out.bias_fields, c);
  ReconstructionConfig rc;
  rc.b_loc_lower = FieldVector::Constant(-2.5 * reach);
  rc.b_loc_upper = FieldVector::Constant(2.5 * reach);
  rc.rng_seed = seed;
  out.reconstruction = reconstruct(table, out.bias_fields, rc, c);
  return out;
}

}  // namespace nvmag
