#include "nvmag/reconstruction.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <tuple>

#include "nvmag/error.hpp"
#include "nvmag/parallel.hpp"

namespace nvmag {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kBaseParams = 6;

std::array<double, 4> sorted_desc(std::array<double, 4> v) {
  std::sort(v.begin(), v.end(), std::greater<>());
  return v;
}

Eigen::MatrixX4d sort_rows_desc(const Eigen::MatrixX4d& s) {
  Eigen::MatrixX4d out(s.rows(), 4);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const auto row = sorted_desc({s(i, 0), s(i, 1), s(i, 2), s(i, 3)});
    for (int j = 0; j < 4; ++j) out(i, j) = row[j];
  }
  return out;
}

std::array<double, 4> model_row_sorted(const AxesSet& axes, const FieldVector& b_total, const PhysicalConstants& c) {
  const double mag = b_total.norm();
  std::array<double, 4> row{};
  for (int j = 0; j < 4; ++j) {
    // |n| = 1, so |p| <= |B| up to rounding; clamp keeps the level solver's precondition.
    const double p = std::clamp(b_total.dot(axes.n[j]), -mag, mag);
    row[j] = splitting(p, mag, c);
  }
  return sorted_desc(row);
}

// Weighted residuals of all rows, written into r (size 4 * rows).
void fill_residuals(const AxesSet& axes, const FieldVector& b_loc, const std::vector<FieldVector>& bias,
                    const Eigen::MatrixX4d& measured_sorted, double sqrt_w, const PhysicalConstants& c,
                    Eigen::VectorXd& r) {
  for (std::size_t i = 0; i < bias.size(); ++i) {
    const auto row = model_row_sorted(axes, bias[i] + b_loc, c);
    const auto ii = static_cast<Eigen::Index>(i);
    for (int j = 0; j < 4; ++j) r(4 * ii + j) = sqrt_w * (measured_sorted(ii, j) - row[j]);
  }
}

double radical_inverse(std::uint64_t index, std::uint64_t base) {
  double inv = 1.0 / static_cast<double>(base);
  double f = inv;
  double out = 0.0;
  while (index > 0) {
    out += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return out;
}

// Halton points with a seeded Cranley-Patterson rotation, in [0, 1)^6.
std::vector<std::array<double, 6>> start_points(int n, std::uint64_t seed) {
  static constexpr std::array<std::uint64_t, 6> kBases{2, 3, 5, 7, 11, 13};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::array<double, 6> shift{};
  for (double& s : shift) s = uni(rng);
  std::vector<std::array<double, 6>> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    for (int d = 0; d < 6; ++d) {
      const double u = radical_inverse(static_cast<std::uint64_t>(k) + 1, kBases[d]) + shift[d];
      out[static_cast<std::size_t>(k)][d] = u - std::floor(u);
    }
  }
  return out;
}

// sum_j max_k (a_j . b_k)^2: 4 for identical axes sets regardless of labels and signs.
double axes_overlap(const AxesSet& a, const AxesSet& b) {
  double total = 0.0;
  for (const auto& u : a.n) {
    double best = 0.0;
    for (const auto& v : b.n) best = std::max(best, u.dot(v) * u.dot(v));
    total += best;
  }
  return total;
}

// Overlap of two axes sets rotated 0.15 rad apart about a generic axis, roughly.
constexpr double kDuplicateOverlap = 3.92;

bool on_bound(const FieldVector& b, const ReconstructionConfig& cfg) {
  for (int k = 0; k < 3; ++k) {
    const double eps = 1e-6 * (cfg.b_loc_upper(k) - cfg.b_loc_lower(k));
    if (b(k) - cfg.b_loc_lower(k) <= eps || cfg.b_loc_upper(k) - b(k) <= eps) return true;
  }
  return false;
}

bool lex_less(const OrientationParams& a, const OrientationParams& b) {
  return std::tie(a.theta1, a.phi1, a.alpha) < std::tie(b.theta1, b.phi1, b.alpha);
}

void check_problem(const SplittingTable& measured, std::size_t n_bias) {
  measured.validate();
  if (measured.rows() == 0) fail(ErrorKind::kInvalidInput, "reconstruct: empty splitting table");
  if (static_cast<std::size_t>(measured.rows()) != n_bias) {
    fail(ErrorKind::kInvalidInput, "reconstruct: " + std::to_string(measured.rows()) + " splitting rows but " +
                                       std::to_string(n_bias) + " bias fields");
  }
}

FitUncertainty uncertainty_from(const Eigen::MatrixXd& jac, double cost_value) {
  const Eigen::MatrixXd cov = gauss_newton_covariance(jac, cost_value);
  FitUncertainty u;
  for (int k = 0; k < 3; ++k) u.angles[k] = std::sqrt(std::max(0.0, cov(k, k)));
  for (int k = 0; k < 3; ++k) u.b_loc(k) = std::sqrt(std::max(0.0, cov(3 + k, 3 + k)));
  return u;
}

}  // namespace

void ReconstructionConfig::validate() const {
  if (n_starts < 1) fail(ErrorKind::kInvalidInput, "reconstruction config: n_starts must be >= 1");
  if (orientation_samples < 1 || candidates_per_seed < 1 || refinements < 0) {
    fail(ErrorKind::kInvalidInput, "reconstruction config: orientation_samples and candidates_per_seed must be >= 1");
  }
  if (!b_loc_lower.allFinite() || !b_loc_upper.allFinite() || (b_loc_upper - b_loc_lower).minCoeff() <= 0.0) {
    fail(ErrorKind::kInvalidInput, "reconstruction config: B_loc bounds must be finite with lower < upper");
  }
  if (!(weight > 0.0) || !std::isfinite(weight)) fail(ErrorKind::kInvalidInput, "reconstruction config: weight must be positive");
  if (max_iter < 1) fail(ErrorKind::kInvalidInput, "reconstruction config: max_iter must be >= 1");
  if (!(fd_step > 0.0)) fail(ErrorKind::kInvalidInput, "reconstruction config: fd_step must be positive");
  if (!(cluster_radius_mt > 0.0) || !(cluster_radius_rad > 0.0)) {
    fail(ErrorKind::kInvalidInput, "reconstruction config: cluster radii must be positive");
  }
}

Eigen::MatrixX4d calculated_splittings(const AxesSet& axes, const FieldVector& b_loc,
                                       const std::vector<FieldVector>& bias_fields, const PhysicalConstants& c) {
  Eigen::MatrixX4d out(static_cast<Eigen::Index>(bias_fields.size()), 4);
  for (std::size_t i = 0; i < bias_fields.size(); ++i) {
    const FieldVector b = bias_fields[i] + b_loc;
    const double mag = b.norm();
    for (int j = 0; j < 4; ++j) {
      out(static_cast<Eigen::Index>(i), j) = splitting(std::clamp(b.dot(axes.n[j]), -mag, mag), mag, c);
    }
  }
  return out;
}

Eigen::MatrixX4d splitting_residuals(const OrientationParams& params, const FieldVector& b_loc,
                                     const std::vector<FieldVector>& bias_fields, const SplittingTable& measured,
                                     const PhysicalConstants& c) {
  check_problem(measured, bias_fields.size());
  const AxesSet axes = axes_from_angles(params.theta1, params.phi1, params.alpha);
  return sort_rows_desc(measured.s) - sort_rows_desc(calculated_splittings(axes, b_loc, bias_fields, c));
}

double cost(const OrientationParams& params, const FieldVector& b_loc, const std::vector<FieldVector>& bias_fields,
            const SplittingTable& measured, double w, const PhysicalConstants& c) {
  return w * splitting_residuals(params, b_loc, bias_fields, measured, c).squaredNorm();
}

Eigen::MatrixXd numerical_jacobian(const OrientationParams& params, const FieldVector& b_loc,
                                   const std::vector<FieldVector>& bias_fields, const SplittingTable& measured,
                                   double w, const PhysicalConstants& c, double step) {
  check_problem(measured, bias_fields.size());
  const Eigen::MatrixX4d ms = sort_rows_desc(measured.s);
  const double sqrt_w = std::sqrt(w);
  const auto m = static_cast<Eigen::Index>(4 * bias_fields.size());
  ResidualFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    fill_residuals(axes_from_angles(x(0), x(1), x(2)), x.tail<3>(), bias_fields, ms, sqrt_w, c, r);
  };
  Eigen::VectorXd x(kBaseParams);
  x << params.theta1, params.phi1, params.alpha, b_loc;
  Eigen::MatrixXd jac;
  central_difference_jacobian(f, x, m, step, jac);
  return jac;
}

ReconstructionResult reconstruct(const SplittingTable& measured, const std::vector<FieldVector>& bias_fields,
                                 const ReconstructionConfig& config, const PhysicalConstants& c) {
  config.validate();
  c.validate();
  check_problem(measured, bias_fields.size());
  for (const auto& b : bias_fields) {
    if (!b.allFinite()) fail(ErrorKind::kInvalidInput, "reconstruct: non-finite bias field");
  }

  const Eigen::MatrixX4d ms = sort_rows_desc(measured.s);
  const double sqrt_w = std::sqrt(config.weight);
  const auto m = static_cast<Eigen::Index>(4 * bias_fields.size());
  auto clamp_b = [&](Eigen::VectorXd& x, Eigen::Index at) {
    for (int k = 0; k < 3; ++k) x(at + k) = std::clamp(x(at + k), config.b_loc_lower(k), config.b_loc_upper(k));
  };

  // B_loc seeds from the orientation-free sphere constraints.
  MagnitudeOptions mo;
  mo.consistency_mhz = std::numeric_limits<double>::infinity();
  const std::vector<double> mags = estimate_total_magnitudes(measured, c, mo);
  LeastSquaresProblem spheres;
  spheres.num_residuals = static_cast<Eigen::Index>(bias_fields.size());
  spheres.residuals = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    for (std::size_t i = 0; i < bias_fields.size(); ++i) {
      r(static_cast<Eigen::Index>(i)) = (bias_fields[i] + x.head<3>()).norm() - mags[i];
    }
  };
  spheres.jacobian = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& jac) {
    jac.resize(static_cast<Eigen::Index>(bias_fields.size()), 3);
    for (std::size_t i = 0; i < bias_fields.size(); ++i) {
      const Eigen::Vector3d v = bias_fields[i] + x.head<3>();
      const double len = v.norm();
      jac.row(static_cast<Eigen::Index>(i)) = len > 0.0 ? Eigen::RowVector3d(v.transpose() / len) : Eigen::RowVector3d::Zero();
    }
  };
  spheres.project = [&](Eigen::VectorXd& x) { clamp_b(x, 0); };
  LeastSquaresOptions sphere_opts;
  sphere_opts.max_iter = 100;

  const auto starts = start_points(config.n_starts, config.rng_seed);
  std::vector<FieldVector> seed_of_start(starts.size());
  parallel_for(starts.size(), config.threads, [&](std::size_t k) {
    Eigen::VectorXd b0(3);
    for (int d = 0; d < 3; ++d) {
      b0(d) = config.b_loc_lower(d) + starts[k][3 + d] * (config.b_loc_upper(d) - config.b_loc_lower(d));
    }
    const LeastSquaresSummary s = levenberg_marquardt(spheres, b0, sphere_opts);
    seed_of_start[k] = s.x.allFinite() ? FieldVector(s.x) : FieldVector(b0);
  });
  std::vector<FieldVector> seeds;
  for (const auto& b : seed_of_start) {
    const bool known = std::any_of(seeds.begin(), seeds.end(), [&](const FieldVector& s) {
      return (s - b).norm() <= config.cluster_radius_mt;
    });
    if (!known) seeds.push_back(b);
  }

  // Orientation screen shared by all seeds.
  const auto samples = start_points(config.orientation_samples, config.rng_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<AxesSet> sample_axes(samples.size());
  std::vector<Eigen::Vector3d> sample_angles(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    sample_angles[k] = Eigen::Vector3d(kPi * samples[k][0], 2.0 * kPi * samples[k][1], 2.0 * kPi * samples[k][2]);
    sample_axes[k] = axes_from_angles(sample_angles[k](0), sample_angles[k](1), sample_angles[k](2));
  }

  LeastSquaresProblem problem;
  problem.num_residuals = m;
  problem.residuals = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    fill_residuals(axes_from_angles(x(0), x(1), x(2)), x.tail<3>(), bias_fields, ms, sqrt_w, c, r);
  };
  problem.project = [&](Eigen::VectorXd& x) { clamp_b(x, 3); };
  LeastSquaresOptions lso;
  lso.max_iter = config.max_iter;
  lso.cost_tol = config.local_solver_tol;
  lso.fd_step = config.fd_step;

  const auto per_seed = static_cast<std::size_t>(config.candidates_per_seed);
  struct Endpoint {
    Solution sol;
    bool converged = false;
    bool used = false;
    StartTrace trace;
  };
  std::vector<Endpoint> ends(seeds.size() * per_seed);
  parallel_for(seeds.size(), config.threads, [&](std::size_t si) {
    const FieldVector& b = seeds[si];
    // Keep the lowest-cost samples; rows are accumulated with an early exit.
    const std::size_t pool = std::min(samples.size(), 128 * per_seed);
    std::vector<std::pair<double, std::size_t>> top;
    top.reserve(pool + 1);
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const double limit = top.size() < pool ? std::numeric_limits<double>::infinity() : top.back().first;
      double acc = 0.0;
      for (std::size_t i = 0; i < bias_fields.size() && acc < limit; ++i) {
        const auto row = model_row_sorted(sample_axes[k], bias_fields[i] + b, c);
        for (int j = 0; j < 4; ++j) {
          const double d = ms(static_cast<Eigen::Index>(i), j) - row[j];
          acc += d * d;
        }
      }
      if (acc >= limit) continue;
      const auto pos = std::upper_bound(top.begin(), top.end(), std::make_pair(acc, k));
      top.insert(pos, {acc, k});
      if (top.size() > pool) top.pop_back();
    }
    // Distinct candidates only: skip samples that describe nearly the same axes set.
    std::vector<std::size_t> chosen;
    for (const auto& [value, k] : top) {
      if (chosen.size() >= per_seed) break;
      const bool duplicate = std::any_of(chosen.begin(), chosen.end(), [&](std::size_t q) {
        return axes_overlap(sample_axes[k], sample_axes[q]) > kDuplicateOverlap;
      });
      if (!duplicate) chosen.push_back(k);
    }
    for (std::size_t ci = 0; ci < chosen.size(); ++ci) {
      Eigen::VectorXd x0(kBaseParams);
      x0 << sample_angles[chosen[ci]], b;
      const LeastSquaresSummary s = levenberg_marquardt(problem, x0, lso);
      Endpoint& e = ends[si * per_seed + ci];
      e.used = true;
      e.converged = s.converged() && s.x.allFinite() && std::isfinite(s.cost);
      e.trace = StartTrace{static_cast<int>(si * per_seed + ci), s.initial_cost, s.cost, s.iterations, s.reason};
      if (e.converged) {
        e.sol.params = wrap_params(s.x(0), s.x(1), s.x(2));
        e.sol.b_loc = s.x.tail<3>();
        e.sol.cost = s.cost;
      }
    }
  });

  // Seeded random refinement: kinks of the sorted-row cost leave local minima
  // next to the global one, so perturb the best endpoint and re-polish.
  if (config.refinements > 0) {
    int best = -1;
    for (std::size_t k = 0; k < ends.size(); ++k) {
      if (ends[k].converged && (best < 0 || ends[k].sol.cost < ends[static_cast<std::size_t>(best)].sol.cost)) {
        best = static_cast<int>(k);
      }
    }
    if (best >= 0) {
      std::mt19937_64 rng(config.rng_seed ^ 0xd1b54a32d192ed03ULL);
      std::normal_distribution<double> gauss(0.0, 1.0);
      Solution current = ends[static_cast<std::size_t>(best)].sol;
      for (int r = 0; r < config.refinements; ++r) {
        Eigen::VectorXd x0(kBaseParams);
        x0 << current.params.theta1 + config.refinement_rad * gauss(rng),
            current.params.phi1 + config.refinement_rad * gauss(rng),
            current.params.alpha + config.refinement_rad * gauss(rng),
            current.b_loc(0) + config.refinement_mt * gauss(rng), current.b_loc(1) + config.refinement_mt * gauss(rng),
            current.b_loc(2) + config.refinement_mt * gauss(rng);
        const LeastSquaresSummary s = levenberg_marquardt(problem, x0, lso);
        Endpoint e;
        e.used = true;
        e.converged = s.converged() && s.x.allFinite() && std::isfinite(s.cost);
        e.trace = StartTrace{static_cast<int>(ends.size()), s.initial_cost, s.cost, s.iterations, s.reason};
        if (e.converged) {
          e.sol.params = wrap_params(s.x(0), s.x(1), s.x(2));
          e.sol.b_loc = s.x.tail<3>();
          e.sol.cost = s.cost;
          if (e.sol.cost < current.cost) current = e.sol;
        }
        ends.push_back(e);
      }
    }
  }

  ReconstructionResult out;
  out.underdetermined = bias_fields.size() < 3;
  std::vector<int> order;
  std::size_t attempted = 0;
  for (std::size_t k = 0; k < ends.size(); ++k) {
    if (!ends[k].used) continue;
    ++attempted;
    out.traces.push_back(ends[k].trace);
    if (ends[k].converged) order.push_back(static_cast<int>(k));
  }
  out.converged_fraction = attempted ? static_cast<double>(order.size()) / static_cast<double>(attempted) : 0.0;
  if (order.empty()) {
    std::ostringstream os;
    os << "reconstruct: none of " << attempted << " local fits converged;";
    for (std::size_t k = 0; k < std::min<std::size_t>(out.traces.size(), 5); ++k) {
      const StartTrace& t = out.traces[k];
      os << " [fit " << t.start << ": " << to_string(t.reason) << ", cost " << t.final_cost << " after "
         << t.iterations << " it]";
    }
    fail(ErrorKind::kNonConvergence, os.str());
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return ends[a].sol.cost < ends[b].sol.cost; });

  const double global_best = ends[order.front()].sol.cost;
  const double tie_tol = std::max(config.tie_relative * global_best, config.tie_absolute);

  struct Group {
    std::vector<int> members;  // ascending cost
    AxesSet axes;
  };
  std::vector<Group> groups;
  for (int k : order) {
    const Solution& s = ends[k].sol;
    const AxesSet ax = axes_from_params(s.params);
    bool placed = false;
    for (auto& g : groups) {
      const Solution& lead = ends[g.members.front()].sol;
      if ((s.b_loc - lead.b_loc).norm() <= config.cluster_radius_mt &&
          match_axes(ax, g.axes).mean_dgc <= config.cluster_radius_rad) {
        g.members.push_back(k);
        placed = true;
        break;
      }
    }
    if (!placed) groups.push_back(Group{{k}, ax});
  }

  for (const auto& g : groups) {
    Cluster cl;
    cl.members = static_cast<int>(g.members.size());
    cl.first_start = *std::min_element(g.members.begin(), g.members.end());
    // Equivalent labelings of one axes set: keep the lexicographically smallest parameters.
    const double lead_cost = ends[g.members.front()].sol.cost;
    const double local_tol = std::max(config.tie_relative * lead_cost, config.tie_absolute);
    const Solution* rep = &ends[g.members.front()].sol;
    for (int k : g.members) {
      const Solution& s = ends[k].sol;
      if (s.cost <= lead_cost + local_tol && lex_less(s.params, rep->params)) rep = &s;
    }
    cl.representative = *rep;
    cl.at_bound = on_bound(rep->b_loc, config);
    out.clusters.push_back(cl);
  }
  std::stable_sort(out.clusters.begin(), out.clusters.end(), [&](const Cluster& a, const Cluster& b) {
    const bool ta = a.representative.cost <= global_best + tie_tol;
    const bool tb = b.representative.cost <= global_best + tie_tol;
    if (ta && tb) return lex_less(a.representative.params, b.representative.params);
    if (ta != tb) return ta;
    return a.representative.cost < b.representative.cost;
  });
  out.tied_clusters = static_cast<int>(std::count_if(out.clusters.begin(), out.clusters.end(), [&](const Cluster& cl) {
    return cl.representative.cost <= global_best + tie_tol;
  }));
  if (std::all_of(out.clusters.begin(), out.clusters.end(), [](const Cluster& cl) { return cl.at_bound; })) {
    std::ostringstream os;
    os << "reconstruct: every solution cluster lies on the B_loc bounds (bounds too tight?); best B_loc = ("
       << out.clusters.front().representative.b_loc.transpose() << ") mT";
    fail(ErrorKind::kInvalidInput, os.str());
  }

  out.best = out.clusters.front().representative;
  out.residuals = splitting_residuals(out.best.params, out.best.b_loc, bias_fields, measured, c);
  out.uncertainty = uncertainty_from(
      numerical_jacobian(out.best.params, out.best.b_loc, bias_fields, measured, config.weight, c, config.fd_step),
      out.best.cost);
  return out;
}

double coil_cost(const CoilModel& model, const std::vector<Eigen::Vector3d>& currents, const OrientationParams& params,
                 const FieldVector& b_loc, const SplittingTable& measured, double w, const PhysicalConstants& c) {
  std::vector<FieldVector> bias;
  bias.reserve(currents.size());
  for (const auto& i : currents) bias.push_back(model.field(i));
  return cost(params, b_loc, bias, measured, w, c);
}

namespace {

constexpr int kCoilParams = 12;
// Upper-triangular entries of the coil matrix, in parameter order.
constexpr std::array<std::pair<int, int>, 6> kUpper{{{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}}};

Eigen::Matrix3d coil_matrix(const Eigen::VectorXd& x) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  for (int k = 0; k < 6; ++k) m(kUpper[k].first, kUpper[k].second) = x(kBaseParams + k);
  return m;
}

// Linear fit of |B_i|^2 = I^T G I + 2 I^T h + k, then G = M^T M by Cholesky.
bool gram_initialization(const std::vector<Eigen::Vector3d>& currents, const std::vector<double>& mags,
                         Eigen::Matrix3d& m, Eigen::Vector3d& b0) {
  const auto n = static_cast<Eigen::Index>(currents.size());
  if (n < 10) return false;
  Eigen::MatrixXd a(n, 10);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = currents[static_cast<std::size_t>(i)];
    a.row(i) << c(0) * c(0), c(1) * c(1), c(2) * c(2), 2 * c(0) * c(1), 2 * c(0) * c(2), 2 * c(1) * c(2), 2 * c(0),
        2 * c(1), 2 * c(2), 1.0;
    rhs(i) = mags[static_cast<std::size_t>(i)] * mags[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd q = a.colPivHouseholderQr().solve(rhs);
  if (!q.allFinite()) return false;
  Eigen::Matrix3d g;
  g << q(0), q(3), q(4), q(3), q(1), q(5), q(4), q(5), q(2);
  Eigen::LLT<Eigen::Matrix3d> llt(g);
  if (llt.info() != Eigen::Success) return false;
  m = llt.matrixL().transpose();
  b0 = m.transpose().triangularView<Eigen::Lower>().solve(Eigen::Vector3d(q(6), q(7), q(8)));
  return m.allFinite() && b0.allFinite();
}

}  // namespace

CoilCalibration calibrate_coils(const std::vector<Eigen::Vector3d>& currents, const SplittingTable& measured,
                                const ReconstructionConfig& config, const PhysicalConstants& c,
                                const FieldVector& offset_prior) {
  config.validate();
  check_problem(measured, currents.size());
  const auto n = static_cast<Eigen::Index>(currents.size());
  Eigen::MatrixXd cur(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!currents[static_cast<std::size_t>(i)].allFinite()) fail(ErrorKind::kInvalidInput, "calibrate_coils: non-finite current");
    cur.row(i) = currents[static_cast<std::size_t>(i)].transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cur, Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (n < 3 || !(sv(2) > 1e-9 * sv(0))) {
    std::ostringstream os;
    os << "calibrate_coils: currents do not span three directions; unidentifiable direction(s):";
    for (int k = 0; k < 3; ++k) {
      if (k >= n || !(sv(k) > 1e-9 * sv(0))) os << " (" << svd.matrixV().col(k).transpose() << ")";
    }
    fail(ErrorKind::kDegenerate, os.str());
  }

  MagnitudeOptions mo;
  mo.consistency_mhz = std::numeric_limits<double>::infinity();
  const std::vector<double> mags = estimate_total_magnitudes(measured, c, mo);

  Eigen::Matrix3d m0;
  Eigen::Vector3d b0;
  if (!gram_initialization(currents, mags, m0, b0)) {
    std::vector<double> ratio;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double in = currents[static_cast<std::size_t>(i)].norm();
      if (in > 0.0) ratio.push_back(mags[static_cast<std::size_t>(i)] / in);
    }
    std::nth_element(ratio.begin(), ratio.begin() + static_cast<std::ptrdiff_t>(ratio.size() / 2), ratio.end());
    m0 = Eigen::Matrix3d::Identity() * ratio[ratio.size() / 2];
    b0 = offset_prior;
  }

  CoilModel initial{m0, offset_prior};
  std::vector<FieldVector> bias0;
  for (const auto& i : currents) bias0.push_back(initial.field(i));
  ReconstructionResult stage = reconstruct(measured, bias0, config, c);

  const Eigen::MatrixX4d ms = sort_rows_desc(measured.s);
  const double sqrt_w = std::sqrt(config.weight);
  LeastSquaresProblem problem;
  problem.num_residuals = 4 * n;
  problem.residuals = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    const CoilModel model{coil_matrix(x), offset_prior};
    const AxesSet axes = axes_from_angles(x(0), x(1), x(2));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto row = model_row_sorted(axes, model.field(currents[static_cast<std::size_t>(i)]) + x.segment<3>(3), c);
      for (int j = 0; j < 4; ++j) r(4 * i + j) = sqrt_w * (ms(i, j) - row[j]);
    }
  };
  problem.project = [&](Eigen::VectorXd& x) {
    for (int k = 0; k < 3; ++k) x(3 + k) = std::clamp(x(3 + k), config.b_loc_lower(k), config.b_loc_upper(k));
    for (int k : {0, 3, 5}) x(kBaseParams + k) = std::max(x(kBaseParams + k), 1e-12);
  };
  Eigen::VectorXd x0(kCoilParams);
  x0 << stage.best.params.theta1, stage.best.params.phi1, stage.best.params.alpha, stage.best.b_loc, m0(0, 0),
      m0(0, 1), m0(0, 2), m0(1, 1), m0(1, 2), m0(2, 2);
  LeastSquaresOptions lso;
  lso.max_iter = config.max_iter;
  lso.cost_tol = config.local_solver_tol;
  lso.fd_step = config.fd_step;
  const LeastSquaresSummary s = levenberg_marquardt(problem, x0, lso);
  if (!s.converged() || !s.x.allFinite()) {
    fail(ErrorKind::kNonConvergence, "calibrate_coils: joint fit stopped with " + to_string(s.reason));
  }

  CoilCalibration out;
  out.model = CoilModel{coil_matrix(s.x), offset_prior};
  out.reconstruction = stage;
  Solution& best = out.reconstruction.best;
  best.params = wrap_params(s.x(0), s.x(1), s.x(2));
  best.b_loc = s.x.segment<3>(3);
  best.cost = s.cost;
  std::vector<FieldVector> bias;
  for (const auto& i : currents) bias.push_back(out.model.field(i));
  out.reconstruction.residuals = splitting_residuals(best.params, best.b_loc, bias, measured, c);
  out.reconstruction.uncertainty = uncertainty_from(s.jacobian, s.cost);
  return out;
}

FieldVector delta_b(const std::vector<FieldVector>& runs) {
  if (runs.empty()) fail(ErrorKind::kInvalidInput, "delta_b: no runs");
  FieldVector mean = FieldVector::Zero();
  for (const auto& b : runs) mean += b;
  mean /= static_cast<double>(runs.size());
  FieldVector var = FieldVector::Zero();
  for (const auto& b : runs) var += (b - mean).cwiseAbs2();
  return (var / static_cast<double>(runs.size())).cwiseSqrt();
}

std::array<double, 4> axes_dispersion(const std::vector<AxesSet>& runs) {
  if (runs.size() < 2) fail(ErrorKind::kInvalidInput, "axes_dispersion: need at least two runs");
  std::array<double, 4> out{};
  for (int j = 0; j < 4; ++j) {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& a : runs) mean += a.n[j];
    if (mean.norm() < 1e-9 * static_cast<double>(runs.size())) {
      fail(ErrorKind::kDegenerate, "axes_dispersion: mean direction of axis " + std::to_string(j + 1) + " vanishes");
    }
    const SphericalAngles centre = polar_angles(mean.normalized());
    double sum = 0.0;
    for (const auto& a : runs) sum += great_circle_distance(polar_angles(a.n[j]), centre);
    out[j] = sum / static_cast<double>(runs.size());
  }
  return out;
}

}  // namespace nvmag
