#include "nvmag/physics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <sstream>

#include "nvmag/error.hpp"

namespace nvmag {

namespace {


struct LevelsWithSplitting {
  SpinLevels levels;
  double split = 0.0;  // lambda_plus - lambda_minus without the D offset rounding
};

void check_inputs(double b_proj, double b_total_mag) {
  if (!std::isfinite(b_proj) || !std::isfinite(b_total_mag)) {
    fail(ErrorKind::kInvalidInput, "solve_levels: non-finite field input");
  }
  if (b_total_mag < 0.0) {
    fail(ErrorKind::kInvalidInput, "solve_levels: negative |B_total|");
  }
  const double slack = 1e-9 * std::max(1.0, b_total_mag);
  if (std::abs(b_proj) > b_total_mag + slack) {
    std::ostringstream os;
    os << "solve_levels: |B_proj| = " << std::abs(b_proj) << " mT exceeds |B_total| = " << b_total_mag
       << " mT";
    fail(ErrorKind::kInconsistent, os.str());
  }
}

// Index (into ascending roots) of the m_s = 0 level.
int zero_level_index(const std::array<double, 3>& roots, double b_proj, double b_total,
                     const PhysicalConstants& c) {
  auto nearest_zero = [&] {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (std::abs(roots[k]) < std::abs(roots[best])) best = k;
    }
    return best;
  };
  if (c.gamma_e * b_total < 0.5 * c.d_gs) return nearest_zero();
  const double perp2 = std::max(0.0, b_total * b_total - b_proj * b_proj);
  if (perp2 <= 1e-24 * b_total * b_total) return nearest_zero();
  return 0;
}

LevelsWithSplitting assign(const std::array<double, 3>& sorted_roots, int idx0) {
  LevelsWithSplitting out;
  out.levels.lambda_0 = sorted_roots[idx0];
  std::array<double, 2> rest{};
  int k = 0;
  for (int i = 0; i < 3; ++i) {
    if (i != idx0) rest[k++] = sorted_roots[i];
  }
  out.levels.lambda_minus = rest[0];
  out.levels.lambda_plus = rest[1];
  out.split = rest[1] - rest[0];
  return out;
}

LevelsWithSplitting solve_dense(double b_proj, double b_total, const PhysicalConstants& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(nv_frame_hamiltonian(b_proj, b_total, c),
                                                    Eigen::EigenvaluesOnly);
  const Eigen::Vector3d ev = es.eigenvalues();
  std::array<double, 3> roots{ev(0), ev(1), ev(2)};
  std::sort(roots.begin(), roots.end());
  return assign(roots, zero_level_index(roots, b_proj, b_total, c));
}

// Works with mu = lambda - D, for which the level equation reads
//   mu^3 + D mu^2 - g^2 Bt^2 mu - D g^2 Bp^2 = 0.
// The +-1 roots are small there, so their coefficients carry no cancellation.
LevelsWithSplitting solve_cubic(double b_proj, double b_total, const PhysicalConstants& c) {
  const double d = c.d_gs;
  const double g2 = c.gamma_e * c.gamma_e;
  const double a = d;
  const double b = -g2 * b_total * b_total;
  const double cc = -d * g2 * b_proj * b_proj;

  const double p = b - a * a / 3.0;
  const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + cc;
  const double disc = 4.0 * p * p * p + 27.0 * q * q;
  const double disc_scale = 4.0 * std::abs(p * p * p) + 27.0 * q * q;
  if (p >= 0.0 || std::abs(disc) <= 1e-12 * disc_scale) {
    return solve_dense(b_proj, b_total, c);
  }

  // The m_s = 0 level is the lowest root unless the field is axial, where it is
  // exactly mu = -D. f(-D - g|B|) < 0 and f is concave left of -D/3, so Newton
  // from there climbs monotonically onto the lowest root.
  const double perp2 = std::max(0.0, b_total * b_total - b_proj * b_proj);
  double mu0 = -d;
  if (perp2 > 1e-24 * b_total * b_total) {
    mu0 = -d - c.gamma_e * b_total;
    for (int it = 0; it < 100; ++it) {
      const double f = ((mu0 + a) * mu0 + b) * mu0 + cc;
      const double fp = (3.0 * mu0 + 2.0 * a) * mu0 + b;
      if (!(fp > 0.0)) break;
      const double step = f / fp;
      mu0 -= step;
      if (std::abs(step) <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(mu0)) break;
    }
  }

  // Deflate: the other two roots have sum -D - mu0 and product -cc'/mu0.
  const double sum = -a - mu0;
  const double prod = (std::abs(mu0) > 0.25 * d) ? -cc / mu0 : b - mu0 * sum;
  const double sq = std::sqrt(std::max(0.0, sum * sum - 4.0 * prod));
  double mu_hi = 0.0;
  double mu_lo = 0.0;
  if (sum >= 0.0) {
    mu_hi = 0.5 * (sum + sq);
    mu_lo = (mu_hi != 0.0) ? prod / mu_hi : 0.5 * (sum - sq);
  } else {
    mu_lo = 0.5 * (sum - sq);
    mu_hi = (mu_lo != 0.0) ? prod / mu_lo : 0.5 * (sum + sq);
  }

  LevelsWithSplitting out;
  out.levels.lambda_0 = d + mu0;
  out.levels.lambda_minus = d + mu_lo;
  out.levels.lambda_plus = d + mu_hi;
  out.split = sq;
  return out;
}

LevelsWithSplitting solve(double b_proj, double b_total, const PhysicalConstants& c) {
  check_inputs(b_proj, b_total);
  // Rounding can push |b_proj| a hair above |B|; the equation only needs b_proj^2 <= B^2.
  const double bp = std::min(std::abs(b_proj), b_total);
  return solve_cubic(bp, b_total, c);
}

}  // namespace

void PhysicalConstants::validate() const {
  for (double v : {d_gs, gamma_e, a_par, a_perp, gamma_n, hyperfine_pair_sep}) {
    if (!std::isfinite(v)) fail(ErrorKind::kInvalidInput, "physical constants must be finite");
  }
  if (d_gs <= 0.0) fail(ErrorKind::kInvalidInput, "d_gs must be positive");
  if (gamma_e <= 0.0) fail(ErrorKind::kInvalidInput, "gamma_e must be positive");
}

void SplittingTable::validate() const {
  if (s.rows() != sigma.rows()) {
    fail(ErrorKind::kInvalidInput, "splitting table: s and sigma row counts differ");
  }
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (int j = 0; j < 4; ++j) {
      if (!std::isfinite(s(i, j)) || s(i, j) < 0.0) {
        std::ostringstream os;
        os << "splitting table: s[" << i << "][" << j << "] = " << s(i, j) << " is not a finite non-negative value";
        fail(ErrorKind::kInvalidInput, os.str());
      }
      if (!std::isfinite(sigma(i, j)) || sigma(i, j) < 0.0) {
        fail(ErrorKind::kInvalidInput, "splitting table: sigma must be finite and non-negative");
      }
    }
  }
}

SpinLevels solve_levels(double b_proj, double b_total_mag, const PhysicalConstants& c) {
  return solve(b_proj, b_total_mag, c).levels;
}

double splitting(double b_proj, double b_total_mag, const PhysicalConstants& c) {
  return solve(b_proj, b_total_mag, c).split;
}

double cubic_residual(double lambda, double b_proj, double b_total_mag, const PhysicalConstants& c) {
  const double g2 = c.gamma_e * c.gamma_e;
  const double dl = c.d_gs - lambda;
  return lambda * (dl * dl - g2 * b_proj * b_proj) -
         (lambda - c.d_gs) * g2 * (b_total_mag * b_total_mag - b_proj * b_proj);
}

Eigen::Matrix3d nv_frame_hamiltonian(double b_proj, double b_total_mag, const PhysicalConstants& c) {
  const double perp = std::sqrt(std::max(0.0, b_total_mag * b_total_mag - b_proj * b_proj));
  const double off = c.gamma_e * perp / std::numbers::sqrt2;
  Eigen::Matrix3d h;
  h << c.d_gs + c.gamma_e * b_proj, off, 0.0,  //
      off, 0.0, off,                            //
      0.0, off, c.d_gs - c.gamma_e * b_proj;
  return h;
}

HyperfineMatrix hyperfine_hamiltonian(const FieldVector& b, const PhysicalConstants& c) {
  if (!b.allFinite()) fail(ErrorKind::kInvalidInput, "solve_levels_hyperfine: non-finite field");
  using C = std::complex<double>;
  using M3 = Eigen::Matrix<C, 3, 3>;
  const double r = 1.0 / std::numbers::sqrt2;
  const C i(0.0, 1.0);
  M3 sx, sy, sz, id;
  sx << 0, r, 0, r, 0, r, 0, r, 0;
  sy << 0, -i * r, 0, i * r, 0, -i * r, 0, i * r, 0;
  sz << 1, 0, 0, 0, 0, 0, 0, 0, -1;
  id.setIdentity();

  auto kron = [](const M3& x, const M3& y) {
    HyperfineMatrix k;
    for (int a = 0; a < 3; ++a)
      for (int b2 = 0; b2 < 3; ++b2) k.block<3, 3>(3 * a, 3 * b2) = x(a, b2) * y;
    return k;
  };

  const double gn = c.gamma_n * 1e-3;  // MHz/T -> MHz/mT
  HyperfineMatrix h = c.d_gs * kron(sz * sz, id);
  h += c.gamma_e * (b.x() * kron(sx, id) + b.y() * kron(sy, id) + b.z() * kron(sz, id));
  h += c.a_perp * (kron(sx, sx) + kron(sy, sy)) + c.a_par * kron(sz, sz);
  h -= gn * (b.x() * kron(id, sx) + b.y() * kron(id, sy) + b.z() * kron(id, sz));
  return h;
}

std::array<double, 9> solve_levels_hyperfine(const FieldVector& b, const PhysicalConstants& c) {
  const HyperfineMatrix h = hyperfine_hamiltonian(b, c);
  Eigen::SelfAdjointEigenSolver<HyperfineMatrix> es(h, Eigen::EigenvaluesOnly);
  std::array<double, 9> out{};
  for (int k = 0; k < 9; ++k) out[k] = es.eigenvalues()(k);
  std::sort(out.begin(), out.end());
  return out;
}

ProjectionSet project(const FieldVector& b_total, const AxesSet& axes) {
  if (!b_total.allFinite()) fail(ErrorKind::kInvalidInput, "project: non-finite field");
  ProjectionSet ps;
  for (int j = 0; j < 4; ++j) ps.p[j] = b_total.dot(axes.n[j]);
  return ps;
}

double total_field_magnitude(const ProjectionSet& projections) {
  double s = 0.0;
  for (double p : projections.p) s += p * p;
  return std::sqrt(0.75 * s);
}

double invert_splitting(double splitting_mhz, double b_total_mag, const PhysicalConstants& c,
                        double* clamped) {
  if (clamped) *clamped = 0.0;
  if (b_total_mag <= 0.0) {
    if (clamped) *clamped = std::abs(splitting_mhz);
    return 0.0;
  }
  const double lo_val = splitting(0.0, b_total_mag, c);
  const double hi_val = splitting(b_total_mag, b_total_mag, c);
  if (splitting_mhz <= lo_val) {
    if (clamped) *clamped = lo_val - splitting_mhz;
    return 0.0;
  }
  if (splitting_mhz >= hi_val) {
    if (clamped) *clamped = splitting_mhz - hi_val;
    return b_total_mag;
  }
  double lo = 0.0;
  double hi = b_total_mag;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * b_total_mag; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (splitting(mid, b_total_mag, c) < splitting_mhz) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

std::vector<double> estimate_total_magnitudes(const SplittingTable& table, const PhysicalConstants& c,
                                              const MagnitudeOptions& opts) {
  table.validate();
  std::vector<double> out;
  out.reserve(table.rows());
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    ProjectionSet ps;
    for (int j = 0; j < 4; ++j) ps.p[j] = table.s(i, j) / (2.0 * c.gamma_e);
    double mag = total_field_magnitude(ps);
    std::vector<double> trace{mag};
    bool converged = (mag == 0.0);
    std::array<double, 4> clamp{};
    for (int it = 0; it < opts.max_iter && !converged; ++it) {
      for (int j = 0; j < 4; ++j) ps.p[j] = invert_splitting(table.s(i, j), mag, c, &clamp[j]);
      const double next = total_field_magnitude(ps);
      trace.push_back(next);
      converged = std::abs(next - mag) < opts.tolerance_mt;
      mag = next;
    }
    if (!converged) {
      std::ostringstream os;
      os << "estimate_total_magnitudes: row " << i << " did not converge in " << opts.max_iter
         << " iterations; |B| trace:";
      for (std::size_t k = 0; k < trace.size(); k += std::max<std::size_t>(1, trace.size() / 10)) {
        os << ' ' << trace[k];
      }
      fail(ErrorKind::kNonConvergence, os.str());
    }
    if (mag > 0.0) {
      for (int j = 0; j < 4; ++j) {
        invert_splitting(table.s(i, j), mag, c, &clamp[j]);
        if (clamp[j] > opts.consistency_mhz) {
          std::ostringstream os;
          os << "estimate_total_magnitudes: splitting " << table.s(i, j) << " MHz (row " << i << ", col "
             << j << ") is unreachable at |B| = " << mag << " mT (off by " << clamp[j] << " MHz)";
          fail(ErrorKind::kInconsistent, os.str());
        }
      }
    }
    out.push_back(mag);
  }
  return out;
}

}  // namespace nvmag
