#include "nvmag/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "nvmag/error.hpp"

namespace nvmag {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_two_pi(double x) {
  double r = std::fmod(x, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

double mean_pairwise_distance(const std::vector<FieldVector>& pts) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      sum += (pts[i] - pts[j]).norm();
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

// Greedy pick of three well-spread points: start, farthest from it, farthest from that line.
std::array<std::size_t, 3> spread_triangle(const std::vector<FieldVector>& pts) {
  std::array<std::size_t, 3> idx{0, 0, 0};
  double best = -1.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double d = (pts[i] - pts[0]).norm();
    if (d > best) {
      best = d;
      idx[1] = i;
    }
  }
  const Eigen::Vector3d e = (pts[idx[1]] - pts[0]).normalized();
  best = -1.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Eigen::Vector3d w = pts[i] - pts[0];
    const double d = (w - w.dot(e) * e).norm();
    if (d > best) {
      best = d;
      idx[2] = i;
    }
  }
  return idx;
}

double tangent_tol(double scale) { return 1e-12 * std::max(scale * scale, 1e-300); }

}  // namespace

void OrientationParams::validate() const {
  if (!std::isfinite(theta1) || !std::isfinite(phi1) || !std::isfinite(alpha)) {
    fail(ErrorKind::kInvalidInput, "orientation parameters must be finite");
  }
  if (theta1 < 0.0 || theta1 > kPi) {
    fail(ErrorKind::kInvalidInput, "theta1 out of range [0, pi]: " + std::to_string(theta1));
  }
  if (phi1 < 0.0 || phi1 >= kTwoPi) {
    fail(ErrorKind::kInvalidInput, "phi1 out of range [0, 2pi): " + std::to_string(phi1));
  }
  if (alpha < 0.0 || alpha >= kTwoPi) {
    fail(ErrorKind::kInvalidInput, "alpha out of range [0, 2pi): " + std::to_string(alpha));
  }
}

OrientationParams wrap_params(double theta1, double phi1, double alpha) {
  double t = wrap_two_pi(theta1);
  if (t > kPi) {
    // sin(theta1) < 0: use the globally sign-flipped tetrahedron (axes 3 and 4 trade labels).
    return OrientationParams{kTwoPi - t, wrap_two_pi(phi1 + kPi), wrap_two_pi(kPi - alpha)};
  }
  return OrientationParams{t, wrap_two_pi(phi1), wrap_two_pi(alpha)};
}

bool AxesSet::is_valid(double norm_tol, double dot_tol) const {
  for (int k = 0; k < 4; ++k) {
    if (!n[k].allFinite() || std::abs(n[k].norm() - 1.0) > norm_tol) return false;
    for (int l = k + 1; l < 4; ++l) {
      if (std::abs(n[k].dot(n[l]) + 1.0 / 3.0) > dot_tol) return false;
    }
  }
  return true;
}

AxesSet hundred_cut_axes() {
  const double s2 = std::numbers::sqrt2;
  const double inv = 1.0 / std::sqrt(3.0);
  AxesSet a;
  a.n[0] = Eigen::Vector3d(s2, 0, 1) * inv;
  a.n[1] = Eigen::Vector3d(0, s2, -1) * inv;
  a.n[2] = Eigen::Vector3d(-s2, 0, 1) * inv;
  a.n[3] = Eigen::Vector3d(0, -s2, -1) * inv;
  return a;
}

AxesSet axes_from_angles(double theta1, double phi1, double alpha) {
  const double ct = std::cos(theta1), st = std::sin(theta1);
  const double cp = std::cos(phi1), sp = std::sin(phi1);
  const Eigen::Vector3d n1(ct * cp, ct * sp, st);
  const Eigen::Vector3d u(-sp, cp, 0.0);
  const Eigen::Vector3d v(-st * cp, -st * sp, ct);
  constexpr double k = 2.0 * std::numbers::sqrt2 / 3.0;
  AxesSet a;
  a.n[0] = n1;
  for (int j = 2; j <= 4; ++j) {
    const double ang = alpha + kTwoPi * (j - 2) / 3.0;
    a.n[j - 1] = -n1 / 3.0 + k * std::sin(ang) * u + k * std::cos(ang) * v;
  }
  return a;
}

AxesSet axes_from_params(const OrientationParams& p) {
  p.validate();
  return axes_from_angles(p.theta1, p.phi1, p.alpha);
}

AxesSet reflect_axes(const AxesSet& axes, const Eigen::Vector3d& unit_normal) {
  AxesSet out;
  for (int j = 0; j < 4; ++j) out.n[j] = axes.n[j] - 2.0 * axes.n[j].dot(unit_normal) * unit_normal;
  return out;
}

SphericalAngles polar_angles(const Eigen::Vector3d& direction) {
  const Eigen::Vector3d d = direction.normalized();
  return SphericalAngles{std::acos(std::clamp(d.z(), -1.0, 1.0)), wrap_two_pi(std::atan2(d.y(), d.x()))};
}

double great_circle_distance(const SphericalAngles& a, const SphericalAngles& b) {
  const double inner =
      std::sin(a.theta) * std::sin(b.theta) * std::cos(a.phi - b.phi) + std::cos(a.theta) * std::cos(b.theta);
  return std::acos(std::clamp(inner, -1.0, 1.0));
}

double angle_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  // atan2 form keeps precision for nearly parallel vectors
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

AxesSet AxesMatch::apply(const AxesSet& predicted) const {
  AxesSet out;
  for (int j = 0; j < 4; ++j) out.n[j] = signs[j] * predicted.n[permutation[j]];
  return out;
}

AxesMatch match_axes(const AxesSet& predicted, const AxesSet& reference) {
  std::array<int, 4> perm{0, 1, 2, 3};
  AxesMatch best;
  best.mean_dgc = std::numeric_limits<double>::infinity();
  do {
    for (int sign : {1, -1}) {
      double total = 0.0;
      for (int j = 0; j < 4; ++j) total += angle_between(sign * predicted.n[perm[j]], reference.n[j]);
      const double mean = total / 4.0;
      if (mean < best.mean_dgc - 1e-15) {
        best.mean_dgc = mean;
        best.permutation = perm;
        best.signs = {sign, sign, sign, sign};
      }
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

SphereConstraint SphereConstraint::from_bias(const FieldVector& bias, double total_magnitude) {
  if (total_magnitude < 0.0) fail(ErrorKind::kInvalidInput, "sphere radius must be non-negative");
  return SphereConstraint{-bias, total_magnitude};
}

Eigen::Vector3d Ring::point(double angle) const {
  Eigen::Vector3d helper = std::abs(normal.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d e1 = normal.cross(helper).normalized();
  const Eigen::Vector3d e2 = normal.cross(e1);
  return center + radius * (std::cos(angle) * e1 + std::sin(angle) * e2);
}

double Ring::distance(const Eigen::Vector3d& x) const {
  const Eigen::Vector3d w = x - center;
  const double h = w.dot(normal);
  const double radial = (w - h * normal).norm();
  return std::hypot(h, radial - radius);
}

std::string to_string(DegeneracyKind kind) {
  switch (kind) {
    case DegeneracyKind::kSphere: return "sphere";
    case DegeneracyKind::kRing: return "ring";
    case DegeneracyKind::kPointPair: return "point-pair";
    case DegeneracyKind::kUnique: return "unique";
    case DegeneracyKind::kEmpty: return "empty";
  }
  return "unknown";
}

DegeneracyResult intersect_two_spheres(const SphereConstraint& s1, const SphereConstraint& s2) {
  DegeneracyResult out;
  const Eigen::Vector3d delta = s2.center - s1.center;
  const double d = delta.norm();
  const double scale = std::max({s1.radius, s2.radius, d, s1.center.norm(), s2.center.norm()});
  if (d <= 1e-12 * std::max(scale, 1e-300)) {
    if (std::abs(s1.radius - s2.radius) <= 1e-12 * std::max(scale, 1e-300)) {
      out.kind = DegeneracyKind::kSphere;
      out.sphere = s1;
    }
    return out;
  }
  const Eigen::Vector3d e = delta / d;
  const double a = (d * d + s1.radius * s1.radius - s2.radius * s2.radius) / (2.0 * d);
  const double h2 = s1.radius * s1.radius - a * a;
  const double tol = tangent_tol(scale);
  if (h2 < -tol) return out;
  const Eigen::Vector3d base = s1.center + a * e;
  if (h2 <= tol) {
    out.kind = DegeneracyKind::kUnique;
    out.solutions.push_back(base);
    return out;
  }
  out.kind = DegeneracyKind::kRing;
  out.ring = Ring{base, std::sqrt(h2), e};
  return out;
}

DegeneracyResult intersect_three_spheres(const SphereConstraint& s1, const SphereConstraint& s2,
                                         const SphereConstraint& s3) {
  const std::vector<FieldVector> centers{s1.center, s2.center, s3.center};
  if (!is_non_collinear(centers)) {
    // All three spheres share an axis: the answer is the first ring if the third
    // sphere passes through it, otherwise nothing.
    DegeneracyResult ring = intersect_two_spheres(s1, s2);
    if (ring.kind == DegeneracyKind::kRing) {
      const Eigen::Vector3d probe = ring.ring->point(0.0);
      const double scale = std::max({s1.radius, s2.radius, s3.radius, 1e-300});
      if (std::abs((probe - s3.center).norm() - s3.radius) <= 1e-9 * scale) return ring;
      return DegeneracyResult{};
    }
    if (ring.kind == DegeneracyKind::kUnique) {
      const double scale = std::max({s1.radius, s2.radius, s3.radius, 1e-300});
      if (std::abs((ring.solutions[0] - s3.center).norm() - s3.radius) <= 1e-9 * scale) return ring;
      return DegeneracyResult{};
    }
    return ring;
  }

  const Eigen::Vector3d c21 = s2.center - s1.center;
  const Eigen::Vector3d c31 = s3.center - s1.center;
  const double d = c21.norm();
  const Eigen::Vector3d ex = c21 / d;
  const double i = ex.dot(c31);
  const Eigen::Vector3d ey = (c31 - i * ex).normalized();
  const Eigen::Vector3d ez = ex.cross(ey);
  const double j = ey.dot(c31);
  const double r1 = s1.radius, r2 = s2.radius, r3 = s3.radius;
  const double x = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d);
  const double y = (r1 * r1 - r3 * r3 + i * i + j * j) / (2.0 * j) - i * x / j;
  const double z2 = r1 * r1 - x * x - y * y;

  DegeneracyResult out;
  const Eigen::Vector3d base = s1.center + x * ex + y * ey;
  out.mirror_normal = ez;
  out.mirror_point = s1.center;
  const double scale = std::max({r1, r2, r3, d, c31.norm()});
  const double tol = tangent_tol(scale);
  if (z2 < -tol) return out;
  if (z2 <= tol) {
    out.kind = DegeneracyKind::kUnique;
    out.solutions.push_back(base);
    return out;
  }
  const double z = std::sqrt(z2);
  out.kind = DegeneracyKind::kPointPair;
  out.solutions = {base + z * ez, base - z * ez};

  // The pair must be mirror images across the center plane.
  const Eigen::Vector3d mid = 0.5 * (out.solutions[0] + out.solutions[1]);
  const Eigen::Vector3d diff = out.solutions[0] - out.solutions[1];
  if (std::abs((mid - s1.center).dot(ez)) > 1e-9 * scale || diff.cross(ez).norm() > 1e-9 * diff.norm()) {
    fail(ErrorKind::kInconsistent, "intersect_three_spheres: mirror check failed");
  }
  return out;
}

double coplanarity_volume(const FieldVector& b1, const FieldVector& b2, const FieldVector& b3,
                          const FieldVector& b4) {
  Eigen::Matrix3d m;
  m.col(0) = b2 - b1;
  m.col(1) = b3 - b1;
  m.col(2) = b4 - b1;
  return std::abs(m.determinant()) / 6.0;
}

bool is_non_collinear(const std::vector<FieldVector>& points) {
  if (points.size() < 3) return false;
  const auto idx = spread_triangle(points);
  const std::vector<FieldVector> tri{points[idx[0]], points[idx[1]], points[idx[2]]};
  const double area = 0.5 * (tri[1] - tri[0]).cross(tri[2] - tri[0]).norm();
  const double scale = mean_pairwise_distance(tri);
  return scale > 0.0 && area > 1e-6 * scale * scale;
}

bool is_non_coplanar(const std::vector<FieldVector>& points) {
  if (points.size() < 4) return false;
  std::array<std::size_t, 4> idx{};
  if (points.size() == 4) {
    idx = {0, 1, 2, 3};
  } else {
    const auto tri = spread_triangle(points);
    const Eigen::Vector3d normal =
        (points[tri[1]] - points[tri[0]]).cross(points[tri[2]] - points[tri[0]]);
    if (normal.norm() == 0.0) return false;
    const Eigen::Vector3d nh = normal.normalized();
    double best = -1.0;
    std::size_t far = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double h = std::abs((points[i] - points[tri[0]]).dot(nh));
      if (h > best) {
        best = h;
        far = i;
      }
    }
    idx = {tri[0], tri[1], tri[2], far};
  }
  const std::vector<FieldVector> four{points[idx[0]], points[idx[1]], points[idx[2]], points[idx[3]]};
  const double scale = mean_pairwise_distance(four);
  const double vol = coplanarity_volume(four[0], four[1], four[2], four[3]);
  return scale > 0.0 && vol > 1e-6 * scale * scale * scale;
}

namespace {

bool satisfies_all(const Eigen::Vector3d& x, const std::vector<SphereConstraint>& cs, double tol) {
  return std::all_of(cs.begin(), cs.end(), [&](const SphereConstraint& s) {
    return std::abs((x - s.center).norm() - s.radius) <= tol;
  });
}

std::string worst_mismatch(const Eigen::Vector3d& x, const std::vector<SphereConstraint>& cs) {
  double worst = 0.0;
  std::size_t at = 0;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    const double m = std::abs((x - cs[i].center).norm() - cs[i].radius);
    if (m > worst) {
      worst = m;
      at = i;
    }
  }
  std::ostringstream os;
  os << "largest sphere mismatch " << worst << " mT at constraint " << at;
  return os.str();
}

}  // namespace

DegeneracyResult resolve_unique(const std::vector<SphereConstraint>& constraints, double tolerance) {
  const std::size_t n = constraints.size();
  if (n == 0) fail(ErrorKind::kInvalidInput, "resolve_unique: need at least one constraint");
  if (n == 1) {
    DegeneracyResult out;
    out.kind = DegeneracyKind::kSphere;
    out.sphere = constraints[0];
    return out;
  }
  if (n == 2) return intersect_two_spheres(constraints[0], constraints[1]);
  if (n == 3) return intersect_three_spheres(constraints[0], constraints[1], constraints[2]);

  std::vector<FieldVector> centers;
  for (const auto& s : constraints) centers.push_back(s.center);

  if (is_non_coplanar(centers)) {
    // Differences of the sphere equations are linear in x.
    Eigen::MatrixXd a(n - 1, 3);
    Eigen::VectorXd rhs(n - 1);
    const auto& c0 = constraints[0];
    for (std::size_t i = 1; i < n; ++i) {
      const auto& ci = constraints[i];
      a.row(i - 1) = 2.0 * (ci.center - c0.center).transpose();
      rhs(i - 1) = ci.center.squaredNorm() - c0.center.squaredNorm() - ci.radius * ci.radius +
                   c0.radius * c0.radius;
    }
    Eigen::Vector3d x = a.colPivHouseholderQr().solve(rhs);
    // Gauss-Newton on the distance residuals tightens the linear estimate.
    for (int it = 0; it < 20; ++it) {
      Eigen::MatrixXd j(n, 3);
      Eigen::VectorXd r(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d w = x - constraints[i].center;
        const double dist = w.norm();
        r(i) = dist - constraints[i].radius;
        j.row(i) = dist > 0 ? Eigen::RowVector3d((w / dist).transpose()) : Eigen::RowVector3d::Zero();
      }
      const Eigen::Vector3d step = j.colPivHouseholderQr().solve(r);
      x -= step;
      if (step.norm() < 1e-15 * std::max(1.0, x.norm())) break;
    }
    if (!satisfies_all(x, constraints, tolerance)) {
      fail(ErrorKind::kInconsistent, "resolve_unique: constraints have no common point (" +
                                         worst_mismatch(x, constraints) + ")");
    }
    DegeneracyResult out;
    out.kind = DegeneracyKind::kUnique;
    out.solutions.push_back(x);
    return out;
  }

  if (!is_non_collinear(centers)) {
    DegeneracyResult ring = intersect_two_spheres(constraints[0], constraints[1]);
    if (ring.kind == DegeneracyKind::kRing && satisfies_all(ring.ring->point(0.0), constraints, tolerance)) {
      return ring;
    }
    fail(ErrorKind::kInconsistent, "resolve_unique: collinear centers with inconsistent radii");
  }

  // Coplanar centers: the fourth field cannot break the mirror symmetry.
  const auto tri = spread_triangle(centers);
  DegeneracyResult three =
      intersect_three_spheres(constraints[tri[0]], constraints[tri[1]], constraints[tri[2]]);
  std::vector<FieldVector> keep;
  for (const auto& s : three.solutions) {
    if (satisfies_all(s, constraints, tolerance)) keep.push_back(s);
  }
  if (keep.empty()) fail(ErrorKind::kInconsistent, "resolve_unique: constraints have no common point");
  DegeneracyResult out = three;
  out.solutions = keep;
  if (keep.size() == 2) {
    out.kind = DegeneracyKind::kPointPair;
    out.ambiguous = true;
  } else {
    out.kind = DegeneracyKind::kUnique;
  }
  return out;
}

}  // namespace nvmag
