#pragma once

// Tetrahedral NV axes, orientation metrics and the sphere-intersection
// picture of how bias fields constrain the local field.
//
// Angle convention for OrientationParams: theta1 is a LATITUDE-like angle,
// n1 = (cos(theta1) cos(phi1), cos(theta1) sin(phi1), sin(theta1)), so
// theta1 = pi/2 points along +z. great_circle_distance() on the other hand
// takes physics-style polar coordinates (theta measured from +z); use
// polar_angles() to convert a direction before calling it.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nvmag {

/// Lab-frame magnetic field, mT.
using FieldVector = Eigen::Vector3d;

struct OrientationParams {
  double theta1 = 0.0;  // [0, pi]
  double phi1 = 0.0;    // [0, 2pi)
  double alpha = 0.0;   // [0, 2pi)

  /// Throws kInvalidInput when a value is outside its range or not finite.
  void validate() const;
};

/// Maps arbitrary angles back onto the canonical ranges. theta1 is folded
/// with the matching phi1 shift so the resulting n1 is unchanged.
OrientationParams wrap_params(double theta1, double phi1, double alpha);

struct AxesSet {
  std::array<Eigen::Vector3d, 4> n;

  /// Unit norm to 1e-12 and pairwise dot -1/3 to 1e-9.
  bool is_valid(double norm_tol = 1e-12, double dot_tol = 1e-9) const;
};

/// The four NV axes of a [100]-cut plate.
AxesSet hundred_cut_axes();

AxesSet axes_from_params(const OrientationParams& p);

/// Unchecked variant used inside optimizer loops (no range validation).
AxesSet axes_from_angles(double theta1, double phi1, double alpha);

/// Reflects every axis through the plane with the given unit normal.
AxesSet reflect_axes(const AxesSet& axes, const Eigen::Vector3d& unit_normal);

struct SphericalAngles {
  double theta = 0.0;  // polar angle from +z
  double phi = 0.0;
};

SphericalAngles polar_angles(const Eigen::Vector3d& direction);

/// arccos(sin t sin t' cos(p - p') + cos t cos t'), inner product clamped.
double great_circle_distance(const SphericalAngles& a, const SphericalAngles& b);

/// Angle between two directions (same metric, vector form).
double angle_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

struct AxesMatch {
  std::array<int, 4> permutation{};  // predicted index matched to reference axis j
  std::array<int, 4> signs{};        // +1 or -1, applied to predicted axis
  double mean_dgc = 0.0;             // radians

  /// predicted axes reordered and sign-corrected to line up with the reference
  AxesSet apply(const AxesSet& predicted) const;
};

/// Exhaustive search over the 24 permutations times a global sign (the only
/// sign patterns that keep a tetrahedron a tetrahedron).
AxesMatch match_axes(const AxesSet& predicted, const AxesSet& reference);

struct SphereConstraint {
  FieldVector center = FieldVector::Zero();  // = -B_bias
  double radius = 0.0;                       // = |B_total|

  static SphereConstraint from_bias(const FieldVector& bias, double total_magnitude);
};

struct Ring {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0.0;
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();

  Eigen::Vector3d point(double angle) const;
  /// Distance from x to the nearest ring point.
  double distance(const Eigen::Vector3d& x) const;
};

enum class DegeneracyKind { kSphere, kRing, kPointPair, kUnique, kEmpty };

std::string to_string(DegeneracyKind kind);

struct DegeneracyResult {
  DegeneracyKind kind = DegeneracyKind::kEmpty;
  std::vector<FieldVector> solutions;
  std::optional<Ring> ring;
  std::optional<SphereConstraint> sphere;
  // Set by resolve_unique when both mirror points fit every constraint.
  bool ambiguous = false;
  // Plane of the three sphere centers when the result is a mirror pair.
  std::optional<Eigen::Vector3d> mirror_normal;
  std::optional<Eigen::Vector3d> mirror_point;
};

DegeneracyResult intersect_two_spheres(const SphereConstraint& s1, const SphereConstraint& s2);
DegeneracyResult intersect_three_spheres(const SphereConstraint& s1, const SphereConstraint& s2,
                                         const SphereConstraint& s3);

/// |det[b2-b1, b3-b1, b4-b1]| / 6
double coplanarity_volume(const FieldVector& b1, const FieldVector& b2, const FieldVector& b3,
                          const FieldVector& b4);

/// Scale-invariant test: volume > 1e-6 * (mean pairwise distance)^3. For
/// more than four points the best-spread four are tested.
bool is_non_coplanar(const std::vector<FieldVector>& points);
/// Line test used for three-point subsets.
bool is_non_collinear(const std::vector<FieldVector>& points);

DegeneracyResult resolve_unique(const std::vector<SphereConstraint>& constraints,
                                double tolerance = 1e-6);

}  // namespace nvmag
