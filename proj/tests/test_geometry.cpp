#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "nvmag/error.hpp"
#include "nvmag/geometry.hpp"
#include "oracles.hpp"

using namespace nvmag;

namespace {

constexpr double kPi = std::numbers::pi;

OrientationParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return OrientationParams{kPi * u(rng), 2 * kPi * u(rng), 2 * kPi * u(rng)};
}

oracle::Vec ov(const FieldVector& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

TEST_CASE("parametrized axes form a regular tetrahedron") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const AxesSet a = axes_from_params(random_params(rng));
    CHECK(a.is_valid());
    FieldVector sum = FieldVector::Zero();
    for (const auto& n : a.n) sum += n;
    CHECK(sum.norm() < 1e-12);
  }
}

TEST_CASE("theta1 is a latitude: pi/2 puts the first axis on +z") {
  const AxesSet a = axes_from_params(OrientationParams{kPi / 2, 0.3, 1.1});
  CHECK(a.n[0].z() == doctest::Approx(1.0));
  const AxesSet b = axes_from_params(OrientationParams{0.0, 0.0, 0.0});
  CHECK(b.n[0].x() == doctest::Approx(1.0));
}

TEST_CASE("hundred-cut axes") {
  const AxesSet a = hundred_cut_axes();
  CHECK(a.is_valid());
  for (const auto& n : a.n) CHECK(std::abs(n.z()) == doctest::Approx(1.0 / std::sqrt(3.0)));
}

TEST_CASE("wrap_params keeps the axes unchanged") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 200; ++i) {
    const double t = u(rng), p = u(rng), al = u(rng);
    const OrientationParams w = wrap_params(t, p, al);
    CHECK_NOTHROW(w.validate());
    const AxesSet a = axes_from_angles(t, p, al);
    const AxesSet b = axes_from_params(w);
    CHECK(match_axes(b, a).mean_dgc < 1e-9);
  }
}

TEST_CASE("out-of-range parameters are rejected") {
  CHECK_THROWS_AS(OrientationParams({4.0, 0.0, 0.0}).validate(), Error);
  CHECK_THROWS_AS(OrientationParams({1.0, 7.0, 0.0}).validate(), Error);
  CHECK_THROWS_AS(OrientationParams({1.0, 0.0, NAN}).validate(), Error);
}

TEST_CASE("great-circle distance") {
  const SphericalAngles z{0.0, 0.0};
  const SphericalAngles x{kPi / 2, 0.0};
  const SphericalAngles y{kPi / 2, kPi / 2};
  CHECK(great_circle_distance(z, x) == doctest::Approx(kPi / 2));
  CHECK(great_circle_distance(x, y) == doctest::Approx(kPi / 2));
  CHECK(great_circle_distance(x, x) == doctest::Approx(0.0));
  const auto pa = polar_angles(Eigen::Vector3d(1, 1, 0));
  CHECK(pa.theta == doctest::Approx(kPi / 2));
  CHECK(pa.phi == doctest::Approx(kPi / 4));
  CHECK(angle_between(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(-1, 0, 0)) == doctest::Approx(kPi));
}

TEST_CASE("match_axes undoes relabeling and global inversion") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const AxesSet ref = axes_from_params(random_params(rng));
    AxesSet shuffled;
    const std::array<int, 4> perm{2, 0, 3, 1};
    for (int k = 0; k < 4; ++k) shuffled.n[perm[k]] = -ref.n[k];
    const AxesMatch m = match_axes(shuffled, ref);
    CHECK(m.mean_dgc < 1e-12);
    const AxesSet back = m.apply(shuffled);
    for (int k = 0; k < 4; ++k) CHECK((back.n[k] - ref.n[k]).norm() < 1e-12);
  }
}

TEST_CASE("match_axes reports a small rotation") {
  const AxesSet ref = hundred_cut_axes();
  const Eigen::Matrix3d rot = Eigen::AngleAxisd(0.01, Eigen::Vector3d(0.3, -0.5, 0.8).normalized()).toRotationMatrix();
  AxesSet turned;
  for (int k = 0; k < 4; ++k) turned.n[k] = rot * ref.n[k];
  const double d = match_axes(turned, ref).mean_dgc;
  CHECK(d > 0.0);
  CHECK(d <= 0.01 + 1e-12);
}

TEST_CASE("two spheres meet in a ring") {
  const auto s1 = SphereConstraint::from_bias(FieldVector(1, 0, 0), 1.2);
  const auto s2 = SphereConstraint::from_bias(FieldVector(0, 1, 0), 1.1);
  const DegeneracyResult r = intersect_two_spheres(s1, s2);
  REQUIRE(r.kind == DegeneracyKind::kRing);
  for (double t = 0; t < 6.28; t += 0.5) {
    const Eigen::Vector3d p = r.ring->point(t);
    CHECK((p - s1.center).norm() == doctest::Approx(1.2));
    CHECK((p - s2.center).norm() == doctest::Approx(1.1));
    CHECK(r.ring->distance(p) < 1e-12);
  }
}

TEST_CASE("disjoint spheres give an empty intersection") {
  const auto s1 = SphereConstraint::from_bias(FieldVector(1, 0, 0), 0.1);
  const auto s2 = SphereConstraint::from_bias(FieldVector(-1, 0, 0), 0.1);
  CHECK(intersect_two_spheres(s1, s2).kind == DegeneracyKind::kEmpty);
}

TEST_CASE("three spheres agree with a linear trilateration") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const FieldVector truth(0.05 * g(rng), 0.05 * g(rng), 0.05 * g(rng));
    std::vector<SphereConstraint> s;
    std::array<oracle::Vec, 3> c{};
    std::array<double, 3> r{};
    for (int k = 0; k < 3; ++k) {
      const FieldVector b(g(rng), g(rng), g(rng));
      s.push_back(SphereConstraint::from_bias(b, (b + truth).norm()));
      c[k] = ov(s.back().center);
      r[k] = s.back().radius;
    }
    const DegeneracyResult got = intersect_three_spheres(s[0], s[1], s[2]);
    const auto ref = oracle::trilaterate(c, r);
    REQUIRE(got.kind == DegeneracyKind::kPointPair);
    REQUIRE(ref.size() == 2);
    for (const auto& p : got.solutions) {
      double best = 1e9;
      for (const auto& q : ref) best = std::min(best, std::sqrt(oracle::dot(ov(p) - q, ov(p) - q)));
      CHECK(best < 1e-9);
    }
    // The pair mirrors across the plane of the centers.
    REQUIRE(got.mirror_normal.has_value());
    const Eigen::Vector3d nrm = *got.mirror_normal;
    const Eigen::Vector3d a = got.solutions[0];
    const Eigen::Vector3d b = got.solutions[1];
    const Eigen::Vector3d reflected = a - 2.0 * nrm.dot(a - s[0].center) * nrm;
    CHECK((reflected - b).norm() < 1e-9);
  }
}

TEST_CASE("four non-coplanar spheres pin a unique point") {
  const FieldVector truth(0.009, -0.017, -0.05);
  std::vector<SphereConstraint> s;
  for (const FieldVector& b : {FieldVector(1, 0, 0), FieldVector(0, 1, 0), FieldVector(0, 0, 1), FieldVector(-0.6, -0.6, 0.5)}) {
    s.push_back(SphereConstraint::from_bias(b, (b + truth).norm()));
  }
  const DegeneracyResult r = resolve_unique(s);
  REQUIRE(r.kind == DegeneracyKind::kUnique);
  CHECK((r.solutions[0] - truth).norm() < 1e-12);
}

TEST_CASE("coplanar fourth sphere cannot break the mirror pair") {
  const FieldVector truth(0.01, 0.02, 0.3);
  std::vector<SphereConstraint> s;
  for (const FieldVector& b : {FieldVector(1, 0, 0), FieldVector(0, 1, 0), FieldVector(-1, 0, 0), FieldVector(0.5, -0.7, 0)}) {
    s.push_back(SphereConstraint::from_bias(b, (b + truth).norm()));
  }
  const DegeneracyResult r = resolve_unique(s);
  CHECK(r.kind == DegeneracyKind::kPointPair);
  CHECK(r.ambiguous);
  CHECK(r.solutions.size() == 2);
}

TEST_CASE("inconsistent constraints are reported") {
  std::vector<SphereConstraint> s;
  for (const FieldVector& b : {FieldVector(1, 0, 0), FieldVector(0, 1, 0), FieldVector(0, 0, 1), FieldVector(-1, -1, -1)}) {
    s.push_back(SphereConstraint::from_bias(b, 1.0));
  }
  s[3].radius = 5.0;
  CHECK_THROWS_AS(resolve_unique(s), Error);
}

TEST_CASE("coplanarity and collinearity tests are scale invariant") {
  for (double scale : {1e-3, 1.0, 1e3}) {
    std::vector<FieldVector> flat{scale * FieldVector(1, 0, 0), scale * FieldVector(0, 1, 0),
                                  scale * FieldVector(-1, 0, 0), scale * FieldVector(0, -1, 0)};
    CHECK_FALSE(is_non_coplanar(flat));
    flat[3].z() = 0.3 * scale;
    CHECK(is_non_coplanar(flat));
    std::vector<FieldVector> line{scale * FieldVector(0, 0, 0), scale * FieldVector(1, 1, 1), scale * FieldVector(2, 2, 2)};
    CHECK_FALSE(is_non_collinear(line));
    line[2].x() += 0.5 * scale;
    CHECK(is_non_collinear(line));
  }
  CHECK(coplanarity_volume(FieldVector(0, 0, 0), FieldVector(1, 0, 0), FieldVector(0, 1, 0), FieldVector(0, 0, 1)) ==
        doctest::Approx(1.0 / 6.0));
}

TEST_CASE("reflection keeps a tetrahedron") {
  const AxesSet a = reflect_axes(hundred_cut_axes(), Eigen::Vector3d(0.2, 0.3, 0.9).normalized());
  CHECK(a.is_valid());
}

TEST_CASE("[100]-cut axes from the parametrization") {
  const double s3 = std::sqrt(3.0), s2 = std::sqrt(2.0);
  const std::array<FieldVector, 4> ref{FieldVector(s2, 0, 1) / s3, FieldVector(0, s2, -1) / s3,
                                       FieldVector(-s2, 0, 1) / s3, FieldVector(0, -s2, -1) / s3};
  const double theta = std::asin(1.0 / s3);
  auto align = [&](double a) { return axes_from_angles(theta, 0.0, a).n[1].dot(ref[1]); };
  // Coarse scan, then bisection on the derivative of the alignment.
  double best = 0.0;
  for (int i = 0; i < 36000; ++i) {
    const double a = 2 * kPi * i / 36000.0;
    if (align(a) > align(best)) best = a;
  }
  const double h = 1e-6;
  auto slope = [&](double a) { return align(a + h) - align(a - h); };
  double lo = best - 2e-3, hi = best + 2e-3;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (slope(mid) > 0 ? lo : hi) = mid;
  }
  const AxesSet a = axes_from_angles(theta, 0.0, 0.5 * (lo + hi));
  CHECK((a.n[0] - ref[0]).norm() < 1e-9);
  CHECK((a.n[1] - ref[1]).norm() < 1e-9);
  // The remaining two come out with labels 3 and 4 exchanged; as a set they match.
  CHECK((a.n[2] - ref[3]).norm() < 1e-9);
  CHECK((a.n[3] - ref[2]).norm() < 1e-9);
  CHECK(match_axes(hundred_cut_axes(), a).mean_dgc < 1e-9);
}

TEST_CASE("two unit-offset spheres meet in the x = 0 plane") {
  const double r = std::sqrt(1.0 + 0.05 * 0.05);
  const DegeneracyResult g = intersect_two_spheres(SphereConstraint{FieldVector(1, 0, 0), r},
                                                   SphereConstraint{FieldVector(-1, 0, 0), r});
  REQUIRE(g.kind == DegeneracyKind::kRing);
  CHECK(g.ring->center.norm() < 1e-12);
  CHECK(g.ring->radius == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(std::abs(std::abs(g.ring->normal.x()) - 1.0) < 1e-12);
  CHECK(g.ring->distance(FieldVector(0, 0, -0.05)) < 1e-12);
}

TEST_CASE("three axis spheres give the truth and its mirror across x + y + z = -1") {
  const FieldVector truth(0, 0, -0.05);
  std::vector<SphereConstraint> s;
  for (const FieldVector& b : {FieldVector(1, 0, 0), FieldVector(0, 1, 0), FieldVector(0, 0, 1)}) {
    s.push_back(SphereConstraint::from_bias(b, (b + truth).norm()));
  }
  const DegeneracyResult g = intersect_three_spheres(s[0], s[1], s[2]);
  REQUIRE(g.kind == DegeneracyKind::kPointPair);
  REQUIRE(g.solutions.size() == 2);
  const FieldVector n = FieldVector(1, 1, 1).normalized();
  const double d = n.dot(truth) + 1.0 / std::sqrt(3.0);
  const FieldVector mirror = truth - 2.0 * d * n;
  CHECK(mirror.isApprox(FieldVector(-1.9 / 3.0, -1.9 / 3.0, -0.05 - 1.9 / 3.0), 1e-12));
  const bool order = (g.solutions[0] - truth).norm() < (g.solutions[1] - truth).norm();
  CHECK((g.solutions[order ? 0 : 1] - truth).norm() < 1e-9);
  CHECK((g.solutions[order ? 1 : 0] - mirror).norm() < 1e-9);

  // Uniformly shrunk radii: whatever is left must agree with the oracle.
  std::array<oracle::Vec, 3> centers{};
  std::array<double, 3> radii{};
  for (int k = 0; k < 3; ++k) {
    s[k].radius *= 0.9;
    centers[k] = ov(s[k].center);
    radii[k] = s[k].radius;
  }
  const DegeneracyResult shrunk = intersect_three_spheres(s[0], s[1], s[2]);
  const auto expect = oracle::trilaterate(centers, radii);
  CHECK(shrunk.solutions.size() == expect.size());
  for (std::size_t k = 0; k < std::min(expect.size(), shrunk.solutions.size()); ++k) {
    double best = 1e9;
    for (const auto& q : expect) best = std::min(best, std::sqrt(oracle::dot(ov(shrunk.solutions[k]) - q, ov(shrunk.solutions[k]) - q)));
    CHECK(best < 1e-9);
  }

  // A fourth non-coplanar sphere resolves the pair.
  s = {};
  for (const FieldVector& b : {FieldVector(1, 0, 0), FieldVector(0, 1, 0), FieldVector(0, 0, 1), FieldVector(-1, -1, -1)}) {
    s.push_back(SphereConstraint::from_bias(b, (b + truth).norm()));
  }
  const DegeneracyResult u = resolve_unique(s);
  REQUIRE(u.kind == DegeneracyKind::kUnique);
  CHECK((u.solutions[0] - truth).norm() < 1e-9);
}
