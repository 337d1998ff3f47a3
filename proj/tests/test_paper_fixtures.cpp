#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nvmag/geometry.hpp"

using namespace nvmag;

namespace {

// Reported mean axes of the bulk plate, as offsets from the [100]-cut set.
AxesSet reported_axes() {
  const AxesSet ideal = hundred_cut_axes();
  const std::array<FieldVector, 4> shift{FieldVector(-0.0061, -0.0051, 0.0085), FieldVector(0.0013, 0.0095, 0.0137),
                                         FieldVector(-0.0061, -0.0142, -0.0088),
                                         FieldVector(0.0108, 0.0098, -0.0135)};
  AxesSet a;
  for (int k = 0; k < 4; ++k) a.n[k] = (ideal.n[k] + shift[k]).normalized();
  return a;
}

}  // namespace

TEST_CASE("reported axes: matched deviation equals the direct per-axis angle") {
  const AxesSet ideal = hundred_cut_axes();
  const AxesSet got = reported_axes();
  double direct = 0.0;
  for (int k = 0; k < 4; ++k) direct += std::acos(std::clamp(got.n[k].dot(ideal.n[k]), -1.0, 1.0)) / 4.0;
  const AxesMatch m = match_axes(got, ideal);
  CHECK(m.mean_dgc == doctest::Approx(direct).epsilon(1e-9));
  // Frozen from the direct evaluation above: 0.94565 degrees.
  CHECK(m.mean_dgc * 180.0 / std::numbers::pi == doctest::Approx(0.945654).epsilon(1e-5));
}

TEST_CASE("reported axes lie within half a degree of the [100]-cut set") {
  const double d = match_axes(reported_axes(), hundred_cut_axes()).mean_dgc;
  MESSAGE("mean d_gc of the reported axes: " << d * 180.0 / std::numbers::pi << " deg");
  CHECK(d < 0.5 * std::numbers::pi / 180.0);
}
