#pragma once

// NV ground-state spin-1 levels. Units throughout: MHz for frequencies,
// mT for fields.

#include <array>
#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "nvmag/geometry.hpp"
#include "nvmag/splitting_table.hpp"

namespace nvmag {

struct PhysicalConstants {
  double d_gs = 2870.0;             // zero-field splitting, MHz
  double gamma_e = 28.0;            // MHz/mT
  double a_par = -2.16;             // MHz
  double a_perp = -2.70;            // MHz
  double gamma_n = 0.3077;          // 14N, MHz/T (note: per tesla)
  double hyperfine_pair_sep = 3.03; // MHz

  void validate() const;
};

struct SpinLevels {
  double lambda_0 = 0.0;
  double lambda_minus = 0.0;
  double lambda_plus = 0.0;

  double splitting() const { return lambda_plus - lambda_minus; }
  /// m_s = 0 -> -1 and m_s = 0 -> +1 transition frequencies.
  double lower_transition() const { return lambda_minus - lambda_0; }
  double upper_transition() const { return lambda_plus - lambda_0; }
};

struct ProjectionSet {
  std::array<double, 4> p{};
};

/// Roots of
///   lambda[(D - lambda)^2 - g^2 Bp^2] - (lambda - D) g^2 (Bt^2 - Bp^2) = 0.
/// The m_s = 0 root comes from a monotone Newton iteration and the remaining
/// pair from exact deflation, so the +-1 splitting stays accurate at small
/// fields. Near-zero discriminants fall back to dense diagonalization.
///
/// Labels: below g*Bt = D/2 lambda_0 is the root nearest zero. Above that the
/// m_s = 0 branch is tracked from low field, which is the lowest root except
/// for exactly axial fields (a true crossing, where lambda_0 stays at 0).
SpinLevels solve_levels(double b_proj, double b_total_mag, const PhysicalConstants& c = {});

double splitting(double b_proj, double b_total_mag, const PhysicalConstants& c = {});

/// Cubic residual in the factored form above (MHz^3).
double cubic_residual(double lambda, double b_proj, double b_total_mag,
                      const PhysicalConstants& c = {});

/// Real symmetric NV-frame Hamiltonian, |+1>,|0>,|-1> basis, with the
/// transverse field placed along x.
Eigen::Matrix3d nv_frame_hamiltonian(double b_proj, double b_total_mag,
                                     const PhysicalConstants& c = {});

using HyperfineMatrix = Eigen::Matrix<std::complex<double>, 9, 9>;

/// D Sz^2 + g_e B.S + S.A.I - g_n B.I in the |m_s> (x) |m_I> basis,
/// both ordered +1, 0, -1. Field in the NV frame.
HyperfineMatrix hyperfine_hamiltonian(const FieldVector& b_nv_frame, const PhysicalConstants& c = {});

/// Ascending eigenvalues of hyperfine_hamiltonian().
std::array<double, 9> solve_levels_hyperfine(const FieldVector& b_nv_frame,
                                             const PhysicalConstants& c = {});

ProjectionSet project(const FieldVector& b_total, const AxesSet& axes);

/// sqrt(3/4 * sum p_j^2); valid for any tetrahedral axes set.
double total_field_magnitude(const ProjectionSet& projections);

/// Inverse of splitting() in b_proj at fixed |B|, searching [0, |B|]. Values
/// outside the reachable range are clamped; `clamped` reports by how much (MHz).
double invert_splitting(double splitting_mhz, double b_total_mag, const PhysicalConstants& c,
                        double* clamped = nullptr);

struct MagnitudeOptions {
  int max_iter = 100;
  double tolerance_mt = 1e-9;
  // Allowed mismatch (MHz) between a splitting and the reachable range at the
  // converged magnitude.
  double consistency_mhz = 1e-6;
};

/// Per-row |B_total| from four unlabeled splittings via fixed-point
/// iteration between the projection-sum identity and the level equation.
std::vector<double> estimate_total_magnitudes(const SplittingTable& splittings,
                                              const PhysicalConstants& c = {},
                                              const MagnitudeOptions& opts = {});

}  // namespace nvmag
