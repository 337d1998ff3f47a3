#pragma once

// Joint estimation of the NV axes orientation and the local field from
// splitting tables by multistart least squares, plus coil calibration and
// the across-run dispersion metrics.
//
// Splitting rows are treated as unlabeled: each measured row is sorted in
// descending order and compared with the sorted model splittings of the same
// bias field. Axis labels are therefore a gauge freedom of the fit.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nvmag/geometry.hpp"
#include "nvmag/least_squares.hpp"
#include "nvmag/physics.hpp"
#include "nvmag/splitting_table.hpp"

namespace nvmag {

// Search strategy: n_starts quasi-random B_loc starts are first pulled onto
// the least-squares intersection of the orientation-free |B_total| spheres;
// for every distinct seed the cost is screened over `orientation_samples`
// quasi-random orientations and the best `candidates_per_seed` are polished
// by a joint Levenberg-Marquardt fit of all six parameters. Finally the best
// endpoint is perturbed `refinements` times (seeded Gaussian steps) and
// re-polished, keeping any improvement.
struct ReconstructionConfig {
  int n_starts = 64;
  int orientation_samples = 8192;
  int candidates_per_seed = 16;
  int refinements = 48;
  double refinement_rad = 0.1;
  double refinement_mt = 0.005;
  FieldVector b_loc_lower = FieldVector::Constant(-0.2);  // mT
  FieldVector b_loc_upper = FieldVector::Constant(0.2);
  double weight = 1.0;  // w, per squared MHz
  double local_solver_tol = 1e-12;
  int max_iter = 500;
  double fd_step = 1e-7;
  double cluster_radius_mt = 1e-3;
  double cluster_radius_rad = 1e-3;
  // Clusters tie when cost <= best + max(tie_relative * best, tie_absolute).
  double tie_relative = 1e-6;
  double tie_absolute = 1e-9;
  std::uint64_t rng_seed = 0;
  int threads = 1;

  void validate() const;
};

struct Solution {
  OrientationParams params;
  FieldVector b_loc = FieldVector::Zero();
  double cost = 0.0;

  AxesSet axes() const { return axes_from_params(params); }
};

struct Cluster {
  Solution representative;
  int members = 0;
  bool at_bound = false;  // some B_loc component sits on the box boundary
  int first_start = 0;    // lowest start index among members
};

struct StartTrace {
  int start = 0;  // local solve index (seed * candidates_per_seed + candidate, then refinements)
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  StopReason reason = StopReason::kMaxIterations;
};

/// Gauss-Newton standard errors of the best fit (single-fit uncertainty,
/// distinct from the across-run spread of delta_b()).
struct FitUncertainty {
  std::array<double, 3> angles{};  // theta1, phi1, alpha (rad)
  FieldVector b_loc = FieldVector::Zero();
};

struct ReconstructionResult {
  Solution best;
  std::vector<Cluster> clusters;  // ascending cost
  double converged_fraction = 0.0;
  Eigen::MatrixX4d residuals;  // measured - model, rows sorted descending
  int tied_clusters = 1;
  bool underdetermined = false;  // fewer than three bias fields
  FitUncertainty uncertainty;
  std::vector<StartTrace> traces;

  bool degenerate() const { return tied_clusters > 1 || underdetermined; }
};

/// Model splittings per bias field, columns in axis order (not sorted).
Eigen::MatrixX4d calculated_splittings(const AxesSet& axes, const FieldVector& b_loc,
                                       const std::vector<FieldVector>& bias_fields,
                                       const PhysicalConstants& c = {});

/// measured - model with both rows sorted descending.
Eigen::MatrixX4d splitting_residuals(const OrientationParams& params, const FieldVector& b_loc,
                                     const std::vector<FieldVector>& bias_fields,
                                     const SplittingTable& measured, const PhysicalConstants& c = {});

/// sum_ij w (S_measured - S_model)^2
double cost(const OrientationParams& params, const FieldVector& b_loc, const std::vector<FieldVector>& bias_fields,
            const SplittingTable& measured, double w = 1.0, const PhysicalConstants& c = {});

/// Central-difference Jacobian of the weighted residual vector with respect to
/// (theta1, phi1, alpha, bx, by, bz).
Eigen::MatrixXd numerical_jacobian(const OrientationParams& params, const FieldVector& b_loc,
                                   const std::vector<FieldVector>& bias_fields, const SplittingTable& measured,
                                   double w = 1.0, const PhysicalConstants& c = {}, double step = 1e-7);

ReconstructionResult reconstruct(const SplittingTable& measured, const std::vector<FieldVector>& bias_fields,
                                 const ReconstructionConfig& config = {}, const PhysicalConstants& c = {});

/// Linear coil model: field = m * currents + offset.
struct CoilModel {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();  // mT per A
  FieldVector offset = FieldVector::Zero();          // mT

  FieldVector field(const Eigen::Vector3d& currents_a) const { return m * currents_a + offset; }
};

/// cost() with the bias fields produced by a coil model.
double coil_cost(const CoilModel& model, const std::vector<Eigen::Vector3d>& currents,
                 const OrientationParams& params, const FieldVector& b_loc, const SplittingTable& measured,
                 double w = 1.0, const PhysicalConstants& c = {});

struct CoilCalibration {
  CoilModel model;
  ReconstructionResult reconstruction;
};

/// Joint fit of the coil matrix, orientation and B_loc. The offset cannot be
/// separated from B_loc by splittings alone and is held at `offset_prior`.
/// The lab frame is only defined up to a rotation, which is fixed by returning
/// m upper-triangular with a positive diagonal.
CoilCalibration calibrate_coils(const std::vector<Eigen::Vector3d>& currents, const SplittingTable& measured,
                                const ReconstructionConfig& config = {}, const PhysicalConstants& c = {},
                                const FieldVector& offset_prior = FieldVector::Zero());

/// Per-component population standard deviation (divides by N).
FieldVector delta_b(const std::vector<FieldVector>& runs);

/// Mean great-circle distance of each axis to its mean direction. Runs must
/// already be matched to a common reference.
std::array<double, 4> axes_dispersion(const std::vector<AxesSet>& runs);

}  // namespace nvmag
