#pragma once

// Small dense Levenberg-Marquardt solver with Marquardt diagonal scaling,
// gain-ratio damping control and an optional projection step for simple
// bounds. Cost is the plain sum of squared residuals (no 1/2 factor).

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace nvmag {

using ResidualFn = std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& r)>;
using JacobianFn = std::function<void(const Eigen::VectorXd& x, Eigen::MatrixXd& jac)>;
using ProjectFn = std::function<void(Eigen::VectorXd& x)>;

struct LeastSquaresProblem {
  Eigen::Index num_residuals = 0;
  ResidualFn residuals;
  JacobianFn jacobian;  // empty: central differences with LeastSquaresOptions::fd_step
  ProjectFn project;    // empty: unconstrained
};

struct LeastSquaresOptions {
  int max_iter = 500;
  double cost_tol = 1e-12;   // stop when an accepted step lowers the cost by less than this fraction
  double step_tol = 1e-14;   // relative step size
  double gradient_tol = 0.0; // infinity norm of J^T r
  double initial_damping = 1e-3;
  double fd_step = 1e-7;
};

enum class StopReason {
  kCostTolerance,
  kStepTolerance,
  kGradientTolerance,
  kZeroCost,
  kDampingLimit,
  kMaxIterations,
  kNonFinite,
};

std::string to_string(StopReason r);

struct LeastSquaresSummary {
  Eigen::VectorXd x;
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;  // at x
  double cost = 0.0;
  double initial_cost = 0.0;
  int iterations = 0;
  StopReason reason = StopReason::kMaxIterations;

  bool converged() const {
    return reason != StopReason::kMaxIterations && reason != StopReason::kNonFinite;
  }
};

void central_difference_jacobian(const ResidualFn& f, const Eigen::VectorXd& x, Eigen::Index m,
                                 double step, Eigen::MatrixXd& jac);

LeastSquaresSummary levenberg_marquardt(const LeastSquaresProblem& problem, Eigen::VectorXd x0,
                                        const LeastSquaresOptions& opts = {});

/// s^2 (J^T J)^+ with s^2 = cost / (m - n); zero matrix when m <= n.
Eigen::MatrixXd gauss_newton_covariance(const Eigen::MatrixXd& jac, double cost);

}  // namespace nvmag
