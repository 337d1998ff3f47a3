#include "nvmag/least_squares.hpp"

#include <algorithm>
#include <cmath>

namespace nvmag {

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::kCostTolerance: return "cost-tolerance";
    case StopReason::kStepTolerance: return "step-tolerance";
    case StopReason::kGradientTolerance: return "gradient-tolerance";
    case StopReason::kZeroCost: return "zero-cost";
    case StopReason::kDampingLimit: return "damping-limit";
    case StopReason::kMaxIterations: return "max-iterations";
    case StopReason::kNonFinite: return "non-finite";
  }
  return "unknown";
}

void central_difference_jacobian(const ResidualFn& f, const Eigen::VectorXd& x, Eigen::Index m,
                                 double step, Eigen::MatrixXd& jac) {
  jac.resize(m, x.size());
  Eigen::VectorXd xp = x;
  Eigen::VectorXd rp(m), rm(m);
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double orig = xp(k);
    xp(k) = orig + step;
    f(xp, rp);
    xp(k) = orig - step;
    f(xp, rm);
    xp(k) = orig;
    jac.col(k) = (rp - rm) / (2.0 * step);
  }
}

LeastSquaresSummary levenberg_marquardt(const LeastSquaresProblem& problem, Eigen::VectorXd x,
                                        const LeastSquaresOptions& opts) {
  const Eigen::Index m = problem.num_residuals;
  const Eigen::Index n = x.size();
  auto eval_jac = [&](const Eigen::VectorXd& at, Eigen::MatrixXd& jac) {
    if (problem.jacobian) {
      problem.jacobian(at, jac);
    } else {
      central_difference_jacobian(problem.residuals, at, m, opts.fd_step, jac);
    }
  };

  if (problem.project) problem.project(x);
  LeastSquaresSummary out;
  Eigen::VectorXd r(m);
  problem.residuals(x, r);
  double cost = r.squaredNorm();
  out.initial_cost = cost;
  if (!std::isfinite(cost)) {
    out.x = x;
    out.residuals = r;
    out.cost = cost;
    out.reason = StopReason::kNonFinite;
    return out;
  }

  Eigen::MatrixXd jac;
  eval_jac(x, jac);
  Eigen::VectorXd scale = Eigen::VectorXd::Zero(n);
  double damping = opts.initial_damping;
  double nu = 2.0;
  bool first = true;
  Eigen::VectorXd r_new(m);
  Eigen::VectorXd x_new(n);

  out.reason = StopReason::kMaxIterations;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    if (cost == 0.0) {
      out.reason = StopReason::kZeroCost;
      break;
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd g = jac.transpose() * r;
    if (opts.gradient_tol > 0.0 && g.lpNorm<Eigen::Infinity>() <= opts.gradient_tol) {
      out.reason = StopReason::kGradientTolerance;
      break;
    }
    for (Eigen::Index k = 0; k < n; ++k) scale(k) = std::max(scale(k), jtj(k, k));
    if (first) {
      damping *= std::max(scale.maxCoeff(), 1e-300);
      first = false;
    }

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd a = jtj;
      for (Eigen::Index k = 0; k < n; ++k) a(k, k) += damping * std::max(scale(k), 1e-300);
      const Eigen::VectorXd step = a.ldlt().solve(-g);
      if (!step.allFinite()) {
        out.reason = StopReason::kNonFinite;
        break;
      }
      x_new = x + step;
      if (problem.project) problem.project(x_new);
      const Eigen::VectorXd actual_step = x_new - x;
      if (actual_step.norm() <= opts.step_tol * (x.norm() + opts.step_tol)) {
        out.reason = StopReason::kStepTolerance;
        break;
      }
      problem.residuals(x_new, r_new);
      const double cost_new = r_new.squaredNorm();
      // Predicted reduction for the linearized model.
      const double predicted = -(2.0 * g.dot(actual_step) + (jac * actual_step).squaredNorm());
      const double rho = (predicted > 0.0) ? (cost - cost_new) / predicted : -1.0;
      if (std::isfinite(cost_new) && cost_new < cost && rho > 0.0) {
        const double decrease = cost - cost_new;
        x = x_new;
        r = r_new;
        cost = cost_new;
        damping *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
        nu = 2.0;
        accepted = true;
        eval_jac(x, jac);
        if (decrease <= opts.cost_tol * (cost + decrease)) out.reason = StopReason::kCostTolerance;
      } else {
        damping *= nu;
        nu *= 2.0;
        if (damping > 1e32 || !std::isfinite(damping)) {
          out.reason = StopReason::kDampingLimit;
          break;
        }
      }
    }
    if (!accepted || out.reason == StopReason::kCostTolerance) {
      ++it;
      break;
    }
  }

  out.x = x;
  out.residuals = r;
  out.jacobian = jac;
  out.cost = cost;
  out.iterations = it;
  return out;
}

Eigen::MatrixXd gauss_newton_covariance(const Eigen::MatrixXd& jac, double cost) {
  const Eigen::Index m = jac.rows();
  const Eigen::Index n = jac.cols();
  if (m <= n) return Eigen::MatrixXd::Zero(n, n);
  const double s2 = cost / static_cast<double>(m - n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const double cutoff = 1e-12 * (sv.size() ? sv(0) : 0.0);
  Eigen::VectorXd inv2 = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index k = 0; k < sv.size(); ++k) {
    if (sv(k) > cutoff) inv2(k) = 1.0 / (sv(k) * sv(k));
  }
  return s2 * svd.matrixV() * inv2.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace nvmag
