#include <doctest.h>

#include <cmath>

#include "nvmag/least_squares.hpp"

using namespace nvmag;

TEST_CASE("Rosenbrock as a least-squares problem") {
  LeastSquaresProblem p;
  p.num_residuals = 2;
  p.residuals = [](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r.resize(2);
    r << 10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0];
  };
  const auto s = levenberg_marquardt(p, Eigen::Vector2d(-1.2, 1.0));
  CHECK(s.converged());
  CHECK(s.x[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.x[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.cost < 1e-12);
  CHECK(s.cost <= s.initial_cost);
}

TEST_CASE("exponential fit with an analytic Jacobian") {
  // y = 2 exp(-0.7 t) sampled without noise.
  std::vector<double> t, y;
  for (int i = 0; i < 20; ++i) {
    t.push_back(0.25 * i);
    y.push_back(2.0 * std::exp(-0.7 * t.back()));
  }
  LeastSquaresProblem p;
  p.num_residuals = 20;
  p.residuals = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r.resize(20);
    for (int i = 0; i < 20; ++i) r[i] = x[0] * std::exp(-x[1] * t[i]) - y[i];
  };
  p.jacobian = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& j) {
    j.resize(20, 2);
    for (int i = 0; i < 20; ++i) {
      j(i, 0) = std::exp(-x[1] * t[i]);
      j(i, 1) = -x[0] * t[i] * std::exp(-x[1] * t[i]);
    }
  };
  const auto s = levenberg_marquardt(p, Eigen::Vector2d(1.0, 0.1));
  CHECK(s.x[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(s.x[1] == doctest::Approx(0.7).epsilon(1e-8));
}

TEST_CASE("projection keeps iterates inside the bounds") {
  LeastSquaresProblem p;
  p.num_residuals = 1;
  p.residuals = [](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r.resize(1);
    r[0] = x[0] - 5.0;
  };
  p.project = [](Eigen::VectorXd& x) { x[0] = std::min(x[0], 2.0); };
  const auto s = levenberg_marquardt(p, Eigen::VectorXd::Zero(1));
  CHECK(s.x[0] == doctest::Approx(2.0));
}

TEST_CASE("central differences match a known Jacobian") {
  const ResidualFn f = [](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r.resize(2);
    r << std::sin(x[0]) * x[1], x[0] * x[0];
  };
  Eigen::MatrixXd j;
  central_difference_jacobian(f, Eigen::Vector2d(0.3, 2.0), 2, 1e-6, j);
  CHECK(j(0, 0) == doctest::Approx(2.0 * std::cos(0.3)).epsilon(1e-8));
  CHECK(j(0, 1) == doctest::Approx(std::sin(0.3)).epsilon(1e-8));
  CHECK(j(1, 0) == doctest::Approx(0.6).epsilon(1e-8));
  CHECK(j(1, 1) == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("Gauss-Newton covariance of a straight-line fit") {
  // Design [1, t] with t = 0..3; (J^T J)^-1 is known in closed form.
  Eigen::MatrixXd j(4, 2);
  j << 1, 0, 1, 1, 1, 2, 1, 3;
  const double cost = 2.0;  // s^2 = 2 / (4 - 2) = 1
  const Eigen::MatrixXd cov = gauss_newton_covariance(j, cost);
  // J^T J = [[4, 6], [6, 14]], det = 20.
  CHECK(cov(0, 0) == doctest::Approx(14.0 / 20.0));
  CHECK(cov(1, 1) == doctest::Approx(4.0 / 20.0));
  CHECK(cov(0, 1) == doctest::Approx(-6.0 / 20.0));
  CHECK(gauss_newton_covariance(j.topRows(2), 1.0).isZero());
}

TEST_CASE("non-finite residuals stop the solver") {
  LeastSquaresProblem p;
  p.num_residuals = 1;
  p.residuals = [](const Eigen::VectorXd&, Eigen::VectorXd& r) {
    r.resize(1);
    r[0] = NAN;
  };
  const auto s = levenberg_marquardt(p, Eigen::VectorXd::Zero(1));
  CHECK_FALSE(s.converged());
}
