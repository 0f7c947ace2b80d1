#pragma once

#include <functional>

#include <Eigen/Core>

namespace r2r::optim {

struct NelderMeadOptions {
  Eigen::VectorXd lower;  // empty = unbounded
  Eigen::VectorXd upper;
  Eigen::VectorXd initial_step;  // empty = 5% of the box (or 0.1) per coordinate
  double xtol = 1e-8;            // simplex extent, coordinate-wise
  double ftol = 1e-12;           // relative spread of simplex values
  int max_evals = 2000;
  int restarts = 2;              // re-seed the simplex at the best point
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evals = 0;
  bool converged = false;
};

/// Derivative-free minimization. Bounds are enforced by evaluating the
/// objective at the projected point and adding a quadratic distance penalty,
/// so the returned point always lies inside the box.
NelderMeadResult minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                          const Eigen::VectorXd& x0, const NelderMeadOptions& opts = {});

}  // namespace r2r::optim
