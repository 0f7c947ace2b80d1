#pragma once

#include <functional>

#include <Eigen/Core>

#include "r2r/dynamics.hpp"

namespace r2r {

struct DecisionBounds {
  DecisionVector lower{1.0, 0.02};   // (g/L, L/h)
  DecisionVector upper{100.0, 0.25};

  bool contains(const DecisionVector& u) const;
};

/// Maximize end-of-batch penicillin mass P(t_f) V(t_f) subject to
/// V(t_f) <= V_max, over u = (S0, F). Solvers and reported gradients work in
/// inputs scaled to [0, 1] by the bound ranges.
struct OptimizationSpec {
  InputConditions base;  // X0, P0, V0, t_f; S0 and F are overwritten
  double V_max = 120.0;  // L
  DecisionBounds bounds;
  double evap_rate = 6.226e-4;

  InputConditions inputs(const DecisionVector& u) const { return base.with_decision(u); }
  DecisionVector to_scaled(const DecisionVector& u) const;
  DecisionVector from_scaled(const DecisionVector& z) const;

  double terminal_volume(const DecisionVector& u) const;
  /// phi = -P(t_f) V(t_f); P(t_f) is the last sample of the flattened outputs.
  double objective(const Eigen::VectorXd& outputs, const DecisionVector& u) const;
  /// g = V(t_f) - V_max.
  double constraint(const DecisionVector& u) const;
  void validate() const;
};

/// Output prediction at arbitrary inputs (model, corrected model, or plant).
using Predictor = std::function<Eigen::VectorXd(const InputConditions&)>;

enum class FdScheme { kForward, kCentral };

struct GradientOptions {
  double step = 0.02;  // in scaled input units
  FdScheme scheme = FdScheme::kForward;
};

/// Objective/constraint values and gradients with respect to scaled inputs.
struct ProcessGradients {
  double phi = 0.0;
  double g = 0.0;
  Eigen::Vector2d grad_phi = Eigen::Vector2d::Zero();
  Eigen::Vector2d grad_g = Eigen::Vector2d::Zero();
  bool backward_used = false;
};

/// Finite-difference gradients of an arbitrary (phi, g) map over scaled
/// inputs; a forward step leaving [0, 1] flips to a backward step.
using ScaledEvaluation = std::function<std::pair<double, double>(const DecisionVector& z, int probe)>;
ProcessGradients fd_gradients(const ScaledEvaluation& eval, const DecisionVector& z,
                              const GradientOptions& opts);

/// Gradients of a predictor's objective/constraint at u. `outputs_at_u` may
/// carry the already computed prediction at u.
ProcessGradients predicted_gradients(const OptimizationSpec& spec, const Predictor& predict,
                                     const DecisionVector& u, const GradientOptions& opts,
                                     const Eigen::VectorXd* outputs_at_u = nullptr);

}  // namespace r2r
