#pragma once

#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "r2r/dynamics.hpp"
#include "r2r/estimation.hpp"
#include "r2r/problem.hpp"

namespace r2r {

/// Cumulative linear output correction C_k = sum_j c_j over the measurement
/// grid. Corrected outputs are y_raw - C, with C held fixed in u.
struct CorrectionLedger {
  struct Entry {
    int k = 0;
    ParameterVector dtheta = ParameterVector::Zero();
    Eigen::VectorXd c;
  };

  std::vector<double> sample_grid;
  Eigen::VectorXd C;  // flattened sample-major (X, P, S)
  std::vector<Entry> history;

  static CorrectionLedger empty(std::vector<double> grid);
  double max_abs() const { return C.size() ? C.cwiseAbs().maxCoeff() : 0.0; }
  /// Largest |C| per output, each divided by that output's scale.
  double max_scaled(const OutputScales& scales) const;

  void write_csv(std::ostream& os) const;  // t,output,C
};

/// C_k = C_{k-1} + c_k; returns a new ledger, the input is untouched.
/// Throws std::invalid_argument on a grid/size mismatch.
CorrectionLedger apply_correction(const CorrectionLedger& ledger, const Eigen::VectorXd& c_k, int k,
                                  const ParameterVector& dtheta);

struct CorrectedModel {
  ParameterVector theta_prime;
  CorrectionLedger ledger;
  OutputModel raw;
};

Eigen::VectorXd eval_corrected(const CorrectedModel& model, const InputConditions& u);

/// Raw model evaluator shifted by a constant correction vector.
OutputModel corrected_output_model(const OutputModel& raw, const Eigen::VectorXd& correction);

struct CorrectionConfig {
  double eps_trunc_max = 0.05;
  bool auto_weights = true;  // 1 / max(|measured gradient|, 1), componentwise
  Eigen::Vector2d w_phi = Eigen::Vector2d::Ones();
  Eigen::Vector2d w_g = Eigen::Vector2d::Ones();
  ParameterBox theta_bounds{{0.03, 0.02}, {0.75, 0.5}};
  double fd_step_theta = 1e-4;  // relative
  GradientOptions gradients;    // input-gradient probing of the corrected model
  double denominator_floor = 1e-3;  // times the output scale

  void validate() const;
};

/// Central-difference Jacobian of sampled outputs w.r.t. (K_X, K_I); rows
/// follow the flattened output layout. The ledger shifts outputs by a
/// constant, so it does not enter.
Eigen::MatrixXd output_jacobian(const OutputModel& raw, const ParameterVector& theta,
                                const InputConditions& u, double fd_step);

/// Relative first-order remainder |y(t + dt) - y(t) - D dt| / max(|y(t)|, floor * scale).
Eigen::VectorXd truncation_error(const Eigen::VectorXd& y_theta, const Eigen::VectorXd& y_shifted,
                                 const Eigen::MatrixXd& D, const ParameterVector& dtheta,
                                 const OutputScales& scales, double floor);

Eigen::VectorXd truncation_error(const OutputModel& raw, const ParameterVector& theta,
                                 const ParameterVector& dtheta, const InputConditions& u,
                                 const OutputScales& scales, double fd_step, double floor);

/// The gradient-matching problem at one iteration: weighted L1 mismatch
/// between measured and corrected-model input gradients, as a function of
/// the parameter move, with the corrected output y(t_k + dt) - D dt - C.
class GradientMatchProblem {
 public:
  GradientMatchProblem(OutputModel raw, OptimizationSpec spec, ParameterVector theta_k,
                       DecisionVector u_k, ProcessGradients measured, CorrectionConfig cfg,
                       Eigen::VectorXd ledger_C, OutputScales scales);

  struct Evaluation {
    double mismatch = 0.0;
    double max_truncation = 0.0;
    ProcessGradients model;
  };

  Evaluation evaluate(const ParameterVector& dtheta) const;
  bool within_bounds(const ParameterVector& dtheta) const;

  const Eigen::MatrixXd& jacobian() const { return D_; }
  const Eigen::VectorXd& outputs_at_theta() const { return y0_; }
  const Eigen::Vector2d& w_phi() const { return w_phi_; }
  const Eigen::Vector2d& w_g() const { return w_g_; }
  const ParameterVector& theta() const { return theta_k_; }
  const CorrectionConfig& config() const { return cfg_; }

 private:
  OutputModel raw_;
  OptimizationSpec spec_;
  ParameterVector theta_k_;
  DecisionVector u_k_;
  ProcessGradients measured_;
  CorrectionConfig cfg_;
  Eigen::VectorXd C_;
  OutputScales scales_;
  Eigen::Vector2d w_phi_;
  Eigen::Vector2d w_g_;
  Eigen::VectorXd y0_;
  Eigen::MatrixXd D_;
};

struct GradientMatch {
  ParameterVector dtheta = ParameterVector::Zero();
  Eigen::VectorXd c;  // D(theta_k) dtheta
  double objective = 0.0;
  double objective_at_zero = 0.0;
  double max_truncation = 0.0;
  ProcessGradients model_gradients;
  bool infeasible_start = false;
  bool stalled = false;
  int evaluations = 0;
};

/// Chooses the parameter move that best reproduces the measured gradients
/// while the linear correction stays within the truncation budget
/// (max over samples and outputs), then forms c_k = D(theta_k) dtheta.
GradientMatch solve_gradient_match(const OutputModel& raw, const OptimizationSpec& spec,
                                   const ParameterVector& theta_k, const DecisionVector& u_k,
                                   const ProcessGradients& measured, const CorrectionConfig& cfg,
                                   const CorrectionLedger& ledger, const OutputScales& scales);

}  // namespace r2r
