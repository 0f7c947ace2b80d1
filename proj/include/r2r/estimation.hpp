#pragma once

#include <array>
#include <cstdint>
#include <functional>

#include <Eigen/Core>

#include "r2r/dynamics.hpp"

namespace r2r {

/// Sampled model outputs (flattened sample-major X, P, S) as a function of the
/// adjustable parameters and the batch inputs. The default implementation
/// simulates the mismatched model; tests inject synthetic maps here.
using OutputModel =
    std::function<Eigen::VectorXd(const ParameterVector& theta, const InputConditions& u)>;

OutputModel simulated_output_model(const ModelParameters& base, const SampleSchedule& schedule,
                                   const IntegratorOptions& integrator);

struct ParameterBox {
  ParameterVector lower;
  ParameterVector upper;

  bool contains(const ParameterVector& t) const;
  /// Box spanning [lo, hi] times each nominal entry.
  static ParameterBox around(const ParameterVector& nominal, double lo = 0.2, double hi = 5.0);
};

enum class ResidualWeighting { kScaled, kUnweighted };

/// Per-output scale: the largest measured magnitude in the batch.
using OutputScales = std::array<double, kNumOutputs>;
OutputScales output_scales(const MeasurementSet& m);

/// Element weights for flattened residuals: 1/scale per output, or all ones.
Eigen::VectorXd residual_weights(const OutputScales& scales, std::size_t n_samples,
                                 ResidualWeighting weighting);

struct GaussianBelief {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();
  bool regularized = false;
};

struct FitResult {
  ParameterVector theta_hat = ParameterVector::Zero();
  double sse = 0.0;
  Eigen::VectorXd residuals;  // weighted, y_m - y
  GaussianBelief belief;
  int n_evals = 0;
  bool converged = false;
};

struct FitOptions {
  ParameterBox bounds;
  ResidualWeighting weighting = ResidualWeighting::kScaled;
  int starts = 5;  // previous estimate + (starts - 1) Latin-hypercube points
  std::uint64_t lhs_seed = 0x5eed;
  int max_evals_per_start = 600;
  double xtol = 1e-8;     // in log-parameter space
  double screen_xtol = 1e-3;  // per-start screening before the final polish
  double fd_step = 1e-4;  // relative step of the residual Jacobian
  int threads = 1;
};

class EstimationError : public std::runtime_error {
 public:
  EstimationError(const std::string& what, FitResult best);
  const FitResult& best() const { return best_; }

 private:
  FitResult best_;
};

/// Weighted residuals w .* (y_m - model(theta, u)) and their squared norm.
Eigen::VectorXd weighted_residuals(const MeasurementSet& m, const InputConditions& u,
                                   const OutputModel& model, const ParameterVector& theta,
                                   ResidualWeighting weighting);

/// Bounded least squares of the adjustable parameters. `model` is the
/// (ledger-corrected) evaluator. Throws EstimationError carrying the best
/// point when no start converges.
FitResult identify(const MeasurementSet& measurements, const InputConditions& u,
                   const OutputModel& model, const ParameterVector& theta_init,
                   const FitOptions& opts);

/// Gauss-Newton/Laplace covariance sigma^2 (J^T J)^-1 at `theta`, with
/// sigma^2 = sse / (n - 2).
GaussianBelief laplace_belief(const ParameterVector& theta, const MeasurementSet& measurements,
                              const InputConditions& u, const OutputModel& model,
                              const FitOptions& opts);

/// Same, from an explicit residual Jacobian and sse (used by tests and the above).
GaussianBelief laplace_from_jacobian(const Eigen::Vector2d& mean, const Eigen::MatrixXd& jacobian,
                                     double sse);

/// Makes `cov` positive definite: adds 1e-10 max(diag) I when the eigenvalue
/// ratio falls below 1e-12. Returns true when it had to.
bool regularize_covariance(Eigen::Matrix2d& cov);

/// KL(p || q) for Gaussians. Throws std::invalid_argument unless both
/// covariances are positive definite.
double kl_divergence(const GaussianBelief& p, const GaussianBelief& q);

}  // namespace r2r
