#include "r2r/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "r2r/nelder_mead.hpp"
#include "r2r/parallel.hpp"

namespace r2r {

OutputModel simulated_output_model(const ModelParameters& base, const SampleSchedule& schedule,
                                   const IntegratorOptions& integrator) {
  return [base, schedule, integrator](const ParameterVector& theta, const InputConditions& u) {
    return model_outputs(base.with_theta(theta), u, schedule, integrator);
  };
}

bool ParameterBox::contains(const ParameterVector& t) const {
  return (t.array() >= lower.array()).all() && (t.array() <= upper.array()).all();
}

ParameterBox ParameterBox::around(const ParameterVector& nominal, double lo, double hi) {
  return {nominal * lo, nominal * hi};
}

OutputScales output_scales(const MeasurementSet& m) {
  OutputScales s{};
  for (const auto& y : m.y_m) {
    for (int o = 0; o < kNumOutputs; ++o) s[o] = std::max(s[o], std::abs(y[o]));
  }
  for (double& v : s) {
    if (!(v > 0.0)) v = 1.0;
  }
  return s;
}

Eigen::VectorXd residual_weights(const OutputScales& scales, std::size_t n_samples,
                                 ResidualWeighting weighting) {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(kNumOutputs * n_samples);
  if (weighting == ResidualWeighting::kScaled) {
    for (std::size_t i = 0; i < n_samples; ++i) {
      for (int o = 0; o < kNumOutputs; ++o) w[kNumOutputs * i + o] = 1.0 / scales[o];
    }
  }
  return w;
}

EstimationError::EstimationError(const std::string& what, FitResult best)
    : std::runtime_error(what), best_(std::move(best)) {}

Eigen::VectorXd weighted_residuals(const MeasurementSet& m, const InputConditions& u,
                                   const OutputModel& model, const ParameterVector& theta,
                                   ResidualWeighting weighting) {
  const Eigen::VectorXd y = model(theta, u);
  const Eigen::VectorXd ym = m.flattened();
  if (y.size() != ym.size()) {
    throw std::invalid_argument("model output size does not match the measurement grid");
  }
  const Eigen::VectorXd w = residual_weights(output_scales(m), m.size(), weighting);
  return w.cwiseProduct(ym - y);
}

namespace {

std::vector<ParameterVector> latin_hypercube(const ParameterBox& box, int count,
                                             std::uint64_t seed) {
  std::vector<ParameterVector> pts(count);
  if (count <= 0) return pts;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int d = 0; d < 2; ++d) {
    std::vector<int> perm(count);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const double lo = std::log(box.lower[d]);
    const double hi = std::log(box.upper[d]);
    for (int i = 0; i < count; ++i) {
      const double frac = (perm[i] + unit(rng)) / count;
      pts[i][d] = std::exp(lo + frac * (hi - lo));
    }
  }
  return pts;
}

}  // namespace

FitResult identify(const MeasurementSet& measurements, const InputConditions& u,
                   const OutputModel& model, const ParameterVector& theta_init,
                   const FitOptions& opts) {
  if (!opts.bounds.contains(theta_init)) {
    throw std::invalid_argument("identify: initial parameters outside the bounds");
  }
  if (measurements.size() == 0) throw std::invalid_argument("identify: no measurements");

  const Eigen::VectorXd ym = measurements.flattened();
  const Eigen::VectorXd w =
      residual_weights(output_scales(measurements), measurements.size(), opts.weighting);

  std::vector<ParameterVector> starts{theta_init};
  for (const auto& p : latin_hypercube(opts.bounds, opts.starts - 1, opts.lhs_seed)) {
    starts.push_back(p);
  }

  optim::NelderMeadOptions nm;
  nm.lower = opts.bounds.lower.array().log();
  nm.upper = opts.bounds.upper.array().log();
  nm.initial_step = Eigen::Vector2d::Constant(0.05);
  nm.xtol = std::max(opts.screen_xtol, opts.xtol);
  nm.ftol = 1e-15;
  nm.max_evals = opts.max_evals_per_start;
  nm.restarts = 0;

  auto objective = [&](const Eigen::VectorXd& log_theta) {
    const ParameterVector theta = log_theta.array().exp();
    return w.cwiseProduct(ym - model(theta, u)).squaredNorm();
  };

  // Every start is screened at a coarse tolerance; only the best is polished.
  std::vector<optim::NelderMeadResult> results(starts.size());
  parallel_for(starts.size(), opts.threads, [&](std::size_t i) {
    results[i] = optim::minimize(objective, starts[i].array().log().matrix(), nm);
  });

  // Lowest value wins; ties go to the lower start index.
  std::size_t best = 0;
  int evals = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    evals += results[i].evals;
    if (results[i].value < results[best].value) best = i;
  }
  nm.xtol = opts.xtol;
  nm.restarts = 1;
  optim::NelderMeadResult polished = optim::minimize(objective, results[best].x, nm);
  evals += polished.evals;
  if (polished.value <= results[best].value) results[best] = polished;
  results[best].converged = polished.converged;
  const bool any_converged = polished.converged;

  FitResult fit;
  fit.theta_hat = results[best].x.array().exp();
  fit.residuals = w.cwiseProduct(ym - model(fit.theta_hat, u));
  fit.sse = fit.residuals.squaredNorm();
  fit.n_evals = evals + 1;
  fit.converged = results[best].converged;
  if (!any_converged) {
    throw EstimationError("identify: no start converged within the evaluation budget", fit);
  }
  fit.belief = laplace_belief(fit.theta_hat, measurements, u, model, opts);
  return fit;
}

GaussianBelief laplace_from_jacobian(const Eigen::Vector2d& mean, const Eigen::MatrixXd& jacobian,
                                     double sse) {
  if (jacobian.cols() != 2) throw std::invalid_argument("laplace: Jacobian must have 2 columns");
  const double dof = std::max<double>(1.0, static_cast<double>(jacobian.rows()) - 2.0);
  const double sigma2 = sse / dof;
  Eigen::Matrix2d info = jacobian.transpose() * jacobian;
  GaussianBelief b;
  b.mean = mean;
  b.regularized = regularize_covariance(info);
  Eigen::Matrix2d cov = sigma2 * info.inverse();
  cov = 0.5 * (cov + cov.transpose());
  b.regularized = regularize_covariance(cov) || b.regularized;
  b.covariance = cov;
  return b;
}

GaussianBelief laplace_belief(const ParameterVector& theta, const MeasurementSet& measurements,
                              const InputConditions& u, const OutputModel& model,
                              const FitOptions& opts) {
  if (!theta.allFinite()) throw std::invalid_argument("laplace: non-finite parameters");
  const Eigen::VectorXd r0 = weighted_residuals(measurements, u, model, theta, opts.weighting);
  Eigen::MatrixXd J(r0.size(), 2);
  for (int j = 0; j < 2; ++j) {
    const double h = opts.fd_step * std::max(std::abs(theta[j]), 1e-12);
    ParameterVector tp = theta;
    ParameterVector tm = theta;
    tp[j] += h;
    tm[j] -= h;
    J.col(j) = (weighted_residuals(measurements, u, model, tp, opts.weighting) -
                weighted_residuals(measurements, u, model, tm, opts.weighting)) /
               (2 * h);
  }
  return laplace_from_jacobian(theta, J, r0.squaredNorm());
}

bool regularize_covariance(Eigen::Matrix2d& cov) {
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (hi > 0.0 && lo >= 1e-12 * hi && std::isfinite(lo) && std::isfinite(hi)) return false;
  const double diag = std::max(cov.diagonal().maxCoeff(), 0.0);
  // A zero matrix has no scale to borrow; fall back to a tiny absolute floor.
  double eps = diag > 0.0 ? 1e-10 * diag : 1e-300;
  if (lo < 0.0) eps += -lo * (1.0 + 1e-12);
  cov += eps * Eigen::Matrix2d::Identity();
  return true;
}

double kl_divergence(const GaussianBelief& p, const GaussianBelief& q) {
  const Eigen::LLT<Eigen::Matrix2d> lp(p.covariance);
  const Eigen::LLT<Eigen::Matrix2d> lq(q.covariance);
  if (lp.info() != Eigen::Success || lq.info() != Eigen::Success) {
    throw std::invalid_argument("kl_divergence: covariance is not positive definite");
  }
  const Eigen::Vector2d diff = q.mean - p.mean;
  const double trace = lq.solve(p.covariance).trace();
  const double maha = diff.dot(lq.solve(diff));
  const double logdet_q = 2.0 * lq.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_p = 2.0 * lp.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double kl = 0.5 * (trace + maha - 2.0 + logdet_q - logdet_p);
  return std::max(kl, 0.0);
}

}  // namespace r2r
