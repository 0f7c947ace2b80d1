#include "r2r/correction.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>

#include "r2r/nelder_mead.hpp"

namespace r2r {

CorrectionLedger CorrectionLedger::empty(std::vector<double> grid) {
  CorrectionLedger l;
  l.C = Eigen::VectorXd::Zero(kNumOutputs * grid.size());
  l.sample_grid = std::move(grid);
  return l;
}

double CorrectionLedger::max_scaled(const OutputScales& scales) const {
  double m = 0.0;
  for (Eigen::Index i = 0; i < C.size(); ++i) {
    m = std::max(m, std::abs(C[i]) / scales[i % kNumOutputs]);
  }
  return m;
}

void CorrectionLedger::write_csv(std::ostream& os) const {
  static const char* names[kNumOutputs] = {"X", "P", "S"};
  os << "t,output,C\n";
  char buf[64];
  for (std::size_t i = 0; i < sample_grid.size(); ++i) {
    for (int o = 0; o < kNumOutputs; ++o) {
      std::snprintf(buf, sizeof buf, "%.12g,%s,%.12g\n", sample_grid[i], names[o],
                    C[kNumOutputs * i + o]);
      os << buf;
    }
  }
}

CorrectionLedger apply_correction(const CorrectionLedger& ledger, const Eigen::VectorXd& c_k, int k,
                                  const ParameterVector& dtheta) {
  if (c_k.size() != ledger.C.size() ||
      ledger.C.size() != static_cast<Eigen::Index>(kNumOutputs * ledger.sample_grid.size())) {
    throw std::invalid_argument("apply_correction: correction is not on the ledger grid");
  }
  CorrectionLedger next = ledger;
  next.C += c_k;
  next.history.push_back({k, dtheta, c_k});
  return next;
}

Eigen::VectorXd eval_corrected(const CorrectedModel& model, const InputConditions& u) {
  const Eigen::VectorXd y = model.raw(model.theta_prime, u);
  if (y.size() != model.ledger.C.size()) {
    throw std::invalid_argument("eval_corrected: model outputs do not match the ledger grid");
  }
  return y - model.ledger.C;
}

OutputModel corrected_output_model(const OutputModel& raw, const Eigen::VectorXd& correction) {
  return [raw, correction](const ParameterVector& theta, const InputConditions& u) {
    return Eigen::VectorXd(raw(theta, u) - correction);
  };
}

void CorrectionConfig::validate() const {
  if (!(eps_trunc_max > 0.0)) throw std::invalid_argument("eps_trunc_max must be positive");
  if (!auto_weights) {
    if ((w_phi.array() < 0).any() || (w_g.array() < 0).any() ||
        (w_phi.sum() + w_g.sum()) <= 0.0) {
      throw std::invalid_argument("gradient weights must be non-negative and not all zero");
    }
  }
  if (!((theta_bounds.lower.array() > 0).all() &&
        (theta_bounds.lower.array() < theta_bounds.upper.array()).all())) {
    throw std::invalid_argument("parameter bounds must be positive and non-empty");
  }
  if (!(fd_step_theta > 0.0)) throw std::invalid_argument("fd_step_theta must be positive");
}

Eigen::MatrixXd output_jacobian(const OutputModel& raw, const ParameterVector& theta,
                                const InputConditions& u, double fd_step) {
  Eigen::MatrixXd D;
  for (int j = 0; j < 2; ++j) {
    const double h = fd_step * std::max(std::abs(theta[j]), 1e-12);
    ParameterVector tp = theta;
    ParameterVector tm = theta;
    tp[j] += h;
    tm[j] -= h;
    Eigen::VectorXd yp, ym;
    try {
      yp = raw(tp, u);
      ym = raw(tm, u);
    } catch (const IntegrationError& e) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "output_jacobian: perturbing %s by +/-%.3g failed: ",
                    j == kKX ? "K_X" : "K_I", h);
      throw IntegrationError(e.time(), buf + std::string(e.what()));
    }
    if (j == 0) D.resize(yp.size(), 2);
    D.col(j) = (yp - ym) / (2 * h);
  }
  return D;
}

Eigen::VectorXd truncation_error(const Eigen::VectorXd& y_theta, const Eigen::VectorXd& y_shifted,
                                 const Eigen::MatrixXd& D, const ParameterVector& dtheta,
                                 const OutputScales& scales, double floor) {
  const Eigen::VectorXd remainder = y_shifted - y_theta - D * dtheta;
  Eigen::VectorXd eps(remainder.size());
  for (Eigen::Index i = 0; i < remainder.size(); ++i) {
    const double den = std::max(std::abs(y_theta[i]), floor * scales[i % kNumOutputs]);
    eps[i] = std::abs(remainder[i]) / den;
  }
  return eps;
}

Eigen::VectorXd truncation_error(const OutputModel& raw, const ParameterVector& theta,
                                 const ParameterVector& dtheta, const InputConditions& u,
                                 const OutputScales& scales, double fd_step, double floor) {
  if (dtheta.isZero(0.0)) {
    return Eigen::VectorXd::Zero(raw(theta, u).size());
  }
  const Eigen::VectorXd y0 = raw(theta, u);
  const Eigen::VectorXd y1 = raw(theta + dtheta, u);
  return truncation_error(y0, y1, output_jacobian(raw, theta, u, fd_step), dtheta, scales, floor);
}

namespace {

Eigen::Vector2d normalizing_weights(const Eigen::Vector2d& grad) {
  return grad.cwiseAbs().cwiseMax(1.0).cwiseInverse();
}

}  // namespace

GradientMatchProblem::GradientMatchProblem(OutputModel raw, OptimizationSpec spec,
                                           ParameterVector theta_k, DecisionVector u_k,
                                           ProcessGradients measured, CorrectionConfig cfg,
                                           Eigen::VectorXd ledger_C, OutputScales scales)
    : raw_(std::move(raw)),
      spec_(std::move(spec)),
      theta_k_(theta_k),
      u_k_(u_k),
      measured_(measured),
      cfg_(std::move(cfg)),
      C_(std::move(ledger_C)),
      scales_(scales) {
  w_phi_ = cfg_.auto_weights ? normalizing_weights(measured_.grad_phi) : cfg_.w_phi;
  w_g_ = cfg_.auto_weights ? normalizing_weights(measured_.grad_g) : cfg_.w_g;
  const InputConditions in = spec_.inputs(u_k_);
  y0_ = raw_(theta_k_, in);
  if (C_.size() != y0_.size()) {
    throw std::invalid_argument("gradient match: ledger does not match the model outputs");
  }
  D_ = output_jacobian(raw_, theta_k_, in, cfg_.fd_step_theta);
}

bool GradientMatchProblem::within_bounds(const ParameterVector& dtheta) const {
  return cfg_.theta_bounds.contains(theta_k_ + dtheta);
}

GradientMatchProblem::Evaluation GradientMatchProblem::evaluate(const ParameterVector& dtheta) const {
  const ParameterVector theta = theta_k_ + dtheta;
  const Eigen::VectorXd y = dtheta.isZero(0.0) ? y0_ : raw_(theta, spec_.inputs(u_k_));
  const Eigen::VectorXd shift = D_ * dtheta + C_;
  const Predictor predict = [&](const InputConditions& in) {
    return Eigen::VectorXd(raw_(theta, in) - shift);
  };
  const Eigen::VectorXd corrected = y - shift;

  Evaluation e;
  e.model = predicted_gradients(spec_, predict, u_k_, cfg_.gradients, &corrected);
  e.mismatch = w_phi_.dot((measured_.grad_phi - e.model.grad_phi).cwiseAbs()) +
               w_g_.dot((measured_.grad_g - e.model.grad_g).cwiseAbs());
  e.max_truncation =
      dtheta.isZero(0.0)
          ? 0.0
          : truncation_error(y0_, y, D_, dtheta, scales_, cfg_.denominator_floor).maxCoeff();
  return e;
}

GradientMatch solve_gradient_match(const OutputModel& raw, const OptimizationSpec& spec,
                                   const ParameterVector& theta_k, const DecisionVector& u_k,
                                   const ProcessGradients& measured, const CorrectionConfig& cfg,
                                   const CorrectionLedger& ledger, const OutputScales& scales) {
  cfg.validate();
  if (!measured.grad_phi.allFinite() || !measured.grad_g.allFinite()) {
    throw std::invalid_argument("solve_gradient_match: non-finite measured gradients");
  }
  GradientMatch out;
  if (!cfg.theta_bounds.contains(theta_k)) {
    out.infeasible_start = true;
    out.c = Eigen::VectorXd::Zero(ledger.C.size());
    return out;
  }

  const GradientMatchProblem problem(raw, spec, theta_k, u_k, measured, cfg, ledger.C, scales);
  const GradientMatchProblem::Evaluation at_zero = problem.evaluate(ParameterVector::Zero());
  out.objective_at_zero = at_zero.mismatch;
  int evals = 1;
  if (at_zero.mismatch == 0.0) {
    out.c = Eigen::VectorXd::Zero(ledger.C.size());
    out.model_gradients = at_zero.model;
    out.evaluations = evals;
    return out;
  }

  // Search in relative moves r = dtheta / theta_k.
  const double eps = cfg.eps_trunc_max;
  const double rho = 100.0 * (1.0 + at_zero.mismatch);
  auto penalized = [&](const Eigen::VectorXd& r) {
    const ParameterVector dtheta = r.cwiseProduct(theta_k);
    const auto e = problem.evaluate(dtheta);
    ++evals;
    return e.mismatch + rho * std::max(0.0, e.max_truncation / eps - 1.0);
  };

  optim::NelderMeadOptions nm;
  nm.lower = (cfg.theta_bounds.lower.array() / theta_k.array() - 1.0).matrix();
  nm.upper = (cfg.theta_bounds.upper.array() / theta_k.array() - 1.0).matrix();

  // Coarse 3x3 seeding around the origin.
  const double a = std::min(0.5, std::sqrt(eps));
  Eigen::VectorXd seed = Eigen::Vector2d::Zero();
  double seed_value = at_zero.mismatch;
  for (int i = -1; i <= 1; ++i) {
    for (int j = -1; j <= 1; ++j) {
      if (i == 0 && j == 0) continue;
      Eigen::VectorXd r = Eigen::Vector2d(i * a, j * a);
      r = r.cwiseMax(nm.lower).cwiseMin(nm.upper);
      const double v = penalized(r);
      if (v < seed_value) {
        seed_value = v;
        seed = r;
      }
    }
  }

  nm.initial_step = Eigen::Vector2d::Constant(0.25 * a);
  nm.xtol = 1e-5;
  nm.ftol = 1e-10;
  nm.max_evals = 300;
  const optim::NelderMeadResult res = optim::minimize(penalized, seed, nm);
  out.stalled = !res.converged;

  // Pull back along the ray until the truncation budget holds exactly.
  ParameterVector dtheta = res.x.cwiseProduct(theta_k);
  GradientMatchProblem::Evaluation accepted = problem.evaluate(dtheta);
  ++evals;
  if (accepted.max_truncation > eps) {
    double lo = 0.0;
    double hi = 1.0;
    for (int it = 0; it < 25; ++it) {
      const double mid = 0.5 * (lo + hi);
      const auto e = problem.evaluate(mid * dtheta);
      ++evals;
      if (e.max_truncation <= eps) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    dtheta *= lo;
    accepted = problem.evaluate(dtheta);
    ++evals;
  }
  if (!(accepted.mismatch < at_zero.mismatch)) {
    out.stalled = out.stalled || accepted.mismatch > at_zero.mismatch;
    dtheta.setZero();
    accepted = at_zero;
  }

  out.dtheta = dtheta;
  out.c = problem.jacobian() * dtheta;
  out.objective = accepted.mismatch;
  out.max_truncation = accepted.max_truncation;
  out.model_gradients = accepted.model;
  out.evaluations = evals;
  return out;
}

}  // namespace r2r
