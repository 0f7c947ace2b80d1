#include "r2r/rto.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include <Eigen/LU>

#include "r2r/nelder_mead.hpp"
#include "r2r/parallel.hpp"

namespace r2r {

namespace {

double measured_objective(const OptimizationSpec& spec, const MeasurementSet& m,
                          const DecisionVector& u) {
  return spec.objective(m.flattened(), u);
}

}  // namespace

BatchRunner simulated_plant_runner(const Scenario& scenario, double noise_sigma_rel) {
  const OptimizationSpec spec = scenario.spec();
  const PlantParameters plant = scenario.plant;
  const SampleSchedule schedule = scenario.schedule;
  const IntegratorOptions integrator = scenario.integrator;
  return [=](const DecisionVector& u, std::uint64_t seed) {
    const InputConditions in = spec.inputs(u);
    const std::vector<int> idx = schedule.indices(in, integrator.grid_step);
    const std::vector<State> states = simulate_samples(plant, true, in, idx, integrator);
    BatchOutcome out;
    out.measurements.noise_seed = seed;
    out.measurements.noise_sigma_rel = noise_sigma_rel;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      OutputSample y{states[i][kX], states[i][kP], states[i][kS]};
      if (noise_sigma_rel > 0.0) {
        for (double& v : y) v *= 1.0 + noise_sigma_rel * normal(rng);
      }
      out.measurements.sample_grid.push_back(idx[i] * integrator.grid_step);
      out.measurements.y_m.push_back(y);
    }
    out.phi = measured_objective(spec, out.measurements, u);
    out.g = spec.constraint(u);
    return out;
  };
}

Predictor plant_predictor(const Scenario& scenario) {
  const PlantParameters plant = scenario.plant;
  const SampleSchedule schedule = scenario.schedule;
  const IntegratorOptions integrator = scenario.integrator;
  return [=](const InputConditions& in) {
    const std::vector<int> idx = schedule.indices(in, integrator.grid_step);
    const std::vector<State> states = simulate_samples(plant, true, in, idx, integrator);
    Eigen::VectorXd y(kNumOutputs * states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      y.segment<3>(kNumOutputs * i) << states[i][kX], states[i][kP], states[i][kS];
    }
    return y;
  };
}

PlantProbe estimate_plant_gradients(const DecisionVector& u_k, const OptimizationSpec& spec,
                                    const BatchRunner& plant, const GradientOptions& opts,
                                    std::uint64_t seed) {
  PlantProbe probe;
  const DecisionVector z = spec.to_scaled(u_k);
  auto eval = [&](const DecisionVector& zp, int index) {
    const DecisionVector u = index == 0 ? u_k : spec.from_scaled(zp);
    BatchOutcome b = plant(u, mix_seed(seed, static_cast<unsigned long long>(index)));
    ++probe.batches;
    if (index == 0) probe.base = b;
    return std::make_pair(b.phi, b.g);
  };
  probe.gradients = fd_gradients(eval, z, opts);
  return probe;
}

Eigen::Matrix<double, 5, 1> ModifierSet::stacked() const {
  Eigen::Matrix<double, 5, 1> v;
  v << lambda_phi, lambda_g, eps_g;
  return v;
}

ModifierSet ModifierSet::from_stacked(const Eigen::Matrix<double, 5, 1>& v) {
  ModifierSet m;
  m.lambda_phi = v.head<2>();
  m.lambda_g = v.segment<2>(2);
  m.eps_g = v[4];
  return m;
}

ModifierSet raw_modifiers(const ProcessGradients& plant, const ProcessGradients& model) {
  ModifierSet m;
  m.lambda_phi = plant.grad_phi - model.grad_phi;
  m.lambda_g = plant.grad_g - model.grad_g;
  m.eps_g = plant.g - model.g;
  return m;
}

ModifierSet filter_modifiers(const ModifierSet& previous, const ModifierSet& raw, double gain) {
  if (!(gain > 0.0 && gain <= 1.0)) throw std::invalid_argument("filter gain must be in (0, 1]");
  return ModifierSet::from_stacked(gain * raw.stacked() + (1.0 - gain) * previous.stacked());
}

OptimizeResult optimize_model(const Predictor& model, const OptimizationSpec& spec,
                              const DecisionVector& u_start, const ModifierSet* modifiers,
                              const DecisionVector* u_k) {
  const DecisionVector z0 = spec.to_scaled(u_start).cwiseMax(0.0).cwiseMin(1.0);
  const DecisionVector zk = u_k ? spec.to_scaled(*u_k) : z0;
  OptimizeResult out;

  auto evaluate = [&](const DecisionVector& z) {
    const DecisionVector u = spec.from_scaled(z);
    const Eigen::VectorXd y = model(spec.inputs(u));
    double phi = spec.objective(y, u);
    double g = spec.constraint(u);
    if (modifiers) {
      phi += modifiers->lambda_phi.dot(z - zk);
      g += modifiers->eps_g + modifiers->lambda_g.dot(z - zk);
    }
    ++out.evaluations;
    return std::make_pair(phi, g);
  };

  const double phi_scale = std::max(1.0, std::abs(evaluate(z0).first));
  const double feas_tol = 1e-9 * spec.V_max;
  double rho = phi_scale / spec.base.V0;

  optim::NelderMeadOptions nm;
  nm.lower = Eigen::Vector2d::Zero();
  nm.upper = Eigen::Vector2d::Ones();
  nm.initial_step = Eigen::Vector2d::Constant(0.05);
  nm.xtol = 1e-7;
  nm.ftol = 1e-15;
  nm.max_evals = 1500;
  nm.restarts = 2;

  Eigen::VectorXd start = z0;
  for (int escalation = 0; escalation < 10; ++escalation) {
    auto penalized = [&](const Eigen::VectorXd& z) {
      const auto [phi, g] = evaluate(z);
      return phi + rho * std::max(0.0, g);
    };
    const optim::NelderMeadResult res = optim::minimize(penalized, start, nm);
    const auto [phi, g] = evaluate(res.x);
    out.u = spec.from_scaled(res.x);
    out.phi = phi;
    out.g = g;
    out.stalled = !res.converged;
    if (g <= feas_tol) {
      out.feasible = true;
      return out;
    }
    start = res.x;
    rho *= 10.0;
  }
  throw InfeasibleProblem("optimize_model: no feasible point found (volume limit too tight?)");
}

KKTReport kkt_report(const DecisionVector& u, const Predictor& model, const Predictor& plant,
                     const OptimizationSpec& spec, const KKTOptions& opts) {
  KKTReport r;
  GradientOptions central{opts.gradient_step, FdScheme::kCentral};
  const Eigen::VectorXd y_plant = plant(spec.inputs(u));
  const ProcessGradients gp = predicted_gradients(spec, plant, u, central, &y_plant);
  const ProcessGradients gm = predicted_gradients(spec, model, u, central);
  r.grad_phi_plant = gp.grad_phi;
  r.grad_g_plant = gp.grad_g;
  r.grad_phi_model = gm.grad_phi;
  r.grad_g_model = gm.grad_g;
  r.phi_plant = gp.phi;
  r.g_plant = gp.g;

  r.constraint_active = r.g_plant >= -opts.active_tolerance * spec.V_max;
  if (r.constraint_active && r.grad_g_plant.squaredNorm() > 0.0) {
    r.mu = std::max(0.0, -r.grad_g_plant.dot(r.grad_phi_plant) / r.grad_g_plant.squaredNorm());
  }
  Eigen::Vector2d lagrangian = r.grad_phi_plant + r.mu * r.grad_g_plant;
  // Components pushing against an active bound are not stationarity violations.
  const DecisionVector z = spec.to_scaled(u);
  for (int i = 0; i < 2; ++i) {
    if ((z[i] <= 1e-9 && lagrangian[i] > 0.0) || (z[i] >= 1.0 - 1e-9 && lagrangian[i] < 0.0)) {
      lagrangian[i] = 0.0;
    }
  }
  const double denom = std::max(std::abs(r.phi_plant), 1e-12);
  r.stationarity_residual = lagrangian.norm() / denom;
  r.c1_gap = (r.grad_phi_plant - r.grad_phi_model).cwiseAbs().maxCoeff() / denom;

  // Central second differences, shrunk toward the interior near bounds.
  const double h = opts.hessian_step;
  DecisionVector zc = z.cwiseMax(h).cwiseMin(1.0 - h);
  auto phi_at = [&](const DecisionVector& zz) {
    const DecisionVector uu = spec.from_scaled(zz);
    return spec.objective(plant(spec.inputs(uu)), uu);
  };
  const double f0 = phi_at(zc);
  for (int i = 0; i < 2; ++i) {
    DecisionVector zp = zc, zm = zc;
    zp[i] += h;
    zm[i] -= h;
    r.hessian_phi_fd(i, i) = (phi_at(zp) - 2 * f0 + phi_at(zm)) / (h * h);
  }
  {
    DecisionVector pp = zc, pm = zc, mp = zc, mm = zc;
    pp += DecisionVector(h, h);
    pm += DecisionVector(h, -h);
    mp += DecisionVector(-h, h);
    mm += DecisionVector(-h, -h);
    const double off = (phi_at(pp) - phi_at(pm) - phi_at(mp) + phi_at(mm)) / (4 * h * h);
    r.hessian_phi_fd(0, 1) = off;
    r.hessian_phi_fd(1, 0) = off;
  }
  r.hessian_pd = r.hessian_phi_fd(0, 0) > 0.0 && r.hessian_phi_fd.determinant() > 0.0;
  return r;
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kProposed:
      return "proposed";
    case Algorithm::kTwoStep:
      return "two-step";
    case Algorithm::kModifierAdaptation:
      return "ma";
  }
  return "unknown";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "proposed") return Algorithm::kProposed;
  if (s == "two-step") return Algorithm::kTwoStep;
  if (s == "ma") return Algorithm::kModifierAdaptation;
  throw std::invalid_argument("unknown algorithm '" + s + "' (valid: proposed, two-step, ma)");
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::kKlConverged:
      return "kl-converged";
    case Termination::kStepConverged:
      return "step-converged";
    case Termination::kMaxIterations:
      return "max-iterations";
    case Termination::kFailure:
      return "failure";
  }
  return "unknown";
}

std::vector<double> RunResult::s0_trace() const {
  std::vector<double> t;
  t.reserve(records.size());
  for (const auto& r : records) t.push_back(r.u_next[kS0]);
  return t;
}

DecisionVector RunResult::final_u() const {
  if (records.empty()) throw std::logic_error("run has no iterations");
  return records.back().u_next;
}

void RunResult::write_iterations_csv(std::ostream& os) const {
  os << "k,S0,F,phi_plant,phi_model,KX,KI,sse,dtheta_iden_norm,dtheta_corr_norm,kl_iden,kl_corr,"
        "stationarity_residual,flags\n";
  char buf[512];
  for (const auto& r : records) {
    std::string flags;
    for (const auto& f : r.flags) flags += (flags.empty() ? "" : ";") + f;
    std::snprintf(buf, sizeof buf,
                  "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,", r.k,
                  r.u[kS0], r.u[kFeed], r.plant_phi, r.model_phi, r.theta_prime[kKX],
                  r.theta_prime[kKI], r.sse, r.dtheta_iden.norm(), r.dtheta_corr.norm(), r.kl_iden,
                  r.kl_corr, r.kkt.stationarity_residual);
    os << buf << flags << "\n";
  }
}

namespace {

struct Context {
  Scenario scenario;
  OptimizationSpec spec;
  BatchRunner plant;
  OutputModel raw;
  Predictor truth;
  RunOptions opts;
  double sigma = 0.0;
  int max_iterations = 40;
  FitOptions fit;
  CorrectionConfig correction;
};

Context make_context(const Scenario& scenario, const RunOptions& opts, const RunSeams& seams) {
  scenario.validate();
  Context c;
  c.scenario = scenario;
  c.spec = scenario.spec();
  c.opts = opts;
  c.sigma = opts.noise_sigma_rel.value_or(scenario.noise_sigma_rel);
  if (!(c.sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  c.max_iterations = opts.max_iterations.value_or(scenario.termination.max_iterations);
  if (c.max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  c.plant = seams.plant ? seams.plant : simulated_plant_runner(scenario, c.sigma);
  c.raw = seams.raw_model ? seams.raw_model : scenario.raw_model();
  c.truth = seams.plant_truth ? seams.plant_truth : plant_predictor(scenario);
  c.fit = scenario.fit;
  c.fit.threads = std::max(1, opts.threads);
  c.correction = scenario.correction;
  if (c.sigma > 0.0) {
    c.scenario.plant_gradients.step = scenario.noisy_fd_step;
    c.correction.gradients.step = scenario.noisy_fd_step;
  }
  if (opts.eps_trunc_max) c.correction.eps_trunc_max = *opts.eps_trunc_max;
  c.correction.validate();
  return c;
}

double relative_norm(const ParameterVector& d, const ParameterVector& ref) {
  return (d.array() / ref.array().abs().max(1e-12)).matrix().norm();
}

double sse_at(const MeasurementSet& m, const InputConditions& in, const OutputModel& model,
              const ParameterVector& theta, ResidualWeighting w) {
  return weighted_residuals(m, in, model, theta, w).squaredNorm();
}

FitResult identify_or_best(const MeasurementSet& m, const InputConditions& in,
                           const OutputModel& model, const ParameterVector& init,
                           const FitOptions& fit, std::vector<std::string>& flags) {
  try {
    return identify(m, in, model, init, fit);
  } catch (const EstimationError& e) {
    flags.push_back("fit_not_converged");
    return e.best();
  }
}

Predictor predictor_of(const OutputModel& model, const ParameterVector& theta) {
  return [model, theta](const InputConditions& in) { return model(theta, in); };
}

void annotate_regression(RunResult& run) {
  const std::size_t n = run.records.size();
  if (n >= 2 && run.records[n - 1].plant_phi > run.records[n - 2].plant_phi) {
    run.records[n - 1].flags.push_back("objective_regressed");
  }
}

RunResult start_result(Algorithm a, const Context& c) {
  RunResult r;
  r.algorithm = a;
  r.scenario = c.scenario.name;
  r.seed = c.opts.seed;
  r.config = {{"scenario", to_json(c.scenario)},
              {"algorithm", to_string(a)},
              {"seed", c.opts.seed},
              {"noise_sigma_rel", c.sigma},
              {"max_iterations", c.max_iterations},
              {"eps_trunc_max", c.correction.eps_trunc_max},
              {"filter_gain", c.opts.filter_gain.value_or(c.scenario.filter_gain)},
              {"belief", "laplace"},
              {"residual_weighting",
               c.fit.weighting == ResidualWeighting::kScaled ? "scaled" : "unweighted"}};
  return r;
}

std::uint64_t batch_seed(const Context& c, int k) {
  return mix_seed(c.opts.seed, static_cast<unsigned long long>(k));
}

}  // namespace

RunResult run_proposed(const Scenario& scenario, const RunOptions& opts, const RunSeams& seams) {
  const Context c = make_context(scenario, opts, seams);
  RunResult run = start_result(Algorithm::kProposed, c);
  run.ledger = CorrectionLedger::empty({});

  ParameterVector theta_prime = c.scenario.model_nominal.theta;
  GaussianBelief belief_prime;
  bool have_prior_belief = false;
  DecisionVector u = c.scenario.initial.decision();
  const TerminationConfig& term = c.scenario.termination;

  try {
    for (int k = 1; k <= c.max_iterations; ++k) {
      IterationRecord rec;
      rec.k = k;
      rec.u = u;
      rec.theta_prev = theta_prime;
      const InputConditions in = c.spec.inputs(u);

      const PlantProbe probe =
          estimate_plant_gradients(u, c.spec, c.plant, c.scenario.plant_gradients, batch_seed(c, k));
      const MeasurementSet& m = probe.base.measurements;
      rec.plant_phi = probe.base.phi;
      rec.plant_gradients = probe.gradients;
      if (probe.gradients.backward_used) rec.flags.push_back("backward_difference");
      if (run.ledger->sample_grid.empty()) *run.ledger = CorrectionLedger::empty(m.sample_grid);
      const OutputScales scales = output_scales(m);

      // Step 1: identification against the ledger-corrected model.
      const OutputModel corrected = corrected_output_model(c.raw, run.ledger->C);
      rec.sse_prior = sse_at(m, in, corrected, theta_prime, c.fit.weighting);
      const FitResult fit = identify_or_best(m, in, corrected, theta_prime, c.fit, rec.flags);
      rec.theta_iden = fit.theta_hat;
      rec.dtheta_iden = fit.theta_hat - theta_prime;
      rec.sse = fit.sse;
      rec.belief_iden = fit.belief;
      if (fit.belief.regularized) rec.flags.push_back("covariance_regularized");

      // Step 2: gradient matching under the truncation budget.
      const GradientMatch gm = solve_gradient_match(c.raw, c.spec, fit.theta_hat, u, probe.gradients,
                                                    c.correction, *run.ledger, scales);
      if (gm.infeasible_start) rec.flags.push_back("correction_infeasible_start");
      if (gm.stalled) rec.flags.push_back("correction_stalled");
      rec.dtheta_corr = gm.dtheta;
      rec.mismatch = gm.objective;
      rec.mismatch_at_zero = gm.objective_at_zero;
      rec.max_truncation = gm.max_truncation;
      *run.ledger = apply_correction(*run.ledger, gm.c, k, gm.dtheta);
      theta_prime = fit.theta_hat + gm.dtheta;
      rec.theta_prime = theta_prime;

      const OutputModel corrected_next = corrected_output_model(c.raw, run.ledger->C);
      rec.sse_corrected = sse_at(m, in, corrected_next, theta_prime, c.fit.weighting);
      rec.belief_prime = laplace_belief(theta_prime, m, in, corrected_next, c.fit);
      rec.kl_corr = kl_divergence(rec.belief_iden, rec.belief_prime);
      rec.kl_iden = have_prior_belief ? kl_divergence(belief_prime, rec.belief_iden)
                                      : std::numeric_limits<double>::infinity();
      belief_prime = rec.belief_prime;
      have_prior_belief = true;

      // Re-optimization of the corrected model.
      const Predictor model = predictor_of(corrected_next, theta_prime);
      const OptimizeResult opt = optimize_model(model, c.spec, u);
      if (opt.stalled) rec.flags.push_back("optimizer_stalled");
      rec.u_next = opt.u;
      rec.model_phi = opt.phi;
      if (c.opts.diagnostics) rec.kkt = kkt_report(u, model, c.truth, c.spec);
      rec.plant_phi_true = c.opts.diagnostics ? rec.kkt.phi_plant : rec.plant_phi;

      run.records.push_back(std::move(rec));
      annotate_regression(run);
      const IterationRecord& last = run.records.back();

      bool done;
      if (c.sigma == 0.0) {
        done = k > 1 && relative_norm(last.dtheta_iden, last.theta_prev) <= term.theta_rel_tol &&
               relative_norm(last.dtheta_corr, last.theta_iden) <= term.theta_rel_tol;
      } else {
        done = k > 1 && last.kl_iden <= term.kl_eps1 && last.kl_corr <= term.kl_eps2;
      }
      u = opt.u;
      if (done) {
        run.termination = c.sigma == 0.0 ? Termination::kStepConverged : Termination::kKlConverged;
        return run;
      }
    }
    run.termination = Termination::kMaxIterations;
  } catch (const std::exception& e) {
    run.termination = Termination::kFailure;
    run.failure = e.what();
  }
  return run;
}

RunResult run_two_step(const Scenario& scenario, const RunOptions& opts, const RunSeams& seams) {
  const Context c = make_context(scenario, opts, seams);
  RunResult run = start_result(Algorithm::kTwoStep, c);
  ParameterVector theta = c.scenario.model_nominal.theta;
  DecisionVector u = c.scenario.initial.decision();
  const TerminationConfig& term = c.scenario.termination;

  try {
    for (int k = 1; k <= c.max_iterations; ++k) {
      IterationRecord rec;
      rec.k = k;
      rec.u = u;
      rec.theta_prev = theta;
      const InputConditions in = c.spec.inputs(u);
      const BatchOutcome batch = c.plant(u, mix_seed(batch_seed(c, k), 0));
      const MeasurementSet& m = batch.measurements;
      rec.plant_phi = batch.phi;

      rec.sse_prior = sse_at(m, in, c.raw, theta, c.fit.weighting);
      const FitResult fit = identify_or_best(m, in, c.raw, theta, c.fit, rec.flags);
      rec.theta_iden = fit.theta_hat;
      rec.theta_prime = fit.theta_hat;
      rec.dtheta_iden = fit.theta_hat - theta;
      rec.sse = fit.sse;
      rec.sse_corrected = fit.sse;
      rec.belief_iden = fit.belief;
      rec.belief_prime = fit.belief;
      theta = fit.theta_hat;

      const Predictor model = predictor_of(c.raw, theta);
      const OptimizeResult opt = optimize_model(model, c.spec, u);
      if (opt.stalled) rec.flags.push_back("optimizer_stalled");
      rec.u_next = opt.u;
      rec.model_phi = opt.phi;
      if (c.opts.diagnostics) rec.kkt = kkt_report(u, model, c.truth, c.spec);
      rec.plant_phi_true = c.opts.diagnostics ? rec.kkt.phi_plant : rec.plant_phi;

      run.records.push_back(std::move(rec));
      annotate_regression(run);
      const IterationRecord& last = run.records.back();
      const double du = (c.spec.to_scaled(last.u_next) - c.spec.to_scaled(last.u)).norm();
      u = opt.u;
      if (k > 1 && du <= term.u_tol &&
          relative_norm(last.dtheta_iden, last.theta_prev) <= term.theta_rel_tol) {
        run.termination = Termination::kStepConverged;
        return run;
      }
    }
    run.termination = Termination::kMaxIterations;
  } catch (const std::exception& e) {
    run.termination = Termination::kFailure;
    run.failure = e.what();
  }
  return run;
}

RunResult run_modifier_adaptation(const Scenario& scenario, const RunOptions& opts,
                                  const RunSeams& seams) {
  const Context c = make_context(scenario, opts, seams);
  RunResult run = start_result(Algorithm::kModifierAdaptation, c);
  const double gain = opts.filter_gain.value_or(c.scenario.filter_gain);
  if (!(gain > 0.0 && gain <= 1.0)) throw std::invalid_argument("filter gain must be in (0, 1]");

  const ParameterVector theta = c.scenario.model_nominal.theta;
  const Predictor model = predictor_of(c.raw, theta);
  DecisionVector u = c.scenario.initial.decision();
  ModifierSet modifiers;
  const TerminationConfig& term = c.scenario.termination;

  try {
    for (int k = 1; k <= c.max_iterations; ++k) {
      IterationRecord rec;
      rec.k = k;
      rec.u = u;
      rec.theta_prev = theta;
      rec.theta_iden = theta;
      rec.theta_prime = theta;

      const PlantProbe probe =
          estimate_plant_gradients(u, c.spec, c.plant, c.scenario.plant_gradients, batch_seed(c, k));
      rec.plant_phi = probe.base.phi;
      rec.plant_gradients = probe.gradients;
      if (probe.gradients.backward_used) rec.flags.push_back("backward_difference");
      const ProcessGradients predicted =
          predicted_gradients(c.spec, model, u, c.scenario.plant_gradients);
      const InputConditions in = c.spec.inputs(u);
      rec.sse = sse_at(probe.base.measurements, in, c.raw, theta, c.fit.weighting);
      rec.sse_prior = rec.sse;
      rec.sse_corrected = rec.sse;

      const ModifierSet previous = modifiers;
      modifiers = filter_modifiers(modifiers, raw_modifiers(probe.gradients, predicted), gain);
      rec.modifiers = modifiers;
      const double dmod = (modifiers.stacked() - previous.stacked()).norm() /
                          std::max(modifiers.stacked().norm(), 1e-12);

      const OptimizeResult opt = optimize_model(model, c.spec, u, &modifiers, &u);
      if (opt.stalled) rec.flags.push_back("optimizer_stalled");
      rec.u_next = opt.u;
      rec.model_phi = opt.phi;
      if (c.opts.diagnostics) rec.kkt = kkt_report(u, model, c.truth, c.spec);
      rec.plant_phi_true = c.opts.diagnostics ? rec.kkt.phi_plant : rec.plant_phi;

      run.records.push_back(std::move(rec));
      annotate_regression(run);
      const IterationRecord& last = run.records.back();
      const double du = (c.spec.to_scaled(last.u_next) - c.spec.to_scaled(last.u)).norm();
      u = opt.u;
      if (k > 1 && du <= term.u_tol && dmod <= term.modifier_rel_tol) {
        run.termination = Termination::kStepConverged;
        return run;
      }
    }
    run.termination = Termination::kMaxIterations;
  } catch (const std::exception& e) {
    run.termination = Termination::kFailure;
    run.failure = e.what();
  }
  return run;
}

RunResult run_algorithm(Algorithm a, const Scenario& scenario, const RunOptions& opts,
                        const RunSeams& seams) {
  switch (a) {
    case Algorithm::kProposed:
      return run_proposed(scenario, opts, seams);
    case Algorithm::kTwoStep:
      return run_two_step(scenario, opts, seams);
    case Algorithm::kModifierAdaptation:
      return run_modifier_adaptation(scenario, opts, seams);
  }
  throw std::invalid_argument("unknown algorithm");
}

}  // namespace r2r
