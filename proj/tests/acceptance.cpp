// Acceptance report: one PASS/FAIL line per criterion. Exit status is 0 unless
// --strict is given and a criterion fails, or a check could not be evaluated.

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/LU>

#include "golden.hpp"
#include "r2r/experiments.hpp"
#include "r2r/parallel.hpp"

using namespace r2r;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::string within_str(const std::optional<int>& k) { return k ? std::to_string(*k) : "never"; }
int within_or_inf(const std::optional<int>& k) { return k ? *k : std::numeric_limits<int>::max(); }

double true_mass(const Scenario& s, const DecisionVector& u) {
  const OptimizationSpec spec = s.spec();
  return -spec.objective(plant_predictor(s)(spec.inputs(u)), u);
}

RunResult proposed_run(const Scenario& s, double eps, int max_iterations) {
  RunOptions o;
  o.eps_trunc_max = eps;
  o.max_iterations = max_iterations;
  return run_proposed(s, o);
}

Predictor corrected_predictor(const Scenario& s, const RunResult& run) {
  const OutputModel corrected = corrected_output_model(s.raw_model(), run.ledger->C);
  const ParameterVector theta = run.records.back().theta_prime;
  return [corrected, theta](const InputConditions& in) { return corrected(theta, in); };
}

// Shared state, computed lazily.
struct Shared {
  Scenario scenario = Scenario::default_scenario();
  std::optional<OracleResult> oracle_;
  std::optional<RunResult> p5_, p1_;

  const OracleResult& oracle() {
    if (!oracle_) oracle_ = oracle_plant_optimum(scenario, {201, true, worker_threads()});
    return *oracle_;
  }
  const RunResult& p5() {
    if (!p5_) p5_ = proposed_run(scenario, 0.05, 100);
    return *p5_;
  }
  const RunResult& p1() {
    if (!p1_) p1_ = proposed_run(scenario, 0.01, 200);
    return *p1_;
  }
};

Outcome criterion1(Shared&) {
  InputConditions u;
  u.t_f = golden::kHorizon;
  const State x = simulate_plant(PlantParameters{}, u).final_state();
  double worst = 0.0;
  for (int i = 0; i < 4; ++i) {
    worst = std::max(worst, std::abs(x[i] - golden::kInitialEnd[i]) / std::abs(golden::kInitialEnd[i]));
  }
  IntegratorOptions rk;
  rk.kind = IntegratorKind::kRk4;
  rk.grid_step = 0.5 / 64;
  const State ref = simulate_plant(PlantParameters{}, u, rk).final_state();
  auto err = [&](double h) {
    rk.grid_step = h;
    const State y = simulate_plant(PlantParameters{}, u, rk).final_state();
    return ((y - ref).array() / ref.array().abs()).abs().maxCoeff();
  };
  const double order = std::log2(err(0.125) / err(0.0625));
  return {worst <= 1e-6 && order >= 3.8,
          fmt("max rel dev from reference %.2e (<= 1e-6); RK4 order %.3f (>= 3.8)", worst, order)};
}

Outcome criterion2(Shared&) {
  const Scenario s = load_scenario("zero-mismatch");
  const OracleResult o = oracle_plant_optimum(s, {201, true, worker_threads()});
  RunOptions opts;
  bool ok = true;
  std::string detail = fmt("oracle S0*=%.4f F*=%.5f;", o.u[kS0], o.u[kFeed]);
  for (Algorithm a : {Algorithm::kProposed, Algorithm::kTwoStep, Algorithm::kModifierAdaptation}) {
    const RunResult run = run_algorithm(a, s, opts);
    if (run.termination == Termination::kFailure || run.records.empty()) {
      ok = false;
      detail += " " + to_string(a) + " failed: " + run.failure;
      continue;
    }
    const DecisionVector u = run.final_u();
    const double dS = std::abs(u[kS0] - o.u[kS0]) / o.u[kS0];
    const double dF = std::abs(u[kFeed] - o.u[kFeed]) / o.u[kFeed];
    ok = ok && dS <= 0.02 && dF <= 0.02;
    detail += fmt(" %s dS0=%.2e dF=%.2e (%zu it)", to_string(a).c_str(), dS, dF, run.records.size());
    if (a == Algorithm::kProposed) {
      const BatchOutcome b = simulated_plant_runner(s, 0.0)(u, 0);
      const double c = run.ledger->max_scaled(output_scales(b.measurements));
      ok = ok && c <= 1e-6;
      detail += fmt(" max|C|/scale=%.1e", c);
    }
  }
  return {ok, detail};
}

double contract_violation(const Scenario& s, const RunResult& run, double eps) {
  const OutputModel raw = s.raw_model();
  const BatchRunner plant = simulated_plant_runner(s, 0.0);
  const OptimizationSpec spec = s.spec();
  double worst = 0.0;
  for (const auto& rec : run.records) {
    const CorrectionLedger::Entry* entry = nullptr;
    for (const auto& e : run.ledger->history) {
      if (e.k == rec.k) entry = &e;
    }
    if (!entry) throw std::runtime_error("ledger entry missing for iteration " + std::to_string(rec.k));
    const InputConditions in = spec.inputs(rec.u);
    const OutputScales scales = output_scales(plant(rec.u, 0).measurements);
    const Eigen::VectorXd y0 = raw(rec.theta_iden, in);
    const Eigen::VectorXd y1 = raw(rec.theta_iden + rec.dtheta_corr, in) - entry->c;
    for (Eigen::Index i = 0; i < y0.size(); ++i) {
      const double den =
          std::max(std::abs(y0[i]), s.correction.denominator_floor * scales[i % kNumOutputs]);
      worst = std::max(worst, std::abs(y1[i] - y0[i]) / den / eps);
    }
  }
  return worst;  // in units of the budget
}

Outcome criterion3(Shared& sh) {
  const double v5 = contract_violation(sh.scenario, sh.p5(), 0.05);
  const double v1 = contract_violation(sh.scenario, sh.p1(), 0.01);
  return {v5 <= 1.0 + 1e-9 && v1 <= 1.0 + 1e-9,
          fmt("max discrepancy / budget: eps=5%% %.4f over %zu it, eps=1%% %.4f over %zu it", v5,
              sh.p5().records.size(), v1, sh.p1().records.size())};
}

Outcome criterion4(Shared& sh) {
  const OracleResult& o = sh.oracle();
  const RunResult& r5 = sh.p5();
  const RunResult& r1 = sh.p1();
  if (r5.records.empty() || r1.records.empty()) return {false, "run produced no iterations"};
  const double s0 = r5.final_u()[kS0];
  const double dS = std::abs(s0 - o.u[kS0]) / o.u[kS0];
  const KKTReport k = kkt_report(r5.final_u(), corrected_predictor(sh.scenario, r5),
                                 plant_predictor(sh.scenario), sh.scenario.spec());
  const auto w5 = first_within(r5.s0_trace(), o.u[kS0], 0.02);
  const auto w1 = first_within(r1.s0_trace(), o.u[kS0], 0.02);
  const bool slower = w5 && within_or_inf(w1) > *w5;
  return {dS <= 0.02 && k.stationarity_residual <= 1e-2 && slower,
          fmt("eps=5%%: final S0 %.4f vs S0* %.4f (rel %.2e), stationarity %.2e; 2%% band entered at "
              "it %s (5%%) vs %s (1%%)",
              s0, o.u[kS0], dS, k.stationarity_residual, within_str(w5).c_str(),
              within_str(w1).c_str())};
}

Outcome criterion5(Shared& sh) {
  RunOptions o;
  const RunResult run = run_two_step(sh.scenario, o);
  if (run.records.empty()) return {false, "two-step failed: " + run.failure};
  const double mass = true_mass(sh.scenario, run.final_u());
  const double loss = 1.0 - mass / sh.oracle().mass();
  return {loss >= 0.10, fmt("two-step ends at S0 %.3f (%s), mass %.1f g vs %.1f g: %.1f%% below",
                            run.final_u()[kS0], to_string(run.termination).c_str(), mass,
                            sh.oracle().mass(), 100 * loss)};
}

Outcome criterion6(Shared& sh) {
  const double s5 = total_sse(sh.p5());
  const double s1 = total_sse(sh.p1());
  const double ratio = s5 / s1;
  return {ratio >= 1.5 && ratio <= 4.0,
          fmt("sum sse eps=5%% %.4g over %zu it, eps=1%% %.4g over %zu it, ratio %.3f (want [1.5, 4])",
              s5, sh.p5().records.size(), s1, sh.p1().records.size(), ratio)};
}

Outcome criterion7(Shared& sh) {
  const double s0_star = sh.oracle().u[kS0];
  std::vector<int> osc;
  std::string detail = "sign changes:";
  std::optional<int> ma_slow;
  for (double K : {0.65, 0.5, 0.35}) {
    RunOptions o;
    o.filter_gain = K;
    const RunResult run = run_modifier_adaptation(sh.scenario, o);
    osc.push_back(oscillation_count(run.s0_trace(), sh.scenario.initial.S0));
    detail += fmt(" K=%.2f:%d", K, osc.back());
    if (K == 0.35) ma_slow = first_within(run.s0_trace(), s0_star, 0.02);
  }
  const auto w5 = first_within(sh.p5().s0_trace(), s0_star, 0.02);
  const bool faster = w5 && *w5 < within_or_inf(ma_slow);
  detail += fmt("; 2%% band: proposed it %s, MA K=0.35 it %s", within_str(w5).c_str(),
                within_str(ma_slow).c_str());
  return {osc[0] >= 3 && osc[0] > osc[1] && osc[1] > osc[2] && faster, detail};
}

Outcome criterion8(Shared& sh) {
  ExperimentOptions o;
  o.threads = worker_threads();
  const MCSummary m = monte_carlo(sh.scenario, {Algorithm::kProposed, Algorithm::kModifierAdaptation},
                                  10, 1, sh.oracle().u[kS0], o);
  const AlgorithmSummary& p = m.of(Algorithm::kProposed);
  const AlgorithmSummary& a = m.of(Algorithm::kModifierAdaptation);
  int pairs = 0;
  for (std::size_t i = 0; i < 10; ++i) pairs += m.rows[i].iae < m.rows[10 + i].iae;
  return {p.failed == 0 && a.failed == 0 && p.iae_mean < a.iae_mean && p.final_S0_std < a.final_S0_std,
          fmt("sigma=%.0f%%: IAE proposed %.1f vs MA %.1f (proposed lower in %d/10 pairs); std final S0 "
              "proposed %.3f vs MA %.3f; failures %d/%d",
              100 * m.noise_sigma_rel, p.iae_mean, a.iae_mean, pairs, p.final_S0_std, a.final_S0_std,
              p.failed, a.failed)};
}

Outcome criterion9(Shared& sh) {
  CalibrationOptions o;
  o.threads = worker_threads();
  const CalibrationResult c = scenario_calibrate(sh.scenario, {}, o);
  const double dS = std::abs(c.oracle.u[kS0] - 55.0) / 55.0;
  const double dF = std::abs(c.oracle.u[kFeed] - 0.1728) / 0.1728;
  const bool shipped = std::abs(c.scenario.initial.t_f - sh.scenario.initial.t_f) < 1e-9 &&
                       std::abs(c.scenario.V_max - sh.scenario.V_max) < 1e-3;
  return {dS <= 0.05 && dF <= 0.02,
          fmt("t_f=%.1f h V_max=%.4f L -> S0*=%.3f (%.2f%%) F*=%.5f (%.2f%%) mass %.1f g, residual "
              "%.4f; shipped default %s",
              c.scenario.initial.t_f, c.scenario.V_max, c.oracle.u[kS0], 100 * dS, c.oracle.u[kFeed],
              100 * dF, c.oracle.mass(), c.residual, shipped ? "matches" : "differs")};
}

Outcome criterion10(Shared& sh) {
  std::vector<std::string> failed;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  auto random_belief = [&] {
    GaussianBelief b;
    b.mean = {n01(rng), n01(rng)};
    Eigen::Matrix2d a;
    a << n01(rng), n01(rng), n01(rng), n01(rng);
    b.covariance = a * a.transpose() + 0.1 * Eigen::Matrix2d::Identity();
    return b;
  };
  // KL divergence.
  for (int i = 0; i < 200; ++i) {
    const GaussianBelief p = random_belief(), q = random_belief();
    if (!(kl_divergence(p, q) >= 0.0) || std::abs(kl_divergence(p, p)) > 1e-12) {
      failed.push_back("kl");
      break;
    }
    GaussianBelief shifted = p;
    shifted.mean += Eigen::Vector2d(n01(rng), n01(rng));
    const Eigen::Vector2d d = shifted.mean - p.mean;
    const double closed = 0.5 * d.dot(p.covariance.inverse() * d);
    if (std::abs(kl_divergence(p, shifted) - closed) > 1e-10 * std::max(1.0, closed)) {
      failed.push_back("kl-closed-form");
      break;
    }
  }
  // Exponential filter as a geometric series.
  {
    ModifierSet raw, lam;
    raw.lambda_phi = {3.0, -1.0};
    raw.eps_g = 0.5;
    lam.lambda_g = {1.0, 2.0};
    const ModifierSet start = lam;
    const double K = 0.35;
    for (int i = 0; i < 12; ++i) lam = filter_modifiers(lam, raw, K);
    const auto expect = raw.stacked() + std::pow(1 - K, 12) * (start.stacked() - raw.stacked());
    if ((lam.stacked() - expect).cwiseAbs().maxCoeff() > 1e-12) failed.push_back("filter");
  }
  // Ledger bookkeeping on the stored runs.
  for (const RunResult* run : {&sh.p5(), &sh.p1()}) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(run->ledger->C.size());
    for (const auto& e : run->ledger->history) sum += e.c;
    if ((sum - run->ledger->C).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, sum.cwiseAbs().maxCoeff())) {
      failed.push_back("ledger");
    }
  }
  // Determinism of a full run.
  {
    RunOptions o;
    o.max_iterations = 3;
    o.seed = 11;
    o.noise_sigma_rel = 0.02;
    const Scenario s = Scenario::uncalibrated();
    const std::string a = to_json(run_proposed(s, o)).dump();
    const std::string b = to_json(run_proposed(s, o)).dump();
    if (a != b) failed.push_back("determinism");
  }
  // Finite differences on linear maps.
  {
    Eigen::MatrixXd A(6, 2);
    A << 1.5, -2.0, 0.25, 4.0, -3.0, 0.5, 7.0, 1.0, 0.0, -0.75, 2.0, 2.0;
    const OutputModel linear = [A](const ParameterVector& t, const InputConditions&) {
      return Eigen::VectorXd(A * t + Eigen::VectorXd::Constant(6, 10.0));
    };
    const Eigen::MatrixXd J = output_jacobian(linear, {0.3, 0.2}, InputConditions{}, 1e-4);
    if ((J - A).cwiseAbs().maxCoeff() > 1e-8) failed.push_back("jacobian");
    const ScaledEvaluation eval = [](const DecisionVector& z, int) {
      return std::make_pair(2.0 * z[0] - 5.0 * z[1] + 1.0, -z[0] + 0.5 * z[1]);
    };
    for (FdScheme scheme : {FdScheme::kForward, FdScheme::kCentral}) {
      const ProcessGradients g = fd_gradients(eval, {0.999, 0.5}, {0.02, scheme});
      if ((g.grad_phi - Eigen::Vector2d(2.0, -5.0)).cwiseAbs().maxCoeff() > 1e-10 ||
          (g.grad_g - Eigen::Vector2d(-1.0, 0.5)).cwiseAbs().maxCoeff() > 1e-10) {
        failed.push_back("fd-gradients");
      }
    }
  }
  std::string detail = "kl, filter identity, ledger sums, determinism, linear FD";
  if (!failed.empty()) {
    detail += "; failed:";
    for (const auto& f : failed) detail += " " + f;
  }
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::vector<int> only;
  std::ofstream report;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) {
      strict = true;
    } else if (std::strcmp(argv[i], "--report") == 0 && i + 1 < argc) {
      report.open(argv[++i]);
    } else {
      only.push_back(std::atoi(argv[i]));
    }
  }
  const std::vector<std::function<Outcome(Shared&)>> checks = {
      criterion1, criterion2, criterion3, criterion4, criterion5,
      criterion6, criterion7, criterion8, criterion9, criterion10};
  auto emit = [&](const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    if (report) report << line << "\n" << std::flush;
  };
  Shared shared;
  {
    const auto t0 = std::chrono::steady_clock::now();
    shared.oracle();
    shared.p5();
    shared.p1();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    emit(fmt("setup: oracle and proposed runs at eps 5%% and 1%% [%.1f s]", secs));
  }
  bool any_fail = false;
  bool any_error = false;
  int passed = 0, ran = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = checks[i](shared);
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
      any_error = true;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    any_fail = any_fail || !out.pass;
    ++ran;
    passed += out.pass ? 1 : 0;
    emit(fmt("criterion %2d: %s  %s [%.1f s]", id, out.pass ? "PASS" : "FAIL", out.detail.c_str(), secs));
  }
  emit(fmt("%d/%d criteria pass", passed, ran));
  return any_error || (strict && any_fail) ? 1 : 0;
}
