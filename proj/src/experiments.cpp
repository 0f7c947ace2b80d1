#include "r2r/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "r2r/io.hpp"
#include "r2r/nelder_mead.hpp"
#include "r2r/parallel.hpp"

namespace r2r {

namespace {

/// End-of-batch outputs only; enough for the objective.
Predictor terminal_predictor(const Scenario& s) {
  const PlantParameters plant = s.plant;
  const IntegratorOptions integ = s.integrator;
  return [=](const InputConditions& in) {
    const int last = static_cast<int>(std::lround(in.t_f / integ.grid_step));
    const std::vector<State> x = simulate_samples(plant, true, in, {last}, integ);
    Eigen::VectorXd y(kNumOutputs);
    y << x[0][kX], x[0][kP], x[0][kS];
    return y;
  };
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

OracleResult oracle_plant_optimum(const Scenario& scenario, const OracleOptions& opts) {
  if (opts.grid < 2) throw std::invalid_argument("oracle grid needs at least 2 points per axis");
  scenario.validate();
  const OptimizationSpec spec = scenario.spec();
  const Predictor predict = terminal_predictor(scenario);
  const int n = opts.grid;

  std::vector<double> phi(static_cast<std::size_t>(n) * n, std::numeric_limits<double>::quiet_NaN());
  auto point = [&](int i, int j) {
    return spec.from_scaled(DecisionVector(static_cast<double>(i) / (n - 1),
                                           static_cast<double>(j) / (n - 1)));
  };
  parallel_for(static_cast<std::size_t>(n) * n, opts.threads, [&](std::size_t idx) {
    const DecisionVector u = point(static_cast<int>(idx / n), static_cast<int>(idx % n));
    if (spec.constraint(u) > 0.0) return;
    phi[idx] = spec.objective(predict(spec.inputs(u)), u);
  });

  OracleResult r;
  r.evaluations = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  std::size_t best = 0;
  for (std::size_t idx = 0; idx < phi.size(); ++idx) {
    if (std::isnan(phi[idx])) continue;
    ++r.feasible_points;
    if (phi[idx] < lo) {
      lo = phi[idx];
      best = idx;
    }
    hi = std::max(hi, phi[idx]);
  }
  r.evaluations = r.feasible_points;
  if (r.feasible_points == 0) {
    throw InfeasibleProblem("oracle: no grid point satisfies V(t_f) <= V_max");
  }
  r.u = point(static_cast<int>(best / n), static_cast<int>(best % n));
  r.phi = lo;
  r.grid_phi = lo;
  r.flat = hi - lo <= 1e-12 * std::max(1.0, std::abs(lo));
  if (r.flat || !opts.polish) return r;

  const OptimizeResult pol = optimize_model(predict, spec, r.u);
  r.evaluations += pol.evaluations;
  if (pol.feasible) {
    const double phi_pol = spec.objective(predict(spec.inputs(pol.u)), pol.u);
    if (phi_pol < r.phi) {
      r.u = pol.u;
      r.phi = phi_pol;
    }
  }
  return r;
}

double calibration_residual(const OracleResult& o, const CalibrationTarget& t) {
  const double a = (o.u[kS0] - t.S0) / t.S0;
  const double b = (o.u[kFeed] - t.F) / t.F;
  const double c = (o.mass() - t.mass) / t.mass;
  return std::sqrt(a * a + b * b + c * c);
}

CalibrationResult scenario_calibrate(const Scenario& base, const CalibrationTarget& target,
                                     const CalibrationOptions& opts) {
  if (!(opts.t_f_lo > 0.0 && opts.t_f_lo <= opts.t_f_hi) ||
      !(opts.V_max_lo > base.initial.V0 && opts.V_max_lo <= opts.V_max_hi) || opts.coarse < 1) {
    throw std::invalid_argument("calibration search box is empty or below V0");
  }
  const double dt = base.integrator.grid_step;
  auto make = [&](double t_f, double v_max) {
    Scenario s = base;
    s.initial.t_f = std::clamp(std::round(t_f / dt) * dt, opts.t_f_lo, opts.t_f_hi);
    s.V_max = std::clamp(v_max, opts.V_max_lo, opts.V_max_hi);
    return s;
  };
  CalibrationResult out;
  OracleOptions search{opts.search_grid, true, 1};
  auto residual_of = [&](const Scenario& s) {
    ++out.oracle_calls;
    try {
      return calibration_residual(oracle_plant_optimum(s, search), target);
    } catch (const InfeasibleProblem&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  const int m = opts.coarse;
  auto axis = [m](double lo, double hi, int i) {
    return m == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (m - 1);
  };
  std::vector<double> res(static_cast<std::size_t>(m) * m);
  parallel_for(res.size(), opts.threads, [&](std::size_t idx) {
    const int i = static_cast<int>(idx / m), j = static_cast<int>(idx % m);
    Scenario s = make(axis(opts.t_f_lo, opts.t_f_hi, i), axis(opts.V_max_lo, opts.V_max_hi, j));
    OracleResult o;
    try {
      o = oracle_plant_optimum(s, search);
      res[idx] = calibration_residual(o, target);
    } catch (const InfeasibleProblem&) {
      res[idx] = std::numeric_limits<double>::infinity();
    }
  });
  out.oracle_calls += static_cast<int>(res.size());
  const std::size_t best = static_cast<std::size_t>(
      std::min_element(res.begin(), res.end()) - res.begin());
  Eigen::VectorXd x0(2);
  x0 << axis(opts.t_f_lo, opts.t_f_hi, static_cast<int>(best / m)),
      axis(opts.V_max_lo, opts.V_max_hi, static_cast<int>(best % m));

  optim::NelderMeadOptions nm;
  nm.lower = Eigen::Vector2d(opts.t_f_lo, opts.V_max_lo);
  nm.upper = Eigen::Vector2d(opts.t_f_hi, opts.V_max_hi);
  nm.initial_step = Eigen::Vector2d(std::max(dt, 0.5 * (opts.t_f_hi - opts.t_f_lo) / m),
                                    std::max(1e-3, 0.5 * (opts.V_max_hi - opts.V_max_lo) / m));
  nm.xtol = std::max(dt, 1e-3);
  nm.max_evals = 120;
  nm.restarts = 1;
  const optim::NelderMeadResult pol =
      optim::minimize([&](const Eigen::VectorXd& x) { return residual_of(make(x[0], x[1])); }, x0, nm);

  const Eigen::VectorXd x = pol.value <= res[best] ? pol.x : x0;
  out.scenario = make(x[0], x[1]);
  out.oracle = oracle_plant_optimum(out.scenario, OracleOptions{opts.final_grid, true, opts.threads});
  ++out.oracle_calls;
  out.residual = calibration_residual(out.oracle, target);
  out.warning = !(out.residual <= opts.warn_residual);
  return out;
}

double iae(const std::vector<double>& trace, double s0_star, int n_iters) {
  if (trace.empty()) throw std::invalid_argument("iae: empty trace");
  double sum = 0.0;
  for (int k = 0; k < n_iters; ++k) {
    const double s = trace[std::min<std::size_t>(static_cast<std::size_t>(k), trace.size() - 1)];
    sum += std::abs(s - s0_star);
  }
  return sum;
}

int oscillation_count(const std::vector<double>& trace, double s0_init, double tolerance) {
  int count = 0;
  int last_sign = 0;
  double prev = s0_init;
  for (double s : trace) {
    const double d = s - prev;
    prev = s;
    if (std::abs(d) < tolerance) continue;
    const int sign = d > 0 ? 1 : -1;
    if (last_sign != 0 && sign != last_sign) ++count;
    last_sign = sign;
  }
  return count;
}

std::optional<int> first_within(const std::vector<double>& trace, double s0_star, double rel) {
  for (std::size_t k = 0; k < trace.size(); ++k) {
    if (std::abs(trace[k] - s0_star) <= rel * std::abs(s0_star)) return static_cast<int>(k) + 1;
  }
  return std::nullopt;
}

double total_sse(const RunResult& run) {
  double s = 0.0;
  for (const auto& r : run.records) s += r.sse;
  return s;
}

const AlgorithmSummary& MCSummary::of(Algorithm a) const {
  for (const auto& s : algorithms) {
    if (s.algorithm == a) return s;
  }
  throw std::out_of_range("no summary for algorithm " + to_string(a));
}

void MCSummary::write_csv(std::ostream& os) const {
  os << "algorithm,seed,iterations,final_S0,final_F,iae,oscillations,total_sse,termination,failure\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%d,%.12g,%.12g,%.12g,%d,%.12g,", to_string(r.algorithm).c_str(),
                  static_cast<unsigned long long>(r.seed), r.iterations, r.final_S0, r.final_F, r.iae,
                  r.oscillations, r.total_sse);
    std::string failure = r.failure;
    std::replace(failure.begin(), failure.end(), ',', ';');
    std::replace(failure.begin(), failure.end(), '\n', ' ');
    os << buf << r.termination << "," << failure << "\n";
  }
}

nlohmann::json MCSummary::to_json() const {
  nlohmann::json algs = nlohmann::json::array();
  for (const auto& a : algorithms) {
    algs.push_back({{"algorithm", to_string(a.algorithm)},
                    {"completed", a.completed},
                    {"failed", a.failed},
                    {"iae_mean", a.iae_mean},
                    {"final_S0_mean", a.final_S0_mean},
                    {"final_S0_std", a.final_S0_std},
                    {"iterations_mean", a.iterations_mean},
                    {"oscillations_mean", a.oscillations_mean},
                    {"total_sse_mean", a.total_sse_mean}});
  }
  return {{"scenario", scenario},     {"n_replicates", n_replicates},
          {"base_seed", base_seed},   {"noise_sigma_rel", noise_sigma_rel},
          {"s0_star", s0_star},       {"iae_budget", iae_budget},
          {"iae_units", "g/L*iterations"}, {"algorithms", algs}};
}

MCSummary monte_carlo(const Scenario& scenario, const std::vector<Algorithm>& algorithms, int n,
                      std::uint64_t base_seed, double s0_star, const ExperimentOptions& opts) {
  if (n < 2) throw std::invalid_argument("monte_carlo needs at least 2 replicates");
  if (algorithms.empty()) throw std::invalid_argument("monte_carlo needs at least one algorithm");
  MCSummary out;
  out.scenario = scenario.name;
  out.n_replicates = n;
  out.base_seed = base_seed;
  out.noise_sigma_rel = opts.noise_sigma_rel.value_or(scenario.study_noise_sigma_rel);
  out.s0_star = s0_star;
  out.iae_budget = scenario.iae_budget;

  const std::size_t jobs = algorithms.size() * static_cast<std::size_t>(n);
  out.rows.resize(jobs);
  parallel_for(jobs, opts.threads, [&](std::size_t idx) {
    ReplicateRow& row = out.rows[idx];
    row.algorithm = algorithms[idx / n];
    row.seed = base_seed + idx % n;
    RunOptions ro;
    ro.seed = row.seed;
    ro.noise_sigma_rel = out.noise_sigma_rel;
    ro.eps_trunc_max = opts.eps_trunc_max;
    ro.filter_gain = opts.filter_gain;
    ro.max_iterations = opts.max_iterations;
    ro.diagnostics = false;
    try {
      const RunResult run = run_algorithm(row.algorithm, scenario, ro);
      row.iterations = static_cast<int>(run.records.size());
      row.termination = to_string(run.termination);
      row.failure = run.failure;
      if (run.records.empty()) return;
      row.final_S0 = run.final_u()[kS0];
      row.final_F = run.final_u()[kFeed];
      row.iae = iae(run.s0_trace(), s0_star, scenario.iae_budget);
      row.oscillations = oscillation_count(run.s0_trace(), scenario.initial.S0);
      row.total_sse = total_sse(run);
    } catch (const std::exception& e) {
      row.termination = to_string(Termination::kFailure);
      row.failure = e.what();
    }
  });

  for (Algorithm a : algorithms) {
    AlgorithmSummary s;
    s.algorithm = a;
    std::vector<double> iaes, finals, iters, osc, sses;
    for (const auto& r : out.rows) {
      if (r.algorithm != a) continue;
      if (r.termination == to_string(Termination::kFailure)) {
        ++s.failed;
        continue;
      }
      ++s.completed;
      iaes.push_back(r.iae);
      finals.push_back(r.final_S0);
      iters.push_back(r.iterations);
      osc.push_back(r.oscillations);
      sses.push_back(r.total_sse);
    }
    s.iae_mean = mean_of(iaes);
    s.final_S0_mean = mean_of(finals);
    s.final_S0_std = sample_std(finals);
    s.iterations_mean = mean_of(iters);
    s.oscillations_mean = mean_of(osc);
    s.total_sse_mean = mean_of(sses);
    out.algorithms.push_back(s);
  }
  return out;
}

SweepParameter sweep_parameter_from_string(const std::string& s) {
  if (s == "eps-trunc") return SweepParameter::kEpsTruncMax;
  if (s == "filter-gain") return SweepParameter::kFilterGain;
  throw std::invalid_argument("unknown sweep parameter '" + s + "' (valid: eps-trunc, filter-gain)");
}

std::string to_string(SweepParameter p) {
  return p == SweepParameter::kEpsTruncMax ? "eps-trunc" : "filter-gain";
}

void SweepResult::write_convergence_csv(std::ostream& os) const {
  os << "k";
  for (double v : values) os << "," << to_string(parameter) << "=" << v;
  os << "\n";
  std::size_t rows = 0;
  for (const auto& r : runs) rows = std::max(rows, r.records.size());
  char buf[64];
  for (std::size_t k = 0; k < rows; ++k) {
    os << k + 1;
    for (const auto& r : runs) {
      os << ",";
      if (k < r.records.size()) {
        std::snprintf(buf, sizeof buf, "%.12g", r.records[k].u_next[kS0]);
        os << buf;
      }
    }
    os << "\n";
  }
}

SweepResult sweep(const Scenario& scenario, SweepParameter parameter,
                  const std::vector<double>& values, std::uint64_t seed,
                  const ExperimentOptions& opts) {
  if (values.empty()) throw std::invalid_argument("sweep needs at least one value");
  SweepResult out;
  out.parameter = parameter;
  out.values = values;
  out.runs.resize(values.size());
  parallel_for(values.size(), opts.threads, [&](std::size_t i) {
    RunOptions ro;
    ro.seed = seed;
    ro.noise_sigma_rel = opts.noise_sigma_rel;
    ro.max_iterations = opts.max_iterations;
    ro.eps_trunc_max = opts.eps_trunc_max;
    ro.filter_gain = opts.filter_gain;
    Algorithm a = Algorithm::kProposed;
    if (parameter == SweepParameter::kEpsTruncMax) {
      ro.eps_trunc_max = values[i];
    } else {
      ro.filter_gain = values[i];
      a = Algorithm::kModifierAdaptation;
    }
    out.runs[i] = run_algorithm(a, scenario, ro);
  });
  return out;
}

std::string run_directory_name(const RunResult& run) {
  return run.scenario + "_" + to_string(run.algorithm) + "_" + std::to_string(run.seed);
}

void write_run_directory(const RunResult& run, const std::filesystem::path& dir) {
  write_atomic(dir / "result.json", to_json(run).dump(2) + "\n");
  std::ostringstream csv;
  run.write_iterations_csv(csv);
  write_atomic(dir / "iterations.csv", csv.str());
  if (run.ledger) {
    std::ostringstream ledger;
    run.ledger->write_csv(ledger);
    write_atomic(dir / "ledger.csv", ledger.str());
  }
}

}  // namespace r2r
