#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "r2r/experiments.hpp"
#include "r2r/io.hpp"
#include "r2r/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kAlgorithmFailure = 2;

struct Common {
  std::string scenario = "default";
  std::string out = "runs";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--scenario", c.scenario,
                  "Built-in name (default, uncalibrated, zero-mismatch) or scenario JSON path")
      ->capture_default_str();
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
}

std::vector<r2r::Algorithm> parse_algorithms(const std::string& list) {
  std::vector<r2r::Algorithm> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(r2r::algorithm_from_string(item));
  }
  if (out.empty()) throw std::invalid_argument("no algorithms given (valid: proposed, two-step, ma)");
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct RunArgs {
  Common common;
  std::string algorithm = "proposed";
  std::optional<double> eps_trunc, filter_gain, noise;
  std::optional<int> max_iters;
  std::uint64_t seed = 0;
};

int cmd_run(const RunArgs& a) {
  const r2r::Algorithm alg = r2r::algorithm_from_string(a.algorithm);
  const r2r::Scenario s = r2r::load_scenario(a.common.scenario);
  r2r::RunOptions o;
  o.seed = a.seed;
  o.eps_trunc_max = a.eps_trunc;
  o.filter_gain = a.filter_gain;
  o.noise_sigma_rel = a.noise;
  o.max_iterations = a.max_iters;
  o.threads = r2r::worker_threads();
  const r2r::RunResult run = r2r::run_algorithm(alg, s, o);
  const fs::path dir = fs::path(a.common.out) / r2r::run_directory_name(run);
  r2r::write_run_directory(run, dir);
  std::printf("%-6s %-12s %-10s %-12s %s\n", "iters", "S0 [g/L]", "F [L/h]", "mass [g]", "termination");
  if (!run.records.empty()) {
    const auto& last = run.records.back();
    std::printf("%-6zu %-12.6f %-10.6f %-12.4f %s\n", run.records.size(), last.u_next[r2r::kS0],
                last.u_next[r2r::kFeed], -last.plant_phi, r2r::to_string(run.termination).c_str());
  }
  std::printf("wrote %s\n", dir.string().c_str());
  if (run.termination == r2r::Termination::kFailure) {
    std::fprintf(stderr, "algorithm failed: %s\n", run.failure.c_str());
    return kAlgorithmFailure;
  }
  return kOk;
}

json oracle_json(const r2r::OracleResult& o, int grid) {
  return {{"S0", o.u[r2r::kS0]},     {"F", o.u[r2r::kFeed]},        {"phi", o.phi},
          {"mass", o.mass()},       {"grid_mass", -o.grid_phi},    {"flat", o.flat},
          {"grid", grid},           {"feasible_points", o.feasible_points},
          {"evaluations", o.evaluations}};
}

int cmd_oracle(const Common& c, int grid) {
  const r2r::Scenario s = r2r::load_scenario(c.scenario);
  const r2r::OracleResult o = r2r::oracle_plant_optimum(s, {grid, true, r2r::worker_threads()});
  json j = oracle_json(o, grid);
  j["scenario"] = s.name;
  r2r::write_atomic(fs::path(c.out) / (s.name + "_oracle.json"), j.dump(2) + "\n");
  std::printf("%-12s %-12s %-12s %s\n", "S0* [g/L]", "F* [L/h]", "mass* [g]", "phi*");
  std::printf("%-12.6f %-12.8f %-12.6f %.6f%s\n", o.u[r2r::kS0], o.u[r2r::kFeed], o.mass(), o.phi,
              o.flat ? "  (flat objective)" : "");
  return kOk;
}

struct CalibrateArgs {
  Common common;
  r2r::CalibrationTarget target;
  r2r::CalibrationOptions opts;
};

int cmd_calibrate(CalibrateArgs a) {
  const r2r::Scenario base = r2r::load_scenario(a.common.scenario);
  a.opts.threads = r2r::worker_threads();
  const r2r::CalibrationResult r = r2r::scenario_calibrate(base, a.target, a.opts);
  json j = {{"t_f", r.scenario.initial.t_f},
            {"V_max", r.scenario.V_max},
            {"oracle", oracle_json(r.oracle, a.opts.final_grid)},
            {"target", {{"S0", a.target.S0}, {"F", a.target.F}, {"mass", a.target.mass}}},
            {"residual", r.residual},
            {"warning", r.warning},
            {"oracle_calls", r.oracle_calls}};
  const fs::path out(a.common.out);
  r2r::write_atomic(out / "calibration.json", j.dump(2) + "\n");
  r2r::save_scenario(r.scenario, (out / "calibrated_scenario.json").string());
  std::printf("%-9s %-12s %-11s %-12s %-11s %s\n", "t_f [h]", "V_max [L]", "S0* [g/L]", "F* [L/h]",
              "mass* [g]", "residual");
  std::printf("%-9.1f %-12.7f %-11.5f %-12.8f %-11.4f %.5f\n", r.scenario.initial.t_f, r.scenario.V_max,
              r.oracle.u[r2r::kS0], r.oracle.u[r2r::kFeed], r.oracle.mass(), r.residual);
  if (r.warning) {
    std::fprintf(stderr,
                 "WARNING: calibration residual %.4f exceeds %.4f; treat the reference optimum as "
                 "qualitative only\n",
                 r.residual, a.opts.warn_residual);
  }
  return kOk;
}

struct SweepArgs {
  Common common;
  std::string param = "eps-trunc";
  std::vector<double> values;
  std::optional<double> noise;
  std::optional<int> max_iters;
  std::uint64_t seed = 0;
};

int cmd_sweep(const SweepArgs& a) {
  const r2r::SweepParameter p = r2r::sweep_parameter_from_string(a.param);
  const r2r::Scenario s = r2r::load_scenario(a.common.scenario);
  r2r::ExperimentOptions o;
  o.noise_sigma_rel = a.noise;
  o.max_iterations = a.max_iters;
  o.threads = r2r::worker_threads();
  const r2r::SweepResult r = r2r::sweep(s, p, a.values, a.seed, o);

  const fs::path root = fs::path(a.common.out) / (s.name + "_sweep_" + a.param + "_" + std::to_string(a.seed));
  json runs = json::array();
  bool failed = false;
  std::printf("%-12s %-6s %-12s %-12s %s\n", a.param.c_str(), "iters", "S0 [g/L]", "mass [g]", "termination");
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    const r2r::RunResult& run = r.runs[i];
    const std::string name = "value_" + std::to_string(i) + "_" + r2r::run_directory_name(run);
    r2r::write_run_directory(run, root / name);
    failed = failed || run.termination == r2r::Termination::kFailure;
    const double s0 = run.records.empty() ? 0.0 : run.final_u()[r2r::kS0];
    const double mass = run.records.empty() ? 0.0 : -run.records.back().plant_phi;
    runs.push_back({{"value", r.values[i]},
                    {"directory", name},
                    {"iterations", run.records.size()},
                    {"final_S0", s0},
                    {"termination", r2r::to_string(run.termination)},
                    {"failure", run.failure}});
    std::printf("%-12g %-6zu %-12.6f %-12.4f %s\n", r.values[i], run.records.size(), s0, mass,
                r2r::to_string(run.termination).c_str());
  }
  std::ostringstream csv;
  r.write_convergence_csv(csv);
  r2r::write_atomic(root / "convergence.csv", csv.str());
  r2r::write_atomic(root / "summary.json",
                    json({{"parameter", a.param}, {"seed", a.seed}, {"scenario", s.name}, {"runs", runs}})
                            .dump(2) +
                        "\n");
  std::printf("wrote %s\n", root.string().c_str());
  return failed ? kAlgorithmFailure : kOk;
}

struct McArgs {
  Common common;
  std::string algorithms = "proposed,ma";
  int replicates = 10;
  std::uint64_t seed = 0;
  std::optional<double> noise, eps_trunc, filter_gain, s0_star;
  std::optional<int> max_iters;
};

int cmd_mc(const McArgs& a) {
  const std::vector<r2r::Algorithm> algs = parse_algorithms(a.algorithms);
  const r2r::Scenario s = r2r::load_scenario(a.common.scenario);
  const int threads = r2r::worker_threads();
  const double s0_star =
      a.s0_star ? *a.s0_star : r2r::oracle_plant_optimum(s, {201, true, threads}).u[r2r::kS0];
  r2r::ExperimentOptions o;
  o.noise_sigma_rel = a.noise;
  o.eps_trunc_max = a.eps_trunc;
  o.filter_gain = a.filter_gain;
  o.max_iterations = a.max_iters;
  o.threads = threads;
  const r2r::MCSummary m = r2r::monte_carlo(s, algs, a.replicates, a.seed, s0_star, o);

  const fs::path root = fs::path(a.common.out) / (s.name + "_mc_" + std::to_string(a.seed));
  std::ostringstream csv;
  m.write_csv(csv);
  r2r::write_atomic(root / "replicates.csv", csv.str());
  r2r::write_atomic(root / "summary.json", m.to_json().dump(2) + "\n");
  std::printf("%-10s %-5s %-7s %-16s %-14s %-13s %-11s %s\n", "algorithm", "ok", "failed",
              "IAE [g/L*iter]", "mean S0 [g/L]", "std S0 [g/L]", "mean iters", "oscillations");
  bool failed = false;
  for (const auto& x : m.algorithms) {
    failed = failed || x.failed > 0;
    std::printf("%-10s %-5d %-7d %-16.4f %-14.4f %-13.4f %-11.2f %.2f\n", r2r::to_string(x.algorithm).c_str(),
                x.completed, x.failed, x.iae_mean, x.final_S0_mean, x.final_S0_std, x.iterations_mean,
                x.oscillations_mean);
  }
  std::printf("wrote %s (S0* = %s g/L)\n", root.string().c_str(), fmt("%.6f", s0_star).c_str());
  return failed ? kAlgorithmFailure : kOk;
}

int cmd_validate(const std::string& path) {
  const r2r::Scenario s = r2r::load_scenario(path);
  std::printf("ok: scenario '%s' (schema_version %d)\n", s.name.c_str(), r2r::kScenarioSchemaVersion);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Run-to-run optimization of a fed-batch penicillin process under model-plant mismatch"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  RunArgs run;
  CLI::App* run_cmd = app.add_subcommand("run", "Execute one algorithm run");
  add_common(run_cmd, run.common);
  run_cmd->add_option("--algorithm", run.algorithm, "proposed | two-step | ma")->capture_default_str();
  run_cmd->add_option("--eps-trunc", run.eps_trunc, "Truncation-error bound, fraction (e.g. 0.05 = 5%)");
  run_cmd->add_option("--filter-gain", run.filter_gain, "Modifier filter gain K in (0, 1], dimensionless");
  run_cmd->add_option("--noise", run.noise, "Relative measurement noise sigma, fraction of each output");
  run_cmd->add_option("--max-iters", run.max_iters, "Iteration cap, batches (count)");
  run_cmd->add_option("--seed", run.seed, "Seed of every noise realization (integer)")->capture_default_str();

  Common oracle;
  int grid = 201;
  CLI::App* oracle_cmd = app.add_subcommand("oracle", "Brute-force plant optimum (S0* g/L, F* L/h, phi* g)");
  add_common(oracle_cmd, oracle);
  oracle_cmd->add_option("--grid", grid, "Grid points per decision axis (count)")->capture_default_str();

  CalibrateArgs cal;
  CLI::App* cal_cmd = app.add_subcommand("calibrate", "Fit batch time and volume limit to a reference optimum");
  add_common(cal_cmd, cal.common);
  cal_cmd->add_option("--tf-min", cal.opts.t_f_lo, "Lower batch time, h")->capture_default_str();
  cal_cmd->add_option("--tf-max", cal.opts.t_f_hi, "Upper batch time, h")->capture_default_str();
  cal_cmd->add_option("--vmax-min", cal.opts.V_max_lo, "Lower volume limit, L")->capture_default_str();
  cal_cmd->add_option("--vmax-max", cal.opts.V_max_hi, "Upper volume limit, L")->capture_default_str();
  cal_cmd->add_option("--target-s0", cal.target.S0, "Target S0*, g/L")->capture_default_str();
  cal_cmd->add_option("--target-f", cal.target.F, "Target F*, L/h")->capture_default_str();
  cal_cmd->add_option("--target-mass", cal.target.mass, "Target penicillin mass, g")->capture_default_str();
  cal_cmd->add_option("--coarse", cal.opts.coarse, "Outer grid points per axis (count)")->capture_default_str();
  cal_cmd->add_option("--warn-residual", cal.opts.warn_residual,
                      "Relative residual above which a warning is printed, fraction")
      ->capture_default_str();

  SweepArgs sw;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "One run per parameter value with a shared seed");
  add_common(sweep_cmd, sw.common);
  sweep_cmd->add_option("--param", sw.param,
                        "eps-trunc (proposed; fraction) | filter-gain (ma; dimensionless)")
      ->capture_default_str();
  sweep_cmd->add_option("--values", sw.values, "Comma-separated parameter values")->delimiter(',')->required();
  sweep_cmd->add_option("--noise", sw.noise, "Relative measurement noise sigma, fraction");
  sweep_cmd->add_option("--max-iters", sw.max_iters, "Iteration cap, batches (count)");
  sweep_cmd->add_option("--seed", sw.seed, "Shared seed (integer)")->capture_default_str();

  McArgs mc;
  CLI::App* mc_cmd = app.add_subcommand("mc", "Paired-seed noise study (IAE in g/L*iterations, std in g/L)");
  add_common(mc_cmd, mc.common);
  mc_cmd->add_option("--algorithms", mc.algorithms, "Comma-separated: proposed, two-step, ma")->capture_default_str();
  mc_cmd->add_option("--replicates", mc.replicates, "Noise realizations per algorithm (count, >= 2)")
      ->capture_default_str();
  mc_cmd->add_option("--seed", mc.seed, "Base seed; replicate i uses seed + i (integer)")->capture_default_str();
  mc_cmd->add_option("--noise", mc.noise, "Relative measurement noise sigma, fraction (default: scenario study value)");
  mc_cmd->add_option("--eps-trunc", mc.eps_trunc, "Truncation-error bound, fraction");
  mc_cmd->add_option("--filter-gain", mc.filter_gain, "Modifier filter gain K, dimensionless");
  mc_cmd->add_option("--max-iters", mc.max_iters, "Iteration cap, batches (count)");
  mc_cmd->add_option("--s0-star", mc.s0_star, "Reference optimum S0*, g/L (default: run the oracle)");

  std::string validate_path;
  CLI::App* val_cmd = app.add_subcommand("validate-scenario", "Check a scenario file against the schema");
  val_cmd->add_option("--scenario", validate_path, "Scenario JSON path or built-in name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*oracle_cmd) return cmd_oracle(oracle, grid);
    if (*cal_cmd) return cmd_calibrate(cal);
    if (*sweep_cmd) return cmd_sweep(sw);
    if (*mc_cmd) return cmd_mc(mc);
    if (*val_cmd) return cmd_validate(validate_path);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kAlgorithmFailure;
  }
  return kUsage;
}
