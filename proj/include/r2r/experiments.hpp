#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "r2r/rto.hpp"
#include "r2r/scenario.hpp"

namespace r2r {

struct OracleOptions {
  int grid = 201;  // points per decision axis
  bool polish = true;
  int threads = 1;
};

/// Constrained plant optimum. phi is the minimized objective, i.e. minus the
/// penicillin mass (g).
struct OracleResult {
  DecisionVector u = DecisionVector::Zero();
  double phi = 0.0;
  double grid_phi = 0.0;  // best grid value before polishing
  bool flat = false;      // objective constant over the feasible grid
  int feasible_points = 0;
  int evaluations = 0;

  double mass() const { return -phi; }
};

/// Grid search over the decision bounds on the noise-free plant, then a
/// local polish. Throws InfeasibleProblem if no grid point satisfies the
/// volume limit.
OracleResult oracle_plant_optimum(const Scenario& scenario, const OracleOptions& opts = {});

struct CalibrationTarget {
  double S0 = 55.0;     // g/L
  double F = 0.1728;    // L/h
  double mass = 592.0;  // g
};

struct CalibrationOptions {
  double t_f_lo = 100.0, t_f_hi = 300.0;    // h
  double V_max_lo = 110.0, V_max_hi = 160.0;  // L
  int coarse = 11;          // outer grid points per axis
  int search_grid = 21;     // oracle grid during the search
  int final_grid = 201;     // oracle grid of the reported optimum
  double warn_residual = 0.05;
  int threads = 1;
};

struct CalibrationResult {
  Scenario scenario;
  OracleResult oracle;
  double residual = 0.0;  // scaled distance of the oracle optimum to the target
  bool warning = false;
  int oracle_calls = 0;
};

/// Relative distance between an oracle optimum and the target:
/// sqrt(dS0^2 + dF^2 + dmass^2), each term relative to the target value.
double calibration_residual(const OracleResult& o, const CalibrationTarget& t);

/// Picks (t_f, V_max) within the search box whose plant optimum is closest
/// to the target. t_f is kept on the integration grid.
CalibrationResult scenario_calibrate(const Scenario& base, const CalibrationTarget& target = {},
                                     const CalibrationOptions& opts = {});

/// Sum over the first n_iters entries of |S0_k - s0_star| (g/L x iterations);
/// a shorter trace is padded with its last value.
double iae(const std::vector<double>& trace, double s0_star, int n_iters);

/// Sign changes of consecutive S0 steps, starting from s0_init; steps below
/// `tolerance` (g/L) are ignored.
int oscillation_count(const std::vector<double>& trace, double s0_init, double tolerance = 1e-3);

/// First iteration (1-based) whose S0 lies within rel * s0_star of s0_star.
std::optional<int> first_within(const std::vector<double>& trace, double s0_star, double rel);

/// Step-1 sse summed over the run's iterations.
double total_sse(const RunResult& run);

struct ExperimentOptions {
  std::optional<double> noise_sigma_rel;  // default: scenario.study_noise_sigma_rel
  std::optional<double> eps_trunc_max;
  std::optional<double> filter_gain;
  std::optional<int> max_iterations;
  int threads = 1;
};

struct ReplicateRow {
  Algorithm algorithm = Algorithm::kProposed;
  std::uint64_t seed = 0;
  int iterations = 0;
  double final_S0 = 0.0;
  double final_F = 0.0;
  double iae = 0.0;
  int oscillations = 0;
  double total_sse = 0.0;
  std::string termination;
  std::string failure;
};

struct AlgorithmSummary {
  Algorithm algorithm = Algorithm::kProposed;
  int completed = 0;
  int failed = 0;
  double iae_mean = 0.0;       // g/L x iterations
  double final_S0_mean = 0.0;  // g/L
  double final_S0_std = 0.0;   // g/L, sample standard deviation
  double iterations_mean = 0.0;
  double oscillations_mean = 0.0;
  double total_sse_mean = 0.0;
};

struct MCSummary {
  std::string scenario;
  int n_replicates = 0;
  std::uint64_t base_seed = 0;
  double noise_sigma_rel = 0.0;
  double s0_star = 0.0;
  int iae_budget = 40;
  std::vector<AlgorithmSummary> algorithms;
  std::vector<ReplicateRow> rows;

  const AlgorithmSummary& of(Algorithm a) const;
  void write_csv(std::ostream& os) const;
  nlohmann::json to_json() const;
};

/// Runs every algorithm with seeds base_seed .. base_seed + n - 1 (the same
/// seeds for each algorithm) against the oracle optimum s0_star.
MCSummary monte_carlo(const Scenario& scenario, const std::vector<Algorithm>& algorithms, int n,
                      std::uint64_t base_seed, double s0_star, const ExperimentOptions& opts = {});

enum class SweepParameter { kEpsTruncMax, kFilterGain };
SweepParameter sweep_parameter_from_string(const std::string& s);
std::string to_string(SweepParameter p);

struct SweepResult {
  SweepParameter parameter = SweepParameter::kEpsTruncMax;
  std::vector<double> values;
  std::vector<RunResult> runs;

  /// One row per iteration, one S0 column per value (empty past a run's end).
  void write_convergence_csv(std::ostream& os) const;
};

/// One run per value with a shared seed. eps_trunc_max sweeps the proposed
/// algorithm, filter_gain sweeps modifier adaptation. Noise defaults to the
/// scenario's noise_sigma_rel.
SweepResult sweep(const Scenario& scenario, SweepParameter parameter,
                  const std::vector<double>& values, std::uint64_t seed,
                  const ExperimentOptions& opts = {});

/// Writes result.json, iterations.csv and (for the proposed algorithm)
/// ledger.csv into `dir`, each atomically.
void write_run_directory(const RunResult& run, const std::filesystem::path& dir);

/// `<scenario>_<algorithm>_<seed>`
std::string run_directory_name(const RunResult& run);

}  // namespace r2r
