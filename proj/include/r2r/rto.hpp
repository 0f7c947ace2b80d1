#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "r2r/correction.hpp"
#include "r2r/estimation.hpp"
#include "r2r/problem.hpp"
#include "r2r/scenario.hpp"

namespace r2r {

/// One executed plant batch: sampled (possibly noisy) outputs plus the
/// measured objective and constraint.
struct BatchOutcome {
  MeasurementSet measurements;
  double phi = 0.0;
  double g = 0.0;
};

using BatchRunner = std::function<BatchOutcome(const DecisionVector& u, std::uint64_t noise_seed)>;

/// Plant simulator + sampler; phi uses the measured P(t_f) and the volume
/// from the known feed policy.
BatchRunner simulated_plant_runner(const Scenario& scenario, double noise_sigma_rel);

/// Noise-free plant outputs at arbitrary inputs (diagnostics and the oracle).
Predictor plant_predictor(const Scenario& scenario);

struct PlantProbe {
  BatchOutcome base;           // the batch at u_k itself
  ProcessGradients gradients;  // scaled-input gradients
  int batches = 0;
};

/// Finite-difference plant gradients at u_k: forward differences cost two
/// extra batches, each with its own noise seed; central costs four.
PlantProbe estimate_plant_gradients(const DecisionVector& u_k, const OptimizationSpec& spec,
                                    const BatchRunner& plant, const GradientOptions& opts,
                                    std::uint64_t seed);

/// Modifiers of the modifier-adaptation baseline, in scaled-input units.
struct ModifierSet {
  Eigen::Vector2d lambda_phi = Eigen::Vector2d::Zero();
  Eigen::Vector2d lambda_g = Eigen::Vector2d::Zero();
  double eps_g = 0.0;

  Eigen::Matrix<double, 5, 1> stacked() const;
  static ModifierSet from_stacked(const Eigen::Matrix<double, 5, 1>& v);
};

/// Raw modifiers from measured and predicted quantities at u_k.
ModifierSet raw_modifiers(const ProcessGradients& plant, const ProcessGradients& model);

/// Exponential filter Lambda_k = K Lambda'_k + (1 - K) Lambda_{k-1}.
ModifierSet filter_modifiers(const ModifierSet& previous, const ModifierSet& raw, double gain);

struct OptimizeResult {
  DecisionVector u = DecisionVector::Zero();
  double phi = 0.0;  // predicted (modified) objective
  double g = 0.0;    // predicted (modified) constraint
  bool feasible = false;
  bool stalled = false;
  int evaluations = 0;
};

class InfeasibleProblem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Local constrained minimization of the predicted objective from u_start
/// (bounded Nelder-Mead, exact penalty escalated until feasible). With
/// modifiers, solves the modified problem linearized around u_k.
OptimizeResult optimize_model(const Predictor& model, const OptimizationSpec& spec,
                              const DecisionVector& u_start,
                              const ModifierSet* modifiers = nullptr,
                              const DecisionVector* u_k = nullptr);

struct KKTReport {
  Eigen::Vector2d grad_phi_model = Eigen::Vector2d::Zero();
  Eigen::Vector2d grad_phi_plant = Eigen::Vector2d::Zero();
  Eigen::Vector2d grad_g_model = Eigen::Vector2d::Zero();
  Eigen::Vector2d grad_g_plant = Eigen::Vector2d::Zero();
  double phi_plant = 0.0;
  double g_plant = 0.0;
  double mu = 0.0;
  bool constraint_active = false;
  Eigen::Matrix2d hessian_phi_fd = Eigen::Matrix2d::Zero();
  bool hessian_pd = false;
  /// ||grad phi + mu grad g|| / |phi| on plant quantities (scaled inputs).
  double stationarity_residual = 0.0;
  /// max_i |d phi_plant/du_i - d phi_model/du_i| / |phi|.
  double c1_gap = 0.0;
};

struct KKTOptions {
  double gradient_step = 1e-3;   // scaled, central differences
  double hessian_step = 1e-2;    // scaled
  double active_tolerance = 1e-5;  // |g| / V_max
};

KKTReport kkt_report(const DecisionVector& u, const Predictor& model, const Predictor& plant,
                     const OptimizationSpec& spec, const KKTOptions& opts = {});

enum class Algorithm { kProposed, kTwoStep, kModifierAdaptation };
std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

enum class Termination { kKlConverged, kStepConverged, kMaxIterations, kFailure };
std::string to_string(Termination t);

struct IterationRecord {
  int k = 0;
  DecisionVector u = DecisionVector::Zero();       // applied at this batch
  DecisionVector u_next = DecisionVector::Zero();  // optimizer output
  ParameterVector theta_prev = ParameterVector::Zero();   // theta'_{k-1}
  ParameterVector theta_iden = ParameterVector::Zero();   // after step 1
  ParameterVector theta_prime = ParameterVector::Zero();  // after step 2
  ParameterVector dtheta_iden = ParameterVector::Zero();
  ParameterVector dtheta_corr = ParameterVector::Zero();
  double sse_prior = 0.0;      // carried-over model vs this batch, before refit
  double sse = 0.0;            // step-1 optimum
  double sse_corrected = 0.0;  // corrected model at theta'_k vs this batch
  double kl_iden = 0.0;
  double kl_corr = 0.0;
  double plant_phi = 0.0;  // measured
  double plant_phi_true = 0.0;  // noise-free, diagnostic
  double model_phi = 0.0;
  double max_truncation = 0.0;
  double mismatch = 0.0;
  double mismatch_at_zero = 0.0;
  ProcessGradients plant_gradients;
  ModifierSet modifiers;
  GaussianBelief belief_iden;
  GaussianBelief belief_prime;
  KKTReport kkt;
  std::vector<std::string> flags;
};

struct RunResult {
  Algorithm algorithm = Algorithm::kProposed;
  std::string scenario;
  std::uint64_t seed = 0;
  std::vector<IterationRecord> records;
  Termination termination = Termination::kMaxIterations;
  std::string failure;
  std::optional<CorrectionLedger> ledger;
  nlohmann::json config;

  /// S0 proposed by each iteration (the optimizer output).
  std::vector<double> s0_trace() const;
  DecisionVector final_u() const;
  void write_iterations_csv(std::ostream& os) const;
};

struct RunOptions {
  std::uint64_t seed = 0;
  std::optional<double> eps_trunc_max;
  std::optional<double> filter_gain;
  std::optional<int> max_iterations;
  std::optional<double> noise_sigma_rel;
  bool diagnostics = true;  // per-iteration KKT report on the noise-free plant
  int threads = 1;
};

/// Injection points for tests; empty members fall back to the scenario.
struct RunSeams {
  BatchRunner plant;
  OutputModel raw_model;
  Predictor plant_truth;
};

RunResult run_proposed(const Scenario& scenario, const RunOptions& opts = {},
                       const RunSeams& seams = {});
RunResult run_two_step(const Scenario& scenario, const RunOptions& opts = {},
                       const RunSeams& seams = {});
RunResult run_modifier_adaptation(const Scenario& scenario, const RunOptions& opts = {},
                                  const RunSeams& seams = {});
RunResult run_algorithm(Algorithm a, const Scenario& scenario, const RunOptions& opts = {},
                        const RunSeams& seams = {});

nlohmann::json to_json(const RunResult& r);
nlohmann::json to_json(const FitResult& f);
nlohmann::json to_json(const CorrectionLedger& l);

}  // namespace r2r
