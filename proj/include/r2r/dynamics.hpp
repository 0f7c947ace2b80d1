#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace r2r {

/// Kinetic constants of the fed-batch penicillin process. Defaults are the
/// simulator values used for the "true" plant.
struct PlantParameters {
  double mu_X = 0.092;      // 1/h
  double K_X = 0.15;        // dimensionless, enters as K_X*X + S
  double mu_P = 0.005;      // 1/h
  double K_P = 0.0002;      // g/L
  double K_I = 0.1;         // g/L
  double K_H = 0.04;        // 1/h, hydrolysis (plant only)
  double Y_XS = 0.45;       // g/g
  double Y_PS = 0.9;        // g/g
  double m_X = 0.014;       // 1/h
  double s_f = 600.0;       // g/L
  double evap_rate = 6.226e-4;  // 1/h

  void validate() const;
  bool operator==(const PlantParameters&) const = default;
};

/// Adjustable model parameters (K_X, K_I), index with kKX / kKI.
using ParameterVector = Eigen::Vector2d;
inline constexpr int kKX = 0;
inline constexpr int kKI = 1;

/// Mismatched process model: no hydrolysis term. Only (K_X, K_I) are ever
/// updated; `fixed` is frozen at scenario setup (its K_X/K_I/K_H fields are unused).
struct ModelParameters {
  ParameterVector theta{0.15, 0.1};
  PlantParameters fixed{};

  static ModelParameters nominal_from(const PlantParameters& plant);
  ModelParameters with_theta(const ParameterVector& t) const;
  void validate() const;
};

/// Decision vector u = (S0 [g/L], F [L/h]).
using DecisionVector = Eigen::Vector2d;
inline constexpr int kS0 = 0;
inline constexpr int kFeed = 1;

struct InputConditions {
  double S0 = 1.0;     // g/L
  double F = 0.04;     // L/h
  double X0 = 0.1;     // g/L
  double P0 = 0.0;     // g/L
  double V0 = 100.0;   // L
  double t_f = 150.0;  // h

  DecisionVector decision() const { return {S0, F}; }
  InputConditions with_decision(const DecisionVector& u) const;
  void validate() const;
  bool operator==(const InputConditions&) const = default;
};

/// Closed-form culture volume under a constant feed (the volume balance is
/// linear and shared by plant and model).
double volume_at(const InputConditions& u, double t, double evap_rate);

enum class IntegratorKind { kRosenbrock4, kRk4 };

struct IntegratorOptions {
  IntegratorKind kind = IntegratorKind::kRosenbrock4;
  double grid_step = 0.1;  // h
};

std::string to_string(IntegratorKind kind);
IntegratorKind integrator_from_string(const std::string& name);

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(double t, const std::string& what);
  double time() const { return time_; }

 private:
  double time_;
};

/// State layout (X, P, S, V).
using State = Eigen::Vector4d;
inline constexpr int kX = 0;
inline constexpr int kP = 1;
inline constexpr int kS = 2;
inline constexpr int kV = 3;

struct Trajectory {
  std::vector<double> grid;
  std::vector<State> states;
  std::string provenance;

  const State& final_state() const { return states.back(); }
  void write_csv(std::ostream& os) const;
};

/// Measured outputs per sample, in the order (X, P, S).
inline constexpr int kNumOutputs = 3;
using OutputSample = std::array<double, kNumOutputs>;

struct MeasurementSet {
  std::vector<double> sample_grid;
  std::vector<OutputSample> y_m;
  std::uint64_t noise_seed = 0;
  double noise_sigma_rel = 0.0;

  std::size_t size() const { return sample_grid.size(); }
  /// Sample-major flattening: element 3*i + o is output o at sample i.
  Eigen::VectorXd flattened() const;
  void write_csv(std::ostream& os) const;
};

/// Sampling plan: every `sample_step` hours from the first step on, plus t_f.
struct SampleSchedule {
  double sample_step = 10.0;

  /// Integration-grid indices of the samples; throws if sample_step is not a
  /// multiple of grid_step.
  std::vector<int> indices(const InputConditions& u, double grid_step) const;
  std::vector<double> times(const InputConditions& u, double grid_step) const;
};

Trajectory simulate_plant(const PlantParameters& p, const InputConditions& u,
                          const IntegratorOptions& opts = {});
Trajectory simulate_model(const ModelParameters& m, const InputConditions& u,
                          const IntegratorOptions& opts = {});

/// States at the schedule's sample points only (no full trajectory kept).
/// `hydrolysis` false selects the model equations.
std::vector<State> simulate_samples(const PlantParameters& kinetics, bool hydrolysis,
                                    const InputConditions& u, const std::vector<int>& sample_indices,
                                    const IntegratorOptions& opts);

/// Noise-free outputs flattened sample-major, as used by every evaluator.
Eigen::VectorXd model_outputs(const ModelParameters& m, const InputConditions& u,
                              const SampleSchedule& schedule, const IntegratorOptions& opts);

MeasurementSet sample_outputs(const Trajectory& traj, double sample_step, double noise_sigma_rel,
                              std::uint64_t seed);

/// Right-hand side and its analytic Jacobian; exposed for tests.
State process_rhs(const PlantParameters& k, bool hydrolysis, double feed, const State& x);
Eigen::Matrix4d process_jacobian(const PlantParameters& k, bool hydrolysis, double feed,
                                 const State& x);

}  // namespace r2r
