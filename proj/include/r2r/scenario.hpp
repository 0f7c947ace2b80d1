#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "r2r/correction.hpp"
#include "r2r/dynamics.hpp"
#include "r2r/estimation.hpp"
#include "r2r/problem.hpp"

namespace r2r {

inline constexpr int kScenarioSchemaVersion = 1;

struct TerminationConfig {
  int max_iterations = 40;
  double theta_rel_tol = 1e-4;  // noise-free path: ||dtheta_iden||, ||dtheta|| relative
  double u_tol = 1e-4;          // scaled-input step for two-step / MA
  double modifier_rel_tol = 1e-3;  // MA: relative change of the filtered modifiers
  double kl_eps1 = 1e-3;
  double kl_eps2 = 1e-3;
};

/// Everything one experiment needs: process, model, inputs, problem,
/// measurement plan and algorithm settings.
struct Scenario {
  std::string name = "default";
  PlantParameters plant;
  ModelParameters model_nominal = ModelParameters::nominal_from(PlantParameters{});
  InputConditions initial;  // u_init = (S0, F); X0, P0, V0, t_f stay fixed
  double V_max = 119.5001915;  // L
  DecisionBounds bounds;
  SampleSchedule schedule;
  IntegratorOptions integrator;
  double noise_sigma_rel = 0.0;        // applied to every run
  double study_noise_sigma_rel = 0.02; // default for the Monte-Carlo study
  FitOptions fit;
  CorrectionConfig correction;
  GradientOptions plant_gradients;
  double noisy_fd_step = 0.02;  // replaces both input FD steps when sigma > 0
  TerminationConfig termination;
  double filter_gain = 0.5;
  int iae_budget = 40;

  OptimizationSpec spec() const;
  OutputModel raw_model() const;
  void validate() const;

  /// Calibrated default (t_f and V_max reproduce the reference optimum).
  static Scenario default_scenario();
  /// Fast variant: t_f = 150 h, V_max = 120 L.
  static Scenario uncalibrated();
};

nlohmann::json to_json(const Scenario& s);
/// Throws std::invalid_argument naming the offending field.
Scenario scenario_from_json(const nlohmann::json& j);

Scenario load_scenario(const std::string& name_or_path);
void save_scenario(const Scenario& s, const std::string& path);

}  // namespace r2r
