#include "r2r/scenario.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "r2r/io.hpp"

namespace r2r {

using nlohmann::json;

OptimizationSpec Scenario::spec() const {
  OptimizationSpec s;
  s.base = initial;
  s.V_max = V_max;
  s.bounds = bounds;
  s.evap_rate = plant.evap_rate;
  return s;
}

OutputModel Scenario::raw_model() const {
  return simulated_output_model(model_nominal, schedule, integrator);
}

void Scenario::validate() const {
  plant.validate();
  model_nominal.validate();
  initial.validate();
  spec().validate();
  if (!bounds.contains(initial.decision())) {
    throw std::invalid_argument("initial (S0, F) lies outside the decision bounds");
  }
  schedule.indices(initial, integrator.grid_step);
  if (!(noise_sigma_rel >= 0.0) || !(study_noise_sigma_rel >= 0.0)) {
    throw std::invalid_argument("noise sigma must be >= 0");
  }
  if (!(filter_gain > 0.0 && filter_gain <= 1.0)) {
    throw std::invalid_argument("filter_gain must be in (0, 1]");
  }
  if (iae_budget < 1) throw std::invalid_argument("iae_budget must be >= 1");
  if (!fit.bounds.contains(model_nominal.theta)) {
    throw std::invalid_argument("fit bounds do not contain the nominal parameters");
  }
  if (fit.starts < 1 || fit.max_evals_per_start < 1) {
    throw std::invalid_argument("fit starts and evaluation budget must be >= 1");
  }
  correction.validate();
  if (!(plant_gradients.step > 0.0 && plant_gradients.step < 0.5) ||
      !(noisy_fd_step > 0.0 && noisy_fd_step < 0.5)) {
    throw std::invalid_argument("plant gradient step must be in (0, 0.5) scaled units");
  }
  if (termination.max_iterations < 1 || !(termination.theta_rel_tol > 0.0) ||
      !(termination.u_tol > 0.0) ||
      !(termination.modifier_rel_tol > 0.0) || !(termination.kl_eps1 > 0.0) || !(termination.kl_eps2 > 0.0)) {
    throw std::invalid_argument("termination settings must be positive");
  }
}

Scenario Scenario::default_scenario() {
  Scenario s;
  s.name = "default";
  s.initial.t_f = 186.5;
  s.V_max = 119.5001915;
  s.fit.bounds = ParameterBox::around(s.model_nominal.theta);
  s.correction.theta_bounds = s.fit.bounds;
  // Unweighted least-squares fit to the noise-free plant batch at the initial
  // inputs; K_I sits on its lower bound.
  s.model_nominal.theta = ParameterVector{0.140774902237, s.fit.bounds.lower[kKI]};
  s.fit.weighting = ResidualWeighting::kUnweighted;
  s.plant_gradients = GradientOptions{0.002, FdScheme::kCentral};
  s.correction.gradients = s.plant_gradients;
  return s;
}

Scenario Scenario::uncalibrated() {
  Scenario s = default_scenario();
  s.name = "uncalibrated";
  s.initial.t_f = 150.0;
  s.V_max = 120.0;
  return s;
}

namespace {

json vec(const Eigen::Vector2d& v) { return json::array({v[0], v[1]}); }

std::string fd_name(FdScheme s) { return s == FdScheme::kForward ? "forward" : "central"; }

}  // namespace

json to_json(const Scenario& s) {
  const PlantParameters& p = s.plant;
  return {
      {"schema_version", kScenarioSchemaVersion},
      {"name", s.name},
      {"plant",
       {{"mu_X", p.mu_X}, {"K_X", p.K_X}, {"mu_P", p.mu_P}, {"K_P", p.K_P}, {"K_I", p.K_I},
        {"K_H", p.K_H}, {"Y_XS", p.Y_XS}, {"Y_PS", p.Y_PS}, {"m_X", p.m_X}, {"s_f", p.s_f},
        {"evap_rate", p.evap_rate}}},
      {"model", {{"theta", vec(s.model_nominal.theta)}}},
      {"initial",
       {{"S0", s.initial.S0}, {"F", s.initial.F}, {"X0", s.initial.X0}, {"P0", s.initial.P0},
        {"V0", s.initial.V0}, {"t_f", s.initial.t_f}}},
      {"V_max", s.V_max},
      {"bounds", {{"lower", vec(s.bounds.lower)}, {"upper", vec(s.bounds.upper)}}},
      {"sample_step", s.schedule.sample_step},
      {"integrator", {{"kind", to_string(s.integrator.kind)}, {"grid_step", s.integrator.grid_step}}},
      {"noise_sigma_rel", s.noise_sigma_rel},
      {"study_noise_sigma_rel", s.study_noise_sigma_rel},
      {"fit",
       {{"lower", vec(s.fit.bounds.lower)},
        {"upper", vec(s.fit.bounds.upper)},
        {"weighting", s.fit.weighting == ResidualWeighting::kScaled ? "scaled" : "unweighted"},
        {"starts", s.fit.starts},
        {"lhs_seed", s.fit.lhs_seed},
        {"max_evals_per_start", s.fit.max_evals_per_start},
        {"xtol", s.fit.xtol},
        {"screen_xtol", s.fit.screen_xtol},
        {"fd_step", s.fit.fd_step}}},
      {"correction",
       {{"eps_trunc_max", s.correction.eps_trunc_max},
        {"auto_weights", s.correction.auto_weights},
        {"w_phi", vec(s.correction.w_phi)},
        {"w_g", vec(s.correction.w_g)},
        {"theta_lower", vec(s.correction.theta_bounds.lower)},
        {"theta_upper", vec(s.correction.theta_bounds.upper)},
        {"fd_step_theta", s.correction.fd_step_theta},
        {"fd_step_u", s.correction.gradients.step},
        {"fd_scheme_u", fd_name(s.correction.gradients.scheme)},
        {"denominator_floor", s.correction.denominator_floor}}},
      {"plant_gradients",
       {{"step", s.plant_gradients.step}, {"scheme", fd_name(s.plant_gradients.scheme)}}},
      {"noisy_fd_step", s.noisy_fd_step},
      {"termination",
       {{"max_iterations", s.termination.max_iterations},
        {"theta_rel_tol", s.termination.theta_rel_tol},
        {"u_tol", s.termination.u_tol},
        {"modifier_rel_tol", s.termination.modifier_rel_tol},
        {"kl_eps1", s.termination.kl_eps1},
        {"kl_eps2", s.termination.kl_eps2}}},
      {"filter_gain", s.filter_gain},
      {"iae_budget", s.iae_budget},
  };
}

namespace {

/// Reads optional fields of one JSON object, rejecting unknown keys and
/// type errors with the dotted field path in the message.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "scenario" : path_, "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      fail(name(key), "has the wrong type");
    }
  }

  void get(const char* key, Eigen::Vector2d& out) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number()) {
      fail(name(key), "must be an array of two numbers");
    }
    out = {(*it)[0].get<double>(), (*it)[1].get<double>()};
  }

  Reader child(const char* key) {
    seen_.push_back(key);
    auto it = j_.find(key);
    static const json empty = json::object();
    return Reader(it == j_.end() ? empty : *it, name(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        fail(name(it.key()), "is not a known field");
      }
    }
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] static void fail(const std::string& field, const std::string& what) {
    throw std::invalid_argument("scenario field '" + field + "' " + what);
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

FdScheme fd_from(const std::string& s, const std::string& field) {
  if (s == "forward") return FdScheme::kForward;
  if (s == "central") return FdScheme::kCentral;
  Reader::fail(field, "must be 'forward' or 'central'");
}

}  // namespace

Scenario scenario_from_json(const json& j) {
  Reader root(j, "");
  int version = -1;
  root.get("schema_version", version);
  if (version != kScenarioSchemaVersion) {
    Reader::fail("schema_version", "must be " + std::to_string(kScenarioSchemaVersion));
  }
  Scenario s = Scenario::default_scenario();
  root.get("name", s.name);

  {
    Reader r = root.child("plant");
    PlantParameters& p = s.plant;
    r.get("mu_X", p.mu_X);
    r.get("K_X", p.K_X);
    r.get("mu_P", p.mu_P);
    r.get("K_P", p.K_P);
    r.get("K_I", p.K_I);
    r.get("K_H", p.K_H);
    r.get("Y_XS", p.Y_XS);
    r.get("Y_PS", p.Y_PS);
    r.get("m_X", p.m_X);
    r.get("s_f", p.s_f);
    r.get("evap_rate", p.evap_rate);
    r.finish();
  }
  {
    ParameterVector theta = s.model_nominal.theta;
    Reader r = root.child("model");
    r.get("theta", theta);
    r.finish();
    s.model_nominal = ModelParameters::nominal_from(s.plant);
    s.model_nominal.theta = theta;
  }
  {
    Reader r = root.child("initial");
    r.get("S0", s.initial.S0);
    r.get("F", s.initial.F);
    r.get("X0", s.initial.X0);
    r.get("P0", s.initial.P0);
    r.get("V0", s.initial.V0);
    r.get("t_f", s.initial.t_f);
    r.finish();
  }
  root.get("V_max", s.V_max);
  {
    Reader r = root.child("bounds");
    r.get("lower", s.bounds.lower);
    r.get("upper", s.bounds.upper);
    r.finish();
  }
  root.get("sample_step", s.schedule.sample_step);
  {
    Reader r = root.child("integrator");
    std::string kind = to_string(s.integrator.kind);
    r.get("kind", kind);
    try {
      s.integrator.kind = integrator_from_string(kind);
    } catch (const std::invalid_argument&) {
      Reader::fail("integrator.kind", "must be 'rosenbrock4' or 'rk4'");
    }
    r.get("grid_step", s.integrator.grid_step);
    r.finish();
  }
  root.get("noise_sigma_rel", s.noise_sigma_rel);
  root.get("study_noise_sigma_rel", s.study_noise_sigma_rel);
  {
    Reader r = root.child("fit");
    r.get("lower", s.fit.bounds.lower);
    r.get("upper", s.fit.bounds.upper);
    std::string w = s.fit.weighting == ResidualWeighting::kScaled ? "scaled" : "unweighted";
    r.get("weighting", w);
    if (w == "scaled") {
      s.fit.weighting = ResidualWeighting::kScaled;
    } else if (w == "unweighted") {
      s.fit.weighting = ResidualWeighting::kUnweighted;
    } else {
      Reader::fail("fit.weighting", "must be 'scaled' or 'unweighted'");
    }
    r.get("starts", s.fit.starts);
    r.get("lhs_seed", s.fit.lhs_seed);
    r.get("max_evals_per_start", s.fit.max_evals_per_start);
    r.get("xtol", s.fit.xtol);
    r.get("screen_xtol", s.fit.screen_xtol);
    r.get("fd_step", s.fit.fd_step);
    r.finish();
  }
  {
    Reader r = root.child("correction");
    CorrectionConfig& c = s.correction;
    r.get("eps_trunc_max", c.eps_trunc_max);
    r.get("auto_weights", c.auto_weights);
    r.get("w_phi", c.w_phi);
    r.get("w_g", c.w_g);
    r.get("theta_lower", c.theta_bounds.lower);
    r.get("theta_upper", c.theta_bounds.upper);
    r.get("fd_step_theta", c.fd_step_theta);
    r.get("fd_step_u", c.gradients.step);
    std::string scheme = fd_name(c.gradients.scheme);
    r.get("fd_scheme_u", scheme);
    c.gradients.scheme = fd_from(scheme, "correction.fd_scheme_u");
    r.get("denominator_floor", c.denominator_floor);
    r.finish();
  }
  {
    Reader r = root.child("plant_gradients");
    r.get("step", s.plant_gradients.step);
    std::string scheme = fd_name(s.plant_gradients.scheme);
    r.get("scheme", scheme);
    s.plant_gradients.scheme = fd_from(scheme, "plant_gradients.scheme");
    r.finish();
  }
  root.get("noisy_fd_step", s.noisy_fd_step);
  {
    Reader r = root.child("termination");
    r.get("max_iterations", s.termination.max_iterations);
    r.get("theta_rel_tol", s.termination.theta_rel_tol);
    r.get("u_tol", s.termination.u_tol);
    r.get("modifier_rel_tol", s.termination.modifier_rel_tol);
    r.get("kl_eps1", s.termination.kl_eps1);
    r.get("kl_eps2", s.termination.kl_eps2);
    r.finish();
  }
  root.get("filter_gain", s.filter_gain);
  root.get("iae_budget", s.iae_budget);
  root.finish();
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& name_or_path) {
  if (name_or_path == "default") return Scenario::default_scenario();
  if (name_or_path == "uncalibrated") return Scenario::uncalibrated();
  if (name_or_path == "zero-mismatch") {
    Scenario s = Scenario::default_scenario();
    s.name = "zero-mismatch";
    s.plant.K_H = 0.0;
    s.model_nominal.theta = ParameterVector{s.plant.K_X, s.plant.K_I};
    return s;
  }
  std::ifstream in(name_or_path);
  if (!in) {
    throw std::invalid_argument("cannot open scenario '" + name_or_path +
                                "' (built-in names: default, uncalibrated, zero-mismatch)");
  }
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("scenario '" + name_or_path + "' is not valid JSON: " + e.what());
  }
  return scenario_from_json(j);
}

void save_scenario(const Scenario& s, const std::string& path) {
  write_atomic(path, to_json(s).dump(2) + "\n");
}

}  // namespace r2r
