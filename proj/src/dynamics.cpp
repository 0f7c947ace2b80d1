#include "r2r/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <ostream>
#include <random>

#include <Eigen/LU>

namespace r2r {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// Hairer-Wanner RODAS4 coefficients (stiffly accurate, L-stable) with the
// exact Jacobian.
constexpr double kGamma = 0.25;
constexpr double kA21 = 1.544;
constexpr double kA31 = 0.9466785280815826;
constexpr double kA32 = 0.2557011698983284;
constexpr double kA41 = 3.314825187068521;
constexpr double kA42 = 2.896124015972201;
constexpr double kA43 = 0.9986419139977817;
constexpr double kA51 = 1.221224509226641;
constexpr double kA52 = 6.019134481288629;
constexpr double kA53 = 12.53708332932087;
constexpr double kA54 = -0.687886036105895;
constexpr double kC21 = -5.6688;
constexpr double kC31 = -2.430093356833875;
constexpr double kC32 = -0.2063599157091915;
constexpr double kC41 = -0.1073529058151375;
constexpr double kC42 = -9.594562251023355;
constexpr double kC43 = -20.47028614809616;
constexpr double kC51 = 7.496443313967647;
constexpr double kC52 = -10.24680431464352;
constexpr double kC53 = -33.99990352819905;
constexpr double kC54 = 11.7089089320616;
constexpr double kC61 = 8.083246795921522;
constexpr double kC62 = -7.981132988064893;
constexpr double kC63 = -31.52159432874371;
constexpr double kC64 = 16.31930543123136;
constexpr double kC65 = -6.058818238834054;

struct Rates {
  double growth = 0.0;
  double production = 0.0;
  double maintenance = 0.0;
};

// Growth and production vanish once the substrate is exhausted; both tend to
// zero continuously as S -> 0. Maintenance demand does not depend on S.
Rates rates(const PlantParameters& k, const State& x) {
  const double X = x[kX];
  const double S = x[kS];
  Rates r;
  r.maintenance = k.m_X * X;
  if (!(S > 0.0)) return r;
  r.growth = k.mu_X * S * X / (k.K_X * X + S);
  r.production = k.mu_P * S * X / (k.K_P + S + S * S / k.K_I);
  return r;
}

State step_rk4(const PlantParameters& k, bool hyd, double feed, const State& x, double h) {
  const State k1 = process_rhs(k, hyd, feed, x);
  const State k2 = process_rhs(k, hyd, feed, x + 0.5 * h * k1);
  const State k3 = process_rhs(k, hyd, feed, x + 0.5 * h * k2);
  const State k4 = process_rhs(k, hyd, feed, x + h * k3);
  return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

struct RosenbrockStep {
  State y;
  State error;  // y minus the embedded third-order solution
};

RosenbrockStep step_rosenbrock(const PlantParameters& k, bool hyd, double feed, const State& x,
                               double h) {
  const Eigen::Matrix4d w =
      Eigen::Matrix4d::Identity() / (kGamma * h) - process_jacobian(k, hyd, feed, x);
  const Eigen::Matrix4d winv = w.inverse();
  auto f = [&](const State& y) { return process_rhs(k, hyd, feed, y); };
  const State k1 = winv * f(x);
  const State k2 = winv * (f(x + kA21 * k1) + kC21 / h * k1);
  const State k3 = winv * (f(x + kA31 * k1 + kA32 * k2) + (kC31 * k1 + kC32 * k2) / h);
  const State k4 = winv * (f(x + kA41 * k1 + kA42 * k2 + kA43 * k3) +
                           (kC41 * k1 + kC42 * k2 + kC43 * k3) / h);
  const State y5 = x + kA51 * k1 + kA52 * k2 + kA53 * k3 + kA54 * k4;
  const State k5 = winv * (f(y5) + (kC51 * k1 + kC52 * k2 + kC53 * k3 + kC54 * k4) / h);
  const State y6 = y5 + k5;
  const State k6 =
      winv * (f(y6) + (kC61 * k1 + kC62 * k2 + kC63 * k3 + kC64 * k4 + kC65 * k5) / h);
  return {y6 + k6, k6};
}

constexpr double kRelTol = 1e-8;
constexpr double kAbsTol = 1e-9;
constexpr double kMinStep = 1e-10;  // h

// Adaptive Rosenbrock integration from t0 to t1 with the embedded error
// estimate; steps that carry a positive substrate below zero are retried
// shorter.
// `h_try` carries the step-size suggestion between calls.
void advance_rosenbrock(const PlantParameters& k, bool hyd, double feed, State& x, double t0,
                        double t1, double& h_try) {
  double t = t0;
  while (t < t1) {
    double h = std::min(h_try, t1 - t);
    if (t1 - (t + h) <= 1e-12 * t1) h = t1 - t;
    const RosenbrockStep s = step_rosenbrock(k, hyd, feed, x, h);
    double err = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double sc = kAbsTol + kRelTol * std::max(std::abs(x[i]), std::abs(s.y[i]));
      err = std::max(err, std::abs(s.error[i]) / sc);
    }
    if (!s.y.allFinite()) err = std::numeric_limits<double>::infinity();
    const double factor =
        err > 0.0 ? std::clamp(0.9 * std::pow(err, -0.25), 0.2, 5.0) : 5.0;
    const bool overshoot = x[kS] > 0.0 && s.y[kS] < -kAbsTol;
    if (err <= 1.0 && !overshoot) {
      t = (h == t1 - t) ? t1 : t + h;
      x = s.y;
      if (x[kS] < 0.0) x[kS] = 0.0;
      h_try = h * factor;
    } else {
      h_try = h * (err <= 1.0 ? 0.5 : factor);
      if (h_try < kMinStep) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "step size underflow at t = %.6g h", t);
        throw IntegrationError(t, buf);
      }
    }
  }
}

int step_count(const InputConditions& u, double h) {
  require(h > 0.0, "grid_step must be positive");
  const double n = u.t_f / h;
  const double rounded = std::round(n);
  require(rounded >= 1.0 && std::abs(n - rounded) <= 1e-9 * std::max(1.0, n),
          "grid_step must divide t_f");
  return static_cast<int>(rounded);
}

// Integrates and hands (grid index, state) to `observe` at every grid point,
// or only at the sorted indices in `wanted` when given.
template <typename Observer>
void integrate(const PlantParameters& k, bool hyd, const InputConditions& u,
               const IntegratorOptions& opts, const std::vector<int>* wanted,
               Observer&& observe) {
  u.validate();
  const double h = opts.grid_step;
  const int n = step_count(u, h);
  State x{u.X0, u.P0, u.S0, u.V0};
  std::size_t next = 0;
  auto due = [&](int i) {
    if (!wanted) return true;
    if (next < wanted->size() && (*wanted)[next] == i) {
      while (next < wanted->size() && (*wanted)[next] == i) ++next;
      return true;
    }
    return false;
  };
  if (due(0)) observe(0, x);
  double h_try = std::min(h, 0.1);
  int at = 0;
  for (int i = 1; i <= n; ++i) {
    if (opts.kind == IntegratorKind::kRk4) {
      x = step_rk4(k, hyd, u.F, x, h);
      if (!x.allFinite()) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "non-finite state at t = %.6g h", i * h);
        throw IntegrationError(i * h, buf);
      }
      if (x[kS] < 0.0) x[kS] = 0.0;
      if (due(i)) observe(i, x);
    } else {
      if (wanted && !(next < wanted->size() && (*wanted)[next] == i)) continue;
      advance_rosenbrock(k, hyd, u.F, x, at * h, i * h, h_try);
      at = i;
      due(i);
      observe(i, x);
    }
  }
}

Trajectory simulate(const PlantParameters& k, bool hyd, const InputConditions& u,
                    const IntegratorOptions& opts, std::string provenance) {
  Trajectory traj;
  traj.provenance = std::move(provenance);
  const int n = step_count(u, opts.grid_step);
  traj.grid.reserve(n + 1);
  traj.states.reserve(n + 1);
  integrate(k, hyd, u, opts, nullptr, [&](int i, const State& x) {
    traj.grid.push_back(i * opts.grid_step);
    traj.states.push_back(x);
  });
  return traj;
}

std::string describe(const InputConditions& u, IntegratorKind kind, double h) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "S0=%.10g F=%.10g X0=%.10g P0=%.10g V0=%.10g t_f=%.10g %s h=%.6g",
                u.S0, u.F, u.X0, u.P0, u.V0, u.t_f, to_string(kind).c_str(), h);
  return buf;
}

}  // namespace

void PlantParameters::validate() const {
  for (double v : {mu_X, K_X, mu_P, K_P, K_I, Y_XS, Y_PS, m_X, s_f, evap_rate}) {
    require(std::isfinite(v) && v > 0.0, "plant parameters must be strictly positive");
  }
  // K_H = 0 is the zero-mismatch configuration.
  require(std::isfinite(K_H) && K_H >= 0.0, "K_H must be non-negative");
}

ModelParameters ModelParameters::nominal_from(const PlantParameters& plant) {
  ModelParameters m;
  m.theta = ParameterVector{plant.K_X, plant.K_I};
  m.fixed = plant;
  return m;
}

ModelParameters ModelParameters::with_theta(const ParameterVector& t) const {
  ModelParameters m = *this;
  m.theta = t;
  return m;
}

void ModelParameters::validate() const {
  require(theta.allFinite() && theta[kKX] > 0.0 && theta[kKI] > 0.0,
          "model K_X and K_I must be positive");
  fixed.validate();
}

InputConditions InputConditions::with_decision(const DecisionVector& u) const {
  InputConditions out = *this;
  out.S0 = u[kS0];
  out.F = u[kFeed];
  return out;
}

void InputConditions::validate() const {
  require(std::isfinite(S0) && S0 >= 0.0, "S0 must be >= 0");
  require(std::isfinite(F) && F >= 0.0, "F must be >= 0");
  require(std::isfinite(X0) && X0 >= 0.0, "X0 must be >= 0");
  require(std::isfinite(P0) && P0 >= 0.0, "P0 must be >= 0");
  require(std::isfinite(V0) && V0 > 0.0, "V0 must be > 0");
  require(std::isfinite(t_f) && t_f > 0.0, "t_f must be > 0");
}

double volume_at(const InputConditions& u, double t, double evap_rate) {
  const double steady = u.F / evap_rate;
  return steady + (u.V0 - steady) * std::exp(-evap_rate * t);
}

std::string to_string(IntegratorKind kind) {
  return kind == IntegratorKind::kRk4 ? "rk4" : "rosenbrock4";
}

IntegratorKind integrator_from_string(const std::string& name) {
  if (name == "rk4") return IntegratorKind::kRk4;
  if (name == "rosenbrock4") return IntegratorKind::kRosenbrock4;
  throw std::invalid_argument("unknown integrator '" + name + "' (valid: rosenbrock4, rk4)");
}

IntegrationError::IntegrationError(double t, const std::string& what)
    : std::runtime_error(what), time_(t) {}

State process_rhs(const PlantParameters& k, bool hydrolysis, double feed, const State& x) {
  const Rates r = rates(k, x);
  const double V = x[kV];
  const double dV = feed - k.evap_rate * V;
  const double dilution = dV / V;
  State dx;
  dx[kX] = r.growth - x[kX] * dilution;
  dx[kP] = r.production - (hydrolysis ? k.K_H * x[kP] : 0.0) - x[kP] * dilution;
  dx[kS] = -r.growth / k.Y_XS - r.production / k.Y_PS - r.maintenance + feed * k.s_f / V -
           x[kS] * dilution;
  dx[kV] = dV;
  return dx;
}

Eigen::Matrix4d process_jacobian(const PlantParameters& k, bool hydrolysis, double feed,
                                 const State& x) {
  const double X = x[kX];
  const double P = x[kP];
  const double S = x[kS];
  const double V = x[kV];
  const double dilution = feed / V - k.evap_rate;
  const double d_dilution_dV = -feed / (V * V);

  // At S = 0, one-sided derivatives on the side the substrate is heading.
  double gX = 0, gS = 0, rX = 0, rS = 0;
  const double mX = k.m_X;
  const bool replenished = feed * k.s_f / V - k.m_X * X > 0.0;
  if ((S > 0.0 || (S == 0.0 && replenished)) && k.K_X * X + S > 0.0) {
    const double den = k.K_X * X + S;
    gX = k.mu_X * S * S / (den * den);
    gS = k.mu_X * k.K_X * X * X / (den * den);
    const double q = k.K_P + S + S * S / k.K_I;
    rX = k.mu_P * S / q;
    rS = k.mu_P * X * (k.K_P - S * S / k.K_I) / (q * q);
  }

  Eigen::Matrix4d J = Eigen::Matrix4d::Zero();
  J(kX, kX) = gX - dilution;
  J(kX, kS) = gS;
  J(kX, kV) = -X * d_dilution_dV;

  J(kP, kX) = rX;
  J(kP, kP) = -(hydrolysis ? k.K_H : 0.0) - dilution;
  J(kP, kS) = rS;
  J(kP, kV) = -P * d_dilution_dV;

  J(kS, kX) = -gX / k.Y_XS - rX / k.Y_PS - mX;
  J(kS, kS) = -gS / k.Y_XS - rS / k.Y_PS - dilution;
  J(kS, kV) = -feed * k.s_f / (V * V) - S * d_dilution_dV;

  J(kV, kV) = -k.evap_rate;
  return J;
}

Trajectory simulate_plant(const PlantParameters& p, const InputConditions& u,
                          const IntegratorOptions& opts) {
  p.validate();
  return simulate(p, true, u, opts, "plant " + describe(u, opts.kind, opts.grid_step));
}

Trajectory simulate_model(const ModelParameters& m, const InputConditions& u,
                          const IntegratorOptions& opts) {
  m.validate();
  PlantParameters k = m.fixed;
  k.K_X = m.theta[kKX];
  k.K_I = m.theta[kKI];
  char buf[96];
  std::snprintf(buf, sizeof buf, "model K_X=%.10g K_I=%.10g ", k.K_X, k.K_I);
  return simulate(k, false, u, opts, buf + describe(u, opts.kind, opts.grid_step));
}

std::vector<State> simulate_samples(const PlantParameters& kinetics, bool hydrolysis,
                                    const InputConditions& u, const std::vector<int>& sample_indices,
                                    const IntegratorOptions& opts) {
  std::vector<State> out;
  out.reserve(sample_indices.size());
  std::size_t next = 0;
  integrate(kinetics, hydrolysis, u, opts, &sample_indices, [&](int i, const State& x) {
    while (next < sample_indices.size() && sample_indices[next] == i) {
      out.push_back(x);
      ++next;
    }
  });
  require(out.size() == sample_indices.size(), "sample index outside the integration grid");
  return out;
}

Eigen::VectorXd model_outputs(const ModelParameters& m, const InputConditions& u,
                              const SampleSchedule& schedule, const IntegratorOptions& opts) {
  m.validate();
  PlantParameters k = m.fixed;
  k.K_X = m.theta[kKX];
  k.K_I = m.theta[kKI];
  const std::vector<int> idx = schedule.indices(u, opts.grid_step);
  const std::vector<State> states = simulate_samples(k, false, u, idx, opts);
  Eigen::VectorXd y(kNumOutputs * states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    y[3 * i + 0] = states[i][kX];
    y[3 * i + 1] = states[i][kP];
    y[3 * i + 2] = states[i][kS];
  }
  return y;
}

std::vector<int> SampleSchedule::indices(const InputConditions& u, double grid_step) const {
  const int n = step_count(u, grid_step);
  const double ratio = sample_step / grid_step;
  const int stride = static_cast<int>(std::round(ratio));
  require(stride >= 1 && std::abs(ratio - stride) <= 1e-9 * ratio,
          "sample_step must be a multiple of grid_step");
  std::vector<int> idx;
  for (int i = stride; i <= n; i += stride) idx.push_back(i);
  if (idx.empty() || idx.back() != n) idx.push_back(n);
  return idx;
}

std::vector<double> SampleSchedule::times(const InputConditions& u, double grid_step) const {
  std::vector<double> t;
  for (int i : indices(u, grid_step)) t.push_back(i * grid_step);
  return t;
}

Eigen::VectorXd MeasurementSet::flattened() const {
  Eigen::VectorXd y(kNumOutputs * y_m.size());
  for (std::size_t i = 0; i < y_m.size(); ++i) {
    for (int o = 0; o < kNumOutputs; ++o) y[kNumOutputs * i + o] = y_m[i][o];
  }
  return y;
}

MeasurementSet sample_outputs(const Trajectory& traj, double sample_step, double noise_sigma_rel,
                              std::uint64_t seed) {
  require(traj.grid.size() >= 2, "trajectory too short to sample");
  require(noise_sigma_rel >= 0.0 && std::isfinite(noise_sigma_rel), "noise sigma must be >= 0");
  const double h = traj.grid[1] - traj.grid[0];
  InputConditions span;
  span.t_f = traj.grid.back();
  const std::vector<int> idx = SampleSchedule{sample_step}.indices(span, h);

  MeasurementSet m;
  m.noise_seed = seed;
  m.noise_sigma_rel = noise_sigma_rel;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i : idx) {
    const State& x = traj.states[i];
    OutputSample y{x[kX], x[kP], x[kS]};
    if (noise_sigma_rel > 0.0) {
      for (double& v : y) v *= 1.0 + noise_sigma_rel * normal(rng);
    }
    m.sample_grid.push_back(traj.grid[i]);
    m.y_m.push_back(y);
  }
  return m;
}

namespace {
void put(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  os << buf;
}
}  // namespace

void Trajectory::write_csv(std::ostream& os) const {
  os << "t,X,P,S,V\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    put(os, grid[i]);
    for (int c = 0; c < 4; ++c) {
      os << ',';
      put(os, states[i][c]);
    }
    os << '\n';
  }
}

void MeasurementSet::write_csv(std::ostream& os) const {
  os << "t,Xm,Pm,Sm\n";
  for (std::size_t i = 0; i < sample_grid.size(); ++i) {
    put(os, sample_grid[i]);
    for (double v : y_m[i]) {
      os << ',';
      put(os, v);
    }
    os << '\n';
  }
}

}  // namespace r2r
