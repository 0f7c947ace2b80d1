#include "r2r/problem.hpp"

#include <cmath>
#include <stdexcept>

namespace r2r {

bool DecisionBounds::contains(const DecisionVector& u) const {
  return (u.array() >= lower.array()).all() && (u.array() <= upper.array()).all();
}

DecisionVector OptimizationSpec::to_scaled(const DecisionVector& u) const {
  return ((u - bounds.lower).array() / (bounds.upper - bounds.lower).array()).matrix();
}

DecisionVector OptimizationSpec::from_scaled(const DecisionVector& z) const {
  return bounds.lower + (z.array() * (bounds.upper - bounds.lower).array()).matrix();
}

double OptimizationSpec::terminal_volume(const DecisionVector& u) const {
  return volume_at(inputs(u), base.t_f, evap_rate);
}

double OptimizationSpec::objective(const Eigen::VectorXd& outputs, const DecisionVector& u) const {
  if (outputs.size() < kNumOutputs) throw std::invalid_argument("objective: empty outputs");
  const double p_final = outputs[outputs.size() - kNumOutputs + 1];
  return -p_final * terminal_volume(u);
}

double OptimizationSpec::constraint(const DecisionVector& u) const {
  return terminal_volume(u) - V_max;
}

void OptimizationSpec::validate() const {
  if (!((bounds.lower.array() < bounds.upper.array()).all())) {
    throw std::invalid_argument("decision bounds are empty");
  }
  if (!(V_max > base.V0)) throw std::invalid_argument("V_max must exceed V0");
  if (!(evap_rate > 0.0)) throw std::invalid_argument("evap_rate must be positive");
  base.validate();
}

ProcessGradients fd_gradients(const ScaledEvaluation& eval, const DecisionVector& z,
                              const GradientOptions& opts) {
  if (!(opts.step > 0.0)) throw std::invalid_argument("gradient step must be positive");
  ProcessGradients out;
  const auto [phi0, g0] = eval(z, 0);
  out.phi = phi0;
  out.g = g0;
  for (int i = 0; i < 2; ++i) {
    const double h = opts.step;
    DecisionVector zp = z;
    DecisionVector zm = z;
    zp[i] += h;
    zm[i] -= h;
    const bool up_ok = zp[i] <= 1.0 + 1e-12;
    const bool down_ok = zm[i] >= -1e-12;
    if (opts.scheme == FdScheme::kCentral && up_ok && down_ok) {
      const auto [fp, gp] = eval(zp, 1 + 2 * i);
      const auto [fm, gm] = eval(zm, 2 + 2 * i);
      out.grad_phi[i] = (fp - fm) / (2 * h);
      out.grad_g[i] = (gp - gm) / (2 * h);
    } else if (up_ok) {
      const auto [fp, gp] = eval(zp, 1 + 2 * i);
      out.grad_phi[i] = (fp - phi0) / h;
      out.grad_g[i] = (gp - g0) / h;
    } else {
      const auto [fm, gm] = eval(zm, 2 + 2 * i);
      out.grad_phi[i] = (phi0 - fm) / h;
      out.grad_g[i] = (g0 - gm) / h;
      out.backward_used = true;
    }
  }
  return out;
}

ProcessGradients predicted_gradients(const OptimizationSpec& spec, const Predictor& predict,
                                     const DecisionVector& u, const GradientOptions& opts,
                                     const Eigen::VectorXd* outputs_at_u) {
  const DecisionVector z0 = spec.to_scaled(u);
  auto eval = [&](const DecisionVector& z, int probe) {
    const DecisionVector v = probe == 0 ? u : spec.from_scaled(z);
    const Eigen::VectorXd y =
        (probe == 0 && outputs_at_u) ? *outputs_at_u : predict(spec.inputs(v));
    return std::make_pair(spec.objective(y, v), spec.constraint(v));
  };
  return fd_gradients(eval, z0, opts);
}

}  // namespace r2r
