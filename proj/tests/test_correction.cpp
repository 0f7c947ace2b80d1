#include <cmath>

#include <gtest/gtest.h>

#include "r2r/rto.hpp"
#include "r2r/scenario.hpp"

using namespace r2r;

namespace {

// y = A theta + b(u), linear in the parameters.
OutputModel linear_model(int n_samples) {
  return [n_samples](const ParameterVector& theta, const InputConditions& u) {
    Eigen::VectorXd y(kNumOutputs * n_samples);
    for (int i = 0; i < y.size(); ++i) {
      y[i] = (1.0 + i) * theta[0] - 0.5 * i * theta[1] + u.S0 + 0.1 * i * u.F + 3.0;
    }
    return y;
  };
}

Predictor at_theta(const OutputModel& raw, const ParameterVector& theta) {
  return [raw, theta](const InputConditions& u) { return raw(theta, u); };
}

}  // namespace

TEST(Ledger, CorrectionsAccumulate) {
  CorrectionLedger l = CorrectionLedger::empty({10.0, 20.0});
  EXPECT_EQ(l.C.size(), 6);
  Eigen::VectorXd c1 = Eigen::VectorXd::LinSpaced(6, 0.0, 1.0);
  Eigen::VectorXd c2 = Eigen::VectorXd::Constant(6, -0.25);
  const CorrectionLedger l1 = apply_correction(l, c1, 1, {0.01, 0.0});
  const CorrectionLedger l2 = apply_correction(l1, c2, 2, {0.0, 0.01});
  EXPECT_EQ(l.C, Eigen::VectorXd::Zero(6));
  EXPECT_TRUE(l2.C.isApprox(c1 + c2));
  ASSERT_EQ(l2.history.size(), 2u);
  EXPECT_EQ(l2.history[1].k, 2);
  EXPECT_DOUBLE_EQ(l2.max_abs(), 0.75);
  EXPECT_DOUBLE_EQ(l2.max_scaled({1.0, 1.0, 0.5}), 1.5);
}

TEST(Ledger, RejectsMismatchedGrid) {
  const CorrectionLedger l = CorrectionLedger::empty({10.0});
  EXPECT_THROW(apply_correction(l, Eigen::VectorXd::Zero(4), 1, {0, 0}), std::invalid_argument);
}

TEST(Ledger, CorrectedEvaluationSubtractsLedger) {
  CorrectedModel m{{0.2, 0.1}, CorrectionLedger::empty({1.0, 2.0}), linear_model(2)};
  m.ledger = apply_correction(m.ledger, Eigen::VectorXd::Constant(6, 0.5), 1, {0, 0});
  InputConditions u;
  const Eigen::VectorXd expected = linear_model(2)({0.2, 0.1}, u).array() - 0.5;
  EXPECT_TRUE(eval_corrected(m, u).isApprox(expected));
}

TEST(Truncation, VanishesForLinearModel) {
  const OutputModel raw = linear_model(4);
  const Eigen::VectorXd e =
      truncation_error(raw, {0.2, 0.1}, {0.05, -0.03}, InputConditions{}, {1.0, 1.0, 1.0}, 1e-4, 1e-3);
  EXPECT_LT(e.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Truncation, RelativeToOutputWithFloor) {
  Eigen::VectorXd y0(3), y1(3);
  y0 << 2.0, 0.0, 4.0;
  y1 << 2.2, 0.01, 4.0;
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(3, 2);
  D(0, 0) = 1.0;
  const Eigen::VectorXd e = truncation_error(y0, y1, D, {0.1, 0.0}, {10.0, 10.0, 10.0}, 1e-3);
  EXPECT_NEAR(e[0], 0.1 / 2.0, 1e-12);
  EXPECT_NEAR(e[1], 0.01 / (1e-3 * 10.0), 1e-12);
  EXPECT_NEAR(e[2], 0.0, 1e-15);
}

TEST(Sensitivity, OutputJacobianExactOnLinearMap) {
  const Eigen::MatrixXd D = output_jacobian(linear_model(3), {0.2, 0.1}, InputConditions{}, 1e-4);
  ASSERT_EQ(D.rows(), 9);
  for (int i = 0; i < 9; ++i) {
    EXPECT_NEAR(D(i, 0), 1.0 + i, 1e-8);
    EXPECT_NEAR(D(i, 1), -0.5 * i, 1e-8);
  }
}

TEST(GradientMatch, NoMoveWhenGradientsAlreadyAgree) {
  const Scenario s = Scenario::uncalibrated();
  const OutputModel raw = s.raw_model();
  const OptimizationSpec spec = s.spec();
  const ParameterVector theta = s.model_nominal.theta;
  const DecisionVector u{20.0, 0.1};
  const ProcessGradients model =
      predicted_gradients(spec, at_theta(raw, theta), u, s.correction.gradients);
  const Eigen::VectorXd y = raw(theta, spec.inputs(u));
  const OutputScales scales{y.maxCoeff(), y.maxCoeff(), y.maxCoeff()};
  const GradientMatch gm = solve_gradient_match(
      raw, spec, theta, u, model, s.correction,
      CorrectionLedger::empty(s.schedule.times(s.initial, s.integrator.grid_step)), scales);
  EXPECT_EQ(gm.objective_at_zero, 0.0);
  EXPECT_EQ(gm.dtheta, ParameterVector::Zero());
  EXPECT_EQ(gm.c.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GradientMatch, RespectsTruncationBudgetAgainstPlant) {
  const Scenario s = Scenario::uncalibrated();
  const OutputModel raw = s.raw_model();
  const OptimizationSpec spec = s.spec();
  const ParameterVector theta = s.model_nominal.theta;
  const DecisionVector u{30.0, 0.12};
  const PlantProbe probe =
      estimate_plant_gradients(u, spec, simulated_plant_runner(s, 0.0), s.plant_gradients, 1);
  const OutputScales scales = output_scales(probe.base.measurements);
  for (double eps : {0.01, 0.05}) {
    CorrectionConfig cfg = s.correction;
    cfg.eps_trunc_max = eps;
    const GradientMatch gm = solve_gradient_match(
        raw, spec, theta, u, probe.gradients, cfg,
        CorrectionLedger::empty(probe.base.measurements.sample_grid), scales);
    EXPECT_LE(gm.objective, gm.objective_at_zero);
    EXPECT_LE(gm.max_truncation, eps * (1 + 1e-9));
    EXPECT_TRUE(cfg.theta_bounds.contains(theta + gm.dtheta));
    const Eigen::MatrixXd D = output_jacobian(raw, theta, spec.inputs(u), cfg.fd_step_theta);
    EXPECT_LT((gm.c - D * gm.dtheta).cwiseAbs().maxCoeff(), 1e-12);
    const Eigen::VectorXd e = truncation_error(raw, theta, gm.dtheta, spec.inputs(u), scales,
                                               cfg.fd_step_theta, cfg.denominator_floor);
    EXPECT_LE(e.maxCoeff(), eps * (1 + 1e-9));
  }
}

TEST(GradientMatch, StartOutsideBoundsIsFlagged) {
  const Scenario s = Scenario::uncalibrated();
  const GradientMatch gm = solve_gradient_match(
      s.raw_model(), s.spec(), {5.0, 5.0}, {20.0, 0.1}, ProcessGradients{}, s.correction,
      CorrectionLedger::empty({10.0}), {1.0, 1.0, 1.0});
  EXPECT_TRUE(gm.infeasible_start);
  EXPECT_EQ(gm.dtheta, ParameterVector::Zero());
}

TEST(CorrectionConfig, ValidatesBudget) {
  CorrectionConfig c;
  c.eps_trunc_max = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
