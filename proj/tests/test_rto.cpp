#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "golden.hpp"
#include "r2r/rto.hpp"
#include "r2r/scenario.hpp"

using namespace r2r;

namespace {

ModifierSet modifiers(double a, double b, double c, double d, double e) {
  Eigen::Matrix<double, 5, 1> v;
  v << a, b, c, d, e;
  return ModifierSet::from_stacked(v);
}

RunOptions quick(int iterations, std::uint64_t seed = 0) {
  RunOptions o;
  o.max_iterations = iterations;
  o.seed = seed;
  o.diagnostics = false;
  return o;
}

std::string iterations_csv(const RunResult& r) {
  std::ostringstream os;
  r.write_iterations_csv(os);
  return os.str();
}

}  // namespace

TEST(Modifiers, RawModifiersAreDifferences) {
  ProcessGradients plant, model;
  plant.grad_phi = {1.0, 2.0};
  plant.grad_g = {0.5, 0.0};
  plant.g = -1.0;
  model.grad_phi = {0.25, 2.5};
  model.grad_g = {0.5, 1.0};
  model.g = -3.0;
  const ModifierSet m = raw_modifiers(plant, model);
  EXPECT_EQ(m.lambda_phi, Eigen::Vector2d(0.75, -0.5));
  EXPECT_EQ(m.lambda_g, Eigen::Vector2d(0.0, -1.0));
  EXPECT_EQ(m.eps_g, 2.0);
}

TEST(Modifiers, UnitGainTakesRawValue) {
  const ModifierSet prev = modifiers(9, 9, 9, 9, 9);
  const ModifierSet raw = modifiers(1, 2, 3, 4, 5);
  EXPECT_EQ(filter_modifiers(prev, raw, 1.0).stacked(), raw.stacked());
}

TEST(Modifiers, ConstantInputConvergesGeometrically) {
  const ModifierSet target = modifiers(1.0, -2.0, 0.5, 3.0, -1.0);
  for (double K : {0.2, 0.5, 0.9}) {
    ModifierSet m;
    for (int k = 1; k <= 12; ++k) {
      m = filter_modifiers(m, target, K);
      const Eigen::Matrix<double, 5, 1> expected = (1.0 - std::pow(1.0 - K, k)) * target.stacked();
      EXPECT_LT((m.stacked() - expected).cwiseAbs().maxCoeff(), 1e-12) << K << " " << k;
    }
  }
}

TEST(Modifiers, GainOutsideRangeRejected) {
  EXPECT_THROW(filter_modifiers({}, {}, 0.0), std::invalid_argument);
  EXPECT_THROW(filter_modifiers({}, {}, 1.5), std::invalid_argument);
}

TEST(Gradients, ExactOnLinearMap) {
  const auto eval = [](const DecisionVector& z, int) {
    return std::pair<double, double>{3.0 * z[0] - 2.0 * z[1] + 1.0, 0.5 * z[1]};
  };
  for (FdScheme scheme : {FdScheme::kForward, FdScheme::kCentral}) {
    const ProcessGradients g = fd_gradients(eval, {0.4, 0.6}, {0.02, scheme});
    EXPECT_NEAR(g.grad_phi[0], 3.0, 1e-12);
    EXPECT_NEAR(g.grad_phi[1], -2.0, 1e-12);
    EXPECT_NEAR(g.grad_g[1], 0.5, 1e-12);
    EXPECT_FALSE(g.backward_used);
  }
}

TEST(Gradients, FlipsToBackwardAtUpperBound) {
  const auto eval = [](const DecisionVector& z, int) {
    return std::pair<double, double>{z[0] * z[0], z[1]};
  };
  const ProcessGradients g = fd_gradients(eval, {1.0, 0.5}, {0.01, FdScheme::kForward});
  EXPECT_TRUE(g.backward_used);
  EXPECT_NEAR(g.grad_phi[0], (1.0 - 0.99 * 0.99) / 0.01, 1e-12);
}

TEST(Problem, ScalingRoundTrips) {
  const OptimizationSpec spec = Scenario::default_scenario().spec();
  const DecisionVector u{37.0, 0.11};
  EXPECT_LT((spec.from_scaled(spec.to_scaled(u)) - u).norm(), 1e-12);
  EXPECT_EQ(spec.to_scaled(spec.bounds.lower), DecisionVector::Zero());
}

TEST(Optimize, PlantOptimumIsStationaryAndActive) {
  const Scenario s = Scenario::default_scenario();
  const Predictor plant = plant_predictor(s);
  const DecisionVector u{golden::kOracleS0, golden::kOracleF};
  const KKTReport k = kkt_report(u, plant, plant, s.spec());
  EXPECT_TRUE(k.constraint_active);
  EXPECT_LT(k.stationarity_residual, 5e-3);
  EXPECT_NEAR(-k.phi_plant, golden::kOracleMass, 1e-3);
  EXPECT_EQ(k.c1_gap, 0.0);
}

TEST(Optimize, ModelSolutionIsFeasibleAndImproves) {
  const Scenario s = Scenario::uncalibrated();
  const OptimizationSpec spec = s.spec();
  const OutputModel raw = s.raw_model();
  const ParameterVector theta = s.model_nominal.theta;
  const Predictor model = [&](const InputConditions& u) { return raw(theta, u); };
  const DecisionVector start = s.initial.decision();
  const OptimizeResult r = optimize_model(model, spec, start);
  EXPECT_TRUE(r.feasible);
  EXPECT_LE(spec.constraint(r.u), 1e-6);
  EXPECT_TRUE(spec.bounds.contains(r.u));
  EXPECT_LT(r.phi, spec.objective(model(spec.inputs(start)), start));
}

TEST(Algorithms, ZeroMismatchKeepsLedgerEmpty) {
  const Scenario s = load_scenario("zero-mismatch");
  const RunResult r = run_proposed(s, quick(6));
  ASSERT_NE(r.termination, Termination::kFailure) << r.failure;
  EXPECT_LE(r.records.size(), 3u);
  ASSERT_TRUE(r.ledger.has_value());
  EXPECT_LE(r.ledger->max_abs(), 1e-6);
  EXPECT_LT((r.final_u() - r.records.front().u_next).norm(), 1e-3);
}

TEST(Algorithms, TwoStepZeroMismatchConverges) {
  const Scenario s = load_scenario("zero-mismatch");
  const RunResult r = run_two_step(s, quick(6));
  EXPECT_EQ(r.termination, Termination::kStepConverged);
  EXPECT_FALSE(r.ledger.has_value());
}

TEST(Algorithms, FirstMaIterationWithUnitGainUsesRawModifiers) {
  Scenario s = Scenario::uncalibrated();
  RunOptions o = quick(1);
  o.filter_gain = 1.0;
  const RunResult r = run_modifier_adaptation(s, o);
  ASSERT_EQ(r.records.size(), 1u);
  const IterationRecord& rec = r.records[0];
  const ParameterVector theta = s.model_nominal.theta;
  const OutputModel raw = s.raw_model();
  const Predictor model = [&](const InputConditions& u) { return raw(theta, u); };
  const ProcessGradients mg = predicted_gradients(s.spec(), model, rec.u, s.plant_gradients);
  const ModifierSet expected = raw_modifiers(rec.plant_gradients, mg);
  EXPECT_LT((rec.modifiers.stacked() - expected.stacked()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(rec.theta_prime, theta);
}

TEST(Algorithms, SameSeedIsByteIdentical) {
  Scenario s = Scenario::uncalibrated();
  RunOptions o = quick(2, 11);
  o.noise_sigma_rel = 0.02;
  const RunResult a = run_proposed(s, o);
  const RunResult b = run_proposed(s, o);
  EXPECT_EQ(iterations_csv(a), iterations_csv(b));
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  o.seed = 12;
  EXPECT_NE(iterations_csv(run_proposed(s, o)), iterations_csv(a));
}

TEST(Algorithms, StoredBeliefsReproduceKl) {
  Scenario s = Scenario::uncalibrated();
  RunOptions o = quick(3, 5);
  o.noise_sigma_rel = 0.02;
  const RunResult r = run_proposed(s, o);
  ASSERT_GE(r.records.size(), 2u);
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const IterationRecord& rec = r.records[i];
    EXPECT_NEAR(kl_divergence(rec.belief_iden, rec.belief_prime), rec.kl_corr,
                1e-9 * std::max(1.0, rec.kl_corr));
  }
}

TEST(Algorithms, PlantFailureEndsRunWithPartialRecords) {
  const Scenario s = Scenario::uncalibrated();
  const BatchRunner real = simulated_plant_runner(s, 0.0);
  int calls = 0;
  RunSeams seams;
  seams.plant = [&](const DecisionVector& u, std::uint64_t seed) {
    if (++calls > 2) throw std::runtime_error("plant offline");
    return real(u, seed);
  };
  const RunResult r = run_two_step(s, quick(5), seams);
  EXPECT_EQ(r.termination, Termination::kFailure);
  EXPECT_NE(r.failure.find("plant offline"), std::string::npos);
  EXPECT_EQ(r.records.size(), 2u);
}

TEST(Algorithms, NamesRoundTrip) {
  for (Algorithm a : {Algorithm::kProposed, Algorithm::kTwoStep, Algorithm::kModifierAdaptation}) {
    EXPECT_EQ(algorithm_from_string(to_string(a)), a);
  }
  EXPECT_THROW(algorithm_from_string("nonsuch"), std::invalid_argument);
}

TEST(Algorithms, IterationsCsvHeader) {
  const RunResult r = run_two_step(Scenario::uncalibrated(), quick(1));
  const std::string csv = iterations_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "k,S0,F,phi_plant,phi_model,KX,KI,sse,dtheta_iden_norm,dtheta_corr_norm,kl_iden,"
            "kl_corr,stationarity_residual,flags");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}
