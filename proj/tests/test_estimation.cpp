#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <gtest/gtest.h>

#include "golden.hpp"
#include "r2r/rto.hpp"
#include "r2r/scenario.hpp"

using namespace r2r;

namespace {

GaussianBelief belief(Eigen::Vector2d m, Eigen::Matrix2d c) {
  GaussianBelief b;
  b.mean = m;
  b.covariance = c;
  return b;
}

Eigen::Matrix2d random_spd(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Eigen::Matrix2d a;
  a << d(rng), d(rng), d(rng), d(rng);
  return a * a.transpose() + 0.05 * Eigen::Matrix2d::Identity();
}

}  // namespace

TEST(KL, NonNegativeOnRandomPairs) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const GaussianBelief p = belief({n(rng), n(rng)}, random_spd(rng));
    const GaussianBelief q = belief({n(rng), n(rng)}, random_spd(rng));
    EXPECT_GE(kl_divergence(p, q), -1e-12);
  }
}

TEST(KL, ZeroForIdenticalBeliefs) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const GaussianBelief p = belief({0.3, -1.0}, random_spd(rng));
    EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-12);
  }
}

TEST(KL, MatchesClosedFormForDiagonalCase) {
  const GaussianBelief p = belief({1.0, 0.0}, Eigen::Vector2d(2.0, 0.5).asDiagonal());
  const GaussianBelief q = belief({0.0, 1.0}, Eigen::Vector2d(1.0, 1.0).asDiagonal());
  // 0.5 * (tr + mahalanobis - k + ln det q / det p)
  const double expected = 0.5 * (2.5 + 2.0 - 2.0 + std::log(1.0 / 1.0));
  EXPECT_NEAR(kl_divergence(p, q), expected, 1e-14);
}

TEST(KL, RejectsIndefiniteCovariance) {
  Eigen::Matrix2d bad;
  bad << 1.0, 2.0, 2.0, 1.0;
  const GaussianBelief ok = belief({0, 0}, Eigen::Matrix2d::Identity());
  EXPECT_THROW(kl_divergence(belief({0, 0}, bad), ok), std::invalid_argument);
  EXPECT_THROW(kl_divergence(ok, belief({0, 0}, bad)), std::invalid_argument);
}

TEST(Laplace, CovarianceFromJacobian) {
  Eigen::MatrixXd J(4, 2);
  J << 1, 0, 0, 1, 1, 1, 2, -1;
  const double sse = 0.8;
  const GaussianBelief b = laplace_from_jacobian({0.1, 0.2}, J, sse);
  const Eigen::Matrix2d expected = (sse / 2.0) * (J.transpose() * J).inverse();
  EXPECT_LT((b.covariance - expected).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_FALSE(b.regularized);
}

TEST(Laplace, RegularizesSingularCovariance) {
  Eigen::Matrix2d c;
  c << 1.0, 1.0, 1.0, 1.0;
  EXPECT_TRUE(regularize_covariance(c));
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(c);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  Eigen::Matrix2d fine = Eigen::Matrix2d::Identity();
  EXPECT_FALSE(regularize_covariance(fine));
}

TEST(Weights, ScaledAndUnweighted) {
  const OutputScales s{2.0, 4.0, 8.0};
  const Eigen::VectorXd w = residual_weights(s, 2, ResidualWeighting::kScaled);
  ASSERT_EQ(w.size(), 6);
  EXPECT_DOUBLE_EQ(w[0], 0.5);
  EXPECT_DOUBLE_EQ(w[4], 0.25);
  EXPECT_DOUBLE_EQ(w[5], 0.125);
  EXPECT_EQ(residual_weights(s, 2, ResidualWeighting::kUnweighted), Eigen::VectorXd::Ones(6));
}

TEST(Bounds, AroundAndContains) {
  const ParameterBox b = ParameterBox::around({0.15, 0.1});
  EXPECT_DOUBLE_EQ(b.lower[kKX], 0.2 * 0.15);
  EXPECT_DOUBLE_EQ(b.upper[kKI], 0.5);
  EXPECT_TRUE(b.contains({0.15, 0.1}));
  EXPECT_FALSE(b.contains({0.8, 0.1}));
}

TEST(Identify, NominalFitAtInitialInputs) {
  Scenario s = Scenario::default_scenario();
  const MeasurementSet m = simulated_plant_runner(s, 0.0)(s.initial.decision(), 0).measurements;
  FitOptions opts = s.fit;
  opts.starts = 20;
  const FitResult fit = identify(m, s.initial, s.raw_model(), {0.15, 0.1}, opts);
  EXPECT_NEAR(fit.theta_hat[kKX], golden::kNominalKX, 1e-5);
  EXPECT_NEAR(fit.theta_hat[kKI], golden::kNominalKI, 1e-7);
  EXPECT_NEAR(s.model_nominal.theta[kKX], golden::kNominalKX, 1e-12);
}

TEST(Identify, RecoversParametersFromOwnOutputs) {
  const Scenario s = Scenario::uncalibrated();
  const OutputModel model = s.raw_model();
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> lg(std::log(0.5), std::log(2.0));
  for (int trial = 0; trial < 5; ++trial) {
    const ParameterVector truth{0.15 * std::exp(lg(rng)), 0.1 * std::exp(lg(rng))};
    const Eigen::VectorXd y = model(truth, s.initial);
    MeasurementSet m;
    const std::vector<double> t = s.schedule.times(s.initial, s.integrator.grid_step);
    for (std::size_t i = 0; i < t.size(); ++i) {
      m.sample_grid.push_back(t[i]);
      m.y_m.push_back({y[3 * i], y[3 * i + 1], y[3 * i + 2]});
    }
    const FitResult fit = identify(m, s.initial, model, s.model_nominal.theta, s.fit);
    EXPECT_NEAR(fit.theta_hat[kKX], truth[kKX], 1e-5 * truth[kKX]) << trial;
    EXPECT_NEAR(fit.theta_hat[kKI], truth[kKI], 1e-5 * truth[kKI]) << trial;
    EXPECT_LT(fit.sse, 1e-12);
  }
}

TEST(Identify, ConstantShiftIsInvisibleToFit) {
  const Scenario s = Scenario::uncalibrated();
  const OutputModel raw = s.raw_model();
  const ParameterVector truth{0.2, 0.05};
  const Eigen::VectorXd y = raw(truth, s.initial);
  const Eigen::VectorXd shift = Eigen::VectorXd::Constant(y.size(), 0.01);
  MeasurementSet m;
  const std::vector<double> t = s.schedule.times(s.initial, s.integrator.grid_step);
  for (std::size_t i = 0; i < t.size(); ++i) {
    m.sample_grid.push_back(t[i]);
    m.y_m.push_back({y[3 * i] - shift[3 * i], y[3 * i + 1] - shift[3 * i + 1],
                     y[3 * i + 2] - shift[3 * i + 2]});
  }
  const FitResult fit =
      identify(m, s.initial, corrected_output_model(raw, shift), s.model_nominal.theta, s.fit);
  EXPECT_NEAR(fit.theta_hat[kKX], truth[kKX], 1e-5 * truth[kKX]);
  EXPECT_NEAR(fit.theta_hat[kKI], truth[kKI], 1e-5 * truth[kKI]);
}

TEST(Identify, NoisyFitHasPositiveDefiniteCovariance) {
  const Scenario s = Scenario::default_scenario();
  const MeasurementSet m = simulated_plant_runner(s, 0.02)(s.initial.decision(), 4).measurements;
  const FitResult fit = identify(m, s.initial, s.raw_model(), s.model_nominal.theta, s.fit);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(fit.belief.covariance);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  EXPECT_TRUE(s.fit.bounds.contains(fit.theta_hat));
  EXPECT_EQ(fit.belief.mean, fit.theta_hat);
}

TEST(Identify, RejectsStartOutsideBounds) {
  const Scenario s = Scenario::uncalibrated();
  const MeasurementSet m = simulated_plant_runner(s, 0.0)(s.initial.decision(), 0).measurements;
  EXPECT_THROW(identify(m, s.initial, s.raw_model(), {5.0, 5.0}, s.fit), std::invalid_argument);
}
