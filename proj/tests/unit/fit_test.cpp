#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "iafm/error.hpp"
#include "iafm/glmm/fit.hpp"
#include "iafm/glmm/optimizer.hpp"

using namespace iafm;
using namespace iafm::glmm;

namespace {

const FitResult& base_fit() {
  static const FitResult f = [] {
    FitOptions o;
    o.threads = 1;
    return fit(fixtures::small_dataset(60), base_model(), o);
  }();
  return f;
}

}  // namespace

TEST(Bfgs, MaximizesQuadratic) {
  const Objective fn = [](const Eigen::VectorXd& x) {
    const Eigen::Vector2d c(1.0, -2.0);
    Eigen::Matrix2d a;
    a << 3.0, 1.0, 1.0, 2.0;
    const Eigen::VectorXd d = x - c;
    return ValueAndGradient{-0.5 * d.dot(a * d), -(a * d)};
  };
  const auto r = bfgs_maximize(fn, Eigen::VectorXd::Zero(2));
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.x(0), 1.0, 1e-6);
  EXPECT_NEAR(r.x(1), -2.0, 1e-6);
  for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_GE(r.trace[i], r.trace[i - 1]);
}

TEST(Bfgs, NonFiniteStartIsRejected) {
  const Objective fn = [](const Eigen::VectorXd& x) {
    return ValueAndGradient{NAN, Eigen::VectorXd::Zero(x.size())};
  };
  EXPECT_THROW(bfgs_maximize(fn, Eigen::VectorXd::Zero(1)), Error);
}

TEST(Fit, ConvergesWithStationaryInnerModes) {
  const auto& f = base_fit();
  EXPECT_TRUE(f.converged);
  EXPECT_LT(f.gradient_norm, FitOptions{}.outer_tol);
  EXPECT_LT(f.max_inner_gradient_norm, 1e-8);
  EXPECT_TRUE(f.warnings.empty());
  EXPECT_EQ(f.blups.size(), 60u);
  EXPECT_GE(f.covariance.sd_intercept, 0.0);
  EXPECT_GE(f.covariance.sd_slope, 0.0);
  EXPECT_LE(std::abs(f.covariance.rho), 1.0);
}

TEST(Fit, ObjectiveTraceIsMonotone) {
  const auto& tr = base_fit().objective_trace;
  ASSERT_GE(tr.size(), 2u);
  for (std::size_t i = 1; i < tr.size(); ++i)
    EXPECT_GE(tr[i], tr[i - 1] - 1e-10 * std::abs(tr[i - 1])) << i;
  EXPECT_NEAR(tr.back(), base_fit().marginal_loglik, 1e-8 * std::abs(tr.back()));
}

TEST(Fit, RefitIsBitIdenticalAndThreadIndependent) {
  FitOptions o;
  o.threads = 3;
  const auto again = fit(fixtures::small_dataset(60), base_model(), o);
  EXPECT_EQ(to_json(again).dump(), to_json(base_fit()).dump());
}

TEST(Fit, ReportedEffectsDoNotDependOnTScale) {
  FitOptions o;
  o.threads = 1;
  o.t_scale = 0.02;
  const auto& a = base_fit();
  const auto b = fit(fixtures::small_dataset(60), base_model(), o);
  EXPECT_NEAR(a.fixed_effects.theta_pop, b.fixed_effects.theta_pop, 1e-3);
  EXPECT_NEAR(a.fixed_effects.delta_pop, b.fixed_effects.delta_pop, 1e-3);
  EXPECT_NEAR(a.covariance.sd_intercept, b.covariance.sd_intercept, 1e-3);
  EXPECT_NEAR(a.covariance.sd_slope, b.covariance.sd_slope, 1e-3);
  EXPECT_NEAR(a.marginal_loglik, b.marginal_loglik, 1e-3);
}

TEST(Fit, UncorrelatedFitHasZeroRho) {
  FitOptions o;
  o.threads = 1;
  o.random_effects_correlated = false;
  const auto f = fit(fixtures::small_dataset(60), base_model(), o);
  EXPECT_EQ(f.covariance.rho, 0.0);
  EXPECT_EQ(f.internal_parameters.size(), 6 + 2);
  EXPECT_LE(f.marginal_loglik, base_fit().marginal_loglik + 1e-6);
}

TEST(Fit, AllCorrectDataRaisesSeparationWarning) {
  auto d = fixtures::small_dataset(10, 2, 10);
  for (auto& r : d.rows) r.record.correct = true;
  FitOptions o;
  o.threads = 1;
  const auto f = fit(d, base_model(), o);
  EXPECT_TRUE(has_separation_warning(f));
}

TEST(Fit, OptionValidation) {
  const auto d = fixtures::small_dataset(3, 1, 5);
  FitOptions o;
  o.t_scale = 0.0;
  EXPECT_THROW(fit(d, base_model(), o), Error);
  o = {};
  o.outer_tol = -1;
  EXPECT_THROW(fit(d, base_model(), o), Error);
  o = {};
  o.probability_clamp = 0.5;
  EXPECT_THROW(fit(d, base_model(), o), Error);
}

TEST(Fit, IterationCapReportsNotConverged) {
  FitOptions o;
  o.threads = 1;
  o.outer_max_iter = 2;
  const auto f = fit(fixtures::small_dataset(60), base_model(), o);
  EXPECT_FALSE(f.converged);
  ASSERT_FALSE(f.warnings.empty());
  EXPECT_TRUE(f.warnings[0].starts_with("NotConverged"));
}

TEST(Fit, JsonRoundTrip) {
  const auto& f = base_fit();
  const auto back = fit_result_from_json(to_json(f));
  EXPECT_EQ(to_json(back).dump(), to_json(f).dump());
  EXPECT_EQ(back.blups.size(), f.blups.size());
  EXPECT_EQ(back.fixed_effects.beta.size(), 4u);
}

TEST(Fit, FactorEffectsSumToZero) {
  auto p = fixtures::small_params(40, 3, 8);
  p.level_effects = {{"A", {0.2, 0.0}}, {"B", {-0.2, 0.0}}};
  p.subject_effects = {{"Art", {}}, {"Math", {}}, {"Music", {}}};
  FitOptions o;
  o.threads = 1;
  const auto f = fit(synth::generate(p).dataset, model_by_name("m4"), o);
  ASSERT_EQ(f.fixed_effects.factors.size(), 2u);
  for (const auto& fe : f.fixed_effects.factors) {
    double si = 0, ss = 0;
    for (std::size_t j = 0; j < fe.levels.size(); ++j) {
      si += fe.intercept[j];
      ss += fe.slope[j];
    }
    EXPECT_NEAR(si, 0.0, 1e-12);
    EXPECT_NEAR(ss, 0.0, 1e-12);
  }
  const auto back = fit_result_from_json(to_json(f));
  EXPECT_EQ(to_json(back).dump(), to_json(f).dump());
}

TEST(Predict, LinearPredictorByHand) {
  FitResult f;
  f.fixed_effects.theta_pop = 0.5;
  f.fixed_effects.delta_pop = 0.1;
  f.fixed_effects.gamma = 0.3;
  f.fixed_effects.beta = {{ExerciseType::MultipleChoice, -0.2}};
  f.fixed_effects.factors.push_back({Factor::Level, {"A", "B"}, {0.05, -0.05}, {0.01, -0.01}});
  f.blups = {{"s1", 0.4, 0.02}};
  OpportunityRow row;
  row.record.student_id = "s1";
  row.record.level = "B";
  row.record.simplified = true;
  row.opportunity_index = 3;
  const double expected_pop = 0.5 + 0.1 * 3 + 0.3 - 0.2 - 0.05 - 0.01 * 3;
  EXPECT_NEAR(linear_predictor(f, row, false), expected_pop, 1e-15);
  EXPECT_NEAR(linear_predictor(f, row, true), expected_pop + 0.4 + 0.02 * 3, 1e-15);
  EXPECT_NEAR(predict_prob(f, row, false), 1.0 / (1.0 + std::exp(-expected_pop)), 1e-15);
  row.record.student_id = "nobody";
  EXPECT_THROW(linear_predictor(f, row, true), Error);
  row.record.level = "C";
  EXPECT_THROW(linear_predictor(f, row, false), Error);
}
