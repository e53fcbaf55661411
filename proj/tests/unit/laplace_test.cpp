#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "iafm/error.hpp"
#include "iafm/glmm/laplace.hpp"
#include "iafm/glmm/optimizer.hpp"
#include "oracles/oracles.hpp"

using namespace iafm;
using namespace iafm::glmm;

namespace {

CovarianceParams cov_of(double sd0, double sd1, double rho) {
  return {std::log(sd0), std::log(sd1), std::atanh(rho)};
}

// One student, one intercept column.
DesignMatrices single_row_design(double y) {
  DesignMatrices dm;
  dm.fixed = RowMatrix::Ones(1, 1);
  dm.column_names = {"intercept"};
  dm.t_scaled = Eigen::VectorXd::Zero(1);
  dm.response = Eigen::VectorXd::Constant(1, y);
  dm.blocks = {{"s", 0, 1}};
  return dm;
}

}  // namespace

TEST(InnerMode, MatchesGridSearch) {
  for (const auto& [sd0, sd1, rho] : {std::array{0.5, 1.0, 0.3}, std::array{1.2, 2.0, -0.6},
                                      std::array{0.3, 0.5, 0.0}}) {
    const auto rows = fixtures::mixed_rows(30);
    const fixtures::Block block(rows);
    const auto cov = cov_of(sd0, sd1, rho);
    const auto m = inner_mode(block.data(), cov);
    const auto grid = oracle::grid_search_mode(rows, cov);
    EXPECT_NEAR(m.mode(0), grid(0), 2e-3);
    EXPECT_NEAR(m.mode(1), grid(1), 2e-3);
    EXPECT_LT(m.gradient_norm, 1e-10);
    EXPECT_NEAR(m.joint_log_density, oracle::joint_log_density(rows, m.mode(0), m.mode(1), cov), 1e-9);
  }
}

TEST(InnerMode, NegativeHessianMatchesFiniteDifferences) {
  const auto rows = fixtures::mixed_rows(25);
  const fixtures::Block block(rows);
  const auto cov = cov_of(0.7, 1.5, 0.4);
  const auto m = inner_mode(block.data(), cov);
  const double h = 1e-4;
  auto f = [&](double b0, double b1) { return oracle::joint_log_density(rows, b0, b1, cov); };
  const double b0 = m.mode(0), b1 = m.mode(1);
  const double f00 = (f(b0 + h, b1) - 2 * f(b0, b1) + f(b0 - h, b1)) / (h * h);
  const double f11 = (f(b0, b1 + h) - 2 * f(b0, b1) + f(b0, b1 - h)) / (h * h);
  const double f01 =
      (f(b0 + h, b1 + h) - f(b0 + h, b1 - h) - f(b0 - h, b1 + h) + f(b0 - h, b1 - h)) / (4 * h * h);
  EXPECT_NEAR(m.neg_hessian(0, 0), -f00, 1e-4);
  EXPECT_NEAR(m.neg_hessian(1, 1), -f11, 1e-4);
  EXPECT_NEAR(m.neg_hessian(0, 1), -f01, 1e-4);
}

TEST(InnerMode, NoRowsGivesPriorMode) {
  const fixtures::Block block({});
  const auto cov = cov_of(0.5, 2.0, 0.5);
  const auto m = inner_mode(block.data(), cov);
  EXPECT_EQ(m.mode, Vec2::Zero());
  EXPECT_TRUE(m.neg_hessian.isApprox(cov.precision(), 1e-12));
}

TEST(InnerMode, ShrinkageGrowsWeakerWithMoreData) {
  const auto cov = cov_of(0.5, 0.5, 0.0);
  const fixtures::Block one({{0.0, 0.0, 1.0}});
  std::vector<std::array<double, 3>> many(30, {0.0, 0.0, 1.0});
  for (std::size_t i = 0; i < many.size(); i += 3) many[i][2] = 0.0;
  const fixtures::Block thirty(many);
  const double m1 = inner_mode(one.data(), cov).mode(0);
  const double m30 = inner_mode(thirty.data(), cov).mode(0);
  // Unpenalized intercept of the 30-row block is logit(2/3).
  EXPECT_GT(m1, 0.0);
  EXPECT_GT(m30, m1);
  EXPECT_LT(m30, std::log(2.0));
}

TEST(InnerMode, IterationCapRaisesInnerDivergence) {
  const fixtures::Block block(fixtures::mixed_rows(10));
  InnerSettings s;
  s.max_iter = 1;
  s.tol = 1e-14;
  try {
    inner_mode(block.data(), cov_of(3.0, 3.0, 0.0), s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InnerDivergence);
  }
}

TEST(LaplaceObjective, NoStudentsIsZero) {
  DesignMatrices dm;
  dm.fixed = RowMatrix::Zero(0, 2);
  dm.t_scaled.resize(0);
  dm.response.resize(0);
  const auto v = laplace_marginal_loglik(Eigen::VectorXd::Zero(2), cov_of(1, 1, 0), dm);
  EXPECT_EQ(v.value, 0.0);
  EXPECT_EQ(v.gradient, Eigen::VectorXd::Zero(5));
}

TEST(LaplaceObjective, SingleFairCoinRow) {
  const auto dm = single_row_design(1.0);
  const auto v = laplace_marginal_loglik(Eigen::VectorXd::Zero(1), cov_of(1e-4, 1e-4, 0), dm);
  EXPECT_NEAR(v.value, std::log(0.5), 1e-4);
}

TEST(LaplaceObjective, DegeneratePriorEqualsPlainLogistic) {
  const auto d = fixtures::small_dataset(6, 3, 10);
  const auto dm = build_design(d, base_model(), 0.01);
  const Eigen::VectorXd beta = plain_logistic_fit(dm);
  LaplaceObjective obj(dm);
  const auto v = obj.evaluate(beta, CovarianceFactor{0.0, 0.0, 0.0});
  EXPECT_NEAR(v.value, oracle::plain_logistic_loglik(dm, beta), 1e-9);
}

TEST(LaplaceObjective, GradientMatchesCentralDifferences) {
  const auto d = fixtures::small_dataset(8, 3, 10);
  const auto dm = build_design(d, base_model(), 0.01);
  const auto p = dm.n_fixed();
  Eigen::VectorXd beta = plain_logistic_fit(dm);
  beta(0) += 0.1;
  beta(1) -= 0.3;
  const auto cov = cov_of(0.6, 1.4, 0.35);

  Eigen::VectorXd x(p + 3);
  x << beta, cov.log_sd_intercept, cov.log_sd_slope, cov.atanh_correlation;
  auto value = [&](const Eigen::VectorXd& z) {
    return laplace_marginal_loglik(z.head(p), CovarianceParams{z(p), z(p + 1), z(p + 2)}, dm).value;
  };
  const auto analytic = laplace_marginal_loglik(beta, cov, dm).gradient;
  const auto numeric = oracle::central_difference(value, x, 1e-5);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    EXPECT_LT(std::abs(analytic(i) - numeric(i)), 1e-5 * std::max(1.0, std::abs(numeric(i))))
        << "coordinate " << i << ": " << analytic(i) << " vs " << numeric(i);

  // Factor coordinates, including a point with a zero entry.
  for (const CovarianceFactor f : {CovarianceFactor::from(cov), CovarianceFactor{0.5, 0.0, 0.8},
                                   CovarianceFactor{0.4, -0.3, 0.0}}) {
    Eigen::VectorXd y(p + 3);
    y << beta, f.l00, f.l10, f.l11;
    auto fv = [&](const Eigen::VectorXd& z) {
      LaplaceObjective obj(dm);
      return obj.evaluate(z.head(p), CovarianceFactor{z(p), z(p + 1), z(p + 2)}, false).value;
    };
    LaplaceObjective obj(dm);
    const auto g = obj.evaluate(beta, f).gradient;
    const auto n = oracle::central_difference(fv, y, 1e-5);
    for (Eigen::Index i = 0; i < y.size(); ++i)
      EXPECT_LT(std::abs(g(i) - n(i)), 1e-5 * std::max(1.0, std::abs(n(i))))
          << "factor coordinate " << i << ": " << g(i) << " vs " << n(i);
  }
}

TEST(LaplaceObjective, ThreadCountDoesNotChangeResult) {
  const auto d = fixtures::small_dataset(9, 3, 10);
  const auto dm = build_design(d, base_model(), 0.01);
  const Eigen::VectorXd beta = plain_logistic_fit(dm);
  const auto cov = cov_of(0.5, 1.0, 0.2);
  const auto a = laplace_marginal_loglik(beta, cov, dm, {}, 1);
  const auto b = laplace_marginal_loglik(beta, cov, dm, {}, 4);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.gradient, b.gradient);
}
