#include <array>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "iafm/error.hpp"
#include "iafm/glmm/laplace.hpp"
#include "iafm/glmm/optimizer.hpp"
#include "iafm/glmm/quadrature.hpp"
#include "oracles/oracles.hpp"

using namespace iafm;
using namespace iafm::glmm;

TEST(GaussHermite, IntegratesPolynomialsExactly) {
  const auto rule = gauss_hermite(10);
  // Weight exp(-x^2): moments sqrt(pi), 0, sqrt(pi)/2, 0, 3 sqrt(pi)/4.
  const double sqrt_pi = std::sqrt(M_PI);
  double m0 = 0, m1 = 0, m2 = 0, m4 = 0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double x = rule.nodes[i], w = rule.weights[i];
    m0 += w;
    m1 += w * x;
    m2 += w * x * x;
    m4 += w * x * x * x * x;
  }
  EXPECT_NEAR(m0, sqrt_pi, 1e-12);
  EXPECT_NEAR(m1, 0.0, 1e-12);
  EXPECT_NEAR(m2, sqrt_pi / 2, 1e-12);
  EXPECT_NEAR(m4, 3 * sqrt_pi / 4, 1e-12);
}

TEST(Quadrature, DegeneratePriorEqualsPlainLogistic) {
  const auto d = fixtures::small_dataset(5, 3, 10);
  const auto dm = build_design(d, base_model(), 0.01);
  const Eigen::VectorXd beta = plain_logistic_fit(dm);
  const CovarianceParams tiny{std::log(1e-7), std::log(1e-7), 0.0};
  EXPECT_NEAR(loglik_reference_quadrature(beta, tiny, dm, 20),
              oracle::plain_logistic_loglik(dm, beta), 1e-6);
}

TEST(Quadrature, NodeCountConverged) {
  const auto d = fixtures::small_dataset(5, 3, 10);
  const auto dm = build_design(d, base_model(), 0.01);
  const Eigen::VectorXd beta = plain_logistic_fit(dm);
  const CovarianceParams cov{std::log(0.8), std::log(2.0), std::atanh(0.3)};
  EXPECT_NEAR(loglik_reference_quadrature(beta, cov, dm, 20),
              loglik_reference_quadrature(beta, cov, dm, 50), 1e-6);
}

TEST(Quadrature, MatchesGridIntegralForOneStudent) {
  const auto d = fixtures::small_dataset(1, 2, 10, 101);
  const auto dm = build_design(d, base_model(), 0.01);
  const Eigen::VectorXd beta = plain_logistic_fit(dm);
  const CovarianceParams cov{std::log(0.461), std::log(1.21), std::atanh(0.3)};
  const Eigen::VectorXd off = dm.fixed * beta;
  std::vector<std::array<double, 3>> rows;
  for (Eigen::Index i = 0; i < off.size(); ++i) rows.push_back({off(i), dm.t_scaled(i), dm.response(i)});
  // Riemann sum of the joint density over a box holding all but ~1e-12 of the mass.
  const double h = 0.004;
  std::vector<double> f;
  double top = -INFINITY;
  for (int i = 0; i <= 2000; ++i)
    for (int j = 0; j <= 4000; ++j) {
      f.push_back(oracle::joint_log_density(rows, -4 + i * h, -8 + j * h, cov));
      top = std::max(top, f.back());
    }
  double acc = 0.0;
  for (double v : f) acc += std::exp(v - top);
  const double grid = top + std::log(acc * h * h);
  EXPECT_NEAR(loglik_reference_quadrature(beta, cov, dm, 50), grid, 1e-6);
}

TEST(Quadrature, LaplaceIsCloseForModerateEffects) {
  const auto d = fixtures::small_dataset(5, 10, 10);
  const auto dm = build_design(d, base_model(), 0.01);
  const Eigen::VectorXd beta = plain_logistic_fit(dm);
  const CovarianceParams cov{std::log(0.15), std::log(0.3), std::atanh(0.2)};
  const double quad = loglik_reference_quadrature(beta, cov, dm, 30);
  const double lap = laplace_marginal_loglik(beta, cov, dm).value;
  EXPECT_LT(std::abs(quad - lap), 1e-3 * std::abs(quad));
}

TEST(Quadrature, TooManyStudents) {
  const auto d = fixtures::small_dataset(51, 1, 5);
  const auto dm = build_design(d, base_model(), 0.01);
  try {
    loglik_reference_quadrature(Eigen::VectorXd::Zero(dm.n_fixed()), CovarianceParams{}, dm, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OracleTooLarge);
  }
}
