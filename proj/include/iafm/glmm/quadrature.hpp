#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "iafm/error.hpp"
#include "iafm/glmm/covariance.hpp"
#include "iafm/glmm/design.hpp"
#include "iafm/glmm/laplace.hpp"

namespace iafm::glmm {

struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;  // for the weight function exp(-x^2)
};

/// Gauss-Hermite nodes by Newton iteration on the orthonormal Hermite
/// recurrence, with the usual asymptotic starting guesses.
inline GaussHermiteRule gauss_hermite(int n) {
  if (n < 1) throw Error(ErrorCode::InvalidParameter, "need at least one node");
  constexpr double kPiM4 = 0.7511255444649425;  // pi^(-1/4)
  GaussHermiteRule rule;
  rule.nodes.assign(static_cast<std::size_t>(n), 0.0);
  rule.weights.assign(static_cast<std::size_t>(n), 0.0);
  auto& x = rule.nodes;
  auto& w = rule.weights;
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0)
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    else if (i == 1)
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    else if (i == 2)
      z = 1.86 * z - 0.86 * x[0];
    else if (i == 3)
      z = 1.91 * z - 0.91 * x[1];
    else
      z = 2.0 * z - x[static_cast<std::size_t>(i - 2)];
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = kPiM4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 3e-14) break;
    }
    x[static_cast<std::size_t>(i)] = z;
    x[static_cast<std::size_t>(n - 1 - i)] = -z;
    w[static_cast<std::size_t>(i)] = 2.0 / (pp * pp);
    w[static_cast<std::size_t>(n - 1 - i)] = w[static_cast<std::size_t>(i)];
  }
  return rule;
}

/// Student-wise adaptive Gauss-Hermite integral of the joint density in
/// whitened coordinates, centred at each inner mode and scaled by the
/// Cholesky factor of the inverse negative Hessian. Test oracle for the
/// Laplace objective.
inline double loglik_reference_quadrature(const Eigen::VectorXd& beta,
                                          const CovarianceFactor& factor,
                                          const DesignMatrices& design,
                                          int nodes_per_dim,
                                          std::size_t max_students = 50,
                                          const InnerSettings& settings = {}) {
  if (design.blocks.size() > max_students)
    throw Error(ErrorCode::OracleTooLarge,
                std::to_string(design.blocks.size()) + " students exceed the cap of " +
                    std::to_string(max_students));
  const auto rule = gauss_hermite(nodes_per_dim);
  const Eigen::VectorXd offset = design.fixed * beta;
  const Mat2 l = factor.matrix();

  double total = 0.0;
  std::vector<double> terms;
  terms.reserve(rule.nodes.size() * rule.nodes.size());
  for (const auto& blk : design.blocks) {
    const BlockData block{offset.segment(blk.begin, blk.size()),
                          design.t_scaled.segment(blk.begin, blk.size()),
                          design.response.segment(blk.begin, blk.size())};
    const auto m = detail::whitened_mode(block, l, settings, Vec2::Zero());
    const Mat2 scale = detail::inverse2(m.neg_hessian).llt().matrixL();
    terms.clear();
    for (std::size_t j = 0; j < rule.nodes.size(); ++j) {
      for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
        const Vec2 zeta(rule.nodes[j], rule.nodes[k]);
        const Vec2 u = m.mode + std::numbers::sqrt2 * (scale * zeta);
        const double f = detail::evaluate_block(block, l, u).f;
        terms.push_back(std::log(rule.weights[j] * rule.weights[k]) + zeta.squaredNorm() + f);
      }
    }
    const double top = *std::max_element(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - top);
    // |det(sqrt(2) S)| = 2 |det S|
    total += top + std::log(acc) + std::log(2.0 * scale(0, 0) * scale(1, 1));
  }
  return total;
}

inline double loglik_reference_quadrature(const Eigen::VectorXd& beta,
                                          const CovarianceParams& cov,
                                          const DesignMatrices& design,
                                          int nodes_per_dim,
                                          std::size_t max_students = 50,
                                          const InnerSettings& settings = {}) {
  return loglik_reference_quadrature(beta, CovarianceFactor::from(cov), design, nodes_per_dim,
                                     max_students, settings);
}

}  // namespace iafm::glmm
