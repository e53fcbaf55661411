#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "iafm/error.hpp"
#include "iafm/glmm/design.hpp"
#include "iafm/stats.hpp"

namespace iafm::glmm {

struct ValueAndGradient {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

using Objective = std::function<ValueAndGradient(const Eigen::VectorXd&)>;

struct BfgsOptions {
  double gradient_tol = 1e-6;
  int max_iter = 500;
  double armijo = 1e-4;
  double curvature = 0.9;
  /// Relative change in value below which two values are treated as equal
  /// and a step is judged by its directional derivative instead.
  double flat_tol = 1e-10;
  int max_backtracks = 50;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;  // value at every accepted iterate
};

/// Maximizes an objective by BFGS on the inverse Hessian with a backtracking
/// line search. A trial step is accepted by the Armijo condition, or, when the
/// value change is lost in rounding, by the approximate Wolfe condition of
/// Hager and Zhang on the directional derivative. Trial points whose
/// evaluation fails with InnerDivergence or a non-finite value are shrunk.
inline BfgsResult bfgs_maximize(const Objective& objective, Eigen::VectorXd x,
                                const BfgsOptions& opts = {}) {
  const auto n = x.size();
  BfgsResult res;
  auto cur = objective(x);
  if (!std::isfinite(cur.value))
    throw Error(ErrorCode::InvalidParameter, "objective not finite at the starting point");
  res.trace.push_back(cur.value);

  Eigen::MatrixXd inv_h = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;  // inv_h is a (scaled) identity

  auto try_eval = [&](const Eigen::VectorXd& at) -> std::optional<ValueAndGradient> {
    try {
      auto v = objective(at);
      if (!std::isfinite(v.value) || !v.gradient.allFinite()) return std::nullopt;
      return v;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InnerDivergence) return std::nullopt;
      throw;
    }
  };

  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    if (cur.gradient.norm() < opts.gradient_tol) break;

    Eigen::VectorXd dir = inv_h * cur.gradient;
    double slope = cur.gradient.dot(dir);
    if (!(slope > 0.0)) {
      inv_h.setIdentity();
      fresh = true;
      dir = cur.gradient;
      slope = cur.gradient.squaredNorm();
    }
    // Cap the first move from an identity metric at unit length.
    double alpha = fresh ? std::min(1.0, 1.0 / dir.norm()) : 1.0;

    std::optional<ValueAndGradient> next;
    Eigen::VectorXd x_next;
    for (int bt = 0; bt < opts.max_backtracks; ++bt, alpha *= 0.5) {
      x_next = x + alpha * dir;
      auto trial = try_eval(x_next);
      if (!trial) continue;
      const double gain = trial->value - cur.value;
      const double flat = opts.flat_tol * std::max(1.0, std::abs(cur.value));
      const bool armijo = gain >= opts.armijo * alpha * slope;
      const double dslope = trial->gradient.dot(dir);
      const bool approx_wolfe = std::abs(gain) <= flat &&
                                dslope <= opts.curvature * slope &&
                                dslope >= (2.0 * 0.1 - 1.0) * slope;
      if (armijo || approx_wolfe) {
        next = std::move(trial);
        break;
      }
    }
    if (!next) {
      if (fresh) break;  // no progress even along the gradient
      inv_h.setIdentity();
      fresh = true;
      continue;
    }

    const Eigen::VectorXd s = x_next - x;
    // Ascent on f is descent on -f: y is the change of the gradient of -f.
    const Eigen::VectorXd y = cur.gradient - next->gradient;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) inv_h *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = inv_h * y;
      inv_h += (rho * rho * y.dot(hy) + rho) * s * s.transpose() -
               rho * (hy * s.transpose() + s * hy.transpose());
      fresh = false;
    }
    x = x_next;
    cur = std::move(*next);
    res.trace.push_back(cur.value);
  }

  res.x = x;
  res.value = cur.value;
  res.gradient = cur.gradient;
  res.gradient_norm = cur.gradient.norm();
  res.iterations = iter;
  res.converged = res.gradient_norm < opts.gradient_tol;
  return res;
}

/// Plain logistic regression on the fixed design (random effects ignored),
/// Newton-solved with step halving. A tiny ridge keeps constant or separated
/// columns from making the Hessian singular.
inline Eigen::VectorXd plain_logistic_fit(const DesignMatrices& design, int max_iter = 50,
                                          double tol = 1e-8, double ridge = 1e-8) {
  const auto p = design.n_fixed();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  auto loglik = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = design.fixed * b;
    double ll = -0.5 * ridge * b.squaredNorm();
    for (Eigen::Index i = 0; i < eta.size(); ++i)
      ll += design.response(i) * eta(i) - softplus(eta(i));
    return ll;
  };
  double current = loglik(beta);
  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::VectorXd eta = design.fixed * beta;
    Eigen::VectorXd resid(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double pr = sigmoid(eta(i));
      resid(i) = design.response(i) - pr;
      w(i) = pr * (1.0 - pr);
    }
    const Eigen::VectorXd grad = design.fixed.transpose() * resid - ridge * beta;
    if (grad.norm() < tol) break;
    Eigen::MatrixXd info = design.fixed.transpose() * w.asDiagonal() * design.fixed;
    info.diagonal().array() += ridge;
    const Eigen::VectorXd step = info.ldlt().solve(grad);
    double alpha = 1.0;
    double trial = loglik(beta + step);
    while (!(trial >= current) && alpha > 1e-10) {
      alpha *= 0.5;
      trial = loglik(beta + alpha * step);
    }
    if (!(trial >= current)) break;
    beta += alpha * step;
    current = trial;
  }
  return beta;
}

}  // namespace iafm::glmm
