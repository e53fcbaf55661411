#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "iafm/error.hpp"
#include "iafm/glmm/covariance.hpp"
#include "iafm/glmm/design.hpp"
#include "iafm/parallel.hpp"
#include "iafm/stats.hpp"

namespace iafm::glmm {

struct InnerSettings {
  double tol = 1e-10;
  int max_iter = 50;
};

/// Rows of one student: fixed-part linear predictor, scaled opportunity, and
/// response.
struct BlockData {
  Eigen::Ref<const Eigen::VectorXd> offset;
  Eigen::Ref<const Eigen::VectorXd> t_scaled;
  Eigen::Ref<const Eigen::VectorXd> response;
};

struct InnerMode {
  Vec2 mode = Vec2::Zero();
  Mat2 neg_hessian = Mat2::Identity();
  double joint_log_density = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
};

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

struct BlockEval {
  double f = 0.0;
  Vec2 grad = Vec2::Zero();
  Mat2 neg_hess = Mat2::Zero();
};

// Joint log-density in whitened coordinates b = L u, u ~ N(0, I): Bernoulli
// log-likelihood plus the standard normal log-density of u.
inline BlockEval evaluate_block(const BlockData& block, const Mat2& l, const Vec2& u) {
  BlockEval e;
  const Vec2 b = l * u;
  double loglik = 0.0;
  Vec2 score = Vec2::Zero();  // over b
  double h00 = 0.0, h01 = 0.0, h11 = 0.0;
  for (Eigen::Index i = 0; i < block.offset.size(); ++i) {
    const double t = block.t_scaled(i);
    const double eta = block.offset(i) + b(0) + b(1) * t;
    const double y = block.response(i);
    loglik += y * eta - softplus(eta);
    const double p = sigmoid(eta);
    const double w = p * (1.0 - p);
    score(0) += y - p;
    score(1) += (y - p) * t;
    h00 += w;
    h01 += w * t;
    h11 += w * t * t;
  }
  Mat2 zwz;
  zwz << h00, h01, h01, h11;
  e.f = loglik - 0.5 * u.squaredNorm() - kLog2Pi;
  e.grad = l.transpose() * score - u;
  e.neg_hess = l.transpose() * zwz * l + Mat2::Identity();
  return e;
}

inline Mat2 inverse2(const Mat2& m) {
  const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  Mat2 inv;
  inv << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
  return inv / det;
}

inline double log_det2(const Mat2& m) {
  return std::log(m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0));
}

// Newton with step halving on the whitened block density. The negative
// Hessian is at least the identity, so every step is well defined even when
// L is singular.
inline InnerMode whitened_mode(const BlockData& block, const Mat2& l,
                               const InnerSettings& settings, const Vec2& start) {
  Vec2 u = start;
  auto e = evaluate_block(block, l, u);
  InnerMode out;
  for (int iter = 0;; ++iter) {
    const double gnorm = e.grad.norm();
    if (gnorm < settings.tol) {
      out.iterations = iter;
      out.gradient_norm = gnorm;
      break;
    }
    if (iter >= settings.max_iter)
      throw Error(ErrorCode::InnerDivergence,
                  "no inner convergence after " + std::to_string(iter) +
                      " iterations (gradient norm " + std::to_string(gnorm) + ")");
    const Vec2 step = inverse2(e.neg_hess) * e.grad;
    const double decrement = step.dot(e.grad);
    double alpha = 1.0;
    auto trial = evaluate_block(block, l, u + step);
    // Close to the mode the change in f is below rounding and cannot judge
    // a step; the pure Newton step is taken.
    const bool local = decrement < 1e-8;
    while (!local && !(trial.f >= e.f) && alpha > 1e-10) {
      alpha *= 0.5;
      trial = evaluate_block(block, l, u + alpha * step);
    }
    if (!local && !(trial.f >= e.f))
      throw Error(ErrorCode::InnerDivergence, "inner line search failed (Newton decrement " +
                                                  std::to_string(decrement) + ")");
    u += alpha * step;
    e = trial;
  }
  out.mode = u;
  out.neg_hessian = e.neg_hess;
  out.joint_log_density = e.f;
  return out;
}

}  // namespace detail

/// Posterior mode of one student's (theta_s, delta_s) by Newton iterations
/// with step halving, returned with the negative Hessian of the joint
/// log-density in the same coordinates. Throws InnerDivergence after
/// max_iter iterations or when no step improves the density.
inline InnerMode inner_mode(const BlockData& block, const CovarianceParams& cov,
                            const InnerSettings& settings = {},
                            const Vec2& start = Vec2::Zero()) {
  const Mat2 l = cov.cholesky();
  const Mat2 l_inv = detail::inverse2(l);
  const auto m = detail::whitened_mode(block, l, settings, l_inv * start);
  InnerMode out = m;
  out.mode = l * m.mode;
  out.neg_hessian = l_inv.transpose() * m.neg_hessian * l_inv;
  out.joint_log_density = m.joint_log_density - 0.5 * cov.log_det();
  return out;
}

/// Value and gradient of the Laplace-approximated marginal log-likelihood.
struct LaplaceValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

/// Evaluates the objective over all student blocks. Inner modes from the last
/// call are kept per student and used as Newton starting points.
class LaplaceObjective {
 public:
  explicit LaplaceObjective(const DesignMatrices& design, InnerSettings settings = {},
                            unsigned threads = 1)
      : design_(design), settings_(settings), threads_(threads),
        modes_(design.blocks.size()) {}

  /// Gradient ordered [fixed effects..., l00, l10, l11].
  LaplaceValue evaluate(const Eigen::VectorXd& beta, const CovarianceFactor& factor,
                        bool with_gradient = true) {
    const auto p = design_.n_fixed();
    const auto n_students = design_.blocks.size();
    const Eigen::VectorXd offset = design_.fixed * beta;
    const Mat2 l = factor.matrix();
    last_factor_ = l;

    std::vector<double> values(n_students, 0.0);
    std::vector<Eigen::Vector3d> factor_grads(n_students, Eigen::Vector3d::Zero());
    Eigen::VectorXd row_weight = Eigen::VectorXd::Zero(design_.n_rows());

    parallel_for(n_students, threads_, [&](std::size_t s) {
      const auto& blk = design_.blocks[s];
      const BlockData block{offset.segment(blk.begin, blk.size()),
                            design_.t_scaled.segment(blk.begin, blk.size()),
                            design_.response.segment(blk.begin, blk.size())};
      InnerMode m;
      try {
        m = detail::whitened_mode(block, l, settings_, modes_[s].mode);
      } catch (const Error& e) {
        throw Error(e.code(), "student '" + blk.student_id + "': " + e.detail());
      }
      modes_[s] = m;
      values[s] = m.joint_log_density + detail::kLog2Pi - 0.5 * detail::log_det2(m.neg_hessian);
      if (!with_gradient) return;

      // Derivatives through the mode: with g_i = L' z_i and
      // c_i = w'_i g_i' H^-1 g_i (sensitivity of log det H to eta_i),
      // d(value)/d(eta_i) = y_i - p_i - c_i/2 + w_i (H^-1 U . g_i)/2.
      const Mat2 hinv = detail::inverse2(m.neg_hessian);
      const Vec2& u = m.mode;
      const Vec2 b = l * u;
      const auto n = static_cast<std::size_t>(blk.size());
      std::vector<double> resid(n), w(n), c(n);
      std::vector<Vec2> g(n), hg(n);
      Vec2 big_u = Vec2::Zero();
      for (std::size_t k = 0; k < n; ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        const double t = block.t_scaled(i);
        const double p_i = sigmoid(block.offset(i) + b(0) + b(1) * t);
        w[k] = p_i * (1.0 - p_i);
        resid[k] = block.response(i) - p_i;
        g[k] = l.transpose() * Vec2(1.0, t);
        hg[k] = hinv * g[k];
        c[k] = w[k] * (1.0 - 2.0 * p_i) * g[k].dot(hg[k]);
        big_u += c[k] * g[k];
      }
      const Vec2 v = hinv * big_u;
      for (std::size_t k = 0; k < n; ++k)
        row_weight(blk.begin + static_cast<Eigen::Index>(k)) =
            resid[k] - 0.5 * c[k] + 0.5 * w[k] * v.dot(g[k]);

      // Entry (a, b) of L moves eta_i by z_ia u_b and g_i by z_ia e_b.
      constexpr int kEntries[3][2] = {{0, 0}, {1, 0}, {1, 1}};
      for (int e = 0; e < 3; ++e) {
        const int ra = kEntries[e][0], cb = kEntries[e][1];
        double direct = 0.0, logdet_direct = 0.0, cross = 0.0;
        Vec2 q = Vec2::Zero();
        for (std::size_t k = 0; k < n; ++k) {
          const double za = ra == 0 ? 1.0 : block.t_scaled(static_cast<Eigen::Index>(k));
          const double deta = za * u(cb);
          direct += resid[k] * deta;
          logdet_direct += c[k] * deta;
          cross += w[k] * za * hg[k](cb);
          q -= w[k] * deta * g[k];
          q(cb) += resid[k] * za;
        }
        const Vec2 du = hinv * q;
        factor_grads[s](e) = direct - 0.5 * (logdet_direct + big_u.dot(du)) - cross;
      }
    });

    LaplaceValue out;
    for (double v : values) out.value += v;
    if (with_gradient) {
      out.gradient.resize(p + 3);
      out.gradient.head(p) = design_.fixed.transpose() * row_weight;
      Eigen::Vector3d g = Eigen::Vector3d::Zero();
      for (const auto& fg : factor_grads) g += fg;
      out.gradient.tail(3) = g;
    }
    return out;
  }

  /// Gradient ordered [fixed effects..., log sd intercept, log sd slope,
  /// atanh correlation].
  LaplaceValue evaluate(const Eigen::VectorXd& beta, const CovarianceParams& cov,
                        bool with_gradient = true) {
    auto v = evaluate(beta, CovarianceFactor::from(cov), with_gradient);
    if (!with_gradient) return v;
    const auto p = design_.n_fixed();
    const Eigen::Vector3d g_factor = v.gradient.tail(3);
    const auto dl = cov.cholesky_derivatives();
    for (int k = 0; k < 3; ++k)
      v.gradient(p + k) = g_factor(0) * dl[k](0, 0) + g_factor(1) * dl[k](1, 0) +
                          g_factor(2) * dl[k](1, 1);
    return v;
  }

  /// Random-effect modes (theta_s, delta_s in scaled-T units) from the last
  /// evaluation, in block order.
  std::vector<Vec2> random_effect_modes() const {
    std::vector<Vec2> out;
    out.reserve(modes_.size());
    for (const auto& m : modes_) out.push_back(last_factor_ * m.mode);
    return out;
  }
  double max_inner_gradient_norm() const {
    double g = 0.0;
    for (const auto& m : modes_) g = std::max(g, m.gradient_norm);
    return g;
  }
  void reset_modes() { modes_.assign(design_.blocks.size(), InnerMode{}); }

 private:
  const DesignMatrices& design_;
  InnerSettings settings_;
  unsigned threads_;
  std::vector<InnerMode> modes_;  // whitened
  Mat2 last_factor_ = Mat2::Identity();
};

/// Stateless evaluation (inner Newton started at zero for every student).
inline LaplaceValue laplace_marginal_loglik(const Eigen::VectorXd& beta,
                                            const CovarianceParams& cov,
                                            const DesignMatrices& design,
                                            const InnerSettings& settings = {},
                                            unsigned threads = 1) {
  LaplaceObjective objective(design, settings, threads);
  return objective.evaluate(beta, cov);
}

}  // namespace iafm::glmm
