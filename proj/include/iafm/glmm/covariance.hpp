#pragma once

#include <array>
#include <cmath>

#include <Eigen/Dense>

namespace iafm::glmm {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Unconstrained parameterization of the 2x2 covariance of (theta_s, delta_s).
/// The slope SD is in scaled-T units.
struct CovarianceParams {
  double log_sd_intercept = 0.0;
  double log_sd_slope = 0.0;
  double atanh_correlation = 0.0;

  double sd_intercept() const { return std::exp(log_sd_intercept); }
  double sd_slope() const { return std::exp(log_sd_slope); }
  double correlation() const { return std::tanh(atanh_correlation); }

  Mat2 matrix() const {
    const double s1 = sd_intercept(), s2 = sd_slope(), rho = correlation();
    Mat2 m;
    m << s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2;
    return m;
  }

  /// Closed-form inverse; exact for any |rho| < 1.
  Mat2 precision() const {
    const double s1 = sd_intercept(), s2 = sd_slope(), rho = correlation();
    const double one_m_r2 = 1.0 - rho * rho;
    Mat2 m;
    m << 1.0 / (s1 * s1), -rho / (s1 * s2), -rho / (s1 * s2), 1.0 / (s2 * s2);
    return m / one_m_r2;
  }

  double log_det() const {
    const double rho = correlation();
    return 2.0 * log_sd_intercept + 2.0 * log_sd_slope + std::log1p(-rho * rho);
  }

  /// d(Sigma)/d(param k) for k = 0 (log sd intercept), 1 (log sd slope),
  /// 2 (atanh correlation).
  std::array<Mat2, 3> matrix_derivatives() const {
    const double s1 = sd_intercept(), s2 = sd_slope(), rho = correlation();
    const double off = rho * s1 * s2;
    std::array<Mat2, 3> d;
    d[0] << 2.0 * s1 * s1, off, off, 0.0;
    d[1] << 0.0, off, off, 2.0 * s2 * s2;
    const double doff = (1.0 - rho * rho) * s1 * s2;
    d[2] << 0.0, doff, doff, 0.0;
    return d;
  }

  /// Lower Cholesky factor L with L L' = Sigma.
  Mat2 cholesky() const {
    const double s1 = sd_intercept(), s2 = sd_slope(), rho = correlation();
    Mat2 l;
    l << s1, 0.0, s2 * rho, s2 * std::sqrt(1.0 - rho * rho);
    return l;
  }

  /// d(L)/d(param k), same ordering as matrix_derivatives().
  std::array<Mat2, 3> cholesky_derivatives() const {
    const double s1 = sd_intercept(), s2 = sd_slope(), rho = correlation();
    const double c = std::sqrt(1.0 - rho * rho);
    std::array<Mat2, 3> d;
    d[0] << s1, 0.0, 0.0, 0.0;
    d[1] << 0.0, 0.0, s2 * rho, s2 * c;
    d[2] << 0.0, 0.0, s2 * c * c, -s2 * rho * c;
    return d;
  }
};

/// Free entries of a lower-triangular factor L, in the order (0,0), (1,0),
/// (1,1). Sigma = L L' is positive semidefinite for any values, including on
/// the boundary where an SD is zero.
struct CovarianceFactor {
  double l00 = 0.0;
  double l10 = 0.0;
  double l11 = 0.0;

  Mat2 matrix() const {
    Mat2 l;
    l << l00, 0.0, l10, l11;
    return l;
  }
  double sd_intercept() const { return std::abs(l00); }
  double sd_slope() const { return std::hypot(l10, l11); }
  /// Zero when either SD vanishes.
  double correlation() const {
    const double s1 = sd_intercept(), s2 = sd_slope();
    if (s1 == 0.0 || s2 == 0.0) return 0.0;
    return l00 * l10 / (s1 * s2);
  }

  static CovarianceFactor from(const CovarianceParams& cov) {
    const Mat2 l = cov.cholesky();
    return {l(0, 0), l(1, 0), l(1, 1)};
  }
};

}  // namespace iafm::glmm
