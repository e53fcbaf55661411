#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "iafm/data_model.hpp"
#include "iafm/error.hpp"
#include "iafm/glmm/covariance.hpp"
#include "iafm/glmm/design.hpp"
#include "iafm/glmm/laplace.hpp"
#include "iafm/glmm/optimizer.hpp"
#include "iafm/ingest.hpp"
#include "iafm/model_zoo.hpp"
#include "iafm/stats.hpp"

namespace iafm::glmm {

struct FitOptions {
  double t_scale = 0.01;
  double inner_tol = 1e-10;
  int inner_max_iter = 50;
  double outer_tol = 1e-6;
  int outer_max_iter = 500;
  double probability_clamp = 1e-12;
  bool random_effects_correlated = true;
  /// 0 uses every hardware thread. Results do not depend on this value.
  unsigned threads = 0;

  void validate() const {
    if (!(t_scale > 0.0 && t_scale <= 1.0))
      throw Error(ErrorCode::InvalidParameter, "t_scale must be in (0, 1]");
    if (!(inner_tol > 0.0)) throw Error(ErrorCode::InvalidParameter, "inner_tol");
    if (!(outer_tol > 0.0)) throw Error(ErrorCode::InvalidParameter, "outer_tol");
    if (!(probability_clamp > 0.0 && probability_clamp < 0.5))
      throw Error(ErrorCode::InvalidParameter, "probability_clamp");
    if (inner_max_iter < 1) throw Error(ErrorCode::InvalidParameter, "inner_max_iter");
    if (outer_max_iter < 0) throw Error(ErrorCode::InvalidParameter, "outer_max_iter");
  }
};

/// Per-level effects of one factor; slopes in log-odds per opportunity.
struct FactorEffects {
  Factor factor = Factor::Level;
  std::vector<std::string> levels;
  std::vector<double> intercept;
  std::vector<double> slope;

  std::optional<std::size_t> index_of(const std::string& label) const {
    auto it = std::find(levels.begin(), levels.end(), label);
    if (it == levels.end()) return std::nullopt;
    return static_cast<std::size_t>(it - levels.begin());
  }
};

/// Population-level coefficients. All slopes are per opportunity.
struct FixedEffects {
  double theta_pop = 0.0;
  double delta_pop = 0.0;
  std::vector<std::pair<ExerciseType, double>> beta;
  double gamma = 0.0;
  std::vector<FactorEffects> factors;

  std::optional<double> beta_of(ExerciseType t) const {
    for (const auto& [type, value] : beta)
      if (type == t) return value;
    return std::nullopt;
  }
  const FactorEffects* factor(Factor f) const {
    for (const auto& fe : factors)
      if (fe.factor == f) return &fe;
    return nullptr;
  }

  std::vector<std::pair<std::string, double>> named() const {
    std::vector<std::pair<std::string, double>> out{{"theta_pop", theta_pop},
                                                    {"delta_pop", delta_pop}};
    for (const auto& [type, value] : beta)
      out.emplace_back("beta[" + std::string(to_string(type)) + "]", value);
    out.emplace_back("gamma", gamma);
    for (const auto& fe : factors) {
      const std::string f(to_string(fe.factor));
      for (std::size_t j = 0; j < fe.levels.size(); ++j)
        out.emplace_back("theta_" + f + "[" + fe.levels[j] + "]", fe.intercept[j]);
      for (std::size_t j = 0; j < fe.levels.size(); ++j)
        out.emplace_back("delta_" + f + "[" + fe.levels[j] + "]", fe.slope[j]);
    }
    return out;
  }
};

/// Random-effect covariance with the slope SD in log-odds per opportunity.
struct RandomEffectCovariance {
  double sd_intercept = 0.0;
  double sd_slope = 0.0;
  double rho = 0.0;
};

struct StudentEffect {
  std::string student_id;
  double theta_s = 0.0;
  double delta_s = 0.0;
};

struct FitResult {
  ModelSpec spec;
  double t_scale = 0.01;
  double probability_clamp = 1e-12;
  FixedEffects fixed_effects;
  RandomEffectCovariance covariance;
  std::vector<StudentEffect> blups;  // sorted by student_id
  double marginal_loglik = 0.0;
  int n_outer_iterations = 0;
  bool converged = false;
  double gradient_norm = 0.0;
  double max_inner_gradient_norm = 0.0;
  std::optional<ExerciseType> modal_exercise_type;
  std::vector<std::string> warnings;
  /// Value of the objective at every accepted outer iterate.
  std::vector<double> objective_trace;
  /// Optimizer coordinates: [fixed effects, l00, l10, l11] (l10 absent for
  /// an uncorrelated fit), slopes in scaled-T units.
  Eigen::VectorXd internal_parameters;

  const StudentEffect* blup_of(const std::string& student_id) const {
    auto it = std::lower_bound(blups.begin(), blups.end(), student_id,
                               [](const StudentEffect& e, const std::string& id) {
                                 return e.student_id < id;
                               });
    if (it == blups.end() || it->student_id != student_id) return nullptr;
    return &*it;
  }
};

inline constexpr double kSeparationBound = 15.0;

namespace detail {

inline CovarianceFactor unpack_factor(const Eigen::VectorXd& x, Eigen::Index p,
                                      bool correlated) {
  if (correlated) return {x(p), x(p + 1), x(p + 2)};
  return {x(p), 0.0, x(p + 1)};
}

inline std::vector<double> sum_to_zero_effects(const Eigen::VectorXd& beta,
                                               Eigen::Index first, std::size_t n_levels,
                                               double scale) {
  std::vector<double> out(n_levels, 0.0);
  if (n_levels < 2) return out;
  double sum = 0.0;
  for (std::size_t j = 0; j + 1 < n_levels; ++j) {
    out[j] = beta(first + static_cast<Eigen::Index>(j)) * scale;
    sum += out[j];
  }
  out.back() = -sum;
  return out;
}

inline FixedEffects report_fixed_effects(const Eigen::VectorXd& beta,
                                         const DesignMatrices& dm) {
  FixedEffects fe;
  fe.theta_pop = beta(kInterceptCol);
  fe.delta_pop = beta(kSlopeCol) * dm.t_scale;
  const auto types = sum_to_zero_effects(beta, kFirstTypeCol, dm.exercise_types.size(), 1.0);
  for (std::size_t j = 0; j < dm.exercise_types.size(); ++j)
    fe.beta.emplace_back(dm.exercise_types[j], types[j]);
  fe.gamma = beta(dm.simplified_col);
  for (const auto& fc : dm.factors) {
    FactorEffects f;
    f.factor = fc.factor;
    f.levels = fc.levels;
    f.intercept = sum_to_zero_effects(beta, fc.intercept_col, fc.levels.size(), 1.0);
    f.slope = sum_to_zero_effects(beta, fc.slope_col, fc.levels.size(), dm.t_scale);
    fe.factors.push_back(std::move(f));
  }
  return fe;
}

inline std::optional<ExerciseType> modal_exercise_type(const Dataset& d) {
  std::array<std::size_t, kExerciseTypes.size()> counts{};
  for (const auto& row : d.rows) ++counts[static_cast<std::size_t>(row.record.exercise_type)];
  const auto it = std::max_element(counts.begin(), counts.end());
  if (*it == 0) return std::nullopt;
  return kExerciseTypes[static_cast<std::size_t>(it - counts.begin())];
}

}  // namespace detail

/// Maximizes the Laplace marginal likelihood over fixed effects and the
/// random-effect covariance. The optimizer runs on the Cholesky factor of the
/// covariance, which stays well defined when an SD reaches zero. Starts from
/// a plain logistic fit with SD[theta_s] = 0.3, SD[delta_s] = 0.3 t_scale per
/// opportunity and rho = 0.
inline FitResult fit_design(const DesignMatrices& dm, const FitOptions& opts,
                            std::optional<ExerciseType> modal_type = std::nullopt) {
  opts.validate();
  const auto p = dm.n_fixed();
  const bool correlated = opts.random_effects_correlated;
  const Eigen::Index n_cov = correlated ? 3 : 2;

  Eigen::VectorXd x0(p + n_cov);
  x0.head(p) = plain_logistic_fit(dm);
  // 0.3 in scaled units is 0.3 t_scale per opportunity.
  if (correlated)
    x0.tail(3) << 0.3, 0.0, 0.3;
  else
    x0.tail(2) << 0.3, 0.3;

  LaplaceObjective objective(dm, {opts.inner_tol, opts.inner_max_iter}, opts.threads);
  const Objective fn = [&](const Eigen::VectorXd& x) {
    const auto v = objective.evaluate(x.head(p), detail::unpack_factor(x, p, correlated));
    ValueAndGradient out{v.value, Eigen::VectorXd(p + n_cov)};
    out.gradient.head(p) = v.gradient.head(p);
    if (correlated)
      out.gradient.tail(3) = v.gradient.tail(3);
    else
      out.gradient.tail(2) << v.gradient(p), v.gradient(p + 2);
    return out;
  };
  BfgsOptions bopts;
  bopts.gradient_tol = opts.outer_tol;
  bopts.max_iter = opts.outer_max_iter;
  const auto res = bfgs_maximize(fn, x0, bopts);

  // Re-evaluate so the cached modes belong to the returned optimum.
  const Eigen::VectorXd beta = res.x.head(p);
  const auto factor = detail::unpack_factor(res.x, p, correlated);
  const auto final_value = objective.evaluate(beta, factor, false);

  FitResult out;
  out.spec = dm.spec;
  out.t_scale = dm.t_scale;
  out.probability_clamp = opts.probability_clamp;
  out.fixed_effects = detail::report_fixed_effects(beta, dm);
  out.covariance = {factor.sd_intercept(), factor.sd_slope() * dm.t_scale,
                    factor.correlation()};
  out.marginal_loglik = final_value.value;
  out.n_outer_iterations = res.iterations;
  out.converged = res.converged;
  out.gradient_norm = res.gradient_norm;
  out.modal_exercise_type = modal_type;
  out.objective_trace = res.trace;
  out.internal_parameters = res.x;

  const auto modes = objective.random_effect_modes();
  out.blups.reserve(dm.blocks.size());
  for (std::size_t s = 0; s < dm.blocks.size(); ++s)
    out.blups.push_back({dm.blocks[s].student_id, modes[s](0), modes[s](1) * dm.t_scale});
  out.max_inner_gradient_norm = objective.max_inner_gradient_norm();
  std::sort(out.blups.begin(), out.blups.end(),
            [](const auto& a, const auto& b) { return a.student_id < b.student_id; });

  if (!out.converged)
    out.warnings.push_back("NotConverged: gradient norm " + std::to_string(res.gradient_norm) +
                           " after " + std::to_string(res.iterations) + " iterations");
  for (const auto& [name, value] : out.fixed_effects.named()) {
    if (std::abs(value) > kSeparationBound)
      out.warnings.push_back("SeparationWarning: " + name + " = " + std::to_string(value));
  }
  return out;
}

inline FitResult fit(const Dataset& d, const ModelSpec& spec, const FitOptions& opts = {}) {
  opts.validate();
  const auto dm = build_design(d, spec, opts.t_scale);
  return fit_design(dm, opts, detail::modal_exercise_type(d));
}

inline bool has_separation_warning(const FitResult& f) {
  return std::any_of(f.warnings.begin(), f.warnings.end(), [](const std::string& w) {
    return w.starts_with("SeparationWarning");
  });
}

inline double clamp_probability(double p, double eps) {
  return std::clamp(p, eps, 1.0 - eps);
}

/// Full linear predictor of a row under a fit, in log-odds.
inline double linear_predictor(const FitResult& fit, const OpportunityRow& row,
                               bool include_blup) {
  const auto& fe = fit.fixed_effects;
  const auto& r = row.record;
  const double t = static_cast<double>(row.opportunity_index);
  double eta = fe.theta_pop + fe.delta_pop * t + (r.simplified ? fe.gamma : 0.0);
  const auto beta = fe.beta_of(r.exercise_type);
  if (!beta)
    throw Error(ErrorCode::UnknownFactorLevel,
                "exercise_type '" + std::string(to_string(r.exercise_type)) + "'");
  eta += *beta;
  for (const auto& f : fe.factors) {
    const auto label = factor_label(r, f.factor);
    const auto idx = f.index_of(label);
    if (!idx)
      throw Error(ErrorCode::UnknownFactorLevel,
                  std::string(to_string(f.factor)) + " '" + label + "'");
    eta += f.intercept[*idx] + f.slope[*idx] * t;
  }
  if (include_blup) {
    const auto* blup = fit.blup_of(r.student_id);
    if (!blup) throw Error(ErrorCode::UnknownStudent, r.student_id);
    eta += blup->theta_s + blup->delta_s * t;
  }
  return eta;
}

inline double predict_prob(const FitResult& fit, const OpportunityRow& row, bool include_blup) {
  return clamp_probability(sigmoid(linear_predictor(fit, row, include_blup)),
                           fit.probability_clamp);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const FitResult& f) {
  nlohmann::ordered_json j;
  j["model"] = to_json(f.spec);
  j["t_scale"] = f.t_scale;
  nlohmann::ordered_json fe = nlohmann::ordered_json::object();
  for (const auto& [name, value] : f.fixed_effects.named()) fe[name] = value;
  j["fixed_effects"] = fe;
  j["covariance"] = {{"sd_intercept", f.covariance.sd_intercept},
                     {"sd_slope", f.covariance.sd_slope},
                     {"rho", f.covariance.rho}};
  nlohmann::ordered_json blups = nlohmann::ordered_json::array();
  for (const auto& b : f.blups)
    blups.push_back({{"student_id", b.student_id}, {"theta_s", b.theta_s}, {"delta_s", b.delta_s}});
  j["blups"] = std::move(blups);
  j["marginal_loglik"] = f.marginal_loglik;
  j["converged"] = f.converged;
  j["n_outer_iterations"] = f.n_outer_iterations;
  j["gradient_norm"] = f.gradient_norm;
  j["probability_clamp"] = f.probability_clamp;
  j["modal_exercise_type"] =
      f.modal_exercise_type ? nlohmann::ordered_json(std::string(to_string(*f.modal_exercise_type)))
                            : nlohmann::ordered_json(nullptr);
  j["warnings"] = f.warnings;
  return j;
}

namespace detail {

// "theta_kc_type[Fact]" -> ("theta", "kc_type", "Fact")
inline std::optional<std::tuple<std::string, std::string, std::string>> split_effect_name(
    const std::string& name) {
  const auto open = name.find('[');
  if (open == std::string::npos || name.back() != ']') return std::nullopt;
  const auto head = name.substr(0, open);
  const auto label = name.substr(open + 1, name.size() - open - 2);
  const auto us = head.find('_');
  if (us == std::string::npos) return std::tuple{head, std::string(), label};
  return std::tuple{head.substr(0, us), head.substr(us + 1), label};
}

}  // namespace detail

/// Reads the document written by to_json(FitResult). The optimizer trace and
/// internal coordinates are not serialized and come back empty.
inline FitResult fit_result_from_json(const nlohmann::ordered_json& j) {
  FitResult f;
  try {
    f.spec = model_spec_from_json(j.at("model"));
    f.t_scale = j.at("t_scale").get<double>();
    f.probability_clamp = j.value("probability_clamp", 1e-12);
    auto& fe = f.fixed_effects;
    const std::pair<Factor, std::string> factor_names[] = {
        {Factor::Level, "level"}, {Factor::Subject, "subject"}, {Factor::KcType, "kc_type"}};
    std::map<std::string, FactorEffects> factors;
    for (const auto& [name, value] : j.at("fixed_effects").items()) {
      const double v = value.get<double>();
      if (name == "theta_pop") {
        fe.theta_pop = v;
      } else if (name == "delta_pop") {
        fe.delta_pop = v;
      } else if (name == "gamma") {
        fe.gamma = v;
      } else if (auto parts = detail::split_effect_name(name)) {
        const auto& [kind, factor, label] = *parts;
        if (kind == "beta") {
          const auto type = parse_exercise_type(label);
          if (!type) throw Error(ErrorCode::SchemaMismatch, "fixed effect '" + name + "'");
          fe.beta.emplace_back(*type, v);
          continue;
        }
        auto fit_factor = std::find_if(std::begin(factor_names), std::end(factor_names),
                                       [&](const auto& fn) { return fn.second == factor; });
        if (fit_factor == std::end(factor_names) || (kind != "theta" && kind != "delta"))
          throw Error(ErrorCode::SchemaMismatch, "fixed effect '" + name + "'");
        auto& entry = factors[factor];
        entry.factor = fit_factor->first;
        auto idx = entry.index_of(label);
        if (!idx) {
          entry.levels.push_back(label);
          entry.intercept.push_back(0.0);
          entry.slope.push_back(0.0);
          idx = entry.levels.size() - 1;
        }
        (kind == "theta" ? entry.intercept : entry.slope)[*idx] = v;
      } else {
        throw Error(ErrorCode::SchemaMismatch, "fixed effect '" + name + "'");
      }
    }
    for (const auto& [fac, name] : factor_names) {
      auto it = factors.find(name);
      if (it != factors.end()) fe.factors.push_back(std::move(it->second));
    }
    const auto& cov = j.at("covariance");
    f.covariance = {cov.at("sd_intercept").get<double>(), cov.at("sd_slope").get<double>(),
                    cov.at("rho").get<double>()};
    for (const auto& b : j.at("blups"))
      f.blups.push_back({b.at("student_id").get<std::string>(), b.at("theta_s").get<double>(),
                         b.at("delta_s").get<double>()});
    std::sort(f.blups.begin(), f.blups.end(),
              [](const auto& a, const auto& b) { return a.student_id < b.student_id; });
    f.marginal_loglik = j.at("marginal_loglik").get<double>();
    f.converged = j.at("converged").get<bool>();
    f.n_outer_iterations = j.at("n_outer_iterations").get<int>();
    f.gradient_norm = j.value("gradient_norm", 0.0);
    if (j.contains("modal_exercise_type") && j["modal_exercise_type"].is_string())
      f.modal_exercise_type = parse_exercise_type(j["modal_exercise_type"].get<std::string>());
    if (j.contains("warnings")) f.warnings = j["warnings"].get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("fit document: ") + e.what());
  }
  return f;
}

}  // namespace iafm::glmm
