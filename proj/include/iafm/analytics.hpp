#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "iafm/csv.hpp"
#include "iafm/data_model.hpp"
#include "iafm/error.hpp"
#include "iafm/glmm/fit.hpp"
#include "iafm/ingest.hpp"
#include "iafm/model_zoo.hpp"
#include "iafm/stats.hpp"

namespace iafm::analytics {

using glmm::Factor;
using glmm::FitResult;

inline double percent_correct(double logodds) { return 100.0 * sigmoid(logodds); }

// ---------------------------------------------------------------------------
// Student-effect distributions
// ---------------------------------------------------------------------------

/// BLUP summaries next to the model's prior SDs; the two SDs differ because
/// BLUPs are shrunk toward zero.
struct EffectDistributions {
  DistributionSummary theta_s;
  DistributionSummary delta_s;  // per opportunity
  double prior_sd_theta = 0.0;
  double prior_sd_delta = 0.0;
};

inline EffectDistributions effect_distributions(const FitResult& fit) {
  if (fit.blups.size() < 2)
    throw Error(ErrorCode::InvalidParameter, "effect distributions need at least 2 students");
  std::vector<double> theta, delta;
  theta.reserve(fit.blups.size());
  delta.reserve(fit.blups.size());
  for (const auto& b : fit.blups) {
    theta.push_back(b.theta_s);
    delta.push_back(b.delta_s);
  }
  return {summarize(theta), summarize(delta), fit.covariance.sd_intercept,
          fit.covariance.sd_slope};
}

// ---------------------------------------------------------------------------
// Mastery arithmetic
// ---------------------------------------------------------------------------

inline constexpr double kMasteryTarget = 0.8;

/// Opportunities until sigmoid(theta + delta * n) reaches the target. nullopt
/// means unreachable (non-positive rate below the target).
inline std::optional<double> opportunities_to_mastery(double theta_ref, double delta_ref,
                                                      double target = kMasteryTarget) {
  if (!(target > 0.0 && target < 1.0))
    throw Error(ErrorCode::InvalidParameter, "target must be in (0, 1)");
  if (sigmoid(theta_ref) >= target) return 0.0;
  if (delta_ref <= 0.0) return std::nullopt;
  return (logit(target) - theta_ref) / delta_ref;
}

/// First-order gain in percent correct per opportunity at the reference
/// knowledge level.
inline double percent_point_improvement(double theta_ref, double delta) {
  const double p = sigmoid(theta_ref);
  return 100.0 * p * (1.0 - p) * delta;
}

struct MasteryRow {
  int percentile = 50;
  double knowledge_logodds = 0.0;
  double knowledge_percent_correct = 0.0;
  std::optional<double> ops_to_mastery_fixed_rate;
  double rate_logodds_per_opp = 0.0;
  double percent_point_improvement = 0.0;
  std::optional<double> ops_to_mastery_fixed_knowledge;
};

/// Fitted beta of the modal exercise type, the offset used when none is
/// given.
inline double default_reference_offset(const FitResult& fit) {
  if (!fit.modal_exercise_type) return 0.0;
  return fit.fixed_effects.beta_of(*fit.modal_exercise_type).value_or(0.0);
}

namespace detail {

struct BlupQuantiles {
  std::vector<double> theta;  // sorted
  std::vector<double> delta;  // sorted
};

inline BlupQuantiles sorted_blups(const FitResult& fit) {
  if (fit.blups.empty()) throw Error(ErrorCode::EmptyInput, "fit has no students");
  BlupQuantiles q;
  for (const auto& b : fit.blups) {
    q.theta.push_back(b.theta_s);
    q.delta.push_back(b.delta_s);
  }
  std::sort(q.theta.begin(), q.theta.end());
  std::sort(q.delta.begin(), q.delta.end());
  return q;
}

}  // namespace detail

/// Rows for the 25th, 50th and 75th percentiles. The knowledge columns vary
/// theta at the median rate; the rate columns vary delta at the median
/// knowledge.
inline std::vector<MasteryRow> mastery_table(const FitResult& fit, double reference_offset) {
  const auto q = detail::sorted_blups(fit);
  const auto& fe = fit.fixed_effects;
  auto theta_ref = [&](double p) {
    return fe.theta_pop + quantile_sorted(q.theta, p) + reference_offset;
  };
  auto delta_ref = [&](double p) { return fe.delta_pop + quantile_sorted(q.delta, p); };
  const double theta_mid = theta_ref(0.5);
  const double delta_mid = delta_ref(0.5);

  std::vector<MasteryRow> rows;
  for (int pct : {25, 50, 75}) {
    const double p = pct / 100.0;
    MasteryRow r;
    r.percentile = pct;
    r.knowledge_logodds = theta_ref(p);
    r.knowledge_percent_correct = percent_correct(r.knowledge_logodds);
    r.ops_to_mastery_fixed_rate = opportunities_to_mastery(r.knowledge_logodds, delta_mid);
    r.rate_logodds_per_opp = delta_ref(p);
    r.percent_point_improvement = percent_point_improvement(theta_mid, r.rate_logodds_per_opp);
    r.ops_to_mastery_fixed_knowledge = opportunities_to_mastery(theta_mid, r.rate_logodds_per_opp);
    rows.push_back(r);
  }
  return rows;
}

inline double iqr_percent_initial_knowledge(const FitResult& fit, double reference_offset) {
  std::vector<double> v;
  v.reserve(fit.blups.size());
  for (const auto& b : fit.blups)
    v.push_back(percent_correct(fit.fixed_effects.theta_pop + b.theta_s + reference_offset));
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.75) - quantile_sorted(v, 0.25);
}

inline double iqr_percent_learning_rate(const FitResult& fit, double reference_offset) {
  const auto q = detail::sorted_blups(fit);
  const double theta_mid = fit.fixed_effects.theta_pop + quantile_sorted(q.theta, 0.5) +
                           reference_offset;
  std::vector<double> v;
  v.reserve(fit.blups.size());
  for (const auto& b : fit.blups)
    v.push_back(percent_point_improvement(theta_mid, fit.fixed_effects.delta_pop + b.delta_s));
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.75) - quantile_sorted(v, 0.25);
}

// ---------------------------------------------------------------------------
// Learning curves
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultCurveFloor = 100;

struct CurvePoint {
  int opportunity = 1;  // 1-based
  std::optional<double> empirical;
  double predicted = 0.0;
  std::size_t n = 0;
};

/// Fraction correct per opportunity. Tail points with fewer than `floor`
/// rows are dropped.
inline std::vector<CurvePoint> empirical_learning_curve(const Dataset& d, int max_opportunity,
                                                        std::size_t floor = kDefaultCurveFloor) {
  if (d.rows.empty()) throw Error(ErrorCode::EmptyDataset, "empty dataset");
  if (max_opportunity < 1) throw Error(ErrorCode::InvalidParameter, "max_opportunity");
  std::vector<std::size_t> n(static_cast<std::size_t>(max_opportunity), 0);
  std::vector<std::size_t> correct(n.size(), 0);
  for (const auto& row : d.rows) {
    if (row.opportunity_index >= max_opportunity) continue;
    const auto k = static_cast<std::size_t>(row.opportunity_index);
    ++n[k];
    correct[k] += row.record.correct ? 1 : 0;
  }
  std::size_t keep = n.size();
  while (keep > 0 && n[keep - 1] < floor) --keep;
  std::vector<CurvePoint> out;
  for (std::size_t k = 0; k < keep; ++k) {
    if (n[k] == 0) continue;
    out.push_back({static_cast<int>(k) + 1,
                   static_cast<double>(correct[k]) / static_cast<double>(n[k]), 0.0, n[k]});
  }
  return out;
}

/// Exercise type and simplified flag at one opportunity. No type means no
/// type offset.
struct OpportunityContext {
  std::optional<ExerciseType> exercise_type;
  bool simplified = false;
};

/// Per-opportunity context, index 0 for opportunity 1. Opportunities past the
/// end carry no offsets.
using CurveContext = std::vector<OpportunityContext>;

inline CurveContext default_curve_context(int max_opportunity, int simplified_first_k = 2) {
  CurveContext c(static_cast<std::size_t>(std::max(max_opportunity, 0)));
  for (int k = 0; k < std::min(simplified_first_k, max_opportunity); ++k)
    c[static_cast<std::size_t>(k)].simplified = true;
  return c;
}

/// Population-level prediction (no student effect, no factor effect).
inline std::vector<CurvePoint> predicted_learning_curve(const FitResult& fit,
                                                        const CurveContext& context,
                                                        int max_opportunity) {
  if (max_opportunity < 1) throw Error(ErrorCode::InvalidParameter, "max_opportunity");
  const auto& fe = fit.fixed_effects;
  std::vector<CurvePoint> out;
  for (int k = 1; k <= max_opportunity; ++k) {
    double eta = fe.theta_pop + fe.delta_pop * (k - 1);
    if (static_cast<std::size_t>(k - 1) < context.size()) {
      const auto& c = context[static_cast<std::size_t>(k - 1)];
      if (c.exercise_type) eta += fe.beta_of(*c.exercise_type).value_or(0.0);
      if (c.simplified) eta += fe.gamma;
    }
    out.push_back({k, std::nullopt, sigmoid(eta), 0});
  }
  return out;
}

/// Predicted points joined with the empirical ones at the same opportunity.
inline std::vector<CurvePoint> learning_curve(const Dataset& d, const FitResult& fit,
                                              const CurveContext& context, int max_opportunity,
                                              std::size_t floor = kDefaultCurveFloor) {
  auto out = predicted_learning_curve(fit, context, max_opportunity);
  for (const auto& e : empirical_learning_curve(d, max_opportunity, floor)) {
    auto& p = out[static_cast<std::size_t>(e.opportunity - 1)];
    p.empirical = e.empirical;
    p.n = e.n;
  }
  return out;
}

inline std::string format_number(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

/// CSV with header opportunity,empirical,predicted,n; missing empirical
/// values are empty fields.
inline void write_curve_csv(std::ostream& os, std::span<const CurvePoint> points) {
  csv::write_row(os, std::vector<std::string>{"opportunity", "empirical", "predicted", "n"});
  for (const auto& p : points)
    csv::write_row(os, std::vector<std::string>{
                           std::to_string(p.opportunity),
                           p.empirical ? format_number(*p.empirical, 10) : std::string(),
                           format_number(p.predicted, 10), std::to_string(p.n)});
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string model;
  double theta_pop = 0.0;
  double delta_pop = 0.0;
  double mean_theta_s = 0.0;
  double sd_theta_s = 0.0;
  double mean_delta_s = 0.0;
  double sd_delta_s = 0.0;
};

namespace detail {

inline bool same_factors(const ModelSpec& a, const ModelSpec& b) {
  return a.include_level == b.include_level && a.include_subject == b.include_subject &&
         a.include_kc_type == b.include_kc_type;
}

inline bool includes(const ModelSpec& m, Factor f) {
  switch (f) {
    case Factor::Level: return m.include_level;
    case Factor::Subject: return m.include_subject;
    case Factor::KcType: return m.include_kc_type;
  }
  return false;
}

}  // namespace detail

/// One row per model of the ablation grid, in grid order.
inline std::vector<AblationRow> ablation_report(std::span<const FitResult> fits) {
  const auto grid = ablation_grid();
  if (fits.size() != grid.size())
    throw Error(ErrorCode::ArityMismatch, "expected " + std::to_string(grid.size()) +
                                              " fits, got " + std::to_string(fits.size()));
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    const auto& f = fits[i];
    if (!detail::same_factors(f.spec, grid[i]))
      throw Error(ErrorCode::ArityMismatch,
                  "fit " + std::to_string(i) + " is not " + grid[i].name);
    const auto dist = effect_distributions(f);
    rows.push_back({grid[i].name, f.fixed_effects.theta_pop, f.fixed_effects.delta_pop,
                    dist.theta_s.mean, dist.theta_s.sd, dist.delta_s.mean, dist.delta_s.sd});
  }
  return rows;
}

struct FactorEffectRow {
  std::string level;
  double mean_theta = 0.0;
  double mean_delta = 0.0;
  double sd_theta = 0.0;  // sample SD across models
  double sd_delta = 0.0;
  std::size_t n_models = 0;
};

/// Mean and SD of each level's intercept and slope effect across every grid
/// model that includes the factor. Levels appear in sorted order.
inline std::vector<FactorEffectRow> factor_effect_table(std::span<const FitResult> fits,
                                                        Factor factor) {
  std::vector<const FitResult*> contributing;
  for (const auto& spec : ablation_grid()) {
    if (!detail::includes(spec, factor)) continue;
    auto it = std::find_if(fits.begin(), fits.end(), [&](const FitResult& f) {
      return detail::same_factors(f.spec, spec);
    });
    if (it == fits.end())
      throw Error(ErrorCode::MissingModels, spec.name + " is needed for " +
                                                std::string(glmm::to_string(factor)));
    contributing.push_back(&*it);
  }
  std::vector<std::string> levels;
  for (const auto* f : contributing) {
    const auto* fe = f->fixed_effects.factor(factor);
    if (!fe) continue;
    for (const auto& l : fe->levels)
      if (std::find(levels.begin(), levels.end(), l) == levels.end()) levels.push_back(l);
  }
  std::sort(levels.begin(), levels.end());

  std::vector<FactorEffectRow> rows;
  for (const auto& level : levels) {
    std::vector<double> theta, delta;
    for (const auto* f : contributing) {
      const auto* fe = f->fixed_effects.factor(factor);
      if (!fe) continue;
      const auto idx = fe->index_of(level);
      if (!idx) continue;
      theta.push_back(fe->intercept[*idx]);
      delta.push_back(fe->slope[*idx]);
    }
    FactorEffectRow r;
    r.level = level;
    r.n_models = theta.size();
    r.mean_theta = mean(theta);
    r.mean_delta = mean(delta);
    r.sd_theta = theta.size() > 1 ? sample_sd(theta) : 0.0;
    r.sd_delta = delta.size() > 1 ? sample_sd(delta) : 0.0;
    rows.push_back(std::move(r));
  }
  return rows;
}

struct ScatterPoint {
  std::string subject;
  double theta = 0.0;
  double delta = 0.0;
};

/// Per-subject effects averaged over the subject models, highest theta
/// first. A single subject has no contrasts and yields no points.
inline std::vector<ScatterPoint> subject_scatter_data(std::span<const FitResult> fits) {
  const auto rows = factor_effect_table(fits, Factor::Subject);
  std::vector<ScatterPoint> out;
  if (rows.size() < 2) return out;
  for (const auto& r : rows) out.push_back({r.level, r.mean_theta, r.mean_delta});
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.theta > b.theta; });
  return out;
}

// ---------------------------------------------------------------------------
// Renderings
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json("Unreachable");
}

inline std::string optional_text(const std::optional<double>& v, int precision) {
  return v ? format_number(*v, precision) : std::string("unreachable");
}

// Left-aligned first column, right-aligned others.
inline void write_aligned(std::ostream& os, const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return;
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      const auto pad = std::string(width[c] - r[c].size(), ' ');
      if (c > 0) line += "  ";
      line += c == 0 ? r[c] + pad : pad + r[c];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << '\n';
  }
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const DistributionSummary& s) {
  return {{"mean", s.mean}, {"q1", s.q1}, {"median", s.median},
          {"q3", s.q3},     {"sd", s.sd}, {"n", s.n}};
}

inline nlohmann::ordered_json to_json(const EffectDistributions& e) {
  return {{"theta_s", to_json(e.theta_s)},
          {"delta_s", to_json(e.delta_s)},
          {"prior_sd_theta", e.prior_sd_theta},
          {"prior_sd_delta", e.prior_sd_delta}};
}

inline nlohmann::ordered_json to_json(std::span<const MasteryRow> rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows)
    j.push_back({{"percentile", r.percentile},
                 {"knowledge_logodds", r.knowledge_logodds},
                 {"knowledge_percent_correct", r.knowledge_percent_correct},
                 {"ops_to_mastery_fixed_rate", detail::optional_number(r.ops_to_mastery_fixed_rate)},
                 {"rate_logodds_per_opp", r.rate_logodds_per_opp},
                 {"percent_point_improvement", r.percent_point_improvement},
                 {"ops_to_mastery_fixed_knowledge",
                  detail::optional_number(r.ops_to_mastery_fixed_knowledge)}});
  return j;
}

inline void write_text(std::ostream& os, std::span<const MasteryRow> rows) {
  std::vector<std::vector<std::string>> t{{"percentile", "knowledge", "pct_correct",
                                           "ops_fixed_rate", "rate", "ppi", "ops_fixed_knowledge"}};
  for (const auto& r : rows)
    t.push_back({std::to_string(r.percentile), format_number(r.knowledge_logodds, 2),
                 format_number(r.knowledge_percent_correct, 2),
                 detail::optional_text(r.ops_to_mastery_fixed_rate, 2),
                 format_number(r.rate_logodds_per_opp, 4),
                 format_number(r.percent_point_improvement, 2),
                 detail::optional_text(r.ops_to_mastery_fixed_knowledge, 2)});
  detail::write_aligned(os, t);
}

inline nlohmann::ordered_json to_json(std::span<const AblationRow> rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows)
    j.push_back({{"model", r.model},
                 {"theta_pop", r.theta_pop},
                 {"delta_pop", r.delta_pop},
                 {"mean_theta_s", r.mean_theta_s},
                 {"sd_theta_s", r.sd_theta_s},
                 {"mean_delta_s", r.mean_delta_s},
                 {"sd_delta_s", r.sd_delta_s}});
  return j;
}

inline void write_text(std::ostream& os, std::span<const AblationRow> rows) {
  std::vector<std::vector<std::string>> t{
      {"model", "theta_pop", "delta_pop", "E[theta_s]", "SD[theta_s]", "E[delta_s]", "SD[delta_s]"}};
  for (const auto& r : rows)
    t.push_back({r.model, format_number(r.theta_pop, 4), format_number(r.delta_pop, 5),
                 format_number(r.mean_theta_s, 5), format_number(r.sd_theta_s, 4),
                 format_number(r.mean_delta_s, 6), format_number(r.sd_delta_s, 5)});
  detail::write_aligned(os, t);
}

inline nlohmann::ordered_json to_json(std::span<const FactorEffectRow> rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows)
    j.push_back({{"level", r.level},
                 {"mean_theta", r.mean_theta},
                 {"mean_delta", r.mean_delta},
                 {"sd_theta", r.sd_theta},
                 {"sd_delta", r.sd_delta},
                 {"n_models", r.n_models}});
  return j;
}

inline void write_text(std::ostream& os, std::span<const FactorEffectRow> rows) {
  std::vector<std::vector<std::string>> t{{"level", "E[theta]", "E[delta]", "SD[theta]", "SD[delta]"}};
  for (const auto& r : rows)
    t.push_back({r.level, format_number(r.mean_theta, 4), format_number(r.mean_delta, 5),
                 format_number(r.sd_theta, 4), format_number(r.sd_delta, 5)});
  detail::write_aligned(os, t);
}

inline nlohmann::ordered_json to_json(std::span<const ScatterPoint> points) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& p : points)
    j.push_back({{"subject", p.subject}, {"theta", p.theta}, {"delta", p.delta}});
  return j;
}

inline void write_text(std::ostream& os, const EffectDistributions& e) {
  std::vector<std::vector<std::string>> t{
      {"effect", "mean", "q1", "median", "q3", "sd_blup", "sd_prior", "n"}};
  t.push_back({"theta_s", format_number(e.theta_s.mean, 4), format_number(e.theta_s.q1, 4),
               format_number(e.theta_s.median, 4), format_number(e.theta_s.q3, 4),
               format_number(e.theta_s.sd, 4), format_number(e.prior_sd_theta, 4),
               std::to_string(e.theta_s.n)});
  t.push_back({"delta_s", format_number(e.delta_s.mean, 5), format_number(e.delta_s.q1, 5),
               format_number(e.delta_s.median, 5), format_number(e.delta_s.q3, 5),
               format_number(e.delta_s.sd, 5), format_number(e.prior_sd_delta, 5),
               std::to_string(e.delta_s.n)});
  detail::write_aligned(os, t);
}

}  // namespace iafm::analytics
