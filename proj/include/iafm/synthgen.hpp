#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "iafm/data_model.hpp"
#include "iafm/error.hpp"
#include "iafm/ingest.hpp"
#include "iafm/stats.hpp"

namespace iafm::synth {

/// Additive effect of one factor level; slope in log-odds per opportunity.
struct LevelEffect {
  double intercept = 0.0;
  double slope = 0.0;
};

using EffectMap = std::map<std::string, LevelEffect>;

struct GenParams {
  double theta_pop = 0.0;
  double delta_pop = 0.0;
  double sd_theta = 0.0;
  double sd_delta = 0.0;  // per opportunity
  double rho = 0.0;
  std::map<ExerciseType, double> beta_by_type;
  double gamma = 0.0;
  /// Empty map: the label is left missing on every row.
  EffectMap level_effects;
  EffectMap subject_effects;
  EffectMap kc_type_effects;  // keys must name KC types
  int n_students = 0;
  int kcs_per_student = 0;
  int opps_per_kc = 0;
  int simplified_first_k = 2;
  std::uint64_t seed = 0;

  void validate() const {
    auto bad = [](const char* field) { throw Error(ErrorCode::InvalidParameter, field); };
    if (!(sd_theta >= 0.0) || !std::isfinite(sd_theta)) bad("sd_theta");
    if (!(sd_delta >= 0.0) || !std::isfinite(sd_delta)) bad("sd_delta");
    if (!(rho > -1.0 && rho < 1.0)) bad("rho");
    if (!std::isfinite(theta_pop)) bad("theta_pop");
    if (!std::isfinite(delta_pop)) bad("delta_pop");
    if (!std::isfinite(gamma)) bad("gamma");
    if (n_students < 1) bad("n_students");
    if (kcs_per_student < 1) bad("kcs_per_student");
    if (opps_per_kc < 1) bad("opps_per_kc");
    if (simplified_first_k < 0) bad("simplified_first_k");
    double beta_sum = 0.0;
    for (const auto& [_, b] : beta_by_type) beta_sum += b;
    if (std::abs(beta_sum) > 1e-12) bad("beta_by_type");
    auto check_map = [&](const EffectMap& m, const char* field) {
      double si = 0.0, ss = 0.0;
      for (const auto& [_, e] : m) {
        si += e.intercept;
        ss += e.slope;
      }
      if (std::abs(si) > 1e-12 || std::abs(ss) > 1e-12) bad(field);
    };
    check_map(level_effects, "level_effects");
    check_map(subject_effects, "subject_effects");
    check_map(kc_type_effects, "kc_type_effects");
    for (const auto& [label, _] : kc_type_effects)
      if (!parse_kc_type(label)) bad("kc_type_effects");
  }
};

/// Population values of a reference base-model fit; gamma and the
/// exercise-type spread are plumbing defaults (hardest: PairMatching, easiest:
/// HighlightTheMistake).
inline GenParams default_gen_params() {
  GenParams p;
  p.theta_pop = 0.686;
  p.delta_pop = 0.0657;
  p.sd_theta = 0.461;
  p.sd_delta = 0.0121;
  p.rho = 0.0;
  p.gamma = 0.3;
  p.beta_by_type = {{ExerciseType::MultipleChoice, 0.2 / 3.0},
                    {ExerciseType::FillInTheBlank, -0.2 / 3.0},
                    {ExerciseType::PairMatching, -0.2},
                    {ExerciseType::HighlightTheMistake, 0.2}};
  p.n_students = 2000;
  p.kcs_per_student = 10;
  p.opps_per_kc = 10;
  p.simplified_first_k = 2;
  p.seed = 20240601;
  return p;
}

struct TrueEffect {
  std::string student_id;
  double theta_s = 0.0;
  double delta_s = 0.0;
};

struct Generated {
  Dataset dataset;
  std::vector<TrueEffect> truth;  // in student order
};

inline std::string student_name(int s) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%06d", s);
  return buf;
}

/// Samples a population from the additive-factors generative model. Every
/// student draws from its own stream seeded by (seed, student index), so the
/// first n students are identical whatever n_students is.
inline Generated generate(const GenParams& p) {
  p.validate();
  auto keys = [](const EffectMap& m) {
    std::vector<std::string> out;
    for (const auto& [k, _] : m) out.push_back(k);
    return out;
  };
  const auto levels = keys(p.level_effects);
  const auto subjects = keys(p.subject_effects);
  const auto kc_types = keys(p.kc_type_effects);
  auto beta_of = [&](ExerciseType t) {
    auto it = p.beta_by_type.find(t);
    return it == p.beta_by_type.end() ? 0.0 : it->second;
  };

  Generated g;
  std::vector<InteractionRecord> records;
  records.reserve(static_cast<std::size_t>(p.n_students) * p.kcs_per_student * p.opps_per_kc);
  constexpr std::int64_t kEpochMs = 1'700'000'000'000;
  const double slope_cond = std::sqrt(1.0 - p.rho * p.rho);

  for (int s = 0; s < p.n_students; ++s) {
    std::seed_seq seq{static_cast<std::uint32_t>(p.seed), static_cast<std::uint32_t>(p.seed >> 32),
                      static_cast<std::uint32_t>(s)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform;
    const double z1 = normal(rng), z2 = normal(rng);
    const double theta_s = p.sd_theta * z1;
    const double delta_s = p.sd_delta * (p.rho * z1 + slope_cond * z2);
    const auto sid = student_name(s);
    g.truth.push_back({sid, theta_s, delta_s});

    const std::optional<std::string> level =
        levels.empty() ? std::nullopt
                       : std::optional(levels[static_cast<std::size_t>(s) % levels.size()]);
    for (int k = 0; k < p.kcs_per_student; ++k) {
      char kc_buf[32];
      std::snprintf(kc_buf, sizeof kc_buf, "%s_k%03d", sid.c_str(), k);
      const std::string kc_id = kc_buf;
      const std::optional<std::string> subject =
          subjects.empty()
              ? std::nullopt
              : std::optional(subjects[static_cast<std::size_t>(s + k) % subjects.size()]);
      const std::optional<std::string> kc_type =
          kc_types.empty() ? std::nullopt
                           : std::optional(kc_types[static_cast<std::size_t>(k) % kc_types.size()]);
      LevelEffect shift;
      auto add = [&](const EffectMap& m, const std::optional<std::string>& label) {
        if (!label) return;
        const auto& e = m.at(*label);
        shift.intercept += e.intercept;
        shift.slope += e.slope;
      };
      add(p.level_effects, level);
      add(p.subject_effects, subject);
      add(p.kc_type_effects, kc_type);

      for (int t = 0; t < p.opps_per_kc; ++t) {
        InteractionRecord r;
        r.student_id = sid;
        r.kc_id = kc_id;
        r.exercise_id = kc_id + "_e" + std::to_string(t);
        r.timestamp = kEpochMs + (static_cast<std::int64_t>(t) * p.kcs_per_student + k) * 60'000;
        r.exercise_type = kExerciseTypes[static_cast<std::size_t>(k * p.opps_per_kc + t) %
                                         kExerciseTypes.size()];
        r.simplified = t < p.simplified_first_k;
        r.subject = subject;
        r.level = level;
        if (kc_type) r.kc_type = parse_kc_type(*kc_type);
        const double eta = p.theta_pop + theta_s + shift.intercept +
                           (p.delta_pop + delta_s + shift.slope) * t +
                           beta_of(r.exercise_type) + (r.simplified ? p.gamma : 0.0);
        r.correct = uniform(rng) < sigmoid(eta);
        records.push_back(std::move(r));
      }
    }
  }
  auto rows = assign_opportunity_counts(std::move(records));
  iafm::detail::sort_canonical(rows);
  g.dataset.factor_levels = build_factor_levels(rows);
  g.dataset.rows = std::move(rows);
  g.dataset.provenance = "synthetic seed=" + std::to_string(p.seed);
  return g;
}

inline nlohmann::ordered_json to_json(const GenParams& p) {
  nlohmann::ordered_json j;
  j["theta_pop"] = p.theta_pop;
  j["delta_pop"] = p.delta_pop;
  j["sd_theta"] = p.sd_theta;
  j["sd_delta"] = p.sd_delta;
  j["rho"] = p.rho;
  nlohmann::ordered_json beta = nlohmann::ordered_json::object();
  for (const auto& [t, b] : p.beta_by_type) beta[std::string(to_string(t))] = b;
  j["beta_by_type"] = beta;
  j["gamma"] = p.gamma;
  auto effects = [](const EffectMap& m) {
    nlohmann::ordered_json e = nlohmann::ordered_json::object();
    for (const auto& [k, v] : m) e[k] = {{"intercept", v.intercept}, {"slope", v.slope}};
    return e;
  };
  j["level_effects"] = effects(p.level_effects);
  j["subject_effects"] = effects(p.subject_effects);
  j["kc_type_effects"] = effects(p.kc_type_effects);
  j["n_students"] = p.n_students;
  j["kcs_per_student"] = p.kcs_per_student;
  j["opps_per_kc"] = p.opps_per_kc;
  j["simplified_first_k"] = p.simplified_first_k;
  j["seed"] = p.seed;
  return j;
}

inline nlohmann::ordered_json ground_truth_json(const GenParams& p, const Generated& g) {
  nlohmann::ordered_json j;
  j["params"] = to_json(p);
  nlohmann::ordered_json students = nlohmann::ordered_json::array();
  for (const auto& t : g.truth)
    students.push_back({{"student_id", t.student_id}, {"theta_s", t.theta_s}, {"delta_s", t.delta_s}});
  j["students"] = std::move(students);
  return j;
}

}  // namespace iafm::synth
