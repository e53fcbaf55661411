#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iafm/error.hpp"

namespace iafm {

enum class ExerciseType : std::uint8_t {
  MultipleChoice,
  FillInTheBlank,
  PairMatching,
  HighlightTheMistake,
};

inline constexpr std::array<ExerciseType, 4> kExerciseTypes = {
    ExerciseType::MultipleChoice, ExerciseType::FillInTheBlank,
    ExerciseType::PairMatching, ExerciseType::HighlightTheMistake};

enum class KcType : std::uint8_t {
  Association,
  Category,
  Concept,
  Fact,
  PrincipleRuleModel,
  ProductionSchemaSkill,
  RulePlan,
};

inline constexpr std::array<KcType, 7> kKcTypes = {
    KcType::Association,        KcType::Category,
    KcType::Concept,            KcType::Fact,
    KcType::PrincipleRuleModel, KcType::ProductionSchemaSkill,
    KcType::RulePlan};

/// Label used for a missing subject / level / kc_type. It takes part in
/// factor coding like any observed label.
inline constexpr std::string_view kUnknownLabel = "unknown";

inline constexpr bool is_valid(ExerciseType t) {
  return static_cast<std::uint8_t>(t) < kExerciseTypes.size();
}

inline constexpr std::string_view to_string(ExerciseType t) {
  switch (t) {
    case ExerciseType::MultipleChoice: return "MultipleChoice";
    case ExerciseType::FillInTheBlank: return "FillInTheBlank";
    case ExerciseType::PairMatching: return "PairMatching";
    case ExerciseType::HighlightTheMistake: return "HighlightTheMistake";
  }
  return "?";
}

inline constexpr std::string_view to_string(KcType t) {
  switch (t) {
    case KcType::Association: return "Association";
    case KcType::Category: return "Category";
    case KcType::Concept: return "Concept";
    case KcType::Fact: return "Fact";
    case KcType::PrincipleRuleModel: return "PrincipleRuleModel";
    case KcType::ProductionSchemaSkill: return "ProductionSchemaSkill";
    case KcType::RulePlan: return "RulePlan";
  }
  return "?";
}

namespace detail {

// Lower-cases and strips everything but letters and digits, so
// "Fill-In-The-Blank", "fill_in_the_blank" and "FillInTheBlank" compare equal.
inline std::string normalize_label(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

}  // namespace detail

inline std::optional<ExerciseType> parse_exercise_type(std::string_view s) {
  const auto key = detail::normalize_label(s);
  for (auto t : kExerciseTypes)
    if (detail::normalize_label(to_string(t)) == key) return t;
  return std::nullopt;
}

inline std::optional<KcType> parse_kc_type(std::string_view s) {
  const auto key = detail::normalize_label(s);
  for (auto t : kKcTypes)
    if (detail::normalize_label(to_string(t)) == key) return t;
  return std::nullopt;
}

/// Declarative KC types (association, category, concept, fact); the rest are
/// procedural.
inline constexpr bool is_declarative(KcType t) {
  return t == KcType::Association || t == KcType::Category ||
         t == KcType::Concept || t == KcType::Fact;
}

/// One first attempt of one student at one exercise.
struct InteractionRecord {
  std::string student_id;
  std::string kc_id;
  std::string exercise_id;
  std::int64_t timestamp = 0;  // ms since epoch
  bool correct = false;
  ExerciseType exercise_type = ExerciseType::MultipleChoice;
  bool simplified = false;
  std::optional<std::string> subject;
  std::optional<std::string> level;
  std::optional<KcType> kc_type;

  friend bool operator==(const InteractionRecord&,
                         const InteractionRecord&) = default;
};

/// Factor labels with missing values mapped to kUnknownLabel.
inline std::string subject_label(const InteractionRecord& r) {
  return r.subject ? *r.subject : std::string(kUnknownLabel);
}
inline std::string level_label(const InteractionRecord& r) {
  return r.level ? *r.level : std::string(kUnknownLabel);
}
inline std::string kc_type_label(const InteractionRecord& r) {
  return r.kc_type ? std::string(to_string(*r.kc_type))
                   : std::string(kUnknownLabel);
}

struct OpportunityRow {
  InteractionRecord record;
  /// Number of earlier attempts by this student on this KC (0 on the first).
  int opportunity_index = 0;

  friend bool operator==(const OpportunityRow&, const OpportunityRow&) = default;
};

struct FilterConfig {
  int min_kc_interactions = 5;
  /// Rows with opportunity_index >= this are dropped.
  int max_opportunity_index = 30;

  void validate() const {
    if (min_kc_interactions < 1)
      throw Error(ErrorCode::InvalidParameter, "min_kc_interactions must be >= 1");
    if (max_opportunity_index < min_kc_interactions)
      throw Error(ErrorCode::InvalidParameter,
                  "max_opportunity_index must be >= min_kc_interactions");
  }
};

/// Observed labels per factor, deduplicated and lexicographically sorted.
struct FactorLevels {
  std::vector<std::string> subjects;
  std::vector<std::string> levels;
  std::vector<std::string> kc_types;

  friend bool operator==(const FactorLevels&, const FactorLevels&) = default;
};

inline FactorLevels build_factor_levels(std::span<const OpportunityRow> rows) {
  std::set<std::string> subjects, levels, kc_types;
  for (const auto& row : rows) {
    subjects.insert(subject_label(row.record));
    levels.insert(level_label(row.record));
    kc_types.insert(kc_type_label(row.record));
  }
  return {{subjects.begin(), subjects.end()},
          {levels.begin(), levels.end()},
          {kc_types.begin(), kc_types.end()}};
}

inline const InteractionRecord& validate_record(const InteractionRecord& r) {
  if (r.student_id.empty()) throw Error(ErrorCode::EmptyId, "student_id");
  if (r.kc_id.empty()) throw Error(ErrorCode::EmptyId, "kc_id");
  if (r.exercise_id.empty()) throw Error(ErrorCode::EmptyId, "exercise_id");
  if (r.timestamp < 0) throw Error(ErrorCode::NegativeTimestamp, "timestamp");
  if (!is_valid(r.exercise_type))
    throw Error(ErrorCode::UnknownExerciseType, "exercise_type");
  return r;
}

}  // namespace iafm
