#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "iafm/data_model.hpp"
#include "iafm/error.hpp"
#include "iafm/ingest.hpp"
#include "iafm/model_zoo.hpp"

namespace iafm::glmm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Factor { Level, Subject, KcType };

inline constexpr std::string_view to_string(Factor f) {
  switch (f) {
    case Factor::Level: return "level";
    case Factor::Subject: return "subject";
    case Factor::KcType: return "kc_type";
  }
  return "?";
}

inline std::string factor_label(const InteractionRecord& r, Factor f) {
  switch (f) {
    case Factor::Level: return level_label(r);
    case Factor::Subject: return subject_label(r);
    case Factor::KcType: return kc_type_label(r);
  }
  return {};
}

/// Sum-to-zero coding of one factor: K levels give K-1 intercept contrasts at
/// [intercept_col, intercept_col + K-1) and K-1 slope interactions at
/// [slope_col, slope_col + K-1). The last level is coded -1 in every contrast.
struct FactorCoding {
  Factor factor = Factor::Level;
  std::vector<std::string> levels;
  Eigen::Index intercept_col = 0;
  Eigen::Index slope_col = 0;

  Eigen::Index n_contrasts() const {
    return levels.empty() ? 0 : static_cast<Eigen::Index>(levels.size()) - 1;
  }
  std::optional<std::size_t> index_of(const std::string& label) const {
    auto it = std::lower_bound(levels.begin(), levels.end(), label);
    if (it == levels.end() || *it != label) return std::nullopt;
    return static_cast<std::size_t>(it - levels.begin());
  }
};

struct StudentBlock {
  std::string student_id;
  Eigen::Index begin = 0;
  Eigen::Index end = 0;
  Eigen::Index size() const { return end - begin; }
};

inline constexpr Eigen::Index kInterceptCol = 0;
inline constexpr Eigen::Index kSlopeCol = 1;
inline constexpr Eigen::Index kFirstTypeCol = 2;

/// Fixed-effect design plus per-student random-effect covariates [1, T_scaled].
struct DesignMatrices {
  RowMatrix fixed;
  std::vector<std::string> column_names;
  Eigen::VectorXd t_scaled;
  Eigen::VectorXd response;  // 0 or 1
  std::vector<StudentBlock> blocks;

  double t_scale = 0.01;
  ModelSpec spec;
  /// Observed exercise types in enum order; all but the last own a contrast.
  std::vector<ExerciseType> exercise_types;
  Eigen::Index simplified_col = 0;
  std::vector<FactorCoding> factors;

  Eigen::Index n_fixed() const { return fixed.cols(); }
  Eigen::Index n_rows() const { return fixed.rows(); }
};

namespace detail {

inline void fill_contrast(Eigen::Ref<Eigen::RowVectorXd> row, Eigen::Index first,
                          std::size_t level, std::size_t n_levels, double scale) {
  if (n_levels < 2) return;
  if (level + 1 == n_levels) {
    row.segment(first, static_cast<Eigen::Index>(n_levels) - 1).setConstant(-scale);
  } else {
    row(first + static_cast<Eigen::Index>(level)) = scale;
  }
}

inline const std::vector<std::string>& levels_of(const FactorLevels& fl, Factor f) {
  switch (f) {
    case Factor::Level: return fl.levels;
    case Factor::Subject: return fl.subjects;
    case Factor::KcType: return fl.kc_types;
  }
  return fl.levels;
}

}  // namespace detail

/// Column order: intercept, T_scaled, exercise-type contrasts (enum order),
/// simplified, then level / subject / kc_type blocks, each block listing its
/// intercept contrasts before its slope interactions.
inline DesignMatrices build_design(const Dataset& d, const ModelSpec& spec,
                                   double t_scale) {
  if (d.rows.empty()) throw Error(ErrorCode::EmptyDataset, "cannot build a design");
  if (!(t_scale > 0.0 && t_scale <= 1.0))
    throw Error(ErrorCode::InvalidParameter, "t_scale must be in (0, 1]");

  DesignMatrices dm;
  dm.t_scale = t_scale;
  dm.spec = spec;

  bool seen[kExerciseTypes.size()] = {};
  for (const auto& row : d.rows) seen[static_cast<std::size_t>(row.record.exercise_type)] = true;
  for (auto t : kExerciseTypes)
    if (seen[static_cast<std::size_t>(t)]) dm.exercise_types.push_back(t);

  dm.column_names = {"intercept", "T_scaled"};
  const auto n_type_contrasts = static_cast<Eigen::Index>(dm.exercise_types.size()) - 1;
  for (Eigen::Index j = 0; j < n_type_contrasts; ++j)
    dm.column_names.push_back("type:" + std::string(to_string(dm.exercise_types[j])));
  dm.simplified_col = static_cast<Eigen::Index>(dm.column_names.size());
  dm.column_names.push_back("simplified");

  const std::pair<bool, Factor> blocks[] = {{spec.include_level, Factor::Level},
                                            {spec.include_subject, Factor::Subject},
                                            {spec.include_kc_type, Factor::KcType}};
  for (auto [on, factor] : blocks) {
    if (!on) continue;
    FactorCoding fc;
    fc.factor = factor;
    fc.levels = detail::levels_of(d.factor_levels, factor);
    fc.intercept_col = static_cast<Eigen::Index>(dm.column_names.size());
    for (Eigen::Index j = 0; j < fc.n_contrasts(); ++j)
      dm.column_names.push_back(std::string(to_string(factor)) + ":" + fc.levels[j]);
    fc.slope_col = static_cast<Eigen::Index>(dm.column_names.size());
    for (Eigen::Index j = 0; j < fc.n_contrasts(); ++j)
      dm.column_names.push_back(std::string(to_string(factor)) + ":" + fc.levels[j] +
                                ":T_scaled");
    dm.factors.push_back(std::move(fc));
  }

  const auto n = static_cast<Eigen::Index>(d.rows.size());
  const auto p = static_cast<Eigen::Index>(dm.column_names.size());
  dm.fixed = RowMatrix::Zero(n, p);
  dm.t_scaled.resize(n);
  dm.response.resize(n);

  std::unordered_set<std::string_view> finished_students;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = d.rows[static_cast<std::size_t>(i)];
    const auto& r = row.record;
    const double t = static_cast<double>(row.opportunity_index) * t_scale;
    auto x = dm.fixed.row(i);
    x(kInterceptCol) = 1.0;
    x(kSlopeCol) = t;
    const auto type_pos = static_cast<std::size_t>(
        std::find(dm.exercise_types.begin(), dm.exercise_types.end(), r.exercise_type) -
        dm.exercise_types.begin());
    detail::fill_contrast(x, kFirstTypeCol, type_pos, dm.exercise_types.size(), 1.0);
    x(dm.simplified_col) = r.simplified ? 1.0 : 0.0;
    for (const auto& fc : dm.factors) {
      const auto label = factor_label(r, fc.factor);
      const auto idx = fc.index_of(label);
      if (!idx)
        throw Error(ErrorCode::UnknownFactorLevel,
                    std::string(to_string(fc.factor)) + " '" + label + "'");
      detail::fill_contrast(x, fc.intercept_col, *idx, fc.levels.size(), 1.0);
      detail::fill_contrast(x, fc.slope_col, *idx, fc.levels.size(), t);
    }
    dm.t_scaled(i) = t;
    dm.response(i) = r.correct ? 1.0 : 0.0;

    if (dm.blocks.empty() || dm.blocks.back().student_id != r.student_id) {
      if (i > 0) finished_students.insert(d.rows[static_cast<std::size_t>(i) - 1].record.student_id);
      if (finished_students.contains(r.student_id))
        throw Error(ErrorCode::InvalidParameter,
                    "rows of student '" + r.student_id + "' are not contiguous");
      dm.blocks.push_back({r.student_id, i, i});
    }
    dm.blocks.back().end = i + 1;
  }
  return dm;
}

}  // namespace iafm::glmm
