#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <istream>
#include <iterator>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "iafm/csv.hpp"
#include "iafm/data_model.hpp"
#include "iafm/error.hpp"
#include "iafm/stats.hpp"

namespace iafm {

enum class InputFormat { CSV, JSONL };

inline constexpr std::array<std::string_view, 10> kInteractionColumns = {
    "student_id", "kc_id",      "exercise_id", "timestamp_ms", "correct",
    "exercise_type", "simplified", "subject",  "level",        "kc_type"};

/// Filtered interaction log, sorted by (student_id, kc_id, opportunity_index).
struct Dataset {
  std::vector<OpportunityRow> rows;
  FactorLevels factor_levels;
  std::string provenance;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetSummary {
  std::size_t n_rows = 0;
  std::size_t n_students = 0;
  std::size_t n_kcs = 0;
  double median_kcs_per_student = 0.0;
  std::pair<double, double> iqr_kcs_per_student{0.0, 0.0};
  double overall_accuracy = 0.0;
};

namespace detail {

inline bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong encodings, surrogates, and values past U+10FFFF.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) ||
        (extra == 3 && cp < 0x10000) || cp > 0x10FFFF ||
        (cp >= 0xD800 && cp <= 0xDFFF))
      return false;
    i += extra + 1;
  }
  return true;
}

inline std::string at_line(std::size_t line, std::string_view what) {
  return "line " + std::to_string(line) + ": " + std::string(what);
}

inline bool parse_bool_field(std::string_view v, std::size_t line,
                             std::string_view column) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw Error(ErrorCode::MalformedRow,
              at_line(line, std::string(column) + " must be true or false, got '" +
                                std::string(v) + "'"));
}

inline std::int64_t parse_timestamp_field(std::string_view v, std::size_t line) {
  std::int64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end)
    throw Error(ErrorCode::MalformedRow,
                at_line(line, "timestamp_ms is not an integer: '" + std::string(v) + "'"));
  return out;
}

// Shared by the CSV and JSONL paths: string-typed fields to a validated record.
struct RawFields {
  std::string student_id, kc_id, exercise_id;
  std::int64_t timestamp = 0;
  bool correct = false;
  std::string exercise_type;
  bool simplified = false;
  std::string subject, level, kc_type;
};

inline InteractionRecord to_record(RawFields raw, std::size_t line) {
  InteractionRecord r;
  r.student_id = std::move(raw.student_id);
  r.kc_id = std::move(raw.kc_id);
  r.exercise_id = std::move(raw.exercise_id);
  r.timestamp = raw.timestamp;
  r.correct = raw.correct;
  const auto type = parse_exercise_type(raw.exercise_type);
  if (!type)
    throw Error(ErrorCode::UnknownExerciseType,
                at_line(line, "exercise_type '" + raw.exercise_type + "'"));
  r.exercise_type = *type;
  r.simplified = raw.simplified;
  if (!raw.subject.empty()) r.subject = std::move(raw.subject);
  if (!raw.level.empty()) r.level = std::move(raw.level);
  if (!raw.kc_type.empty()) {
    const auto kt = parse_kc_type(raw.kc_type);
    if (!kt)
      throw Error(ErrorCode::MalformedRow,
                  at_line(line, "unknown kc_type '" + raw.kc_type + "'"));
    r.kc_type = *kt;
  }
  try {
    validate_record(r);
  } catch (const Error& e) {
    throw Error(e.code(), at_line(line, e.detail()));
  }
  return r;
}

inline std::vector<InteractionRecord> parse_csv(std::string_view text) {
  const auto records = csv::read(text);
  std::vector<InteractionRecord> out;
  if (records.empty()) throw Error(ErrorCode::SchemaMismatch, "missing header row");

  const auto& header = records.front().fields;
  std::array<std::size_t, kInteractionColumns.size()> col{};
  for (std::size_t c = 0; c < kInteractionColumns.size(); ++c) {
    auto it = std::find(header.begin(), header.end(), kInteractionColumns[c]);
    if (it == header.end())
      throw Error(ErrorCode::SchemaMismatch,
                  "missing column '" + std::string(kInteractionColumns[c]) + "'");
    col[c] = static_cast<std::size_t>(it - header.begin());
  }

  out.reserve(records.size() - 1);
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.fields.size() != header.size())
      throw Error(ErrorCode::MalformedRow,
                  at_line(rec.line, "expected " + std::to_string(header.size()) +
                                        " fields, got " +
                                        std::to_string(rec.fields.size())));
    const auto& f = rec.fields;
    RawFields raw;
    raw.student_id = f[col[0]];
    raw.kc_id = f[col[1]];
    raw.exercise_id = f[col[2]];
    raw.timestamp = parse_timestamp_field(f[col[3]], rec.line);
    raw.correct = parse_bool_field(f[col[4]], rec.line, "correct");
    raw.exercise_type = f[col[5]];
    raw.simplified = parse_bool_field(f[col[6]], rec.line, "simplified");
    raw.subject = f[col[7]];
    raw.level = f[col[8]];
    raw.kc_type = f[col[9]];
    out.push_back(to_record(std::move(raw), rec.line));
  }
  return out;
}

inline std::vector<InteractionRecord> parse_jsonl(std::string_view text) {
  using nlohmann::json;
  std::vector<InteractionRecord> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::MalformedRow, at_line(line_no, e.what()));
    }
    if (!obj.is_object())
      throw Error(ErrorCode::MalformedRow, at_line(line_no, "not a JSON object"));
    for (auto key : kInteractionColumns)
      if (!obj.contains(std::string(key)))
        throw Error(ErrorCode::SchemaMismatch,
                    at_line(line_no, "missing key '" + std::string(key) + "'"));

    auto text_of = [&](const char* key, bool optional) -> std::string {
      const auto& v = obj.at(key);
      if (v.is_string()) return v.get<std::string>();
      if (optional && v.is_null()) return {};
      throw Error(ErrorCode::MalformedRow,
                  at_line(line_no, std::string(key) + " must be a string"));
    };
    auto bool_of = [&](const char* key) -> bool {
      const auto& v = obj.at(key);
      if (v.is_boolean()) return v.get<bool>();
      if (v.is_string()) return parse_bool_field(v.get<std::string>(), line_no, key);
      throw Error(ErrorCode::MalformedRow,
                  at_line(line_no, std::string(key) + " must be true or false"));
    };

    RawFields raw;
    raw.student_id = text_of("student_id", false);
    raw.kc_id = text_of("kc_id", false);
    raw.exercise_id = text_of("exercise_id", false);
    const auto& ts = obj.at("timestamp_ms");
    if (ts.is_number_integer())
      raw.timestamp = ts.get<std::int64_t>();
    else if (ts.is_string())
      raw.timestamp = parse_timestamp_field(ts.get<std::string>(), line_no);
    else
      throw Error(ErrorCode::MalformedRow,
                  at_line(line_no, "timestamp_ms must be an integer"));
    raw.correct = bool_of("correct");
    raw.exercise_type = text_of("exercise_type", false);
    raw.simplified = bool_of("simplified");
    raw.subject = text_of("subject", true);
    raw.level = text_of("level", true);
    raw.kc_type = text_of("kc_type", true);
    out.push_back(to_record(std::move(raw), line_no));
  }
  return out;
}

// Total order used to canonicalize; every field participates so that exact
// duplicates are the only rows whose relative order is unobservable.
inline auto sort_key(const InteractionRecord& r) {
  return std::tie(r.student_id, r.kc_id, r.timestamp, r.exercise_id, r.correct,
                  r.exercise_type, r.simplified, r.subject, r.level, r.kc_type);
}

}  // namespace detail

inline std::vector<InteractionRecord> parse_interactions(std::string_view bytes,
                                                         InputFormat format) {
  if (!detail::is_valid_utf8(bytes))
    throw Error(ErrorCode::DecodeError, "input is not valid UTF-8");
  if (bytes.starts_with("\xEF\xBB\xBF")) bytes.remove_prefix(3);
  return format == InputFormat::CSV ? detail::parse_csv(bytes)
                                    : detail::parse_jsonl(bytes);
}

inline std::vector<InteractionRecord> parse_interactions(std::istream& in,
                                                         InputFormat format) {
  std::string bytes{std::istreambuf_iterator<char>(in),
                    std::istreambuf_iterator<char>()};
  return parse_interactions(std::string_view(bytes), format);
}

inline std::vector<OpportunityRow> assign_opportunity_counts(
    std::vector<InteractionRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) {
              return detail::sort_key(a) < detail::sort_key(b);
            });
  std::vector<OpportunityRow> out;
  out.reserve(records.size());
  int index = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!out.empty() && (records[i].student_id != out.back().record.student_id ||
                         records[i].kc_id != out.back().record.kc_id))
      index = 0;
    out.push_back({std::move(records[i]), index++});
  }
  return out;
}

namespace detail {

inline std::vector<OpportunityRow> drop_sparse_kcs(std::vector<OpportunityRow> rows,
                                                   int min_kc_interactions) {
  std::unordered_map<std::string, int> kc_count;
  for (const auto& row : rows) ++kc_count[row.record.kc_id];
  std::erase_if(rows, [&](const OpportunityRow& row) {
    return kc_count[row.record.kc_id] < min_kc_interactions;
  });
  return rows;
}

inline void sort_canonical(std::vector<OpportunityRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.record.student_id, a.record.kc_id, a.opportunity_index) <
           std::tie(b.record.student_id, b.record.kc_id, b.opportunity_index);
  });
}

inline Dataset finish(std::vector<OpportunityRow> rows, std::string provenance) {
  if (rows.empty())
    throw Error(ErrorCode::EmptyDataset, "no rows survive filtering");
  sort_canonical(rows);
  Dataset d;
  d.factor_levels = build_factor_levels(rows);
  d.rows = std::move(rows);
  d.provenance = std::move(provenance);
  return d;
}

}  // namespace detail

/// KC-count filter on pre-truncation counts (aggregated over students), then
/// index truncation. Single pass; indices are not recomputed.
inline Dataset apply_filters(std::vector<OpportunityRow> rows,
                             const FilterConfig& config,
                             std::string provenance = {}) {
  config.validate();
  rows = detail::drop_sparse_kcs(std::move(rows), config.min_kc_interactions);
  std::erase_if(rows, [&](const OpportunityRow& row) {
    return row.opportunity_index >= config.max_opportunity_index;
  });
  return detail::finish(std::move(rows), std::move(provenance));
}

/// Alternates both filters until neither removes a row.
inline Dataset apply_filters_fixpoint(std::vector<OpportunityRow> rows,
                                      const FilterConfig& config,
                                      std::string provenance = {}) {
  config.validate();
  for (;;) {
    const auto before = rows.size();
    rows = detail::drop_sparse_kcs(std::move(rows), config.min_kc_interactions);
    std::erase_if(rows, [&](const OpportunityRow& row) {
      return row.opportunity_index >= config.max_opportunity_index;
    });
    if (rows.size() == before) break;
  }
  return detail::finish(std::move(rows), std::move(provenance));
}

inline DatasetSummary dataset_summary(const Dataset& d) {
  if (d.rows.empty()) throw Error(ErrorCode::EmptyDataset, "summary of empty dataset");
  DatasetSummary s;
  s.n_rows = d.rows.size();
  std::map<std::string_view, std::vector<std::string_view>> kcs_by_student;
  std::unordered_map<std::string_view, char> kcs;
  std::size_t n_correct = 0;
  for (const auto& row : d.rows) {
    auto& list = kcs_by_student[row.record.student_id];
    // rows are grouped by (student, kc) so a change of KC is a new KC
    if (list.empty() || list.back() != row.record.kc_id) list.push_back(row.record.kc_id);
    kcs.emplace(row.record.kc_id, 0);
    n_correct += row.record.correct ? 1 : 0;
  }
  s.n_students = kcs_by_student.size();
  s.n_kcs = kcs.size();
  std::vector<double> per_student;
  per_student.reserve(kcs_by_student.size());
  for (const auto& [_, list] : kcs_by_student)
    per_student.push_back(static_cast<double>(list.size()));
  std::sort(per_student.begin(), per_student.end());
  s.median_kcs_per_student = quantile_sorted(per_student, 0.5);
  s.iqr_kcs_per_student = {quantile_sorted(per_student, 0.25),
                           quantile_sorted(per_student, 0.75)};
  s.overall_accuracy = static_cast<double>(n_correct) / static_cast<double>(s.n_rows);
  return s;
}

inline nlohmann::ordered_json to_json(const DatasetSummary& s) {
  nlohmann::ordered_json j;
  j["n_rows"] = s.n_rows;
  j["n_students"] = s.n_students;
  j["n_kcs"] = s.n_kcs;
  j["median_kcs_per_student"] = s.median_kcs_per_student;
  j["iqr_kcs_per_student"] = {s.iqr_kcs_per_student.first, s.iqr_kcs_per_student.second};
  j["overall_accuracy"] = s.overall_accuracy;
  return j;
}

/// Writes rows in the ingest CSV schema (header included).
inline void write_interactions_csv(std::ostream& os,
                                   std::span<const OpportunityRow> rows) {
  std::vector<std::string> fields(kInteractionColumns.begin(), kInteractionColumns.end());
  csv::write_row(os, fields);
  for (const auto& row : rows) {
    const auto& r = row.record;
    fields = {r.student_id,
              r.kc_id,
              r.exercise_id,
              std::to_string(r.timestamp),
              r.correct ? "true" : "false",
              std::string(to_string(r.exercise_type)),
              r.simplified ? "true" : "false",
              r.subject.value_or(""),
              r.level.value_or(""),
              r.kc_type ? std::string(to_string(*r.kc_type)) : std::string()};
    csv::write_row(os, fields);
  }
}

/// parse -> assign opportunities -> filter.
inline Dataset load_dataset(std::string_view bytes, InputFormat format,
                            const FilterConfig& config, bool fixpoint = false,
                            std::string provenance = {}) {
  auto rows = assign_opportunity_counts(parse_interactions(bytes, format));
  return fixpoint ? apply_filters_fixpoint(std::move(rows), config, std::move(provenance))
                  : apply_filters(std::move(rows), config, std::move(provenance));
}

}  // namespace iafm
