#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "iafm/error.hpp"

namespace iafm::csv {

struct Record {
  std::size_t line = 0;  // 1-based line on which the record starts
  std::vector<std::string> fields;
};

/// Splits RFC-4180 text into records. Quoted fields may contain commas,
/// doubled quotes, and line breaks; CRLF and LF are both accepted. Blank lines
/// are skipped.
inline std::vector<Record> read(std::string_view text) {
  std::vector<Record> out;
  Record current;
  std::string field;
  std::size_t line = 1;
  current.line = 1;
  bool in_quotes = false;
  bool field_started = false;  // distinguishes "" from a blank line
  bool after_quote = false;

  auto end_field = [&] {
    current.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
    after_quote = false;
  };
  auto end_record = [&] {
    if (field_started || !current.fields.empty()) {
      end_field();
      out.push_back(std::move(current));
    }
    current = Record{};
    current.line = line;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
          after_quote = true;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !field.empty())
          throw Error(ErrorCode::MalformedRow,
                      "line " + std::to_string(line) + ": stray quote");
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        field_started = true;
        end_field();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        ++line;
        end_record();
        break;
      default:
        if (after_quote)
          throw Error(ErrorCode::MalformedRow,
                      "line " + std::to_string(line) +
                          ": text after closing quote");
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes)
    throw Error(ErrorCode::MalformedRow,
                "line " + std::to_string(current.line) + ": unterminated quote");
  end_record();
  return out;
}

inline void write_field(std::ostream& os, std::string_view value) {
  if (value.find_first_of(",\"\r\n") == std::string_view::npos) {
    os << value;
    return;
  }
  os << '"';
  for (char c : value) {
    if (c == '"') os << '"';
    os << c;
  }
  os << '"';
}

inline void write_row(std::ostream& os, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) os << ',';
    write_field(os, fields[i]);
  }
  os << '\n';
}

}  // namespace iafm::csv
