#pragma once

#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

namespace logo::csv {

/// RFC-4180 field: quoted when it contains a comma, quote or line break.
inline std::string field(std::string_view value) {
  if (value.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t k = 0; k < fields.size(); ++k) {
    if (k) out += ',';
    out += field(fields[k]);
  }
  out += "\r\n";
  return out;
}

/// Nine significant digits; the number format of every emitted table.
inline std::string num(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

/// Splits RFC-4180 text into rows of unquoted fields.
std::vector<std::vector<std::string>> parse(std::string_view text);

}  // namespace logo::csv
