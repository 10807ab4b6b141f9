#pragma once

#include <array>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "arbor_slam/error.hpp"

namespace arbor_slam::csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

/// Shortest round-trip decimal representation.
inline std::string format(double value) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return {buf.data(), ptr};
}

/// Fixed-point representation with `digits` decimals.
inline std::string format_fixed(double value, int digits) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] =
      std::to_chars(buf.data(), buf.data() + buf.size(), value, std::chars_format::fixed, digits);
  return {buf.data(), ptr};
}

/// Streams a numeric CSV file with a mandatory header row.
class NumericReader {
 public:
  NumericReader(const std::string& path, std::vector<std::string> expected_header)
      : path_(path), in_(path), columns_(expected_header.size()) {
    if (!in_) {
      throw Error(ErrorCode::kIo, path + ": cannot open for reading");
    }
    std::string line;
    if (!std::getline(in_, line)) {
      throw ParseError(path_, 1, "missing header row");
    }
    line_number_ = 1;
    std::vector<std::string> header;
    split(line, [&](std::string_view field) { header.emplace_back(trim(field)); });
    if (header != expected_header) {
      std::string want;
      for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
      throw ParseError(path_, 1, "expected header '" + want + "'");
    }
  }

  /// Reads the next data row into `row`. Returns false at end of file. Blank lines are skipped.
  bool next(std::vector<double>& row) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_number_;
      if (trim(line).empty()) continue;
      row.clear();
      bool ok = true;
      split(line, [&](std::string_view field) {
        double v = 0.0;
        if (!parse_double(field, v)) ok = false;
        row.push_back(v);
      });
      if (!ok) {
        throw ParseError(path_, line_number_, "non-numeric field");
      }
      if (row.size() != columns_) {
        throw ParseError(path_, line_number_,
                         "expected " + std::to_string(columns_) + " fields, got " + std::to_string(row.size()));
      }
      return true;
    }
    return false;
  }

  [[nodiscard]] std::size_t line_number() const { return line_number_; }
  [[nodiscard]] const std::string& path() const { return path_; }

 private:
  template <typename Fn>
  static void split(std::string_view line, Fn&& fn) {
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string_view::npos) {
        fn(line.substr(start));
        return;
      }
      fn(line.substr(start, comma - start));
      start = comma + 1;
    }
  }

  std::string path_;
  std::ifstream in_;
  std::size_t columns_;
  std::size_t line_number_ = 0;
};

}  // namespace arbor_slam::csv
