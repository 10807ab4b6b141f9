#pragma once

#include <charconv>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>

#include "arbor_slam/csv.hpp"
#include "arbor_slam/error.hpp"

namespace arbor_slam {

/// Plain-text `key = value` settings. `#` starts a comment. Every key must be consumed by some reader,
/// otherwise `check_consumed` fails, so typos never pass silently.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& source = "<config>") {
    KeyValueConfig cfg;
    cfg.source_ = source;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t nl = text.find('\n', pos);
      std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = csv::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError(source, line_no, "expected 'key = value'");
      const std::string key{csv::trim(line.substr(0, eq))};
      const std::string value{csv::trim(line.substr(eq + 1))};
      if (key.empty()) throw ParseError(source, line_no, "empty key");
      if (cfg.entries_.count(key)) throw ParseError(source, line_no, "duplicate key '" + key + "'");
      cfg.entries_[key] = Entry{value, line_no, false};
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIo, path + ": cannot open config");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  /// Sets or replaces a key (command-line overrides).
  void set(const std::string& key, const std::string& value) { entries_[key] = Entry{value, 0, false}; }

  bool read(const std::string& key, double& out) {
    auto* e = take(key);
    if (e && !csv::parse_double(e->value, out)) fail(*e, key, "expected a number");
    return e != nullptr;
  }

  template <typename Int>
    requires std::is_integral_v<Int>
  bool read(const std::string& key, Int& out) {
    auto* e = take(key);
    if (e) {
      long long v = 0;
      const auto* end = e->value.data() + e->value.size();
      const auto [ptr, ec] = std::from_chars(e->value.data(), end, v);
      if (ec != std::errc{} || ptr != end) fail(*e, key, "expected an integer");
      if constexpr (std::is_unsigned_v<Int>) {
        if (v < 0) fail(*e, key, "must be non-negative");
      }
      out = static_cast<Int>(v);
    }
    return e != nullptr;
  }

  bool read(const std::string& key, bool& out) {
    auto* e = take(key);
    if (e) {
      if (e->value == "true" || e->value == "1") {
        out = true;
      } else if (e->value == "false" || e->value == "0") {
        out = false;
      } else {
        fail(*e, key, "expected true or false");
      }
    }
    return e != nullptr;
  }

  bool read(const std::string& key, std::string& out) {
    auto* e = take(key);
    if (e) out = e->value;
    return e != nullptr;
  }

  void check_consumed() const {
    for (const auto& [key, e] : entries_) {
      if (!e.consumed) throw ParseError(source_, e.line, "unknown key '" + key + "'");
    }
  }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
    bool consumed = false;
  };

  Entry* take(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    it->second.consumed = true;
    return &it->second;
  }

  [[noreturn]] void fail(const Entry& e, const std::string& key, const std::string& msg) const {
    throw ParseError(source_, e.line, key + ": " + msg + " (got '" + e.value + "')");
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
};

}  // namespace arbor_slam
