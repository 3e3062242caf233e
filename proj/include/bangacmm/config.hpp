#pragma once

// Line-oriented key=value files with dotted section prefixes:
//
//   # comment
//   train.batch_size = 16
//   fusion.strategy = intermediate
//
// Used for run configs, synthetic-data SPEC files, model manifests inside
// checkpoints and the machine-readable report.

#include <charconv>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace bangacmm {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class KeyValues {
 public:
  static KeyValues parse(std::istream& is, const std::string& source = "<input>") {
    KeyValues kv;
    std::string line;
    for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ParseError(source + ":" + std::to_string(lineno) + ": expected key=value");
      }
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw ParseError(source + ":" + std::to_string(lineno) + ": empty key");
      if (kv.values_.count(key)) {
        throw ParseError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      }
      kv.values_[key] = trim(t.substr(eq + 1));
      kv.lines_[key] = lineno;
    }
    return kv;
  }

  static KeyValues parse_text(const std::string& text, const std::string& source = "<text>") {
    std::istringstream is(text);
    return parse(is, source);
  }

  static KeyValues load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file '" + path + "'");
    return parse(is, path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& at(const std::string& key) const { return values_.at(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

  void write(std::ostream& os) const {
    for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
  }
  std::string to_text() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
};

// Typed reads from KeyValues that collect every problem before failing.
class ConfigReader {
 public:
  explicit ConfigReader(const KeyValues& kv) : kv_(kv) {}

  void size(const std::string& key, std::size_t& out, std::size_t min = 0) {
    read(key, [&](const std::string& v) -> std::string {
      std::size_t x = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
      if (ec != std::errc{} || p != v.data() + v.size()) return "expected a non-negative integer";
      if (x < min) return "must be at least " + std::to_string(min);
      out = x;
      return "";
    });
  }

  void u64(const std::string& key, std::uint64_t& out) {
    read(key, [&](const std::string& v) -> std::string {
      std::uint64_t x = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
      if (ec != std::errc{} || p != v.data() + v.size()) return "expected a non-negative integer";
      out = x;
      return "";
    });
  }

  void real(const std::string& key, double& out) {
    read(key, [&](const std::string& v) -> std::string {
      try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) return "expected a number";
        out = x;
        return "";
      } catch (const std::exception&) {
        return "expected a number";
      }
    });
  }

  void flag(const std::string& key, bool& out) {
    read(key, [&](const std::string& v) -> std::string {
      if (v == "true" || v == "1" || v == "yes") {
        out = true;
      } else if (v == "false" || v == "0" || v == "no") {
        out = false;
      } else {
        return "expected true or false";
      }
      return "";
    });
  }

  void text(const std::string& key, std::string& out) {
    read(key, [&](const std::string& v) -> std::string {
      out = v;
      return "";
    });
  }

  // Parses with a callback that throws ConfigError on bad values.
  template <class T, class Parse>
  void choice(const std::string& key, T& out, Parse parse) {
    seen_.insert(key);
    if (!kv_.has(key)) return;
    try {
      out = parse(kv_.at(key));
    } catch (const ConfigError& e) {
      errors_.push_back(key + ": " + e.what());
    }
  }

  void error(const std::string& message) { errors_.push_back(message); }

  void ignore_prefix(const std::string& prefix) { ignored_prefixes_.push_back(prefix); }

  // Throws one ConfigError listing every problem, including unknown keys.
  void finish(bool reject_unknown = true) {
    if (reject_unknown) {
      for (const auto& [k, v] : kv_.values()) {
        if (seen_.count(k)) continue;
        bool ignored = false;
        for (const auto& p : ignored_prefixes_) ignored = ignored || k.rfind(p, 0) == 0;
        if (!ignored) errors_.push_back(k + ": unknown key");
      }
    }
    if (!errors_.empty()) {
      std::string msg = "configuration errors:";
      for (const auto& e : errors_) msg += "\n  " + e;
      throw ConfigError(msg);
    }
  }

  const std::vector<std::string>& errors() const { return errors_; }

 private:
  void read(const std::string& key, const std::function<std::string(const std::string&)>& parse) {
    seen_.insert(key);
    if (!kv_.has(key)) return;
    const std::string problem = parse(kv_.at(key));
    if (!problem.empty()) errors_.push_back(key + ": " + problem + " (got '" + kv_.at(key) + "')");
  }

  const KeyValues& kv_;
  std::set<std::string> seen_;
  std::vector<std::string> errors_;
  std::vector<std::string> ignored_prefixes_;
};

}  // namespace bangacmm
