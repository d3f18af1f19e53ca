#pragma once

// Line-oriented `key = value` text with dotted section prefixes. `#` starts
// a comment line.

#include <charconv>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bvs/errors.hpp"

namespace bvs::kv {

using Map = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline Map parse(const std::string& text) {
  Map out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected `key = value`");
    const auto key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (out.count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key " + key);
    out[key] = trim(t.substr(eq + 1));
  }
  return out;
}

inline std::string serialize(const Map& m) {
  std::string out;
  for (const auto& [k, v] : m) out += k + " = " + v + "\n";
  return out;
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

/// Reads typed values out of a map and records which keys were consumed so
/// leftovers can be rejected.
class Reader {
 public:
  explicit Reader(const Map& m) : m_(m) {}

  bool has(const std::string& key) const { return m_.count(key) > 0; }

  template <std::unsigned_integral U>
  void get(const std::string& key, U& out) {
    if (auto* v = take(key)) out = static_cast<U>(parse_uint(key, *v));
  }
  void get(const std::string& key, double& out) {
    if (auto* v = take(key)) {
      try {
        std::size_t used = 0;
        out = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected a number, got `" + *v + "`");
      }
    }
  }
  void get(const std::string& key, bool& out) {
    if (auto* v = take(key)) {
      if (*v == "true" || *v == "1")
        out = true;
      else if (*v == "false" || *v == "0")
        out = false;
      else
        throw ConfigError("config key " + key + ": expected true/false, got `" + *v + "`");
    }
  }
  void get(const std::string& key, std::string& out) {
    if (auto* v = take(key)) out = *v;
  }
  void get(const std::string& key, std::vector<std::size_t>& out) {
    if (auto* v = take(key)) {
      out.clear();
      if (v->empty()) return;
      std::stringstream ss(*v);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(static_cast<std::size_t>(parse_uint(key, trim(item))));
    }
  }

  void reject_unknown() const {
    for (const auto& [k, v] : m_)
      if (!used_.count(k)) throw ConfigError("unknown config key: " + k);
  }

 private:
  const std::string* take(const std::string& key) {
    auto it = m_.find(key);
    if (it == m_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  static std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end || v.empty())
      throw ConfigError("config key " + key + ": expected a non-negative integer, got `" + v + "`");
    return out;
  }

  const Map& m_;
  std::set<std::string> used_;
};

}  // namespace bvs::kv
