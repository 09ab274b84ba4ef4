#pragma once

// Strict JSON field readers shared by the config parsers. Every error names
// the offending key.

#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "p2t/error.hpp"

namespace p2t::json_fields {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

inline std::size_t get_size(const json& j, const std::string& key) {
  if (!j.is_number_integer() || j.get<long long>() < 0) throw ConfigError(key + ": expected a non-negative integer");
  return j.get<std::size_t>();
}

inline std::vector<std::size_t> get_sizes(const json& j, const std::string& key) {
  if (!j.is_array()) throw ConfigError(key + ": expected an array of integers");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_size(j[i], key + "[" + std::to_string(i) + "]"));
  return out;
}

inline bool get_bool(const json& j, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError(key + ": expected a boolean");
  return j.get<bool>();
}

inline double get_number(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError(key + ": expected a number");
  return j.get<double>();
}

inline std::string get_string(const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError(key + ": expected a string");
  return j.get<std::string>();
}

}  // namespace p2t::json_fields
