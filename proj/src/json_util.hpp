#pragma once

#include <array>
#include <set>
#include <string>
#include <utility>

#include "cvnn/errors.hpp"
#include "json.hpp"

namespace cvnn::detail {

using Json = nlohmann::json;

template <class E, std::size_t N>
using EnumTable = std::array<std::pair<E, const char*>, N>;

template <class E, std::size_t N>
const char* enum_name(const EnumTable<E, N>& table, E value) {
  for (const auto& [e, name] : table) {
    if (e == value) return name;
  }
  throw ArgumentError("unnamed enum value");
}

template <class E, std::size_t N>
E enum_parse(const EnumTable<E, N>& table, const std::string& text, const char* what) {
  std::string options;
  for (const auto& [e, name] : table) {
    if (text == name) return e;
    options += options.empty() ? name : std::string("|") + name;
  }
  throw ArgumentError(std::string("invalid ") + what + " '" + text + "' (expected " + options + ")");
}

inline Json parse_json(const std::string& text, const char* what) {
  try {
    return text.empty() ? Json::object() : Json::parse(text);
  } catch (const Json::exception& e) {
    throw ArgumentError(std::string("malformed ") + what + ": " + e.what());
  }
}

/// Rejects keys outside `known` so that typos fail loudly.
inline void check_keys(const Json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw ArgumentError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ArgumentError(std::string("unknown ") + what + " key '" + key + "'");
  }
}

template <class T>
void read_field(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ArgumentError(std::string("field '") + key + "' has the wrong type");
  }
}

template <class E, std::size_t N>
void read_enum(const Json& j, const char* key, const EnumTable<E, N>& table, E& out) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) throw ArgumentError(std::string("field '") + key + "' must be a string");
  out = enum_parse(table, j.at(key).get<std::string>(), key);
}

}  // namespace cvnn::detail
