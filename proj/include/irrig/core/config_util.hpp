#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "irrig/core/error.hpp"

namespace irrig {

using json = nlohmann::json;

/// Throws FormatError if `j` holds a key outside `allowed`.
inline void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed,
                                std::string_view context) {
  if (!j.is_object()) throw FormatError(std::string(context) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw FormatError(std::string(context) + ": unknown key '" + key + "'");
  }
}

template <class T>
void read_opt(const json& j, std::string_view key, T& out) {
  if (auto it = j.find(std::string(key)); it != j.end()) out = it->get<T>();
}

}  // namespace irrig
