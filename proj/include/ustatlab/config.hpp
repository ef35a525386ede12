#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "ustatlab/chain.hpp"
#include "ustatlab/kernels.hpp"

namespace ustatlab {

/// Malformed or inconsistent configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses the plain-text config grammar:
///
///   # comment
///   key = value
///   [section]          (or [section.sub])
///   key = "string" | 1.5 | -3 | true | false | [v, v, ...]
///
/// Arrays may nest and span several lines. Keys are [A-Za-z0-9_-]+.
nlohmann::ordered_json parse_config(const std::string& text);

/// Inverse of parse_config: scalars first, then one [section] per table.
std::string serialize_config(const nlohmann::ordered_json& config);

/// [model] kind = "finite" | "ar1" | "arch".
ChainModel model_from_config(const nlohmann::ordered_json& model);

/// [model] initial = "stationary" | "point:..." | [p_0, ..., p_{S-1}].
InitialLaw initial_from_config(const nlohmann::ordered_json& model);

/// [kernel] kind = "table" | "product" | "cosine" | "indicator-equal" |
/// "indicator-less" | "wilcoxon" | "constant", weights = "unit" |
/// "inverse-gap" | "inverse-later-index" | "constant", project = bool.
/// Projection uses pi exactly on finite chains and a pi sample otherwise.
KernelFamily kernel_from_config(const nlohmann::ordered_json& kernel, std::size_t horizon,
                                const ChainModel& model);

/// Reads a key with a default; throws ConfigError on a type mismatch.
template <typename T>
T config_value(const nlohmann::ordered_json& table, const std::string& key, const T& fallback) {
  if (!table.is_object() || !table.contains(key)) return fallback;
  try {
    return table.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

}  // namespace ustatlab
