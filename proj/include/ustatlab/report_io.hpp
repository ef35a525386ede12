#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace ustatlab {

/// 17 significant digits ("%.17g"), the fixed format of every CSV/JSON number.
std::string format_number(double value);

/// Serializes a JSON tree with floating-point members printed by
/// format_number; objects keep insertion order given by ordered_json.
std::string dump_json(const nlohmann::ordered_json& doc, int indent = 2);

void write_text_file(const std::filesystem::path& path, std::string_view contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace ustatlab
