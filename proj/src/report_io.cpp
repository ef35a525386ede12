#include "ustatlab/report_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace ustatlab {

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) return "0";  // folds -0
  return fmt::format("{:.17g}", value);
}

namespace {

void dump_into(const nlohmann::ordered_json& node, int indent, int depth, std::string& out) {
  const auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (node.type()) {
    case nlohmann::json::value_t::object: {
      if (node.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (const auto& [key, value] : node.items()) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += nlohmann::ordered_json(key).dump();
        out += indent < 0 ? ":" : ": ";
        dump_into(value, indent, depth + 1, out);
      }
      newline(depth);
      out += '}';
      return;
    }
    case nlohmann::json::value_t::array: {
      if (node.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      bool scalars = true;
      for (const auto& v : node) scalars = scalars && !v.is_structured();
      out += '[';
      bool first = true;
      for (const auto& v : node) {
        if (!first) out += scalars ? ", " : ",";
        first = false;
        if (!scalars) newline(depth + 1);
        dump_into(v, indent, depth + 1, out);
      }
      if (!scalars) newline(depth);
      out += ']';
      return;
    }
    case nlohmann::json::value_t::number_float: {
      const double v = node.get<double>();
      // JSON has no inf/nan; emit them as strings so the document stays valid.
      if (!std::isfinite(v)) {
        out += '"' + format_number(v) + '"';
      } else {
        out += format_number(v);
      }
      return;
    }
    default:
      out += node.dump();
  }
}

}  // namespace

std::string dump_json(const nlohmann::ordered_json& doc, int indent) {
  std::string out;
  dump_into(doc, indent, 0, out);
  out += '\n';
  return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");
  file.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << file.rdbuf();
  return buffer.str();
}

}  // namespace ustatlab
