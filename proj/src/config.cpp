#include "ustatlab/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <limits>

#include <fmt/format.h>

#include "ustatlab/report_io.hpp"

namespace ustatlab {

using Json = nlohmann::ordered_json;

namespace {

class Parser {
 public:
  explicit Parser(const std::string& text) : s_(text) {}

  Json parse() {
    Json root = Json::object();
    Json* table = &root;
    while (true) {
      skip_blank();
      if (eof()) break;
      const char c = peek();
      if (c == '#') {
        skip_comment();
      } else if (c == '\n') {
        advance();
      } else if (c == '[') {
        advance();
        const std::string name = read_until(']');
        advance();
        table = &open_table(root, name);
        end_of_statement();
      } else {
        const std::string key = read_key();
        skip_blank();
        if (eof() || peek() != '=') fail(fmt::format("expected '=' after key '{}'", key));
        advance();
        skip_blank();
        Json value = parse_value();
        if (table->contains(key)) fail(fmt::format("duplicate key '{}'", key));
        (*table)[key] = std::move(value);
        end_of_statement();
      }
    }
    return root;
  }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return s_[pos_]; }
  void advance() {
    if (s_[pos_] == '\n') ++line_;
    ++pos_;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(fmt::format("config line {}: {}", line_, what));
  }

  void skip_blank() {
    while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) advance();
  }
  void skip_comment() {
    while (!eof() && peek() != '\n') advance();
  }
  // Whitespace, newlines and comments (inside arrays).
  void skip_all() {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        advance();
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }

  void end_of_statement() {
    skip_blank();
    if (eof()) return;
    if (peek() == '#') skip_comment();
    if (eof()) return;
    if (peek() != '\n') fail(fmt::format("unexpected '{}' after value", peek()));
    advance();
  }

  std::string read_until(char stop) {
    std::string out;
    while (!eof() && peek() != stop && peek() != '\n') {
      out += peek();
      advance();
    }
    if (eof() || peek() != stop) fail(fmt::format("missing '{}'", stop));
    return out;
  }

  static bool key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '-';
  }

  std::string read_key() {
    std::string key;
    while (!eof() && key_char(peek())) {
      key += peek();
      advance();
    }
    if (key.empty()) fail(fmt::format("unexpected '{}'", eof() ? ' ' : peek()));
    return key;
  }

  Json& open_table(Json& root, const std::string& name) {
    Json* t = &root;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = name.find('.', start);
      std::string part = name.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      const auto b = part.find_first_not_of(" \t");
      const auto e = part.find_last_not_of(" \t");
      part = b == std::string::npos ? std::string() : part.substr(b, e - b + 1);
      if (part.empty() || !std::all_of(part.begin(), part.end(), key_char)) {
        fail(fmt::format("bad table name '[{}]'", name));
      }
      if (!t->contains(part)) (*t)[part] = Json::object();
      t = &(*t)[part];
      if (!t->is_object()) fail(fmt::format("'{}' is both a value and a table", part));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    return *t;
  }

  Json parse_value() {
    if (eof()) fail("missing value");
    const char c = peek();
    if (c == '"') return parse_string();
    if (c == '[') return parse_array();
    std::string word;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) != 0 || peek() == '.' || peek() == '+' ||
                      peek() == '-' || peek() == '_')) {
      word += peek();
      advance();
    }
    if (word == "true") return true;
    if (word == "false") return false;
    if (word == "inf" || word == "+inf") return std::numeric_limits<double>::infinity();
    if (word == "-inf") return -std::numeric_limits<double>::infinity();
    if (word == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (word.empty()) fail(fmt::format("unexpected '{}'", c));
    const bool integral = word.find_first_of(".eE") == std::string::npos;
    char* end = nullptr;
    if (integral) {
      const long long v = std::strtoll(word.c_str(), &end, 10);
      if (*end != '\0') fail(fmt::format("bad number '{}'", word));
      return v;
    }
    const double v = std::strtod(word.c_str(), &end);
    if (*end != '\0') fail(fmt::format("bad number '{}'", word));
    return v;
  }

  Json parse_string() {
    advance();
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = peek();
      advance();
      if (c == '"') break;
      if (c == '\\') {
        if (eof()) fail("unterminated escape");
        const char e = peek();
        advance();
        switch (e) {
          case 'n':
            out += '\n';
            break;
          case 't':
            out += '\t';
            break;
          case '"':
          case '\\':
            out += e;
            break;
          default:
            fail(fmt::format("unknown escape '\\{}'", e));
        }
      } else {
        out += c;
      }
    }
    return out;
  }

  Json parse_array() {
    advance();
    Json arr = Json::array();
    while (true) {
      skip_all();
      if (eof()) fail("unterminated array");
      if (peek() == ']') {
        advance();
        return arr;
      }
      arr.push_back(parse_value());
      skip_all();
      if (eof()) fail("unterminated array");
      if (peek() == ',') {
        advance();
      } else if (peek() != ']') {
        fail(fmt::format("expected ',' or ']' in array, got '{}'", peek()));
      }
    }
  }
};

std::string scalar_text(const Json& v) {
  switch (v.type()) {
    case Json::value_t::string: {
      std::string out = "\"";
      for (char c : v.get<std::string>()) {
        if (c == '"' || c == '\\') {
          out += '\\';
          out += c;
        } else if (c == '\n') {
          out += "\\n";
        } else if (c == '\t') {
          out += "\\t";
        } else {
          out += c;
        }
      }
      return out + "\"";
    }
    case Json::value_t::boolean:
      return v.get<bool>() ? "true" : "false";
    case Json::value_t::number_integer:
      return std::to_string(v.get<long long>());
    case Json::value_t::number_unsigned:
      return std::to_string(v.get<unsigned long long>());
    case Json::value_t::number_float: {
      // Keep floats recognizable as floats when re-read.
      std::string t = format_number(v.get<double>());
      if (t.find_first_of(".eEna") == std::string::npos) t += ".0";
      return t;
    }
    case Json::value_t::array: {
      std::string out = "[";
      bool first = true;
      for (const auto& e : v) {
        if (!first) out += ", ";
        first = false;
        out += scalar_text(e);
      }
      return out + "]";
    }
    default:
      throw ConfigError("cannot serialize a nested table inside an array");
  }
}

void emit_table(std::string& out, const std::string& prefix, const Json& table) {
  bool header_written = prefix.empty();
  for (const auto& [key, value] : table.items()) {
    if (value.is_object() || value.is_null()) continue;
    if (!header_written) {
      if (!out.empty()) out += '\n';
      out += "[" + prefix + "]\n";
      header_written = true;
    }
    out += key + " = " + scalar_text(value) + "\n";
  }
  for (const auto& [key, value] : table.items()) {
    if (!value.is_object()) continue;
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    const bool has_scalars =
        std::any_of(value.begin(), value.end(), [](const Json& v) { return !v.is_object() && !v.is_null(); });
    if (!has_scalars) {
      if (!out.empty()) out += '\n';
      out += "[" + name + "]\n";
    }
    emit_table(out, name, value);
  }
}

Matrix matrix_from(const Json& v, const std::string& what) {
  if (!v.is_array() || v.empty()) throw ConfigError(what + " must be a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(v.size());
  const auto cols = static_cast<Eigen::Index>(v[0].is_array() ? v[0].size() : 0);
  if (cols == 0) throw ConfigError(what + " must be a non-empty array of rows");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = v[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(what + " rows must all have the same length");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& e = row[static_cast<std::size_t>(c)];
      if (!e.is_number()) throw ConfigError(what + " entries must be numbers");
      m(r, c) = e.get<double>();
    }
  }
  return m;
}

Vector vector_from(const Json& v, const std::string& what) {
  if (!v.is_array() || v.empty()) throw ConfigError(what + " must be a non-empty array");
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (!v[k].is_number()) throw ConfigError(what + " entries must be numbers");
    out[static_cast<Eigen::Index>(k)] = v[k].get<double>();
  }
  return out;
}

BoundedMap map_from(const Json& t) {
  BoundedMap m;
  if (!t.is_object()) return m;
  const std::string shape = config_value<std::string>(t, "shape", "zero");
  if (shape == "zero") {
    m.shape = BoundedMap::Shape::zero;
  } else if (shape == "constant") {
    m.shape = BoundedMap::Shape::constant;
  } else if (shape == "tanh") {
    m.shape = BoundedMap::Shape::tanh;
  } else if (shape == "sine") {
    m.shape = BoundedMap::Shape::sine;
  } else {
    throw ConfigError("unknown map shape '" + shape + "' (zero, constant, tanh, sine)");
  }
  m.scale = config_value<double>(t, "scale", 0.0);
  m.slope = config_value<double>(t, "slope", 1.0);
  m.offset = config_value<double>(t, "offset", 0.0);
  return m;
}

}  // namespace

Json parse_config(const std::string& text) { return Parser(text).parse(); }

std::string serialize_config(const Json& config) {
  if (!config.is_object()) throw ConfigError("config root must be a table");
  std::string out;
  emit_table(out, "", config);
  return out;
}

ChainModel model_from_config(const Json& model) {
  if (!model.is_object()) throw ConfigError("missing [model] table");
  const std::string kind = config_value<std::string>(model, "kind", "");
  try {
    if (kind == "finite") {
      if (!model.contains("transition")) throw ConfigError("[model] finite needs 'transition'");
      return FiniteChain::create(matrix_from(model.at("transition"), "transition"));
    }
    if (kind == "ar1") {
      AR1Model m;
      m.dim = config_value<std::size_t>(model, "dim", 1);
      m.drift = map_from(model.value("drift", Json::object()));
      m.drift_bound =
          config_value<double>(model, "drift_bound", m.drift.sup_abs() * std::sqrt(static_cast<double>(m.dim)));
      if (model.contains("sigma") && model.at("sigma").is_array()) {
        const Vector s = vector_from(model.at("sigma"), "sigma");
        m.sigma.assign(s.data(), s.data() + s.size());
      } else {
        m.sigma.assign(m.dim, config_value<double>(model, "sigma", 1.0));
      }
      m.validate();
      return m;
    }
    if (kind == "arch") {
      ARCHModel m;
      m.drift = map_from(model.value("drift", Json::object()));
      const Json vol = model.value("volatility", Json::object());
      m.volatility.a = config_value<double>(vol, "a", 1.0);
      m.volatility.c = config_value<double>(vol, "c", m.volatility.a);
      m.volatility.slope = config_value<double>(vol, "slope", 1.0);
      m.b = config_value<double>(model, "b", m.drift.sup_abs());
      m.sigma = config_value<double>(model, "sigma", 1.0);
      m.validate();
      return m;
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[model] ") + e.what());
  }
  throw ConfigError("unknown [model] kind '" + kind + "' (finite, ar1, arch)");
}

InitialLaw initial_from_config(const Json& model) {
  if (!model.is_object() || !model.contains("initial")) return InitialLaw::stationary();
  const Json& v = model.at("initial");
  if (v.is_array()) return InitialLaw::from_distribution(vector_from(v, "initial"));
  if (!v.is_string()) throw ConfigError("[model] initial must be a string or a probability vector");
  try {
    return InitialLaw::parse(v.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[model] ") + e.what());
  }
}

KernelFamily kernel_from_config(const Json& kernel, std::size_t horizon, const ChainModel& model) {
  if (!kernel.is_object()) throw ConfigError("missing [kernel] table");
  const std::string kind = config_value<std::string>(kernel, "kind", "");
  const bool finite = std::holds_alternative<FiniteChain>(model);
  try {
    BaseKernel base;
    if (kind == "table") {
      if (!kernel.contains("values")) throw ConfigError("[kernel] table needs 'values'");
      base = BaseKernel::table(matrix_from(kernel.at("values"), "kernel values"));
    } else if (kind == "product") {
      if (kernel.contains("f")) {
        base = BaseKernel::product(vector_from(kernel.at("f"), "f"));
      } else if (kernel.contains("map")) {
        base = BaseKernel::product(map_from(kernel.at("map")));
      } else {
        throw ConfigError("[kernel] product needs 'f' (finite) or a [kernel.map] table");
      }
    } else if (kind == "cosine") {
      base = BaseKernel::cosine(config_value<double>(kernel, "omega", 1.0));
    } else if (kind == "indicator-equal") {
      base = BaseKernel::indicator_equal();
    } else if (kind == "indicator-less") {
      base = BaseKernel::indicator_less();
    } else if (kind == "wilcoxon") {
      base = BaseKernel::wilcoxon();
    } else if (kind == "constant" || kind == "zero") {
      base = BaseKernel::constant(kind == "zero" ? 0.0 : config_value<double>(kernel, "value", 0.0));
    } else {
      throw ConfigError("unknown [kernel] kind '" + kind +
                        "' (table, product, cosine, indicator-equal, indicator-less, wilcoxon, constant, zero)");
    }

    const std::string wname = config_value<std::string>(kernel, "weights", "unit");
    Weights w;
    if (wname == "unit") {
      w = Weights::unit();
    } else if (wname == "inverse-gap") {
      w = Weights::inverse_gap();
    } else if (wname == "inverse-later-index") {
      w = Weights::inverse_later_index();
    } else if (wname == "constant") {
      w = Weights::constant(config_value<double>(kernel, "weight", 1.0));
    } else {
      throw ConfigError("unknown [kernel] weights '" + wname + "' (unit, inverse-gap, inverse-later-index, constant)");
    }

    KernelFamily family = KernelFamily::separable(base, w, horizon);
    if (config_value<bool>(kernel, "project", false)) {
      if (finite) {
        family = hoeffding_project(family, stationary_distribution(std::get<FiniteChain>(model)));
      } else {
        const auto size = config_value<std::size_t>(kernel, "projection_sample", 2000);
        const auto seed = config_value<std::uint64_t>(kernel, "projection_seed", 1);
        family = hoeffding_project(family, stationary_sample(model, size, seed));
      }
    }
    return family;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[kernel] ") + e.what());
  }
}

}  // namespace ustatlab
