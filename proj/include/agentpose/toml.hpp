#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace agentpose::toml {

struct Value;
using Array = std::vector<Value>;

struct Value {
  std::variant<bool, std::int64_t, double, std::string, Array> data;
  int line = 0;

  bool is_bool() const { return std::holds_alternative<bool>(data); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(data); }
  bool is_float() const { return std::holds_alternative<double>(data); }
  bool is_string() const { return std::holds_alternative<std::string>(data); }
  bool is_array() const { return std::holds_alternative<Array>(data); }
  const char* type_name() const;
};

/// Flat view of a document: dotted key path -> value. Tables are implied by
/// the paths; `tables` lists the headers that were declared.
struct Document {
  std::map<std::string, Value> entries;
  std::vector<std::string> tables;
};

/// Parses the subset of TOML used by experiment configs: comments, [table]
/// headers, bare or dotted keys, basic and literal strings, integers,
/// floats, booleans and (possibly multi-line) arrays of those.
/// Throws ConfigError whose field is "line N".
Document parse(std::string_view text);

/// Canonical TOML rendering of a scalar or array.
std::string format(const Value& v);

}  // namespace agentpose::toml
