#include "agentpose/toml.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>

#include "agentpose/error.hpp"

namespace agentpose::toml {

const char* Value::type_name() const {
  switch (data.index()) {
    case 0: return "boolean";
    case 1: return "integer";
    case 2: return "float";
    case 3: return "string";
    default: return "array";
  }
}

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  Document run() {
    Document doc;
    std::set<std::string> declared;
    std::string prefix;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        skip_ws();
        const std::string name = parse_key();
        skip_ws();
        expect(']');
        end_of_line();
        if (!declared.insert(name).second) fail("table [" + name + "] declared twice");
        if (doc.entries.count(name)) fail("table [" + name + "] collides with a key");
        doc.tables.push_back(name);
        prefix = name + ".";
        continue;
      }
      const int line = line_;
      const std::string key = prefix + parse_key();
      skip_ws();
      expect('=');
      skip_ws();
      Value v = parse_value();
      v.line = line;
      end_of_line();
      if (declared.count(key)) fail("key '" + key + "' collides with a table");
      if (!doc.entries.emplace(key, std::move(v)).second) fail("duplicate key '" + key + "'");
    }
    return doc;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError("line " + std::to_string(line_), msg); }

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }
  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++pos_;
  }
  void newline() {
    if (peek() == '\r') ++pos_;
    if (peek() == '\n') {
      ++pos_;
      ++line_;
    }
  }
  // Whitespace, comments and newlines (inside arrays and between entries).
  void skip_blank_lines() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') {
        newline();
      } else {
        break;
      }
    }
  }
  void end_of_line() {
    skip_ws();
    skip_comment();
    if (eof()) return;
    if (peek() != '\n' && peek() != '\r') fail("unexpected text after value");
    newline();
  }

  std::string parse_simple_key() {
    if (peek() == '"' || peek() == '\'') return parse_string();
    const std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++pos_;
    if (pos_ == start) fail("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }
  std::string parse_key() {
    std::string key = parse_simple_key();
    skip_ws();
    while (peek() == '.') {
      ++pos_;
      skip_ws();
      key += "." + parse_simple_key();
      skip_ws();
    }
    return key;
  }

  std::string parse_string() {
    const char quote = peek();
    ++pos_;
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = s_[pos_++];
      if (c == quote) break;
      if (c == '\\' && quote == '"') {
        if (eof()) fail("unterminated escape");
        const char e = s_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case 'r': out += '\r'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      } else {
        out += c;
      }
    }
    return out;
  }

  Value parse_array() {
    ++pos_;
    Array items;
    while (true) {
      skip_blank_lines();
      if (peek() == ']') {
        ++pos_;
        break;
      }
      items.push_back(parse_value());
      skip_blank_lines();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() != ']') {
        fail("expected ',' or ']' in array");
      }
    }
    return Value{std::move(items), line_};
  }

  Value parse_value() {
    const char c = peek();
    if (c == '"' || c == '\'') return Value{parse_string(), line_};
    if (c == '[') return parse_array();
    const std::size_t start = pos_;
    while (!eof() && !std::isspace(static_cast<unsigned char>(peek())) && peek() != ',' && peek() != ']' &&
           peek() != '#')
      ++pos_;
    std::string tok(s_.substr(start, pos_ - start));
    if (tok.empty()) fail("expected a value");
    if (tok == "true") return Value{true, line_};
    if (tok == "false") return Value{false, line_};
    std::string digits;
    for (std::size_t i = 0; i < tok.size(); ++i) {
      if (tok[i] == '_') {
        if (i == 0 || i + 1 == tok.size() || !std::isdigit(static_cast<unsigned char>(tok[i - 1])) ||
            !std::isdigit(static_cast<unsigned char>(tok[i + 1])))
          fail("misplaced '_' in number '" + tok + "'");
        continue;
      }
      digits += tok[i];
    }
    const bool is_float = digits.find_first_of(".eE") != std::string::npos;
    const char* first = digits.data() + (digits[0] == '+' ? 1 : 0);
    const char* last = digits.data() + digits.size();
    if (is_float) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || p != last || !std::isfinite(v)) fail("invalid float '" + tok + "'");
      return Value{v, line_};
    }
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || p != last) fail("invalid value '" + tok + "'");
    return Value{v, line_};
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

}  // namespace

Document parse(std::string_view text) { return Parser(text).run(); }

std::string format(const Value& v) {
  switch (v.data.index()) {
    case 0: return std::get<bool>(v.data) ? "true" : "false";
    case 1: return std::to_string(std::get<std::int64_t>(v.data));
    case 2: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", std::get<double>(v.data));
      std::string s = buf;
      if (s.find_first_of(".eE") == std::string::npos) s += ".0";
      return s;
    }
    case 3: {
      std::string out = "\"";
      for (char c : std::get<std::string>(v.data)) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
          out += "\\n";
          continue;
        }
        out += c;
      }
      return out + "\"";
    }
    default: {
      std::string out = "[";
      const auto& a = std::get<Array>(v.data);
      for (std::size_t i = 0; i < a.size(); ++i) out += (i ? ", " : "") + format(a[i]);
      return out + "]";
    }
  }
}

}  // namespace agentpose::toml
