#include "icc/toml_lite.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace icc::toml {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// strips a trailing comment that is not inside a quoted string
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

double parse_number(const std::string& text, const std::string& where) {
  const char* begin = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw ConfigError(where + ": expected a number, got '" + text + "'");
  }
  return v;
}

Value parse_value(const std::string& text, const std::string& where) {
  Value v;
  v.raw = text;
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
    v.kind = Value::Kind::String;
    v.str = text.substr(1, text.size() - 2);
    return v;
  }
  if (text == "true" || text == "false") {
    v.kind = Value::Kind::Bool;
    v.boolean = text == "true";
    return v;
  }
  if (!text.empty() && text.front() == '[') {
    if (text.back() != ']') {
      throw ConfigError(where + ": unterminated array");
    }
    v.kind = Value::Kind::Array;
    const std::string body = text.substr(1, text.size() - 2);
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      v.array.push_back(parse_number(item, where));
    }
    return v;
  }
  v.kind = Value::Kind::Number;
  v.number = parse_number(text, where);
  return v;
}

}  // namespace

double Value::as_double(const std::string& where) const {
  if (kind != Kind::Number) {
    throw ConfigError(where + ": expected a number");
  }
  return number;
}

std::int64_t Value::as_int(const std::string& where) const {
  const double d = as_double(where);
  const auto i = static_cast<std::int64_t>(d);
  if (static_cast<double>(i) != d) {
    throw ConfigError(where + ": expected an integer, got " + raw);
  }
  return i;
}

std::uint64_t Value::as_u64(const std::string& where) const {
  if (kind != Kind::Number) {
    throw ConfigError(where + ": expected an unsigned integer");
  }
  // reparse from the raw text so 64-bit seeds survive exactly
  const char* begin = raw.c_str();
  char* end = nullptr;
  const unsigned long long v = std::strtoull(begin, &end, 10);
  if (end == begin || *end != '\0') {
    throw ConfigError(where + ": expected an unsigned integer, got '" + raw +
                      "'");
  }
  return v;
}

bool Value::as_bool(const std::string& where) const {
  if (kind != Kind::Bool) {
    throw ConfigError(where + ": expected true/false");
  }
  return boolean;
}

const std::string& Value::as_string(const std::string& where) const {
  if (kind != Kind::String) {
    throw ConfigError(where + ": expected a quoted string");
  }
  return str;
}

const std::vector<double>& Value::as_array(const std::string& where) const {
  if (kind != Kind::Array) {
    throw ConfigError(where + ": expected an array");
  }
  return array;
}

bool Document::has(const std::string& section) const {
  return sections.count(section) > 0;
}

bool Document::has(const std::string& section, const std::string& key) const {
  const auto it = sections.find(section);
  return it != sections.end() && it->second.count(key) > 0;
}

const Value& Document::at(const std::string& section,
                          const std::string& key) const {
  const auto it = sections.find(section);
  if (it == sections.end()) {
    throw ConfigError("missing [" + section + "] section");
  }
  const auto kit = it->second.find(key);
  if (kit == it->second.end()) {
    throw ConfigError("missing key '" + key + "' in [" + section + "]");
  }
  return kit->second;
}

double Document::get_double(const std::string& section, const std::string& key,
                            double fallback) const {
  return has(section, key) ? at(section, key).as_double(section + "." + key)
                           : fallback;
}

std::int64_t Document::get_int(const std::string& section,
                               const std::string& key,
                               std::int64_t fallback) const {
  return has(section, key) ? at(section, key).as_int(section + "." + key)
                           : fallback;
}

bool Document::get_bool(const std::string& section, const std::string& key,
                        bool fallback) const {
  return has(section, key) ? at(section, key).as_bool(section + "." + key)
                           : fallback;
}

std::string Document::get_string(const std::string& section,
                                 const std::string& key,
                                 const std::string& fallback) const {
  return has(section, key) ? at(section, key).as_string(section + "." + key)
                           : fallback;
}

Document parse(std::istream& in, const std::string& origin) {
  Document doc;
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError(where + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      doc.sections[section];  // sections may be empty
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError(where + ": expected key = value");
    }
    if (section.empty()) {
      throw ConfigError(where + ": key outside any [section]");
    }
    doc.sections[section][key] = parse_value(value, where);
  }
  return doc;
}

Document parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file: " + path);
  }
  return parse(in, path);
}

}  // namespace icc::toml
