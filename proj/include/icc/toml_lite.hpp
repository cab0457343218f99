#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace icc {

/// Configuration / CLI usage error; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace toml {

// Reader for the TOML subset the scenario files use: [section] headers,
// key = value with quoted strings, booleans, numbers and flat numeric
// arrays, plus # comments. Unsupported syntax is a ConfigError with the
// offending line number.
struct Value {
  enum class Kind { Number, String, Bool, Array };
  Kind kind = Kind::Number;
  double number = 0.0;
  std::string str;
  bool boolean = false;
  std::vector<double> array;
  std::string raw;  // original text, for exact u64 seeds

  double as_double(const std::string& where) const;
  std::int64_t as_int(const std::string& where) const;
  std::uint64_t as_u64(const std::string& where) const;
  bool as_bool(const std::string& where) const;
  const std::string& as_string(const std::string& where) const;
  const std::vector<double>& as_array(const std::string& where) const;
};

using Table = std::map<std::string, Value>;

struct Document {
  std::map<std::string, Table> sections;

  bool has(const std::string& section) const;
  bool has(const std::string& section, const std::string& key) const;
  const Value& at(const std::string& section, const std::string& key) const;

  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
};

Document parse(std::istream& in, const std::string& origin);
Document parse_file(const std::string& path);

}  // namespace toml
}  // namespace icc
