#pragma once

// Flat `key = value` configuration files.
//
//   # comment
//   dataset.seed = 7
//   cib.beta_grid = 0.01, 0.1, 1, 10, 100
//
// Keys are read through typed getters that remember which keys were used;
// reject_unknown() then fails on anything left over, so typos never pass
// silently.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajattr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text, const std::string& source = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::int64_t> get_ints(const std::string& key, const std::vector<std::int64_t>& fallback) const;
  std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback) const;

  // Throws ConfigError naming every key that no getter has touched.
  void reject_unknown() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  const std::string& raw(const std::string& key) const;

  std::string source_;
  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> used_;
};

}  // namespace trajattr
