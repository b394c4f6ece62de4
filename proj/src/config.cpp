#include "trajattr/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace trajattr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::int64_t to_int(const std::string& key, const std::string& text) {
  std::int64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': expected integer, got '" + text + "'");
  return v;
}

double to_double(const std::string& key, const std::string& text) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + text + "'");
  }
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& source) {
  KeyValueConfig cfg;
  cfg.source_ = source;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (!cfg.entries_.emplace(key, value).second) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

bool KeyValueConfig::has(const std::string& key) const { return entries_.count(key) != 0; }

const std::string& KeyValueConfig::raw(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing config key '" + key + "' in " + source_);
  used_.insert(key);
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key) const { return raw(key); }

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

std::int64_t KeyValueConfig::get_int(const std::string& key) const { return to_int(key, raw(key)); }

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key) const { return to_double(key, raw(key)); }

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(raw(key))) out.push_back(to_double(key, item));
  return out;
}

std::vector<std::int64_t> KeyValueConfig::get_ints(const std::string& key,
                                                   const std::vector<std::int64_t>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::int64_t> out;
  for (const auto& item : split_list(raw(key))) out.push_back(to_int(key, item));
  return out;
}

std::vector<std::string> KeyValueConfig::get_strings(const std::string& key,
                                                     const std::vector<std::string>& fallback) const {
  if (!has(key)) return fallback;
  return split_list(raw(key));
}

void KeyValueConfig::reject_unknown() const {
  std::string unknown;
  for (const auto& [key, value] : entries_) {
    if (used_.count(key)) continue;
    if (!unknown.empty()) unknown += ", ";
    unknown += key;
  }
  if (!unknown.empty()) throw ConfigError("unknown config keys in " + source_ + ": " + unknown);
}

}  // namespace trajattr
