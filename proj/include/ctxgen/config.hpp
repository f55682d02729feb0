#pragma once

// TOML-style key/value settings: "[section]" headers and "key = value"
// lines, with command-line overrides layered on top.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "ctxgen/error.hpp"
#include "ctxgen/io.hpp"

namespace ctxgen {

class Settings {
 public:
  Settings() = default;

  // Keys are "section.key"; keys before any section header live under "run".
  static Settings parse(std::string_view text, const std::set<std::string>& known_keys = {}) {
    Settings s;
    std::string section = "run";
    std::size_t line_no = 0;
    for (auto line : io::split(text, '\n')) {
      ++line_no;
      const auto where = "line " + std::to_string(line_no);
      if (auto hash = find_comment(line); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw config_error(where, "unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) throw config_error(where, "empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw config_error(where, "expected 'key = value'");
      const auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key.empty()) throw config_error(where, "empty key");
      const auto path = section + "." + key;
      if (!known_keys.empty() && !known_keys.contains(path)) throw config_error(path, "unknown setting");
      if (value.size() >= 2 && value.front() == '"') {
        if (value.back() != '"') throw config_error(path, "unterminated string");
        value = value.substr(1, value.size() - 2);
      }
      if (s.values_.contains(path)) throw config_error(path, "duplicate setting");
      s.values_[path] = value;
    }
    return s;
  }

  static Settings load(const std::filesystem::path& path, const std::set<std::string>& known_keys = {}) {
    return parse(io::read_file(path), known_keys);
  }

  void set_override(const std::string& key, std::string value) { overrides_[key] = std::move(value); }

  bool has(const std::string& key) const { return overrides_.contains(key) || values_.contains(key); }

  std::optional<std::string> raw(const std::string& key) const {
    if (auto it = overrides_.find(key); it != overrides_.end()) return it->second;
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    return std::nullopt;
  }

  std::string get_string(const std::string& key, std::string fallback) const {
    return raw(key).value_or(std::move(fallback));
  }

  template <class T>
  T get_number(const std::string& key, T fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    try {
      return io::parse_number<T>(*v);
    } catch (const format_error&) {
      throw config_error(key, "expected a number, got '" + *v + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw config_error(key, "expected true or false, got '" + *v + "'");
  }

  // Effective values (config then overrides), for manifests.
  std::map<std::string, std::string> snapshot(std::string_view prefix = {}) const {
    std::map<std::string, std::string> out;
    for (const auto* m : {&values_, &overrides_})
      for (const auto& [k, v] : *m)
        if (prefix.empty() || k.starts_with(prefix)) out[k] = v;
    return out;
  }

 private:
  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
  }
  // First '#' outside a double-quoted string.
  static std::size_t find_comment(std::string_view s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return i;
    }
    return std::string::npos;
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> overrides_;
};

// splitmix64 of the run seed mixed with the stage name.
inline std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view stage) {
  std::uint64_t z = run_seed ^ io::fnv1a(stage);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace ctxgen
