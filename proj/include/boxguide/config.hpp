#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <string>

namespace boxguide {

/// Flat key/value settings. Text form is `key = value` lines grouped under
/// `[section]` headers; keys are stored as `section.key`.
class Config {
 public:
  /// Throws std::runtime_error with the line number on malformed input.
  static Config parse(std::istream& in);
  static Config parse_text(const std::string& text);
  static Config from_file(const std::string& path);

  void set(const std::string& key, std::string value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void erase(const std::string& key) { values_.erase(key); }

  std::string get(const std::string& key, const std::string& fallback = "") const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Values in `overlay` replace ours.
  void merge(const Config& overlay);
  /// Keys under `section.`, with the prefix removed.
  Config section(const std::string& name) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  std::string to_text() const;
  std::string to_json() const;
  std::uint64_t hash() const;
  std::string hash_hex() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace boxguide
