#include "boxguide/config.hpp"

#include "boxguide/common.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace boxguide {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse(std::istream& in) {
  Config cfg;
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) throw std::runtime_error("config line " + std::to_string(number) + ": bad section");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(number) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw std::runtime_error("config line " + std::to_string(number) + ": empty key");
    cfg.set(section.empty() ? key : section + "." + key, trim(t.substr(eq + 1)));
  }
  return cfg;
}

Config Config::parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return parse(in);
}

void Config::set(const std::string& key, std::string value) { values_[key] = std::move(value); }

std::string Config::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": not a number: " + it->second);
  }
}

long long Config::get_int(const std::string& key, long long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": not an integer: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config key " + key + ": not a boolean: " + v);
}

void Config::merge(const Config& overlay) {
  for (const auto& [k, v] : overlay.values_) values_[k] = v;
}

Config Config::section(const std::string& name) const {
  Config out;
  const std::string prefix = name + ".";
  for (const auto& [k, v] : values_) {
    if (k.rfind(prefix, 0) == 0) out.values_[k.substr(prefix.size())] = v;
  }
  return out;
}

std::string Config::to_text() const {
  std::ostringstream out;
  std::string current;
  bool first = true;
  for (const auto& [k, v] : values_) {
    if (k.find('.') == std::string::npos) out << k << " = " << v << "\n";
  }
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    if (dot == std::string::npos) continue;
    const std::string sec = k.substr(0, dot);
    if (first || sec != current) {
      out << "[" << sec << "]\n";
      current = sec;
      first = false;
    }
    out << k.substr(dot + 1) << " = " << v << "\n";
  }
  return out.str();
}

std::string Config::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  j["config_hash"] = hash_hex();
  return j.dump(2);
}

std::uint64_t Config::hash() const {
  std::string canonical;
  for (const auto& [k, v] : values_) canonical += k + "=" + v + "\n";
  return fnv1a64(canonical);
}

std::string Config::hash_hex() const { return hex64(hash()); }

}  // namespace boxguide
