#include "boxguide/common.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace boxguide {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

namespace {

std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix(mix(mix(mix(base) ^ a) ^ b) ^ c);
}

double warmup_cosine_lr(long long step, long long warmup, long long total, double peak) {
  if (step <= 0) return 0.0;
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total) return 0.0;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(std::max(1LL, total - warmup));
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string format_record(const Record& record) {
  std::string out;
  for (const auto& [key, value] : record) {
    if (!out.empty()) out += ' ';
    out += key;
    out += '=';
    const bool quote = value.empty() || value.find_first_of(" \t\"=\\") != std::string::npos;
    if (!quote) {
      out += value;
      continue;
    }
    out += '"';
    for (char c : value) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    out += '"';
  }
  return out;
}

Record parse_record(std::string_view line) {
  Record out;
  std::size_t i = 0;
  auto skip_space = [&] {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
  };
  skip_space();
  while (i < line.size()) {
    const std::size_t eq = line.find('=', i);
    if (eq == std::string_view::npos) throw std::invalid_argument("record: missing '=' after key");
    std::string key(line.substr(i, eq - i));
    if (key.empty() || key.find(' ') != std::string::npos) throw std::invalid_argument("record: bad key");
    i = eq + 1;
    std::string value;
    if (i < line.size() && line[i] == '"') {
      ++i;
      bool closed = false;
      while (i < line.size()) {
        const char c = line[i++];
        if (c == '\\' && i < line.size()) {
          value += line[i++];
        } else if (c == '"') {
          closed = true;
          break;
        } else {
          value += c;
        }
      }
      if (!closed) throw std::invalid_argument("record: unterminated quote");
    } else {
      while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') value += line[i++];
    }
    out.emplace_back(std::move(key), std::move(value));
    skip_space();
  }
  return out;
}

const std::string& record_value(const Record& record, std::string_view key) {
  for (const auto& [k, v] : record) {
    if (k == key) return v;
  }
  throw std::out_of_range("record has no key " + std::string(key));
}

}  // namespace boxguide
