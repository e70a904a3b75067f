#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace boxguide {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

/// Mixes a base seed with stream coordinates (splitmix64 finaliser per word).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Linear warmup from 0 at step 0 to `peak` at `warmup`, then cosine decay
/// to 0 at `total`.
double warmup_cosine_lr(long long step, long long warmup, long long total, double peak);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

/// One `key=value key=value` line. Values containing spaces, quotes or '='
/// are double-quoted with backslash escapes.
using Record = std::vector<std::pair<std::string, std::string>>;

std::string format_record(const Record& record);
/// Throws std::invalid_argument on malformed input.
Record parse_record(std::string_view line);
/// Throws std::out_of_range if the key is absent.
const std::string& record_value(const Record& record, std::string_view key);

}  // namespace boxguide
