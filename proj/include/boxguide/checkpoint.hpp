#pragma once

// Versioned binary container: magic line, embedded key = value config text,
// then named float32 matrices.

#include "boxguide/nn.hpp"

#include <string>
#include <utility>
#include <vector>

namespace boxguide {

inline constexpr const char* kCheckpointMagic = "BOXGUIDE-CKPT-v1";

struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, nn::Matrix>> tensors;

  const nn::Matrix* find(const std::string& name) const;
  /// Tensors whose name starts with `prefix`, prefix kept.
  std::vector<std::pair<std::string, nn::Matrix>> with_prefix(const std::string& prefix) const;
};

/// Throws std::runtime_error on I/O failure.
void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws std::runtime_error on I/O failure, a bad magic line or truncation.
Checkpoint read_checkpoint(const std::string& path);

}  // namespace boxguide
