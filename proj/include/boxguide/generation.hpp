#pragma once

// Text-to-image sampling with optional per-step box prediction and
// attention-mask control.

#include "boxguide/attn_control.hpp"
#include "boxguide/boxnet.hpp"
#include "boxguide/image.hpp"
#include "boxguide/toy_diffusion.hpp"
#include "boxguide/unique_mask.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace boxguide {

enum class ControlMode { off, cross, self, both };

std::string_view to_string(ControlMode mode);
/// Throws std::invalid_argument for an unknown name.
ControlMode control_from_name(std::string_view name);

struct GenerationOptions {
  ControlMode control = ControlMode::off;
  ControlOptions attention;
  GaussianConvention convention = GaussianConvention::paper;
  bool ancestral = false;
  double guidance = 1.0;  // classifier-free guidance scale; 1 runs the conditional pass only
  /// Control is applied at steps t with control_min_t <= t <= control_max_t
  /// (0 means T). Boxes are still predicted and traced at every step.
  int control_min_t = 1;
  int control_max_t = 0;
  /// Debug override: every entity mask is all ones.
  bool all_ones_masks = false;
};

struct StepRecord {
  int t = 0;
  std::vector<Box<double>> boxes;
  std::vector<int> mask_cells;  // per entity, at the finest attention resolution
  bool controlled = false;
  double rowsum_pre_min = 0, rowsum_pre_mean = 0, rowsum_pre_max = 0;
  double rowsum_post_min = 0, rowsum_post_mean = 0, rowsum_post_max = 0;
  double masked_fraction = 0;
  double latent_norm = 0;
};

struct GenerationTrace {
  std::string prompt;
  std::uint64_t seed = 0;
  std::string config_hash;
  ControlMode requested = ControlMode::off;
  ControlMode effective = ControlMode::off;
  std::vector<std::string> entities;  // phrases
  std::vector<std::string> warnings;
  std::vector<StepRecord> steps;
};

/// Header, warning and step lines of `key=value` records.
void write_trace(std::ostream& out, const GenerationTrace& trace);
GenerationTrace read_trace(std::istream& in);

struct GenerationResult {
  Image image;
  Latent latent;
  GenerationTrace trace;
};

/// Runs T reverse steps from N(0, I) drawn from `seed`. With control on, each
/// step first runs an uncontrolled pass to collect activations for BoxNet,
/// then the controlled pass whose output advances the latent. A prompt with
/// no entities falls back to control off with a trace warning. Hooks are
/// removed before returning, on success and on error.
class Generator {
 public:
  Generator(ToyStack& stack, const BoxNet* boxnet, EntityLexicon lexicon = EntityLexicon::builtin());

  GenerationResult generate(const std::string& prompt, std::uint64_t seed, const GenerationOptions& options = {});

  /// Hash of the stack / BoxNet config recorded in traces.
  void set_config_hash(std::string hash) { config_hash_ = std::move(hash); }
  const std::string& config_hash() const { return config_hash_; }

 private:
  ToyStack& stack_;
  const BoxNet* boxnet_;
  EntityLexicon lexicon_;
  std::string config_hash_;
};

/// Convenience wrapper over Generator. `boxnet` may be null when control is
/// off; otherwise std::invalid_argument is thrown.
GenerationResult generate(const std::string& prompt, std::uint64_t seed, ControlMode control, ToyStack& stack,
                          const BoxNet* boxnet, const GenerationOptions& base = {});

}  // namespace boxguide
