#pragma once

// Restricting post-softmax attention maps to per-entity unique masks.
// Maps are (queries, keys): rows are flattened pixels (index = y * W + x),
// columns are prompt tokens (cross-attention) or flattened pixels (self).

#include "boxguide/nn.hpp"
#include "boxguide/unique_mask.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace boxguide {

struct AttentionMap {
  nn::Matrix data;
  Resolution hw;
};

enum class AttentionKind { cross, self };
enum class ControlScope { cross, self, both };

struct ControlPlan {
  std::vector<std::vector<int>> token_sets;  // s_n per entity
  std::map<Resolution, UniqueMaskSet> masks_by_resolution;

  std::size_t entity_count() const { return token_sets.size(); }
  const UniqueMaskSet& masks_at(Resolution hw) const;
};

struct ControlOptions {
  bool renormalize = false;    // rescale rows to sum 1 after masking
  bool transpose_self = false; // mask self-attention rows instead of columns
};

/// Column i of every s_n is multiplied by flatten(m'_n). Throws
/// std::invalid_argument if a token index is outside the key range or the
/// resolution is not in the plan.
AttentionMap apply_cross_mask(const AttentionMap& cross, const ControlPlan& plan,
                              const ControlOptions& options = {});
void apply_cross_mask_inplace(AttentionMap& cross, const ControlPlan& plan,
                              const ControlOptions& options = {});

/// Every key column inside m'_n is multiplied by flatten(m'_n). Throws
/// std::invalid_argument on a non-square map or L != H*W.
AttentionMap apply_self_mask(const AttentionMap& self, const ControlPlan& plan,
                             const ControlOptions& options = {});
void apply_self_mask_inplace(AttentionMap& self, const ControlPlan& plan,
                             const ControlOptions& options = {});

struct AttentionLayerInfo {
  std::string name;
  AttentionKind kind = AttentionKind::cross;
  Resolution hw;
};

/// Called with each head's post-softmax map before it is consumed.
using AttentionHook = std::function<void(AttentionMap&, const AttentionLayerInfo&)>;

/// Interception contract for denoisers whose attention maps can be edited.
class ControllableDenoiser {
 public:
  virtual ~ControllableDenoiser() = default;
  virtual std::vector<AttentionLayerInfo> attention_layers() const = 0;
  virtual int add_attention_hook(AttentionHook hook) = 0;
  virtual void remove_attention_hook(int id) = 0;
  virtual std::size_t hook_count() const = 0;
};

/// Removes its hook on destruction or release().
class HookHandle {
 public:
  HookHandle() = default;
  HookHandle(ControllableDenoiser* denoiser, int id) : denoiser_(denoiser), id_(id) {}
  HookHandle(HookHandle&& other) noexcept;
  HookHandle& operator=(HookHandle&& other) noexcept;
  HookHandle(const HookHandle&) = delete;
  HookHandle& operator=(const HookHandle&) = delete;
  ~HookHandle() { release(); }

  void release();
  bool active() const { return denoiser_ != nullptr; }

 private:
  ControllableDenoiser* denoiser_ = nullptr;
  int id_ = -1;
};

/// Row-sum statistics of one head's map before and after control.
struct AttentionStats {
  std::string layer;
  AttentionKind kind = AttentionKind::cross;
  Resolution hw;
  double pre_rowsum_min = 0, pre_rowsum_mean = 0, pre_rowsum_max = 0;
  double post_rowsum_min = 0, post_rowsum_mean = 0, post_rowsum_max = 0;
  double masked_fraction = 0;  // share of entries zeroed by control
};

using AttentionStatsSink = std::function<void(const AttentionStats&)>;

/// Installs one hook applying the cross and/or self mask to every attention
/// layer in scope. Throws std::invalid_argument if a layer's resolution has no
/// mask set in the plan or the plan's mask count differs from its span count.
/// The plan must outlive the handle and stay unmodified while it is active.
HookHandle register_hooks(ControllableDenoiser& denoiser, const ControlPlan& plan, ControlScope scope,
                          const ControlOptions& options = {}, AttentionStatsSink sink = {});

}  // namespace boxguide
