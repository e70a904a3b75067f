#include "boxguide/attn_control.hpp"

#include <stdexcept>

namespace boxguide {

namespace {

void renormalize_rows(nn::Matrix& data) {
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const float s = data.row(r).sum();
    if (s > 0.0f) data.row(r) /= s;
  }
}

void rowsum_stats(const nn::Matrix& data, double& lo, double& mean, double& hi) {
  if (data.rows() == 0) {
    lo = mean = hi = 0.0;
    return;
  }
  const Eigen::VectorXf sums = data.rowwise().sum();
  lo = sums.minCoeff();
  hi = sums.maxCoeff();
  mean = sums.mean();
}

}  // namespace

const UniqueMaskSet& ControlPlan::masks_at(Resolution hw) const {
  auto it = masks_by_resolution.find(hw);
  if (it == masks_by_resolution.end()) {
    throw std::invalid_argument("control plan has no masks at " + std::to_string(hw.height) + "x" +
                                std::to_string(hw.width));
  }
  return it->second;
}

void apply_cross_mask_inplace(AttentionMap& cross, const ControlPlan& plan, const ControlOptions& options) {
  const auto rows = static_cast<Eigen::Index>(cross.hw.height) * cross.hw.width;
  if (cross.data.rows() != rows) throw std::invalid_argument("apply_cross_mask: rows must equal H*W");
  if (plan.entity_count() == 0) return;
  const UniqueMaskSet& masks = plan.masks_at(cross.hw);
  if (masks.size() != plan.entity_count()) {
    throw std::invalid_argument("apply_cross_mask: mask count differs from span count");
  }
  for (std::size_t n = 0; n < plan.entity_count(); ++n) {
    for (int i : plan.token_sets[n]) {
      if (i < 0 || i >= cross.data.cols()) {
        throw std::invalid_argument("apply_cross_mask: token index " + std::to_string(i) +
                                    " outside key range " + std::to_string(cross.data.cols()));
      }
    }
  }
  for (std::size_t n = 0; n < plan.entity_count(); ++n) {
    const BinaryMask& m = masks.masks[n];
    for (int i : plan.token_sets[n]) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (!m.data()[r]) cross.data(r, i) = 0.0f;
      }
    }
  }
  if (options.renormalize) renormalize_rows(cross.data);
}

AttentionMap apply_cross_mask(const AttentionMap& cross, const ControlPlan& plan, const ControlOptions& options) {
  AttentionMap out = cross;
  apply_cross_mask_inplace(out, plan, options);
  return out;
}

void apply_self_mask_inplace(AttentionMap& self, const ControlPlan& plan, const ControlOptions& options) {
  if (self.data.rows() != self.data.cols()) throw std::invalid_argument("apply_self_mask: map must be square");
  const auto length = static_cast<Eigen::Index>(self.hw.height) * self.hw.width;
  if (self.data.rows() != length) throw std::invalid_argument("apply_self_mask: L must equal H*W");
  if (plan.entity_count() == 0) return;
  const UniqueMaskSet& masks = plan.masks_at(self.hw);
  if (masks.size() != plan.entity_count()) {
    throw std::invalid_argument("apply_self_mask: mask count differs from span count");
  }
  for (std::size_t n = 0; n < masks.size(); ++n) {
    const std::uint8_t* m = masks.masks[n].data();
    for (Eigen::Index i = 0; i < length; ++i) {
      if (!m[i]) continue;
      // Key i belongs to entity n: only queries inside m'_n keep attending to it.
      for (Eigen::Index q = 0; q < length; ++q) {
        if (m[q]) continue;
        if (options.transpose_self) {
          self.data(i, q) = 0.0f;
        } else {
          self.data(q, i) = 0.0f;
        }
      }
    }
  }
  if (options.renormalize) renormalize_rows(self.data);
}

AttentionMap apply_self_mask(const AttentionMap& self, const ControlPlan& plan, const ControlOptions& options) {
  AttentionMap out = self;
  apply_self_mask_inplace(out, plan, options);
  return out;
}

HookHandle::HookHandle(HookHandle&& other) noexcept : denoiser_(other.denoiser_), id_(other.id_) {
  other.denoiser_ = nullptr;
}

HookHandle& HookHandle::operator=(HookHandle&& other) noexcept {
  if (this != &other) {
    release();
    denoiser_ = other.denoiser_;
    id_ = other.id_;
    other.denoiser_ = nullptr;
  }
  return *this;
}

void HookHandle::release() {
  if (denoiser_) {
    denoiser_->remove_attention_hook(id_);
    denoiser_ = nullptr;
  }
}

HookHandle register_hooks(ControllableDenoiser& denoiser, const ControlPlan& plan, ControlScope scope,
                          const ControlOptions& options, AttentionStatsSink sink) {
  const bool want_cross = scope == ControlScope::cross || scope == ControlScope::both;
  const bool want_self = scope == ControlScope::self || scope == ControlScope::both;
  for (const auto& [hw, masks] : plan.masks_by_resolution) {
    if (masks.size() != plan.entity_count()) {
      throw std::invalid_argument("register_hooks: mask count differs from span count");
    }
  }
  for (const auto& layer : denoiser.attention_layers()) {
    const bool in_scope = layer.kind == AttentionKind::cross ? want_cross : want_self;
    if (in_scope && plan.entity_count() > 0 && !plan.masks_by_resolution.count(layer.hw)) {
      throw std::invalid_argument("register_hooks: no masks for layer " + layer.name + " at " +
                                  std::to_string(layer.hw.height) + "x" + std::to_string(layer.hw.width));
    }
  }

  AttentionHook hook = [&plan, want_cross, want_self, options, sink](AttentionMap& map,
                                                                     const AttentionLayerInfo& layer) {
    const bool is_cross = layer.kind == AttentionKind::cross;
    if (is_cross ? !want_cross : !want_self) return;
    AttentionStats stats;
    if (sink) {
      stats.layer = layer.name;
      stats.kind = layer.kind;
      stats.hw = layer.hw;
      rowsum_stats(map.data, stats.pre_rowsum_min, stats.pre_rowsum_mean, stats.pre_rowsum_max);
    }
    const Eigen::Index nonzero_before = sink ? (map.data.array() != 0.0f).count() : 0;
    if (is_cross) {
      apply_cross_mask_inplace(map, plan, options);
    } else {
      apply_self_mask_inplace(map, plan, options);
    }
    if (sink) {
      rowsum_stats(map.data, stats.post_rowsum_min, stats.post_rowsum_mean, stats.post_rowsum_max);
      const Eigen::Index nonzero_after = (map.data.array() != 0.0f).count();
      stats.masked_fraction = static_cast<double>(nonzero_before - nonzero_after) /
                              static_cast<double>(std::max<Eigen::Index>(1, map.data.size()));
      sink(stats);
    }
  };
  return HookHandle(&denoiser, denoiser.add_attention_hook(std::move(hook)));
}

}  // namespace boxguide
