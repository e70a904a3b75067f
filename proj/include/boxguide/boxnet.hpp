#pragma once

// Per-entity box regression from frozen denoiser activations: aggregated
// feature map -> transformer encoder, entity phrase queries -> transformer
// decoder, shared sigmoid box head on the first N query outputs.

#include "boxguide/box.hpp"
#include "boxguide/checkpoint.hpp"
#include "boxguide/config.hpp"
#include "boxguide/layers.hpp"
#include "boxguide/prompt_parser.hpp"
#include "boxguide/toy_diffusion.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace boxguide {

struct BoxNetConfig {
  int input_channels = 192;  // summed channels of the captured activations
  int feature_dim = 64;      // C_f
  Resolution feature_hw{16, 16};
  int text_dim = 64;
  int model_dim = 64;
  int ff_dim = 256;
  int heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int max_entities = 8;  // M

  Config to_config() const;  // keys under "boxnet."
  static BoxNetConfig from_config(const Config& config);
};

/// (H_f * W_f, C_f) row-major positions. Carries a graph when built with
/// gradients enabled.
struct FeatureTensor {
  nn::Tensor data;
  Resolution hw;
  int source_timestep = 0;
  std::vector<Resolution> source_resolutions;
};

/// (M, text_dim) query embeddings; rows n_entities.. are the placeholder.
struct EntityQuerySet {
  nn::Tensor embeddings;
  int n_entities = 0;
  std::vector<int> category_ids;
};

/// Class label of an entity query: the lexicon id of its head noun, -1 if
/// the noun is not in the lexicon.
int entity_category(const EntitySpan& span, const EntityLexicon& lexicon);

class BoxNet {
 public:
  explicit BoxNet(BoxNetConfig config = {}, std::uint64_t seed = 0);
  BoxNet(const BoxNet&) = delete;
  BoxNet& operator=(const BoxNet&) = delete;

  const BoxNetConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Throws std::invalid_argument on an empty list, a channel-count mismatch
  /// or non-finite activations.
  FeatureTensor extract_features(const std::vector<nn::Matrix>& maps, const std::vector<Resolution>& hw,
                                 int timestep) const;
  FeatureTensor extract_features(const FeatureCapture& capture) const;

  /// Throws std::invalid_argument if there are more spans than M.
  EntityQuerySet encode_entities(const std::vector<EntitySpan>& spans, const TextEncoder& text,
                                 const EntityLexicon& lexicon = EntityLexicon::builtin()) const;

  /// (N, 4) boxes as (cx, cy, w, h) in (0, 1), differentiable.
  nn::Tensor forward(const FeatureTensor& feature, const EntityQuerySet& queries) const;
  std::vector<Box<double>> predict_boxes(const FeatureTensor& feature, const EntityQuerySet& queries) const;

 private:
  struct EncoderLayer {
    nn::MultiHeadAttention attn;
    nn::LayerNorm norm1, norm2;
    nn::Linear ff1, ff2;
  };
  struct DecoderLayer {
    nn::MultiHeadAttention self_attn, cross_attn;
    nn::LayerNorm norm1, norm2, norm3;
    nn::Linear ff1, ff2;
  };

  void check_inputs(const FeatureTensor& feature, const EntityQuerySet& queries) const;

  BoxNetConfig config_;
  nn::ParamStore params_;
  nn::Linear input_proj_, query_proj_, box_head_;
  nn::Tensor placeholder_;
  nn::Matrix position_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  nn::LayerNorm decoder_norm_, head_norm_;
};

struct TrainingMeta {
  long long steps = 0;
  std::uint64_t seed = 0;
  std::string dataset_id;
  double first_loss = 0.0;  // mean of the first 100 steps
  double last_loss = 0.0;   // mean of the final 100 steps
};

/// A BoxNet together with the frozen stack it was trained against, stored
/// as one checkpoint file (stack weights under "stack.").
struct BoxNetCheckpoint {
  std::unique_ptr<ToyStack> stack;
  std::unique_ptr<BoxNet> boxnet;
  TrainingMeta meta;
  Config extra;  // provenance carried into the file

  /// Throws std::runtime_error on a missing or corrupt file.
  static BoxNetCheckpoint load(const std::string& path);
  static BoxNetCheckpoint from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint(const std::vector<std::pair<std::string, nn::Matrix>>& extra_tensors = {}) const;
  void save(const std::string& path,
            const std::vector<std::pair<std::string, nn::Matrix>>& extra_tensors = {}) const;
  /// Config text embedded in the file, including weight checksums.
  Config full_config() const;
  std::string config_hash() const;
};

}  // namespace boxguide
