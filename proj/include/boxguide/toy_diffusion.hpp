#pragma once

// Desk-scale latent diffusion: patch autoencoder, bag-of-words text encoder,
// attention U-Net with interceptable attention maps, cosine noise schedule.

#include "boxguide/attn_control.hpp"
#include "boxguide/checkpoint.hpp"
#include "boxguide/config.hpp"
#include "boxguide/image.hpp"
#include "boxguide/layers.hpp"
#include "boxguide/prompt_parser.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace boxguide {

/// (height * width, channels) latent, positions row-major.
struct Latent {
  int height = 16;
  int width = 16;
  nn::Matrix data;

  int channels() const { return static_cast<int>(data.cols()); }
};

struct SchedulerConfig {
  int steps = 50;
  double cosine_offset = 0.008;
  float clip_sample = 4.0f;  // predicted x0 clamp in the reverse step; <= 0 disables
};

class Scheduler {
 public:
  explicit Scheduler(SchedulerConfig config = {});

  int steps() const { return config_.steps; }
  const SchedulerConfig& config() const { return config_; }
  /// Strictly decreasing in t; alpha_bar(0) == 1. Throws std::out_of_range
  /// outside [0, T].
  double alpha_bar(int t) const;

  /// sqrt(ab) * z0 + sqrt(1 - ab) * eps.
  nn::Matrix add_noise(const nn::Matrix& z0, int t, const nn::Matrix& eps) const;
  /// Draws eps ~ N(0, I) from `seed`.
  Latent add_noise(const Latent& z0, int t, std::uint64_t seed) const;

  /// Reverse step t -> t-1. Deterministic (eta = 0) when `rng` is null,
  /// ancestral otherwise.
  nn::Matrix step(const nn::Matrix& zt, int t, const nn::Matrix& eps, std::mt19937_64* rng = nullptr) const;

 private:
  SchedulerConfig config_;
  std::vector<double> alpha_bar_;
};

nn::Matrix gaussian_matrix(nn::Index rows, nn::Index cols, std::mt19937_64& rng);

struct AutoencoderConfig {
  int image_size = 64;
  int patch = 4;
  int latent_channels = 4;
  int hidden = 64;

  int latent_size() const { return image_size / patch; }
};

/// (image_size^2, 3) pixels -> (latent_size^2, patch^2 * 3) patches and back.
nn::Matrix patchify(const Image& image, int patch);
Image unpatchify(const nn::Matrix& patches, int grid, int patch);

class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(nn::ParamStore& store, const std::string& prefix, AutoencoderConfig config, std::mt19937_64& rng);

  const AutoencoderConfig& config() const { return config_; }
  /// Raw (unstandardised) latent, (grid^2, latent_channels).
  nn::Tensor encode(const nn::Tensor& patches) const;
  /// Sigmoid patch colours, (grid^2, patch^2 * 3).
  nn::Tensor decode(const nn::Tensor& latent) const;

 private:
  AutoencoderConfig config_;
  nn::Linear enc_in_, enc_out_, dec_out_;
  nn::Conv2d enc_mid_, dec_in_, dec_mid_;
};

/// Learned embedding per vocabulary word; a prompt becomes its token
/// embeddings followed by one end-of-text embedding. No positions.
class TextEncoder {
 public:
  static std::vector<std::string> default_vocabulary();

  TextEncoder() = default;
  TextEncoder(nn::ParamStore& store, const std::string& prefix, std::vector<std::string> vocabulary, int dim,
              std::mt19937_64& rng);

  int dim() const { return dim_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  int token_id(const std::string& word) const;
  int end_id() const { return static_cast<int>(vocab_.size()) + 1; }
  int unknown_id() const { return static_cast<int>(vocab_.size()); }
  int null_id() const { return static_cast<int>(vocab_.size()) + 2; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

  std::vector<int> ids(const std::string& prompt) const;
  /// (tokens + 1, dim); the last row is the end-of-text embedding, or the
  /// empty-prompt embedding when the prompt has no words.
  nn::Tensor encode(const std::string& prompt) const;
  /// Mean of the phrase's token embeddings (end token excluded), (1, dim).
  nn::Matrix pooled(const std::string& phrase) const;

 private:
  std::vector<std::string> vocab_;
  std::map<std::string, int> index_;
  nn::Tensor table_;
  int dim_ = 0;
  WordTokenizer tokenizer_;
};

struct UNetConfig {
  int latent_channels = 4;
  int base_channels = 32;
  int time_dim = 128;
  int context_dim = 64;
  int heads = 4;
  int groups = 8;
  int latent_size = 16;
};

/// Activations kept for box prediction: (h * w, C) maps in capture order
/// down1, down2, up1, up2.
struct FeatureCapture {
  std::vector<std::string> names;
  std::vector<nn::Matrix> maps;
  std::vector<Resolution> hw;
  int timestep = 0;
};

class ToyUNet final : public ControllableDenoiser {
 public:
  ToyUNet() = default;
  ToyUNet(nn::ParamStore& store, const std::string& prefix, UNetConfig config, std::mt19937_64& rng);

  const UNetConfig& config() const { return config_; }
  /// Predicts the noise in `z` (positions x channels) at step t under
  /// `context` (tokens x context_dim).
  nn::Tensor forward(const nn::Tensor& z, int t, const nn::Tensor& context, FeatureCapture* capture = nullptr);

  std::vector<AttentionLayerInfo> attention_layers() const override;
  int add_attention_hook(AttentionHook hook) override;
  void remove_attention_hook(int id) override;
  std::size_t hook_count() const override { return hooks_.size(); }

 private:
  struct ResBlock {
    nn::GroupNorm norm1, norm2;
    nn::Conv2d conv1, conv2, skip;
    nn::Linear time;
    bool has_skip = false;
    nn::Tensor operator()(const nn::Tensor& x, const nn::Tensor& temb, int h, int w) const;
  };
  struct TransformerBlock {
    std::string name;
    Resolution hw;
    nn::LayerNorm norm1, norm2, norm3;
    nn::MultiHeadAttention self_attn, cross_attn;
    nn::Linear ff1, ff2;
  };

  ResBlock make_res(nn::ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng);
  TransformerBlock make_transformer(nn::ParamStore& store, const std::string& name, int dim, Resolution hw,
                                    std::mt19937_64& rng);
  nn::Tensor run_transformer(const TransformerBlock& block, const nn::Tensor& x, const nn::Tensor& context);
  void run_hooks(nn::Matrix& probs, const AttentionLayerInfo& info);

  UNetConfig config_;
  nn::Linear time1_, time2_;
  nn::Conv2d conv_in_, down_, conv_out_;
  nn::GroupNorm norm_out_;
  ResBlock res_d1_, res_d2_, res_u1_, res_u2_;
  TransformerBlock tf_d1_, tf_d2_, tf_u1_, tf_u2_;
  std::map<int, AttentionHook> hooks_;
  int next_hook_ = 0;
};

struct ToyStackConfig {
  AutoencoderConfig autoencoder;
  UNetConfig unet;
  SchedulerConfig scheduler;
  int text_dim = 64;
  std::vector<std::string> vocabulary;  // empty: TextEncoder::default_vocabulary()

  Config to_config() const;
  static ToyStackConfig from_config(const Config& config);
  /// Propagates autoencoder / text sizes into the U-Net config.
  void finalize();
};

/// Autoencoder + text encoder + U-Net + scheduler sharing one parameter
/// store (names prefixed "ae.", "text.", "unet."). Latents handed to the
/// U-Net are standardised per channel with the stored statistics.
class ToyStack {
 public:
  explicit ToyStack(ToyStackConfig config = {}, std::uint64_t seed = 0);
  ToyStack(const ToyStack&) = delete;
  ToyStack& operator=(const ToyStack&) = delete;

  /// Throws std::runtime_error if the file is unreadable or lacks any weight.
  static std::unique_ptr<ToyStack> load(const std::string& path);
  static std::unique_ptr<ToyStack> from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "");
  void save(const std::string& path, const Config& extra = {}) const;
  /// Adds config (as `stack.*` keys) and weights under `prefix` to `ckpt`.
  void export_to(Checkpoint& ckpt, Config& config, const std::string& prefix = "") const;

  const ToyStackConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  Autoencoder& autoencoder() { return ae_; }
  TextEncoder& text() { return text_; }
  const TextEncoder& text() const { return text_; }
  ToyUNet& unet() { return unet_; }
  const Scheduler& scheduler() const { return scheduler_; }

  Latent encode(const Image& image) const;
  Image decode(const Latent& z) const;
  nn::Matrix standardize(const nn::Matrix& raw) const;
  nn::Matrix unstandardize(const nn::Matrix& z) const;
  void set_latent_stats(const nn::Matrix& mean, const nn::Matrix& std);

  const nn::Matrix& latent_mean() const { return latent_mean_; }
  const nn::Matrix& latent_std() const { return latent_std_; }

  /// FNV-1a checksum over every stack parameter.
  std::uint64_t checksum() const { return params_.checksum(); }

 private:
  ToyStackConfig config_;
  nn::ParamStore params_;
  Autoencoder ae_;
  TextEncoder text_;
  ToyUNet unet_;
  Scheduler scheduler_;
  nn::Matrix latent_mean_, latent_std_;  // (1, C), stored beside the weights
};

}  // namespace boxguide
