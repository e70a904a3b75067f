#include "boxguide/toy_diffusion.hpp"

#include "boxguide/common.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace boxguide {

using nn::Matrix;
using nn::Tensor;

// ---------------------------------------------------------------- scheduler

Scheduler::Scheduler(SchedulerConfig config) : config_(config) {
  if (config_.steps < 1) throw std::invalid_argument("scheduler: steps must be >= 1");
  const int T = config_.steps;
  const double s = config_.cosine_offset;
  auto f = [&](double t) {
    const double c = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  alpha_bar_.assign(T + 1, 1.0);
  double running = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double beta = std::min(1.0 - f(t) / f(t - 1), 0.999);
    running *= 1.0 - beta;
    alpha_bar_[t] = running;
  }
}

double Scheduler::alpha_bar(int t) const {
  if (t < 0 || t > config_.steps) throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, T]");
  return alpha_bar_[t];
}

Matrix Scheduler::add_noise(const Matrix& z0, int t, const Matrix& eps) const {
  const double ab = alpha_bar(t);
  if (t == 0) return z0;
  return static_cast<float>(std::sqrt(ab)) * z0 + static_cast<float>(std::sqrt(1.0 - ab)) * eps;
}

Latent Scheduler::add_noise(const Latent& z0, int t, std::uint64_t seed) const {
  alpha_bar(t);
  std::mt19937_64 rng(seed);
  Latent out = z0;
  out.data = add_noise(z0.data, t, gaussian_matrix(z0.data.rows(), z0.data.cols(), rng));
  return out;
}

Matrix Scheduler::step(const Matrix& zt, int t, const Matrix& eps, std::mt19937_64* rng) const {
  if (t < 1 || t > config_.steps) throw std::out_of_range("step: timestep outside [1, T]");
  const double ab = alpha_bar_[t], ab_prev = alpha_bar_[t - 1];
  const float sa = static_cast<float>(std::sqrt(ab)), sb = static_cast<float>(std::sqrt(1.0 - ab));
  Matrix x0 = (zt - sb * eps) / sa;
  if (config_.clip_sample > 0) x0 = x0.cwiseMax(-config_.clip_sample).cwiseMin(config_.clip_sample);
  if (!rng) {
    const Matrix eps_hat = (zt - sa * x0) / sb;
    return static_cast<float>(std::sqrt(ab_prev)) * x0 + static_cast<float>(std::sqrt(1.0 - ab_prev)) * eps_hat;
  }
  const double beta = 1.0 - ab / ab_prev;
  const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
  const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
  Matrix mean = static_cast<float>(c0) * x0 + static_cast<float>(ct) * zt;
  if (t > 1) {
    const double var = beta * (1.0 - ab_prev) / (1.0 - ab);
    mean += static_cast<float>(std::sqrt(var)) * gaussian_matrix(zt.rows(), zt.cols(), *rng);
  }
  return mean;
}

Matrix gaussian_matrix(nn::Index rows, nn::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Matrix m(rows, cols);
  for (nn::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// -------------------------------------------------------------- autoencoder

Matrix patchify(const Image& image, int patch) {
  const int grid = image.height / patch;
  Matrix out(static_cast<nn::Index>(grid) * grid, patch * patch * 3);
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx)
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int c = 0; c < 3; ++c)
            out(gy * grid + gx, (py * patch + px) * 3 + c) = image(gy * patch + py, gx * patch + px, c);
  return out;
}

Image unpatchify(const Matrix& patches, int grid, int patch) {
  Image img = Image::filled(grid * patch, grid * patch, 0, 0, 0);
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx)
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int c = 0; c < 3; ++c)
            img(gy * patch + py, gx * patch + px, c) = patches(gy * grid + gx, (py * patch + px) * 3 + c);
  return img;
}

Autoencoder::Autoencoder(nn::ParamStore& store, const std::string& prefix, AutoencoderConfig config,
                         std::mt19937_64& rng)
    : config_(config) {
  const int in = config.patch * config.patch * 3;
  enc_in_ = nn::Linear(store, prefix + ".enc_in", in, config.hidden, rng);
  enc_mid_ = nn::Conv2d(store, prefix + ".enc_mid", config.hidden, config.hidden, 3, 1, 1, rng);
  enc_out_ = nn::Linear(store, prefix + ".enc_out", config.hidden, config.latent_channels, rng);
  dec_in_ = nn::Conv2d(store, prefix + ".dec_in", config.latent_channels, config.hidden, 3, 1, 1, rng);
  dec_mid_ = nn::Conv2d(store, prefix + ".dec_mid", config.hidden, config.hidden, 3, 1, 1, rng);
  dec_out_ = nn::Linear(store, prefix + ".dec_out", config.hidden, in, rng);
}

Tensor Autoencoder::encode(const Tensor& patches) const {
  const int g = config_.latent_size();
  Tensor h = nn::silu(enc_in_(patches));
  h = nn::silu(enc_mid_(h, g, g));
  return enc_out_(h);
}

Tensor Autoencoder::decode(const Tensor& latent) const {
  const int g = config_.latent_size();
  Tensor h = nn::silu(dec_in_(latent, g, g));
  h = nn::silu(dec_mid_(h, g, g));
  return nn::sigmoid(dec_out_(h));
}

// ------------------------------------------------------------- text encoder

std::vector<std::string> TextEncoder::default_vocabulary() {
  std::vector<std::string> words = EntityLexicon::builtin().words();
  for (const char* w : {"and", "with", "next", "to", "on", "of", "top", "in", "front", "behind", "near", "left",
                        "right", "above", "below", "is", "are", "sitting", "standing", "by", "at", ",", ".", "'s"}) {
    if (std::find(words.begin(), words.end(), w) == words.end()) words.emplace_back(w);
  }
  return words;
}

TextEncoder::TextEncoder(nn::ParamStore& store, const std::string& prefix, std::vector<std::string> vocabulary,
                         int dim, std::mt19937_64& rng)
    : vocab_(std::move(vocabulary)), dim_(dim) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<int>(i));
  std::normal_distribution<float> n(0.0f, 1.0f);
  // Rows: vocabulary, unknown word, end of text, empty prompt.
  table_ = store.create(prefix + ".table",
                        Matrix::NullaryExpr(static_cast<nn::Index>(vocab_.size()) + 3, dim, [&] { return n(rng); }));
}

int TextEncoder::token_id(const std::string& word) const {
  auto it = index_.find(to_lower(word));
  return it == index_.end() ? unknown_id() : it->second;
}

std::vector<int> TextEncoder::ids(const std::string& prompt) const {
  std::vector<int> out;
  for (const auto& tok : tokenizer_.tokenize(prompt)) out.push_back(token_id(tok.text));
  return out;
}

Tensor TextEncoder::encode(const std::string& prompt) const {
  std::vector<int> tokens = ids(prompt);
  // A wordless prompt gets its own embedding rather than a bare end token.
  tokens.push_back(tokens.empty() ? null_id() : end_id());
  return nn::gather_rows(table_, tokens);
}

Matrix TextEncoder::pooled(const std::string& phrase) const {
  const std::vector<int> tokens = ids(phrase);
  if (tokens.empty()) throw std::invalid_argument("pooled: phrase has no tokens");
  Matrix sum = Matrix::Zero(1, dim_);
  for (int id : tokens) sum += table_.value().row(id);
  return sum / static_cast<float>(tokens.size());
}

// --------------------------------------------------------------------- U-Net

ToyUNet::ResBlock ToyUNet::make_res(nn::ParamStore& store, const std::string& name, int in, int out,
                                    std::mt19937_64& rng) {
  ResBlock b;
  b.norm1 = nn::GroupNorm(store, name + ".norm1", in, config_.groups);
  b.conv1 = nn::Conv2d(store, name + ".conv1", in, out, 3, 1, 1, rng);
  b.time = nn::Linear(store, name + ".time", config_.time_dim, out, rng);
  b.norm2 = nn::GroupNorm(store, name + ".norm2", out, config_.groups);
  b.conv2 = nn::Conv2d(store, name + ".conv2", out, out, 3, 1, 1, rng, nn::Init::zero);
  b.has_skip = in != out;
  if (b.has_skip) b.skip = nn::Conv2d(store, name + ".skip", in, out, 1, 1, 0, rng);
  return b;
}

Tensor ToyUNet::ResBlock::operator()(const Tensor& x, const Tensor& temb, int h, int w) const {
  Tensor y = conv1(nn::silu(norm1(x)), h, w);
  y = nn::add_row(y, time(nn::silu(temb)));
  y = conv2(nn::silu(norm2(y)), h, w);
  return nn::add(y, has_skip ? skip(x, h, w) : x);
}

ToyUNet::TransformerBlock ToyUNet::make_transformer(nn::ParamStore& store, const std::string& name, int dim,
                                                    Resolution hw, std::mt19937_64& rng) {
  TransformerBlock b;
  b.name = name;
  b.hw = hw;
  b.norm1 = nn::LayerNorm(store, name + ".norm1", dim);
  b.self_attn = nn::MultiHeadAttention(store, name + ".self", dim, dim, config_.heads, rng, nn::Init::zero);
  b.norm2 = nn::LayerNorm(store, name + ".norm2", dim);
  b.cross_attn =
      nn::MultiHeadAttention(store, name + ".cross", dim, config_.context_dim, config_.heads, rng, nn::Init::zero);
  b.norm3 = nn::LayerNorm(store, name + ".norm3", dim);
  b.ff1 = nn::Linear(store, name + ".ff1", dim, 4 * dim, rng);
  b.ff2 = nn::Linear(store, name + ".ff2", 4 * dim, dim, rng, nn::Init::zero);
  return b;
}

ToyUNet::ToyUNet(nn::ParamStore& store, const std::string& prefix, UNetConfig config, std::mt19937_64& rng)
    : config_(config) {
  const int c = config.base_channels, s = config.latent_size;
  const Resolution hi{s, s}, lo{s / 2, s / 2};
  time1_ = nn::Linear(store, prefix + ".time1", c * 2, config.time_dim, rng);
  time2_ = nn::Linear(store, prefix + ".time2", config.time_dim, config.time_dim, rng);
  conv_in_ = nn::Conv2d(store, prefix + ".conv_in", config.latent_channels, c, 3, 1, 1, rng);
  res_d1_ = make_res(store, prefix + ".down1.res", c, c, rng);
  tf_d1_ = make_transformer(store, prefix + ".down1", c, hi, rng);
  down_ = nn::Conv2d(store, prefix + ".downsample", c, 2 * c, 3, 2, 1, rng);
  res_d2_ = make_res(store, prefix + ".down2.res", 2 * c, 2 * c, rng);
  tf_d2_ = make_transformer(store, prefix + ".down2", 2 * c, lo, rng);
  res_u1_ = make_res(store, prefix + ".up1.res", 4 * c, 2 * c, rng);
  tf_u1_ = make_transformer(store, prefix + ".up1", 2 * c, lo, rng);
  res_u2_ = make_res(store, prefix + ".up2.res", 3 * c, c, rng);
  tf_u2_ = make_transformer(store, prefix + ".up2", c, hi, rng);
  norm_out_ = nn::GroupNorm(store, prefix + ".norm_out", c, config.groups);
  conv_out_ = nn::Conv2d(store, prefix + ".conv_out", c, config.latent_channels, 3, 1, 1, rng, nn::Init::zero);
  // Layer names without the store prefix, as reported to hooks.
  tf_d1_.name = "down1";
  tf_d2_.name = "down2";
  tf_u1_.name = "up1";
  tf_u2_.name = "up2";
}

std::vector<AttentionLayerInfo> ToyUNet::attention_layers() const {
  std::vector<AttentionLayerInfo> out;
  for (const TransformerBlock* b : {&tf_d1_, &tf_d2_, &tf_u1_, &tf_u2_}) {
    out.push_back({b->name + ".self", AttentionKind::self, b->hw});
    out.push_back({b->name + ".cross", AttentionKind::cross, b->hw});
  }
  return out;
}

int ToyUNet::add_attention_hook(AttentionHook hook) {
  hooks_.emplace(next_hook_, std::move(hook));
  return next_hook_++;
}

void ToyUNet::remove_attention_hook(int id) { hooks_.erase(id); }

void ToyUNet::run_hooks(Matrix& probs, const AttentionLayerInfo& info) {
  AttentionMap map{std::move(probs), info.hw};
  for (auto& [id, hook] : hooks_) hook(map, info);
  probs = std::move(map.data);
}

Tensor ToyUNet::run_transformer(const TransformerBlock& b, const Tensor& x, const Tensor& context) {
  const bool hooked = !hooks_.empty() && !nn::grad_enabled();
  const AttentionLayerInfo self_info{b.name + ".self", AttentionKind::self, b.hw};
  const AttentionLayerInfo cross_info{b.name + ".cross", AttentionKind::cross, b.hw};
  const nn::ProbabilityEditor self_edit = [&](Matrix& p, int) { run_hooks(p, self_info); };
  const nn::ProbabilityEditor cross_edit = [&](Matrix& p, int) { run_hooks(p, cross_info); };

  Tensor h = b.norm1(x);
  Tensor y = nn::add(x, b.self_attn(h, h, h, hooked ? &self_edit : nullptr));
  h = b.norm2(y);
  y = nn::add(y, b.cross_attn(h, context, context, hooked ? &cross_edit : nullptr));
  h = b.norm3(y);
  return nn::add(y, b.ff2(nn::silu(b.ff1(h))));
}

Tensor ToyUNet::forward(const Tensor& z, int t, const Tensor& context, FeatureCapture* capture) {
  const int s = config_.latent_size, half = s / 2;
  if (z.rows() != static_cast<nn::Index>(s) * s || z.cols() != config_.latent_channels) {
    throw std::invalid_argument("unet: latent shape mismatch");
  }
  if (context.cols() != config_.context_dim) throw std::invalid_argument("unet: context width mismatch");
  auto keep = [&](const char* name, const Tensor& h, Resolution hw) {
    if (!capture) return;
    capture->names.emplace_back(name);
    capture->maps.push_back(h.value());
    capture->hw.push_back(hw);
  };
  if (capture) {
    *capture = FeatureCapture{};
    capture->timestep = t;
  }

  const double position = static_cast<double>(t) * 1000.0 / 50.0;
  const Tensor temb = time2_(nn::silu(time1_(Tensor(nn::sinusoidal_embedding({position}, time1_.w.rows())))));

  Tensor h = conv_in_(z, s, s);
  h = run_transformer(tf_d1_, res_d1_(h, temb, s, s), context);
  keep("down1", h, {s, s});
  const Tensor skip1 = h;
  h = down_(h, s, s);
  h = run_transformer(tf_d2_, res_d2_(h, temb, half, half), context);
  keep("down2", h, {half, half});
  const Tensor skip2 = h;
  h = run_transformer(tf_u1_, res_u1_(nn::hcat({h, skip2}), temb, half, half), context);
  keep("up1", h, {half, half});
  h = nn::upsample_nearest2x(h, half, half);
  h = run_transformer(tf_u2_, res_u2_(nn::hcat({h, skip1}), temb, s, s), context);
  keep("up2", h, {s, s});
  return conv_out_(nn::silu(norm_out_(h)), s, s);
}

// ----------------------------------------------------------------- the stack

Config ToyStackConfig::to_config() const {
  Config c;
  c.set("stack.image_size", std::to_string(autoencoder.image_size));
  c.set("stack.patch", std::to_string(autoencoder.patch));
  c.set("stack.latent_channels", std::to_string(autoencoder.latent_channels));
  c.set("stack.ae_hidden", std::to_string(autoencoder.hidden));
  c.set("stack.base_channels", std::to_string(unet.base_channels));
  c.set("stack.time_dim", std::to_string(unet.time_dim));
  c.set("stack.heads", std::to_string(unet.heads));
  c.set("stack.groups", std::to_string(unet.groups));
  c.set("stack.text_dim", std::to_string(text_dim));
  c.set("stack.steps", std::to_string(scheduler.steps));
  std::ostringstream s;
  s.precision(17);
  s << scheduler.cosine_offset;
  c.set("stack.cosine_offset", s.str());
  s.str("");
  s << scheduler.clip_sample;
  c.set("stack.clip_sample", s.str());
  std::string words;
  for (const auto& w : vocabulary) words += (words.empty() ? "" : " ") + w;
  c.set("stack.vocabulary", words);
  return c;
}

ToyStackConfig ToyStackConfig::from_config(const Config& c) {
  ToyStackConfig out;
  out.autoencoder.image_size = static_cast<int>(c.get_int("stack.image_size", out.autoencoder.image_size));
  out.autoencoder.patch = static_cast<int>(c.get_int("stack.patch", out.autoencoder.patch));
  out.autoencoder.latent_channels =
      static_cast<int>(c.get_int("stack.latent_channels", out.autoencoder.latent_channels));
  out.autoencoder.hidden = static_cast<int>(c.get_int("stack.ae_hidden", out.autoencoder.hidden));
  out.unet.base_channels = static_cast<int>(c.get_int("stack.base_channels", out.unet.base_channels));
  out.unet.time_dim = static_cast<int>(c.get_int("stack.time_dim", out.unet.time_dim));
  out.unet.heads = static_cast<int>(c.get_int("stack.heads", out.unet.heads));
  out.unet.groups = static_cast<int>(c.get_int("stack.groups", out.unet.groups));
  out.text_dim = static_cast<int>(c.get_int("stack.text_dim", out.text_dim));
  out.scheduler.steps = static_cast<int>(c.get_int("stack.steps", out.scheduler.steps));
  out.scheduler.cosine_offset = c.get_double("stack.cosine_offset", out.scheduler.cosine_offset);
  out.scheduler.clip_sample = static_cast<float>(c.get_double("stack.clip_sample", out.scheduler.clip_sample));
  if (c.has("stack.vocabulary")) {
    out.vocabulary.clear();
    std::istringstream in(c.get("stack.vocabulary"));
    std::string w;
    while (in >> w) out.vocabulary.push_back(w);
  }
  out.finalize();
  return out;
}

void ToyStackConfig::finalize() {
  unet.latent_channels = autoencoder.latent_channels;
  unet.latent_size = autoencoder.latent_size();
  unet.context_dim = text_dim;
  if (vocabulary.empty()) vocabulary = TextEncoder::default_vocabulary();
}

ToyStack::ToyStack(ToyStackConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.finalize();
  std::mt19937_64 rng(seed);
  ae_ = Autoencoder(params_, "ae", config_.autoencoder, rng);
  text_ = TextEncoder(params_, "text", config_.vocabulary, config_.text_dim, rng);
  unet_ = ToyUNet(params_, "unet", config_.unet, rng);
  scheduler_ = Scheduler(config_.scheduler);
  latent_mean_ = Matrix::Zero(1, config_.autoencoder.latent_channels);
  latent_std_ = Matrix::Ones(1, config_.autoencoder.latent_channels);
}

std::unique_ptr<ToyStack> ToyStack::from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  const Config cfg = Config::parse_text(ckpt.config_text);
  auto stack = std::make_unique<ToyStack>(ToyStackConfig::from_config(cfg));
  stack->params_.import_values(ckpt.with_prefix(prefix), prefix);
  const Matrix* mean = ckpt.find(prefix + "latent.mean");
  const Matrix* std = ckpt.find(prefix + "latent.std");
  if (!mean || !std) throw std::runtime_error("checkpoint is missing latent statistics");
  stack->set_latent_stats(*mean, *std);
  return stack;
}

std::unique_ptr<ToyStack> ToyStack::load(const std::string& path) { return from_checkpoint(read_checkpoint(path)); }

void ToyStack::export_to(Checkpoint& ckpt, Config& config, const std::string& prefix) const {
  config.merge(config_.to_config());
  for (auto& entry : params_.export_values(prefix)) ckpt.tensors.push_back(std::move(entry));
  ckpt.tensors.emplace_back(prefix + "latent.mean", latent_mean_);
  ckpt.tensors.emplace_back(prefix + "latent.std", latent_std_);
}

void ToyStack::save(const std::string& path, const Config& extra) const {
  Checkpoint ckpt;
  Config config = extra;
  export_to(ckpt, config);
  config.set("stack.checksum", hex64(checksum()));
  ckpt.config_text = config.to_text();
  write_checkpoint(path, ckpt);
}

void ToyStack::set_latent_stats(const Matrix& mean, const Matrix& std) {
  if (mean.cols() != config_.autoencoder.latent_channels || std.cols() != mean.cols() || mean.rows() != 1 ||
      std.rows() != 1) {
    throw std::invalid_argument("latent statistics shape mismatch");
  }
  latent_mean_ = mean;
  latent_std_ = std;
}

Matrix ToyStack::standardize(const Matrix& raw) const {
  return (raw.rowwise() - latent_mean_.row(0)).array().rowwise() / latent_std_.row(0).array();
}

Matrix ToyStack::unstandardize(const Matrix& z) const {
  return (z.array().rowwise() * latent_std_.row(0).array()).matrix().rowwise() + latent_mean_.row(0);
}

Latent ToyStack::encode(const Image& image) const {
  if (image.height != config_.autoencoder.image_size || image.width != config_.autoencoder.image_size) {
    throw std::invalid_argument("encode: image size mismatch");
  }
  nn::NoGradGuard guard;
  Latent z;
  z.height = z.width = config_.autoencoder.latent_size();
  z.data = standardize(ae_.encode(Tensor(patchify(image, config_.autoencoder.patch))).value());
  return z;
}

Image ToyStack::decode(const Latent& z) const {
  const int g = config_.autoencoder.latent_size();
  if (z.height != g || z.width != g || z.channels() != config_.autoencoder.latent_channels) {
    throw std::invalid_argument("decode: latent shape mismatch");
  }
  nn::NoGradGuard guard;
  return unpatchify(ae_.decode(Tensor(unstandardize(z.data))).value(), g, config_.autoencoder.patch);
}

}  // namespace boxguide
