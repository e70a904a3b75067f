#include "boxguide/boxnet.hpp"

#include "boxguide/common.hpp"

#include <stdexcept>

namespace boxguide {

using nn::Matrix;
using nn::Tensor;

Config BoxNetConfig::to_config() const {
  Config c;
  c.set("boxnet.input_channels", std::to_string(input_channels));
  c.set("boxnet.feature_dim", std::to_string(feature_dim));
  c.set("boxnet.feature_h", std::to_string(feature_hw.height));
  c.set("boxnet.feature_w", std::to_string(feature_hw.width));
  c.set("boxnet.text_dim", std::to_string(text_dim));
  c.set("boxnet.model_dim", std::to_string(model_dim));
  c.set("boxnet.ff_dim", std::to_string(ff_dim));
  c.set("boxnet.heads", std::to_string(heads));
  c.set("boxnet.encoder_layers", std::to_string(encoder_layers));
  c.set("boxnet.decoder_layers", std::to_string(decoder_layers));
  c.set("boxnet.max_entities", std::to_string(max_entities));
  return c;
}

BoxNetConfig BoxNetConfig::from_config(const Config& c) {
  BoxNetConfig out;
  auto get = [&c](const char* key, int fallback) { return static_cast<int>(c.get_int(key, fallback)); };
  out.input_channels = get("boxnet.input_channels", out.input_channels);
  out.feature_dim = get("boxnet.feature_dim", out.feature_dim);
  out.feature_hw.height = get("boxnet.feature_h", out.feature_hw.height);
  out.feature_hw.width = get("boxnet.feature_w", out.feature_hw.width);
  out.text_dim = get("boxnet.text_dim", out.text_dim);
  out.model_dim = get("boxnet.model_dim", out.model_dim);
  out.ff_dim = get("boxnet.ff_dim", out.ff_dim);
  out.heads = get("boxnet.heads", out.heads);
  out.encoder_layers = get("boxnet.encoder_layers", out.encoder_layers);
  out.decoder_layers = get("boxnet.decoder_layers", out.decoder_layers);
  out.max_entities = get("boxnet.max_entities", out.max_entities);
  if (out.max_entities < 1 || out.encoder_layers < 0 || out.decoder_layers < 1 || out.feature_hw.height < 1 ||
      out.feature_hw.width < 1) {
    throw std::invalid_argument("boxnet config: invalid sizes");
  }
  return out;
}

int entity_category(const EntitySpan& span, const EntityLexicon& lexicon) {
  return lexicon.entity_id(span.head_noun).value_or(-1);
}

namespace {

// Half the channels encode the row index, half the column index.
Matrix position_encoding(Resolution hw, int dim) {
  const int half = dim / 2;
  std::vector<double> ys, xs;
  for (int y = 0; y < hw.height; ++y)
    for (int x = 0; x < hw.width; ++x) {
      ys.push_back(y);
      xs.push_back(x);
    }
  Matrix out(static_cast<nn::Index>(ys.size()), dim);
  out.leftCols(half) = nn::sinusoidal_embedding(ys, half, 100.0);
  out.rightCols(dim - half) = nn::sinusoidal_embedding(xs, dim - half, 100.0);
  return out;
}

}  // namespace

BoxNet::BoxNet(BoxNetConfig config, std::uint64_t seed) : config_(config) {
  std::mt19937_64 rng(seed);
  const int d = config_.model_dim;
  input_proj_ = nn::Linear(params_, "input_proj", config_.input_channels, config_.feature_dim, rng);
  if (config_.feature_dim != d) throw std::invalid_argument("boxnet: feature_dim must equal model_dim");
  query_proj_ = nn::Linear(params_, "query_proj", config_.text_dim, d, rng);
  std::normal_distribution<float> n(0.0f, 1.0f);
  placeholder_ = params_.create("placeholder", Matrix::NullaryExpr(1, config_.text_dim, [&] { return n(rng); }));
  for (int i = 0; i < config_.encoder_layers; ++i) {
    const std::string p = "encoder" + std::to_string(i);
    encoder_.push_back({nn::MultiHeadAttention(params_, p + ".attn", d, d, config_.heads, rng),
                        nn::LayerNorm(params_, p + ".norm1", d), nn::LayerNorm(params_, p + ".norm2", d),
                        nn::Linear(params_, p + ".ff1", d, config_.ff_dim, rng),
                        nn::Linear(params_, p + ".ff2", config_.ff_dim, d, rng)});
  }
  for (int i = 0; i < config_.decoder_layers; ++i) {
    const std::string p = "decoder" + std::to_string(i);
    decoder_.push_back({nn::MultiHeadAttention(params_, p + ".self", d, d, config_.heads, rng),
                        nn::MultiHeadAttention(params_, p + ".cross", d, d, config_.heads, rng),
                        nn::LayerNorm(params_, p + ".norm1", d), nn::LayerNorm(params_, p + ".norm2", d),
                        nn::LayerNorm(params_, p + ".norm3", d),
                        nn::Linear(params_, p + ".ff1", d, config_.ff_dim, rng),
                        nn::Linear(params_, p + ".ff2", config_.ff_dim, d, rng)});
  }
  decoder_norm_ = nn::LayerNorm(params_, "decoder_norm", d);
  head_norm_ = nn::LayerNorm(params_, "head_norm", d);
  box_head_ = nn::Linear(params_, "box_head", d, 4, rng);
  position_ = position_encoding(config_.feature_hw, d);
}

FeatureTensor BoxNet::extract_features(const std::vector<Matrix>& maps, const std::vector<Resolution>& hw,
                                       int timestep) const {
  if (maps.empty()) throw std::invalid_argument("extract_features: no activation maps");
  if (maps.size() != hw.size()) throw std::invalid_argument("extract_features: one resolution per map required");
  const Resolution target = config_.feature_hw;
  Matrix stacked(static_cast<nn::Index>(target.height) * target.width, config_.input_channels);
  nn::Index col = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (!maps[i].allFinite()) throw std::invalid_argument("extract_features: non-finite activations");
    if (col + maps[i].cols() > config_.input_channels) {
      throw std::invalid_argument("extract_features: activation channels exceed the configured input width");
    }
    stacked.middleCols(col, maps[i].cols()) =
        nn::resize_bilinear(maps[i], hw[i].height, hw[i].width, target.height, target.width);
    col += maps[i].cols();
  }
  if (col != config_.input_channels) {
    throw std::invalid_argument("extract_features: expected " + std::to_string(config_.input_channels) +
                                " activation channels, got " + std::to_string(col));
  }
  FeatureTensor out;
  out.data = input_proj_(Tensor(std::move(stacked)));
  out.hw = target;
  out.source_timestep = timestep;
  out.source_resolutions = hw;
  return out;
}

FeatureTensor BoxNet::extract_features(const FeatureCapture& capture) const {
  return extract_features(capture.maps, capture.hw, capture.timestep);
}

EntityQuerySet BoxNet::encode_entities(const std::vector<EntitySpan>& spans, const TextEncoder& text,
                                       const EntityLexicon& lexicon) const {
  const int m = config_.max_entities;
  if (static_cast<int>(spans.size()) > m) {
    throw std::invalid_argument("encode_entities: " + std::to_string(spans.size()) + " entities exceed capacity " +
                                std::to_string(m));
  }
  if (text.dim() != config_.text_dim) throw std::invalid_argument("encode_entities: text width mismatch");
  EntityQuerySet out;
  out.n_entities = static_cast<int>(spans.size());
  std::vector<Tensor> rows;
  if (!spans.empty()) {
    Matrix phrases(static_cast<nn::Index>(spans.size()), config_.text_dim);
    for (std::size_t i = 0; i < spans.size(); ++i) {
      phrases.row(static_cast<nn::Index>(i)) = text.pooled(spans[i].phrase);
      out.category_ids.push_back(entity_category(spans[i], lexicon));
    }
    rows.emplace_back(std::move(phrases));
  }
  if (out.n_entities < m) rows.push_back(nn::gather_rows(placeholder_, std::vector<int>(m - out.n_entities, 0)));
  out.embeddings = rows.size() == 1 ? rows[0] : nn::vcat(rows);
  return out;
}

void BoxNet::check_inputs(const FeatureTensor& feature, const EntityQuerySet& queries) const {
  if (!feature.data.defined() || feature.hw != config_.feature_hw ||
      feature.data.rows() != static_cast<nn::Index>(config_.feature_hw.height) * config_.feature_hw.width ||
      feature.data.cols() != config_.feature_dim) {
    throw std::invalid_argument("predict_boxes: feature tensor does not match the BoxNet config");
  }
  if (!queries.embeddings.defined() || queries.embeddings.rows() != config_.max_entities ||
      queries.embeddings.cols() != config_.text_dim || queries.n_entities < 0 ||
      queries.n_entities > config_.max_entities) {
    throw std::invalid_argument("predict_boxes: query set does not match the BoxNet config");
  }
}

Tensor BoxNet::forward(const FeatureTensor& feature, const EntityQuerySet& queries) const {
  check_inputs(feature, queries);
  const Tensor pos(position_);
  Tensor memory = feature.data;
  for (const auto& layer : encoder_) {
    const Tensor qk = nn::add(memory, pos);
    memory = layer.norm1(nn::add(memory, layer.attn(qk, qk, memory)));
    memory = layer.norm2(nn::add(memory, layer.ff2(nn::relu(layer.ff1(memory)))));
  }
  const Tensor memory_keys = nn::add(memory, pos);

  // Projected queries serve both as the decoder input and as its query positions.
  const Tensor query_pos = query_proj_(queries.embeddings);
  Tensor tgt = query_pos;
  for (const auto& layer : decoder_) {
    const Tensor qk = nn::add(tgt, query_pos);
    tgt = layer.norm1(nn::add(tgt, layer.self_attn(qk, qk, tgt)));
    tgt = layer.norm2(nn::add(tgt, layer.cross_attn(nn::add(tgt, query_pos), memory_keys, memory)));
    tgt = layer.norm3(nn::add(tgt, layer.ff2(nn::relu(layer.ff1(tgt)))));
  }
  tgt = decoder_norm_(tgt);
  if (queries.n_entities == 0) return Tensor(Matrix(0, 4));
  const Tensor first = nn::row_slice(tgt, 0, queries.n_entities);
  return nn::sigmoid(box_head_(head_norm_(first)));
}

std::vector<Box<double>> BoxNet::predict_boxes(const FeatureTensor& feature, const EntityQuerySet& queries) const {
  nn::NoGradGuard guard;
  const Matrix raw = forward(feature, queries).value();
  std::vector<Box<double>> out;
  for (nn::Index i = 0; i < raw.rows(); ++i) {
    // Keep w and h strictly positive even if the sigmoid saturates in float.
    auto clamp01 = [](float v) { return std::clamp(static_cast<double>(v), 1e-6, 1.0); };
    out.push_back({clamp01(raw(i, 0)), clamp01(raw(i, 1)), clamp01(raw(i, 2)), clamp01(raw(i, 3))});
  }
  return out;
}

// ------------------------------------------------------------- checkpoint

BoxNetCheckpoint BoxNetCheckpoint::from_checkpoint(const Checkpoint& ckpt) {
  const Config cfg = Config::parse_text(ckpt.config_text);
  BoxNetCheckpoint out;
  out.stack = ToyStack::from_checkpoint(ckpt, "stack.");
  out.boxnet = std::make_unique<BoxNet>(BoxNetConfig::from_config(cfg));
  out.boxnet->params().import_values(ckpt.with_prefix("boxnet."), "boxnet.");
  out.meta.steps = cfg.get_int("meta.steps", 0);
  out.meta.seed = static_cast<std::uint64_t>(cfg.get_int("meta.seed", 0));
  out.meta.dataset_id = cfg.get("meta.dataset_id");
  out.meta.first_loss = cfg.get_double("meta.first_loss", 0.0);
  out.meta.last_loss = cfg.get_double("meta.last_loss", 0.0);
  for (const auto& [k, v] : cfg.values()) {
    if (k.rfind("run.", 0) == 0) out.extra.set(k, v);
  }
  return out;
}

BoxNetCheckpoint BoxNetCheckpoint::load(const std::string& path) { return from_checkpoint(read_checkpoint(path)); }

Config BoxNetCheckpoint::full_config() const {
  if (!stack || !boxnet) throw std::logic_error("BoxNetCheckpoint: stack and boxnet required");
  Config cfg = extra;
  cfg.merge(boxnet->config().to_config());
  cfg.merge(stack->config().to_config());
  cfg.set("meta.steps", std::to_string(meta.steps));
  cfg.set("meta.seed", std::to_string(meta.seed));
  cfg.set("meta.dataset_id", meta.dataset_id);
  cfg.set("meta.first_loss", std::to_string(meta.first_loss));
  cfg.set("meta.last_loss", std::to_string(meta.last_loss));
  cfg.set("stack.checksum", hex64(stack->checksum()));
  cfg.set("boxnet.checksum", hex64(boxnet->params().checksum()));
  return cfg;
}

Checkpoint BoxNetCheckpoint::to_checkpoint(const std::vector<std::pair<std::string, Matrix>>& extra_tensors) const {
  Checkpoint ckpt;
  Config cfg = full_config();
  stack->export_to(ckpt, cfg, "stack.");
  for (auto& entry : boxnet->params().export_values("boxnet.")) ckpt.tensors.push_back(std::move(entry));
  for (const auto& entry : extra_tensors) ckpt.tensors.push_back(entry);
  ckpt.config_text = cfg.to_text();
  return ckpt;
}

void BoxNetCheckpoint::save(const std::string& path,
                            const std::vector<std::pair<std::string, Matrix>>& extra_tensors) const {
  write_checkpoint(path, to_checkpoint(extra_tensors));
}

std::string BoxNetCheckpoint::config_hash() const { return full_config().hash_hex(); }

}  // namespace boxguide
