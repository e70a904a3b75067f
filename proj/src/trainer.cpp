#include "boxguide/trainer.hpp"

#include "boxguide/common.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace boxguide {

namespace fs = std::filesystem;
using nn::Matrix;
using nn::Tensor;

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig out;
  out.lr = c.get_double("train.lr", out.lr);
  out.weight_decay = c.get_double("train.weight_decay", out.weight_decay);
  out.warmup_steps = static_cast<int>(c.get_int("train.warmup_steps", out.warmup_steps));
  out.total_steps = static_cast<int>(c.get_int("train.total_steps", out.total_steps));
  out.batch_size = static_cast<int>(c.get_int("train.batch_size", out.batch_size));
  out.seed = static_cast<std::uint64_t>(c.get_int("train.seed", static_cast<long long>(out.seed)));
  out.lambdas.class_penalty = c.get_double("train.lambda_class", out.lambdas.class_penalty);
  out.lambdas.iou = c.get_double("train.lambda_iou", out.lambdas.iou);
  out.lambdas.l1 = c.get_double("train.lambda_l1", out.lambdas.l1);
  out.max_entities = static_cast<int>(c.get_int("train.max_entities", out.max_entities));
  out.checkpoint_every = static_cast<int>(c.get_int("train.checkpoint_every", out.checkpoint_every));
  if (out.total_steps < 1 || out.batch_size < 1 || out.warmup_steps < 0 || out.max_entities < 1) {
    throw std::invalid_argument("train: total_steps and batch_size must be positive, warmup_steps >= 0");
  }
  if (out.lambdas.class_penalty < 0 || out.lambdas.iou < 0 || out.lambdas.l1 < 0) {
    throw std::invalid_argument("train: lambdas must be >= 0");
  }
  if (!(out.lr >= 0) || !(out.weight_decay >= 0)) throw std::invalid_argument("train: lr and weight_decay must be >= 0");
  return out;
}

Config TrainConfig::to_config() const {
  Config c;
  c.set("train.lr", format_double(lr));
  c.set("train.weight_decay", format_double(weight_decay));
  c.set("train.warmup_steps", std::to_string(warmup_steps));
  c.set("train.total_steps", std::to_string(total_steps));
  c.set("train.batch_size", std::to_string(batch_size));
  c.set("train.seed", std::to_string(seed));
  c.set("train.lambda_class", format_double(lambdas.class_penalty));
  c.set("train.lambda_iou", format_double(lambdas.iou));
  c.set("train.lambda_l1", format_double(lambdas.l1));
  c.set("train.max_entities", std::to_string(max_entities));
  c.set("train.checkpoint_every", std::to_string(checkpoint_every));
  return c;
}

// ------------------------------------------------------------------ dataset

namespace {

TrainSample annotate(Image image, std::string caption, const std::vector<Box<double>>& boxes,
                     const std::vector<std::string>& nouns, const EntityLexicon& lexicon) {
  TrainSample s;
  s.image = std::move(image);
  s.caption = std::move(caption);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto id = lexicon.entity_id(nouns[i]);
    if (!id) throw std::invalid_argument("category '" + nouns[i] + "' is not in the lexicon");
    s.gt.push_back({boxes[i], *id});
  }
  s.spans = parse_entities(s.caption, lexicon).spans;
  return s;
}

std::string box_text(const std::vector<LabeledBox>& boxes) {
  std::string out;
  for (const auto& b : boxes) {
    if (!out.empty()) out += ';';
    out += format_double(b.box.cx) + "," + format_double(b.box.cy) + "," + format_double(b.box.w) + "," +
           format_double(b.box.h);
  }
  return out;
}

}  // namespace

std::vector<TrainSample> make_shape_dataset(int scenes, std::uint64_t seed, double shuffled_fraction,
                                            const SceneOptions& options) {
  if (scenes < 1) throw std::invalid_argument("make_shape_dataset: need at least one scene");
  const EntityLexicon lexicon = EntityLexicon::builtin();
  std::vector<TrainSample> out;
  out.reserve(scenes);
  for (int i = 0; i < scenes; ++i) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const Scene scene = random_scene(rng, options);
    const bool shuffle = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < shuffled_fraction;
    std::vector<Box<double>> boxes;
    std::vector<std::string> nouns;
    for (const auto& s : scene.shapes) {
      boxes.push_back(s.box);
      nouns.emplace_back(to_string(s.kind));
    }
    out.push_back(annotate(render(scene, options.image_size), shuffle ? shuffled_caption(scene, rng) : caption(scene),
                           boxes, nouns, lexicon));
  }
  return out;
}

void write_dataset(const std::string& dir, const std::vector<TrainSample>& samples, const std::string& config_hash) {
  const EntityLexicon lexicon = EntityLexicon::builtin();
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream ann(fs::path(dir) / "annotations.txt");
  if (!ann) throw std::runtime_error("cannot write " + dir + "/annotations.txt");
  ann << format_record({{"record", "header"},
                        {"scenes", std::to_string(samples.size())},
                        {"config_hash", config_hash},
                        {"dataset_id", dataset_id(samples)}})
      << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    const auto& s = samples[i];
    std::string nouns;
    for (const auto& b : s.gt) nouns += (nouns.empty() ? "" : ",") + lexicon.entity_name(b.category);
    write_png((fs::path(dir) / "images" / name).string(), s.image, {{"caption", s.caption}, {"config_hash", config_hash}});
    ann << format_record({{"record", "scene"},
                          {"image", std::string("images/") + name},
                          {"caption", s.caption},
                          {"boxes", box_text(s.gt)},
                          {"categories", nouns}})
        << '\n';
  }
  if (!ann) throw std::runtime_error("error writing " + dir + "/annotations.txt");
}

std::vector<TrainSample> read_dataset(const std::string& dir, const EntityLexicon& lexicon) {
  const fs::path path = fs::path(dir) / "annotations.txt";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<TrainSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Record r = parse_record(line);
    if (record_value(r, "record") != "scene") continue;
    std::vector<Box<double>> boxes;
    std::stringstream box_stream(record_value(r, "boxes"));
    std::string item;
    while (std::getline(box_stream, item, ';')) {
      Box<double> b;
      char c;
      std::istringstream bs(item);
      if (!(bs >> b.cx >> c >> b.cy >> c >> b.w >> c >> b.h)) throw std::invalid_argument("bad box in " + path.string());
      boxes.push_back(b);
    }
    std::vector<std::string> nouns;
    std::stringstream noun_stream(record_value(r, "categories"));
    while (std::getline(noun_stream, item, ',')) nouns.push_back(item);
    if (nouns.size() != boxes.size()) throw std::invalid_argument("box / category count mismatch in " + path.string());
    out.push_back(annotate(read_png((fs::path(dir) / record_value(r, "image")).string()), record_value(r, "caption"),
                           boxes, nouns, lexicon));
  }
  if (out.empty()) throw std::runtime_error("dataset " + dir + " has no scenes");
  return out;
}

std::string dataset_id(const std::vector<TrainSample>& samples) {
  std::uint64_t h = fnv1a64("");
  for (const auto& s : samples) {
    h = fnv1a64(s.caption, h);
    h = fnv1a64(box_text(s.gt), h);
  }
  return hex64(h);
}

// ----------------------------------------------------------------- training

double learning_rate(const TrainConfig& config, long long step) {
  return warmup_cosine_lr(step, config.warmup_steps, config.total_steps, config.lr);
}

TrainState fresh_state(std::unique_ptr<ToyStack> stack, const TrainConfig& config) {
  if (!stack) throw std::invalid_argument("fresh_state: stack required");
  BoxNetConfig bc;
  const auto& u = stack->config().unet;
  bc.input_channels = 6 * u.base_channels;
  bc.feature_hw = {u.latent_size, u.latent_size};
  bc.text_dim = stack->config().text_dim;
  bc.max_entities = config.max_entities;
  TrainState state;
  state.model.stack = std::move(stack);
  state.model.boxnet = std::make_unique<BoxNet>(bc, derive_seed(config.seed, 0xb0c5));
  state.model.meta.seed = config.seed;
  return state;
}

TrainState load_state(const std::string& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  TrainState state;
  state.model = BoxNetCheckpoint::from_checkpoint(ckpt);
  state.optimizer = ckpt.with_prefix("adam.");
  state.next_step = state.model.extra.has("run.next_step") ? state.model.extra.get_int("run.next_step", 0)
                                                           : state.model.meta.steps;
  return state;
}

void save_state(const std::string& path, const TrainState& state) {
  Checkpoint ckpt = state.model.to_checkpoint(state.optimizer);
  Config cfg = Config::parse_text(ckpt.config_text);
  cfg.set("run.next_step", std::to_string(state.next_step));
  ckpt.config_text = cfg.to_text();
  write_checkpoint(path, ckpt);
}

TrainStepResult train_step(const std::vector<const TrainSample*>& batch, std::mt19937_64& rng, BoxNet& boxnet,
                           ToyStack& stack, nn::AdamW& optimizer, double lr, const LossWeights& lambdas,
                           const std::vector<const Matrix*>& latents) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (!latents.empty() && latents.size() != batch.size()) throw std::invalid_argument("train_step: latent count");
  const int T = stack.scheduler().steps();
  const float inv_batch = 1.0f / static_cast<float>(batch.size());
  TrainStepResult result;
  double total = 0.0;
  std::string failure;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainSample& sample = *batch[i];
    const int t = std::uniform_int_distribution<int>(1, T)(rng);
    result.timesteps.push_back(t);
    FeatureCapture capture;
    {
      nn::NoGradGuard frozen;
      const Matrix z0 = latents.empty() ? stack.encode(sample.image).data : *latents[i];
      const Matrix eps = gaussian_matrix(z0.rows(), z0.cols(), rng);
      stack.unet().forward(Tensor(stack.scheduler().add_noise(z0, t, eps)), t, stack.text().encode(sample.caption),
                           &capture);
    }
    const FeatureTensor feature = boxnet.extract_features(capture);
    const EntityQuerySet queries = boxnet.encode_entities(sample.spans, stack.text());
    const Tensor pred = boxnet.forward(feature, queries);

    if (!pred.value().allFinite()) {
      failure += "sample " + std::to_string(i) + " t=" + std::to_string(t) + " non-finite boxes; ";
      continue;
    }
    MatchProblem problem;
    problem.weights = lambdas;
    problem.ground_truth = sample.gt;
    for (nn::Index r = 0; r < pred.rows(); ++r) {
      const auto& v = pred.value();
      problem.predictions.push_back({{v(r, 0), v(r, 1), v(r, 2), v(r, 3)}, queries.category_ids[r]});
    }
    double loss = 0.0;
    Matrix grad = Matrix::Zero(pred.rows(), 4);
    if (!problem.predictions.empty() && !problem.ground_truth.empty()) {
      const Assignment match = hungarian_match(problem);
      for (const auto& [p, g] : match.pairs) {
        const BoxLossGradient lg = box_loss_gradient(problem.predictions[p].box, problem.ground_truth[g].box, lambdas);
        loss += lg.loss;
        for (int k = 0; k < 4; ++k) grad(p, k) = static_cast<float>(lg.d_pred[k]);
      }
    }
    if (!std::isfinite(loss) || !grad.allFinite()) {
      failure += "sample " + std::to_string(i) + " t=" + std::to_string(t) + " caption=\"" + sample.caption + "\"; ";
      continue;
    }
    total += loss;
    if (pred.rows() > 0) nn::backward(nn::scale(nn::sum(nn::mul(pred, Tensor(grad))), inv_batch));
  }
  if (stack.params().any_grad()) {
    stack.params().zero_grad();
    boxnet.params().zero_grad();
    throw std::logic_error("frozen denoiser parameter received a gradient");
  }
  result.loss = failure.empty() ? total / static_cast<double>(batch.size()) : std::nan("");
  if (!failure.empty()) {
    boxnet.params().zero_grad();
    throw NonFiniteLossError("non-finite loss: " + failure, "");
  }
  optimizer.step(static_cast<float>(lr));
  return result;
}

TrainResult train(const std::vector<TrainSample>& dataset, const TrainConfig& config, TrainState& state,
                  const TrainRunOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (!state.model.stack || !state.model.boxnet) throw std::invalid_argument("train: state has no model");
  ToyStack& stack = *state.model.stack;
  BoxNet& boxnet = *state.model.boxnet;
  stack.params().set_trainable(false);
  boxnet.params().set_trainable(true);
  nn::AdamW optimizer(boxnet.params(), {.weight_decay = static_cast<float>(config.weight_decay)});
  if (!state.optimizer.empty()) optimizer.import_state(state.optimizer);

  std::vector<Matrix> latents;
  latents.reserve(dataset.size());
  for (const auto& s : dataset) latents.push_back(stack.encode(s.image).data);

  std::ofstream csv;
  if (!options.loss_csv.empty()) {
    // A run from step 0 starts a new log; resumed runs append.
    const bool fresh = state.next_step == 0 || !fs::exists(options.loss_csv) || fs::file_size(options.loss_csv) == 0;
    csv.open(options.loss_csv, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw std::runtime_error("cannot write " + options.loss_csv);
    if (fresh) csv << "# config_hash=" << options.config_hash << "\nstep,loss,lr\n";
  }

  const long long end = std::min<long long>(config.total_steps, options.stop_after.value_or(config.total_steps));
  TrainResult result;
  result.first_step = state.next_step;
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  for (long long step = state.next_step; step < end; ++step) {
    std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(step)));
    std::vector<const TrainSample*> batch;
    std::vector<const Matrix*> batch_latents;
    std::vector<std::size_t> picked;
    for (int b = 0; b < config.batch_size; ++b) {
      const std::size_t idx = pick(rng);
      picked.push_back(idx);
      batch.push_back(&dataset[idx]);
      batch_latents.push_back(&latents[idx]);
    }
    const double lr = learning_rate(config, step);
    TrainStepResult r;
    try {
      r = train_step(batch, rng, boxnet, stack, optimizer, lr, config.lambdas, batch_latents);
    } catch (const NonFiniteLossError& e) {
      const std::string dump = options.dump_path.empty() ? "boxnet_nonfinite_dump.txt" : options.dump_path;
      std::ofstream out(dump);
      out << format_record({{"record", "nonfinite_loss"},
                            {"step", std::to_string(step)},
                            {"lr", format_double(lr)},
                            {"config_hash", options.config_hash},
                            {"detail", e.what()}})
          << '\n';
      for (std::size_t idx : picked) {
        out << format_record({{"record", "sample"}, {"index", std::to_string(idx)}, {"caption", dataset[idx].caption}})
            << '\n';
      }
      throw NonFiniteLossError(std::string(e.what()) + " at step " + std::to_string(step), dump);
    }
    result.losses.push_back(r.loss);
    result.lrs.push_back(lr);
    if (csv.is_open()) csv << step << ',' << format_double(r.loss) << ',' << format_double(lr) << '\n';
    if (options.progress) options.progress(step, r.loss, lr);
    state.next_step = step + 1;
    if (!options.checkpoint_path.empty() && config.checkpoint_every > 0 && state.next_step % config.checkpoint_every == 0 &&
        state.next_step < end) {
      state.optimizer = optimizer.export_state();
      save_state(options.checkpoint_path, state);
    }
  }
  state.optimizer = optimizer.export_state();
  auto& meta = state.model.meta;
  meta.steps = state.next_step;
  meta.seed = config.seed;
  meta.dataset_id = dataset_id(dataset);
  if (result.first_step == 0 && !result.losses.empty()) {
    const std::size_t n = std::min<std::size_t>(100, result.losses.size());
    meta.first_loss = std::accumulate(result.losses.begin(), result.losses.begin() + n, 0.0) / n;
  }
  if (!result.losses.empty()) {
    const std::size_t n = std::min<std::size_t>(100, result.losses.size());
    meta.last_loss = std::accumulate(result.losses.end() - n, result.losses.end(), 0.0) / n;
  }
  if (!options.checkpoint_path.empty()) save_state(options.checkpoint_path, state);
  boxnet.params().set_trainable(false);
  return result;
}

BoxEvalResult evaluate_boxes(const BoxNet& boxnet, ToyStack& stack, const std::vector<TrainSample>& samples, int max_t,
                             std::uint64_t seed, const LossWeights& lambdas) {
  if (max_t < 1 || max_t > stack.scheduler().steps()) throw std::invalid_argument("evaluate_boxes: max_t out of range");
  nn::NoGradGuard guard;
  BoxEvalResult out;
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const TrainSample& s = samples[i];
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const int t = std::uniform_int_distribution<int>(1, max_t)(rng);
    const Matrix z0 = stack.encode(s.image).data;
    const Matrix eps = gaussian_matrix(z0.rows(), z0.cols(), rng);
    FeatureCapture capture;
    stack.unet().forward(Tensor(stack.scheduler().add_noise(z0, t, eps)), t, stack.text().encode(s.caption), &capture);
    const EntityQuerySet queries = boxnet.encode_entities(s.spans, stack.text());
    const auto boxes = boxnet.predict_boxes(boxnet.extract_features(capture), queries);
    MatchProblem problem;
    problem.weights = lambdas;
    problem.ground_truth = s.gt;
    for (std::size_t k = 0; k < boxes.size(); ++k) problem.predictions.push_back({boxes[k], queries.category_ids[k]});
    out.boxes += static_cast<int>(s.gt.size());
    if (problem.predictions.empty() || problem.ground_truth.empty()) continue;
    for (const auto& [p, g] : hungarian_match(problem).pairs) {
      total += iou(problem.predictions[p].box, problem.ground_truth[g].box);
    }
  }
  out.mean_iou = out.boxes > 0 ? total / out.boxes : 0.0;
  return out;
}

}  // namespace boxguide
