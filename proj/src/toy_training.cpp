#include "boxguide/toy_training.hpp"

#include "boxguide/common.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <deque>
#include <numeric>
#include <stdexcept>

namespace boxguide {

using nn::Matrix;
using nn::Tensor;

StackTrainConfig StackTrainConfig::from_config(const Config& c) {
  StackTrainConfig out;
  out.seed = static_cast<std::uint64_t>(c.get_int("stack_train.seed", static_cast<long long>(out.seed)));
  out.ae_steps = static_cast<int>(c.get_int("stack_train.ae_steps", out.ae_steps));
  out.ae_batch = static_cast<int>(c.get_int("stack_train.ae_batch", out.ae_batch));
  out.ae_lr = c.get_double("stack_train.ae_lr", out.ae_lr);
  out.stats_scenes = static_cast<int>(c.get_int("stack_train.stats_scenes", out.stats_scenes));
  out.unet_steps = static_cast<int>(c.get_int("stack_train.unet_steps", out.unet_steps));
  out.unet_batch = static_cast<int>(c.get_int("stack_train.unet_batch", out.unet_batch));
  out.unet_lr = c.get_double("stack_train.unet_lr", out.unet_lr);
  out.unet_warmup = static_cast<int>(c.get_int("stack_train.unet_warmup", out.unet_warmup));
  out.caption_dropout = c.get_double("stack_train.caption_dropout", out.caption_dropout);
  out.snapshot_path = c.get("stack_train.snapshot_path", out.snapshot_path);
  out.snapshot_every = static_cast<int>(c.get_int("stack_train.snapshot_every", out.snapshot_every));
  out.scenes.min_shapes = static_cast<int>(c.get_int("scenes.min_shapes", out.scenes.min_shapes));
  out.scenes.max_shapes = static_cast<int>(c.get_int("scenes.max_shapes", out.scenes.max_shapes));
  if (out.ae_steps < 0 || out.unet_steps < 0 || out.ae_batch < 1 || out.unet_batch < 1) {
    throw std::invalid_argument("stack_train: steps must be >= 0 and batches >= 1");
  }
  return out;
}

namespace {

class RunningMean {
 public:
  explicit RunningMean(std::size_t window) : window_(window) {}
  void push(double v) {
    values_.push_back(v);
    if (values_.size() > window_) values_.pop_front();
  }
  double mean() const {
    return values_.empty() ? 0.0 : std::accumulate(values_.begin(), values_.end(), 0.0) / values_.size();
  }

 private:
  std::size_t window_;
  std::deque<double> values_;
};

void check_finite(double loss, const std::string& phase, long long step) {
  if (!std::isfinite(loss)) throw std::runtime_error(phase + ": non-finite loss at step " + std::to_string(step));
}

}  // namespace

double train_autoencoder(ToyStack& stack, const StackTrainConfig& config, const TrainProgress& progress) {
  auto& params = stack.params();
  params.set_trainable(false);
  params.set_trainable("ae.", true);
  nn::AdamW opt(params, {.weight_decay = 0.0f, .max_grad_norm = 1.0f});
  const int patch = stack.config().autoencoder.patch;
  RunningMean recent(100);
  for (int step = 0; step < config.ae_steps; ++step) {
    std::mt19937_64 rng(derive_seed(config.seed, 1, static_cast<std::uint64_t>(step)));
    double total = 0.0;
    for (int b = 0; b < config.ae_batch; ++b) {
      const Matrix target = patchify(render(random_scene(rng, config.scenes)), patch);
      const Tensor recon = stack.autoencoder().decode(stack.autoencoder().encode(Tensor(target)));
      const Tensor loss = nn::scale(nn::mse(recon, target), 1.0f / static_cast<float>(config.ae_batch));
      nn::backward(loss);
      total += loss.item();
    }
    check_finite(total, "autoencoder", step);
    const double lr = warmup_cosine_lr(step + 1, 100, config.ae_steps + 1, config.ae_lr);
    opt.step(static_cast<float>(lr));
    recent.push(total);
    if (progress) progress("autoencoder", step, total, lr);
  }
  params.set_trainable(false);
  return recent.mean();
}

void fit_latent_stats(ToyStack& stack, int scenes, std::uint64_t seed, const SceneOptions& options) {
  if (scenes < 2) throw std::invalid_argument("fit_latent_stats: need at least 2 scenes");
  nn::NoGradGuard guard;
  std::mt19937_64 rng(seed);
  const int channels = stack.config().autoencoder.latent_channels;
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(channels), sq = Eigen::ArrayXd::Zero(channels);
  double count = 0.0;
  for (int i = 0; i < scenes; ++i) {
    const Matrix raw = stack.autoencoder()
                           .encode(Tensor(patchify(render(random_scene(rng, options)), stack.config().autoencoder.patch)))
                           .value();
    const Eigen::ArrayXXd r = raw.cast<double>().array();
    sum += r.colwise().sum().transpose();
    sq += r.square().colwise().sum().transpose();
    count += static_cast<double>(raw.rows());
  }
  const Eigen::ArrayXd mean = sum / count;
  const Eigen::ArrayXd var = (sq / count - mean.square()).max(1e-8);
  stack.set_latent_stats(mean.transpose().matrix().cast<float>(), var.sqrt().transpose().matrix().cast<float>());
}

double train_denoiser(ToyStack& stack, const StackTrainConfig& config, const TrainProgress& progress) {
  auto& params = stack.params();
  params.set_trainable(false);
  params.set_trainable("unet.", true);
  params.set_trainable("text.", true);
  nn::AdamW opt(params, {.weight_decay = 0.0f, .max_grad_norm = 1.0f});
  const int T = stack.scheduler().steps();
  RunningMean recent(100);
  for (int step = 0; step < config.unet_steps; ++step) {
    std::mt19937_64 rng(derive_seed(config.seed, 2, static_cast<std::uint64_t>(step)));
    double total = 0.0;
    for (int b = 0; b < config.unet_batch; ++b) {
      const Scene scene = random_scene(rng, config.scenes);
      const Latent z0 = stack.encode(render(scene));
      const int t = std::uniform_int_distribution<int>(1, T)(rng);
      const Matrix eps = gaussian_matrix(z0.data.rows(), z0.data.cols(), rng);
      const bool drop = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.caption_dropout;
      const Tensor context = stack.text().encode(drop ? std::string() : caption(scene));
      const Tensor pred = stack.unet().forward(Tensor(stack.scheduler().add_noise(z0.data, t, eps)), t, context);
      const Tensor loss = nn::scale(nn::mse(pred, eps), 1.0f / static_cast<float>(config.unet_batch));
      nn::backward(loss);
      total += loss.item();
    }
    check_finite(total, "denoiser", step);
    const double lr = warmup_cosine_lr(step + 1, config.unet_warmup, config.unet_steps + 1, config.unet_lr);
    opt.step(static_cast<float>(lr));
    recent.push(total);
    if (progress) progress("denoiser", step, total, lr);
    if (!config.snapshot_path.empty() && config.snapshot_every > 0 && (step + 1) % config.snapshot_every == 0) {
      stack.save(config.snapshot_path);
      spdlog::info("snapshot at step {} -> {}", step + 1, config.snapshot_path);
    }
  }
  params.set_trainable(false);
  return recent.mean();
}

double reconstruction_mae(const ToyStack& stack, int scenes, std::uint64_t seed, const SceneOptions& options) {
  if (scenes < 1) throw std::invalid_argument("reconstruction_mae: need at least one scene");
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (int i = 0; i < scenes; ++i) {
    const Image img = render(random_scene(rng, options));
    const Image back = stack.decode(stack.encode(img));
    total += (back.pixels - img.pixels).cwiseAbs().mean();
  }
  return total / scenes;
}

}  // namespace boxguide
