#pragma once

// BoxNet training under the frozen toy stack: forward-diffused latents,
// set matching against annotated boxes, AdamW with warmup + cosine decay.

#include "boxguide/boxnet.hpp"
#include "boxguide/config.hpp"
#include "boxguide/image.hpp"
#include "boxguide/matching.hpp"
#include "boxguide/shapes.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace boxguide {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int warmup_steps = 200;
  int total_steps = 2000;
  int batch_size = 16;
  std::uint64_t seed = 0;
  LossWeights lambdas;
  int max_entities = 8;
  int checkpoint_every = 500;  // 0 disables periodic checkpoints

  /// Reads `train.*` keys; throws std::invalid_argument on invalid values.
  static TrainConfig from_config(const Config& config);
  Config to_config() const;
};

struct TrainSample {
  Image image;
  std::string caption;
  std::vector<LabeledBox> gt;
  std::vector<EntitySpan> spans;
};

/// Procedural scenes with template captions; `shuffled_fraction` of them get
/// colour words permuted across entities. GT categories are lexicon ids of
/// the shape nouns, in caption order.
std::vector<TrainSample> make_shape_dataset(int scenes, std::uint64_t seed, double shuffled_fraction = 0.2,
                                            const SceneOptions& options = {});

/// `annotations.txt` (one record per scene) plus `images/NNNNN.png`.
void write_dataset(const std::string& dir, const std::vector<TrainSample>& samples, const std::string& config_hash);
/// Throws std::runtime_error on unreadable files and std::invalid_argument
/// if a GT category does not resolve in the lexicon.
std::vector<TrainSample> read_dataset(const std::string& dir, const EntityLexicon& lexicon = EntityLexicon::builtin());
/// Hash over captions and annotations.
std::string dataset_id(const std::vector<TrainSample>& samples);

/// Linear warmup from 0 at step 0 to config.lr at warmup_steps, cosine decay after.
double learning_rate(const TrainConfig& config, long long step);

/// Thrown when the batch loss is NaN or infinite; a diagnostic dump has
/// been written to dump_path().
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, std::string dump_path)
      : std::runtime_error(what), dump_path_(std::move(dump_path)) {}
  const std::string& dump_path() const { return dump_path_; }

 private:
  std::string dump_path_;
};

/// Everything a run needs to continue: model, optimizer moments, next step.
struct TrainState {
  BoxNetCheckpoint model;
  std::vector<std::pair<std::string, nn::Matrix>> optimizer;
  long long next_step = 0;
};

TrainState fresh_state(std::unique_ptr<ToyStack> stack, const TrainConfig& config);
TrainState load_state(const std::string& path);
void save_state(const std::string& path, const TrainState& state);

struct TrainStepResult {
  double loss = 0.0;
  std::vector<int> timesteps;
};

/// One optimizer step over `batch`: t ~ U{1..T} per sample from `rng`,
/// z_t = add_noise(encode(image), t), features from the frozen U-Net, boxes
/// from BoxNet, Hungarian matching with the class penalty, box loss. Only
/// BoxNet parameters are updated. Throws std::logic_error if any stack
/// parameter received a gradient.
TrainStepResult train_step(const std::vector<const TrainSample*>& batch, std::mt19937_64& rng, BoxNet& boxnet,
                           ToyStack& stack, nn::AdamW& optimizer, double lr, const LossWeights& lambdas,
                           const std::vector<const nn::Matrix*>& latents = {});

struct TrainRunOptions {
  std::string loss_csv;         // "step,loss,lr"; rewritten from step 0, appended on resume
  std::string checkpoint_path;  // periodic and final state
  std::string dump_path;        // non-finite loss diagnostics
  std::optional<long long> stop_after;  // exclusive step bound for interrupted runs
  std::string config_hash;
  std::function<void(long long step, double loss, double lr)> progress;
};

struct TrainResult {
  std::vector<double> losses;  // indexed from the state's starting step
  std::vector<double> lrs;
  long long first_step = 0;
};

/// Runs steps [state.next_step, total_steps) (or up to stop_after). Batch
/// composition and noise depend only on (config.seed, step), so a resumed
/// run reproduces an uninterrupted one.
TrainResult train(const std::vector<TrainSample>& dataset, const TrainConfig& config, TrainState& state,
                  const TrainRunOptions& options = {});

struct BoxEvalResult {
  double mean_iou = 0.0;  // over all GT boxes, unmatched boxes count 0
  int boxes = 0;
};

/// Matched IoU on `samples` with t drawn uniformly from [1, max_t].
BoxEvalResult evaluate_boxes(const BoxNet& boxnet, ToyStack& stack, const std::vector<TrainSample>& samples,
                             int max_t, std::uint64_t seed, const LossWeights& lambdas = {});

}  // namespace boxguide
