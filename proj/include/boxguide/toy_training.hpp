#pragma once

// One-off training of the toy stack on procedural shape scenes: the patch
// autoencoder first, then the U-Net and text embeddings with the
// autoencoder frozen.

#include "boxguide/shapes.hpp"
#include "boxguide/toy_diffusion.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace boxguide {

struct StackTrainConfig {
  std::uint64_t seed = 1;
  SceneOptions scenes;

  int ae_steps = 3000;
  int ae_batch = 4;
  double ae_lr = 2e-3;
  int stats_scenes = 512;

  int unet_steps = 20000;
  int unet_batch = 8;
  double unet_lr = 1e-3;
  int unet_warmup = 500;
  double caption_dropout = 0.1;  // fraction of samples trained on the empty prompt

  std::string snapshot_path;  // written every snapshot_every denoiser steps when set
  int snapshot_every = 2000;

  static StackTrainConfig from_config(const Config& config);
};

using TrainProgress = std::function<void(const std::string& phase, long long step, double loss, double lr)>;

/// Returns the mean loss over the final 100 steps.
double train_autoencoder(ToyStack& stack, const StackTrainConfig& config, const TrainProgress& progress = {});

/// Per-channel mean / std of raw latents over random scenes.
void fit_latent_stats(ToyStack& stack, int scenes, std::uint64_t seed, const SceneOptions& options = {});

/// Epsilon-prediction MSE on the U-Net and text embeddings. Returns the mean
/// loss over the final 100 steps.
double train_denoiser(ToyStack& stack, const StackTrainConfig& config, const TrainProgress& progress = {});

/// Mean absolute pixel error of decode(encode(x)) over random scenes.
double reconstruction_mae(const ToyStack& stack, int scenes, std::uint64_t seed, const SceneOptions& options = {});

}  // namespace boxguide
