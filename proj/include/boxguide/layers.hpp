#pragma once

// Parameterised layers over the autograd ops. Each layer registers its
// tensors in a ParamStore under a name prefix and keeps shared handles.

#include "boxguide/nn.hpp"

#include <functional>
#include <random>
#include <string>

namespace boxguide::nn {

enum class Init { xavier, zero };

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (1, out), undefined when bias is off

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Index in, Index out, std::mt19937_64& rng,
         Init init = Init::xavier, bool bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Index dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

struct GroupNorm {
  Tensor gamma, beta;
  int groups = 8;

  GroupNorm() = default;
  GroupNorm(ParamStore& store, const std::string& name, Index channels, int groups);
  Tensor operator()(const Tensor& x) const { return group_norm(x, groups, gamma, beta); }
};

struct Conv2d {
  Tensor w;  // (k * k * in, out)
  Tensor b;  // (1, out)
  int kernel = 3, stride = 1, padding = 1;

  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, Index in, Index out, int kernel, int stride, int padding,
         std::mt19937_64& rng, Init init = Init::xavier);
  Tensor operator()(const Tensor& x, int height, int width) const;
  int out_size(int size) const { return (size + 2 * padding - kernel) / stride + 1; }
};

/// Receives each head's post-softmax probabilities (queries x keys) and may
/// edit them in place. Only honoured while gradients are disabled.
using ProbabilityEditor = std::function<void(Matrix& probs, int head)>;

struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 4;
  Index dim = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, Index dim, Index context_dim, int heads,
                     std::mt19937_64& rng, Init out_init = Init::xavier);
  /// Queries from `query_in`, keys from `key_in`, values from `value_in`.
  Tensor operator()(const Tensor& query_in, const Tensor& key_in, const Tensor& value_in,
                    const ProbabilityEditor* editor = nullptr) const;
};

/// (count, dim) sinusoidal embedding of scalar positions.
Matrix sinusoidal_embedding(const std::vector<double>& positions, Index dim, double max_period = 10000.0);

/// Bilinear resize of an (h * w, C) map to (oh * ow, C), half-pixel centres,
/// edge clamped. Identity when sizes match.
Matrix resize_bilinear(const Matrix& x, int h, int w, int oh, int ow);

}  // namespace boxguide::nn
