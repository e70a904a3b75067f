#pragma once

#include <boxguide/nn.hpp>

#include <random>

namespace fixture {

/// Adds N(0, scale^2) noise to every parameter. Freshly built stacks have
/// zero-initialised output layers, so without this their attention maps
/// never reach the output.
inline void jitter(boxguide::nn::ParamStore& params, std::uint64_t seed, float scale = 0.05f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, scale);
  for (const auto& [name, tensor] : params.items()) {
    boxguide::nn::Tensor t = tensor;
    t.mutable_value() = t.value().unaryExpr([&](float v) { return v + n(rng); });
  }
}

}  // namespace fixture
