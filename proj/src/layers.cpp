#include "boxguide/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace boxguide::nn {

Linear::Linear(ParamStore& store, const std::string& name, Index in, Index out, std::mt19937_64& rng, Init init,
               bool bias) {
  w = store.create(name + ".w", init == Init::zero ? Matrix::Zero(in, out) : xavier_uniform(in, out, rng));
  if (bias) b = store.create(name + ".b", Matrix::Zero(1, out));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, w);
  return b.defined() ? add_row(y, b) : y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, Index dim) {
  gamma = store.create(name + ".gamma", Matrix::Ones(1, dim));
  beta = store.create(name + ".beta", Matrix::Zero(1, dim));
}

GroupNorm::GroupNorm(ParamStore& store, const std::string& name, Index channels, int groups_) : groups(groups_) {
  if (channels % groups != 0) throw std::invalid_argument(name + ": channels not divisible by groups");
  gamma = store.create(name + ".gamma", Matrix::Ones(1, channels));
  beta = store.create(name + ".beta", Matrix::Zero(1, channels));
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, Index in, Index out, int kernel_, int stride_,
               int padding_, std::mt19937_64& rng, Init init)
    : kernel(kernel_), stride(stride_), padding(padding_) {
  const Index fan_in = static_cast<Index>(kernel) * kernel * in;
  Matrix init_w;
  if (init == Init::zero) {
    init_w = Matrix::Zero(fan_in, out);
  } else {
    // Xavier bound over the receptive-field fan sizes.
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in + static_cast<Index>(kernel) * kernel * out));
    std::uniform_real_distribution<float> u(-bound, bound);
    init_w = Matrix::NullaryExpr(fan_in, out, [&] { return u(rng); });
  }
  w = store.create(name + ".w", std::move(init_w));
  b = store.create(name + ".b", Matrix::Zero(1, out));
}

Tensor Conv2d::operator()(const Tensor& x, int height, int width) const {
  return conv2d(x, height, width, w, b, kernel, stride, padding);
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, Index dim_, Index context_dim,
                                       int heads_, std::mt19937_64& rng, Init out_init)
    : heads(heads_), dim(dim_) {
  if (dim % heads != 0) throw std::invalid_argument(name + ": dim not divisible by heads");
  q = Linear(store, name + ".q", dim, dim, rng, Init::xavier, false);
  k = Linear(store, name + ".k", context_dim, dim, rng, Init::xavier, false);
  v = Linear(store, name + ".v", context_dim, dim, rng, Init::xavier, false);
  o = Linear(store, name + ".o", dim, dim, rng, out_init);
}

Tensor MultiHeadAttention::operator()(const Tensor& query_in, const Tensor& key_in, const Tensor& value_in,
                                      const ProbabilityEditor* editor) const {
  const Tensor Q = q(query_in);
  const Tensor K = k(key_in);
  const Tensor V = v(value_in);
  const Index d = dim / heads;
  const float scale_factor = 1.0f / std::sqrt(static_cast<float>(d));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? Q : col_slice(Q, h * d, d);
    const Tensor kh = heads == 1 ? K : col_slice(K, h * d, d);
    const Tensor vh = heads == 1 ? V : col_slice(V, h * d, d);
    Tensor p = softmax_rows(matmul_nt(qh, kh, scale_factor));
    if (editor && *editor && !grad_enabled()) (*editor)(p.mutable_value(), h);
    outs.push_back(matmul(p, vh));
  }
  return o(heads == 1 ? outs[0] : hcat(outs));
}

Matrix sinusoidal_embedding(const std::vector<double>& positions, Index dim, double max_period) {
  Matrix out(static_cast<Index>(positions.size()), dim);
  const Index half = dim / 2;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (Index j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(max_period) * static_cast<double>(j) / static_cast<double>(half));
      out(static_cast<Index>(i), j) = static_cast<float>(std::sin(positions[i] * freq));
      out(static_cast<Index>(i), half + j) = static_cast<float>(std::cos(positions[i] * freq));
    }
    if (dim % 2) out(static_cast<Index>(i), dim - 1) = 0.0f;
  }
  return out;
}

Matrix resize_bilinear(const Matrix& x, int h, int w, int oh, int ow) {
  if (x.rows() != static_cast<Index>(h) * w) throw std::invalid_argument("resize_bilinear: rows must equal h*w");
  if (h == oh && w == ow) return x;
  Matrix out(static_cast<Index>(oh) * ow, x.cols());
  const double sy = static_cast<double>(h) / oh, sx = static_cast<double>(w) / ow;
  for (int y = 0; y < oh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int xo = 0; xo < ow; ++xo) {
      const double fx = std::clamp((xo + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const float wx = static_cast<float>(fx - x0);
      out.row(static_cast<Index>(y) * ow + xo) =
          (1 - wy) * ((1 - wx) * x.row(static_cast<Index>(y0) * w + x0) + wx * x.row(static_cast<Index>(y0) * w + x1)) +
          wy * ((1 - wx) * x.row(static_cast<Index>(y1) * w + x0) + wx * x.row(static_cast<Index>(y1) * w + x1));
    }
  }
  return out;
}

}  // namespace boxguide::nn
