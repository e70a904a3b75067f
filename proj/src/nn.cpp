#include "boxguide/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

namespace boxguide::nn {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool condition, const char* message) {
  if (!condition) throw std::invalid_argument(message);
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> grad_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(grad_fn);
    }
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  require(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be 1x1");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->add_grad(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& a = parent(self, 0);
    Node& b = parent(self, 1);
    if (a.requires_grad) a.add_grad(self.grad * b.value.transpose());
    if (b.requires_grad) b.add_grad(a.value.transpose() * self.grad);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b, float alpha) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Matrix out = alpha * (a.value() * b.value().transpose());
  return make_result(std::move(out), {a, b}, [alpha](Node& self) {
    Node& a = parent(self, 0);
    Node& b = parent(self, 1);
    if (a.requires_grad) a.add_grad(alpha * (self.grad * b.value));
    if (b.requires_grad) b.add_grad(alpha * (self.grad.transpose() * a.value));
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      Node& p = parent(self, i);
      if (p.requires_grad) p.add_grad(self.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    Node& a = parent(self, 0);
    Node& b = parent(self, 1);
    if (a.requires_grad) a.add_grad(self.grad);
    if (b.requires_grad) b.add_grad(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Matrix out = a.value().cwiseProduct(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& a = parent(self, 0);
    Node& b = parent(self, 1);
    if (a.requires_grad) a.add_grad(self.grad.cwiseProduct(b.value));
    if (b.requires_grad) b.add_grad(self.grad.cwiseProduct(a.value));
  });
}

Tensor scale(const Tensor& a, float s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    Node& a = parent(self, 0);
    if (a.requires_grad) a.add_grad(self.grad * s);
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: expected a (1, C) row");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    Node& a = parent(self, 0);
    Node& r = parent(self, 1);
    if (a.requires_grad) a.add_grad(self.grad);
    if (r.requires_grad) r.add_grad(self.grad.colwise().sum());
  });
}

Tensor silu(const Tensor& a) {
  Matrix sig = (1.0f + (-a.value().array()).exp()).inverse().matrix();
  Matrix out = a.value().cwiseProduct(sig);
  return make_result(std::move(out), {a}, [sig = std::move(sig)](Node& self) {
    Node& a = parent(self, 0);
    if (!a.requires_grad) return;
    auto x = a.value.array();
    auto s = sig.array();
    a.add_grad((self.grad.array() * (s * (1.0f + x * (1.0f - s)))).matrix());
  });
}

Tensor relu(const Tensor& a) {
  Matrix out = a.value().cwiseMax(0.0f);
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& a = parent(self, 0);
    if (!a.requires_grad) return;
    a.add_grad((a.value.array() > 0.0f).select(self.grad, 0.0f).matrix());
  });
}

Tensor sigmoid(const Tensor& a) {
  Matrix out = (1.0f + (-a.value().array()).exp()).inverse().matrix();
  return make_result(out, {a}, [out](Node& self) {
    Node& a = parent(self, 0);
    if (!a.requires_grad) return;
    a.add_grad((self.grad.array() * out.array() * (1.0f - out.array())).matrix());
  });
}

Tensor softmax_rows(const Tensor& a) {
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const float m = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make_result(out, {a}, [out](Node& self) {
    Node& a = parent(self, 0);
    if (!a.requires_grad) return;
    Eigen::VectorXf dots = (self.grad.cwiseProduct(out)).rowwise().sum();
    Matrix g = out.cwiseProduct(self.grad - dots.replicate(1, out.cols()));
    a.add_grad(g);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const Index n = x.cols();
  require(gamma.cols() == n && beta.cols() == n, "layer_norm: parameter width mismatch");
  Matrix xhat(x.rows(), n);
  Eigen::VectorXf inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const float mean = x.value().row(r).mean();
    const float var = (x.value().row(r).array() - mean).square().mean();
    inv_std(r) = 1.0f / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    Node& x = parent(self, 0);
    Node& g = parent(self, 1);
    Node& b = parent(self, 2);
    if (g.requires_grad) g.add_grad(self.grad.cwiseProduct(xhat).colwise().sum());
    if (b.requires_grad) b.add_grad(self.grad.colwise().sum());
    if (!x.requires_grad) return;
    const float n = static_cast<float>(xhat.cols());
    Matrix dxhat = (self.grad.array().rowwise() * g.value.row(0).array()).matrix();
    Matrix dx(xhat.rows(), xhat.cols());
    for (Index r = 0; r < xhat.rows(); ++r) {
      const float s1 = dxhat.row(r).sum();
      const float s2 = dxhat.row(r).dot(xhat.row(r));
      dx.row(r) = (inv_std(r) / n) * (n * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2).matrix();
    }
    x.add_grad(dx);
  });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
  const Index channels = x.cols();
  require(groups > 0 && channels % groups == 0, "group_norm: channels not divisible by groups");
  require(gamma.cols() == channels && beta.cols() == channels, "group_norm: parameter width mismatch");
  const Index width = channels / groups;
  Matrix xhat(x.rows(), channels);
  Eigen::VectorXf inv_std(groups);
  for (int g = 0; g < groups; ++g) {
    auto block = x.value().middleCols(g * width, width);
    const float mean = block.mean();
    const float var = (block.array() - mean).square().mean();
    inv_std(g) = 1.0f / std::sqrt(var + eps);
    xhat.middleCols(g * width, width) = ((block.array() - mean) * inv_std(g)).matrix();
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), groups, width](Node& self) {
    Node& x = parent(self, 0);
    Node& gm = parent(self, 1);
    Node& bt = parent(self, 2);
    if (gm.requires_grad) gm.add_grad(self.grad.cwiseProduct(xhat).colwise().sum());
    if (bt.requires_grad) bt.add_grad(self.grad.colwise().sum());
    if (!x.requires_grad) return;
    Matrix dxhat = (self.grad.array().rowwise() * gm.value.row(0).array()).matrix();
    Matrix dx(xhat.rows(), xhat.cols());
    const float n = static_cast<float>(xhat.rows() * width);
    for (int g = 0; g < groups; ++g) {
      auto dh = dxhat.middleCols(g * width, width);
      auto xh = xhat.middleCols(g * width, width);
      const float s1 = dh.sum();
      const float s2 = dh.cwiseProduct(xh).sum();
      dx.middleCols(g * width, width) =
          ((inv_std(g) / n) * (n * dh.array() - s1 - xh.array() * s2)).matrix();
    }
    x.add_grad(dx);
  });
}

namespace {

int conv_out(int size, int kernel, int stride, int padding) {
  return (size + 2 * padding - kernel) / stride + 1;
}

}  // namespace

Tensor conv2d(const Tensor& x, int height, int width, const Tensor& weight, const Tensor& bias,
              int kernel, int stride, int padding) {
  const Index cin = x.cols();
  require(x.rows() == static_cast<Index>(height) * width, "conv2d: rows must equal H*W");
  require(weight.rows() == kernel * kernel * cin, "conv2d: weight rows must equal k*k*Cin");
  require(bias.rows() == 1 && bias.cols() == weight.cols(), "conv2d: bias must be (1, Cout)");
  const int out_h = conv_out(height, kernel, stride, padding);
  const int out_w = conv_out(width, kernel, stride, padding);

  // im2col: row = output position, column block (ky, kx) holds Cin input channels.
  Matrix cols = Matrix::Zero(static_cast<Index>(out_h) * out_w, kernel * kernel * cin);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const Index row = static_cast<Index>(oy) * out_w + ox;
      for (int ky = 0; ky < kernel; ++ky) {
        const int iy = oy * stride + ky - padding;
        if (iy < 0 || iy >= height) continue;
        for (int kx = 0; kx < kernel; ++kx) {
          const int ix = ox * stride + kx - padding;
          if (ix < 0 || ix >= width) continue;
          std::memcpy(cols.data() + row * cols.cols() + (ky * kernel + kx) * cin,
                      x.value().data() + (static_cast<Index>(iy) * width + ix) * cin,
                      sizeof(float) * cin);
        }
      }
    }
  }
  Matrix out = cols * weight.value();
  out.rowwise() += bias.value().row(0);
  return make_result(std::move(out), {x, weight, bias},
                     [cols = std::move(cols), height, width, kernel, stride, padding, out_h,
                      out_w](Node& self) {
    Node& x = parent(self, 0);
    Node& w = parent(self, 1);
    Node& b = parent(self, 2);
    if (w.requires_grad) w.add_grad(cols.transpose() * self.grad);
    if (b.requires_grad) b.add_grad(self.grad.colwise().sum());
    if (!x.requires_grad) return;
    const Index cin = x.value.cols();
    Matrix dcols = self.grad * w.value.transpose();
    Matrix dx = Matrix::Zero(x.value.rows(), cin);
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const Index row = static_cast<Index>(oy) * out_w + ox;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride + ky - padding;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride + kx - padding;
            if (ix < 0 || ix >= width) continue;
            dx.row(static_cast<Index>(iy) * width + ix) +=
                dcols.row(row).segment((ky * kernel + kx) * cin, cin);
          }
        }
      }
    }
    x.add_grad(dx);
  });
}

Tensor upsample_nearest2x(const Tensor& x, int height, int width) {
  require(x.rows() == static_cast<Index>(height) * width, "upsample: rows must equal H*W");
  const int out_w = 2 * width;
  Matrix out(static_cast<Index>(4) * height * width, x.cols());
  for (int y = 0; y < 2 * height; ++y) {
    for (int xx = 0; xx < out_w; ++xx) {
      out.row(static_cast<Index>(y) * out_w + xx) = x.value().row(static_cast<Index>(y / 2) * width + xx / 2);
    }
  }
  return make_result(std::move(out), {x}, [height, width](Node& self) {
    Node& x = parent(self, 0);
    if (!x.requires_grad) return;
    const int out_w = 2 * width;
    Matrix dx = Matrix::Zero(x.value.rows(), x.value.cols());
    for (int y = 0; y < 2 * height; ++y) {
      for (int xx = 0; xx < out_w; ++xx) {
        dx.row(static_cast<Index>(y / 2) * width + xx / 2) += self.grad.row(static_cast<Index>(y) * out_w + xx);
      }
    }
    x.add_grad(dx);
  });
}

Tensor hcat(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "hcat: no inputs");
  Index total = 0;
  for (const auto& p : parts) {
    require(p.rows() == parts[0].rows(), "hcat: row counts differ");
    total += p.cols();
  }
  Matrix out(parts[0].rows(), total);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = parent(self, i);
      if (p.requires_grad) p.add_grad(self.grad.middleCols(offsets[i], p.value.cols()));
    }
  });
}

Tensor vcat(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "vcat: no inputs");
  Index total = 0;
  for (const auto& p : parts) {
    require(p.cols() == parts[0].cols(), "vcat: column counts differ");
    total += p.rows();
  }
  Matrix out(total, parts[0].cols());
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = parent(self, i);
      if (p.requires_grad) p.add_grad(self.grad.middleRows(offsets[i], p.value.rows()));
    }
  });
}

Tensor col_slice(const Tensor& x, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), "col_slice: out of range");
  Matrix out = x.value().middleCols(start, count);
  return make_result(std::move(out), {x}, [start, count](Node& self) {
    Node& x = parent(self, 0);
    if (!x.requires_grad) return;
    if (!x.has_grad()) x.grad = Matrix::Zero(x.value.rows(), x.value.cols());
    x.grad.middleCols(start, count) += self.grad;
  });
}

Tensor row_slice(const Tensor& x, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.rows(), "row_slice: out of range");
  Matrix out = x.value().middleRows(start, count);
  return make_result(std::move(out), {x}, [start, count](Node& self) {
    Node& x = parent(self, 0);
    if (!x.requires_grad) return;
    if (!x.has_grad()) x.grad = Matrix::Zero(x.value.rows(), x.value.cols());
    x.grad.middleRows(start, count) += self.grad;
  });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  Matrix out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows: id out of range");
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  return make_result(std::move(out), {table}, [ids](Node& self) {
    Node& t = parent(self, 0);
    if (!t.requires_grad) return;
    if (!t.has_grad()) t.grad = Matrix::Zero(t.value.rows(), t.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) t.grad.row(ids[i]) += self.grad.row(static_cast<Index>(i));
  });
}

Tensor mean_rows(const Tensor& x) {
  require(x.rows() > 0, "mean_rows: empty input");
  Matrix out = x.value().colwise().mean();
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& x = parent(self, 0);
    if (!x.requires_grad) return;
    const float inv = 1.0f / static_cast<float>(x.value.rows());
    x.add_grad((self.grad * inv).replicate(x.value.rows(), 1));
  });
}

Tensor sum(const Tensor& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& x = parent(self, 0);
    if (x.requires_grad) x.add_grad(Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0)));
  });
}

Tensor mse(const Tensor& pred, const Matrix& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), "mse: shape mismatch");
  Matrix diff = pred.value() - target;
  Matrix out(1, 1);
  const float n = static_cast<float>(diff.size());
  out(0, 0) = diff.squaredNorm() / n;
  return make_result(std::move(out), {pred}, [diff = std::move(diff), n](Node& self) {
    Node& p = parent(self, 0);
    if (p.requires_grad) p.add_grad(diff * (2.0f * self.grad(0, 0) / n));
  });
}

Matrix xavier_uniform(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  std::uniform_real_distribution<float> dist(-bound, bound);
  Matrix m(fan_in, fan_out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Tensor ParamStore::create(const std::string& name, Matrix init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor t(std::move(init), true);
  params_.emplace_back(name, t);
  return t;
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw std::out_of_range("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return true;
  }
  return false;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [n, t] : params_) total += static_cast<std::size_t>(t.value().size());
  return total;
}

void ParamStore::set_trainable(bool trainable) {
  for (auto& [n, t] : params_) {
    Tensor handle = t;
    handle.set_requires_grad(trainable);
  }
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [n, t] : params_) {
    if (n.rfind(prefix, 0) != 0) continue;
    Tensor handle = t;
    handle.set_requires_grad(trainable);
  }
}

void ParamStore::zero_grad() {
  for (auto& [n, t] : params_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

bool ParamStore::any_grad() const {
  for (const auto& [n, t] : params_) {
    if (t.has_grad()) return true;
  }
  return false;
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [n, t] : params_) {
    feed(n.data(), n.size());
    feed(t.value().data(), sizeof(float) * static_cast<std::size_t>(t.value().size()));
  }
  return h;
}

std::vector<std::pair<std::string, Matrix>> ParamStore::export_values(const std::string& prefix) const {
  std::vector<std::pair<std::string, Matrix>> out;
  out.reserve(params_.size());
  for (const auto& [n, t] : params_) out.emplace_back(prefix + n, t.value());
  return out;
}

void ParamStore::import_values(const std::vector<std::pair<std::string, Matrix>>& values,
                               const std::string& prefix) {
  for (auto& [n, t] : params_) {
    const std::string key = prefix + n;
    const Matrix* found = nullptr;
    for (const auto& [vn, vm] : values) {
      if (vn == key) {
        found = &vm;
        break;
      }
    }
    if (!found) throw std::runtime_error("checkpoint is missing parameter " + key);
    if (found->rows() != t.rows() || found->cols() != t.cols()) {
      throw std::runtime_error("checkpoint shape mismatch for " + key);
    }
    Tensor handle = t;
    handle.mutable_value() = *found;
  }
}

AdamW::AdamW(ParamStore& params, AdamWOptions options) : params_(params), options_(options) {
  for (const auto& [n, t] : params_.items()) {
    m_.push_back(Matrix::Zero(t.rows(), t.cols()));
    v_.push_back(Matrix::Zero(t.rows(), t.cols()));
  }
}

void AdamW::step(float lr) {
  ++step_;
  const auto& items = params_.items();
  float clip = 1.0f;
  if (options_.max_grad_norm > 0.0f) {
    double sq = 0.0;
    for (const auto& [n, t] : items) {
      if (t.has_grad()) sq += static_cast<double>(t.grad().squaredNorm());
    }
    const double norm = std::sqrt(sq);
    if (norm > options_.max_grad_norm) clip = static_cast<float>(options_.max_grad_norm / (norm + 1e-6));
  }
  const float bc1 = 1.0f - std::pow(options_.beta1, static_cast<float>(step_));
  const float bc2 = 1.0f - std::pow(options_.beta2, static_cast<float>(step_));
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor t = items[i].second;
    if (!t.requires_grad()) continue;
    Matrix& value = t.mutable_value();
    value *= (1.0f - lr * options_.weight_decay);
    if (t.has_grad()) {
      Matrix g = t.grad() * clip;
      m_[i] = options_.beta1 * m_[i] + (1.0f - options_.beta1) * g;
      v_[i] = options_.beta2 * v_[i] + (1.0f - options_.beta2) * g.cwiseProduct(g);
    } else {
      m_[i] *= options_.beta1;
      v_[i] *= options_.beta2;
    }
    value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + options_.eps);
    t.zero_grad();
  }
}

std::vector<std::pair<std::string, Matrix>> AdamW::export_state() const {
  std::vector<std::pair<std::string, Matrix>> out;
  const auto& items = params_.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.emplace_back("adam.m." + items[i].first, m_[i]);
    out.emplace_back("adam.v." + items[i].first, v_[i]);
  }
  Matrix step(1, 1);
  step(0, 0) = static_cast<float>(step_);
  out.emplace_back("adam.step", step);
  return out;
}

void AdamW::import_state(const std::vector<std::pair<std::string, Matrix>>& values) {
  const auto& items = params_.items();
  auto find = [&values](const std::string& key) -> const Matrix& {
    for (const auto& [n, m] : values) {
      if (n == key) return m;
    }
    throw std::runtime_error("optimizer state is missing " + key);
  };
  for (std::size_t i = 0; i < items.size(); ++i) {
    m_[i] = find("adam.m." + items[i].first);
    v_[i] = find("adam.v." + items[i].first);
  }
  step_ = static_cast<long long>(find("adam.step")(0, 0));
}

}  // namespace boxguide::nn
