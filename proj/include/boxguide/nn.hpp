#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major float
// matrices. Activations are laid out as (positions, channels): one row per
// flattened pixel (row-major, index = y * W + x) or per sequence element.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace boxguide::nn {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  template <typename Derived>
  void add_grad(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
  bool has_grad() const { return grad.size() != 0; }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  void zero_grad() { node_->grad.resize(0, 0); }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  float item() const { return node_->value(0, 0); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Whether newly created op results record a backward closure.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Runs reverse accumulation from a 1x1 tensor.
void backward(const Tensor& loss);

/// Builds a result node. The backward closure receives the result node and
/// reads its parents in the order given.
Tensor make_result(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> grad_fn);

// Elementwise and linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b, float alpha = 1.0f);  // alpha * a * b^T
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_row(const Tensor& a, const Tensor& row);  // broadcast (1, C) over rows
Tensor silu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax_rows(const Tensor& a);

// Normalization.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

// Spatial ops on (H*W, C) feature maps.
Tensor conv2d(const Tensor& x, int height, int width, const Tensor& weight, const Tensor& bias,
              int kernel, int stride, int padding);
Tensor upsample_nearest2x(const Tensor& x, int height, int width);

// Shape ops.
Tensor hcat(const std::vector<Tensor>& parts);
Tensor vcat(const std::vector<Tensor>& parts);
Tensor col_slice(const Tensor& x, Index start, Index count);
Tensor row_slice(const Tensor& x, Index start, Index count);
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
Tensor mean_rows(const Tensor& x);

// Reductions / losses.
Tensor sum(const Tensor& x);
Tensor mse(const Tensor& pred, const Matrix& target);

/// Xavier-uniform initialised (fan_in, fan_out) matrix.
Matrix xavier_uniform(Index fan_in, Index fan_out, std::mt19937_64& rng);

/// Ordered, named parameter collection shared by a model and its optimizer.
class ParamStore {
 public:
  Tensor create(const std::string& name, Matrix init);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void set_trainable(bool trainable);
  /// Only parameters whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool trainable);
  void zero_grad();
  /// True if any parameter holds a non-empty gradient buffer.
  bool any_grad() const;
  /// FNV-1a over names and parameter bytes.
  std::uint64_t checksum() const;

  std::vector<std::pair<std::string, Matrix>> export_values(const std::string& prefix = "") const;
  /// Loads values for every parameter; throws on a missing name or a shape mismatch.
  void import_values(const std::vector<std::pair<std::string, Matrix>>& values,
                     const std::string& prefix = "");

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
};

struct AdamWOptions {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 1e-4f;
  float max_grad_norm = 0.0f;  // 0 disables clipping
};

class AdamW {
 public:
  AdamW(ParamStore& params, AdamWOptions options);

  /// Applies one update with the given learning rate and clears gradients.
  void step(float lr);
  long long steps_taken() const { return step_; }

  std::vector<std::pair<std::string, Matrix>> export_state() const;
  void import_state(const std::vector<std::pair<std::string, Matrix>>& values);

 private:
  ParamStore& params_;
  AdamWOptions options_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long long step_ = 0;
};

}  // namespace boxguide::nn
