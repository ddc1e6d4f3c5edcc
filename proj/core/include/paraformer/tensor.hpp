#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "paraformer/common.hpp"

namespace paraformer {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats. Cheap to copy (shared handle);
// values are treated as immutable once produced by an op. Gradients live
// on the node and accumulate across fan-out.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  int64_t dim(size_t axis) const { return node_->shape.at(axis); }
  size_t rank() const { return node_->shape.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool value) {
    node_->requires_grad = value;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const;
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  }

  // Value of a scalar (numel == 1) tensor.
  double item() const;

  double at(std::initializer_list<int64_t> idx) const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}

  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor wrap_node(std::shared_ptr<detail::TensorNode> node);
};

Tensor wrap_node(std::shared_ptr<detail::TensorNode> node);

// Reverse-mode tape. Ops append entries in execution order, which is a
// topological order by construction, so one reverse sweep settles every
// gradient. A tape is owned by exactly one training step at a time.
class Tape {
 public:
  struct Entry {
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    std::function<void()> backward;
  };

  void record(Entry entry) { entries_.push_back(std::move(entry)); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse, accumulating
  // gradients into every requires_grad node reachable from the loss.
  void backward(const Tensor& loss);

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Every op computes forward values immediately and
// records a backward rule when `tape` is non-null and an input requires grad.
// Shapes must match exactly; the only broadcast is add_bias over the last
// axis.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double c, Tape* tape = nullptr);

// x[..., d] + bias[d]
Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr);

// Strict 2-D matrix product a[m,k] x b[k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// a[..., m, k] x b[..., k, n] with identical leading dims.
Tensor batched_matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

Tensor transpose_last2(const Tensor& x, Tape* tape = nullptr);
Tensor permute(const Tensor& x, const std::vector<size_t>& axes,
               Tape* tape = nullptr);
Tensor reshape(const Tensor& x, Shape new_shape, Tape* tape = nullptr);

// Numerically stable softmax over the last axis.
Tensor softmax_last(const Tensor& x, Tape* tape = nullptr);

// Per-last-axis standardization with affine: gamma * (x - mu)/sqrt(var + eps) + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5, Tape* tape = nullptr);

Tensor gelu(const Tensor& x, Tape* tape = nullptr);
Tensor relu(const Tensor& x, Tape* tape = nullptr);
Tensor leaky_relu(const Tensor& x, double slope = 0.01, Tape* tape = nullptr);
Tensor tanh_act(const Tensor& x, Tape* tape = nullptr);

// Inverted dropout; identity when train == false or rate == 0. The mask is
// drawn from `rng` at call time, so a reseeded rng reproduces the mask.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train,
               Tape* tape = nullptr);

Tensor sum_all(const Tensor& x, Tape* tape = nullptr);
Tensor mean_all(const Tensor& x, Tape* tape = nullptr);

}  // namespace paraformer
