#include "paraformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

namespace paraformer {

namespace {

using Node = detail::TensorNode;
using NodePtr = std::shared_ptr<Node>;

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return wrap_node(std::move(node));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

bool track(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void accumulate(const NodePtr& node, const std::vector<double>& delta) {
  node->ensure_grad();
  for (size_t i = 0; i < delta.size(); ++i) node->grad[i] += delta[i];
}

int64_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("shape dimensions must be positive, got " +
                                 shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor wrap_node(std::shared_ptr<detail::TensorNode> node) {
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  int64_t n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0), false);
}

Tensor Tensor::full(Shape shape, double value) {
  int64_t n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, value), false);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size())) {
    throw ShapeError("from_data: " + shape_to_string(shape) + " needs " +
                     std::to_string(n) + " values, got " +
                     std::to_string(values.size()));
  }
  return make_tensor(std::move(shape), std::move(values), false);
}

Tensor Tensor::scalar(double value) {
  return make_tensor({1}, {value}, false);
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) {
    throw ContractError("grad accessed before backward populated it");
  }
  return node_->grad;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item: tensor has shape " + shape_to_string(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = node_->shape;
  if (idx.size() != s.size()) {
    throw ShapeError("at: rank mismatch for shape " + shape_to_string(s));
  }
  int64_t offset = 0;
  size_t axis = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= s[axis]) {
      throw ShapeError("at: index out of range for shape " + shape_to_string(s));
    }
    offset = offset * s[axis] + i;
    ++axis;
  }
  return node_->data[static_cast<size_t>(offset)];
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError(
        "backward: loss must be a scalar tensor, got shape " +
        (loss.defined() ? shape_to_string(loss.shape()) : std::string("none")));
  }
  if (entries_.empty()) {
    throw ContractError("backward: tape is empty");
  }
  auto loss_node = loss.node();
  loss_node->ensure_grad();
  loss_node->grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward();
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  bool rec = track(tape, {&a, &b});
  Tensor result = make_tensor(a.shape(), std::move(out), rec);
  if (rec) {
    auto an = a.node(), bn = b.node(), on = result.node();
    tape->record({{an, bn}, on, [an, bn, on] {
                    if (on->grad.empty()) return;
                    if (an->requires_grad) accumulate(an, on->grad);
                    if (bn->requires_grad) accumulate(bn, on->grad);
                  }});
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  bool rec = track(tape, {&a, &b});
  Tensor result = make_tensor(a.shape(), std::move(out), rec);
  if (rec) {
    auto an = a.node(), bn = b.node(), on = result.node();
    tape->record({{an, bn}, on, [an, bn, on] {
                    if (on->grad.empty()) return;
                    if (an->requires_grad) accumulate(an, on->grad);
                    if (bn->requires_grad) {
                      bn->ensure_grad();
                      for (size_t i = 0; i < on->grad.size(); ++i) {
                        bn->grad[i] -= on->grad[i];
                      }
                    }
                  }});
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  bool rec = track(tape, {&a, &b});
  Tensor result = make_tensor(a.shape(), std::move(out), rec);
  if (rec) {
    auto an = a.node(), bn = b.node(), on = result.node();
    tape->record({{an, bn}, on, [an, bn, on] {
                    if (on->grad.empty()) return;
                    if (an->requires_grad) {
                      an->ensure_grad();
                      for (size_t i = 0; i < on->grad.size(); ++i) {
                        an->grad[i] += on->grad[i] * bn->data[i];
                      }
                    }
                    if (bn->requires_grad) {
                      bn->ensure_grad();
                      for (size_t i = 0; i < on->grad.size(); ++i) {
                        bn->grad[i] += on->grad[i] * an->data[i];
                      }
                    }
                  }});
  }
  return result;
}

Tensor scale(const Tensor& a, double c, Tape* tape) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= c;
  bool rec = track(tape, {&a});
  Tensor result = make_tensor(a.shape(), std::move(out), rec);
  if (rec) {
    auto an = a.node(), on = result.node();
    tape->record({{an}, on, [an, on, c] {
                    if (on->grad.empty()) return;
                    an->ensure_grad();
                    for (size_t i = 0; i < on->grad.size(); ++i) {
                      an->grad[i] += c * on->grad[i];
                    }
                  }});
  }
  return result;
}

Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
  if (bias.rank() != 1 || last_dim(x) != bias.dim(0)) {
    throw ShapeError("add_bias: shape mismatch " + shape_to_string(x.shape()) +
                     " vs " + shape_to_string(bias.shape()));
  }
  const int64_t d = bias.dim(0);
  const int64_t rows = x.numel() / d;
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) row[j] += bd[j];
  }
  bool rec = track(tape, {&x, &bias});
  Tensor result = make_tensor(x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node(), bn = bias.node(), on = result.node();
    tape->record({{xn, bn}, on, [xn, bn, on, rows, d] {
                    if (on->grad.empty()) return;
                    if (xn->requires_grad) accumulate(xn, on->grad);
                    if (bn->requires_grad) {
                      bn->ensure_grad();
                      for (int64_t r = 0; r < rows; ++r) {
                        const double* g = on->grad.data() + r * d;
                        for (int64_t j = 0; j < d; ++j) bn->grad[j] += g[j];
                      }
                    }
                  }});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace {

// c[m,n] += a[m,k] * b[k,n], cache-friendly i-p-j order.
void gemm_acc(const double* a, const double* b, double* c, int64_t m,
              int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// da[m,k] += dc[m,n] * b[k,n]^T
void gemm_dA(const double* dc, const double* b, double* da, int64_t m,
             int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    double* darow = da + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// db[k,n] += a[m,k]^T * dc[m,n]
void gemm_dB(const double* a, const double* dc, double* db, int64_t m,
             int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* dcrow = dc + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      double* dbrow = db + p * n;
      for (int64_t j = 0; j < n; ++j) dbrow[j] += aip * dcrow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " +
                     shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  bool rec = track(tape, {&a, &b});
  Tensor result = make_tensor({m, n}, std::move(out), rec);
  if (rec) {
    auto an = a.node(), bn = b.node(), on = result.node();
    tape->record({{an, bn}, on, [an, bn, on, m, k, n] {
                    if (on->grad.empty()) return;
                    if (an->requires_grad) {
                      an->ensure_grad();
                      gemm_dA(on->grad.data(), bn->data.data(),
                              an->grad.data(), m, k, n);
                    }
                    if (bn->requires_grad) {
                      bn->ensure_grad();
                      gemm_dB(an->data.data(), on->grad.data(),
                              bn->grad.data(), m, k, n);
                    }
                  }});
  }
  return result;
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.rank() < 2 || a.rank() != b.rank()) {
    throw ShapeError("batched_matmul: incompatible shapes " +
                     shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const size_t r = a.rank();
  for (size_t i = 0; i + 2 < r; ++i) {
    if (a.shape()[i] != b.shape()[i]) {
      throw ShapeError("batched_matmul: incompatible shapes " +
                       shape_to_string(a.shape()) + " x " +
                       shape_to_string(b.shape()));
    }
  }
  const int64_t m = a.shape()[r - 2], k = a.shape()[r - 1];
  if (b.shape()[r - 2] != k) {
    throw ShapeError("batched_matmul: incompatible shapes " +
                     shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const int64_t n = b.shape()[r - 1];
  int64_t batches = 1;
  for (size_t i = 0; i + 2 < r; ++i) batches *= a.shape()[i];

  Shape out_shape(a.shape());
  out_shape[r - 1] = n;
  std::vector<double> out(static_cast<size_t>(batches * m * n), 0.0);
  for (int64_t bi = 0; bi < batches; ++bi) {
    gemm_acc(a.data().data() + bi * m * k, b.data().data() + bi * k * n,
             out.data() + bi * m * n, m, k, n);
  }
  bool rec = track(tape, {&a, &b});
  Tensor result = make_tensor(std::move(out_shape), std::move(out), rec);
  if (rec) {
    auto an = a.node(), bn = b.node(), on = result.node();
    tape->record({{an, bn}, on, [an, bn, on, batches, m, k, n] {
                    if (on->grad.empty()) return;
                    if (an->requires_grad) {
                      an->ensure_grad();
                      for (int64_t bi = 0; bi < batches; ++bi) {
                        gemm_dA(on->grad.data() + bi * m * n,
                                bn->data.data() + bi * k * n,
                                an->grad.data() + bi * m * k, m, k, n);
                      }
                    }
                    if (bn->requires_grad) {
                      bn->ensure_grad();
                      for (int64_t bi = 0; bi < batches; ++bi) {
                        gemm_dB(an->data.data() + bi * m * k,
                                on->grad.data() + bi * m * n,
                                bn->grad.data() + bi * k * n, m, k, n);
                      }
                    }
                  }});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Layout ops
// ---------------------------------------------------------------------------

namespace {

std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

}  // namespace

Tensor transpose_last2(const Tensor& x, Tape* tape) {
  if (x.rank() < 2) {
    throw ShapeError("transpose_last2: needs rank >= 2, got " +
                     shape_to_string(x.shape()));
  }
  std::vector<size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes, tape);
}

Tensor permute(const Tensor& x, const std::vector<size_t>& axes, Tape* tape) {
  const size_t r = x.rank();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) {
    throw ShapeError("permute: axes rank mismatch for " +
                     shape_to_string(x.shape()));
  }
  for (size_t a : axes) {
    if (a >= r || seen[a]) {
      throw ShapeError("permute: axes must be a permutation of 0.." +
                       std::to_string(r - 1));
    }
    seen[a] = true;
  }
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[axes[i]];

  const auto in_strides = row_major_strides(x.shape());
  // Stride in the input for each output axis.
  std::vector<int64_t> gather(r);
  for (size_t i = 0; i < r; ++i) gather[i] = in_strides[axes[i]];

  const int64_t n = x.numel();
  std::vector<double> out(static_cast<size_t>(n));
  std::vector<int64_t> idx(r, 0);
  auto xd = x.data();
  int64_t src = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    out[flat] = xd[src];
    for (size_t axis = r; axis-- > 0;) {
      if (++idx[axis] < out_shape[axis]) {
        src += gather[axis];
        break;
      }
      src -= gather[axis] * (out_shape[axis] - 1);
      idx[axis] = 0;
    }
  }
  bool rec = track(tape, {&x});
  Tensor result = make_tensor(std::move(out_shape), std::move(out), rec);
  if (rec) {
    auto xn = x.node(), on = result.node();
    Shape oshape = result.shape();
    tape->record({{xn}, on, [xn, on, gather, oshape, n, r] {
                    if (on->grad.empty()) return;
                    xn->ensure_grad();
                    std::vector<int64_t> idx(r, 0);
                    int64_t src = 0;
                    for (int64_t flat = 0; flat < n; ++flat) {
                      xn->grad[src] += on->grad[flat];
                      for (size_t axis = r; axis-- > 0;) {
                        if (++idx[axis] < oshape[axis]) {
                          src += gather[axis];
                          break;
                        }
                        src -= gather[axis] * (oshape[axis] - 1);
                        idx[axis] = 0;
                      }
                    }
                  }});
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape new_shape, Tape* tape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) +
                     " as " + shape_to_string(new_shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  bool rec = track(tape, {&x});
  Tensor result = make_tensor(std::move(new_shape), std::move(out), rec);
  if (rec) {
    auto xn = x.node(), on = result.node();
    tape->record({{xn}, on, [xn, on] {
                    if (on->grad.empty()) return;
                    accumulate(xn, on->grad);
                  }});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

Tensor softmax_last(const Tensor& x, Tape* tape) {
  const int64_t d = last_dim(x);
  const int64_t rows = x.numel() / d;
  std::vector<double> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double* orow = out.data() + r * d;
    double mx = row[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    if (std::isnan(mx)) {
      throw NumericError("softmax: NaN in input row " + std::to_string(r));
    }
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int64_t j = 0; j < d; ++j) orow[j] /= sum;
  }
  bool rec = track(tape, {&x});
  Tensor result = make_tensor(x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node(), on = result.node();
    tape->record({{xn}, on, [xn, on, rows, d] {
                    if (on->grad.empty()) return;
                    xn->ensure_grad();
                    for (int64_t r = 0; r < rows; ++r) {
                      const double* y = on->data.data() + r * d;
                      const double* dy = on->grad.data() + r * d;
                      double dot = 0.0;
                      for (int64_t j = 0; j < d; ++j) dot += y[j] * dy[j];
                      double* dx = xn->grad.data() + r * d;
                      for (int64_t j = 0; j < d; ++j) {
                        dx[j] += y[j] * (dy[j] - dot);
                      }
                    }
                  }});
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps, Tape* tape) {
  const int64_t d = last_dim(x);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d ||
      beta.dim(0) != d) {
    throw ShapeError("layer_norm: affine shapes " +
                     shape_to_string(gamma.shape()) + "/" +
                     shape_to_string(beta.shape()) + " do not match last dim of " +
                     shape_to_string(x.shape()));
  }
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const int64_t rows = x.numel() / d;
  std::vector<double> out(static_cast<size_t>(x.numel()));
  std::vector<double> xhat(static_cast<size_t>(x.numel()));
  std::vector<double> inv_std(static_cast<size_t>(rows));
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    double* xh = xhat.data() + r * d;
    double* orow = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) {
      xh[j] = (row[j] - mean) * is;
      orow[j] = gd[j] * xh[j] + bd[j];
    }
  }
  bool rec = track(tape, {&x, &gamma, &beta});
  Tensor result = make_tensor(x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(),
         on = result.node();
    tape->record(
        {{xn, gn, bn}, on,
         [xn, gn, bn, on, rows, d, xhat = std::move(xhat),
          inv_std = std::move(inv_std)] {
           if (on->grad.empty()) return;
           for (int64_t r = 0; r < rows; ++r) {
             const double* dy = on->grad.data() + r * d;
             const double* xh = xhat.data() + r * d;
             if (gn->requires_grad) {
               gn->ensure_grad();
               for (int64_t j = 0; j < d; ++j) gn->grad[j] += dy[j] * xh[j];
             }
             if (bn->requires_grad) {
               bn->ensure_grad();
               for (int64_t j = 0; j < d; ++j) bn->grad[j] += dy[j];
             }
             if (xn->requires_grad) {
               xn->ensure_grad();
               double m1 = 0.0, m2 = 0.0;
               for (int64_t j = 0; j < d; ++j) {
                 const double g = dy[j] * gn->data[j];
                 m1 += g;
                 m2 += g * xh[j];
               }
               m1 /= static_cast<double>(d);
               m2 /= static_cast<double>(d);
               double* dx = xn->grad.data() + r * d;
               for (int64_t j = 0; j < d; ++j) {
                 const double g = dy[j] * gn->data[j];
                 dx[j] += (g - m1 - xh[j] * m2) * inv_std[r];
               }
             }
           }
         }});
  }
  return result;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename Fwd, typename Drv>
Tensor pointwise_op(const char* /*name*/, const Tensor& x, Tape* tape, Fwd fwd,
                    Drv drv) {
  std::vector<double> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  bool rec = track(tape, {&x});
  Tensor result = make_tensor(x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node(), on = result.node();
    tape->record({{xn}, on, [xn, on, drv] {
                    if (on->grad.empty()) return;
                    xn->ensure_grad();
                    for (size_t i = 0; i < on->grad.size(); ++i) {
                      xn->grad[i] += on->grad[i] * drv(xn->data[i], on->data[i]);
                    }
                  }});
  }
  return result;
}

}  // namespace

Tensor gelu(const Tensor& x, Tape* tape) {
  return pointwise_op(
      "gelu", x, tape,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor relu(const Tensor& x, Tape* tape) {
  return pointwise_op(
      "relu", x, tape, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope, Tape* tape) {
  return pointwise_op(
      "leaky_relu", x, tape,
      [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor tanh_act(const Tensor& x, Tape* tape) {
  return pointwise_op(
      "tanh", x, tape, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train, Tape* tape) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must be in [0,1), got " +
                      std::to_string(rate));
  }
  if (!train || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(static_cast<size_t>(x.numel()));
  for (double& m : mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
  std::vector<double> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  bool rec = track(tape, {&x});
  Tensor result = make_tensor(x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node(), on = result.node();
    tape->record({{xn}, on, [xn, on, mask = std::move(mask)] {
                    if (on->grad.empty()) return;
                    xn->ensure_grad();
                    for (size_t i = 0; i < on->grad.size(); ++i) {
                      xn->grad[i] += on->grad[i] * mask[i];
                    }
                  }});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reductions. Sequential accumulation order, for reproducibility.
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x, Tape* tape) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  bool rec = track(tape, {&x});
  Tensor result = make_tensor({1}, {acc}, rec);
  if (rec) {
    auto xn = x.node(), on = result.node();
    tape->record({{xn}, on, [xn, on] {
                    if (on->grad.empty()) return;
                    xn->ensure_grad();
                    const double g = on->grad[0];
                    for (double& v : xn->grad) v += g;
                  }});
  }
  return result;
}

Tensor mean_all(const Tensor& x, Tape* tape) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  bool rec = track(tape, {&x});
  Tensor result = make_tensor({1}, {acc * inv_n}, rec);
  if (rec) {
    auto xn = x.node(), on = result.node();
    tape->record({{xn}, on, [xn, on, inv_n] {
                    if (on->grad.empty()) return;
                    xn->ensure_grad();
                    const double g = on->grad[0] * inv_n;
                    for (double& v : xn->grad) v += g;
                  }});
  }
  return result;
}

}  // namespace paraformer
