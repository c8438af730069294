#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ctfr/mat.hpp"

namespace ctfr {

using Shape = std::vector<std::int64_t>;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first use during backward
  bool requires_grad = false;
  std::uint64_t visit_epoch = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad, accumulates into parents' grad. Null for leaves.
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// RAII guard disabling graph construction. Forward values are unchanged;
// ops simply record no parents and no backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool grad_enabled();

 private:
  bool prev_;
};

// Dense 64-bit float tensor with reverse-mode gradients. Rank 1 and 2 only;
// scalars are shape {1}. Handles are cheap shared references; values are
// immutable once created except leaf edits via mutable_data() (parameter
// init, optimizer updates, finite differencing) and gradient accumulation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v);
  static Tensor from_mat(const Mat& m, bool requires_grad = false);
  static Tensor from_vec(const Vec& v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }
  std::int64_t rows() const;
  std::int64_t cols() const;
  double item() const;

  std::span<const double> data() const { return node_->data; }
  // Leaf tensors only; mutating an interior node would desynchronize the graph.
  std::vector<double>& mutable_data();
  bool requires_grad() const { return node_->requires_grad; }

  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad() const;  // node-level, like grad(): handles are shared references

  Mat to_mat() const;
  Vec to_vec() const;

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& handle() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

// Builds a graph node from precomputed forward data. The backward closure is
// attached only when grad tracking is on and some parent requires gradients,
// so value-only code pays no closure cost. Used by every op below and by the
// fused objective op; closures must capture parent nodes as raw pointers
// (the node's parent list owns the references) to avoid shared_ptr cycles.
Tensor make_op(Shape shape, std::vector<double> data, const std::vector<Tensor>& parents,
               std::function<void(TensorNode&)> backward_fn);

}  // namespace detail

// Elementwise and linear-algebra primitives. All validate shapes and throw
// std::invalid_argument on mismatch.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]·[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]·[n,k]^T -> [m,n]
// y = x·W^T + b with x [T,in], W [out,in], b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// Unpadded 1-D convolution; x [L,c_in], w [c_out, kernel*c_in] with flat
// (tap, channel) minor index, b [c_out]. Output [(L-kernel)/stride+1, c_out].
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t kernel,
              std::int64_t stride);
Tensor gelu(const Tensor& x);  // exact form x*Phi(x)
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
// Row softmax over columns; `excluded`, when given, marks key positions
// removed from the distribution (their outputs are exactly 0).
Tensor softmax_rows(const Tensor& x, const std::vector<bool>* excluded = nullptr);

Tensor slice_rows(const Tensor& x, std::int64_t r0, std::int64_t r1);
Tensor slice_cols(const Tensor& x, std::int64_t c0, std::int64_t c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, Shape shape);
Tensor row(const Tensor& x, std::int64_t r);  // rank-1 view copy of one row

Tensor sum_all(const Tensor& x);              // -> scalar
Tensor dot(const Tensor& a, const Tensor& b);  // rank-1 · rank-1 -> scalar
Tensor stack_rows(const std::vector<Tensor>& vecs);  // B × d from rank-1 tensors
Tensor matrix_from_scalars(std::int64_t rows, std::int64_t cols,
                           const std::vector<Tensor>& scalars);

// Reverse-mode sweep from a scalar output. Accumulates into .grad of every
// requires_grad node reachable from `out`. Existing leaf gradients are added
// to, torch-style; call zero_grad between independent passes.
void backward(const Tensor& out);

// Gradients of `out` w.r.t. `params`, zeroing first. Parameters not on the
// path to the output get zero gradients.
std::vector<std::vector<double>> grad(const Tensor& out, std::span<const Tensor> params);

// True when every element is finite.
bool all_finite(const Tensor& t);

}  // namespace ctfr
