#include "ctfr/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace ctfr {

namespace {

thread_local bool g_grad_enabled = true;

// Bumped once per backward sweep; single-threaded by contract.
std::uint64_t g_visit_epoch = 0;

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

void require(bool ok, const char* op, const char* detail) {
  if (!ok) shape_error(op, detail);
}

double gelu_phi(double x) { return 0.5 * (1.0 + std::erf(x * 0.70710678118654752440)); }
double gelu_pdf(double x) { return std::exp(-0.5 * x * x) * 0.39894228040143267794; }

constexpr double kLayerNormEps = 1e-5;

}  // namespace

namespace detail {

Tensor make_op(Shape shape, std::vector<double> data, const std::vector<Tensor>& parents,
               std::function<void(TensorNode&)> backward_fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
#ifndef NDEBUG
  for (double v : node->data) assert(std::isfinite(v) && "non-finite op output");
#endif
  bool track = g_grad_enabled;
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p.node()->requires_grad;
    track = any;
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.handle());
    node->backward = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(node));
}

}  // namespace detail

using detail::make_op;
using detail::TensorNode;

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != static_cast<std::int64_t>(data.size()))
    shape_error("Tensor", "data length does not match shape");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

Tensor Tensor::from_mat(const Mat& m, bool requires_grad) {
  return from_data({m.rows, m.cols}, m.v, requires_grad);
}

Tensor Tensor::from_vec(const Vec& v, bool requires_grad) {
  return from_data({static_cast<std::int64_t>(v.size())}, v, requires_grad);
}

std::int64_t Tensor::rows() const {
  if (rank() != 2) shape_error("rows", "tensor is not rank 2");
  return node_->shape[0];
}

std::int64_t Tensor::cols() const {
  if (rank() != 2) shape_error("cols", "tensor is not rank 2");
  return node_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) shape_error("item", "tensor is not a scalar");
  return node_->data[0];
}

std::vector<double>& Tensor::mutable_data() {
  if (node_->backward) shape_error("mutable_data", "only leaf tensors may be mutated");
  return node_->data;
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) return {};
  return node_->grad;
}

void Tensor::zero_grad() const { node_->grad.assign(node_->data.size(), 0.0); }

Mat Tensor::to_mat() const {
  Mat m(rows(), cols());
  m.v = node_->data;
  return m;
}

Vec Tensor::to_vec() const { return node_->data; }

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add", "shape mismatch");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  auto* pa = a.node();
  auto* pb = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub", "shape mismatch");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
  auto* pa = a.node();
  auto* pb = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul", "shape mismatch");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  auto* pa = a.node();
  auto* pb = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb->grad[i] += self.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= c;
  auto* pa = a.node();
  return make_op(a.shape(), std::move(out), {a}, [pa, c](TensorNode& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += c * self.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v * gelu_phi(v);
  auto* px = x.node();
  return make_op(x.shape(), std::move(out), {x}, [px](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double v = px->data[i];
      px->grad[i] += self.grad[i] * (gelu_phi(v) + v * gelu_pdf(v));
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul", "both operands must be rank 2");
  require(a.cols() == b.rows(), "matmul", "inner dimensions differ");
  const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t p = 0; p < k; ++p) {
      double av = A[i * k + p];
      for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
    }
  auto* pa = a.node();
  auto* pb = b.node();
  return make_op({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](TensorNode& self) {
    const double* G = self.grad.data();
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA = G · B^T
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
          double g = G[i * n + j];
          for (std::int64_t p = 0; p < k; ++p) pa->grad[i * k + p] += g * pb->data[p * n + j];
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB = A^T · G
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
          double av = pa->data[i * k + p];
          for (std::int64_t j = 0; j < n; ++j) pb->grad[p * n + j] += av * G[i * n + j];
        }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul_nt", "both operands must be rank 2");
  require(a.cols() == b.cols(), "matmul_nt", "inner dimensions differ");
  const std::int64_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      out[i * n + j] = s;
    }
  auto* pa = a.node();
  auto* pb = b.node();
  return make_op({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](TensorNode& self) {
    const double* G = self.grad.data();
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA = G · B
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
          double g = G[i * n + j];
          for (std::int64_t p = 0; p < k; ++p) pa->grad[i * k + p] += g * pb->data[j * k + p];
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB = G^T · A
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
          double g = G[i * n + j];
          for (std::int64_t p = 0; p < k; ++p) pb->grad[j * k + p] += g * pa->data[i * k + p];
        }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, "linear", "x,W rank 2 and b rank 1");
  require(x.cols() == w.cols(), "linear", "input width does not match weight");
  require(b.shape()[0] == w.rows(), "linear", "bias length does not match weight");
  const std::int64_t t = x.rows(), in = x.cols(), out_d = w.rows();
  std::vector<double> out(static_cast<std::size_t>(t * out_d));
  const double* X = x.data().data();
  const double* W = w.data().data();
  const double* B = b.data().data();
  for (std::int64_t r = 0; r < t; ++r)
    for (std::int64_t o = 0; o < out_d; ++o) {
      double s = B[o];
      const double* xr = X + r * in;
      const double* wo = W + o * in;
      for (std::int64_t i = 0; i < in; ++i) s += xr[i] * wo[i];
      out[r * out_d + o] = s;
    }
  auto* px = x.node();
  auto* pw = w.node();
  auto* pb = b.node();
  return make_op({t, out_d}, std::move(out), {x, w, b},
                 [px, pw, pb, t, in, out_d](TensorNode& self) {
                   const double* G = self.grad.data();
                   if (px->requires_grad) {
                     px->ensure_grad();
                     for (std::int64_t r = 0; r < t; ++r)
                       for (std::int64_t o = 0; o < out_d; ++o) {
                         double g = G[r * out_d + o];
                         const double* wo = pw->data.data() + o * in;
                         double* xr = px->grad.data() + r * in;
                         for (std::int64_t i = 0; i < in; ++i) xr[i] += g * wo[i];
                       }
                   }
                   if (pw->requires_grad) {
                     pw->ensure_grad();
                     for (std::int64_t r = 0; r < t; ++r)
                       for (std::int64_t o = 0; o < out_d; ++o) {
                         double g = G[r * out_d + o];
                         const double* xr = px->data.data() + r * in;
                         double* wo = pw->grad.data() + o * in;
                         for (std::int64_t i = 0; i < in; ++i) wo[i] += g * xr[i];
                       }
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     for (std::int64_t r = 0; r < t; ++r)
                       for (std::int64_t o = 0; o < out_d; ++o) pb->grad[o] += G[r * out_d + o];
                   }
                 });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t kernel,
              std::int64_t stride) {
  require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, "conv1d", "x,W rank 2 and b rank 1");
  require(kernel >= 1 && stride >= 1, "conv1d", "kernel and stride must be positive");
  const std::int64_t len = x.rows(), cin = x.cols(), cout = w.rows();
  require(w.cols() == kernel * cin, "conv1d", "weight width must be kernel*c_in");
  require(b.shape()[0] == cout, "conv1d", "bias length does not match out channels");
  if (len < kernel) throw std::invalid_argument("conv1d: input shorter than kernel");
  const std::int64_t lout = (len - kernel) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(lout * cout));
  const double* X = x.data().data();
  const double* W = w.data().data();
  const double* B = b.data().data();
  for (std::int64_t tpos = 0; tpos < lout; ++tpos) {
    const double* window = X + tpos * stride * cin;
    for (std::int64_t o = 0; o < cout; ++o) {
      double s = B[o];
      const double* wo = W + o * kernel * cin;
      for (std::int64_t i = 0; i < kernel * cin; ++i) s += window[i] * wo[i];
      out[tpos * cout + o] = s;
    }
  }
  auto* px = x.node();
  auto* pw = w.node();
  auto* pb = b.node();
  return make_op({lout, cout}, std::move(out), {x, w, b},
                 [px, pw, pb, kernel, stride, cin, cout, lout](TensorNode& self) {
                   const double* G = self.grad.data();
                   const std::int64_t span = kernel * cin;
                   if (px->requires_grad) {
                     px->ensure_grad();
                     for (std::int64_t tpos = 0; tpos < lout; ++tpos) {
                       double* window = px->grad.data() + tpos * stride * cin;
                       for (std::int64_t o = 0; o < cout; ++o) {
                         double g = G[tpos * cout + o];
                         const double* wo = pw->data.data() + o * span;
                         for (std::int64_t i = 0; i < span; ++i) window[i] += g * wo[i];
                       }
                     }
                   }
                   if (pw->requires_grad) {
                     pw->ensure_grad();
                     for (std::int64_t tpos = 0; tpos < lout; ++tpos) {
                       const double* window = px->data.data() + tpos * stride * cin;
                       for (std::int64_t o = 0; o < cout; ++o) {
                         double g = G[tpos * cout + o];
                         double* wo = pw->grad.data() + o * span;
                         for (std::int64_t i = 0; i < span; ++i) wo[i] += g * window[i];
                       }
                     }
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     for (std::int64_t tpos = 0; tpos < lout; ++tpos)
                       for (std::int64_t o = 0; o < cout; ++o) pb->grad[o] += G[tpos * cout + o];
                   }
                 });
}

// ---------------------------------------------------------------------------
// Normalization and softmax

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require(x.rank() == 2 && gain.rank() == 1 && bias.rank() == 1, "layer_norm",
          "x rank 2, gain/bias rank 1");
  const std::int64_t t = x.rows(), d = x.cols();
  require(gain.shape()[0] == d && bias.shape()[0] == d, "layer_norm",
          "gain/bias length does not match feature dim");
  std::vector<double> out(static_cast<std::size_t>(t * d));
  const double* X = x.data().data();
  const double* Gn = gain.data().data();
  const double* Bs = bias.data().data();
  for (std::int64_t r = 0; r < t; ++r) {
    const double* xr = X + r * d;
    double mean = 0.0;
    for (std::int64_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      double c = xr[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::int64_t i = 0; i < d; ++i)
      out[r * d + i] = Gn[i] * (xr[i] - mean) * inv + Bs[i];
  }
  auto* px = x.node();
  auto* pg = gain.node();
  auto* pb = bias.node();
  return make_op({t, d}, std::move(out), {x, gain, bias}, [px, pg, pb, t, d](TensorNode& self) {
    const double* G = self.grad.data();
    std::vector<double> xhat(static_cast<std::size_t>(d));
    for (std::int64_t r = 0; r < t; ++r) {
      const double* xr = px->data.data() + r * d;
      const double* gr = G + r * d;
      double mean = 0.0;
      for (std::int64_t i = 0; i < d; ++i) mean += xr[i];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::int64_t i = 0; i < d; ++i) {
        double c = xr[i] - mean;
        var += c * c;
      }
      var /= static_cast<double>(d);
      double inv = 1.0 / std::sqrt(var + kLayerNormEps);
      for (std::int64_t i = 0; i < d; ++i) xhat[i] = (xr[i] - mean) * inv;
      if (px->requires_grad) {
        px->ensure_grad();
        double m1 = 0.0, m2 = 0.0;
        for (std::int64_t i = 0; i < d; ++i) {
          double tg = gr[i] * pg->data[i];
          m1 += tg;
          m2 += tg * xhat[i];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        double* dxr = px->grad.data() + r * d;
        for (std::int64_t i = 0; i < d; ++i) {
          double tg = gr[i] * pg->data[i];
          dxr[i] += (tg - m1 - xhat[i] * m2) * inv;
        }
      }
      if (pg->requires_grad) {
        pg->ensure_grad();
        for (std::int64_t i = 0; i < d; ++i) pg->grad[i] += gr[i] * xhat[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::int64_t i = 0; i < d; ++i) pb->grad[i] += gr[i];
      }
    }
  });
}

Tensor softmax_rows(const Tensor& x, const std::vector<bool>* excluded) {
  require(x.rank() == 2, "softmax_rows", "input must be rank 2");
  const std::int64_t t = x.rows(), c = x.cols();
  if (excluded) {
    require(static_cast<std::int64_t>(excluded->size()) == c, "softmax_rows",
            "mask length does not match columns");
    bool any = false;
    for (bool e : *excluded) any = any || !e;
    require(any, "softmax_rows", "mask excludes every position");
  }
  std::vector<double> out(static_cast<std::size_t>(t * c), 0.0);
  const double* X = x.data().data();
  for (std::int64_t r = 0; r < t; ++r) {
    const double* xr = X + r * c;
    double m = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < c; ++j)
      if (!excluded || !(*excluded)[static_cast<std::size_t>(j)]) m = std::max(m, xr[j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      if (excluded && (*excluded)[static_cast<std::size_t>(j)]) continue;
      double e = std::exp(xr[j] - m);
      out[r * c + j] = e;
      s += e;
    }
    double invs = 1.0 / s;
    for (std::int64_t j = 0; j < c; ++j) out[r * c + j] *= invs;
  }
  auto* px = x.node();
  return make_op({t, c}, std::move(out), {x}, [px, t, c](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const double* Y = self.data.data();
    const double* G = self.grad.data();
    for (std::int64_t r = 0; r < t; ++r) {
      const double* yr = Y + r * c;
      const double* gr = G + r * c;
      double inner = 0.0;
      for (std::int64_t j = 0; j < c; ++j) inner += yr[j] * gr[j];
      double* dxr = px->grad.data() + r * c;
      // excluded positions have y == 0 and therefore zero gradient
      for (std::int64_t j = 0; j < c; ++j) dxr[j] += yr[j] * (gr[j] - inner);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape surgery

Tensor slice_rows(const Tensor& x, std::int64_t r0, std::int64_t r1) {
  require(x.rank() == 2, "slice_rows", "input must be rank 2");
  require(0 <= r0 && r0 < r1 && r1 <= x.rows(), "slice_rows", "row range out of bounds");
  const std::int64_t c = x.cols();
  std::vector<double> out(x.data().begin() + r0 * c, x.data().begin() + r1 * c);
  auto* px = x.node();
  return make_op({r1 - r0, c}, std::move(out), {x}, [px, r0, c](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      px->grad[static_cast<std::size_t>(r0 * c) + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::int64_t c0, std::int64_t c1) {
  require(x.rank() == 2, "slice_cols", "input must be rank 2");
  require(0 <= c0 && c0 < c1 && c1 <= x.cols(), "slice_cols", "column range out of bounds");
  const std::int64_t t = x.rows(), c = x.cols(), w = c1 - c0;
  std::vector<double> out(static_cast<std::size_t>(t * w));
  const double* X = x.data().data();
  for (std::int64_t r = 0; r < t; ++r)
    for (std::int64_t j = 0; j < w; ++j) out[r * w + j] = X[r * c + c0 + j];
  auto* px = x.node();
  return make_op({t, w}, std::move(out), {x}, [px, t, c, c0, w](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::int64_t r = 0; r < t; ++r)
      for (std::int64_t j = 0; j < w; ++j) px->grad[r * c + c0 + j] += self.grad[r * w + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows", "no parts given");
  const std::int64_t c = parts[0].cols();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.cols() == c, "concat_rows", "parts must share column count");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total * c));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<TensorNode*> nodes;
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    offsets.push_back(off * c);
    off += p.rows();
  }
  return make_op({total, c}, std::move(out), parts,
                 [nodes = std::move(nodes), offsets = std::move(offsets)](TensorNode& self) {
                   for (std::size_t k = 0; k < nodes.size(); ++k) {
                     if (!nodes[k]->requires_grad) continue;
                     nodes[k]->ensure_grad();
                     auto base = static_cast<std::size_t>(offsets[k]);
                     for (std::size_t i = 0; i < nodes[k]->grad.size(); ++i)
                       nodes[k]->grad[i] += self.grad[base + i];
                   }
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols", "no parts given");
  const std::int64_t t = parts[0].rows();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.rows() == t, "concat_cols", "parts must share row count");
    total += p.cols();
  }
  std::vector<double> out(static_cast<std::size_t>(t * total));
  std::int64_t off = 0;
  std::vector<TensorNode*> nodes;
  std::vector<std::int64_t> offsets, widths;
  for (const auto& p : parts) {
    const std::int64_t w = p.cols();
    const double* P = p.data().data();
    for (std::int64_t r = 0; r < t; ++r)
      for (std::int64_t j = 0; j < w; ++j) out[r * total + off + j] = P[r * w + j];
    nodes.push_back(p.node());
    offsets.push_back(off);
    widths.push_back(w);
    off += w;
  }
  return make_op({t, total}, std::move(out), parts,
                 [nodes = std::move(nodes), offsets = std::move(offsets),
                  widths = std::move(widths), t, total](TensorNode& self) {
                   for (std::size_t k = 0; k < nodes.size(); ++k) {
                     if (!nodes[k]->requires_grad) continue;
                     nodes[k]->ensure_grad();
                     const std::int64_t w = widths[k], o = offsets[k];
                     for (std::int64_t r = 0; r < t; ++r)
                       for (std::int64_t j = 0; j < w; ++j)
                         nodes[k]->grad[r * w + j] += self.grad[r * total + o + j];
                   }
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape", "element count must be preserved");
  std::vector<double> out(x.data().begin(), x.data().end());
  auto* px = x.node();
  return make_op(std::move(shape), std::move(out), {x}, [px](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
  });
}

Tensor row(const Tensor& x, std::int64_t r) {
  require(x.rank() == 2, "row", "input must be rank 2");
  require(0 <= r && r < x.rows(), "row", "row index out of bounds");
  return reshape(slice_rows(x, r, r + 1), {x.cols()});
}

// ---------------------------------------------------------------------------
// Reductions and assembly

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto* px = x.node();
  return make_op({1}, {s}, {x}, [px](TensorNode& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (double& g : px->grad) g += self.grad[0];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require(a.rank() == 1 && b.rank() == 1, "dot", "operands must be rank 1");
  require(a.size() == b.size(), "dot", "length mismatch");
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  auto* pa = a.node();
  auto* pb = b.node();
  return make_op({1}, {s}, {a, b}, [pa, pb](TensorNode& self) {
    double g = self.grad[0];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < pa->data.size(); ++i) pa->grad[i] += g * pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < pb->data.size(); ++i) pb->grad[i] += g * pa->data[i];
    }
  });
}

Tensor stack_rows(const std::vector<Tensor>& vecs) {
  require(!vecs.empty(), "stack_rows", "no vectors given");
  const std::int64_t d = vecs[0].size();
  for (const auto& v : vecs)
    require(v.rank() == 1 && v.size() == d, "stack_rows", "vectors must share length");
  const std::int64_t b = static_cast<std::int64_t>(vecs.size());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(b * d));
  std::vector<TensorNode*> nodes;
  for (const auto& v : vecs) {
    out.insert(out.end(), v.data().begin(), v.data().end());
    nodes.push_back(v.node());
  }
  return make_op({b, d}, std::move(out), vecs,
                 [nodes = std::move(nodes), d](TensorNode& self) {
                   for (std::size_t k = 0; k < nodes.size(); ++k) {
                     if (!nodes[k]->requires_grad) continue;
                     nodes[k]->ensure_grad();
                     for (std::int64_t i = 0; i < d; ++i)
                       nodes[k]->grad[i] += self.grad[k * static_cast<std::size_t>(d) + i];
                   }
                 });
}

Tensor matrix_from_scalars(std::int64_t rows, std::int64_t cols,
                           const std::vector<Tensor>& scalars) {
  require(static_cast<std::int64_t>(scalars.size()) == rows * cols, "matrix_from_scalars",
          "need rows*cols scalars");
  std::vector<double> out(scalars.size());
  std::vector<TensorNode*> nodes(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    require(scalars[i].size() == 1, "matrix_from_scalars", "entries must be scalars");
    out[i] = scalars[i].data()[0];
    nodes[i] = scalars[i].node();
  }
  return make_op({rows, cols}, std::move(out), scalars,
                 [nodes = std::move(nodes)](TensorNode& self) {
                   for (std::size_t i = 0; i < nodes.size(); ++i) {
                     if (!nodes[i]->requires_grad) continue;
                     nodes[i]->ensure_grad();
                     nodes[i]->grad[0] += self.grad[i];
                   }
                 });
}

// ---------------------------------------------------------------------------
// Reverse sweep

void backward(const Tensor& out) {
  if (out.size() != 1) throw std::invalid_argument("backward: output must be a scalar");
  TensorNode* root = out.node();
  if (!root->requires_grad) return;
  ++g_visit_epoch;
  std::vector<TensorNode*> order;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  root->visit_epoch = g_visit_epoch;
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      TensorNode* p = n->parents[i].get();
      ++i;
      if (p->requires_grad && p->visit_epoch != g_visit_epoch) {
        p->visit_epoch = g_visit_epoch;
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
}

std::vector<std::vector<double>> grad(const Tensor& out, std::span<const Tensor> params) {
  if (out.size() != 1) throw std::invalid_argument("grad: output must be a scalar");
  for (const auto& p : params) p.zero_grad();
  backward(out);
  std::vector<std::vector<double>> gs;
  gs.reserve(params.size());
  for (const auto& p : params) gs.emplace_back(p.node()->grad);
  return gs;
}

}  // namespace ctfr
