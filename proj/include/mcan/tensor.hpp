// Dense tensors with a reverse-mode tape. Ops are rank-2 unless noted;
// every op validates shapes up front and rejects non-finite results.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mcan/common.hpp"

namespace mcan {

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until backward touches this node
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backprop;
  bool consumed = false;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.assign(impl->numel(), 0.0);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
  }

  static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), v);
    return t;
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data,
                     bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    if (impl->numel() != data.size())
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(impl->shape));
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
  }

  // m x n matrix from row-major values
  static Tensor matrix(std::size_t m, std::size_t n, std::vector<double> data,
                       bool requires_grad = false) {
    return from({m, n}, std::move(data), requires_grad);
  }

  static Tensor scalar(double v) { return from({1, 1}, {v}); }

  static Tensor row(std::vector<double> v) {
    std::size_t n = v.size();
    return from({1, n}, std::move(v));
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = 1.0;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->numel(); }

  std::size_t rows() const {
    require_rank2("rows");
    return impl_->shape[0];
  }
  std::size_t cols() const {
    require_rank2("cols");
    return impl_->shape[1];
  }

  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& mutable_data() { return impl_->data; }

  double at(std::size_t i, std::size_t j) const {
    require_rank2("at");
    return impl_->data[i * impl_->shape[1] + j];
  }
  double item() const {
    if (numel() != 1)
      throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (impl_->grad.empty()) throw ValueError("grad: no gradient populated");
    return impl_->grad;
  }
  double grad_at(std::size_t i, std::size_t j) const {
    require_rank2("grad_at");
    return grad()[i * impl_->shape[1] + j];
  }
  void zero_grad() { impl_->grad.clear(); }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

  // Value copy detached from any recorded computation.
  Tensor detached() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(impl);
  }

 private:
  void require_rank2(const char* who) const {
    if (impl_->shape.size() != 2)
      throw ShapeError(std::string(who) + ": expected rank-2 tensor, got shape " +
                       shape_str(impl_->shape));
  }
  std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string(op) + ": produced non-finite value");
  }

inline void check_input_finite(const Tensor& t, const char* op) {
  for (double x : t.data())
    if (!std::isfinite(x))
      throw NumericError(std::string(op) + ": non-finite input");
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

inline std::vector<double>& ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.numel(), 0.0);
  return t.grad;
}

inline Tensor make_op(std::vector<std::size_t> shape, std::vector<double> data, const char* op,
                      std::vector<std::shared_ptr<TensorImpl>> parents,
                      std::function<void(TensorImpl&)> backprop) {
  check_finite(data, op);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (impl->numel() != impl->data.size())
    throw ShapeError(std::string(op) + ": internal shape/data mismatch");
  bool needs = false;
  for (const auto& p : parents)
    if (p->requires_grad) needs = true;
  impl->requires_grad = needs;
  if (needs) {
    impl->parents = std::move(parents);
    impl->backprop = std::move(backprop);
  }
  return Tensor(impl);
}

}  // namespace detail

// ---- elementwise ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  auto pa = a.impl(), pb = b.impl();
  return detail::make_op(a.shape(), std::move(out), "add", {pa, pb}, [pa, pb](TensorImpl& self) {
    if (pa->requires_grad) {
      auto& g = detail::ensure_grad(*pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = detail::ensure_grad(*pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  auto pa = a.impl(), pb = b.impl();
  return detail::make_op(a.shape(), std::move(out), "sub", {pa, pb}, [pa, pb](TensorImpl& self) {
    if (pa->requires_grad) {
      auto& g = detail::ensure_grad(*pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = detail::ensure_grad(*pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  auto pa = a.impl(), pb = b.impl();
  return detail::make_op(a.shape(), std::move(out), "mul", {pa, pb}, [pa, pb](TensorImpl& self) {
    if (pa->requires_grad) {
      auto& g = detail::ensure_grad(*pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& g = detail::ensure_grad(*pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
  std::vector<double> out(a.data());
  for (auto& x : out) x *= c;
  auto pa = a.impl();
  return detail::make_op(a.shape(), std::move(out), "scale", {pa}, [pa, c](TensorImpl& self) {
    if (!pa->requires_grad) return;
    auto& g = detail::ensure_grad(*pa);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  });
}

// x (m x n) + b (1 x n), row-wise.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  detail::require_rank2(x, "add_rowvec");
  detail::require_rank2(b, "add_rowvec");
  if (b.rows() != 1 || b.cols() != x.cols())
    throw ShapeError("add_rowvec: bias " + shape_str(b.shape()) + " vs input " +
                     shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bd[j];
  auto px = x.impl(), pb = b.impl();
  return detail::make_op({m, n}, std::move(out), "add_rowvec", {px, pb},
                         [px, pb, m, n](TensorImpl& self) {
                           if (px->requires_grad) {
                             auto& g = detail::ensure_grad(*px);
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                           }
                           if (pb->requires_grad) {
                             auto& g = detail::ensure_grad(*pb);
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                           }
                         });
}

// ---- matrix ops ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  auto pa = a.impl(), pb = b.impl();
  return detail::make_op(
      {m, n}, std::move(out), "matmul", {pa, pb}, [pa, pb, m, k, n](TensorImpl& self) {
        const double* g = self.grad.data();
        if (pa->requires_grad) {
          // dA += G * B^T
          auto& ga = detail::ensure_grad(*pa);
          const double* bd = pb->data.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* grow = g + i * n;
              const double* brow = bd + p * n;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[i * k + p] += acc;
            }
        }
        if (pb->requires_grad) {
          // dB += A^T * G
          auto& gb = detail::ensure_grad(*pb);
          const double* ad = pa->data.data();
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t i = 0; i < m; ++i) {
              const double av = ad[i * k + p];
              if (av == 0.0) continue;
              const double* grow = g + i * n;
              double* grow_b = gb.data() + p * n;
              for (std::size_t j = 0; j < n; ++j) grow_b[j] += av * grow[j];
            }
        }
      });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank2(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xd[i * n + j];
  auto px = x.impl();
  return detail::make_op({n, m}, std::move(out), "transpose", {px}, [px, m, n](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = detail::ensure_grad(*px);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

// ---- nonlinearities ----

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.data());
  for (auto& v : out) v = 1.0 / (1.0 + std::exp(-v));
  auto px = x.impl();
  return detail::make_op(x.shape(), std::move(out), "sigmoid", {px}, [px](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = detail::ensure_grad(*px);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.data[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

inline Tensor tanh_act(const Tensor& x) {
  std::vector<double> out(x.data());
  for (auto& v : out) v = std::tanh(v);
  auto px = x.impl();
  return detail::make_op(x.shape(), std::move(out), "tanh", {px}, [px](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = detail::ensure_grad(*px);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.data[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

// ---- softmax ----

// Row-wise softmax over columns where key_mask[j] == 1; masked entries are exactly 0.
// Every row must see at least one unmasked column.
inline Tensor masked_softmax_rows(const Tensor& x, const Mask& key_mask) {
  detail::require_rank2(x, "masked_softmax_rows");
  detail::check_input_finite(x, "masked_softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (key_mask.size() != n)
    throw ShapeError("masked_softmax_rows: mask length " + std::to_string(key_mask.size()) +
                     " vs columns " + std::to_string(n));
  if (mask_count(key_mask) == 0)
    throw ValueError("masked_softmax_rows: all keys masked");
  std::vector<double> out(m * n, 0.0);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (key_mask[j]) mx = std::max(mx, xd[i * n + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (key_mask[j]) {
        const double e = std::exp(xd[i * n + j] - mx);
        out[i * n + j] = e;
        denom += e;
      }
    for (std::size_t j = 0; j < n; ++j)
      if (key_mask[j]) out[i * n + j] /= denom;
  }
  auto px = x.impl();
  Mask mask = key_mask;
  return detail::make_op(
      {m, n}, std::move(out), "masked_softmax_rows", {px},
      [px, m, n, mask = std::move(mask)](TensorImpl& self) {
        if (!px->requires_grad) return;
        auto& g = detail::ensure_grad(*px);
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j)
            if (mask[j]) dot += self.grad[i * n + j] * self.data[i * n + j];
          for (std::size_t j = 0; j < n; ++j)
            if (mask[j])
              g[i * n + j] += self.data[i * n + j] * (self.grad[i * n + j] - dot);
        }
      });
}

inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank2(x, "softmax_rows");
  return masked_softmax_rows(x, full_mask(x.cols()));
}

// ---- layer norm ----

// Per-row standardization followed by the affine gamma/beta. gamma and beta are 1 x d.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), d = x.cols();
  if (d < 1) throw ShapeError("layer_norm: zero-width input");
  if (gamma.rank() != 2 || gamma.rows() != 1 || gamma.cols() != d)
    throw ShapeError("layer_norm: gamma shape " + shape_str(gamma.shape()));
  if (beta.rank() != 2 || beta.rows() != 1 || beta.cols() != d)
    throw ShapeError("layer_norm: beta shape " + shape_str(beta.shape()));
  std::vector<double> out(m * d);
  auto xhat = std::make_shared<std::vector<double>>(m * d);
  auto inv_sigma = std::make_shared<std::vector<double>>(m);
  const auto& xd = x.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xd[i * d + j];
    mean /= double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xd[i * d + j] - mean;
      var += c * c;
    }
    var /= double(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (xd[i * d + j] - mean) * is;
      (*xhat)[i * d + j] = xh;
      out[i * d + j] = xh * gd[j] + bd[j];
    }
  }
  auto px = x.impl(), pg = gamma.impl(), pb = beta.impl();
  return detail::make_op(
      {m, d}, std::move(out), "layer_norm", {px, pg, pb},
      [px, pg, pb, m, d, xhat, inv_sigma](TensorImpl& self) {
        const auto& xh = *xhat;
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = self.grad.data() + i * d;
          if (pg->requires_grad) {
            auto& gg = detail::ensure_grad(*pg);
            for (std::size_t j = 0; j < d; ++j) gg[j] += grow[j] * xh[i * d + j];
          }
          if (pb->requires_grad) {
            auto& gb = detail::ensure_grad(*pb);
            for (std::size_t j = 0; j < d; ++j) gb[j] += grow[j];
          }
          if (px->requires_grad) {
            auto& gx = detail::ensure_grad(*px);
            double mean_gy = 0.0, mean_gy_xh = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gy = grow[j] * pg->data[j];
              mean_gy += gy;
              mean_gy_xh += gy * xh[i * d + j];
            }
            mean_gy /= double(d);
            mean_gy_xh /= double(d);
            const double is = (*inv_sigma)[i];
            for (std::size_t j = 0; j < d; ++j) {
              const double gy = grow[j] * pg->data[j];
              gx[i * d + j] += is * (gy - mean_gy - xh[i * d + j] * mean_gy_xh);
            }
          }
        }
      });
}

// ---- slicing / concatenation ----

inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (c0 >= c1 || c1 > n)
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") on width " + std::to_string(n));
  const std::size_t w = c1 - c0;
  std::vector<double> out(m * w);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xd[i * n + c0 + j];
  auto px = x.impl();
  return detail::make_op({m, w}, std::move(out), "slice_cols", {px},
                         [px, m, n, c0, w](TensorImpl& self) {
                           if (!px->requires_grad) return;
                           auto& g = detail::ensure_grad(*px);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < w; ++j)
                               g[i * n + c0 + j] += self.grad[i * w + j];
                         });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_rows");
    if (p.cols() != n) throw ShapeError("concat_rows: width mismatch");
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<std::size_t> row_counts;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    impls.push_back(p.impl());
    row_counts.push_back(p.rows());
  }
  auto parents = impls;
  return detail::make_op({m, n}, std::move(out), "concat_rows", std::move(parents),
                         [impls, row_counts, n](TensorImpl& self) {
                           std::size_t off = 0;
                           for (std::size_t t = 0; t < impls.size(); ++t) {
                             const std::size_t rows = row_counts[t];
                             if (impls[t]->requires_grad) {
                               auto& g = detail::ensure_grad(*impls[t]);
                               for (std::size_t i = 0; i < rows * n; ++i)
                                 g[i] += self.grad[off + i];
                             }
                             off += rows * n;
                           }
                         });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row-count mismatch");
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * n + off + j] = p.data()[i * w + j];
    impls.push_back(p.impl());
    widths.push_back(w);
    off += w;
  }
  auto parents = impls;
  return detail::make_op({m, n}, std::move(out), "concat_cols", std::move(parents),
                         [impls, widths, m, n](TensorImpl& self) {
                           std::size_t off = 0;
                           for (std::size_t t = 0; t < impls.size(); ++t) {
                             const std::size_t w = widths[t];
                             if (impls[t]->requires_grad) {
                               auto& g = detail::ensure_grad(*impls[t]);
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < w; ++j)
                                   g[i * w + j] += self.grad[i * n + off + j];
                             }
                             off += w;
                           }
                         });
}

inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  detail::require_rank2(x, "gather_rows");
  const std::size_t n = x.cols();
  for (auto i : idx)
    if (i >= x.rows()) throw ValueError("gather_rows: index out of range");
  std::vector<double> out(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x.data()[idx[r] * n + j];
  auto px = x.impl();
  auto ids = idx;
  return detail::make_op({idx.size(), n}, std::move(out), "gather_rows", {px},
                         [px, ids = std::move(ids), n](TensorImpl& self) {
                           if (!px->requires_grad) return;
                           auto& g = detail::ensure_grad(*px);
                           for (std::size_t r = 0; r < ids.size(); ++r)
                             for (std::size_t j = 0; j < n; ++j)
                               g[ids[r] * n + j] += self.grad[r * n + j];
                         });
}

// Rows of x placed at idx[r] in an otherwise-zero (total_rows x n) matrix.
inline Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& idx,
                           std::size_t total_rows) {
  detail::require_rank2(x, "scatter_rows");
  const std::size_t n = x.cols();
  if (idx.size() != x.rows()) throw ShapeError("scatter_rows: index count vs rows");
  for (auto i : idx)
    if (i >= total_rows) throw ValueError("scatter_rows: index out of range");
  std::vector<double> out(total_rows * n, 0.0);
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t j = 0; j < n; ++j) out[idx[r] * n + j] = x.data()[r * n + j];
  auto px = x.impl();
  auto ids = idx;
  return detail::make_op({total_rows, n}, std::move(out), "scatter_rows", {px},
                         [px, ids = std::move(ids), n](TensorImpl& self) {
                           if (!px->requires_grad) return;
                           auto& g = detail::ensure_grad(*px);
                           for (std::size_t r = 0; r < ids.size(); ++r)
                             for (std::size_t j = 0; j < n; ++j)
                               g[r * n + j] += self.grad[ids[r] * n + j];
                         });
}

// Zero out rows whose mask entry is 0.
inline Tensor mask_rows(const Tensor& x, const Mask& mask) {
  detail::require_rank2(x, "mask_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (mask.size() != m) throw ShapeError("mask_rows: mask length vs rows");
  std::vector<double> out(x.data());
  for (std::size_t i = 0; i < m; ++i)
    if (!mask[i])
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = 0.0;
  auto px = x.impl();
  Mask mk = mask;
  return detail::make_op({m, n}, std::move(out), "mask_rows", {px},
                         [px, mk = std::move(mk), n](TensorImpl& self) {
                           if (!px->requires_grad) return;
                           auto& g = detail::ensure_grad(*px);
                           for (std::size_t i = 0; i < mk.size(); ++i)
                             if (mk[i])
                               for (std::size_t j = 0; j < n; ++j)
                                 g[i * n + j] += self.grad[i * n + j];
                         });
}

// Mean over valid rows -> 1 x d.
inline Tensor masked_mean_rows(const Tensor& x, const Mask& mask) {
  detail::require_rank2(x, "masked_mean_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (mask.size() != m) throw ShapeError("masked_mean_rows: mask length vs rows");
  const std::size_t cnt = mask_count(mask);
  if (cnt == 0) throw ValueError("masked_mean_rows: no valid rows");
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    if (mask[i])
      for (std::size_t j = 0; j < n; ++j) out[j] += x.data()[i * n + j];
  for (auto& v : out) v /= double(cnt);
  auto px = x.impl();
  Mask mk = mask;
  return detail::make_op({1, n}, std::move(out), "masked_mean_rows", {px},
                         [px, mk = std::move(mk), n, cnt](TensorImpl& self) {
                           if (!px->requires_grad) return;
                           auto& g = detail::ensure_grad(*px);
                           const double inv = 1.0 / double(cnt);
                           for (std::size_t i = 0; i < mk.size(); ++i)
                             if (mk[i])
                               for (std::size_t j = 0; j < n; ++j)
                                 g[i * n + j] += self.grad[j] * inv;
                         });
}

// ---- reductions ----

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto px = x.impl();
  return detail::make_op({1, 1}, {s}, "sum_all", {px}, [px](TensorImpl& self) {
    if (!px->requires_grad) return;
    auto& g = detail::ensure_grad(*px);
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / double(x.numel())); }

// a, b are 1 x d rows; result 1 x 1.
inline Tensor dot_rows(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "dot_rows");
  detail::require_rank2(b, "dot_rows");
  if (a.rows() != 1 || b.rows() != 1 || a.cols() != b.cols())
    throw ShapeError("dot_rows: expected matching 1 x d rows");
  return matmul(a, transpose(b));
}

// ---- reverse pass ----

inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  auto root = loss.impl();
  if (root->consumed) throw ValueError("backward: graph already consumed");
  // Iterative post-order DFS; leaves carry no backprop closure.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (TensorImpl* n : order)
    if (n->backprop && n->consumed)
      throw ValueError("backward: graph already consumed");
  detail::ensure_grad(*root)[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* n = *it;
    if (n->backprop) {
      if (n->grad.empty()) n->grad.assign(n->numel(), 0.0);
      n->backprop(*n);
      n->consumed = true;
    }
  }
  root->consumed = true;
}

}  // namespace mcan
