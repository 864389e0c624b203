#pragma once

// Minimal reverse-mode automatic differentiation engine over dense row-major
// double tensors. The op set is closed: matmul, softmax, layer norm,
// elementwise math, broadcast over rows, gather/scatter, concat/slice and
// reductions. That is everything the transformer and the losses need, and
// every op has an analytic adjoint that is validated against central finite
// differences in the test suite.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace q4d {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

namespace detail {
inline int& nograd_depth() {
  thread_local int depth = 0;
  return depth;
}
}  // namespace detail

// RAII guard disabling tape recording (inference paths).
struct NoGradGuard {
  NoGradGuard() { ++detail::nograd_depth(); }
  ~NoGradGuard() { --detail::nograd_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::nograd_depth() == 0; }

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;  // pushes adjoints to parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor constant(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("tensor: data size does not match shape " +
                                  shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(n);
  }

  static Tensor zeros(Shape shape) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return constant(std::move(shape), std::move(d));
  }

  static Tensor full(Shape shape, double v) {
    std::vector<double> d(shape_numel(shape), v);
    return constant(std::move(shape), std::move(d));
  }

  static Tensor scalar(double v) { return constant({1}, {v}); }

  // Trainable leaf.
  static Tensor param(Shape shape, std::vector<double> data) {
    Tensor t = constant(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
  std::int64_t dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const {
    if (node_->value.size() != 1)
      throw std::logic_error("item() on non-scalar tensor");
    return node_->value[0];
  }

  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool need = false;
  if (grad_enabled()) {
    for (const auto& p : parents) need = need || p.node()->requires_grad;
  }
  if (need) {
    n->requires_grad = true;
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Tensor(n);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> v(a.value());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.value()[i];
  return detail::make_op(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    for (auto& p : n.parents) {
      p->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> v(a.value());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b.value()[i];
  return detail::make_op(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    n.parents[0]->ensure_grad();
    n.parents[1]->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      n.parents[0]->grad[i] += n.grad[i];
      n.parents[1]->grad[i] -= n.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a.value());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.value()[i];
  return detail::make_op(a.shape(), std::move(v), {a, b}, [](TensorNode& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      pa.grad[i] += n.grad[i] * pb.value[i];
      pb.grad[i] += n.grad[i] * pa.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.value());
  for (auto& x : v) x *= c;
  return detail::make_op(a.shape(), std::move(v), {a}, [c](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += c * n.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.value());
  for (auto& x : v) x += c;
  return detail::make_op(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
  });
}

// Generic differentiable unary op: f(x) and f'(x) evaluated at the input.
inline Tensor unary(const Tensor& a, const std::function<double(double)>& f,
                    const std::function<double(double)>& df) {
  std::vector<double> v(a.value());
  for (auto& x : v) x = f(x);
  return detail::make_op(a.shape(), std::move(v), {a}, [df](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      p.grad[i] += n.grad[i] * df(p.value[i]);
  });
}

inline Tensor exp_t(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); },
      [](double x) { return std::exp(x); });
}

inline Tensor neg_exp_t(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(-x); },
      [](double x) { return -std::exp(-x); });
}

inline Tensor abs_t(const Tensor& a) {
  // Subgradient 0 at the kink.
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

inline Tensor sigmoid_t(const Tensor& a) {
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  return unary(a, sig, [sig](double x) {
    double s = sig(x);
    return s * (1.0 - s);
  });
}

inline Tensor gelu_t(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x) {
        double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        return phi + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

// acos with input clamped to [-1+eps, 1-eps] in the derivative so exact
// endpoints still evaluate but never produce infinite adjoints.
inline Tensor acos_t(const Tensor& a) {
  return unary(
      a,
      [](double x) { return std::acos(std::clamp(x, -1.0, 1.0)); },
      [](double x) {
        double c = std::clamp(x, -1.0 + 1e-12, 1.0 - 1e-12);
        return -1.0 / std::sqrt(1.0 - c * c);
      });
}

// ---------------------------------------------------------------------------
// Row-broadcast ops: x has shape (R, C), v has C elements.

inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  std::int64_t c = v.numel();
  if (x.numel() % c != 0)
    throw std::invalid_argument("add_rowvec: incompatible sizes");
  std::vector<double> out(x.value());
  std::int64_t rows = x.numel() / c;
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < c; ++j) out[r * c + j] += v.value()[j];
  return detail::make_op(x.shape(), std::move(out), {x, v},
                         [c, rows](TensorNode& n) {
                           auto& px = *n.parents[0];
                           auto& pv = *n.parents[1];
                           px.ensure_grad();
                           pv.ensure_grad();
                           for (std::int64_t r = 0; r < rows; ++r)
                             for (std::int64_t j = 0; j < c; ++j) {
                               double g = n.grad[r * c + j];
                               px.grad[r * c + j] += g;
                               pv.grad[j] += g;
                             }
                         });
}

inline Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  std::int64_t c = v.numel();
  if (x.numel() % c != 0)
    throw std::invalid_argument("mul_rowvec: incompatible sizes");
  std::vector<double> out(x.value());
  std::int64_t rows = x.numel() / c;
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < c; ++j) out[r * c + j] *= v.value()[j];
  return detail::make_op(x.shape(), std::move(out), {x, v},
                         [c, rows](TensorNode& n) {
                           auto& px = *n.parents[0];
                           auto& pv = *n.parents[1];
                           px.ensure_grad();
                           pv.ensure_grad();
                           for (std::int64_t r = 0; r < rows; ++r)
                             for (std::int64_t j = 0; j < c; ++j) {
                               double g = n.grad[r * c + j];
                               px.grad[r * c + j] += g * pv.value[j];
                               pv.grad[j] += g * px.value[r * c + j];
                             }
                         });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: expects (m,k)x(k,n), got " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  {
    detail::CMapRM A(a.value().data(), m, k), B(b.value().data(), k, n);
    detail::MapRM C(out.data(), m, n);
    C.noalias() = A * B;
  }
  return detail::make_op({m, n}, std::move(out), {a, b},
                         [m, k, n](TensorNode& node) {
                           auto& pa = *node.parents[0];
                           auto& pb = *node.parents[1];
                           pa.ensure_grad();
                           pb.ensure_grad();
                           detail::CMapRM G(node.grad.data(), m, n);
                           detail::CMapRM A(pa.value.data(), m, k);
                           detail::CMapRM B(pb.value.data(), k, n);
                           detail::MapRM GA(pa.grad.data(), m, k);
                           detail::MapRM GB(pb.grad.data(), k, n);
                           GA.noalias() += G * B.transpose();
                           GB.noalias() += A.transpose() * G;
                         });
}

inline Tensor transpose2d(const Tensor& a) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("transpose2d: expects rank-2");
  std::int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.value().size());
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  return detail::make_op({n, m}, std::move(out), {a}, [m, n](TensorNode& node) {
    auto& p = *node.parents[0];
    p.ensure_grad();
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        p.grad[i * n + j] += node.grad[j * m + i];
  });
}

// Reinterpret shape; element order unchanged.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: numel mismatch");
  std::vector<double> v(a.value());
  return detail::make_op(std::move(shape), std::move(v), {a},
                         [](TensorNode& n) {
                           auto& p = *n.parents[0];
                           p.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                             p.grad[i] += n.grad[i];
                         });
}

// out[i] = a.flat[idx[i]]; adjoint is scatter-add. Covers slicing, head
// split/merge and patch-grid reassembly.
inline Tensor gather(const Tensor& a, std::shared_ptr<std::vector<std::int64_t>> idx,
                     Shape out_shape) {
  if (shape_numel(out_shape) != static_cast<std::int64_t>(idx->size()))
    throw std::invalid_argument("gather: index count does not match out shape");
  std::vector<double> out(idx->size());
  for (std::size_t i = 0; i < idx->size(); ++i) {
    std::int64_t j = (*idx)[i];
    if (j < 0 || j >= a.numel())
      throw std::out_of_range("gather: index out of range");
    out[i] = a.value()[static_cast<std::size_t>(j)];
  }
  return detail::make_op(std::move(out_shape), std::move(out), {a},
                         [idx](TensorNode& n) {
                           auto& p = *n.parents[0];
                           p.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                             p.grad[static_cast<std::size_t>((*idx)[i])] +=
                                 n.grad[i];
                         });
}

inline Tensor gather(const Tensor& a, std::vector<std::int64_t> idx,
                     Shape out_shape) {
  return gather(a, std::make_shared<std::vector<std::int64_t>>(std::move(idx)),
                std::move(out_shape));
}

// Rows [begin, end) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end) {
  if (a.shape().size() != 2 || begin < 0 || end > a.dim(0) || begin > end)
    throw std::invalid_argument("slice_rows: bad range");
  std::int64_t c = a.dim(1);
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>((end - begin) * c));
  for (std::int64_t i = begin * c; i < end * c; ++i) idx->push_back(i);
  return gather(a, idx, {end - begin, c});
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  std::int64_t c = parts[0].dim(1), rows = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.dim(1) != c)
      throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows * c));
  for (const auto& p : parts)
    out.insert(out.end(), p.value().begin(), p.value().end());
  std::vector<std::int64_t> offsets;
  offsets.reserve(parts.size());
  std::int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    off += p.numel();
  }
  return detail::make_op({rows, c}, std::move(out), parts,
                         [offsets](TensorNode& n) {
                           for (std::size_t k = 0; k < n.parents.size(); ++k) {
                             auto& p = *n.parents[k];
                             p.ensure_grad();
                             std::int64_t o = offsets[k];
                             for (std::size_t i = 0; i < p.value.size(); ++i)
                               p.grad[i] += n.grad[static_cast<std::size_t>(o) + i];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Normalization and attention primitives

// Row-wise softmax over the last dimension, with an optional additive mask
// (same shape as x, typically 0 / -1e30 for causal masking).
inline Tensor softmax_rows(const Tensor& x,
                           const std::vector<double>* mask = nullptr) {
  std::int64_t c = x.shape().back();
  std::int64_t rows = x.numel() / c;
  if (mask && static_cast<std::int64_t>(mask->size()) != x.numel())
    throw std::invalid_argument("softmax_rows: mask size mismatch");
  std::vector<double> out(x.value());
  if (mask)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*mask)[i];
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * c;
    double mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::int64_t j = 0; j < c; ++j) row[j] /= sum;
  }
  return detail::make_op(x.shape(), std::move(out), {x},
                         [c, rows](TensorNode& n) {
                           auto& p = *n.parents[0];
                           p.ensure_grad();
                           for (std::int64_t r = 0; r < rows; ++r) {
                             const double* y = n.value.data() + r * c;
                             const double* g = n.grad.data() + r * c;
                             double dot = 0.0;
                             for (std::int64_t j = 0; j < c; ++j)
                               dot += y[j] * g[j];
                             double* pg = p.grad.data() + r * c;
                             for (std::int64_t j = 0; j < c; ++j)
                               pg[j] += y[j] * (g[j] - dot);
                           }
                         });
}

// Row-wise layer normalization over the last dimension with learned affine.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-6) {
  std::int64_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c)
    throw std::invalid_argument("layer_norm: affine size mismatch");
  std::int64_t rows = x.numel() / c;
  std::vector<double> out(x.value().size());
  auto stats = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(rows * 2));  // (mean, rstd) per row
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = x.value().data() + r * c;
    double mean = 0.0;
    for (std::int64_t j = 0; j < c; ++j) mean += in[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      double d = in[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double rstd = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * r] = mean;
    (*stats)[2 * r + 1] = rstd;
    double* o = out.data() + r * c;
    for (std::int64_t j = 0; j < c; ++j)
      o[j] = (in[j] - mean) * rstd * gamma.value()[j] + beta.value()[j];
  }
  return detail::make_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [c, rows, stats](TensorNode& n) {
        auto& px = *n.parents[0];
        auto& pg = *n.parents[1];
        auto& pb = *n.parents[2];
        px.ensure_grad();
        pg.ensure_grad();
        pb.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          double mean = (*stats)[2 * r], rstd = (*stats)[2 * r + 1];
          const double* in = px.value.data() + r * c;
          const double* g = n.grad.data() + r * c;
          // xhat_j = (x_j - mean) * rstd
          double sum_g_gamma = 0.0, sum_g_gamma_xhat = 0.0;
          for (std::int64_t j = 0; j < c; ++j) {
            double xhat = (in[j] - mean) * rstd;
            double gg = g[j] * pg.value[j];
            sum_g_gamma += gg;
            sum_g_gamma_xhat += gg * xhat;
            pg.grad[j] += g[j] * xhat;
            pb.grad[j] += g[j];
          }
          double inv_c = 1.0 / static_cast<double>(c);
          double* gx = px.grad.data() + r * c;
          for (std::int64_t j = 0; j < c; ++j) {
            double xhat = (in[j] - mean) * rstd;
            double gg = g[j] * pg.value[j];
            gx[j] += rstd * (gg - inv_c * sum_g_gamma -
                             xhat * inv_c * sum_g_gamma_xhat);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.value()) s += x;
  return detail::make_op({1}, {s}, {a}, [](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += n.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// Sum of x * w for a constant weight vector (masked reductions).
inline Tensor weighted_sum(const Tensor& a,
                           std::shared_ptr<std::vector<double>> w) {
  if (static_cast<std::int64_t>(w->size()) != a.numel())
    throw std::invalid_argument("weighted_sum: weight size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w->size(); ++i) s += a.value()[i] * (*w)[i];
  return detail::make_op({1}, {s}, {a}, [w](TensorNode& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < w->size(); ++i)
      p.grad[i] += n.grad[0] * (*w)[i];
  });
}

// ---------------------------------------------------------------------------
// Backward pass

inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (!loss.node()->requires_grad) return;
  // Topological order by DFS.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
}

}  // namespace q4d
