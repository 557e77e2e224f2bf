// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gtex/common.hpp"

namespace gtex::ad {

using gtex::Error;

namespace detail {

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

}  // namespace detail

struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::string name;
};

/// Dense row-major tensor of 64-bit floats with value semantics over shared
/// storage. Rank 1 tensors act as row vectors wherever a 2-D view is needed.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> shape, std::vector<double> value,
         bool requires_grad = false, std::string name = "") {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    if (n != value.size()) {
      throw Error("tensor: shape " + detail::shape_str(shape) + " does not hold " +
                  std::to_string(value.size()) + " values");
    }
    d_ = std::make_shared<TensorData>();
    d_->shape = std::move(shape);
    d_->value = std::move(value);
    d_->requires_grad = requires_grad;
    d_->name = std::move(name);
    if (requires_grad) d_->grad.assign(d_->value.size(), 0.0);
  }

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false,
                      std::string name = "") {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad,
                  std::move(name));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<std::size_t>& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->value.size(); }

  // 2-D view: rank-1 tensors are rows.
  std::size_t rows() const { return rank() <= 1 ? 1 : d_->shape[0]; }
  std::size_t cols() const {
    return rank() == 0 ? 1 : (rank() == 1 ? d_->shape[0] : d_->shape[1]);
  }

  std::span<double> value() { return d_->value; }
  std::span<const double> value() const { return d_->value; }
  double item() const {
    if (size() != 1) throw Error("item(): tensor has " + std::to_string(size()) + " elements");
    return d_->value[0];
  }
  double& at(std::size_t i, std::size_t j) { return d_->value[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return d_->value[i * cols() + j]; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) {
    d_->requires_grad = rg;
    if (rg && d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
  }

  bool has_grad() const { return !d_->grad.empty(); }
  void ensure_grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
  }
  std::span<double> grad() { return d_->grad; }
  std::span<const double> grad() const { return d_->grad; }
  void zero_grad() { std::fill(d_->grad.begin(), d_->grad.end(), 0.0); }

  const std::string& name() const { return d_->name; }
  void set_name(std::string n) { d_->name = std::move(n); }

  bool same_storage(const Tensor& o) const { return d_ == o.d_; }
  TensorData* raw() const { return d_.get(); }

 private:
  std::shared_ptr<TensorData> d_;
};

/// One recorded operation: input handles, output handle, a forward rule that
/// recomputes the output value from the inputs, and the local backward rule.
struct TapeNode {
  const char* op = "";
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void()> forward;
  std::function<void()> backward;
};

/// Append-only record of one forward computation. Inputs of every node were
/// created before the node, so the sequence is already topologically ordered;
/// backward walks it once in reverse.
class Tape {
 public:
  void record(TapeNode node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }
  const TapeNode& node(std::size_t i) const { return nodes_[i]; }

  /// Recompute every recorded forward rule in order, in place.
  void replay() {
    for (auto& n : nodes_) n.forward();
  }

  friend void backward(const Tensor& root, Tape& tape);

 private:
  std::vector<TapeNode> nodes_;
};

/// Reverse-mode sweep from a scalar root. Seeds d root/d root = 1, then visits
/// nodes newest-first exactly once, accumulating into input gradients. Tensors
/// on the tape that do not feed the root keep zero gradients.
inline void backward(const Tensor& root, Tape& tape) {
  if (root.size() != 1) {
    throw Error("backward: root must be scalar, got shape " +
                detail::shape_str(root.shape()));
  }
  for (auto& n : tape.nodes_) {
    for (auto& in : n.inputs) in.ensure_grad();
    n.output.ensure_grad();
  }
  Tensor r = root;
  r.ensure_grad();
  r.grad()[0] = 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) it->backward();
}

// ---------------------------------------------------------------------------
// Raw matmul kernels (row-major). `acc` accumulates into dst instead of
// overwriting; the backward rules rely on accumulation.

namespace detail {

inline void mm_nn(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool acc) {
  if (!acc) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = ai[l];
      const double* bl = b + l * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

// c[m x n] (+)= a[m x k] * b[n x k]^T
inline void mm_nt(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool acc) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += ai[l] * bj[l];
      if (acc) ci[j] += s; else ci[j] = s;
    }
  }
}

// c[m x n] (+)= a[k x m]^T * b[k x n]
inline void mm_tn(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool acc) {
  if (!acc) std::fill(c, c + m * n, 0.0);
  for (std::size_t l = 0; l < k; ++l) {
    const double* al = a + l * m;
    const double* bl = b + l * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = al[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

inline bool any_requires_grad(std::initializer_list<Tensor> ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

inline void maybe_record(Tape* tape, TapeNode node) {
  if (tape) tape->record(std::move(node));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations. Every op is pure in its inputs; when `tape` is non-null and an
// input participates in differentiation, the op is recorded. Passing a null
// tape gives plain (reentrant) forward evaluation.

inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw Error("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                detail::shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n});
  out.set_requires_grad(detail::any_requires_grad({a, b}));
  detail::mm_nn(a.value().data(), b.value().data(), out.value().data(), m, k, n, false);
  if (out.requires_grad()) {
    Tensor av = a, bv = b, ov = out;
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    detail::maybe_record(tape, TapeNode{
        "matmul",
        {a, b},
        out,
        [av, bv, ov, m, k, n]() mutable {
          detail::mm_nn(av.value().data(), bv.value().data(), ov.value().data(), m, k, n,
                        false);
        },
        [av, bv, ov, m, k, n, need_a, need_b]() mutable {
          // dA = dC * B^T, dB = A^T * dC
          if (need_a)
            detail::mm_nt(ov.grad().data(), bv.value().data(), av.grad().data(), m, n, k,
                          true);
          if (need_b)
            detail::mm_tn(av.value().data(), ov.grad().data(), bv.grad().data(), k, m, n,
                          true);
        }});
  }
  return out;
}

/// Fused affine map: x[m x k] * W[k x n] + b[n] in one node.
inline Tensor linear(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[0]) {
    throw Error("linear: incompatible shapes " + detail::shape_str(x.shape()) + " and " +
                detail::shape_str(w.shape()));
  }
  const std::size_t m = x.shape()[0], k = x.shape()[1], n = w.shape()[1];
  if (b.size() != n) {
    throw Error("linear: bias shape " + detail::shape_str(b.shape()) + " does not match");
  }
  Tensor out = Tensor::zeros({m, n});
  out.set_requires_grad(detail::any_requires_grad({x, w, b}));
  auto run = [m, k, n](const Tensor& xv, const Tensor& wv, const Tensor& bv, Tensor& ov) {
    double* op = ov.value().data();
    const double* bp = bv.value().data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bp, bp + n, op + i * n);
    detail::mm_nn(xv.value().data(), wv.value().data(), op, m, k, n, true);
  };
  run(x, w, b, out);
  if (out.requires_grad()) {
    Tensor xv = x, wv = w, bv = b, ov = out;
    const bool need_x = x.requires_grad();
    detail::maybe_record(tape, TapeNode{
        "linear",
        {x, w, b},
        out,
        [xv, wv, bv, ov, run]() mutable { run(xv, wv, bv, ov); },
        [xv, wv, bv, ov, m, k, n, need_x, need_w = w.requires_grad(),
         need_b = b.requires_grad()]() mutable {
          const double* g = ov.grad().data();
          if (need_x)
            detail::mm_nt(g, wv.value().data(), xv.grad().data(), m, n, k, true);
          if (need_w)
            detail::mm_tn(xv.value().data(), g, wv.grad().data(), k, m, n, true);
          if (need_b) {
            double* gb = bv.grad().data();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
          }
        }});
  }
  return out;
}

namespace detail {

// Elementwise binary op with exact-shape or row-broadcast `b`.
template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_ew(Tape* tape, const char* opname, const Tensor& a, const Tensor& b,
                 Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
  const bool exact = a.shape() == b.shape();
  const bool rowbc = !exact && b.rows() == 1 && b.cols() == a.cols();
  if (!exact && !rowbc) {
    throw Error(std::string(opname) + ": incompatible shapes " + shape_str(a.shape()) +
                " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros(a.shape());
  out.set_requires_grad(any_requires_grad({a, b}));
  auto run = [m, n, exact, fwd](const Tensor& x, const Tensor& y, Tensor& o) {
    const double* xp = x.value().data();
    const double* yp = y.value().data();
    double* op = o.value().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        op[i * n + j] = fwd(xp[i * n + j], yp[exact ? i * n + j : j]);
  };
  run(a, b, out);
  if (out.requires_grad()) {
    Tensor av = a, bv = b, ov = out;
    maybe_record(tape, TapeNode{
        opname,
        {a, b},
        out,
        [av, bv, ov, run]() mutable { run(av, bv, ov); },
        [av, bv, ov, m, n, exact, bwd_a, bwd_b, need_a = a.requires_grad(),
         need_b = b.requires_grad()]() mutable {
          const double* xp = av.value().data();
          const double* yp = bv.value().data();
          const double* g = ov.grad().data();
          double* ga = av.grad().data();
          double* gb = bv.grad().data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t ij = i * n + j;
              const std::size_t bj = exact ? ij : j;
              if (need_a) ga[ij] += g[ij] * bwd_a(xp[ij], yp[bj]);
              if (need_b) gb[bj] += g[ij] * bwd_b(xp[ij], yp[bj]);
            }
          }
        }});
  }
  return out;
}

// Elementwise unary op; dfn receives (x, y) so rules may reuse the output.
template <typename Fwd, typename Dfn>
Tensor unary_ew(Tape* tape, const char* opname, const Tensor& a, Fwd fwd, Dfn dfn) {
  Tensor out = Tensor::zeros(a.shape());
  out.set_requires_grad(a.requires_grad());
  auto run = [fwd](const Tensor& x, Tensor& o) {
    const double* xp = x.value().data();
    double* op = o.value().data();
    for (std::size_t i = 0; i < x.size(); ++i) op[i] = fwd(xp[i]);
  };
  run(a, out);
  if (out.requires_grad() && a.requires_grad()) {
    Tensor av = a, ov = out;
    maybe_record(tape, TapeNode{
        opname,
        {a},
        out,
        [av, ov, run]() mutable { run(av, ov); },
        [av, ov, dfn]() mutable {
          const double* xp = av.value().data();
          const double* yp = ov.value().data();
          const double* g = ov.grad().data();
          double* ga = av.grad().data();
          for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[i] * dfn(xp[i], yp[i]);
        }});
  }
  return out;
}

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor add(Tape* t, const Tensor& a, const Tensor& b) {
  return detail::binary_ew(t, "add", a, b, [](double x, double y) { return x + y; },
                           [](double, double) { return 1.0; },
                           [](double, double) { return 1.0; });
}

inline Tensor sub(Tape* t, const Tensor& a, const Tensor& b) {
  return detail::binary_ew(t, "sub", a, b, [](double x, double y) { return x - y; },
                           [](double, double) { return 1.0; },
                           [](double, double) { return -1.0; });
}

inline Tensor mul(Tape* t, const Tensor& a, const Tensor& b) {
  return detail::binary_ew(t, "mul", a, b, [](double x, double y) { return x * y; },
                           [](double, double y) { return y; },
                           [](double x, double) { return x; });
}

inline Tensor relu(Tape* t, const Tensor& a) {
  // subgradient 0 at the kink
  return detail::unary_ew(t, "relu", a, [](double x) { return x > 0 ? x : 0.0; },
                          [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor softplus(Tape* tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  out.set_requires_grad(a.requires_grad());
  // exp(-|x|) is shared by the forward value and the logistic derivative
  auto cache = std::make_shared<std::vector<double>>(a.size());
  auto run = [cache](const Tensor& x, Tensor& o) {
    const double* xp = x.value().data();
    double* op = o.value().data();
    double* cp = cache->data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = std::exp(-std::abs(xp[i]));
      cp[i] = e;
      op[i] = std::max(xp[i], 0.0) + std::log1p(e);
    }
  };
  run(a, out);
  if (out.requires_grad()) {
    Tensor av = a, ov = out;
    detail::maybe_record(tape, TapeNode{
        "softplus",
        {a},
        out,
        [av, ov, run]() mutable { run(av, ov); },
        [av, ov, cache]() mutable {
          const double* xp = av.value().data();
          const double* cp = cache->data();
          const double* g = ov.grad().data();
          double* ga = av.grad().data();
          for (std::size_t i = 0; i < av.size(); ++i) {
            const double e = cp[i];
            const double s = xp[i] >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
            ga[i] += g[i] * s;
          }
        }});
  }
  return out;
}

inline Tensor tanh_act(Tape* t, const Tensor& a) {
  return detail::unary_ew(t, "tanh", a, [](double x) { return std::tanh(x); },
                          [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(Tape* t, const Tensor& a) {
  return detail::unary_ew(t, "sigmoid", a, detail::logistic,
                          [](double, double y) { return y * (1.0 - y); });
}

inline Tensor sin_act(Tape* t, const Tensor& a) {
  return detail::unary_ew(t, "sin", a, [](double x) { return std::sin(x); },
                          [](double x, double) { return std::cos(x); });
}

inline Tensor cos_act(Tape* t, const Tensor& a) {
  return detail::unary_ew(t, "cos", a, [](double x) { return std::cos(x); },
                          [](double x, double) { return -std::sin(x); });
}

inline Tensor scale(Tape* t, const Tensor& a, double s) {
  return detail::unary_ew(t, "scale", a, [s](double x) { return s * x; },
                          [s](double, double) { return s; });
}

/// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
inline Tensor clamp(Tape* t, const Tensor& a, double lo, double hi) {
  return detail::unary_ew(t, "clamp", a,
                          [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                          [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

/// Sum of all elements, as a scalar.
inline Tensor sum(Tape* tape, const Tensor& a) {
  Tensor out = Tensor::zeros({1});
  out.set_requires_grad(a.requires_grad());
  auto run = [](const Tensor& x, Tensor& o) {
    double s = 0.0;
    for (double v : x.value()) s += v;
    o.value()[0] = s;
  };
  run(a, out);
  if (out.requires_grad()) {
    Tensor av = a, ov = out;
    detail::maybe_record(tape, TapeNode{
        "sum",
        {a},
        out,
        [av, ov, run]() mutable { run(av, ov); },
        [av, ov]() mutable {
          const double g = ov.grad()[0];
          for (double& gi : av.grad()) gi += g;
        }});
  }
  return out;
}

/// Mean over rows of the per-row L1 distance between pred and target.
/// The subgradient of |r| at r == 0 is taken as 0.
inline Tensor l1_mean(Tape* tape, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw Error("l1_mean: shape mismatch " + detail::shape_str(pred.shape()) + " vs " +
                detail::shape_str(target.shape()));
  }
  const std::size_t m = pred.rows(), n = pred.cols();
  if (m == 0 || pred.size() == 0) throw Error("l1_mean: empty batch");
  Tensor out = Tensor::zeros({1});
  out.set_requires_grad(detail::any_requires_grad({pred, target}));
  auto run = [m, n](const Tensor& p, const Tensor& tg, Tensor& o) {
    const double* pp = p.value().data();
    const double* tp = tg.value().data();
    double s = 0.0;
    for (std::size_t i = 0; i < m * n; ++i) s += std::abs(pp[i] - tp[i]);
    o.value()[0] = s / static_cast<double>(m);
  };
  run(pred, target, out);
  if (out.requires_grad()) {
    Tensor pv = pred, tv = target, ov = out;
    detail::maybe_record(tape, TapeNode{
        "l1_mean",
        {pred, target},
        out,
        [pv, tv, ov, run]() mutable { run(pv, tv, ov); },
        [pv, tv, ov, m, n, need_p = pred.requires_grad(),
         need_t = target.requires_grad()]() mutable {
          const double g = ov.grad()[0] / static_cast<double>(m);
          const double* pp = pv.value().data();
          const double* tp = tv.value().data();
          double* gp = pv.grad().data();
          double* gt = tv.grad().data();
          for (std::size_t i = 0; i < m * n; ++i) {
            const double r = pp[i] - tp[i];
            const double s = r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
            if (need_p) gp[i] += g * s;
            if (need_t) gt[i] -= g * s;
          }
        }});
  }
  return out;
}

/// [m x p] ++ [m x q] -> [m x (p+q)] along columns. Rank-1 inputs act as rows.
inline Tensor concat_cols(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw Error("concat_cols: row mismatch " + detail::shape_str(a.shape()) + " vs " +
                detail::shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  Tensor out = Tensor::zeros({m, p + q});
  out.set_requires_grad(detail::any_requires_grad({a, b}));
  auto run = [m, p, q](const Tensor& x, const Tensor& y, Tensor& o) {
    const double* xp = x.value().data();
    const double* yp = y.value().data();
    double* op = o.value().data();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy(xp + i * p, xp + (i + 1) * p, op + i * (p + q));
      std::copy(yp + i * q, yp + (i + 1) * q, op + i * (p + q) + p);
    }
  };
  run(a, b, out);
  if (out.requires_grad()) {
    Tensor av = a, bv = b, ov = out;
    detail::maybe_record(tape, TapeNode{
        "concat_cols",
        {a, b},
        out,
        [av, bv, ov, run]() mutable { run(av, bv, ov); },
        [av, bv, ov, m, p, q]() mutable {
          const double* g = ov.grad().data();
          double* ga = av.grad().data();
          double* gb = bv.grad().data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
            for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
          }
        }});
  }
  return out;
}

/// Tile a row vector m times -> [m x n].
inline Tensor repeat_row(Tape* tape, const Tensor& row, std::size_t m) {
  if (row.rows() != 1) {
    throw Error("repeat_row: expected a row vector, got " + detail::shape_str(row.shape()));
  }
  const std::size_t n = row.cols();
  Tensor out = Tensor::zeros({m, n});
  out.set_requires_grad(row.requires_grad());
  auto run = [m, n](const Tensor& r, Tensor& o) {
    const double* rp = r.value().data();
    double* op = o.value().data();
    for (std::size_t i = 0; i < m; ++i) std::copy(rp, rp + n, op + i * n);
  };
  run(row, out);
  if (out.requires_grad()) {
    Tensor rv = row, ov = out;
    detail::maybe_record(tape, TapeNode{
        "repeat_row",
        {row},
        out,
        [rv, ov, run]() mutable { run(rv, ov); },
        [rv, ov, m, n]() mutable {
          const double* g = ov.grad().data();
          double* gr = rv.grad().data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
        }});
  }
  return out;
}

}  // namespace gtex::ad
