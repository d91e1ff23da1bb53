// Dense f64 tensors with reverse-mode gradient accumulation.
//
// Tensors are immutable after construction except for their gradient
// buffers. Operations executed while a Tape is active append backward
// closures to it; Tape::backward replays the closures in reverse order,
// accumulating dLoss/dX into every tensor that needs a gradient.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cetnet {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Dimension / shape contract violations.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(what) {}
};

/// Invalid configuration values (bad hyperparameters, mode strings, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// Malformed user data (labels out of range, empty sequences, ...).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what) {}
};

/// Malformed binary/text files; messages carry the failing offset or line.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what) {}
};

namespace detail {

template <typename... Parts>
std::string msg(Parts&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily, same length as data once touched
  bool requires_grad = false;  // leaf parameter flag
  bool needs_grad = false;     // true for leaves and anything derived from one

  std::size_t size() const { return data.size(); }

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

/// Shared-ownership handle to a dense row-major f64 array.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : impl_(std::make_shared<TensorImpl>()) {
    impl_->shape = std::move(shape);
    impl_->data.assign(count(impl_->shape), fill);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : impl_(std::make_shared<TensorImpl>()) {
    if (values.size() != count(shape)) {
      throw ShapeError(detail::msg("tensor data length ", values.size(),
                                   " does not match shape ",
                                   detail::shape_str(shape)));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double v) { return Tensor(std::move(shape), v); }

  bool valid() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }

  /// Row/column accessors for the common rank-2 case.
  std::size_t rows() const { return impl_->shape.at(0); }
  std::size_t cols() const { return impl_->shape.at(1); }

  const double* data() const { return impl_->data.data(); }
  double* mutable_data() { return impl_->data.data(); }
  const std::vector<double>& values() const { return impl_->data; }

  double at(std::size_t i) const { return impl_->data[i]; }
  double operator()(std::size_t r, std::size_t c) const {
    return impl_->data[r * cols() + c];
  }

  /// Value of a size-1 tensor.
  double value() const {
    if (size() != 1) {
      throw ShapeError(detail::msg("value() requires a scalar tensor, got shape ",
                                   detail::shape_str(shape())));
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool needs_grad() const { return impl_ && impl_->needs_grad; }

  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    impl_->needs_grad = impl_->needs_grad || on;
    return *this;
  }

  const std::vector<double>& grad() const {
    return impl_->grad_buffer();
  }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }

  std::shared_ptr<TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// GradTape
// ---------------------------------------------------------------------------

/// Ordered record of executed operations. Execution order is a topological
/// order of the forward graph, so replaying the recorded closures in reverse
/// propagates gradients from the root to every leaf.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  void clear() { entries_.clear(); }

  /// Register the backward rule of one executed op. `result` is the op output
  /// whose transient gradient is reset at the start of each backward pass.
  void record(std::shared_ptr<TensorImpl> result, std::function<void()> pull) {
    entries_.emplace_back(std::move(result), std::move(pull));
  }

  /// Accumulates dRoot/dX into every recorded tensor. Gradients of leaf
  /// parameters persist across calls (repeated backward adds), while
  /// intermediate gradients are transient per pass.
  void backward(const Tensor& root) {
    if (root.size() != 1) {
      throw ShapeError(detail::msg("backward root must be scalar, got shape ",
                                   detail::shape_str(root.shape())));
    }
    if (entries_.empty()) {
      throw Error("backward called on an empty tape");
    }
    for (auto& e : entries_) {
      auto& g = e.first->grad_buffer();
      std::fill(g.begin(), g.end(), 0.0);
    }
    root.impl()->grad_buffer()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      it->second();
    }
  }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::function<void()>>> entries_;
};

/// RAII activation of a tape on the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(Tape::active()) { Tape::active() = &tape; }
  ~TapeScope() { Tape::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

/// True when the op executed with `inputs_need_grad` should be recorded.
inline Tape* recording(bool inputs_need_grad) {
  Tape* t = Tape::active();
  return (t && inputs_need_grad) ? t : nullptr;
}

inline void mark(Tensor& out) { out.impl()->needs_grad = true; }

}  // namespace detail

/// Backward through the active tape (see Tape::backward).
inline void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw Error("backward requires an active tape");
  t->backward(loss);
}

// ---------------------------------------------------------------------------
// Shape checks
// ---------------------------------------------------------------------------

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(msg(op, ": expected rank-", rank, " tensor, got shape ",
                         shape_str(t.shape())));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(msg(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                         shape_str(b.shape())));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError(detail::msg("matmul: inner dimensions disagree, ",
                                 detail::shape_str(a.shape()), " vs ",
                                 detail::shape_str(b.shape())));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  {
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.mutable_data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = pa[i * k + kk];
        if (av == 0.0) continue;
        const double* brow = pb + kk * n;
        double* orow = po + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  if (Tape* tape = detail::recording(a.needs_grad() || b.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
      const std::vector<double>& go = oi->grad;
      if (ai->needs_grad) {
        auto& ga = ai->grad_buffer();
        // dA = dC * B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* grow = go.data() + i * n;
            const double* brow = bi->data.data() + kk * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + kk] += acc;
          }
        }
      }
      if (bi->needs_grad) {
        auto& gb = bi->grad_buffer();
        // dB = A^T * dC
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = go.data() + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ai->data[i * k + kk];
            if (av == 0.0) continue;
            double* gbrow = gb.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.mutable_data()[j * m + i] = x.data()[i * n + j];
  if (Tape* tape = detail::recording(x.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [xi = x.impl(), oi = out.impl(), m, n] {
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += oi->grad[j * m + i];
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.mutable_data()[i] = a.data()[i] + b.data()[i];
  if (Tape* tape = detail::recording(a.needs_grad() || b.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
      if (ai->needs_grad) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
      }
      if (bi->needs_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.mutable_data()[i] = a.data()[i] - b.data()[i];
  if (Tape* tape = detail::recording(a.needs_grad() || b.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
      if (ai->needs_grad) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
      }
      if (bi->needs_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= oi->grad[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& x, double s) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.mutable_data()[i] = s * x.data()[i];
  if (Tape* tape = detail::recording(x.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [xi = x.impl(), oi = out.impl(), s] {
      auto& g = xi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * oi->grad[i];
    });
  }
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

/// Adds a length-C bias vector to every row of a T x C matrix.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  detail::require_rank(x, 2, "add_bias");
  detail::require_rank(b, 1, "add_bias");
  if (x.cols() != b.size()) {
    throw ShapeError(detail::msg("add_bias: bias length ", b.size(),
                                 " does not match columns of ",
                                 detail::shape_str(x.shape())));
  }
  const std::size_t t = x.rows(), c = x.cols();
  Tensor out({t, c});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out.mutable_data()[i * c + j] = x.data()[i * c + j] + b.data()[j];
  if (Tape* tape = detail::recording(x.needs_grad() || b.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [xi = x.impl(), bi = b.impl(), oi = out.impl(), t, c] {
      if (xi->needs_grad) {
        auto& g = xi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
      }
      if (bi->needs_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < c; ++j) g[j] += oi->grad[i * c + j];
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.mutable_data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  if (Tape* tape = detail::recording(x.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [xi = x.impl(), oi = out.impl()] {
      auto& g = xi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xi->data[i] > 0.0) g[i] += oi->grad[i];
    });
  }
  return out;
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  Tensor out = Tensor::scalar(acc);
  if (Tape* tape = detail::recording(x.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [xi = x.impl(), oi = out.impl()] {
      auto& g = xi->grad_buffer();
      const double go = oi->grad[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "concat_channels");
  detail::require_rank(b, 2, "concat_channels");
  if (a.rows() != b.rows()) {
    throw ShapeError(detail::msg("concat_channels: row counts differ, ",
                                 detail::shape_str(a.shape()), " vs ",
                                 detail::shape_str(b.shape())));
  }
  const std::size_t t = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out({t, ca + cb});
  for (std::size_t i = 0; i < t; ++i) {
    double* row = out.mutable_data() + i * (ca + cb);
    std::copy(a.data() + i * ca, a.data() + (i + 1) * ca, row);
    std::copy(b.data() + i * cb, b.data() + (i + 1) * cb, row + ca);
  }
  if (Tape* tape = detail::recording(a.needs_grad() || b.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [ai = a.impl(), bi = b.impl(), oi = out.impl(), t, ca, cb] {
      if (ai->needs_grad) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < ca; ++j)
            g[i * ca + j] += oi->grad[i * (ca + cb) + j];
      }
      if (bi->needs_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < cb; ++j)
            g[i * cb + j] += oi->grad[i * (ca + cb) + ca + j];
      }
    });
  }
  return out;
}

/// Columns [c0, c1) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  detail::require_rank(x, 2, "slice_cols");
  if (c0 >= c1 || c1 > x.cols()) {
    throw ShapeError(detail::msg("slice_cols: invalid range [", c0, ", ", c1,
                                 ") for shape ", detail::shape_str(x.shape())));
  }
  const std::size_t t = x.rows(), c = x.cols(), w = c1 - c0;
  Tensor out({t, w});
  for (std::size_t i = 0; i < t; ++i)
    std::copy(x.data() + i * c + c0, x.data() + i * c + c1,
              out.mutable_data() + i * w);
  if (Tape* tape = detail::recording(x.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [xi = x.impl(), oi = out.impl(), t, c, c0, w] {
      auto& g = xi->grad_buffer();
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < w; ++j)
          g[i * c + c0 + j] += oi->grad[i * w + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinear row ops
// ---------------------------------------------------------------------------

inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double* orow = out.mutable_data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= z;
  }
  if (Tape* tape = detail::recording(x.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [xi = x.impl(), oi = out.impl(), m, n] {
      auto& g = xi->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = oi->data.data() + i * n;
        const double* gy = oi->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return out;
}

inline Tensor log_softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "log_softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double* orow = out.mutable_data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) orow[j] = row[j] - lse;
  }
  if (Tape* tape = detail::recording(x.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [xi = x.impl(), oi = out.impl(), m, n] {
      auto& g = xi->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = oi->data.data() + i * n;
        const double* gy = oi->grad.data() + i * n;
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += gy[j];
        for (std::size_t j = 0; j < n; ++j)
          g[i * n + j] += gy[j] - std::exp(y[j]) * gsum;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Temporal convolution
// ---------------------------------------------------------------------------

/// Kernel-3 dilated 1-D convolution over the temporal axis with same-length
/// zero padding: y[t] = b + sum_j x[t + (j-1)*dilation] * w[j].
/// Weight layout is [3 x C_in x C_out].
inline Tensor dilated_conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
                             long dilation) {
  detail::require_rank(x, 2, "dilated_conv1d");
  detail::require_rank(w, 3, "dilated_conv1d");
  detail::require_rank(b, 1, "dilated_conv1d");
  if (dilation < 1) {
    throw ConfigError(detail::msg("dilated_conv1d: dilation must be >= 1, got ", dilation));
  }
  if (w.dim(0) != 3) {
    throw ConfigError(detail::msg("dilated_conv1d: only kernel size 3 is supported, got ",
                                  w.dim(0)));
  }
  const std::size_t t_len = x.rows(), cin = x.cols(), cout = w.dim(2);
  if (w.dim(1) != cin) {
    throw ShapeError(detail::msg("dilated_conv1d: weight expects ", w.dim(1),
                                 " input channels, input has ", cin));
  }
  if (b.size() != cout) {
    throw ShapeError(detail::msg("dilated_conv1d: bias length ", b.size(),
                                 " does not match ", cout, " output channels"));
  }

  Tensor out({t_len, cout});
  for (std::size_t t = 0; t < t_len; ++t) {
    double* orow = out.mutable_data() + t * cout;
    for (std::size_t o = 0; o < cout; ++o) orow[o] = b.data()[o];
  }
  const long tl = static_cast<long>(t_len);
  for (int j = 0; j < 3; ++j) {
    const long shift = (static_cast<long>(j) - 1) * dilation;
    const double* wj = w.data() + static_cast<std::size_t>(j) * cin * cout;
    for (long t = 0; t < tl; ++t) {
      const long src = t + shift;
      if (src < 0 || src >= tl) continue;
      const double* xrow = x.data() + static_cast<std::size_t>(src) * cin;
      double* orow = out.mutable_data() + static_cast<std::size_t>(t) * cout;
      for (std::size_t i = 0; i < cin; ++i) {
        const double xv = xrow[i];
        if (xv == 0.0) continue;
        const double* wrow = wj + i * cout;
        for (std::size_t o = 0; o < cout; ++o) orow[o] += xv * wrow[o];
      }
    }
  }

  if (Tape* tape = detail::recording(x.needs_grad() || w.needs_grad() || b.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [xi = x.impl(), wi = w.impl(), bi = b.impl(),
                              oi = out.impl(), t_len, cin, cout, dilation] {
      const long tl = static_cast<long>(t_len);
      if (bi->needs_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t t = 0; t < t_len; ++t)
          for (std::size_t o = 0; o < cout; ++o) g[o] += oi->grad[t * cout + o];
      }
      for (int j = 0; j < 3; ++j) {
        const long shift = (static_cast<long>(j) - 1) * dilation;
        const double* wj = wi->data.data() + static_cast<std::size_t>(j) * cin * cout;
        for (long t = 0; t < tl; ++t) {
          const long src = t + shift;
          if (src < 0 || src >= tl) continue;
          const double* grow = oi->grad.data() + static_cast<std::size_t>(t) * cout;
          if (xi->needs_grad) {
            auto& gx = xi->grad_buffer();
            double* gxrow = gx.data() + static_cast<std::size_t>(src) * cin;
            for (std::size_t i = 0; i < cin; ++i) {
              const double* wrow = wj + i * cout;
              double acc = 0.0;
              for (std::size_t o = 0; o < cout; ++o) acc += wrow[o] * grow[o];
              gxrow[i] += acc;
            }
          }
          if (wi->needs_grad) {
            auto& gw = wi->grad_buffer();
            double* gwj = gw.data() + static_cast<std::size_t>(j) * cin * cout;
            const double* xrow = xi->data.data() + static_cast<std::size_t>(src) * cin;
            for (std::size_t i = 0; i < cin; ++i) {
              const double xv = xrow[i];
              if (xv == 0.0) continue;
              double* gwrow = gwj + i * cout;
              for (std::size_t o = 0; o < cout; ++o) gwrow[o] += xv * grow[o];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace detail {

// Shared forward/backward for normalization over one axis of a T x C matrix.
// `over_rows` normalizes each column across rows (instance norm); otherwise
// each row across columns (layer norm). Uses biased variance.
inline Tensor norm_impl(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        double eps, bool over_rows, const char* op) {
  require_rank(x, 2, op);
  require_rank(gamma, 1, op);
  require_rank(beta, 1, op);
  const std::size_t t = x.rows(), c = x.cols();
  if (t == 0) throw DataError(msg(op, ": empty input"));
  const std::size_t feat = over_rows ? c : t;      // number of independent groups
  const std::size_t len = over_rows ? t : c;       // samples per group
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError(msg(op, ": affine parameters must have length ", c,
                         ", got ", gamma.size(), " and ", beta.size()));
  }

  // xhat retained for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(t * c);
  auto inv_sigma = std::make_shared<std::vector<double>>(feat);

  Tensor out({t, c});
  for (std::size_t f = 0; f < feat; ++f) {
    double mean = 0.0;
    for (std::size_t s = 0; s < len; ++s) {
      const std::size_t idx = over_rows ? s * c + f : f * c + s;
      mean += x.data()[idx];
    }
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t s = 0; s < len; ++s) {
      const std::size_t idx = over_rows ? s * c + f : f * c + s;
      const double d = x.data()[idx] - mean;
      var += d * d;
    }
    var /= static_cast<double>(len);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[f] = is;
    for (std::size_t s = 0; s < len; ++s) {
      const std::size_t idx = over_rows ? s * c + f : f * c + s;
      const std::size_t ch = idx % c;
      const double h = (x.data()[idx] - mean) * is;
      (*xhat)[idx] = h;
      out.mutable_data()[idx] = gamma.data()[ch] * h + beta.data()[ch];
    }
  }

  if (Tape* tape = recording(x.needs_grad() || gamma.needs_grad() || beta.needs_grad())) {
    mark(out);
    tape->record(out.impl(), [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(),
                              oi = out.impl(), xhat, inv_sigma, t, c, feat, len,
                              over_rows] {
      if (bi->needs_grad) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < c; ++j) g[j] += oi->grad[i * c + j];
      }
      if (gi->needs_grad) {
        auto& g = gi->grad_buffer();
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < c; ++j)
            g[j] += oi->grad[i * c + j] * (*xhat)[i * c + j];
      }
      if (xi->needs_grad) {
        auto& gx = xi->grad_buffer();
        for (std::size_t f = 0; f < feat; ++f) {
          double gsum = 0.0, ghsum = 0.0;
          for (std::size_t s = 0; s < len; ++s) {
            const std::size_t idx = over_rows ? s * c + f : f * c + s;
            const std::size_t ch = idx % c;
            const double gy = oi->grad[idx] * gi->data[ch];
            gsum += gy;
            ghsum += gy * (*xhat)[idx];
          }
          const double inv_len = 1.0 / static_cast<double>(len);
          for (std::size_t s = 0; s < len; ++s) {
            const std::size_t idx = over_rows ? s * c + f : f * c + s;
            const std::size_t ch = idx % c;
            const double gy = oi->grad[idx] * gi->data[ch];
            gx[idx] += (*inv_sigma)[f] *
                       (gy - gsum * inv_len - (*xhat)[idx] * ghsum * inv_len);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace detail

constexpr double kNormEpsilon = 1e-5;

/// Normalizes each channel to zero mean / unit variance over the temporal
/// axis, then applies a learnable per-channel affine.
inline Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            double eps = kNormEpsilon) {
  return detail::norm_impl(x, gamma, beta, eps, /*over_rows=*/true, "instance_norm");
}

/// Normalizes each frame over the channel axis, then applies the affine.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = kNormEpsilon) {
  return detail::norm_impl(x, gamma, beta, eps, /*over_rows=*/false, "layer_norm");
}

// ---------------------------------------------------------------------------
// Misc helpers
// ---------------------------------------------------------------------------

inline bool all_finite(const Tensor& x) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x.data()[i])) return false;
  return true;
}

}  // namespace cetnet
