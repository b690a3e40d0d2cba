// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Dense float64 tensors with a reverse-mode tape.
 *
 * A Tensor is a shared handle to a value buffer. Operations called while a
 * TapeScope is active record a node on that tape whenever one of their inputs
 * requires a gradient; backward() then sweeps the tape in reverse creation
 * order. Without an active tape every operation is a plain forward
 * evaluation.
 *
 * Gradients of leaves (parameters) accumulate until zero_grad() is called.
 * A tape supports exactly one backward sweep.
 */
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mgmu {

using Shape = std::vector<std::size_t>;

/// Raised on any shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  Tape* tape = nullptr;

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline thread_local Tape* active_tape = nullptr;

}  // namespace detail

class Tensor {
 public:
  Tensor() : Tensor(Shape{}, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<double> values)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, v); }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(m * n);
    for (const auto& row : rows) {
      if (row.size() != n) throw DimensionError("tensor: ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(Shape{m, n}, std::move(values));
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> values() const { return impl_->data; }
  /// Direct write access; intended for leaves such as parameters and inputs.
  std::span<double> mutable_values() { return impl_->data; }
  const double* data() const { return impl_->data.data(); }

  double item() const {
    if (numel() != 1) {
      throw DimensionError("item: tensor of shape " + shape_str(shape()) +
                           " is not a scalar");
    }
    return impl_->data[0];
  }
  double at(std::size_t i) const { return impl_->data.at(i); }
  double at(std::size_t i, std::size_t j) const {
    return impl_->data.at(i * impl_->shape.at(1) + j);
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  /// Value copy detached from any tape.
  Tensor detach() const { return Tensor(shape(), impl_->data); }

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

  const detail::ImplPtr& impl() const { return impl_; }

 private:
  detail::ImplPtr impl_;
};

/**
 * Records operations in creation order. One tape belongs to one thread.
 */
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<detail::ImplPtr> inputs, detail::ImplPtr output,
              BackwardFn fn) {
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void backward(const Tensor& loss) {
    if (consumed_) {
      throw std::logic_error(
          "backward: tape already swept; build a new tape for each step");
    }
    if (loss.numel() != 1) {
      throw DimensionError("backward: loss must be a scalar, got shape " +
                           shape_str(loss.shape()));
    }
    if (loss.impl()->tape != this) {
      throw std::logic_error("backward: loss was not recorded on this tape");
    }
    consumed_ = true;
    loss.impl()->grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      const auto& out = it->output;
      if (out->grad.size() != out->data.size()) continue;  // unreachable
      it->backward(out->grad);
    }
  }

 private:
  struct Node {
    std::vector<detail::ImplPtr> inputs;
    detail::ImplPtr output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::active_tape) {
    detail::active_tape = &tape;
  }
  ~TapeScope() { detail::active_tape = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording, e.g. for evaluation inside a training step.
class NoTapeScope {
 public:
  NoTapeScope() : previous_(detail::active_tape) { detail::active_tape = nullptr; }
  ~NoTapeScope() { detail::active_tape = previous_; }
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* previous_;
};

inline void backward(const Tensor& loss) {
  Tape* tape = loss.impl()->tape;
  if (tape == nullptr) {
    throw std::logic_error("backward: loss was not produced by a taped operation");
  }
  tape->backward(loss);
}

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

/// Attaches a backward rule to `out` when recording is active and needed.
inline void record(const Tensor& out, std::vector<ImplPtr> inputs,
                   Tape::BackwardFn fn) {
  Tape* tape = active_tape;
  if (tape == nullptr) return;
  bool needed = false;
  for (const auto& in : inputs) needed = needed || in->requires_grad;
  if (!needed) return;
  out.impl()->requires_grad = true;
  out.impl()->tape = tape;
  tape->record(std::move(inputs), out.impl(), std::move(fn));
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + " differ");
  }
}

inline void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/**
 * Matrix product of a [m, k] with b [k, n]. A rank-1 `b` of extent k is
 * treated as a column and yields a rank-1 result of extent m.
 */
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2) || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) +
                         " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1);
  const std::size_t n = b.rank() == 2 ? b.dim(1) : 1;
  Tensor out(b.rank() == 2 ? Shape{m, n} : Shape{m});
  {
    detail::ConstMatMap A(a.data(), m, k);
    detail::ConstMatMap B(b.data(), k, n);
    detail::MatMap C(out.mutable_values().data(), m, n);
    C.noalias() = A * B;
  }
  auto ai = a.impl(), bi = b.impl();
  detail::record(out, {ai, bi}, [ai, bi, m, k, n](std::span<const double> g) {
    detail::ConstMatMap G(g.data(), m, n);
    if (ai->requires_grad) {
      detail::MatMap dA(ai->grad_buffer().data(), m, k);
      dA.noalias() += G * detail::ConstMatMap(bi->data.data(), k, n).transpose();
    }
    if (bi->requires_grad) {
      detail::MatMap dB(bi->grad_buffer().data(), k, n);
      dB.noalias() += detail::ConstMatMap(ai->data.data(), m, k).transpose() * G;
    }
  });
  return out;
}

/// y = W·x + b for x [n], W [m, n], b [m].
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1 || w.dim(1) != x.dim(0) ||
      w.dim(0) != b.dim(0)) {
    throw DimensionError("dense: x " + shape_str(x.shape()) + ", W " +
                         shape_str(w.shape()) + ", b " + shape_str(b.shape()) +
                         " do not agree");
  }
  const std::size_t m = w.dim(0), n = w.dim(1);
  Tensor out(Shape{m});
  {
    Eigen::Map<Eigen::VectorXd> y(out.mutable_values().data(), m);
    y.noalias() = detail::ConstMatMap(w.data(), m, n) *
                  Eigen::Map<const Eigen::VectorXd>(x.data(), n);
    y += Eigen::Map<const Eigen::VectorXd>(b.data(), m);
  }
  auto xi = x.impl(), wi = w.impl(), bi = b.impl();
  detail::record(out, {xi, wi, bi}, [xi, wi, bi, m, n](std::span<const double> g) {
    Eigen::Map<const Eigen::VectorXd> G(g.data(), m);
    if (xi->requires_grad) {
      Eigen::Map<Eigen::VectorXd> dx(xi->grad_buffer().data(), n);
      dx.noalias() += detail::ConstMatMap(wi->data.data(), m, n).transpose() * G;
    }
    if (wi->requires_grad) {
      detail::MatMap dW(wi->grad_buffer().data(), m, n);
      dW.noalias() += G * Eigen::Map<const Eigen::VectorXd>(xi->data.data(), n).transpose();
    }
    if (bi->requires_grad) {
      Eigen::Map<Eigen::VectorXd>(bi->grad_buffer().data(), m) += G;
    }
  });
  return out;
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank("transpose", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out(Shape{n, m});
  detail::MatMap(out.mutable_values().data(), n, m) =
      detail::ConstMatMap(x.data(), m, n).transpose();
  auto xi = x.impl();
  detail::record(out, {xi}, [xi, m, n](std::span<const double> g) {
    detail::MatMap(xi->grad_buffer().data(), m, n) +=
        detail::ConstMatMap(g.data(), n, m).transpose();
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

enum class Unary { tanh, sigmoid, relu };

inline double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor map_unary(const Tensor& x, Unary f) {
  Tensor out(x.shape());
  auto src = x.values();
  auto dst = out.mutable_values();
  switch (f) {
    case Unary::tanh:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::tanh(src[i]);
      break;
    case Unary::sigmoid:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = sigmoid_value(src[i]);
      break;
    case Unary::relu:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
      break;
  }
  auto xi = x.impl(), yi = out.impl();
  detail::record(out, {xi}, [xi, yi, f](std::span<const double> g) {
    const auto& y = yi;
    auto& dx = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = y->data[i];
      double d = 0.0;
      switch (f) {
        case Unary::tanh: d = 1.0 - v * v; break;
        case Unary::sigmoid: d = v * (1.0 - v); break;
        case Unary::relu: d = xi->data[i] > 0.0 ? 1.0 : 0.0; break;
      }
      dx[i] += g[i] * d;
    }
  });
  return out;
}

inline Tensor tanh(const Tensor& x) { return map_unary(x, Unary::tanh); }
inline Tensor sigmoid(const Tensor& x) { return map_unary(x, Unary::sigmoid); }
inline Tensor relu(const Tensor& x) { return map_unary(x, Unary::relu); }

enum class Binary { add, sub, mul };

inline Tensor combine_binary(const Tensor& a, const Tensor& b, Binary f) {
  detail::require_same_shape(f == Binary::mul ? "mul" : f == Binary::add ? "add" : "sub",
                             a, b);
  Tensor out(a.shape());
  auto av = a.values(), bv = b.values();
  auto dst = out.mutable_values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    switch (f) {
      case Binary::add: dst[i] = av[i] + bv[i]; break;
      case Binary::sub: dst[i] = av[i] - bv[i]; break;
      case Binary::mul: dst[i] = av[i] * bv[i]; break;
    }
  }
  auto ai = a.impl(), bi = b.impl();
  detail::record(out, {ai, bi}, [ai, bi, f](std::span<const double> g) {
    if (ai->requires_grad) {
      auto& da = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        da[i] += f == Binary::mul ? g[i] * bi->data[i] : g[i];
    }
    if (bi->requires_grad) {
      auto& db = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        switch (f) {
          case Binary::add: db[i] += g[i]; break;
          case Binary::sub: db[i] -= g[i]; break;
          case Binary::mul: db[i] += g[i] * ai->data[i]; break;
        }
      }
    }
  });
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return combine_binary(a, b, Binary::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return combine_binary(a, b, Binary::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return combine_binary(a, b, Binary::mul); }

/// scale·x + shift, elementwise.
inline Tensor affine(const Tensor& x, double scale, double shift) {
  Tensor out(x.shape());
  auto src = x.values();
  auto dst = out.mutable_values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = scale * src[i] + shift;
  auto xi = x.impl();
  detail::record(out, {xi}, [xi, scale](std::span<const double> g) {
    auto& dx = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += scale * g[i];
  });
  return out;
}

/// Inverted dropout. rate == 0 returns `x` itself.
inline Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  Tensor out(x.shape());
  auto src = x.values();
  auto dst = out.mutable_values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * mask[i];
  auto xi = x.impl();
  detail::record(out, {xi}, [xi, mask = std::move(mask)](std::span<const double> g) {
    auto& dx = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
  });
  return out;
}

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::scalar(total);
  auto xi = x.impl();
  detail::record(out, {xi}, [xi](std::span<const double> g) {
    auto& dx = xi->grad_buffer();
    for (auto& d : dx) d += g[0];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

namespace detail {

struct AxisSplit {
  std::size_t outer = 1, extent = 0, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis = 0) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i)
      ok = i == axis || p.dim(i) == first[i];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(p.shape()) +
                           " disagrees with " + shape_str(first) +
                           " off axis " + std::to_string(axis));
    }
    out_shape[axis] += p.dim(axis);
  }
  Tensor out(out_shape);
  const auto split = detail::split_at(out_shape, axis);
  auto dst = out.mutable_values();
  std::vector<detail::ImplPtr> inputs;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = p.dim(axis) * split.inner;
    auto src = p.values();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src.begin() + o * block, block,
                  dst.begin() + o * split.extent * split.inner + offset * split.inner);
    }
    inputs.push_back(p.impl());
    offsets.push_back(offset);
    offset += p.dim(axis);
  }
  detail::record(out, inputs,
                 [inputs, offsets, split, axis](std::span<const double> g) {
                   for (std::size_t k = 0; k < inputs.size(); ++k) {
                     auto& in = inputs[k];
                     if (!in->requires_grad) continue;
                     const std::size_t block = in->shape[axis] * split.inner;
                     auto& dx = in->grad_buffer();
                     for (std::size_t o = 0; o < split.outer; ++o) {
                       const double* from = g.data() + o * split.extent * split.inner +
                                            offsets[k] * split.inner;
                       for (std::size_t i = 0; i < block; ++i) dx[o * block + i] += from[i];
                     }
                   }
                 });
  return out;
}

/// Half-open range [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.dim(axis)) {
    throw DimensionError("slice: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") on axis " + std::to_string(axis) +
                         " of shape " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const auto split = detail::split_at(x.shape(), axis);
  const std::size_t block = (end - begin) * split.inner;
  auto src = x.values();
  auto dst = out.mutable_values();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(src.begin() + o * split.extent * split.inner + begin * split.inner, block,
                dst.begin() + o * block);
  }
  auto xi = x.impl();
  detail::record(out, {xi}, [xi, split, begin, block](std::span<const double> g) {
    auto& dx = xi->grad_buffer();
    for (std::size_t o = 0; o < split.outer; ++o) {
      double* to = dx.data() + o * split.extent * split.inner + begin * split.inner;
      for (std::size_t i = 0; i < block; ++i) to[i] += g[o * block + i];
    }
  });
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  auto xi = x.impl();
  detail::record(out, {xi}, [xi](std::span<const double> g) {
    auto& dx = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Temporal convolution and pooling over [channels, time] tensors
// ---------------------------------------------------------------------------

enum class Padding { same, valid };

/**
 * y[o, t] = sum_c sum_k kernels[o, c, k] * x[c, t + k*dilation - left]
 *
 * `valid` uses left = 0 and yields T - (K-1)*dilation steps. `same` zero-pads
 * (K-1)*dilation frames split as floor/ceil on the left/right and keeps T.
 */
inline Tensor conv1d_dilated(const Tensor& x, const Tensor& kernels, std::size_t dilation,
                             Padding padding) {
  if (x.rank() != 2 || kernels.rank() != 3 || kernels.dim(1) != x.dim(0)) {
    throw DimensionError("conv1d: input " + shape_str(x.shape()) + " and kernels " +
                         shape_str(kernels.shape()) + " do not agree");
  }
  if (dilation == 0) throw std::invalid_argument("conv1d: dilation must be at least 1");
  const std::size_t c_out = kernels.dim(0), c_in = kernels.dim(1), k_size = kernels.dim(2);
  const std::size_t steps = x.dim(1);
  const std::size_t span_frames = (k_size - 1) * dilation;
  std::size_t t_out = steps;
  std::ptrdiff_t left = 0;
  if (padding == Padding::valid) {
    if (steps < span_frames + 1) {
      throw DimensionError("conv1d: input length " + std::to_string(steps) +
                           " shorter than receptive field " +
                           std::to_string(span_frames + 1));
    }
    t_out = steps - span_frames;
  } else {
    left = static_cast<std::ptrdiff_t>(span_frames / 2);
  }

  // Pack each tap into a contiguous [c_out, c_in] matrix.
  std::vector<detail::RowMatrix> taps(k_size, detail::RowMatrix(c_out, c_in));
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t c = 0; c < c_in; ++c)
      for (std::size_t k = 0; k < k_size; ++k)
        taps[k](o, c) = kernels.data()[(o * c_in + c) * k_size + k];

  // Output columns [t0, t1) read input columns [t0 + shift, t1 + shift).
  struct Window {
    std::size_t out_begin, in_begin, length;
  };
  std::vector<Window> windows(k_size);
  for (std::size_t k = 0; k < k_size; ++k) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k * dilation) - left;
    std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
    std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(t_out),
                                                 static_cast<std::ptrdiff_t>(steps) - shift);
    if (t1 < t0) t1 = t0;
    windows[k] = {static_cast<std::size_t>(t0), static_cast<std::size_t>(t0 + shift),
                  static_cast<std::size_t>(t1 - t0)};
  }

  Tensor out(Shape{c_out, t_out});
  {
    detail::ConstMatMap X(x.data(), c_in, steps);
    detail::MatMap Y(out.mutable_values().data(), c_out, t_out);
    for (std::size_t k = 0; k < k_size; ++k) {
      const auto& w = windows[k];
      if (w.length == 0) continue;
      Y.middleCols(w.out_begin, w.length).noalias() +=
          taps[k] * X.middleCols(w.in_begin, w.length);
    }
  }

  auto xi = x.impl(), ki = kernels.impl();
  detail::record(out, {xi, ki},
                 [xi, ki, taps = std::move(taps), windows, c_out, c_in, k_size, steps,
                  t_out](std::span<const double> g) {
                   detail::ConstMatMap G(g.data(), c_out, t_out);
                   detail::ConstMatMap X(xi->data.data(), c_in, steps);
                   if (xi->requires_grad) {
                     detail::MatMap dX(xi->grad_buffer().data(), c_in, steps);
                     for (std::size_t k = 0; k < k_size; ++k) {
                       const auto& w = windows[k];
                       if (w.length == 0) continue;
                       dX.middleCols(w.in_begin, w.length).noalias() +=
                           taps[k].transpose() * G.middleCols(w.out_begin, w.length);
                     }
                   }
                   if (ki->requires_grad) {
                     auto& dk = ki->grad_buffer();
                     detail::RowMatrix tap_grad(c_out, c_in);
                     for (std::size_t k = 0; k < k_size; ++k) {
                       const auto& w = windows[k];
                       if (w.length == 0) continue;
                       tap_grad.noalias() = G.middleCols(w.out_begin, w.length) *
                                            X.middleCols(w.in_begin, w.length).transpose();
                       for (std::size_t o = 0; o < c_out; ++o)
                         for (std::size_t c = 0; c < c_in; ++c)
                           dk[(o * c_in + c) * k_size + k] += tap_grad(o, c);
                     }
                   }
                 });
  return out;
}

/// Adds b[c] to every step of channel c in x [C, T].
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(0)) {
    throw DimensionError("add_channel_bias: x " + shape_str(x.shape()) + ", b " +
                         shape_str(b.shape()));
  }
  const std::size_t channels = x.dim(0), steps = x.dim(1);
  Tensor out(x.shape());
  auto src = x.values();
  auto dst = out.mutable_values();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t t = 0; t < steps; ++t)
      dst[c * steps + t] = src[c * steps + t] + b.data()[c];
  auto xi = x.impl(), bi = b.impl();
  detail::record(out, {xi, bi}, [xi, bi, channels, steps](std::span<const double> g) {
    if (xi->requires_grad) {
      auto& dx = xi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
    if (bi->requires_grad) {
      auto& db = bi->grad_buffer();
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < steps; ++t) db[c] += g[c * steps + t];
    }
  });
  return out;
}

enum class PoolKind { max, mean };

/// Pooling along time of x [C, T]; output [C, (T - window)/stride + 1].
inline Tensor pool1d(const Tensor& x, PoolKind kind, std::size_t window, std::size_t stride) {
  detail::require_rank("pool1d", x, 2);
  const std::size_t channels = x.dim(0), steps = x.dim(1);
  if (window == 0 || stride == 0) throw std::invalid_argument("pool1d: window and stride must be positive");
  if (window > steps) {
    throw DimensionError("pool1d: window " + std::to_string(window) +
                         " exceeds input length " + std::to_string(steps));
  }
  const std::size_t t_out = (steps - window) / stride + 1;
  Tensor out(Shape{channels, t_out});
  auto src = x.values();
  auto dst = out.mutable_values();
  std::vector<std::size_t> argmax;
  if (kind == PoolKind::max) argmax.resize(channels * t_out);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* row = src.data() + c * steps;
    for (std::size_t t = 0; t < t_out; ++t) {
      const std::size_t begin = t * stride;
      if (kind == PoolKind::max) {
        std::size_t best = begin;
        for (std::size_t s = begin + 1; s < begin + window; ++s)
          if (row[s] > row[best]) best = s;
        argmax[c * t_out + t] = best;
        dst[c * t_out + t] = row[best];
      } else {
        double total = 0.0;
        for (std::size_t s = begin; s < begin + window; ++s) total += row[s];
        dst[c * t_out + t] = total / static_cast<double>(window);
      }
    }
  }
  auto xi = x.impl();
  detail::record(out, {xi},
                 [xi, kind, argmax = std::move(argmax), channels, steps, t_out, window,
                  stride](std::span<const double> g) {
                   auto& dx = xi->grad_buffer();
                   for (std::size_t c = 0; c < channels; ++c) {
                     for (std::size_t t = 0; t < t_out; ++t) {
                       const double up = g[c * t_out + t];
                       if (kind == PoolKind::max) {
                         dx[c * steps + argmax[c * t_out + t]] += up;
                       } else {
                         const double share = up / static_cast<double>(window);
                         for (std::size_t s = t * stride; s < t * stride + window; ++s)
                           dx[c * steps + s] += share;
                       }
                     }
                   }
                 });
  return out;
}

/// Max over the whole time axis of x [C, T], returned as [C].
inline Tensor max_over_time(const Tensor& x) {
  detail::require_rank("max_over_time", x, 2);
  return reshape(pool1d(x, PoolKind::max, x.dim(1), x.dim(1)), Shape{x.dim(0)});
}

/// Mean over the time steps of x [C, T] whose mask entry is set; returns [C].
inline Tensor masked_mean_time(const Tensor& x, const std::vector<bool>& mask) {
  detail::require_rank("masked_mean_time", x, 2);
  const std::size_t channels = x.dim(0), steps = x.dim(1);
  if (mask.size() != steps) {
    throw DimensionError("masked_mean_time: mask of " + std::to_string(mask.size()) +
                         " for " + std::to_string(steps) + " steps");
  }
  const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (count == 0) throw std::invalid_argument("masked_mean_time: every step is masked");
  Tensor out(Shape{channels});
  auto src = x.values();
  auto dst = out.mutable_values();
  for (std::size_t c = 0; c < channels; ++c) {
    double total = 0.0;
    for (std::size_t t = 0; t < steps; ++t)
      if (mask[t]) total += src[c * steps + t];
    dst[c] = total / static_cast<double>(count);
  }
  auto xi = x.impl();
  detail::record(out, {xi}, [xi, mask, channels, steps, count](std::span<const double> g) {
    auto& dx = xi->grad_buffer();
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < steps; ++t)
        if (mask[t]) dx[c * steps + t] += g[c] / static_cast<double>(count);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Max-subtracted softmax, forward only.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double peak = *std::max_element(p.begin(), p.end());
  double total = 0.0;
  for (auto& v : p) {
    v = std::exp(v - peak);
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

/**
 * -w[y] * log softmax(logits)[y], fused with the softmax so the backward rule
 * is w[y] * (softmax - onehot(y)).
 */
inline Tensor weighted_softmax_cross_entropy(const Tensor& logits, std::size_t true_class,
                                             const Tensor& class_weights) {
  if (logits.rank() != 1 || logits.dim(0) < 2) {
    throw DimensionError("cross_entropy: logits must be a vector of at least 2 classes, got " +
                         shape_str(logits.shape()));
  }
  const std::size_t k = logits.dim(0);
  if (class_weights.shape() != logits.shape()) {
    throw DimensionError("cross_entropy: weights " + shape_str(class_weights.shape()) +
                         " for logits " + shape_str(logits.shape()));
  }
  if (true_class >= k) {
    throw std::out_of_range("cross_entropy: class " + std::to_string(true_class) +
                            " out of range for " + std::to_string(k) + " classes");
  }
  for (double w : class_weights.values()) {
    if (!(w > 0.0)) throw std::invalid_argument("cross_entropy: class weights must be positive");
  }
  auto probs = softmax(logits.values());
  const double peak = *std::max_element(logits.values().begin(), logits.values().end());
  double log_norm = 0.0;
  for (double v : logits.values()) log_norm += std::exp(v - peak);
  log_norm = peak + std::log(log_norm);
  const double weight = class_weights.data()[true_class];
  Tensor out = Tensor::scalar(-weight * (logits.data()[true_class] - log_norm));
  auto li = logits.impl();
  detail::record(out, {li},
                 [li, probs = std::move(probs), weight, true_class](std::span<const double> g) {
                   auto& dl = li->grad_buffer();
                   for (std::size_t i = 0; i < probs.size(); ++i) {
                     const double onehot = i == true_class ? 1.0 : 0.0;
                     dl[i] += g[0] * weight * (probs[i] - onehot);
                   }
                 });
  return out;
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// Gate rows are stacked in the order input, forget, candidate, output.
struct LstmParams {
  Tensor input_weights;      // [4u, d]
  Tensor recurrent_weights;  // [4u, u]
  Tensor bias;               // [4u]

  std::size_t hidden() const { return recurrent_weights.dim(1); }
  std::size_t input() const { return input_weights.dim(1); }
};

struct LstmState {
  Tensor h;
  Tensor c;
};

inline LstmState lstm_zero_state(std::size_t hidden) {
  return {Tensor(Shape{hidden}), Tensor(Shape{hidden})};
}

inline LstmState lstm_step(const Tensor& x, const LstmState& prev, const LstmParams& p) {
  const std::size_t u = p.recurrent_weights.rank() == 2 ? p.recurrent_weights.dim(1) : 0;
  const bool ok = p.input_weights.rank() == 2 && p.recurrent_weights.rank() == 2 &&
                  p.bias.rank() == 1 && p.input_weights.dim(0) == 4 * u &&
                  p.recurrent_weights.dim(0) == 4 * u && p.bias.dim(0) == 4 * u &&
                  x.rank() == 1 && x.dim(0) == p.input_weights.dim(1) &&
                  prev.h.shape() == Shape{u} && prev.c.shape() == Shape{u};
  if (!ok) {
    throw DimensionError("lstm_step: x " + shape_str(x.shape()) + ", h " +
                         shape_str(prev.h.shape()) + ", c " + shape_str(prev.c.shape()) +
                         ", W_x " + shape_str(p.input_weights.shape()) + ", W_h " +
                         shape_str(p.recurrent_weights.shape()) + ", b " +
                         shape_str(p.bias.shape()));
  }
  Tensor pre = add(dense(x, p.input_weights, p.bias), matmul(p.recurrent_weights, prev.h));
  Tensor i = sigmoid(slice(pre, 0, 0, u));
  Tensor f = sigmoid(slice(pre, 0, u, 2 * u));
  Tensor g = tanh(slice(pre, 0, 2 * u, 3 * u));
  Tensor o = sigmoid(slice(pre, 0, 3 * u, 4 * u));
  Tensor c = add(mul(f, prev.c), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {h, c};
}

/// Folds lstm_step over `inputs`; returns every hidden state.
inline std::vector<Tensor> lstm_sequence(const std::vector<Tensor>& inputs, const LstmParams& p) {
  std::vector<Tensor> hs;
  hs.reserve(inputs.size());
  LstmState state = lstm_zero_state(p.hidden());
  for (const auto& x : inputs) {
    state = lstm_step(x, state, p);
    hs.push_back(state.h);
  }
  return hs;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                             std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_values()) v = dist(rng);
  t.set_requires_grad(true);
  return t;
}

inline Tensor zeros_param(Shape shape) {
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

}  // namespace mgmu
