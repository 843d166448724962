#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "samcnet/rng.hpp"

// Dense 64-bit float tensors with a reverse-mode tape. Everything is
// exact-shape (no broadcasting); the few structured ops the models need
// (row-vector add/mul, per-row scaling) are explicit primitives with
// hand-derived adjoints.

namespace samcnet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (const std::size_t d : s) n *= d;
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

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool on_tape = false;      // participates in gradient computation
  Tape* tape = nullptr;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

  Tensor(Shape shape, std::vector<double> values)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    if (numel(shape) != values.size())
      throw std::invalid_argument("Tensor: shape " + shape_str(shape) +
                                  " does not match " + std::to_string(values.size()) +
                                  " values");
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape shape, double v) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }

  double item() const {
    if (size() != 1)
      throw std::invalid_argument("Tensor::item: tensor has " +
                                  std::to_string(size()) + " elements");
    return impl_->data[0];
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (impl_->grad.empty())
      throw std::invalid_argument("Tensor::grad: gradient not populated");
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  bool on_tape() const { return impl_->on_tape; }
  Tape* tape() const { return impl_->tape; }

  // Mark as a trainable leaf recorded on `tape`.
  Tensor& requires_grad_(Tape& tape) {
    impl_->on_tape = true;
    impl_->tape = &tape;
    return *this;
  }

  // Same values, no tape participation.
  Tensor detached() const {
    return Tensor(impl_->shape, impl_->data);
  }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
};

// Wengert list. Ops append entries in execution order; backward replays them
// in exact reverse order. One training run owns one tape; clear() drops all
// recorded intermediates between steps.
class Tape {
public:
  struct Entry {
    std::shared_ptr<detail::TensorImpl> out;
    std::function<void()> back;
    const char* op;
  };

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(const char* op, const Tensor& out, std::function<void()> back) {
    out.impl()->on_tape = true;
    out.impl()->tape = this;
    entries_.push_back({out.impl(), std::move(back), op});
  }

  void backward(const Tensor& loss) {
    if (loss.size() != 1)
      throw std::invalid_argument("Tape::backward: loss must be scalar, got shape " +
                                  shape_str(loss.shape()));
    if (entries_.empty())
      throw std::invalid_argument("Tape::backward: tape is empty");
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->out->grad.empty()) it->back();
    }
  }

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> op_names() const {
    std::vector<std::string> names;
    names.reserve(entries_.size());
    for (const auto& e : entries_) names.emplace_back(e.op);
    return names;
  }

private:
  std::vector<Entry> entries_;
  bool recording_ = true;
};

// Suppresses recording for the guarded scope (evaluation-mode forwards).
class NoGradGuard {
public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGradGuard() { tape_.set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  Tape& tape_;
  bool prev_;
};

namespace detail {

inline void check_finite(const char* op, const std::vector<double>& v) {
  for (const double x : v) {
    if (!std::isfinite(x))
      throw std::runtime_error(std::string(op) + ": non-finite value in output");
  }
}

inline Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->on_tape()) continue;
    if (tape != nullptr && t->tape() != tape)
      throw std::invalid_argument("op inputs belong to different tapes");
    tape = t->tape();
  }
  return (tape != nullptr && tape->recording()) ? tape : nullptr;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void accumulate(const std::shared_ptr<TensorImpl>& t,
                       const std::vector<double>& contribution) {
  if (!t->on_tape) return;
  t->ensure_grad();
  for (std::size_t i = 0; i < contribution.size(); ++i) t->grad[i] += contribution[i];
}

// Split a reduction axis into (outer, axis length, inner) strides.
struct AxisSplit {
  std::size_t outer, n, inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  require(axis < shape.size(),
          std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
              shape_str(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                              " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  detail::check_finite("add", out.data());
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record("add", out, [ai, bi, oi] {
      detail::accumulate(ai, oi->grad);
      detail::accumulate(bi, oi->grad);
    });
  }
  return out;
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "subtract: shape mismatch " +
                                              shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  detail::check_finite("subtract", out.data());
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record("subtract", out, [ai, bi, oi] {
      detail::accumulate(ai, oi->grad);
      if (bi->on_tape) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] -= oi->grad[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) +
                                              " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  detail::check_finite("mul", out.data());
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record("mul", out, [ai, bi, oi] {
      if (ai->on_tape) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < oi->grad.size(); ++i)
          ai->grad[i] += oi->grad[i] * bi->data[i];
      }
      if (bi->on_tape) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < oi->grad.size(); ++i)
          bi->grad[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  detail::check_finite("scale", out.data());
  if (Tape* tape = detail::recording_tape({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record("scale", out, [ai, oi, c] {
      ai->ensure_grad();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * c;
    });
  }
  return out;
}

inline Tensor abs(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::fabs(a.data()[i]);
  detail::check_finite("abs", out.data());
  if (Tape* tape = detail::recording_tape({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record("abs", out, [ai, oi] {
      ai->ensure_grad();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) {
        const double x = ai->data[i];
        const double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        ai->grad[i] += oi->grad[i] * s;
      }
    });
  }
  return out;
}

inline Tensor leaky_relu(const Tensor& a, double slope = 0.2) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.data()[i];
    out.data()[i] = x > 0.0 ? x : slope * x;
  }
  detail::check_finite("leaky_relu", out.data());
  if (Tape* tape = detail::recording_tape({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record("leaky_relu", out, [ai, oi, slope] {
      ai->ensure_grad();
      for (std::size_t i = 0; i < oi->grad.size(); ++i)
        ai->grad[i] += oi->grad[i] * (ai->data[i] > 0.0 ? 1.0 : slope);
    });
  }
  return out;
}

// 1 / sqrt(x + shift), elementwise. Used by batch_norm for the variance term.
inline Tensor rsqrt_shift(const Tensor& a, double shift) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = 1.0 / std::sqrt(a.data()[i] + shift);
  detail::check_finite("rsqrt_shift", out.data());
  if (Tape* tape = detail::recording_tape({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record("rsqrt_shift", out, [ai, oi] {
      ai->ensure_grad();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) {
        const double y = oi->data[i];  // (x+shift)^(-1/2)
        ai->grad[i] += oi->grad[i] * (-0.5 * y * y * y);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix / structured ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2,
                  "matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  const std::size_t m = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
  detail::require(b.shape()[0] == p, "matmul: inner dimensions differ, " +
                                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, q});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < p; ++l) {
      const double a_il = A[i * p + l];
      const double* brow = B + l * q;
      double* crow = C + i * q;
      for (std::size_t j = 0; j < q; ++j) crow[j] += a_il * brow[j];
    }
  }
  detail::check_finite("matmul", out.data());
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape->record("matmul", out, [ai, bi, oi, m, p, q] {
      const double* G = oi->grad.data();
      if (ai->on_tape) {
        ai->ensure_grad();
        double* dA = ai->grad.data();
        const double* B = bi->data.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < p; ++l) {
            const double* grow = G + i * q;
            const double* brow = B + l * q;
            double acc = 0.0;
            for (std::size_t j = 0; j < q; ++j) acc += grow[j] * brow[j];
            dA[i * p + l] += acc;
          }
      }
      if (bi->on_tape) {
        bi->ensure_grad();
        double* dB = bi->grad.data();
        const double* A = ai->data.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < p; ++l) {
            const double a_il = A[i * p + l];
            const double* grow = G + i * q;
            double* drow = dB + l * q;
            for (std::size_t j = 0; j < q; ++j) drow[j] += a_il * grow[j];
          }
      }
    });
  }
  return out;
}

// Gather rows along axis 0. Bounds-checked; gradient scatter-adds.
inline Tensor index_select(const Tensor& a, const std::vector<std::size_t>& indices) {
  detail::require(a.rank() >= 1, "index_select: scalar input");
  const std::size_t rows = a.shape()[0];
  std::size_t row_len = 1;
  for (std::size_t i = 1; i < a.rank(); ++i) row_len *= a.shape()[i];
  for (const std::size_t idx : indices)
    detail::require(idx < rows, "index_select: index " + std::to_string(idx) +
                                    " out of range for " + std::to_string(rows) + " rows");
  Shape out_shape = a.shape();
  out_shape[0] = indices.size();
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(a.data().begin() + indices[r] * row_len, row_len,
                out.data().begin() + r * row_len);
  if (Tape* tape = detail::recording_tape({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record("index_select", out, [ai, oi, indices, row_len] {
      ai->ensure_grad();
      for (std::size_t r = 0; r < indices.size(); ++r) {
        const double* g = oi->grad.data() + r * row_len;
        double* dst = ai->grad.data() + indices[r] * row_len;
        for (std::size_t j = 0; j < row_len; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat: no inputs");
  const Shape& base = parts[0].shape();
  detail::require(axis < base.size(), "concat: axis out of range");
  Shape out_shape = base;
  std::size_t total_axis = 0;
  for (const Tensor& t : parts) {
    detail::require(t.rank() == base.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < base.size(); ++i)
      detail::require(i == axis || t.shape()[i] == base[i],
                      "concat: shape mismatch at non-concat axis");
    total_axis += t.shape()[axis];
  }
  out_shape[axis] = total_axis;
  Tensor out = Tensor::zeros(out_shape);

  const auto sp = detail::split_axis(out_shape, axis, "concat");
  std::size_t offset = 0;  // along the concat axis
  for (const Tensor& t : parts) {
    const std::size_t n_t = t.shape()[axis];
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(t.data().begin() + o * n_t * sp.inner, n_t * sp.inner,
                  out.data().begin() + (o * sp.n + offset) * sp.inner);
    offset += n_t;
  }
  std::vector<const Tensor*> refs;
  for (const Tensor& t : parts) refs.push_back(&t);
  Tape* tape = nullptr;
  for (const Tensor& t : parts)
    if (t.on_tape()) {
      tape = t.tape();
      break;
    }
  if (tape != nullptr && tape->recording()) {
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    std::vector<std::size_t> sizes;
    for (const Tensor& t : parts) {
      impls.push_back(t.impl());
      sizes.push_back(t.shape()[axis]);
    }
    auto oi = out.impl();
    tape->record("concat", out, [impls, sizes, oi, sp] {
      std::size_t off = 0;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        if (impls[k]->on_tape) {
          impls[k]->ensure_grad();
          for (std::size_t o = 0; o < sp.outer; ++o) {
            const double* g = oi->grad.data() + (o * sp.n + off) * sp.inner;
            double* dst = impls[k]->grad.data() + o * sizes[k] * sp.inner;
            for (std::size_t j = 0; j < sizes[k] * sp.inner; ++j) dst[j] += g[j];
          }
        }
        off += sizes[k];
      }
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  detail::require(numel(new_shape) == a.size(),
                  "reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                      shape_str(new_shape));
  Tensor out(new_shape, a.data());
  if (Tape* tape = detail::recording_tape({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record("reshape", out, [ai, oi] { detail::accumulate(ai, oi->grad); });
  }
  return out;
}

// out[r, :] = a[r, :] * s[r]; rank-2 only.
inline Tensor scale_rows(const Tensor& a, const Tensor& s) {
  detail::require(a.rank() == 2 && s.rank() == 1 && s.shape()[0] == a.shape()[0],
                  "scale_rows: want (N,C) x (N), got " + shape_str(a.shape()) + " x " +
                      shape_str(s.shape()));
  const std::size_t n = a.shape()[0], c = a.shape()[1];
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double sr = s.data()[r];
    for (std::size_t j = 0; j < c; ++j) out.data()[r * c + j] = a.data()[r * c + j] * sr;
  }
  detail::check_finite("scale_rows", out.data());
  if (Tape* tape = detail::recording_tape({&a, &s})) {
    auto ai = a.impl(), si = s.impl(), oi = out.impl();
    tape->record("scale_rows", out, [ai, si, oi, n, c] {
      if (ai->on_tape) {
        ai->ensure_grad();
        for (std::size_t r = 0; r < n; ++r) {
          const double sr = si->data[r];
          for (std::size_t j = 0; j < c; ++j)
            ai->grad[r * c + j] += oi->grad[r * c + j] * sr;
        }
      }
      if (si->on_tape) {
        si->ensure_grad();
        for (std::size_t r = 0; r < n; ++r) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j)
            acc += oi->grad[r * c + j] * ai->data[r * c + j];
          si->grad[r] += acc;
        }
      }
    });
  }
  return out;
}

inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  detail::require(a.rank() == 2 && v.rank() == 1 && v.shape()[0] == a.shape()[1],
                  "add_rowvec: want (N,C) + (C), got " + shape_str(a.shape()) + " + " +
                      shape_str(v.shape()));
  const std::size_t n = a.shape()[0], c = a.shape()[1];
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j)
      out.data()[r * c + j] = a.data()[r * c + j] + v.data()[j];
  detail::check_finite("add_rowvec", out.data());
  if (Tape* tape = detail::recording_tape({&a, &v})) {
    auto ai = a.impl(), vi = v.impl(), oi = out.impl();
    tape->record("add_rowvec", out, [ai, vi, oi, n, c] {
      detail::accumulate(ai, oi->grad);
      if (vi->on_tape) {
        vi->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) vi->grad[j] += oi->grad[r * c + j];
      }
    });
  }
  return out;
}

inline Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  detail::require(a.rank() == 2 && v.rank() == 1 && v.shape()[0] == a.shape()[1],
                  "mul_rowvec: want (N,C) * (C), got " + shape_str(a.shape()) + " * " +
                      shape_str(v.shape()));
  const std::size_t n = a.shape()[0], c = a.shape()[1];
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j)
      out.data()[r * c + j] = a.data()[r * c + j] * v.data()[j];
  detail::check_finite("mul_rowvec", out.data());
  if (Tape* tape = detail::recording_tape({&a, &v})) {
    auto ai = a.impl(), vi = v.impl(), oi = out.impl();
    tape->record("mul_rowvec", out, [ai, vi, oi, n, c] {
      if (ai->on_tape) {
        ai->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j)
            ai->grad[r * c + j] += oi->grad[r * c + j] * vi->data[j];
      }
      if (vi->on_tape) {
        vi->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j)
            vi->grad[j] += oi->grad[r * c + j] * ai->data[r * c + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions & softmax
// ---------------------------------------------------------------------------

namespace detail {

inline Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  return out;
}

}  // namespace detail

inline Tensor sum(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "sum");
  Tensor out = Tensor::zeros(detail::drop_axis(a.shape(), axis));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out.data()[o * sp.inner + i] += a.data()[(o * sp.n + k) * sp.inner + i];
  detail::check_finite("sum", out.data());
  if (Tape* tape = detail::recording_tape({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record("sum", out, [ai, oi, sp] {
      ai->ensure_grad();
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < sp.n; ++k)
          for (std::size_t i = 0; i < sp.inner; ++i)
            ai->grad[(o * sp.n + k) * sp.inner + i] += oi->grad[o * sp.inner + i];
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "mean");
  Tensor s = sum(a, axis);
  return scale(s, 1.0 / static_cast<double>(sp.n));
}

// Max along axis; ties route the gradient to the first maximal element.
inline Tensor max(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "max");
  Tensor out = Tensor::zeros(detail::drop_axis(a.shape(), axis));
  std::vector<std::size_t> arg(out.size(), 0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t best_k = 0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const double v = a.data()[(o * sp.n + k) * sp.inner + i];
        if (v > best) {
          best = v;
          best_k = k;
        }
      }
      out.data()[o * sp.inner + i] = best;
      arg[o * sp.inner + i] = best_k;
    }
  detail::check_finite("max", out.data());
  if (Tape* tape = detail::recording_tape({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record("max", out, [ai, oi, sp, arg] {
      ai->ensure_grad();
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const std::size_t flat = o * sp.inner + i;
          ai->grad[(o * sp.n + arg[flat]) * sp.inner + i] += oi->grad[flat];
        }
    });
  }
  return out;
}

inline Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "softmax");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k)
        m = std::max(m, a.data()[(o * sp.n + k) * sp.inner + i]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const double e = std::exp(a.data()[(o * sp.n + k) * sp.inner + i] - m);
        out.data()[(o * sp.n + k) * sp.inner + i] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k)
        out.data()[(o * sp.n + k) * sp.inner + i] /= z;
    }
  detail::check_finite("softmax", out.data());
  if (Tape* tape = detail::recording_tape({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    tape->record("softmax", out, [ai, oi, sp] {
      ai->ensure_grad();
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          double dot = 0.0;
          for (std::size_t k = 0; k < sp.n; ++k) {
            const std::size_t idx = (o * sp.n + k) * sp.inner + i;
            dot += oi->grad[idx] * oi->data[idx];
          }
          for (std::size_t k = 0; k < sp.n; ++k) {
            const std::size_t idx = (o * sp.n + k) * sp.inner + i;
            ai->grad[idx] += oi->data[idx] * (oi->grad[idx] - dot);
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss, normalization, dropout
// ---------------------------------------------------------------------------

// Mean negative log-softmax probability of the true class. Log-sum-exp is
// computed stably; the backward is the usual (softmax - onehot) / N.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  detail::require(logits.rank() == 2, "cross_entropy: logits must be (N,C), got " +
                                          shape_str(logits.shape()));
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  detail::require(labels.size() == n, "cross_entropy: label count mismatch");
  for (const std::size_t l : labels)
    detail::require(l < c, "cross_entropy: label " + std::to_string(l) +
                               " out of range for " + std::to_string(c) + " classes");
  std::vector<double> probs(n * c);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = logits.data().data() + r * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(row[j] - lse);
    loss += lse - row[labels[r]];
  }
  loss /= static_cast<double>(n);
  Tensor out = Tensor::scalar(loss);
  detail::check_finite("cross_entropy", out.data());
  if (Tape* tape = detail::recording_tape({&logits})) {
    auto li = logits.impl();
    auto oi = out.impl();
    tape->record("cross_entropy", out, [li, oi, probs, labels, n, c] {
      li->ensure_grad();
      const double g = oi->grad[0] / static_cast<double>(n);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j)
          li->grad[r * c + j] += g * (probs[r * c + j] - (labels[r] == j ? 1.0 : 0.0));
    });
  }
  return out;
}

// Per-channel batch normalization over rows of an (N,C) tensor. Training mode
// normalizes with batch statistics (built from primitive ops, so gradients
// flow through the statistics) and updates running estimates; eval mode is a
// deterministic affine map using the running estimates.
struct BatchNorm {
  Tensor gamma, beta;
  std::vector<double> running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  explicit BatchNorm(std::size_t channels)
      : gamma(Tensor::full({channels}, 1.0)),
        beta(Tensor::zeros({channels})),
        running_mean(channels, 0.0),
        running_var(channels, 1.0) {}
};

inline Tensor batch_norm(const Tensor& x, BatchNorm& bn, bool training) {
  detail::require(x.rank() == 2, "batch_norm: input must be (N,C), got " +
                                     shape_str(x.shape()));
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  detail::require(c == bn.gamma.size(), "batch_norm: channel mismatch");
  if (training) {
    detail::require(n >= 2, "batch_norm: training mode needs at least 2 rows");
    Tensor mu = mean(x, 0);
    Tensor xc = add_rowvec(x, scale(mu, -1.0));
    Tensor var = mean(mul(xc, xc), 0);
    Tensor inv = rsqrt_shift(var, bn.eps);
    Tensor xhat = mul_rowvec(xc, inv);
    // Running stats track the unbiased variance, outside the tape.
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    for (std::size_t j = 0; j < c; ++j) {
      bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mu.data()[j];
      bn.running_var[j] =
          (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * var.data()[j] * unbias;
    }
    return add_rowvec(mul_rowvec(xhat, bn.gamma), bn.beta);
  }
  Tensor neg_mean = Tensor::zeros({c});
  Tensor inv = Tensor::zeros({c});
  for (std::size_t j = 0; j < c; ++j) {
    neg_mean.data()[j] = -bn.running_mean[j];
    inv.data()[j] = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
  }
  Tensor xhat = mul_rowvec(add_rowvec(x, neg_mean), inv);
  return add_rowvec(mul_rowvec(xhat, bn.gamma), bn.beta);
}

// Inverted dropout; identity in eval mode or at p == 0.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  detail::require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
  if (!training || p == 0.0) return x;
  Tensor mask = Tensor::zeros(x.shape());
  const double keep = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask.data()[i] = rng.bernoulli(p) ? 0.0 : keep;
  return mul(x, mask);
}

inline Tensor linear(const Tensor& x, const Tensor& w) { return matmul(x, w); }

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam over a fixed parameter list.
class Adam {
public:
  explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    for (const Tensor& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k];
      if (!p.has_grad())
        throw std::invalid_argument("Adam::step: parameter " + std::to_string(k) +
                                    " has no gradient");
      const std::vector<double>& g = p.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g[i];
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m_[k][i] / bc1;
        const double vhat = v_[k][i] / bc2;
        p.data()[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace samcnet
