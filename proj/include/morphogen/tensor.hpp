#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "morphogen/errors.hpp"

namespace morphogen {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace detail {

template <class T>
struct Storage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation (reads as zeros)
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major tensor. Cheap shared handle; all ops are functional and
// allocate fresh outputs.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : data_(std::make_shared<detail::Storage<T>>()) {
    data_->shape = std::move(shape);
    data_->value.assign(static_cast<size_t>(shape_numel(data_->shape)), T(0));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.value().begin(), t.value().end(), v);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor from(Shape shape, std::vector<T> values) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
      fail(ErrorCode::ShapeMismatch,
           "tensor data length " + std::to_string(values.size()) +
               " does not match shape " + shape_str(shape));
    Tensor t;
    t.data_ = std::make_shared<detail::Storage<T>>();
    t.data_->shape = std::move(shape);
    t.data_->value = std::move(values);
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  int64_t numel() const { return static_cast<int64_t>(data_->value.size()); }
  int64_t extent(size_t axis) const { return data_->shape[axis]; }
  size_t rank() const { return data_->shape.size(); }

  std::vector<T>& value() { return data_->value; }
  const std::vector<T>& value() const { return data_->value; }
  T item() const {
    if (numel() != 1) fail(ErrorCode::NotScalar, "item() on non-scalar tensor");
    return data_->value[0];
  }

  bool requires_grad() const { return data_ && data_->requires_grad; }
  void set_requires_grad(bool rg) { data_->requires_grad = rg; }

  bool grad_allocated() const { return data_ && !data_->grad.empty(); }
  // Grad buffer, zero-initialised on first access. Tensor is a shared
  // handle, so accumulation is allowed through const handles too.
  std::vector<T>& grad() const {
    if (data_->grad.empty()) data_->grad.assign(data_->value.size(), T(0));
    return data_->grad;
  }
  void zero_grad() {
    if (!data_->grad.empty())
      std::fill(data_->grad.begin(), data_->grad.end(), T(0));
  }

  // Identity check (same storage), used by tape bookkeeping and tests.
  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  std::shared_ptr<detail::Storage<T>> data_;
};

// Define-by-run tape. Constructing a Tape makes it the active tape for the
// current thread; ops append a backward closure whenever an input requires
// grad. Rebuilt every forward pass.
template <class T>
class Tape {
 public:
  Tape() {
    prev_ = active_;
    active_ = this;
  }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  size_t size() const { return nodes_.size(); }

  // Reverse sweep. Each recorded operation is visited exactly once, in
  // reverse topological (= recording) order.
  void backward(Tensor<T> loss) {
    if (consumed_)
      fail(ErrorCode::TapeConsumed, "backward called twice on a consumed tape");
    if (!loss.defined() || loss.numel() != 1)
      fail(ErrorCode::NotScalar, "backward requires a scalar loss");
    consumed_ = true;
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  static thread_local Tape* active_;
  Tape* prev_ = nullptr;
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

template <class T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

namespace detail {

// x - x is zero for finite values and NaN for NaN/Inf; the loop form
// vectorises where a std::isfinite call would not.
template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  const auto& v = t.value();
  T acc = T(0);
  for (size_t i = 0; i < v.size(); ++i) acc += v[i] - v[i];
  if (!(acc == T(0)))
    fail(ErrorCode::NonFiniteInput,
         std::string(op) + ": non-finite value in input");
}

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": shape " +
                                       shape_str(a.shape()) + " vs " +
                                       shape_str(b.shape()));
}

// Records a node if grads are needed; returns true when the output takes
// part in differentiation.
template <class T>
bool maybe_record(std::initializer_list<const Tensor<T>*> inputs,
                  Tensor<T>& out, std::function<void()> backward_fn) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return false;
  bool any = false;
  for (const Tensor<T>* in : inputs) any = any || in->requires_grad();
  if (!any) return false;
  out.set_requires_grad(true);
  tape->record(std::move(backward_fn));
  return true;
}

// Output grad of a node, or nullptr when the node is off every path to the
// loss (its buffer was never touched).
template <class T>
const std::vector<T>* out_grad(const Tensor<T>& out) {
  return out.grad_allocated() ? &out.grad() : nullptr;
}

}  // namespace detail

// ---- elementwise ----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  detail::check_finite(a, "add");
  detail::check_finite(b, "add");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  detail::maybe_record<T>({&a, &b}, out, [a, b, out]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g) return;
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  detail::check_finite(a, "sub");
  detail::check_finite(b, "sub");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  detail::maybe_record<T>({&a, &b}, out, [a, b, out]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g) return;
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < g->size(); ++i) gb[i] -= (*g)[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  detail::check_finite(a, "mul");
  detail::check_finite(b, "mul");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  detail::maybe_record<T>({&a, &b}, out, [a, b, out]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g) return;
    if (a.requires_grad()) {
      auto& ga = a.grad();
      const auto& bv2 = b.value();
      for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * bv2[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      const auto& av2 = a.value();
      for (size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i] * av2[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  detail::check_finite(a, "scale");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
  detail::maybe_record<T>({&a}, out, [a, out, s]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g || !a.requires_grad()) return;
    auto& ga = a.grad();
    for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * s;
  });
  return out;
}

// ---- activations ----

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  detail::check_finite(a, "relu");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > T(0) ? av[i] : T(0);
  detail::maybe_record<T>({&a}, out, [a, out]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g || !a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& av2 = a.value();
    for (size_t i = 0; i < g->size(); ++i)
      if (av2[i] > T(0)) ga[i] += (*g)[i];
  });
  return out;
}

// relu(offset + slope*x); the hinge-loss building block.
template <class T>
Tensor<T> hinge_relu(const Tensor<T>& a, T offset, T slope) {
  detail::check_finite(a, "hinge_relu");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) {
    T z = offset + slope * av[i];
    ov[i] = z > T(0) ? z : T(0);
  }
  detail::maybe_record<T>({&a}, out, [a, out, offset, slope]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g || !a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& av2 = a.value();
    for (size_t i = 0; i < g->size(); ++i)
      if (offset + slope * av2[i] > T(0)) ga[i] += (*g)[i] * slope;
  });
  return out;
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
  detail::check_finite(a, "silu");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) {
    T s = T(1) / (T(1) + std::exp(-av[i]));
    ov[i] = av[i] * s;
  }
  detail::maybe_record<T>({&a}, out, [a, out]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g || !a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& av2 = a.value();
    for (size_t i = 0; i < g->size(); ++i) {
      T s = T(1) / (T(1) + std::exp(-av2[i]));
      ga[i] += (*g)[i] * s * (T(1) + av2[i] * (T(1) - s));
    }
  });
  return out;
}

template <class T>
Tensor<T> tanh_op(const Tensor<T>& a) {
  detail::check_finite(a, "tanh");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(av[i]);
  detail::maybe_record<T>({&a}, out, [a, out]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g || !a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& ov2 = out.value();
    for (size_t i = 0; i < g->size(); ++i)
      ga[i] += (*g)[i] * (T(1) - ov2[i] * ov2[i]);
  });
  return out;
}

// ---- reductions / losses ----

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  detail::check_finite(a, "mean");
  const auto& av = a.value();
  T acc = T(0);
  for (T v : av) acc += v;
  T inv = T(1) / static_cast<T>(av.size());
  Tensor<T> out = Tensor<T>::scalar(acc * inv);
  detail::maybe_record<T>({&a}, out, [a, out, inv]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g || !a.requires_grad()) return;
    T gv = (*g)[0] * inv;
    auto& ga = a.grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
  });
  return out;
}

template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mse");
  detail::check_finite(a, "mse");
  detail::check_finite(b, "mse");
  const auto& av = a.value();
  const auto& bv = b.value();
  T acc = T(0);
  for (size_t i = 0; i < av.size(); ++i) {
    T d = av[i] - bv[i];
    acc += d * d;
  }
  T inv = T(1) / static_cast<T>(av.size());
  Tensor<T> out = Tensor<T>::scalar(acc * inv);
  detail::maybe_record<T>({&a, &b}, out, [a, b, out, inv]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g) return;
    T gv = (*g)[0] * T(2) * inv;
    const auto& av2 = a.value();
    const auto& bv2 = b.value();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += gv * (av2[i] - bv2[i]);
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] -= gv * (av2[i] - bv2[i]);
    }
  });
  return out;
}

template <class T>
Tensor<T> l1(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "l1");
  detail::check_finite(a, "l1");
  detail::check_finite(b, "l1");
  const auto& av = a.value();
  const auto& bv = b.value();
  T acc = T(0);
  for (size_t i = 0; i < av.size(); ++i) acc += std::abs(av[i] - bv[i]);
  T inv = T(1) / static_cast<T>(av.size());
  Tensor<T> out = Tensor<T>::scalar(acc * inv);
  detail::maybe_record<T>({&a, &b}, out, [a, b, out, inv]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g) return;
    T gv = (*g)[0] * inv;
    const auto& av2 = a.value();
    const auto& bv2 = b.value();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < ga.size(); ++i) {
        T d = av2[i] - bv2[i];
        ga[i] += gv * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
      }
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < gb.size(); ++i) {
        T d = av2[i] - bv2[i];
        gb[i] -= gv * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
      }
    }
  });
  return out;
}

// ---- shape ops ----

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    fail(ErrorCode::ShapeMismatch, "reshape: numel mismatch " +
                                       shape_str(a.shape()) + " -> " +
                                       shape_str(shape));
  Tensor<T> out = Tensor<T>::from(std::move(shape), a.value());
  detail::maybe_record<T>({&a}, out, [a, out]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g || !a.requires_grad()) return;
    auto& ga = a.grad();
    for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
  });
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t axis) {
  if (parts.empty()) fail(ErrorCode::InvalidArgument, "concat: no inputs");
  Shape shape = parts[0].shape();
  if (axis >= shape.size())
    fail(ErrorCode::InvalidArgument, "concat: axis out of range");
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size())
      fail(ErrorCode::ShapeMismatch, "concat: rank mismatch");
    for (size_t d = 0; d < shape.size(); ++d)
      if (d != axis && p.shape()[d] != shape[d])
        fail(ErrorCode::ShapeMismatch, "concat: extent mismatch at axis " +
                                           std::to_string(d));
    total += p.shape()[axis];
  }
  shape[axis] = total;

  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];

  Tensor<T> out(shape);
  auto& ov = out.value();
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t width = p.shape()[axis] * inner;
    const auto& pv = p.value();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pv.begin() + o * width, pv.begin() + (o + 1) * width,
                ov.begin() + o * total * inner + offset);
    offset += width;
  }

  Tape<T>* tape = Tape<T>::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    auto parts_copy = parts;
    tape->record([parts_copy, out, outer, inner, total]() mutable {
      const auto* g = detail::out_grad(out);
      if (!g) return;
      int64_t off = 0;
      for (auto& p : parts_copy) {
        const int64_t w = p.numel() / outer;
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int64_t o = 0; o < outer; ++o) {
            const T* src = g->data() + o * total * inner + off;
            T* dst = gp.data() + o * w;
            for (int64_t i = 0; i < w; ++i) dst[i] += src[i];
          }
        }
        off += w;
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, size_t axis, int64_t start, int64_t len) {
  const Shape& in = a.shape();
  if (axis >= in.size() || start < 0 || len < 1 || start + len > in[axis])
    fail(ErrorCode::InvalidArgument, "slice: bad range on axis " +
                                         std::to_string(axis));
  Shape shape = in;
  shape[axis] = len;
  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= in[d];
  for (size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];

  Tensor<T> out(shape);
  auto& ov = out.value();
  const auto& av = a.value();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(av.begin() + (o * in[axis] + start) * inner,
              av.begin() + (o * in[axis] + start + len) * inner,
              ov.begin() + o * len * inner);
  int64_t total = in[axis];
  detail::maybe_record<T>(
      {&a}, out, [a, out, outer, inner, total, start, len]() mutable {
        const auto* g = detail::out_grad(out);
        if (!g || !a.requires_grad()) return;
        auto& ga = a.grad();
        for (int64_t o = 0; o < outer; ++o) {
          const T* src = g->data() + o * len * inner;
          T* dst = ga.data() + (o * total + start) * inner;
          for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
      });
  return out;
}

// Forward identity; blocks all gradient flow into `a`.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
  return Tensor<T>::from(a.shape(), a.value());
}

// Value taken bit-exactly from `values`; gradient copied unchanged to
// `latent`. The straight-through estimator across a non-differentiable
// selection.
template <class T>
Tensor<T> straight_through(const Tensor<T>& values, const Tensor<T>& latent) {
  detail::check_same_shape(values, latent, "straight_through");
  Tensor<T> out = Tensor<T>::from(values.shape(), values.value());
  detail::maybe_record<T>({&latent}, out, [latent, out]() {
    const auto* g = detail::out_grad(out);
    if (!g || !latent.requires_grad()) return;
    auto& gl = latent.grad();
    for (size_t i = 0; i < g->size(); ++i) gl[i] += (*g)[i];
  });
  return out;
}

// Rows of `entries` selected by index; backward scatter-adds into entries.
// The selection itself carries no gradient.
template <class T>
Tensor<T> embedding_gather(const Tensor<T>& entries,
                           const std::vector<int64_t>& indices) {
  if (entries.rank() != 2)
    fail(ErrorCode::InvalidArgument, "embedding_gather: entries must be 2-D");
  const int64_t k = entries.extent(0);
  const int64_t width = entries.extent(1);
  for (int64_t idx : indices)
    if (idx < 0 || idx >= k)
      fail(ErrorCode::InvalidArgument, "embedding_gather: index out of range");
  Tensor<T> out({static_cast<int64_t>(indices.size()), width});
  const auto& ev = entries.value();
  auto& ov = out.value();
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy(ev.begin() + indices[i] * width,
              ev.begin() + (indices[i] + 1) * width, ov.begin() + i * width);
  detail::maybe_record<T>({&entries}, out, [entries, out, indices,
                                            width]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g || !entries.requires_grad()) return;
    auto& ge = entries.grad();
    for (size_t i = 0; i < indices.size(); ++i) {
      const T* src = g->data() + i * width;
      T* dst = ge.data() + indices[i] * width;
      for (int64_t j = 0; j < width; ++j) dst[j] += src[j];
    }
  });
  return out;
}

// x: (B, C, ...spatial), bias: (B, C). Broadcast add over spatial positions;
// the timestep-embedding injection path.
template <class T>
Tensor<T> add_bc_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() < 2 || bias.rank() != 2 || bias.extent(0) != x.extent(0) ||
      bias.extent(1) != x.extent(1))
    fail(ErrorCode::ShapeMismatch, "add_bc_bias: x " + shape_str(x.shape()) +
                                       ", bias " + shape_str(bias.shape()));
  detail::check_finite(x, "add_bc_bias");
  detail::check_finite(bias, "add_bc_bias");
  const int64_t bc = x.extent(0) * x.extent(1);
  const int64_t spatial = x.numel() / bc;
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  const auto& bv = bias.value();
  auto& ov = out.value();
  for (int64_t g = 0; g < bc; ++g) {
    T b = bv[g];
    for (int64_t i = 0; i < spatial; ++i)
      ov[g * spatial + i] = xv[g * spatial + i] + b;
  }
  detail::maybe_record<T>({&x, &bias}, out, [x, bias, out, bc,
                                             spatial]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g) return;
    if (x.requires_grad()) {
      auto& gx = x.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*g)[i];
    }
    if (bias.requires_grad()) {
      auto& gb = bias.grad();
      for (int64_t j = 0; j < bc; ++j) {
        T acc = T(0);
        for (int64_t i = 0; i < spatial; ++i) acc += (*g)[j * spatial + i];
        gb[j] += acc;
      }
    }
  });
  return out;
}

// x: (B, C, ...spatial); gamma, beta: (C). y = x*gamma_c + beta_c.
template <class T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& gamma,
                         const Tensor<T>& beta) {
  if (x.rank() < 2 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.extent(0) != x.extent(1) || beta.extent(0) != x.extent(1))
    fail(ErrorCode::ShapeMismatch, "channel_affine: x " +
                                       shape_str(x.shape()) + ", gamma " +
                                       shape_str(gamma.shape()));
  detail::check_finite(x, "channel_affine");
  const int64_t batch = x.extent(0);
  const int64_t channels = x.extent(1);
  const int64_t spatial = x.numel() / (batch * channels);
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  auto& ov = out.value();
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t c = 0; c < channels; ++c) {
      const int64_t base = (b * channels + c) * spatial;
      for (int64_t i = 0; i < spatial; ++i)
        ov[base + i] = xv[base + i] * gv[c] + bv[c];
    }
  detail::maybe_record<T>(
      {&x, &gamma, &beta}, out,
      [x, gamma, beta, out, batch, channels, spatial]() mutable {
        const auto* g = detail::out_grad(out);
        if (!g) return;
        const auto& xv2 = x.value();
        const auto& gv2 = gamma.value();
        if (x.requires_grad()) {
          auto& gx = x.grad();
          for (int64_t b = 0; b < batch; ++b)
            for (int64_t c = 0; c < channels; ++c) {
              const int64_t base = (b * channels + c) * spatial;
              for (int64_t i = 0; i < spatial; ++i)
                gx[base + i] += (*g)[base + i] * gv2[c];
            }
        }
        if (gamma.requires_grad()) {
          auto& gg = gamma.grad();
          for (int64_t b = 0; b < batch; ++b)
            for (int64_t c = 0; c < channels; ++c) {
              const int64_t base = (b * channels + c) * spatial;
              T acc = T(0);
              for (int64_t i = 0; i < spatial; ++i)
                acc += (*g)[base + i] * xv2[base + i];
              gg[c] += acc;
            }
        }
        if (beta.requires_grad()) {
          auto& gb = beta.grad();
          for (int64_t b = 0; b < batch; ++b)
            for (int64_t c = 0; c < channels; ++c) {
              const int64_t base = (b * channels + c) * spatial;
              T acc = T(0);
              for (int64_t i = 0; i < spatial; ++i) acc += (*g)[base + i];
              gb[c] += acc;
            }
        }
      });
  return out;
}

}  // namespace morphogen
