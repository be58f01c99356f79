#pragma once

#include <cmath>

#include "morphogen/tensor.hpp"

namespace morphogen {

// Matrix product. Accepts (M,K)x(K,N) or batched (B,M,K)x(B,K,N); with
// transpose_b the second factor is (N,K) / (B,N,K).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b,
                 bool transpose_b = false) {
  detail::check_finite(a, "matmul");
  detail::check_finite(b, "matmul");
  const bool batched = a.rank() == 3;
  if ((batched && b.rank() != 3) || (!batched && (a.rank() != 2 || b.rank() != 2)))
    fail(ErrorCode::ShapeMismatch,
         "matmul: ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t nb = batched ? a.extent(0) : 1;
  const int64_t m = a.extent(batched ? 1 : 0);
  const int64_t k = a.extent(batched ? 2 : 1);
  const int64_t bk = transpose_b ? b.extent(batched ? 2 : 1)
                                 : b.extent(batched ? 1 : 0);
  const int64_t n = transpose_b ? b.extent(batched ? 1 : 0)
                                : b.extent(batched ? 2 : 1);
  if (bk != k || (batched && b.extent(0) != nb))
    fail(ErrorCode::ShapeMismatch,
         "matmul: inner dims " + shape_str(a.shape()) + " x " +
             shape_str(b.shape()) + (transpose_b ? " (b transposed)" : ""));

  Shape out_shape = batched ? Shape{nb, m, n} : Shape{m, n};
  Tensor<T> out(out_shape);
  const T* av = a.value().data();
  const T* bv = b.value().data();
  T* ov = out.value().data();
  for (int64_t bi = 0; bi < nb; ++bi) {
    const T* A = av + bi * m * k;
    const T* B = bv + bi * k * n;
    T* O = ov + bi * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        T acc = T(0);
        if (transpose_b) {
          const T* brow = B + j * k;
          for (int64_t p = 0; p < k; ++p) acc += A[i * k + p] * brow[p];
        } else {
          for (int64_t p = 0; p < k; ++p) acc += A[i * k + p] * B[p * n + j];
        }
        O[i * n + j] = acc;
      }
  }

  detail::maybe_record<T>({&a, &b}, out, [a, b, out, nb, m, k, n,
                                          transpose_b]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g) return;
    const T* av2 = a.value().data();
    const T* bv2 = b.value().data();
    for (int64_t bi = 0; bi < nb; ++bi) {
      const T* A = av2 + bi * m * k;
      const T* B = bv2 + bi * k * n;
      const T* G = g->data() + bi * m * n;
      if (a.requires_grad()) {
        T* GA = a.grad().data() + bi * m * k;
        // dA = G * B^T (or G * B when b was transposed)
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            T acc = T(0);
            if (transpose_b)
              for (int64_t j = 0; j < n; ++j) acc += G[i * n + j] * B[j * k + p];
            else
              for (int64_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
            GA[i * k + p] += acc;
          }
      }
      if (b.requires_grad()) {
        T* GB = b.grad().data() + bi * k * n;
        if (transpose_b) {
          // b is (N,K): dB[j,p] = sum_i G[i,j] A[i,p]
          for (int64_t j = 0; j < n; ++j)
            for (int64_t p = 0; p < k; ++p) {
              T acc = T(0);
              for (int64_t i = 0; i < m; ++i) acc += G[i * n + j] * A[i * k + p];
              GB[j * k + p] += acc;
            }
        } else {
          // dB[p,j] = sum_i A[i,p] G[i,j]
          for (int64_t p = 0; p < k; ++p)
            for (int64_t j = 0; j < n; ++j) {
              T acc = T(0);
              for (int64_t i = 0; i < m; ++i) acc += A[i * k + p] * G[i * n + j];
              GB[p * n + j] += acc;
            }
        }
      }
    }
  });
  return out;
}

// Softmax along `axis`; rows are shifted by their max before exponentiation.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, size_t axis) {
  detail::check_finite(x, "softmax");
  if (axis >= x.rank())
    fail(ErrorCode::InvalidArgument, "softmax: axis out of range");
  const Shape& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= s[d];
  for (size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const int64_t len = s[axis];

  Tensor<T> out(s);
  const auto& xv = x.value();
  auto& ov = out.value();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * len * inner + i;
      T mx = xv[base];
      for (int64_t j = 1; j < len; ++j)
        mx = std::max(mx, xv[base + j * inner]);
      T sum = T(0);
      for (int64_t j = 0; j < len; ++j) {
        T e = std::exp(xv[base + j * inner] - mx);
        ov[base + j * inner] = e;
        sum += e;
      }
      T inv = T(1) / sum;
      for (int64_t j = 0; j < len; ++j) ov[base + j * inner] *= inv;
    }

  detail::maybe_record<T>({&x}, out, [x, out, outer, inner, len]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g || !x.requires_grad()) return;
    auto& gx = x.grad();
    const auto& ov2 = out.value();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * len * inner + i;
        T dot = T(0);
        for (int64_t j = 0; j < len; ++j)
          dot += (*g)[base + j * inner] * ov2[base + j * inner];
        for (int64_t j = 0; j < len; ++j)
          gx[base + j * inner] +=
              ov2[base + j * inner] * ((*g)[base + j * inner] - dot);
      }
  });
  return out;
}

// Instance normalisation over the spatial dims of (B, C, ...spatial),
// before any affine transform.
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5)) {
  detail::check_finite(x, "instance_norm");
  if (x.rank() < 3)
    fail(ErrorCode::ShapeMismatch,
         "instance_norm: expected (B,C,spatial...), got " +
             shape_str(x.shape()));
  const int64_t groups = x.extent(0) * x.extent(1);
  const int64_t n = x.numel() / groups;
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  auto& ov = out.value();
  std::vector<T> inv_std(groups);
  for (int64_t gidx = 0; gidx < groups; ++gidx) {
    const int64_t base = gidx * n;
    T mu = T(0);
    for (int64_t i = 0; i < n; ++i) mu += xv[base + i];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (int64_t i = 0; i < n; ++i) {
      T d = xv[base + i] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    T is = T(1) / std::sqrt(var + eps);
    inv_std[gidx] = is;
    for (int64_t i = 0; i < n; ++i) ov[base + i] = (xv[base + i] - mu) * is;
  }

  detail::maybe_record<T>({&x}, out, [x, out, groups, n, inv_std]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g || !x.requires_grad()) return;
    auto& gx = x.grad();
    const auto& yv = out.value();
    for (int64_t gidx = 0; gidx < groups; ++gidx) {
      const int64_t base = gidx * n;
      T gmean = T(0), gydot = T(0);
      for (int64_t i = 0; i < n; ++i) {
        gmean += (*g)[base + i];
        gydot += (*g)[base + i] * yv[base + i];
      }
      gmean /= static_cast<T>(n);
      gydot /= static_cast<T>(n);
      const T is = inv_std[gidx];
      for (int64_t i = 0; i < n; ++i)
        gx[base + i] += is * ((*g)[base + i] - gmean - yv[base + i] * gydot);
    }
  });
  return out;
}

// Axis permutation; out axis i takes input axis perm[i]. Backward applies
// the inverse permutation to the gradient.
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<size_t>& perm) {
  const size_t rank = x.rank();
  if (perm.size() != rank)
    fail(ErrorCode::InvalidArgument, "permute: rank mismatch");
  std::vector<bool> seen(rank, false);
  for (size_t p : perm) {
    if (p >= rank || seen[p])
      fail(ErrorCode::InvalidArgument, "permute: invalid permutation");
    seen[p] = true;
  }
  const Shape& in_shape = x.shape();
  Shape out_shape(rank);
  for (size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];

  std::vector<int64_t> in_strides(rank, 1), out_strides(rank, 1);
  for (size_t i = rank - 1; i > 0; --i)
    in_strides[i - 1] = in_strides[i] * in_shape[i];
  for (size_t i = rank - 1; i > 0; --i)
    out_strides[i - 1] = out_strides[i] * out_shape[i];

  Tensor<T> out(out_shape);
  const auto& xv = x.value();
  auto& ov = out.value();
  const int64_t n = x.numel();
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t rem = flat;
    int64_t src = 0;
    for (size_t i = 0; i < rank; ++i) {
      const int64_t coord = rem / out_strides[i];
      rem -= coord * out_strides[i];
      src += coord * in_strides[perm[i]];
    }
    ov[flat] = xv[src];
  }

  detail::maybe_record<T>({&x}, out, [x, out, perm, in_strides,
                                      out_strides]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g || !x.requires_grad()) return;
    auto& gx = x.grad();
    const size_t rank = perm.size();
    const int64_t n = out.numel();
    for (int64_t flat = 0; flat < n; ++flat) {
      int64_t rem = flat;
      int64_t src = 0;
      for (size_t i = 0; i < rank; ++i) {
        const int64_t coord = rem / out_strides[i];
        rem -= coord * out_strides[i];
        src += coord * in_strides[perm[i]];
      }
      gx[src] += (*g)[flat];
    }
  });
  return out;
}

// x: (N, F), bias: (F).
template <class T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.extent(0) != x.extent(1))
    fail(ErrorCode::ShapeMismatch, "add_row_bias: x " + shape_str(x.shape()) +
                                       ", bias " + shape_str(bias.shape()));
  detail::check_finite(x, "add_row_bias");
  detail::check_finite(bias, "add_row_bias");
  const int64_t n = x.extent(0), f = x.extent(1);
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  const auto& bv = bias.value();
  auto& ov = out.value();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < f; ++j) ov[i * f + j] = xv[i * f + j] + bv[j];
  detail::maybe_record<T>({&x, &bias}, out, [x, bias, out, n, f]() mutable {
    const auto* g = detail::out_grad(out);
    if (!g) return;
    if (x.requires_grad()) {
      auto& gx = x.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*g)[i];
    }
    if (bias.requires_grad()) {
      auto& gb = bias.grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < f; ++j) gb[j] += (*g)[i * f + j];
    }
  });
  return out;
}

// Fixed sinusoidal features for integer timesteps: half sines, half
// cosines over geometrically spaced frequencies. Constant (no gradient).
template <class T>
Tensor<T> sinusoidal_embedding(const std::vector<int64_t>& timesteps,
                               int64_t dim) {
  const int64_t half = dim / 2;
  Tensor<T> out({static_cast<int64_t>(timesteps.size()), dim});
  auto& ov = out.value();
  for (size_t i = 0; i < timesteps.size(); ++i)
    for (int64_t j = 0; j < half; ++j) {
      const double freq =
          std::exp(-std::log(10000.0) * static_cast<double>(j) /
                   static_cast<double>(std::max<int64_t>(half - 1, 1)));
      const double angle = static_cast<double>(timesteps[i]) * freq;
      ov[i * dim + j] = static_cast<T>(std::sin(angle));
      ov[i * dim + half + j] = static_cast<T>(std::cos(angle));
    }
  return out;
}

// softmax(q k^T / sqrt(d)) v over (B, positions, d) operands. Composed from
// recorded primitives, so gradients flow through every factor.
template <class T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    fail(ErrorCode::ShapeMismatch, "scaled_dot_attention: expected 3-D (B,P,d)");
  if (q.extent(2) != k.extent(2) || k.extent(1) != v.extent(1) ||
      q.extent(0) != k.extent(0) || q.extent(0) != v.extent(0))
    fail(ErrorCode::ShapeMismatch,
         "scaled_dot_attention: q " + shape_str(q.shape()) + ", k " +
             shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(q.extent(2)));
  Tensor<T> logits = scale(matmul(q, k, /*transpose_b=*/true), inv_sqrt_d);
  Tensor<T> weights = softmax(logits, 2);
  return matmul(weights, v);
}

}  // namespace morphogen
