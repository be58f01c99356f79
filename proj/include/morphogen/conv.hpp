#pragma once

#include "morphogen/parallel.hpp"
#include "morphogen/tensor.hpp"

namespace morphogen {

namespace detail {

inline int64_t conv_out_extent(int64_t n, int64_t k, int64_t stride,
                               int64_t pad) {
  return (n + 2 * pad - k) / stride + 1;
}

// Geometry shared by the three convolution kernels.
struct ConvDims {
  int64_t in_c, in_d, in_h, in_w;
  int64_t out_c, out_d, out_h, out_w;
  int64_t k, stride, pad;

  int64_t in_voxels() const { return in_d * in_h * in_w; }
  int64_t out_voxels() const { return out_d * out_h * out_w; }
  int64_t taps() const { return in_c * k * k * k; }
};

// Column buffer layout: (in_c * k^3) rows x out_voxels columns, one batch
// element at a time. Out-of-bounds taps stay zero.
template <class T>
void im2col(const T* x, const ConvDims& g, std::vector<T>& col) {
  const int64_t cols = g.out_voxels();
  col.assign(static_cast<size_t>(g.taps()) * cols, T(0));
  parallel_for(static_cast<size_t>(g.in_c), [&](size_t ci) {
    const T* xc = x + ci * g.in_voxels();
    T* row_base = col.data() + ci * g.k * g.k * g.k * cols;
    for (int64_t kd = 0; kd < g.k; ++kd)
      for (int64_t kh = 0; kh < g.k; ++kh)
        for (int64_t kw = 0; kw < g.k; ++kw) {
          T* row = row_base + ((kd * g.k + kh) * g.k + kw) * cols;
          for (int64_t od = 0; od < g.out_d; ++od) {
            const int64_t id = od * g.stride + kd - g.pad;
            if (id < 0 || id >= g.in_d) continue;
            for (int64_t oh = 0; oh < g.out_h; ++oh) {
              const int64_t ih = oh * g.stride + kh - g.pad;
              if (ih < 0 || ih >= g.in_h) continue;
              const T* xrow = xc + (id * g.in_h + ih) * g.in_w + kw - g.pad;
              T* crow = row + (od * g.out_h + oh) * g.out_w;
              int64_t lo = 0, hi = g.out_w - 1;
              if (kw - g.pad < 0)
                lo = (g.pad - kw + g.stride - 1) / g.stride;
              const int64_t top = g.in_w - 1 - (kw - g.pad);
              hi = std::min(hi, top < 0 ? -1 : top / g.stride);
              for (int64_t ow = lo; ow <= hi; ++ow)
                crow[ow] = xrow[ow * g.stride];
            }
          }
        }
  });
}

// Scatter-add of a column buffer back onto the input grid.
template <class T>
void col2im_add(const std::vector<T>& col, const ConvDims& g, T* x) {
  const int64_t cols = g.out_voxels();
  parallel_for(static_cast<size_t>(g.in_c), [&](size_t ci) {
    T* xc = x + ci * g.in_voxels();
    const T* row_base = col.data() + ci * g.k * g.k * g.k * cols;
    for (int64_t kd = 0; kd < g.k; ++kd)
      for (int64_t kh = 0; kh < g.k; ++kh)
        for (int64_t kw = 0; kw < g.k; ++kw) {
          const T* row = row_base + ((kd * g.k + kh) * g.k + kw) * cols;
          for (int64_t od = 0; od < g.out_d; ++od) {
            const int64_t id = od * g.stride + kd - g.pad;
            if (id < 0 || id >= g.in_d) continue;
            for (int64_t oh = 0; oh < g.out_h; ++oh) {
              const int64_t ih = oh * g.stride + kh - g.pad;
              if (ih < 0 || ih >= g.in_h) continue;
              T* xrow = xc + (id * g.in_h + ih) * g.in_w + kw - g.pad;
              const T* crow = row + (od * g.out_h + oh) * g.out_w;
              int64_t lo = 0, hi = g.out_w - 1;
              if (kw - g.pad < 0)
                lo = (g.pad - kw + g.stride - 1) / g.stride;
              const int64_t top = g.in_w - 1 - (kw - g.pad);
              hi = std::min(hi, top < 0 ? -1 : top / g.stride);
              for (int64_t ow = lo; ow <= hi; ++ow)
                xrow[ow * g.stride] += crow[ow];
            }
          }
        }
  });
}

// out[m, n] (+)= sum_k a[m, k] * b[k, n]; row blocks of `a` in parallel.
template <class T>
void gemm_accumulate(const T* a, const T* b, T* out, int64_t m, int64_t k,
                     int64_t n, bool zero_out) {
  parallel_for(static_cast<size_t>(m), [&](size_t mi) {
    T* orow = out + mi * n;
    if (zero_out)
      for (int64_t j = 0; j < n; ++j) orow[j] = T(0);
    const T* arow = a + mi * k;
    for (int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  });
}

// out[m, n] (+)= sum_k a[k, m] * b[k, n] (a transposed).
template <class T>
void gemm_at_accumulate(const T* a, const T* b, T* out, int64_t m, int64_t k,
                        int64_t n, bool zero_out) {
  parallel_for(static_cast<size_t>(m), [&](size_t mi) {
    T* orow = out + mi * n;
    if (zero_out)
      for (int64_t j = 0; j < n; ++j) orow[j] = T(0);
    for (int64_t p = 0; p < k; ++p) {
      const T av = a[p * m + mi];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  });
}

// out[m, n] += sum_k a[m, k] * b[n, k] (b transposed); used for weight
// gradients where n indexes taps and k indexes voxels.
template <class T>
void gemm_bt_accumulate(const T* a, const T* b, T* out, int64_t m, int64_t k,
                        int64_t n) {
  parallel_for(static_cast<size_t>(m), [&](size_t mi) {
    T* orow = out + mi * n;
    const T* arow = a + mi * k;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      orow[j] += acc;
    }
  });
}

}  // namespace detail

// 3-D cross-correlation with zero padding, evaluated as im2col + GEMM.
//   x: (B, Cin, D, H, W)   w: (Cout, Cin, k, k, k)   bias: (Cout) or {}
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int64_t stride, int64_t pad) {
  if (x.rank() != 5 || w.rank() != 5)
    fail(ErrorCode::ShapeMismatch,
         "conv3d: expected 5-D input and weight, got " + shape_str(x.shape()) +
             " and " + shape_str(w.shape()));
  if (x.extent(1) != w.extent(1))
    fail(ErrorCode::ShapeMismatch,
         "conv3d: input channels " + std::to_string(x.extent(1)) +
             " vs weight channels " + std::to_string(w.extent(1)));
  if (w.extent(2) != w.extent(3) || w.extent(2) != w.extent(4))
    fail(ErrorCode::ShapeMismatch, "conv3d: kernel must be cubic");
  if (stride < 1 || pad < 0)
    fail(ErrorCode::InvalidArgument, "conv3d: stride must be >=1, pad >=0");
  detail::check_finite(x, "conv3d");
  detail::check_finite(w, "conv3d");
  if (bias.defined()) {
    detail::check_finite(bias, "conv3d");
    if (bias.rank() != 1 || bias.extent(0) != w.extent(0))
      fail(ErrorCode::ShapeMismatch,
           "conv3d: bias shape " + shape_str(bias.shape()));
  }

  detail::ConvDims g;
  g.in_c = x.extent(1);
  g.in_d = x.extent(2);
  g.in_h = x.extent(3);
  g.in_w = x.extent(4);
  g.out_c = w.extent(0);
  g.k = w.extent(2);
  g.stride = stride;
  g.pad = pad;
  g.out_d = detail::conv_out_extent(g.in_d, g.k, stride, pad);
  g.out_h = detail::conv_out_extent(g.in_h, g.k, stride, pad);
  g.out_w = detail::conv_out_extent(g.in_w, g.k, stride, pad);
  if (g.out_d < 1 || g.out_h < 1 || g.out_w < 1)
    fail(ErrorCode::ShapeMismatch,
         "conv3d: kernel " + shape_str(w.shape()) + " does not fit input " +
             shape_str(x.shape()) + " at stride " + std::to_string(stride) +
             ", pad " + std::to_string(pad));

  const int64_t B = x.extent(0);
  Tensor<T> out({B, g.out_c, g.out_d, g.out_h, g.out_w});
  {
    std::vector<T> col;
    for (int64_t b = 0; b < B; ++b) {
      detail::im2col(x.value().data() + b * g.in_c * g.in_voxels(), g, col);
      detail::gemm_accumulate(w.value().data(), col.data(),
                              out.value().data() + b * g.out_c * g.out_voxels(),
                              g.out_c, g.taps(), g.out_voxels(),
                              /*zero_out=*/true);
    }
    if (bias.defined()) {
      const T* bv = bias.value().data();
      T* ov = out.value().data();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < g.out_c; ++co) {
          T* slab = ov + (b * g.out_c + co) * g.out_voxels();
          const T add = bv[co];
          for (int64_t i = 0; i < g.out_voxels(); ++i) slab[i] += add;
        }
    }
  }

  detail::maybe_record<T>({&x, &w, &bias}, out, [x, w, bias, out, g,
                                                 B]() mutable {
    const auto* gptr = detail::out_grad(out);
    if (!gptr) return;
    const T* gv = gptr->data();
    std::vector<T> col;

    if (x.requires_grad()) {
      T* gx = x.grad().data();
      std::vector<T> colgrad;
      for (int64_t b = 0; b < B; ++b) {
        colgrad.assign(static_cast<size_t>(g.taps()) * g.out_voxels(), T(0));
        // colgrad = W^T (taps x out_c) * gout (out_c x voxels)
        detail::gemm_at_accumulate(w.value().data(),
                                   gv + b * g.out_c * g.out_voxels(),
                                   colgrad.data(), g.taps(), g.out_c,
                                   g.out_voxels(), /*zero_out=*/false);
        detail::col2im_add(colgrad, g, gx + b * g.in_c * g.in_voxels());
      }
    }

    if (w.requires_grad()) {
      T* gw = w.grad().data();
      for (int64_t b = 0; b < B; ++b) {
        detail::im2col(x.value().data() + b * g.in_c * g.in_voxels(), g, col);
        // gw (out_c x taps) += gout (out_c x voxels) * col^T
        detail::gemm_bt_accumulate(gv + b * g.out_c * g.out_voxels(),
                                   col.data(), gw, g.out_c, g.out_voxels(),
                                   g.taps());
      }
    }

    if (bias.defined() && bias.requires_grad()) {
      T* gb = bias.grad().data();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < g.out_c; ++co) {
          const T* slab = gv + (b * g.out_c + co) * g.out_voxels();
          T acc = T(0);
          for (int64_t i = 0; i < g.out_voxels(); ++i) acc += slab[i];
          gb[co] += acc;
        }
    }
  });
  return out;
}

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, int64_t stride,
                 int64_t pad) {
  return conv3d(x, w, Tensor<T>(), stride, pad);
}

// Transposed 3-D convolution (adjoint of conv3d in the spatial sense).
//   x: (B, Cin, D, H, W)   w: (Cin, Cout, k, k, k)   bias: (Cout) or {}
// Output extent per axis: (n-1)*stride - 2*pad + k. The forward pass is a
// col2im scatter; gradients are the matching im2col gathers.
template <class T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& bias, int64_t stride, int64_t pad) {
  if (x.rank() != 5 || w.rank() != 5)
    fail(ErrorCode::ShapeMismatch,
         "conv_transpose3d: expected 5-D input and weight, got " +
             shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (x.extent(1) != w.extent(0))
    fail(ErrorCode::ShapeMismatch,
         "conv_transpose3d: input channels " + std::to_string(x.extent(1)) +
             " vs weight channels " + std::to_string(w.extent(0)));
  if (w.extent(2) != w.extent(3) || w.extent(2) != w.extent(4))
    fail(ErrorCode::ShapeMismatch, "conv_transpose3d: kernel must be cubic");
  if (stride < 1 || pad < 0)
    fail(ErrorCode::InvalidArgument,
         "conv_transpose3d: stride must be >=1, pad >=0");
  detail::check_finite(x, "conv_transpose3d");
  detail::check_finite(w, "conv_transpose3d");
  if (bias.defined()) {
    detail::check_finite(bias, "conv_transpose3d");
    if (bias.rank() != 1 || bias.extent(0) != w.extent(1))
      fail(ErrorCode::ShapeMismatch, "conv_transpose3d: bias shape " +
                                         shape_str(bias.shape()));
  }

  const int64_t B = x.extent(0);
  const int64_t Cin = x.extent(1);
  const int64_t Cout = w.extent(1);
  const int64_t k = w.extent(2);
  const int64_t OD = (x.extent(2) - 1) * stride - 2 * pad + k;
  const int64_t OH = (x.extent(3) - 1) * stride - 2 * pad + k;
  const int64_t OW = (x.extent(4) - 1) * stride - 2 * pad + k;
  if (OD < 1 || OH < 1 || OW < 1)
    fail(ErrorCode::ShapeMismatch, "conv_transpose3d: degenerate output for " +
                                       shape_str(x.shape()));

  // In the shared-geometry view the transpose OUTPUT plays the conv input:
  // conv(out, w') with w'[ci=Cout...] recovers x's extents.
  detail::ConvDims g;
  g.in_c = Cout;
  g.in_d = OD;
  g.in_h = OH;
  g.in_w = OW;
  g.out_c = Cin;
  g.k = k;
  g.stride = stride;
  g.pad = pad;
  g.out_d = x.extent(2);
  g.out_h = x.extent(3);
  g.out_w = x.extent(4);

  // Weight reshaped to (taps = Cout*k^3) rows when viewed from the conv
  // side: w[ci][co][k...] is exactly row (co*k^3 + tap) of column ci.
  Tensor<T> out({B, Cout, OD, OH, OW});
  {
    std::vector<T> colgrad;
    for (int64_t b = 0; b < B; ++b) {
      colgrad.assign(static_cast<size_t>(g.taps()) * g.out_voxels(), T(0));
      // colgrad (taps x voxels) = w^T-view (taps x Cin) * x (Cin x voxels)
      detail::gemm_at_accumulate(
          w.value().data(), x.value().data() + b * Cin * g.out_voxels(),
          colgrad.data(), g.taps(), Cin, g.out_voxels(), /*zero_out=*/false);
      T* oslab = out.value().data() + b * Cout * g.in_voxels();
      std::fill(oslab, oslab + Cout * g.in_voxels(), T(0));
      detail::col2im_add(colgrad, g, oslab);
    }
    if (bias.defined()) {
      const T* bv = bias.value().data();
      T* ov = out.value().data();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Cout; ++co) {
          T* slab = ov + (b * Cout + co) * g.in_voxels();
          const T add = bv[co];
          for (int64_t i = 0; i < g.in_voxels(); ++i) slab[i] += add;
        }
    }
  }

  detail::maybe_record<T>({&x, &w, &bias}, out, [x, w, bias, out, g, B, Cin,
                                                 Cout]() mutable {
    const auto* gptr = detail::out_grad(out);
    if (!gptr) return;
    const T* gv = gptr->data();
    std::vector<T> col;

    if (x.requires_grad()) {
      T* gx = x.grad().data();
      for (int64_t b = 0; b < B; ++b) {
        detail::im2col(gv + b * Cout * g.in_voxels(), g, col);
        // gx (Cin x voxels) += w-view (Cin x taps) * col
        detail::gemm_accumulate(w.value().data(), col.data(),
                                gx + b * Cin * g.out_voxels(), Cin, g.taps(),
                                g.out_voxels(), /*zero_out=*/false);
      }
    }

    if (w.requires_grad()) {
      T* gw = w.grad().data();
      for (int64_t b = 0; b < B; ++b) {
        detail::im2col(gv + b * Cout * g.in_voxels(), g, col);
        // gw (Cin x taps) += x (Cin x voxels) * col^T
        detail::gemm_bt_accumulate(x.value().data() + b * Cin * g.out_voxels(),
                                   col.data(), gw, Cin, g.out_voxels(),
                                   g.taps());
      }
    }

    if (bias.defined() && bias.requires_grad()) {
      T* gb = bias.grad().data();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Cout; ++co) {
          const T* slab = gv + (b * Cout + co) * g.in_voxels();
          T acc = T(0);
          for (int64_t i = 0; i < g.in_voxels(); ++i) acc += slab[i];
          gb[co] += acc;
        }
    }
  });
  return out;
}

template <class T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& w,
                           int64_t stride, int64_t pad) {
  return conv_transpose3d(x, w, Tensor<T>(), stride, pad);
}

}  // namespace morphogen
