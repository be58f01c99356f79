#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "morphogen/errors.hpp"

namespace morphogen {

// Dense symmetric matrices in row-major order, sized for embedding
// dimensions (d <= a few hundred).

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
// eigenvalues ascending; eigenvectors_out rows are the matching
// eigenvectors. Deterministic sweep order.
inline std::vector<double> symmetric_eig(std::vector<double> a, int n,
                                         std::vector<double>* eigvecs_out,
                                         int max_sweeps = 64) {
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[i * n + i] = 1.0;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-24) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }

  std::vector<double> eigvals(n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) {
    eigvals[i] = a[i * n + i];
    order[i] = i;
  }
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return eigvals[x] < eigvals[y]; });
  std::vector<double> sorted_vals(n);
  for (int i = 0; i < n; ++i) sorted_vals[i] = eigvals[order[i]];
  if (eigvecs_out) {
    eigvecs_out->assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k)
        (*eigvecs_out)[i * n + k] = v[k * n + order[i]];
  }
  return sorted_vals;
}

inline std::vector<double> mat_mul_sq(const std::vector<double>& a,
                                      const std::vector<double>& b, int n) {
  std::vector<double> c(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      if (aik == 0.0) continue;
      for (int j = 0; j < n; ++j) c[i * n + j] += aik * b[k * n + j];
    }
  return c;
}

// Symmetric PSD square root via eigendecomposition; eigenvalues slightly
// below zero (>= -tol) are clamped, anything lower raises.
inline std::vector<double> symmetric_sqrt(const std::vector<double>& m, int n,
                                          double clamp_tol = 1e-8) {
  std::vector<double> vecs;
  std::vector<double> vals = symmetric_eig(m, n, &vecs);
  for (double& lambda : vals) {
    if (lambda < -clamp_tol)
      fail(ErrorCode::NonPsd,
           "matrix square root: eigenvalue " + std::to_string(lambda) +
               " below -" + std::to_string(clamp_tol));
    lambda = lambda > 0 ? std::sqrt(lambda) : 0.0;
  }
  // sum_i sqrt(l_i) * v_i v_i^T, rows of `vecs` are eigenvectors
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int e = 0; e < n; ++e) {
    const double l = vals[e];
    if (l == 0.0) continue;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        out[i * n + j] += l * vecs[e * n + i] * vecs[e * n + j];
  }
  return out;
}

}  // namespace morphogen
