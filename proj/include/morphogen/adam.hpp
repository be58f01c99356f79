#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "morphogen/rng.hpp"
#include "morphogen/tensor.hpp"

namespace morphogen {

// Trainable tensor plus its Adam state.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  std::vector<T> m;  // first moment, sized on first step
  std::vector<T> v;  // second moment
  int64_t step = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> t) : name(std::move(n)), tensor(std::move(t)) {
    tensor.set_requires_grad(true);
  }
};

template <class T>
struct AdamConfig {
  T lr = T(3e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.99);
  T eps = T(1e-8);
};

// One bias-corrected Adam update over `params`; gradients are zeroed after
// the step. Parameters whose grads were never touched by backward update
// with g = 0.
template <class T>
void adam_step(const std::vector<Parameter<T>*>& params,
               const AdamConfig<T>& cfg) {
  for (Parameter<T>* p : params) {
    if (!p->tensor.requires_grad())
      fail(ErrorCode::MissingGrad, "adam_step: parameter '" + p->name +
                                       "' does not require grad");
    const size_t n = p->tensor.value().size();
    if (p->m.empty()) {
      p->m.assign(n, T(0));
      p->v.assign(n, T(0));
    }
    auto& grad = p->tensor.grad();
    for (T g : grad)
      if (!std::isfinite(static_cast<double>(g)))
        fail(ErrorCode::NonFiniteInput,
             "adam_step: non-finite gradient in '" + p->name + "'");
    p->step += 1;
    const T bc1 = T(1) - std::pow(cfg.beta1, static_cast<T>(p->step));
    const T bc2 = T(1) - std::pow(cfg.beta2, static_cast<T>(p->step));
    auto& w = p->tensor.value();
    for (size_t i = 0; i < n; ++i) {
      p->m[i] = cfg.beta1 * p->m[i] + (T(1) - cfg.beta1) * grad[i];
      p->v[i] = cfg.beta2 * p->v[i] + (T(1) - cfg.beta2) * grad[i] * grad[i];
      const T mhat = p->m[i] / bc1;
      const T vhat = p->v[i] / bc2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    p->tensor.zero_grad();
  }
}

// ---- common initialisers ----

template <class T>
Tensor<T> normal_init(Shape shape, T stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.value()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

// Kaiming-style fan-in scaling for conv / linear weights.
template <class T>
Tensor<T> kaiming_init(Shape shape, int64_t fan_in, Rng& rng) {
  const T stddev = std::sqrt(T(2) / static_cast<T>(fan_in));
  return normal_init<T>(std::move(shape), stddev, rng);
}

}  // namespace morphogen
