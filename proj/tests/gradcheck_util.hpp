#pragma once

// Central finite-difference gradient checker. Runs ops in f64 shadow mode
// (h = 1e-4) and compares against the recorded-tape gradients at relative
// tolerance 1e-4. Lives in test code only; independent of the backward
// implementation it checks.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "morphogen/rng.hpp"
#include "morphogen/tensor.hpp"

namespace gradcheck {

struct Result {
  bool ok = true;
  double worst = 0.0;
  std::string detail;
};

// fn must build the scalar loss from the current input values each call.
inline Result check(const std::function<morphogen::Tensor<double>()>& fn,
                    std::vector<morphogen::Tensor<double>> inputs,
                    double tol = 1e-4, double h = 1e-4) {
  using morphogen::Tape;
  using morphogen::Tensor;
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<double> tape;
    Tensor<double> loss = fn();
    tape.backward(loss);
  }
  Result r;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& t = inputs[ti];
    for (size_t i = 0; i < t.value().size(); ++i) {
      const double orig = t.value()[i];
      t.value()[i] = orig + h;
      const double up = fn().item();  // no active tape: pure forward
      t.value()[i] = orig - h;
      const double down = fn().item();
      t.value()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = t.grad_allocated() ? t.grad()[i] : 0.0;
      const double err = std::abs(analytic - numeric);
      const double scale =
          std::max({1.0, std::abs(analytic), std::abs(numeric)});
      const double rel = err / scale;
      if (rel > r.worst) {
        r.worst = rel;
        r.detail = "input " + std::to_string(ti) + " element " +
                   std::to_string(i) + ": analytic " +
                   std::to_string(analytic) + " vs numeric " +
                   std::to_string(numeric);
      }
      if (rel > tol) r.ok = false;
    }
  }
  return r;
}

inline morphogen::Tensor<double> random_input(morphogen::Shape shape,
                                              uint64_t seed,
                                              double lo = -1.0,
                                              double hi = 1.0) {
  morphogen::Rng rng(seed);
  morphogen::Tensor<double> t(std::move(shape));
  for (auto& v : t.value()) v = rng.uniform(lo, hi);
  return t;
}

// Random input bounded away from |x| < margin, for ops with kinks at 0.
inline morphogen::Tensor<double> random_input_away_from_zero(
    morphogen::Shape shape, uint64_t seed, double margin = 0.05) {
  morphogen::Rng rng(seed);
  morphogen::Tensor<double> t(std::move(shape));
  for (auto& v : t.value()) {
    double u = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -u : u;
  }
  return t;
}

// Fixed random weighting that turns any op output into a scalar loss with
// full Jacobian coverage.
inline morphogen::Tensor<double> weights_like(const morphogen::Shape& shape,
                                              uint64_t seed) {
  morphogen::Rng rng(seed);
  morphogen::Tensor<double> w(shape);
  for (auto& v : w.value()) v = rng.uniform(0.25, 1.75);
  return w;
}

}  // namespace gradcheck
