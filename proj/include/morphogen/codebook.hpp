#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "morphogen/adam.hpp"
#include "morphogen/tensor.hpp"

namespace morphogen {

template <class T>
struct QuantizeResult {
  std::vector<int64_t> indices;  // chosen entry per position
  Tensor<T> gathered;            // entry rows; differentiable into entries
  Tensor<T> quantized;           // straight-through: value = gathered, grad -> latent
  std::vector<T> distances;      // Euclidean distance to the chosen entry
};

// Learnable dictionary of latent prototypes with usage tracking. Nearest
// neighbour search uses the |a|^2 - 2ab + |b|^2 expansion; ties break toward
// the lowest index.
template <class T>
class Codebook {
 public:
  Codebook(std::string name, int64_t size, int64_t dim, T init_std, Rng& rng)
      : entries_(name + ".entries", normal_init<T>({size, dim}, init_std, rng)),
        usage_(static_cast<size_t>(size), 0),
        unused_steps_(static_cast<size_t>(size), 0),
        ema_counts_(static_cast<size_t>(size), T(0)),
        ema_sums_(entries_.tensor.value()) {}

  int64_t size() const { return entries_.tensor.extent(0); }
  int64_t dim() const { return entries_.tensor.extent(1); }
  Parameter<T>& entries() { return entries_; }
  const Parameter<T>& entries() const { return entries_; }
  const std::vector<uint64_t>& usage_counts() const { return usage_; }
  void reset_usage() { std::fill(usage_.begin(), usage_.end(), 0); }

  // latent: (N, dim) position-major rows.
  QuantizeResult<T> quantize(const Tensor<T>& latent) {
    if (latent.rank() != 2 || latent.extent(1) != dim())
      fail(ErrorCode::DimensionMismatch,
           "quantize: latent " + shape_str(latent.shape()) +
               " vs entries " + shape_str(entries_.tensor.shape()));
    detail::check_finite(latent, "quantize");
    const int64_t n = latent.extent(0);
    const int64_t k = size();
    const int64_t d = dim();
    const auto& ev = entries_.tensor.value();
    const auto& lv = latent.value();

    std::vector<T> entry_sq(k);
    for (int64_t e = 0; e < k; ++e) {
      T acc = T(0);
      for (int64_t j = 0; j < d; ++j) acc += ev[e * d + j] * ev[e * d + j];
      entry_sq[e] = acc;
    }

    QuantizeResult<T> result;
    result.indices.resize(n);
    result.distances.resize(n);
    for (int64_t i = 0; i < n; ++i) {
      const T* z = lv.data() + i * d;
      T zsq = T(0);
      for (int64_t j = 0; j < d; ++j) zsq += z[j] * z[j];
      T best = std::numeric_limits<T>::max();
      int64_t best_idx = 0;
      for (int64_t e = 0; e < k; ++e) {
        T dot = T(0);
        const T* row = ev.data() + e * d;
        for (int64_t j = 0; j < d; ++j) dot += z[j] * row[j];
        const T dist = zsq - T(2) * dot + entry_sq[e];
        if (dist < best) {
          best = dist;
          best_idx = e;
        }
      }
      result.indices[i] = best_idx;
      result.distances[i] = std::sqrt(std::max(best, T(0)));
      usage_[best_idx] += 1;
    }

    result.gathered = embedding_gather(entries_.tensor, result.indices);
    result.quantized = straight_through(result.gathered, latent);
    return result;
  }

  // Advance dead-entry counters with this step's assignments.
  void note_step(const std::vector<int64_t>& indices) {
    std::vector<bool> hit(unused_steps_.size(), false);
    for (int64_t i : indices) hit[static_cast<size_t>(i)] = true;
    for (size_t e = 0; e < unused_steps_.size(); ++e)
      unused_steps_[e] = hit[e] ? 0 : unused_steps_[e] + 1;
  }

  // Entries unused for `threshold` consecutive steps are reseeded from a
  // random row of `latent`. Returns the number reinitialised.
  int refresh_dead(const Tensor<T>& latent, Rng& rng, int64_t threshold) {
    const int64_t n = latent.extent(0);
    const int64_t d = dim();
    auto& ev = entries_.tensor.value();
    int refreshed = 0;
    for (size_t e = 0; e < unused_steps_.size(); ++e) {
      if (unused_steps_[e] < threshold) continue;
      const int64_t row = static_cast<int64_t>(rng.below(n));
      for (int64_t j = 0; j < d; ++j)
        ev[e * d + j] = latent.value()[row * d + j];
      ema_counts_[e] = T(0);
      for (int64_t j = 0; j < d; ++j) ema_sums_[e * d + j] = ev[e * d + j];
      unused_steps_[e] = 0;
      ++refreshed;
    }
    return refreshed;
  }

  // EMA codebook update (alternative to the gradient-based codebook loss).
  void ema_update(const Tensor<T>& latent, const std::vector<int64_t>& indices,
                  T decay, T eps = T(1e-5)) {
    const int64_t d = dim();
    const int64_t k = size();
    std::vector<T> counts(k, T(0));
    std::vector<T> sums(static_cast<size_t>(k * d), T(0));
    for (size_t i = 0; i < indices.size(); ++i) {
      counts[indices[i]] += T(1);
      for (int64_t j = 0; j < d; ++j)
        sums[indices[i] * d + j] += latent.value()[i * d + j];
    }
    auto& ev = entries_.tensor.value();
    for (int64_t e = 0; e < k; ++e) {
      ema_counts_[e] = decay * ema_counts_[e] + (T(1) - decay) * counts[e];
      for (int64_t j = 0; j < d; ++j) {
        ema_sums_[e * d + j] =
            decay * ema_sums_[e * d + j] + (T(1) - decay) * sums[e * d + j];
        ev[e * d + j] = ema_sums_[e * d + j] / (ema_counts_[e] + eps);
      }
    }
  }

 private:
  Parameter<T> entries_;
  std::vector<uint64_t> usage_;
  std::vector<int64_t> unused_steps_;
  std::vector<T> ema_counts_;
  std::vector<T> ema_sums_;
};

// The two per-channel dictionaries; never share entries.
template <class T>
struct CodebookLibrary {
  Codebook<T> cytoplasm;
  Codebook<T> nucleus;

  CodebookLibrary(int64_t size, int64_t dim, T init_std, Rng& rng)
      : cytoplasm("codebook.cytoplasm", size, dim, init_std, rng),
        nucleus("codebook.nucleus", size, dim, init_std, rng) {}
};

template <class T>
struct VqLossTerms {
  Tensor<T> commitment;  // weighted; pulls the encoder toward the entries
  Tensor<T> codebook;    // mirrored term; trains the entries
};

// Channel terms are position-mean squared Euclidean distances, combined as
// 1/2 * sum over channels, the commitment side scaled by commitment_weight.
// Stop-gradients bar the entries from the commitment term and the encoder
// from the codebook term.
template <class T>
VqLossTerms<T> vq_losses(
    const std::vector<std::pair<Tensor<T>, Tensor<T>>>& enc_and_gathered,
    T commitment_weight) {
  if (enc_and_gathered.empty())
    fail(ErrorCode::InvalidArgument, "vq_losses: no channels");
  Tensor<T> commit_sum, code_sum;
  for (const auto& [enc, gathered] : enc_and_gathered) {
    detail::check_same_shape(enc, gathered, "vq_losses");
    const T feat = static_cast<T>(enc.extent(1));
    Tensor<T> commit_term = scale(mse(stop_gradient(gathered), enc), feat);
    Tensor<T> code_term = scale(mse(gathered, stop_gradient(enc)), feat);
    commit_sum = commit_sum.defined() ? add(commit_sum, commit_term) : commit_term;
    code_sum = code_sum.defined() ? add(code_sum, code_term) : code_term;
  }
  VqLossTerms<T> out;
  out.commitment = scale(commit_sum, commitment_weight * T(0.5));
  out.codebook = scale(code_sum, T(0.5));
  return out;
}

}  // namespace morphogen
