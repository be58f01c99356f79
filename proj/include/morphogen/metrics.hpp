#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "morphogen/errors.hpp"
#include "morphogen/linalg.hpp"

namespace morphogen {

// Rows of d-dimensional embeddings with a perturbation label (and optional
// plate id) per row.
struct EmbeddingSet {
  int64_t dim = 0;
  std::vector<double> data;  // row-major
  std::vector<std::string> labels;
  std::vector<std::string> plates;
  std::vector<std::string> sample_ids;

  int64_t rows() const { return dim == 0 ? 0 : static_cast<int64_t>(data.size()) / dim; }
  const double* row(int64_t i) const { return data.data() + i * dim; }

  void add_row(const std::string& sample_id, const std::string& label,
               const std::string& plate, const std::vector<double>& values) {
    if (dim == 0) dim = static_cast<int64_t>(values.size());
    if (static_cast<int64_t>(values.size()) != dim)
      fail(ErrorCode::DimensionMismatch, "embedding row dimension mismatch");
    sample_ids.push_back(sample_id);
    labels.push_back(label);
    plates.push_back(plate);
    data.insert(data.end(), values.begin(), values.end());
  }
};

struct MetricReport {
  std::string metric;
  double value = 0.0;
  int64_t param_k = 0;
  int64_t n_real = 0;
  int64_t n_gen = 0;
  uint64_t seed = 0;
};

// ---- Gaussian moments and FID ----

struct GaussianMoments {
  int d = 0;
  std::vector<double> mean;
  std::vector<double> cov;  // d x d, sample covariance (n-1 denominator)
};

inline GaussianMoments moments_of(const EmbeddingSet& set) {
  const int64_t n = set.rows();
  const int d = static_cast<int>(set.dim);
  if (n < d + 1)
    fail(ErrorCode::InsufficientPoints,
         "moments: need at least d+1 = " + std::to_string(d + 1) +
             " rows for a full-rank covariance, got " + std::to_string(n));
  GaussianMoments m;
  m.d = d;
  m.mean.assign(d, 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m.mean[j] += set.row(i)[j];
  for (double& v : m.mean) v /= static_cast<double>(n);
  m.cov.assign(static_cast<size_t>(d) * d, 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const double dj = set.row(i)[j] - m.mean[j];
      for (int k = 0; k < d; ++k)
        m.cov[j * d + k] += dj * (set.row(i)[k] - m.mean[k]);
    }
  for (double& v : m.cov) v /= static_cast<double>(n - 1);
  return m;
}

// |mu_r - mu_g|^2 + Tr(C_r + C_g - 2 (C_r C_g)^{1/2}), the cross term
// evaluated through the symmetric eigendecomposition of S C_g S with
// S = C_r^{1/2}. Eigenvalues in (-1e-8, 0) clamp to zero; lower raises.
inline double fid_from_moments(const GaussianMoments& real,
                               const GaussianMoments& gen) {
  if (real.d != gen.d)
    fail(ErrorCode::DimensionMismatch,
         "fid: dimension " + std::to_string(real.d) + " vs " +
             std::to_string(gen.d));
  const int d = real.d;
  double mean_term = 0.0;
  for (int j = 0; j < d; ++j) {
    const double diff = real.mean[j] - gen.mean[j];
    mean_term += diff * diff;
  }
  double tr_r = 0.0, tr_g = 0.0;
  for (int j = 0; j < d; ++j) {
    tr_r += real.cov[j * d + j];
    tr_g += gen.cov[j * d + j];
  }
  const std::vector<double> s = symmetric_sqrt(real.cov, d);
  const std::vector<double> inner = mat_mul_sq(s, mat_mul_sq(gen.cov, s, d), d);
  std::vector<double> eig = symmetric_eig(inner, d, nullptr);
  double tr_sqrt = 0.0;
  for (double lambda : eig) {
    if (lambda < -1e-8)
      fail(ErrorCode::NonPsd, "fid: cross-covariance eigenvalue " +
                                  std::to_string(lambda) + " below -1e-8");
    tr_sqrt += lambda > 0 ? std::sqrt(lambda) : 0.0;
  }
  double result = mean_term + tr_r + tr_g - 2.0 * tr_sqrt;
  // cancellation can leave a tiny negative residue; beyond the tolerance it
  // signals an ill-conditioned covariance
  if (result < 0.0) {
    if (result < -1e-6)
      fail(ErrorCode::NonPsd,
           "fid: negative distance " + std::to_string(result));
    result = 0.0;
  }
  return result;
}

inline double fid(const EmbeddingSet& real, const EmbeddingSet& gen) {
  if (real.dim != gen.dim)
    fail(ErrorCode::DimensionMismatch, "fid: embedding dimensions differ");
  return fid_from_moments(moments_of(real), moments_of(gen));
}

// ---- k-NN precision / recall / F1 / coverage ----

struct PrfCoverage {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double coverage = 0.0;
};

namespace detail {

inline std::vector<std::vector<double>> pairwise_dist(const EmbeddingSet& a,
                                                      const EmbeddingSet& b) {
  const int64_t n = a.rows(), m = b.rows();
  std::vector<std::vector<double>> dist(n, std::vector<double>(m));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int64_t f = 0; f < a.dim; ++f) {
        const double diff = a.row(i)[f] - b.row(j)[f];
        acc += diff * diff;
      }
      dist[i][j] = std::sqrt(acc);
    }
  return dist;
}

// Distance to the k-th nearest neighbour within the same set, self excluded.
inline std::vector<double> knn_radii(const EmbeddingSet& set, int64_t k) {
  const int64_t n = set.rows();
  std::vector<double> radii(n);
  std::vector<double> dists;
  for (int64_t i = 0; i < n; ++i) {
    dists.clear();
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double acc = 0.0;
      for (int64_t f = 0; f < set.dim; ++f) {
        const double diff = set.row(i)[f] - set.row(j)[f];
        acc += diff * diff;
      }
      dists.push_back(std::sqrt(acc));
    }
    std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
    radii[i] = dists[k - 1];
  }
  return radii;
}

}  // namespace detail

inline PrfCoverage prf_coverage(const EmbeddingSet& real,
                                const EmbeddingSet& gen, int64_t k) {
  if (real.dim != gen.dim)
    fail(ErrorCode::DimensionMismatch, "prf_coverage: dimensions differ");
  if (k < 1 || real.rows() < k + 1 || gen.rows() < k + 1)
    fail(ErrorCode::InsufficientPoints,
         "prf_coverage: both sets need at least k+1 rows");
  const std::vector<double> real_radii = detail::knn_radii(real, k);
  const std::vector<double> gen_radii = detail::knn_radii(gen, k);
  const auto dist_rg = detail::pairwise_dist(real, gen);

  const int64_t n = real.rows(), m = gen.rows();
  int64_t precision_hits = 0;
  for (int64_t j = 0; j < m; ++j)
    for (int64_t i = 0; i < n; ++i)
      if (dist_rg[i][j] <= real_radii[i]) {
        ++precision_hits;
        break;
      }
  int64_t recall_hits = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j)
      if (dist_rg[i][j] <= gen_radii[j]) {
        ++recall_hits;
        break;
      }
  int64_t coverage_hits = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j)
      if (dist_rg[i][j] <= real_radii[i]) {
        ++coverage_hits;
        break;
      }

  PrfCoverage out;
  out.precision = static_cast<double>(precision_hits) / m;
  out.recall = static_cast<double>(recall_hits) / n;
  out.f1 = (out.precision + out.recall) > 0
               ? 2.0 * out.precision * out.recall /
                     (out.precision + out.recall)
               : 0.0;
  out.coverage = static_cast<double>(coverage_hits) / n;
  return out;
}

// ---- concordance index ----

// Fraction of strictly-ordered truth pairs whose predictions preserve the
// order; tied predictions count 1/2, tied truths are excluded from N.
inline double concordance_index(const std::vector<double>& truth,
                                const std::vector<double>& predicted,
                                bool negate_predicted = false) {
  if (truth.size() != predicted.size() || truth.size() < 2)
    fail(ErrorCode::InsufficientPoints,
         "concordance_index: need two equal-length series");
  const double sign = negate_predicted ? -1.0 : 1.0;
  double concordant = 0.0;
  int64_t comparable = 0;
  for (size_t i = 0; i < truth.size(); ++i)
    for (size_t j = i + 1; j < truth.size(); ++j) {
      if (truth[i] == truth[j]) continue;
      ++comparable;
      const double pi = sign * predicted[i];
      const double pj = sign * predicted[j];
      if (pi == pj)
        concordant += 0.5;
      else if ((truth[i] > truth[j]) == (pi > pj))
        concordant += 1.0;
    }
  if (comparable == 0)
    fail(ErrorCode::AllTies, "concordance_index: no comparable pairs");
  return concordant / static_cast<double>(comparable);
}

// ---- Kolmogorov-Smirnov two-sample ----

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty())
    fail(ErrorCode::EmptyInput, "ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  d = std::max(d, std::abs(1.0 - j / nb));
  d = std::max(d, std::abs(i / na - 1.0));

  // asymptotic two-sample Kolmogorov distribution
  const double ne = na * nb / (na + nb);
  const double lambda =
      (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double q = 0.0;
  for (int term = 1; term <= 100; ++term) {
    const double sign = term % 2 == 1 ? 1.0 : -1.0;
    q += sign * std::exp(-2.0 * term * term * lambda * lambda);
  }
  KsResult out;
  out.statistic = d;
  out.p_value = std::min(1.0, std::max(0.0, 2.0 * q));
  return out;
}

// ---- Pearson correlation ----

inline double pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    fail(ErrorCode::InsufficientPoints,
         "pearson: need two equal-length series of length >= 2");
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0)
    fail(ErrorCode::ZeroVariance, "pearson: zero-variance input");
  return sab / std::sqrt(saa * sbb);
}

// ---- EFAAR normalisation and aggregation ----

enum class NormalizeMode { CenterScale, Tvn };

struct AggregatedEmbeddings {
  int64_t dim = 0;
  std::vector<std::string> labels;  // first-appearance order
  std::vector<std::vector<double>> vectors;

  const std::vector<double>* find(const std::string& label) const {
    for (size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) return &vectors[i];
    return nullptr;
  }
};

// Normalise every row against the control population: center-scale per
// feature, or whitening in the control covariance eigenbasis (TVN).
inline EmbeddingSet efaar_normalize(const EmbeddingSet& set,
                                    const std::string& controls_label,
                                    NormalizeMode mode) {
  const int64_t n = set.rows();
  const int d = static_cast<int>(set.dim);
  std::vector<int64_t> control_rows;
  for (int64_t i = 0; i < n; ++i)
    if (set.labels[i] == controls_label) control_rows.push_back(i);
  if (control_rows.empty())
    fail(ErrorCode::MissingControls,
         "efaar: no rows labelled '" + controls_label + "'");

  std::vector<double> mu(d, 0.0);
  for (int64_t i : control_rows)
    for (int j = 0; j < d; ++j) mu[j] += set.row(i)[j];
  for (double& v : mu) v /= static_cast<double>(control_rows.size());

  EmbeddingSet out = set;

  if (mode == NormalizeMode::CenterScale) {
    if (control_rows.size() < 2)
      fail(ErrorCode::InsufficientPoints, "efaar: need >= 2 control rows");
    std::vector<double> sd(d, 0.0);
    for (int64_t i : control_rows)
      for (int j = 0; j < d; ++j) {
        const double diff = set.row(i)[j] - mu[j];
        sd[j] += diff * diff;
      }
    for (int j = 0; j < d; ++j) {
      sd[j] = std::sqrt(sd[j] / static_cast<double>(control_rows.size() - 1));
      if (sd[j] == 0.0)
        fail(ErrorCode::ZeroVariance,
             "efaar center_scale: control feature " + std::to_string(j) +
                 " has zero variance");
    }
    for (int64_t i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        out.data[i * d + j] = (set.row(i)[j] - mu[j]) / sd[j];
  } else {
    if (static_cast<int64_t>(control_rows.size()) <= d)
      fail(ErrorCode::InsufficientPoints,
           "efaar tvn: need more controls than dimensions");
    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    for (int64_t i : control_rows)
      for (int j = 0; j < d; ++j) {
        const double dj = set.row(i)[j] - mu[j];
        for (int k = 0; k < d; ++k)
          cov[j * d + k] += dj * (set.row(i)[k] - mu[k]);
      }
    for (double& v : cov) v /= static_cast<double>(control_rows.size() - 1);
    std::vector<double> vecs;
    const std::vector<double> vals = symmetric_eig(cov, d, &vecs);
    for (double lambda : vals)
      if (lambda < 1e-12)
        fail(ErrorCode::SingularCovariance,
             "efaar tvn: control covariance is singular");
    // y = diag(1/sqrt(l)) V^T (x - mu); rows of `vecs` are eigenvectors
    for (int64_t i = 0; i < n; ++i)
      for (int e = 0; e < d; ++e) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j)
          acc += vecs[e * d + j] * (set.row(i)[j] - mu[j]);
        out.data[i * d + e] = acc / std::sqrt(vals[e]);
      }
  }
  return out;
}

// Mean vector per label, first-appearance order.
inline AggregatedEmbeddings aggregate_by_label(const EmbeddingSet& set) {
  AggregatedEmbeddings agg;
  agg.dim = set.dim;
  std::vector<int64_t> counts;
  for (int64_t i = 0; i < set.rows(); ++i) {
    const std::string& label = set.labels[i];
    size_t slot = agg.labels.size();
    for (size_t s = 0; s < agg.labels.size(); ++s)
      if (agg.labels[s] == label) {
        slot = s;
        break;
      }
    if (slot == agg.labels.size()) {
      agg.labels.push_back(label);
      agg.vectors.emplace_back(set.dim, 0.0);
      counts.push_back(0);
    }
    for (int64_t j = 0; j < set.dim; ++j)
      agg.vectors[slot][j] += set.row(i)[j];
    counts[slot] += 1;
  }
  for (size_t s = 0; s < agg.labels.size(); ++s)
    for (double& v : agg.vectors[s]) v /= static_cast<double>(counts[s]);
  return agg;
}

inline AggregatedEmbeddings efaar_normalize_aggregate(
    const EmbeddingSet& set, const std::string& controls_label,
    NormalizeMode mode) {
  return aggregate_by_label(efaar_normalize(set, controls_label, mode));
}

// ---- relationship recall ----

// Unordered label pairs, `#` comments, two tab-separated columns per line.
inline std::vector<std::pair<std::string, std::string>> load_known_pairs(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::Io, "cannot open '" + path + "'");
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      fail(ErrorCode::Config, "known-pairs line without tab: '" + line + "'");
    pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return pairs;
}

// Fraction of known pairs found in the union of the top-`fraction` and
// bottom-`fraction` cosine-similarity pairs (each fraction separately).
inline double relationship_recall(
    const AggregatedEmbeddings& agg,
    const std::vector<std::pair<std::string, std::string>>& known_pairs,
    double fraction = 0.05) {
  if (agg.labels.size() < 3)
    fail(ErrorCode::InsufficientPoints,
         "relationship_recall: need >= 3 perturbations");
  if (known_pairs.empty())
    fail(ErrorCode::EmptyKnownPairs, "relationship_recall: no known pairs");

  auto label_index = [&](const std::string& label) -> size_t {
    for (size_t i = 0; i < agg.labels.size(); ++i)
      if (agg.labels[i] == label) return i;
    fail(ErrorCode::InvalidArgument,
         "relationship_recall: unknown label '" + label + "'");
  };

  const size_t n = agg.labels.size();
  struct ScoredPair {
    double sim;
    size_t a, b;
  };
  std::vector<ScoredPair> scored;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (int64_t f = 0; f < agg.dim; ++f) {
        dot += agg.vectors[i][f] * agg.vectors[j][f];
        na += agg.vectors[i][f] * agg.vectors[i][f];
        nb += agg.vectors[j][f] * agg.vectors[j][f];
      }
      const double denom = std::sqrt(na) * std::sqrt(nb);
      scored.push_back({denom > 0 ? dot / denom : 0.0, i, j});
    }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    if (x.sim != y.sim) return x.sim > y.sim;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });

  const size_t total = scored.size();
  const size_t k = std::max<size_t>(
      1, static_cast<size_t>(std::floor(fraction * total + 1e-9)));
  std::set<std::pair<size_t, size_t>> selected;
  for (size_t i = 0; i < k && i < total; ++i)
    selected.insert({scored[i].a, scored[i].b});
  for (size_t i = 0; i < k && i < total; ++i) {
    const auto& s = scored[total - 1 - i];
    selected.insert({s.a, s.b});
  }

  int64_t hits = 0;
  for (const auto& [la, lb] : known_pairs) {
    size_t a = label_index(la);
    size_t b = label_index(lb);
    if (a == b)
      fail(ErrorCode::InvalidArgument,
           "relationship_recall: self-pair '" + la + "'");
    if (a > b) std::swap(a, b);
    hits += selected.count({a, b});
  }
  return static_cast<double>(hits) / static_cast<double>(known_pairs.size());
}

// ---- z-scoring of per-condition values ----

// Group means z-normalised against the distribution of group means
// (n-1 denominator). Returns one z per group, input order preserved.
inline std::vector<double> zscore_groups(
    const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2)
    fail(ErrorCode::InsufficientPoints, "zscore: need >= 2 groups");
  std::vector<double> means;
  for (const auto& g : groups) {
    if (g.empty()) fail(ErrorCode::EmptyInput, "zscore: empty group");
    double m = 0.0;
    for (double v : g) m += v;
    means.push_back(m / g.size());
  }
  double grand = 0.0;
  for (double m : means) grand += m;
  grand /= means.size();
  double var = 0.0;
  for (double m : means) var += (m - grand) * (m - grand);
  var /= static_cast<double>(means.size() - 1);
  if (var == 0.0)
    fail(ErrorCode::ZeroVariance, "zscore: all group means equal");
  const double sd = std::sqrt(var);
  std::vector<double> z;
  for (double m : means) z.push_back((m - grand) / sd);
  return z;
}

// ---- CSV I/O ----

namespace csv {

inline std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace csv

inline void save_embeddings_csv(const std::string& path,
                                const EmbeddingSet& set) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  os << "sample_id,label,plate";
  for (int64_t f = 0; f < set.dim; ++f) os << ",f_" << f;
  os << "\n";
  os.precision(17);
  for (int64_t i = 0; i < set.rows(); ++i) {
    os << set.sample_ids[i] << "," << set.labels[i] << "," << set.plates[i];
    for (int64_t f = 0; f < set.dim; ++f) os << "," << set.row(i)[f];
    os << "\n";
  }
}

inline EmbeddingSet load_embeddings_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::Io, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line))
    fail(ErrorCode::EmptyInput, path + ": empty embeddings file");
  const auto header = csv::split(line, ',');
  if (header.size() < 4 || header[0] != "sample_id" || header[1] != "label")
    fail(ErrorCode::Config, path + ": unexpected embeddings header");
  EmbeddingSet set;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = csv::split(line, ',');
    if (fields.size() != header.size())
      fail(ErrorCode::Config, path + ": ragged row '" + line + "'");
    std::vector<double> values;
    for (size_t f = 3; f < fields.size(); ++f)
      values.push_back(std::stod(fields[f]));
    set.add_row(fields[0], fields[1], fields[2], values);
  }
  return set;
}

inline void save_reports_csv(const std::string& path,
                             const std::vector<MetricReport>& reports) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  os << "metric,value,param_k,n_real,n_gen,seed\n";
  os.precision(17);
  for (const auto& r : reports)
    os << r.metric << "," << r.value << "," << r.param_k << "," << r.n_real
       << "," << r.n_gen << "," << r.seed << "\n";
}

}  // namespace morphogen
