#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "seqvae/common.hpp"
#include "seqvae/tensor.hpp"

namespace seqvae {
namespace eval {

// ---- linear readout quality ----

struct LinearMap {
  Tensor w;  // [d+1, k]; last row is the intercept
  bool ridge_fallback = false;
};

namespace detail_eval {

// Gaussian elimination with partial pivoting on the augmented system
// [A | B] -> X, where A is [n, n] and B is [n, k]. Returns false when a
// pivot collapses below tolerance.
inline bool solve_dense(std::vector<double>& a, std::vector<double>& b, size_t n, size_t k) {
  const double tol = 1e-12;
  for (size_t col = 0; col < n; ++col) {
    size_t pivot = col;
    for (size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a[r * n + col]) > std::fabs(a[pivot * n + col])) pivot = r;
    }
    if (std::fabs(a[pivot * n + col]) < tol) return false;
    if (pivot != col) {
      for (size_t c = 0; c < n; ++c) std::swap(a[pivot * n + c], a[col * n + c]);
      for (size_t c = 0; c < k; ++c) std::swap(b[pivot * k + c], b[col * k + c]);
    }
    double inv = 1.0 / a[col * n + col];
    for (size_t r = col + 1; r < n; ++r) {
      double factor = a[r * n + col] * inv;
      if (factor == 0.0) continue;
      for (size_t c = col; c < n; ++c) a[r * n + c] -= factor * a[col * n + c];
      for (size_t c = 0; c < k; ++c) b[r * k + c] -= factor * b[col * k + c];
    }
  }
  for (size_t col = n; col-- > 0;) {
    for (size_t c = 0; c < k; ++c) {
      double acc = b[col * k + c];
      for (size_t j = col + 1; j < n; ++j) acc -= a[col * n + j] * b[j * k + c];
      b[col * k + c] = acc / a[col * n + col];
    }
  }
  return true;
}

}  // namespace detail_eval

// Ordinary least squares with intercept via the normal equations; a tiny
// ridge term is added only if the plain system is numerically singular.
inline LinearMap fit_linear(const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows()) {
    throw DataError("fit_linear: X and Y must be 2-d with matching row counts");
  }
  const size_t n = x.rows(), d = x.cols(), k = y.cols();
  if (n <= d + 1) {
    throw DataError("fit_linear: need more points than features (+1 for the intercept), got " +
                    std::to_string(n) + " points for " + std::to_string(d) + " features");
  }
  const size_t da = d + 1;

  // Normal equations on the intercept-augmented design matrix.
  std::vector<double> ata(da * da, 0.0), atb(da * k, 0.0);
  auto feat = [&](size_t row, size_t col) { return col < d ? x.data()[row * d + col] : 1.0; };
  for (size_t r = 0; r < n; ++r) {
    for (size_t i = 0; i < da; ++i) {
      double fi = feat(r, i);
      if (fi == 0.0) continue;
      for (size_t j = i; j < da; ++j) ata[i * da + j] += fi * feat(r, j);
      for (size_t c = 0; c < k; ++c) atb[i * k + c] += fi * y.data()[r * k + c];
    }
  }
  for (size_t i = 0; i < da; ++i) {
    for (size_t j = 0; j < i; ++j) ata[i * da + j] = ata[j * da + i];
  }

  LinearMap out;
  std::vector<double> a = ata, b = atb;
  if (!detail_eval::solve_dense(a, b, da, k)) {
    a = ata;
    b = atb;
    for (size_t i = 0; i < da; ++i) a[i * da + i] += 1e-8;
    if (!detail_eval::solve_dense(a, b, da, k)) {
      throw NumericError("fit_linear: normal equations singular even with ridge");
    }
    out.ridge_fallback = true;
  }
  out.w = Tensor({da, k}, b);
  return out;
}

inline Tensor apply_linear(const LinearMap& map, const Tensor& x) {
  const size_t n = x.rows(), d = x.cols(), k = map.w.cols();
  if (d + 1 != map.w.rows()) throw DataError("apply_linear: feature count mismatch");
  Tensor out({n, k});
  for (size_t r = 0; r < n; ++r) {
    for (size_t c = 0; c < k; ++c) {
      double acc = map.w.data()[d * k + c];  // intercept
      for (size_t j = 0; j < d; ++j) acc += x.data()[r * d + j] * map.w.data()[j * k + c];
      out.data()[r * k + c] = acc;
    }
  }
  return out;
}

struct ReconstructionScore {
  double r_squared = 0.0;           // mean of per_dim
  std::vector<double> per_dim;
  size_t n_points = 0;
  bool ridge_fallback = false;
};

// R^2 of a linear readout fitted on (x_fit, y_fit) and scored on
// (x_eval, y_eval). Constant targets score 1 when predicted exactly, else 0.
inline ReconstructionScore linear_r2(const Tensor& x_fit, const Tensor& y_fit,
                                     const Tensor& x_eval, const Tensor& y_eval) {
  LinearMap map = fit_linear(x_fit, y_fit);
  Tensor pred = apply_linear(map, x_eval);
  const size_t n = y_eval.rows(), k = y_eval.cols();
  if (pred.rows() != n || pred.cols() != k) throw DataError("linear_r2: shape mismatch");

  ReconstructionScore score;
  score.n_points = n;
  score.ridge_fallback = map.ridge_fallback;
  score.per_dim.resize(k);
  for (size_t c = 0; c < k; ++c) {
    double mean = 0.0;
    for (size_t r = 0; r < n; ++r) mean += y_eval.data()[r * k + c];
    mean /= static_cast<double>(n);
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t r = 0; r < n; ++r) {
      double yv = y_eval.data()[r * k + c];
      double e = yv - pred.data()[r * k + c];
      ss_res += e * e;
      ss_tot += (yv - mean) * (yv - mean);
    }
    if (ss_tot == 0.0) {
      score.per_dim[c] = ss_res <= 1e-18 ? 1.0 : 0.0;
    } else {
      score.per_dim[c] = 1.0 - ss_res / ss_tot;
    }
    score.r_squared += score.per_dim[c];
  }
  score.r_squared /= static_cast<double>(k);
  return score;
}

// Convenience for the common report: fit and evaluate on the same split.
inline ReconstructionScore linear_r2(const Tensor& x, const Tensor& y) {
  return linear_r2(x, y, x, y);
}

// ---- k-nearest-neighbor decoding ----

struct DecodingResult {
  double accuracy = 0.0;
  size_t chosen_k = 1;
  std::map<int32_t, double> per_class;  // class -> accuracy
  size_t n_test = 0;
};

namespace detail_eval {

// Neighbor order for one query: ascending squared distance, ties broken by
// the lower training index. Only the first `count` entries are kept.
inline std::vector<size_t> neighbor_order(const std::vector<std::vector<double>>& train_x,
                                          const std::vector<double>& q, size_t count) {
  std::vector<std::pair<double, size_t>> dist(train_x.size());
  for (size_t i = 0; i < train_x.size(); ++i) {
    const auto& p = train_x[i];
    double acc = 0.0;
    for (size_t j = 0; j < q.size(); ++j) {
      double diff = p[j] - q[j];
      acc += diff * diff;
    }
    dist[i] = {acc, i};
  }
  count = std::min(count, dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(count), dist.end());
  std::vector<size_t> order(count);
  for (size_t i = 0; i < count; ++i) order[i] = dist[i].second;
  return order;
}

// Majority vote over the first k neighbors; a tied vote goes to the tied
// class with the nearest representative.
inline int32_t vote(const std::vector<size_t>& order, const std::vector<int32_t>& labels, size_t k) {
  std::map<int32_t, size_t> counts;
  for (size_t i = 0; i < k && i < order.size(); ++i) ++counts[labels[order[i]]];
  size_t best = 0;
  for (const auto& [cls, n] : counts) best = std::max(best, n);
  for (size_t i = 0; i < k && i < order.size(); ++i) {
    int32_t cls = labels[order[i]];
    if (counts[cls] == best) return cls;
  }
  throw NumericError("knn vote: empty neighbor list");
}

}  // namespace detail_eval

constexpr size_t kMaxKnnK = 19;

class KnnClassifier {
 public:
  KnnClassifier(std::vector<std::vector<double>> train_x, std::vector<int32_t> train_y)
      : train_x_(std::move(train_x)), train_y_(std::move(train_y)) {
    if (train_x_.empty() || train_x_.size() != train_y_.size()) {
      throw DataError("knn: empty or mismatched training set");
    }
  }

  // Candidate k values: odd, 1..19, capped by the training-set size.
  std::vector<size_t> candidate_ks() const {
    std::vector<size_t> ks;
    for (size_t k = 1; k <= kMaxKnnK && k <= train_x_.size(); k += 2) ks.push_back(k);
    return ks;
  }

  int32_t predict(const std::vector<double>& q, size_t k) const {
    auto order = detail_eval::neighbor_order(train_x_, q, k);
    return detail_eval::vote(order, train_y_, k);
  }

  std::vector<int32_t> predict_all(const std::vector<std::vector<double>>& xs, size_t k) const {
    std::vector<int32_t> out;
    out.reserve(xs.size());
    size_t depth = std::min(kMaxKnnK, train_x_.size());
    for (const auto& q : xs) {
      auto order = detail_eval::neighbor_order(train_x_, q, depth);
      out.push_back(detail_eval::vote(order, train_y_, k));
    }
    return out;
  }

  // Validation-selected k: highest validation accuracy, ties to the
  // smallest k. Neighbor lists are computed once per validation point.
  size_t select_k(const std::vector<std::vector<double>>& val_x,
                  const std::vector<int32_t>& val_y) const {
    if (val_x.empty() || val_x.size() != val_y.size()) {
      throw DataError("knn: empty or mismatched validation set");
    }
    auto ks = candidate_ks();
    size_t depth = std::min(kMaxKnnK, train_x_.size());
    std::vector<size_t> correct(ks.size(), 0);
    for (size_t q = 0; q < val_x.size(); ++q) {
      auto order = detail_eval::neighbor_order(train_x_, val_x[q], depth);
      for (size_t i = 0; i < ks.size(); ++i) {
        if (detail_eval::vote(order, train_y_, ks[i]) == val_y[q]) ++correct[i];
      }
    }
    size_t best = 0;
    for (size_t i = 1; i < ks.size(); ++i) {
      if (correct[i] > correct[best]) best = i;
    }
    return ks[best];
  }

  const std::vector<std::vector<double>>& train_x() const { return train_x_; }
  const std::vector<int32_t>& train_y() const { return train_y_; }

 private:
  std::vector<std::vector<double>> train_x_;
  std::vector<int32_t> train_y_;
};

inline DecodingResult knn_classify(const KnnClassifier& knn,
                                   const std::vector<std::vector<double>>& val_x,
                                   const std::vector<int32_t>& val_y,
                                   const std::vector<std::vector<double>>& test_x,
                                   const std::vector<int32_t>& test_y) {
  if (test_x.empty() || test_x.size() != test_y.size()) {
    throw DataError("knn: empty or mismatched test set");
  }
  DecodingResult out;
  out.chosen_k = knn.select_k(val_x, val_y);
  out.n_test = test_x.size();
  std::vector<int32_t> preds = knn.predict_all(test_x, out.chosen_k);
  std::map<int32_t, std::pair<size_t, size_t>> per_class;  // class -> (correct, total)
  size_t correct = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    auto& [c_ok, c_n] = per_class[test_y[i]];
    ++c_n;
    if (preds[i] == test_y[i]) {
      ++correct;
      ++c_ok;
    }
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(test_x.size());
  for (const auto& [cls, cn] : per_class) {
    out.per_class[cls] = static_cast<double>(cn.first) / static_cast<double>(cn.second);
  }
  return out;
}

// Fraction of predictions within `window` of the true frame index.
inline double windowed_accuracy(const std::vector<int32_t>& pred, const std::vector<int32_t>& truth,
                                int32_t window) {
  if (pred.empty() || pred.size() != truth.size()) {
    throw DataError("windowed_accuracy: empty or mismatched inputs");
  }
  size_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (std::abs(static_cast<int64_t>(pred[i]) - static_cast<int64_t>(truth[i])) <=
        static_cast<int64_t>(window)) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// ---- representations over per-step latent matrices [T, M] ----

enum class LatentBlock { Content, Style, Both };

inline LatentBlock latent_block_from(const std::string& s) {
  if (s == "content") return LatentBlock::Content;
  if (s == "style") return LatentBlock::Style;
  if (s == "both") return LatentBlock::Both;
  throw ConfigError("unknown latent block '" + s + "' (expected content, style, or both)");
}

inline const char* latent_block_name(LatentBlock b) {
  switch (b) {
    case LatentBlock::Content: return "content";
    case LatentBlock::Style: return "style";
    default: return "both";
  }
}

inline Tensor select_latent_cols(const Tensor& latents, LatentBlock block, size_t content_dim) {
  const size_t T = latents.rows(), M = latents.cols();
  if (content_dim > M) throw DataError("select_latent_cols: content dim exceeds latent dim");
  size_t c0 = 0, c1 = M;
  if (block == LatentBlock::Content) c1 = content_dim;
  if (block == LatentBlock::Style) c0 = content_dim;
  Tensor out({T, c1 - c0});
  for (size_t t = 0; t < T; ++t) {
    for (size_t c = c0; c < c1; ++c) out.data()[t * (c1 - c0) + (c - c0)] = latents.data()[t * M + c];
  }
  return out;
}

// Trial representation for classification: the last `window` latent steps
// concatenated into one vector.
inline std::vector<double> concat_last_steps(const Tensor& latents, size_t window) {
  const size_t T = latents.rows(), M = latents.cols();
  if (window == 0 || window > T) {
    throw DataError("concat_last_steps: window must be in [1, T], got " + std::to_string(window) +
                    " for T=" + std::to_string(T));
  }
  std::vector<double> rep;
  rep.reserve(window * M);
  for (size_t t = T - window; t < T; ++t) {
    for (size_t c = 0; c < M; ++c) rep.push_back(latents.data()[t * M + c]);
  }
  return rep;
}

// Frame representations: the mean latent over each consecutive group of
// `group` steps. Leftover steps short of a full group are dropped.
inline std::vector<std::vector<double>> frame_means(const Tensor& latents, size_t group) {
  const size_t T = latents.rows(), M = latents.cols();
  if (group == 0) throw DataError("frame_means: group must be positive");
  std::vector<std::vector<double>> out;
  for (size_t start = 0; start + group <= T; start += group) {
    std::vector<double> rep(M, 0.0);
    for (size_t t = start; t < start + group; ++t) {
      for (size_t c = 0; c < M; ++c) rep[c] += latents.data()[t * M + c];
    }
    for (size_t c = 0; c < M; ++c) rep[c] /= static_cast<double>(group);
    out.push_back(std::move(rep));
  }
  return out;
}

}  // namespace eval
}  // namespace seqvae
