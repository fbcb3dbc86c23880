#pragma once

#include <cmath>
#include <vector>

#include "seqvae/ops.hpp"

namespace seqvae {

// Loss terms for a positive pair of unrolled sequences. Every term is a graph
// scalar; LossBreakdown carries the forward values for logging.

struct LossBreakdown {
  double recons = 0.0;
  double regular = 0.0;
  double contrast = 0.0;
  double swap_recons = 0.0;
  double prior_l2 = 0.0;
  double total = 0.0;
};

namespace objectives {

// Poisson negative log-likelihood with a Stirling correction for the count
// factorial, averaged over all entries of the batch. The Stirling term is
// zero for counts 0 and 1 (log 1! = 0, and the expansion diverges at 0).
inline Var poisson_nll(const Tensor& counts, const Var& rates) {
  if (!counts.same_shape(rates.value())) {
    throw NumericError("poisson_nll: counts " + counts.shape_str() + " vs rates " +
                       rates.value().shape_str());
  }
  for (size_t i = 0; i < counts.numel(); ++i) {
    if (counts[i] < 0.0) throw NumericError("poisson_nll: negative count");
    if (rates.value()[i] <= 0.0) throw NumericError("poisson_nll: non-positive rate");
  }
  double stirling = 0.0;
  for (size_t i = 0; i < counts.numel(); ++i) {
    double x = counts[i];
    if (x > 1.0) stirling += x * std::log(x) - x + 0.5 * std::log(2.0 * M_PI * x);
  }
  stirling /= static_cast<double>(counts.numel());
  Var xlogr = ops::mul(constant(counts), ops::log_v(rates));
  Var per_entry = ops::sub(rates, xlogr);
  return ops::add_scalar(ops::mean_all(per_entry), stirling);
}

// Closed-form KL between diagonal Gaussians q and p, summed over dimensions
// and averaged over batch rows.
inline Var gaussian_kl(const Var& mu_q, const Var& logvar_q, const Var& mu_p, const Var& logvar_p) {
  const size_t B = mu_q.value().rows();
  Var diff2 = ops::square(ops::sub(mu_q, mu_p));
  Var var_q = ops::exp_v(logvar_q);
  Var var_p = ops::exp_v(logvar_p);
  Var ratio = ops::div(ops::add(diff2, var_q), var_p);
  Var per_dim =
      ops::mul_scalar(ops::add_scalar(ops::add(ops::sub(ratio, logvar_q), logvar_p), -1.0), 0.5);
  return ops::mul_scalar(ops::sum_all(per_dim), 1.0 / static_cast<double>(B));
}

// Row-wise cosine similarity matrix between the rows of a and b. Zero-norm
// rows produce similarity 0 (their dot products vanish while the guarded norm
// stays positive).
namespace detail_obj {

inline Var normalize_rows(const Var& m) {
  Var norm = ops::sqrt_v(ops::add_scalar(ops::row_sum(ops::square(m)), 1e-24));
  return ops::div_colvec(m, norm);
}

}  // namespace detail_obj

// Cosine similarity per aligned row pair: [B, D] x [B, D] -> [B, 1].
inline Var cosine_sim_rows(const Var& a, const Var& b) {
  return ops::row_sum(ops::mul(detail_obj::normalize_rows(a), detail_obj::normalize_rows(b)));
}

// NT-Xent over flattened content trajectories. Candidates for anchor i are
// the other anchors' representations plus all rows of extra_negs; neg_idx
// selects rows of [anchors; extra_negs] per anchor and defaults to every
// candidate except the anchor itself. extra_negs may be an empty Var.
inline Var nt_xent(const Var& anchors, const Var& positives, const Var& extra_negs, double tau,
                   std::vector<std::vector<size_t>> neg_idx = {}) {
  if (tau <= 0.0) throw ConfigError("nt_xent: tau must be positive");
  const size_t B = anchors.value().rows();
  const size_t F = extra_negs.defined() ? extra_negs.value().rows() : 0;
  if (B < 1) throw NumericError("nt_xent: empty batch");
  if (B + F < 2) throw NumericError("nt_xent: no negatives available");

  Var a_hat = detail_obj::normalize_rows(anchors);
  Var p_hat = detail_obj::normalize_rows(positives);
  Var pos_sim = ops::row_sum(ops::mul(a_hat, p_hat));  // [B,1]

  Var cand_hat = F > 0 ? ops::concat_rows({a_hat, detail_obj::normalize_rows(extra_negs)}) : a_hat;
  Var all_sim = ops::matmul_nt(a_hat, cand_hat);  // [B, B+F]

  if (neg_idx.empty()) {
    neg_idx.resize(B);
    for (size_t i = 0; i < B; ++i) {
      neg_idx[i].reserve(B + F - 1);
      for (size_t j = 0; j < B + F; ++j) {
        if (j != i) neg_idx[i].push_back(j);
      }
    }
  }
  if (neg_idx.size() != B) throw NumericError("nt_xent: negative index list size mismatch");
  for (const auto& row : neg_idx) {
    if (row.empty()) throw NumericError("nt_xent: anchor with no negatives");
    for (size_t j : row) {
      if (j >= B + F) throw NumericError("nt_xent: negative index out of range");
    }
  }
  Var neg_sim = ops::gather_cols_per_row(all_sim, neg_idx);

  Var logits = ops::mul_scalar(ops::concat_cols(pos_sim, neg_sim), 1.0 / tau);
  Var lse = ops::logsumexp_rows(logits);  // [B,1]
  return ops::mean_all(ops::sub(lse, ops::slice_cols(logits, 0, 1)));
}

// Ablation variant: mean cosine distance to the positive, no negatives.
inline Var positive_only_loss(const Var& anchors, const Var& positives) {
  return ops::mean_all(ops::scalar_sub(1.0, cosine_sim_rows(anchors, positives)));
}

// Mean of squared prior means and log-variances over all steps and dims.
inline Var prior_l2(const std::vector<Var>& prior_mus, const std::vector<Var>& prior_logvars) {
  if (prior_mus.empty() || prior_mus.size() != prior_logvars.size()) {
    throw NumericError("prior_l2: mismatched step lists");
  }
  std::vector<Var> parts;
  parts.reserve(2 * prior_mus.size());
  for (size_t t = 0; t < prior_mus.size(); ++t) {
    parts.push_back(prior_mus[t]);
    parts.push_back(prior_logvars[t]);
  }
  return ops::mean_all(ops::square(ops::concat_cols(parts)));
}

// Per-step inputs for one member of a positive pair.
struct PairMemberStep {
  Tensor x;            // [B, N] counts
  Var rates;           // [B, N]
  Var mu_q, logvar_q;  // [B, Ms]
  Var mu_p, logvar_p;  // [B, Ms]
  Var swap_rates;      // [B, N]; undefined when swapping is disabled
};

struct ObjectiveWeights {
  double beta = 1.0;
  double gamma = 1.0;
  double lambda_prior = 0.01;
  double tau = 0.5;
  int contrast = 0;  // 0 full, 1 positive-only, 2 off (kept as int to avoid a model dependency)
  bool swap = true;
};

struct LossTerms {
  Var recons, regular, contrast, swap_recons, prior_l2, total;

  LossBreakdown breakdown() const {
    LossBreakdown b;
    b.recons = recons.item();
    b.regular = regular.item();
    b.contrast = contrast.item();
    b.swap_recons = swap_recons.item();
    b.prior_l2 = prior_l2.item();
    b.total = total.item();
    return b;
  }
};

// Assembles the full training objective for a positive pair plus contrastive
// representations:
//   total = recons + swap_recons + beta*regular + gamma*contrast + lambda*prior_l2
// recons and regular are per-step means over time summed across the two pair
// members; the KL is additionally normalized by the style dimension so beta
// stays scale-comparable across latent sizes (the NLL is already a per-neuron
// mean).
inline LossTerms total_loss(const std::vector<PairMemberStep>& a,
                            const std::vector<PairMemberStep>& b, const Var& anchor_rep,
                            const Var& pos_rep, const Var& extra_neg_reps,
                            const ObjectiveWeights& w,
                            const std::vector<std::vector<size_t>>& neg_idx = {}) {
  if (a.empty() || a.size() != b.size()) throw NumericError("total_loss: pair length mismatch");
  const size_t T = a.size();
  const double inv_t = 1.0 / static_cast<double>(T);
  const double inv_ms = 1.0 / static_cast<double>(a[0].mu_q.value().cols());

  std::vector<Var> recons_terms, kl_terms, swap_terms, prior_mus, prior_logvars;
  for (const auto* member : {&a, &b}) {
    for (const auto& s : *member) {
      recons_terms.push_back(poisson_nll(s.x, s.rates));
      kl_terms.push_back(gaussian_kl(s.mu_q, s.logvar_q, s.mu_p, s.logvar_p));
      if (w.swap) {
        if (!s.swap_rates.defined()) throw NumericError("total_loss: missing swap rates");
        swap_terms.push_back(poisson_nll(s.x, s.swap_rates));
      }
      prior_mus.push_back(s.mu_p);
      prior_logvars.push_back(s.logvar_p);
    }
  }

  auto sum_scaled = [](const std::vector<Var>& terms, double scale) {
    Var acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = ops::add(acc, terms[i]);
    return ops::mul_scalar(acc, scale);
  };

  LossTerms out;
  out.recons = sum_scaled(recons_terms, inv_t);
  out.regular = sum_scaled(kl_terms, inv_t * inv_ms);
  out.swap_recons = w.swap ? sum_scaled(swap_terms, inv_t) : constant(0.0);
  if (w.contrast == 0) {
    out.contrast = nt_xent(anchor_rep, pos_rep, extra_neg_reps, w.tau, neg_idx);
  } else if (w.contrast == 1) {
    out.contrast = positive_only_loss(anchor_rep, pos_rep);
  } else {
    out.contrast = constant(0.0);
  }
  out.prior_l2 = prior_l2(prior_mus, prior_logvars);

  out.total = ops::add(out.recons, out.swap_recons);
  out.total = ops::add(out.total, ops::mul_scalar(out.regular, w.beta));
  out.total = ops::add(out.total, ops::mul_scalar(out.contrast, w.gamma));
  out.total = ops::add(out.total, ops::mul_scalar(out.prior_l2, w.lambda_prior));
  return out;
}

}  // namespace objectives
}  // namespace seqvae
