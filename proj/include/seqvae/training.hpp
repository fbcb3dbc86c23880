#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqvae/data.hpp"
#include "seqvae/model.hpp"
#include "seqvae/objectives.hpp"

namespace seqvae {

struct TrainConfig {
  size_t iterations = 5000;
  size_t batch_size = 64;
  size_t negatives = 0;  // per-anchor negative count; 0 means "the other anchors"
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;
  size_t log_interval = 100;
  size_t checkpoint_interval = 0;  // 0: final checkpoint only

  void validate() const {
    // Batch statistics (and the default negative set) need at least a pair.
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
      throw ConfigError("adam betas must lie in [0,1)");
    }
    if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
    if (log_interval == 0) throw ConfigError("log_interval must be positive");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"iterations", iterations},
                          {"batch_size", batch_size},
                          {"negatives", negatives},
                          {"lr", lr},
                          {"adam_beta1", adam_beta1},
                          {"adam_beta2", adam_beta2},
                          {"adam_eps", adam_eps},
                          {"seed", seed},
                          {"log_interval", log_interval},
                          {"checkpoint_interval", checkpoint_interval}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    detail_cfg::reject_unknown(j,
                               {"iterations", "batch_size", "negatives", "lr", "adam_beta1",
                                "adam_beta2", "adam_eps", "seed", "log_interval",
                                "checkpoint_interval"},
                               "train config");
    TrainConfig c;
    c.iterations = detail_cfg::get_or<size_t>(j, "iterations", c.iterations);
    c.batch_size = detail_cfg::get_or<size_t>(j, "batch_size", c.batch_size);
    c.negatives = detail_cfg::get_or<size_t>(j, "negatives", c.negatives);
    c.lr = detail_cfg::get_or<double>(j, "lr", c.lr);
    c.adam_beta1 = detail_cfg::get_or<double>(j, "adam_beta1", c.adam_beta1);
    c.adam_beta2 = detail_cfg::get_or<double>(j, "adam_beta2", c.adam_beta2);
    c.adam_eps = detail_cfg::get_or<double>(j, "adam_eps", c.adam_eps);
    c.seed = detail_cfg::get_or<uint64_t>(j, "seed", c.seed);
    c.log_interval = detail_cfg::get_or<size_t>(j, "log_interval", c.log_interval);
    c.checkpoint_interval = detail_cfg::get_or<size_t>(j, "checkpoint_interval", c.checkpoint_interval);
    c.validate();
    return c;
  }
};

// Standard bias-corrected Adam over a ParamStore, reading gradients from the
// current iteration's Binding. Parameters are visited in registration order.
class Adam {
 public:
  Adam(ParamStore& store, const TrainConfig& tc)
      : store_(store), lr_(tc.lr), b1_(tc.adam_beta1), b2_(tc.adam_beta2), eps_(tc.adam_eps) {
    for (const auto& name : store.param_names()) {
      moments_.emplace(name, std::make_pair(Tensor::zeros_like(store.param(name)),
                                            Tensor::zeros_like(store.param(name))));
    }
  }

  void step(const Binding& bind) {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (const auto& name : store_.param_names()) {
      const Tensor& g = bind[name].grad();
      if (!g.all_finite()) throw NumericError("adam: non-finite gradient for " + name);
      auto& [m, v] = moments_.at(name);
      Tensor& p = store_.param(name);
      for (size_t i = 0; i < p.numel(); ++i) {
        m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  size_t steps_taken() const { return t_; }

 private:
  ParamStore& store_;
  double lr_, b1_, b2_, eps_;
  size_t t_ = 0;
  std::unordered_map<std::string, std::pair<Tensor, Tensor>> moments_;
};

// ---- window sampling ----

struct WindowRef {
  size_t trial;  // index into the usable-trial list
  size_t t0;
};

// Uniform sampling over all (trial, start) window positions of a partition.
// Trials shorter than the window are excluded up front.
class WindowSampler {
 public:
  WindowSampler(const std::vector<SpikeSequence>& trials, size_t t_seq) : t_seq_(t_seq) {
    for (const auto& tr : trials) {
      if (tr.T >= t_seq) {
        usable_.push_back(&tr);
      } else {
        ++excluded_;
      }
    }
    if (usable_.empty()) {
      throw DataError("no trial is at least " + std::to_string(t_seq) + " steps long");
    }
    cum_.reserve(usable_.size());
    size_t acc = 0;
    for (const auto* tr : usable_) {
      acc += tr->T - t_seq + 1;
      cum_.push_back(acc);
    }
  }

  WindowRef draw(Rng& rng) const {
    size_t pick = static_cast<size_t>(rng.index(cum_.back()));
    size_t lo = 0, hi = cum_.size();
    while (lo + 1 < hi) {
      size_t mid = (lo + hi) / 2;
      if (pick < cum_[mid - 1]) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    size_t trial = lo;
    size_t base = trial == 0 ? 0 : cum_[trial - 1];
    return WindowRef{trial, pick - base};
  }

  const SpikeSequence& trial(size_t i) const { return *usable_[i]; }
  size_t usable_count() const { return usable_.size(); }
  size_t excluded_count() const { return excluded_; }
  size_t window_len() const { return t_seq_; }

 private:
  std::vector<const SpikeSequence*> usable_;
  std::vector<size_t> cum_;
  size_t t_seq_;
  size_t excluded_ = 0;
};

// Positive offset: uniform over {-d..d} minus zero, sign-reflected when the
// shifted window would leave the trial, identity if both directions fail
// (only possible when the trial length equals the window). d = 0 degenerates
// to the anchor itself (the non-temporal, single-step regime).
inline int64_t sample_positive_offset(size_t trial_len, size_t t0, size_t t_seq, size_t delta_max,
                                      Rng& rng) {
  if (trial_len < t_seq) throw DataError("sample_positive_offset: trial shorter than window");
  if (delta_max == 0) return 0;
  if (delta_max >= t_seq) throw ConfigError("sample_positive_offset: delta_max must be < t_seq");
  int64_t mag = 1 + static_cast<int64_t>(rng.index(delta_max));
  int64_t delta = rng.uniform() < 0.5 ? -mag : mag;
  int64_t last_start = static_cast<int64_t>(trial_len - t_seq);
  auto fits = [&](int64_t d) {
    int64_t s = static_cast<int64_t>(t0) + d;
    return s >= 0 && s <= last_start;
  };
  if (!fits(delta)) delta = -delta;
  if (!fits(delta)) delta = 0;
  return delta;
}

// ---- batch assembly ----

// One training iteration's inputs, fully materialized so the forward pass is
// a deterministic function of (parameters, batch). Anchors, positives, and
// fresh negatives run through the network as one concatenated batch (rows
// [0,B), [B,2B), [2B,2B+F)) so every group shares batch-norm statistics; a
// group forwarded alone would normalize against only itself.
struct BatchData {
  std::vector<Tensor> x_anchor;    // T_seq tensors of [B, N]
  std::vector<Tensor> x_positive;  // T_seq tensors of [B, N]
  std::vector<Tensor> x_extra;     // T_seq tensors of [F, N]; empty when F = 0
  std::vector<Tensor> noise;       // T_seq tensors of [2B+F, Ms]
  std::vector<std::vector<size_t>> neg_idx;  // per anchor, rows of [anchors; extras]
};

inline std::vector<Tensor> windows_to_steps(const WindowSampler& sampler,
                                            const std::vector<WindowRef>& refs, size_t t_seq) {
  size_t B = refs.size();
  size_t N = sampler.trial(refs[0].trial).N;
  std::vector<Tensor> steps(t_seq, Tensor({B, N}));
  for (size_t b = 0; b < B; ++b) {
    const SpikeSequence& tr = sampler.trial(refs[b].trial);
    for (size_t s = 0; s < t_seq; ++s) {
      const uint32_t* src = tr.counts.data() + (refs[b].t0 + s) * N;
      double* dst = steps[s].data() + b * N;
      for (size_t n = 0; n < N; ++n) dst[n] = static_cast<double>(src[n]);
    }
  }
  return steps;
}

inline std::vector<Tensor> draw_noise_steps(size_t t_seq, size_t B, size_t dim, Rng& rng) {
  std::vector<Tensor> noise(t_seq, Tensor({B, dim}));
  for (size_t t = 0; t < t_seq; ++t) {
    for (size_t i = 0; i < B * dim; ++i) noise[t][i] = rng.normal();
  }
  return noise;
}

// Negative rows for anchor i: the other anchors in cyclic order starting at
// i+1, then the fresh extra windows, truncated to the configured count.
inline std::vector<std::vector<size_t>> build_negative_indices(size_t B, size_t n_extra, size_t k) {
  std::vector<std::vector<size_t>> idx(B);
  for (size_t i = 0; i < B; ++i) {
    idx[i].reserve(k);
    for (size_t j = 1; j < B && idx[i].size() < k; ++j) idx[i].push_back((i + j) % B);
    for (size_t e = 0; e < n_extra && idx[i].size() < k; ++e) idx[i].push_back(B + e);
  }
  return idx;
}

inline BatchData sample_batch(const WindowSampler& sampler, const ModelConfig& mc, size_t batch_size,
                              size_t k_negatives, Rng& sample_rng, Rng& noise_rng) {
  const size_t t_seq = mc.t_seq;
  std::vector<WindowRef> anchors, positives;
  anchors.reserve(batch_size);
  positives.reserve(batch_size);
  for (size_t b = 0; b < batch_size; ++b) {
    WindowRef a = sampler.draw(sample_rng);
    const SpikeSequence& tr = sampler.trial(a.trial);
    int64_t delta = sample_positive_offset(tr.T, a.t0, t_seq, mc.delta_max, sample_rng);
    anchors.push_back(a);
    positives.push_back(WindowRef{a.trial, static_cast<size_t>(static_cast<int64_t>(a.t0) + delta)});
  }
  size_t k = k_negatives == 0 ? batch_size - 1 : k_negatives;
  size_t n_extra = k > batch_size - 1 ? k - (batch_size - 1) : 0;
  std::vector<WindowRef> extras;
  extras.reserve(n_extra);
  for (size_t e = 0; e < n_extra; ++e) extras.push_back(sampler.draw(sample_rng));

  BatchData batch;
  batch.x_anchor = windows_to_steps(sampler, anchors, t_seq);
  batch.x_positive = windows_to_steps(sampler, positives, t_seq);
  if (n_extra > 0) batch.x_extra = windows_to_steps(sampler, extras, t_seq);
  batch.noise = draw_noise_steps(t_seq, 2 * batch_size + n_extra, mc.style_dim(), noise_rng);
  batch.neg_idx = build_negative_indices(batch_size, n_extra, k);
  return batch;
}

// ---- loss assembly over one batch ----

inline Tensor stack_rows(const std::vector<const Tensor*>& parts) {
  size_t rows = 0;
  size_t cols = parts.at(0)->cols();
  for (const Tensor* p : parts) rows += p->rows();
  Tensor out({rows, cols});
  double* dst = out.data();
  for (const Tensor* p : parts) {
    std::copy(p->data(), p->data() + p->numel(), dst);
    dst += p->numel();
  }
  return out;
}

inline objectives::LossTerms batch_loss(const Model& model, const Fwd& f, const BatchData& batch) {
  const ModelConfig& mc = model.config();
  const size_t T = batch.x_anchor.size();
  const size_t B = batch.x_anchor.at(0).rows();
  const size_t F = batch.x_extra.empty() ? 0 : batch.x_extra[0].rows();

  std::vector<Tensor> x_all(T);
  for (size_t t = 0; t < T; ++t) {
    std::vector<const Tensor*> parts{&batch.x_anchor[t], &batch.x_positive[t]};
    if (F > 0) parts.push_back(&batch.x_extra[t]);
    x_all[t] = stack_rows(parts);
  }
  Unrolled u = model.unroll(f, x_all, batch.noise);

  std::vector<size_t> idx_a(B), idx_p(B), idx_ap(2 * B), idx_e(F), idx_swap(2 * B);
  for (size_t i = 0; i < B; ++i) {
    idx_a[i] = i;
    idx_p[i] = B + i;
    idx_swap[i] = B + i;      // anchors decode with the positive's content
    idx_swap[B + i] = i;      // positives decode with the anchor's content
  }
  for (size_t i = 0; i < 2 * B; ++i) idx_ap[i] = i;
  for (size_t i = 0; i < F; ++i) idx_e[i] = 2 * B + i;

  Var rep_all = flatten_content(u);  // [2B+F, T*Mc]
  Var anchor_rep = ops::select_rows(rep_all, idx_a);
  Var pos_rep = ops::select_rows(rep_all, idx_p);
  Var extra_rep;
  if (mc.contrast == ContrastMode::Full && F > 0) {
    extra_rep = ops::select_rows(rep_all, idx_e);
  }

  std::vector<objectives::PairMemberStep> sa(T), sb(T);
  for (size_t t = 0; t < T; ++t) {
    const StepVars& s = u.steps[t];
    sa[t] = {batch.x_anchor[t],
             ops::select_rows(s.rates, idx_a),
             ops::select_rows(s.mu_q, idx_a),
             ops::select_rows(s.logvar_q, idx_a),
             ops::select_rows(s.mu_p, idx_a),
             ops::select_rows(s.logvar_p, idx_a),
             Var()};
    sb[t] = {batch.x_positive[t],
             ops::select_rows(s.rates, idx_p),
             ops::select_rows(s.mu_q, idx_p),
             ops::select_rows(s.logvar_q, idx_p),
             ops::select_rows(s.mu_p, idx_p),
             ops::select_rows(s.logvar_p, idx_p),
             Var()};
    if (mc.swap) {
      // Content latents cross the pair; style latents and state stay home.
      Var swapped = model.decode(f, ops::select_rows(s.z_c, idx_swap),
                                 ops::select_rows(s.z_s, idx_ap),
                                 ops::select_rows(s.h_s_prev, idx_ap));
      sa[t].swap_rates = ops::select_rows(swapped, idx_a);
      sb[t].swap_rates = ops::select_rows(swapped, idx_p);
    }
  }

  objectives::ObjectiveWeights w;
  w.beta = mc.beta;
  w.gamma = mc.gamma;
  w.lambda_prior = mc.lambda_prior;
  w.tau = mc.tau;
  w.contrast = mc.contrast == ContrastMode::Full ? 0 : mc.contrast == ContrastMode::PositiveOnly ? 1 : 2;
  w.swap = mc.swap;
  return objectives::total_loss(sa, sb, anchor_rep, pos_rep, extra_rep, w, batch.neg_idx);
}

inline void check_loss_finite(const LossBreakdown& b) {
  auto bad = [](double v) { return !std::isfinite(v); };
  if (bad(b.recons)) throw NumericError("training aborted: non-finite reconstruction loss");
  if (bad(b.regular)) throw NumericError("training aborted: non-finite KL loss");
  if (bad(b.contrast)) throw NumericError("training aborted: non-finite contrastive loss");
  if (bad(b.swap_recons)) throw NumericError("training aborted: non-finite swap loss");
  if (bad(b.prior_l2)) throw NumericError("training aborted: non-finite prior regularizer");
  if (bad(b.total)) throw NumericError("training aborted: non-finite total loss");
}

struct TrainResult {
  std::string loss_log;
  std::vector<std::pair<size_t, LossBreakdown>> history;
  size_t excluded_trials = 0;
};

inline std::string format_loss_line(size_t iter, const LossBreakdown& b) {
  std::string line = "iter=" + std::to_string(iter);
  line += " recons=" + fmt_double(b.recons);
  line += " regular=" + fmt_double(b.regular);
  line += " contrast=" + fmt_double(b.contrast);
  line += " swap_recons=" + fmt_double(b.swap_recons);
  line += " prior_l2=" + fmt_double(b.prior_l2);
  line += " total=" + fmt_double(b.total);
  return line;
}

// Full optimization loop. out_dir, when non-empty, receives periodic
// checkpoints named by iteration; the final state stays in the model. on_log
// fires once per logged record for live progress output.
inline TrainResult train(Model& model, const TrainConfig& tc, const DatasetBundle& bundle,
                         const std::string& out_dir = "",
                         const std::function<void(const std::string&)>& on_log = {}) {
  tc.validate();
  const ModelConfig& mc = model.config();
  WindowSampler sampler(bundle.train, mc.t_seq);

  Rng sample_rng(derive_seed(tc.seed, 1));
  Rng noise_rng(derive_seed(tc.seed, 2));
  Adam adam(model.store(), tc);

  TrainResult result;
  result.excluded_trials = sampler.excluded_count();
  if (result.excluded_trials > 0) {
    result.loss_log += "warning: excluded " + std::to_string(result.excluded_trials) +
                       " trials shorter than t_seq=" + std::to_string(mc.t_seq) + "\n";
  }

  for (size_t iter = 1; iter <= tc.iterations; ++iter) {
    BatchData batch = sample_batch(sampler, mc, tc.batch_size, tc.negatives, sample_rng, noise_rng);
    Binding bind(model.store(), true);
    Fwd f{bind, model.store(), true};
    objectives::LossTerms terms = batch_loss(model, f, batch);
    LossBreakdown b = terms.breakdown();
    check_loss_finite(b);
    backward(terms.total);
    adam.step(bind);

    if (iter % tc.log_interval == 0 || iter == tc.iterations) {
      std::string line = format_loss_line(iter, b);
      result.loss_log += line + "\n";
      result.history.emplace_back(iter, b);
      if (on_log) on_log(line);
    }
    if (!out_dir.empty() && tc.checkpoint_interval > 0 && iter % tc.checkpoint_interval == 0 &&
        iter != tc.iterations) {
      save_checkpoint(out_dir + "/checkpoint_" + std::to_string(iter) + ".nckp", model);
    }
  }
  return result;
}

}  // namespace seqvae
