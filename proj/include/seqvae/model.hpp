#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "seqvae/io_util.hpp"
#include "seqvae/nn.hpp"

namespace seqvae {

enum class PriorKind { TimeDependent, StandardNormal };

inline const char* prior_kind_name(PriorKind k) {
  return k == PriorKind::TimeDependent ? "time_dependent" : "standard_normal";
}

inline PriorKind prior_kind_from(const std::string& s) {
  if (s == "time_dependent") return PriorKind::TimeDependent;
  if (s == "standard_normal") return PriorKind::StandardNormal;
  throw ConfigError("unknown prior kind: " + s);
}

enum class ContrastMode { Full, PositiveOnly, Off };

inline const char* contrast_mode_name(ContrastMode m) {
  switch (m) {
    case ContrastMode::Full: return "full";
    case ContrastMode::PositiveOnly: return "positive_only";
    case ContrastMode::Off: return "off";
  }
  return "full";
}

inline ContrastMode contrast_mode_from(const std::string& s) {
  if (s == "full") return ContrastMode::Full;
  if (s == "positive_only") return ContrastMode::PositiveOnly;
  if (s == "off") return ContrastMode::Off;
  throw ConfigError("unknown contrast mode: " + s);
}

struct ModelConfig {
  size_t n_neurons = 30;
  size_t latent_dim = 8;      // M, split evenly into content and style
  size_t state_dim = 0;       // H; 0 means "use latent_dim"
  size_t t_seq = 5;           // training window length
  size_t delta_max = 3;       // max |offset| of the positive window
  size_t markov_order = 0;    // inference window is order+1 points; 0 means "t_seq - 1"
  CellKind cell = CellKind::GRU;
  PriorKind prior = PriorKind::TimeDependent;
  ContrastMode contrast = ContrastMode::Full;
  bool swap = true;
  double beta = 1.0;
  double gamma = 1.0;
  double lambda_prior = 0.01;
  double tau = 0.5;

  size_t content_dim() const { return latent_dim / 2; }
  size_t style_dim() const { return latent_dim / 2; }
  size_t hidden_dim() const { return state_dim == 0 ? latent_dim : state_dim; }
  size_t inference_order() const { return markov_order == 0 ? t_seq - 1 : markov_order; }

  void validate() const {
    if (n_neurons == 0) throw ConfigError("n_neurons must be positive");
    if (latent_dim < 2 || latent_dim % 2 != 0) {
      throw ConfigError("latent_dim must be even and at least 2 (equal content/style split)");
    }
    if (t_seq == 0) throw ConfigError("t_seq must be positive");
    if (delta_max >= t_seq) {
      throw ConfigError("delta_max must be less than t_seq so positive windows overlap");
    }
    if (tau <= 0.0) throw ConfigError("tau must be positive");
    if (beta < 0.0 || gamma < 0.0 || lambda_prior < 0.0) {
      throw ConfigError("loss weights must be non-negative");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"n_neurons", n_neurons},
                          {"latent_dim", latent_dim},
                          {"state_dim", state_dim},
                          {"t_seq", t_seq},
                          {"delta_max", delta_max},
                          {"markov_order", markov_order},
                          {"cell", cell_kind_name(cell)},
                          {"prior", prior_kind_name(prior)},
                          {"contrast", contrast_mode_name(contrast)},
                          {"swap", swap},
                          {"beta", beta},
                          {"gamma", gamma},
                          {"lambda_prior", lambda_prior},
                          {"tau", tau}};
  }

  static ModelConfig from_json(const nlohmann::json& j);
};

namespace detail_cfg {

// Strict object parse: every key must be known, so hyperparameter typos fail
// loudly instead of training with defaults.
inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& allowed,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const auto& k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T dflt) {
  if (!j.contains(key)) return dflt;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad value for \"" + key + "\": " + e.what());
  }
}

}  // namespace detail_cfg

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  detail_cfg::reject_unknown(j,
                             {"n_neurons", "latent_dim", "state_dim", "t_seq", "delta_max",
                              "markov_order", "cell", "prior", "contrast", "swap", "beta", "gamma",
                              "lambda_prior", "tau"},
                             "model config");
  ModelConfig c;
  c.n_neurons = detail_cfg::get_or<size_t>(j, "n_neurons", c.n_neurons);
  c.latent_dim = detail_cfg::get_or<size_t>(j, "latent_dim", c.latent_dim);
  c.state_dim = detail_cfg::get_or<size_t>(j, "state_dim", c.state_dim);
  c.t_seq = detail_cfg::get_or<size_t>(j, "t_seq", c.t_seq);
  c.delta_max = detail_cfg::get_or<size_t>(j, "delta_max", c.delta_max);
  c.markov_order = detail_cfg::get_or<size_t>(j, "markov_order", c.markov_order);
  c.cell = cell_kind_from(detail_cfg::get_or<std::string>(j, "cell", cell_kind_name(c.cell)));
  c.prior = prior_kind_from(detail_cfg::get_or<std::string>(j, "prior", prior_kind_name(c.prior)));
  c.contrast =
      contrast_mode_from(detail_cfg::get_or<std::string>(j, "contrast", contrast_mode_name(c.contrast)));
  c.swap = detail_cfg::get_or<bool>(j, "swap", c.swap);
  c.beta = detail_cfg::get_or<double>(j, "beta", c.beta);
  c.gamma = detail_cfg::get_or<double>(j, "gamma", c.gamma);
  c.lambda_prior = detail_cfg::get_or<double>(j, "lambda_prior", c.lambda_prior);
  c.tau = detail_cfg::get_or<double>(j, "tau", c.tau);
  c.validate();
  return c;
}

// Everything the losses need from one unrolled time step.
struct StepVars {
  Var z_c;                        // deterministic content latent
  Var z_s;                        // style latent (sample or posterior mean)
  Var mu_q, logvar_q;             // posterior parameters
  Var mu_p, logvar_p;             // prior parameters
  Var rates;                      // decoded Poisson rates
  Var h_s_prev;                   // style state entering this step (decoder aux input)
};

struct Unrolled {
  std::vector<StepVars> steps;
};

class Model {
 public:
  Model(ModelConfig cfg, Rng& init_rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const size_t N = cfg_.n_neurons;
    const size_t M = cfg_.latent_dim;
    const size_t Mc = cfg_.content_dim();
    const size_t Ms = cfg_.style_dim();
    const size_t H = cfg_.hidden_dim();

    embed_ = Block(store_, "enc.embed", N, N, init_rng);
    enc_c1_ = Block(store_, "enc.content.b1", N + H, M, init_rng);
    enc_c2_ = Block(store_, "enc.content.b2", M, Mc, init_rng);
    enc_s1_ = Block(store_, "enc.style.b1", N + H, M, init_rng);
    enc_s2_ = Linear(store_, "enc.style.out", M, 2 * Ms, init_rng);
    prior_ = Linear(store_, "prior.out", H, 2 * Ms, init_rng);
    dec_1_ = Block(store_, "dec.b1", M + H, M, init_rng);
    dec_2_ = Block(store_, "dec.b2", M, M, init_rng);
    dec_out_ = Linear(store_, "dec.out", M, N, init_rng);
    cell_c_ = RecurrentCell(store_, "state.content", cfg_.cell, N, H, init_rng);
    cell_s_ = RecurrentCell(store_, "state.style", cfg_.cell, N + M, H, init_rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  static constexpr double kLogVarMin = -30.0;
  static constexpr double kLogVarMax = 10.0;

  Var embed_input(const Fwd& f, const Var& x_t) const { return embed_.forward(f, x_t); }

  Var encode_content(const Fwd& f, const Var& feat, const Var& h_c) const {
    return enc_c2_.forward(f, enc_c1_.forward(f, ops::concat_cols(feat, h_c)));
  }

  // Returns (mu, logvar), logvar clamped to a safe exponent range.
  std::pair<Var, Var> encode_style_posterior(const Fwd& f, const Var& feat, const Var& h_s) const {
    Var out = enc_s2_.forward(f, enc_s1_.forward(f, ops::concat_cols(feat, h_s)));
    const size_t Ms = cfg_.style_dim();
    Var mu = ops::slice_cols(out, 0, Ms);
    Var logvar = ops::clamp(ops::slice_cols(out, Ms, 2 * Ms), kLogVarMin, kLogVarMax);
    return {mu, logvar};
  }

  std::pair<Var, Var> compute_prior(const Fwd& f, const Var& h_s) const {
    const size_t Ms = cfg_.style_dim();
    const size_t B = h_s.value().rows();
    if (cfg_.prior == PriorKind::StandardNormal) {
      return {constant(Tensor::zeros({B, Ms})), constant(Tensor::zeros({B, Ms}))};
    }
    Var out = prior_.forward(f, h_s);
    Var mu = ops::slice_cols(out, 0, Ms);
    Var logvar = ops::clamp(ops::slice_cols(out, Ms, 2 * Ms), kLogVarMin, kLogVarMax);
    return {mu, logvar};
  }

  static Var reparameterize(const Var& mu, const Var& logvar, const Tensor& noise) {
    Var std = ops::exp_v(ops::mul_scalar(logvar, 0.5));
    return ops::add(mu, ops::mul(std, constant(noise)));
  }

  Var decode(const Fwd& f, const Var& z_c, const Var& z_s, const Var& h_s_prev) const {
    Var h = dec_2_.forward(f, dec_1_.forward(f, ops::concat_cols({z_c, z_s, h_s_prev})));
    return ops::softplus(dec_out_.forward(f, h));
  }

  CellState initial_content_state(size_t batch) const { return cell_c_.initial_state(batch); }
  CellState initial_style_state(size_t batch) const { return cell_s_.initial_state(batch); }

  CellState update_content_state(const Fwd& f, const Var& feat, const CellState& prev) const {
    return cell_c_.forward(f, feat, prev);
  }

  CellState update_style_state(const Fwd& f, const Var& feat, const Var& z_c, const Var& z_s,
                               const CellState& prev) const {
    return cell_s_.forward(f, ops::concat_cols({feat, z_c, z_s}), prev);
  }

  // Chronological unroll from zero initial states. x_steps holds one [B, N]
  // count matrix per time step. With noise_steps empty the style latent is the
  // posterior mean (deterministic evaluation); otherwise noise_steps must hold
  // one [B, style_dim] standard-normal draw per step.
  Unrolled unroll(const Fwd& f, const std::vector<Tensor>& x_steps,
                  const std::vector<Tensor>& noise_steps = {}) const {
    if (x_steps.empty()) throw DataError("unroll: empty sequence");
    const bool sample = !noise_steps.empty();
    if (sample && noise_steps.size() != x_steps.size()) {
      throw NumericError("unroll: noise steps do not match sequence length");
    }
    const size_t B = x_steps[0].rows();
    CellState hc = initial_content_state(B);
    CellState hs = initial_style_state(B);
    Unrolled out;
    out.steps.reserve(x_steps.size());
    for (size_t t = 0; t < x_steps.size(); ++t) {
      check_step_input(x_steps[t], B, t);
      StepVars sv;
      Var x = constant(x_steps[t]);
      Var feat = embed_input(f, x);
      sv.h_s_prev = hs.h;
      sv.z_c = encode_content(f, feat, hc.h);
      auto [mu_q, logvar_q] = encode_style_posterior(f, feat, hs.h);
      sv.mu_q = mu_q;
      sv.logvar_q = logvar_q;
      auto [mu_p, logvar_p] = compute_prior(f, hs.h);
      sv.mu_p = mu_p;
      sv.logvar_p = logvar_p;
      sv.z_s = sample ? reparameterize(mu_q, logvar_q, noise_steps[t]) : mu_q;
      sv.rates = decode(f, sv.z_c, sv.z_s, hs.h);
      hc = update_content_state(f, feat, hc);
      hs = update_style_state(f, feat, sv.z_c, sv.z_s, hs);
      if (!sv.rates.value().all_finite() || !sv.z_c.value().all_finite() ||
          !sv.z_s.value().all_finite()) {
        throw NumericError("unroll: non-finite values at step " + std::to_string(t));
      }
      out.steps.push_back(std::move(sv));
    }
    return out;
  }

  // Content path only (embedding, content head, content state). Negative
  // samples need nothing else, and the content path is noise-free.
  std::vector<Var> unroll_content(const Fwd& f, const std::vector<Tensor>& x_steps) const {
    if (x_steps.empty()) throw DataError("unroll_content: empty sequence");
    const size_t B = x_steps[0].rows();
    CellState hc = initial_content_state(B);
    std::vector<Var> zc;
    zc.reserve(x_steps.size());
    for (size_t t = 0; t < x_steps.size(); ++t) {
      check_step_input(x_steps[t], B, t);
      Var feat = embed_input(f, constant(x_steps[t]));
      zc.push_back(encode_content(f, feat, hc.h));
      hc = update_content_state(f, feat, hc);
    }
    return zc;
  }

 private:
  void check_step_input(const Tensor& x, size_t B, size_t t) const {
    if (x.rows() != B || x.cols() != cfg_.n_neurons) {
      throw DataError("unroll: step " + std::to_string(t) + " has shape " + x.shape_str() +
                      ", expected [" + std::to_string(B) + "," + std::to_string(cfg_.n_neurons) + "]");
    }
  }

  ModelConfig cfg_;
  ParamStore store_;
  Block embed_, enc_c1_, enc_c2_, enc_s1_;
  Linear enc_s2_, prior_, dec_out_;
  Block dec_1_, dec_2_;
  RecurrentCell cell_c_, cell_s_;
};

// [B, T*content_dim] trajectory representation used by the contrastive terms:
// per-step content latents flattened in time-major order.
inline Var flatten_content(const std::vector<Var>& zc_steps) {
  return ops::concat_cols(zc_steps);
}

inline Var flatten_content(const Unrolled& u) {
  std::vector<Var> zc;
  zc.reserve(u.steps.size());
  for (const auto& s : u.steps) zc.push_back(s.z_c);
  return ops::concat_cols(zc);
}

// ---- windowed inference ----

// Latents for every time step of one recording: step t is taken from the last
// position of an evaluation unroll over the window x_{t-n..t} (clipped at the
// start), so the result depends only on the n+1 most recent points.
// Rows: [T, latent_dim], content columns first.
inline Tensor infer_windowed_latents(const Model& model, ParamStore& store,
                                     const std::vector<uint32_t>& counts, size_t T, size_t N,
                                     size_t order) {
  if (T == 0) throw DataError("infer_windowed_latents: empty recording");
  if (N != model.config().n_neurons) {
    throw DataError("infer_windowed_latents: neuron count mismatch");
  }
  const size_t M = model.config().latent_dim;
  const size_t Mc = model.config().content_dim();
  Tensor out({T, M});

  NoGradGuard ng;
  Binding bind(store, false);
  Fwd f{bind, store, false};

  // Group target steps by window length so each group unrolls as one batch.
  // Steps t < order have short prefix windows (length t+1); all later steps
  // share the full length order+1.
  std::vector<std::vector<size_t>> groups;  // window length L = group index + 1
  size_t max_len = std::min(order + 1, T);
  groups.resize(max_len);
  for (size_t t = 0; t < T; ++t) {
    size_t len = std::min(t + 1, order + 1);
    groups[len - 1].push_back(t);
  }
  for (size_t li = 0; li < groups.size(); ++li) {
    const auto& targets = groups[li];
    if (targets.empty()) continue;
    const size_t L = li + 1;
    const size_t B = targets.size();
    std::vector<Tensor> x_steps(L, Tensor({B, N}));
    for (size_t b = 0; b < B; ++b) {
      size_t start = targets[b] + 1 - L;
      for (size_t s = 0; s < L; ++s) {
        const uint32_t* src = counts.data() + (start + s) * N;
        double* dst = x_steps[s].data() + b * N;
        for (size_t j = 0; j < N; ++j) dst[j] = static_cast<double>(src[j]);
      }
    }
    Unrolled u = model.unroll(f, x_steps);
    const StepVars& last = u.steps.back();
    for (size_t b = 0; b < B; ++b) {
      double* dst = out.data() + targets[b] * M;
      for (size_t j = 0; j < Mc; ++j) dst[j] = last.z_c.value().at(b, j);
      for (size_t j = 0; j < M - Mc; ++j) dst[Mc + j] = last.z_s.value().at(b, j);
    }
  }
  return out;
}

// ---- checkpoint format ----
// "NCKP" | version | config JSON | named parameter table | named buffer table.
// Tensors are stored in registration order; loading rebuilds the model from
// the embedded config and fills tensors by name, so the file round-trips
// byte-exactly.

inline void save_checkpoint_bytes(io::ByteWriter& w, const Model& model) {
  const ParamStore& s = model.store();
  w.raw("NCKP", 4);
  w.u32(1);
  w.str(model.config().to_json().dump());
  auto put_table = [&w, &s](const std::vector<std::string>& names, bool is_param) {
    w.u32(static_cast<uint32_t>(names.size()));
    for (const auto& name : names) {
      const Tensor& t = is_param ? s.param(name) : s.buffer(name);
      w.str(name);
      w.u32(static_cast<uint32_t>(t.rank()));
      for (size_t d : t.shape()) w.u32(static_cast<uint32_t>(d));
      for (size_t i = 0; i < t.numel(); ++i) w.f64(t[i]);
    }
  };
  put_table(s.param_names(), true);
  put_table(s.buffer_names(), false);
}

inline void save_checkpoint(const std::string& path, const Model& model) {
  io::ByteWriter w;
  save_checkpoint_bytes(w, model);
  w.save(path);
}

inline Model load_checkpoint(const std::string& path) {
  io::ByteReader r = io::ByteReader::from_file(path);
  r.expect_magic("NCKP");
  uint32_t version = r.u32();
  if (version != 1) {
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad config block: " + e.what());
  }
  ModelConfig cfg = ModelConfig::from_json(cfg_json);
  Rng dummy(0);
  Model model(cfg, dummy);
  auto get_table = [&r, &path](ParamStore& s, bool is_param) {
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
      std::string name = r.str();
      uint32_t rank = r.u32();
      std::vector<size_t> shape(rank);
      size_t numel = 1;
      for (uint32_t d = 0; d < rank; ++d) {
        shape[d] = r.u32();
        numel *= shape[d];
      }
      bool known = is_param ? s.has_param(name) : s.has_buffer(name);
      if (!known) {
        throw DataError(path + ": checkpoint tensor \"" + name + "\" not in this architecture");
      }
      Tensor& dst = is_param ? s.param(name) : s.buffer(name);
      if (dst.shape() != shape) {
        throw DataError(path + ": shape mismatch for \"" + name + "\"");
      }
      for (size_t k = 0; k < numel; ++k) dst[k] = r.f64();
    }
  };
  get_table(model.store(), true);
  get_table(model.store(), false);
  r.expect_end();
  return model;
}

}  // namespace seqvae
