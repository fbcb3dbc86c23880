#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "seqvae/data.hpp"
#include "seqvae/rng.hpp"

namespace seqvae::synth {

// ---- RealNVP flow (frozen random parameters, no gradients) ----
// Zero-pads a 2-vector to the observation dimension, then applies affine
// coupling layers with alternating half masks. The scale output is
// tanh-bounded so every layer stays well-conditioned and exactly invertible.

class RealNvp {
 public:
  RealNvp(size_t dim, size_t depth, size_t hidden, Rng& rng) : dim_(dim), depth_(depth) {
    if (dim % 2 != 0) throw ConfigError("realnvp: dim must be even");
    size_t half = dim / 2;
    layers_.reserve(depth);
    for (size_t k = 0; k < depth; ++k) {
      layers_.push_back(Coupling{TwoLayer(half, hidden, half, rng), TwoLayer(half, hidden, half, rng)});
    }
  }

  size_t dim() const { return dim_; }

  // v = (z padded with zeros), then depth coupling layers.
  std::vector<double> forward(double z0, double z1) const {
    std::vector<double> v(dim_, 0.0);
    v[0] = z0;
    v[1] = z1;
    for (size_t k = 0; k < depth_; ++k) apply(v, k, false);
    return v;
  }

  std::vector<double> inverse(std::vector<double> v) const {
    for (size_t k = depth_; k-- > 0;) apply(v, k, true);
    return v;
  }

 private:
  struct TwoLayer {
    Tensor w1, b1, w2, b2;
    TwoLayer() = default;
    TwoLayer(size_t in, size_t hidden, size_t out, Rng& rng)
        : w1({in, hidden}), b1({1, hidden}), w2({hidden, out}), b2({1, out}) {
      double s1 = 1.0 / std::sqrt(static_cast<double>(in));
      double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
      for (size_t i = 0; i < w1.numel(); ++i) w1[i] = rng.normal(0.0, s1);
      for (size_t i = 0; i < w2.numel(); ++i) w2[i] = rng.normal(0.0, s2);
    }

    std::vector<double> eval(const double* in, size_t n) const {
      size_t hidden = w1.cols(), out = w2.cols();
      std::vector<double> h(hidden, 0.0);
      for (size_t i = 0; i < n; ++i) {
        double vi = in[i];
        if (vi == 0.0) continue;
        const double* wrow = w1.data() + i * hidden;
        for (size_t j = 0; j < hidden; ++j) h[j] += vi * wrow[j];
      }
      for (size_t j = 0; j < hidden; ++j) h[j] = std::tanh(h[j] + b1[j]);
      std::vector<double> o(out, 0.0);
      for (size_t j = 0; j < hidden; ++j) {
        double hj = h[j];
        const double* wrow = w2.data() + j * out;
        for (size_t i = 0; i < out; ++i) o[i] += hj * wrow[i];
      }
      for (size_t i = 0; i < out; ++i) o[i] += b2[i];
      return o;
    }
  };

  struct Coupling {
    TwoLayer scale, shift;
  };

  // Even layers condition on the first half and transform the second;
  // odd layers swap the roles.
  void apply(std::vector<double>& v, size_t k, bool inverse) const {
    size_t half = dim_ / 2;
    size_t cond0 = (k % 2 == 0) ? 0 : half;
    size_t trans0 = (k % 2 == 0) ? half : 0;
    const Coupling& c = layers_[k];
    std::vector<double> s = c.scale.eval(v.data() + cond0, half);
    std::vector<double> t = c.shift.eval(v.data() + cond0, half);
    for (size_t i = 0; i < half; ++i) {
      double si = std::tanh(s[i]);
      if (inverse) {
        v[trans0 + i] = (v[trans0 + i] - t[i]) * std::exp(-si);
      } else {
        v[trans0 + i] = v[trans0 + i] * std::exp(si) + t[i];
      }
    }
  }

  size_t dim_;
  size_t depth_;
  std::vector<Coupling> layers_;
};

inline double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// ---- non-temporal four-cluster dataset ----

struct NonTemporalSpec {
  size_t n_clusters = 4;        // fixed by the label-interval formula
  size_t samples_per_cluster = 4000;
  size_t obs_dim = 100;
  size_t flow_depth = 4;
  size_t flow_hidden = 64;
  double variance_floor = 1e-3;
  uint64_t seed = 1;

  void validate() const {
    if (n_clusters != 4) throw ConfigError("nontemporal: n_clusters is fixed at 4");
    if (samples_per_cluster == 0 || obs_dim == 0 || obs_dim % 2 != 0) {
      throw ConfigError("nontemporal: bad sizes");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"generator", "nontemporal"},
                          {"n_clusters", n_clusters},
                          {"samples_per_cluster", samples_per_cluster},
                          {"obs_dim", obs_dim},
                          {"flow_depth", flow_depth},
                          {"flow_hidden", flow_hidden},
                          {"variance_floor", variance_floor},
                          {"seed", seed}};
  }
};

// Labels u come from four disjoint angle intervals [2i*pi/4, (2i+1)*pi/4];
// cluster latents are Gaussian around (5 sin u, 5 cos u) with variances
// (0.6 - 0.5|cos u|, 0.5|cos u|) floored away from zero. Observations are a
// frozen RealNVP lift of the latents, made positive and Poisson-sampled.
inline DatasetBundle gen_nontemporal(const NonTemporalSpec& spec) {
  spec.validate();
  Rng structure(derive_seed(spec.seed, 0));
  RealNvp flow(spec.obs_dim, spec.flow_depth, spec.flow_hidden, structure);

  DatasetBundle bundle;
  bundle.manifest = spec.to_json().dump();
  size_t train_per_cluster = (spec.samples_per_cluster * 8 + 5) / 10;  // 80%

  size_t sample_index = 0;
  for (size_t cluster = 0; cluster < spec.n_clusters; ++cluster) {
    for (size_t s = 0; s < spec.samples_per_cluster; ++s, ++sample_index) {
      Rng rng(derive_seed(spec.seed, 1000000 + sample_index));
      double lo = 2.0 * static_cast<double>(cluster) * M_PI / 4.0;
      double u = rng.uniform(lo, lo + M_PI / 4.0);
      double mean0 = 5.0 * std::sin(u);
      double mean1 = 5.0 * std::cos(u);
      double var0 = std::max(0.6 - 0.5 * std::abs(std::cos(u)), spec.variance_floor);
      double var1 = std::max(0.5 * std::abs(std::cos(u)), spec.variance_floor);
      double z0 = rng.normal(mean0, std::sqrt(var0));
      double z1 = rng.normal(mean1, std::sqrt(var1));

      std::vector<double> lifted = flow.forward(z0, z1);
      SpikeSequence seq;
      seq.T = 1;
      seq.N = spec.obs_dim;
      seq.label = static_cast<int32_t>(cluster);
      seq.latent_dim = 2;
      seq.latents = {z0, z1};
      seq.counts.resize(spec.obs_dim);
      for (size_t n = 0; n < spec.obs_dim; ++n) {
        seq.counts[n] = rng.poisson(softplus_value(lifted[n]));
      }
      if (s < train_per_cluster) {
        bundle.train.push_back(std::move(seq));
      } else {
        bundle.test.push_back(std::move(seq));
      }
    }
  }
  return bundle;
}

// Rebuilds the frozen flow a bundle was generated with (for invertibility and
// regeneration checks).
inline RealNvp nontemporal_flow(const NonTemporalSpec& spec) {
  Rng structure(derive_seed(spec.seed, 0));
  return RealNvp(spec.obs_dim, spec.flow_depth, spec.flow_hidden, structure);
}

// ---- Lorenz temporal dataset ----

struct LorenzSpec {
  double sigma = 10.0;
  double rho = 28.0;
  double b = 8.0 / 3.0;
  double dt = 0.005;            // model time advanced per 1 ms bin
  size_t steps = 1000;          // 1 s of 1 ms bins
  size_t burn_in = 500;
  size_t n_conditions = 5;
  size_t trials_per_condition = 20;
  size_t n_neurons = 30;
  double rate_hz = 20.0;
  double bin_seconds = 0.001;
  uint64_t seed = 1;

  void validate() const {
    if (dt <= 0.0 || steps == 0 || n_conditions == 0 || trials_per_condition == 0 || n_neurons == 0) {
      throw ConfigError("lorenz: bad sizes");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"generator", "lorenz"},
                          {"sigma", sigma},
                          {"rho", rho},
                          {"b", b},
                          {"dt", dt},
                          {"steps", steps},
                          {"burn_in", burn_in},
                          {"n_conditions", n_conditions},
                          {"trials_per_condition", trials_per_condition},
                          {"n_neurons", n_neurons},
                          {"rate_hz", rate_hz},
                          {"bin_seconds", bin_seconds},
                          {"seed", seed}};
  }
};

struct LorenzState {
  double x, y, z;
};

inline LorenzState lorenz_deriv(const LorenzSpec& s, const LorenzState& p) {
  return {s.sigma * (p.y - p.x), p.x * (s.rho - p.z) - p.y, p.x * p.y - s.b * p.z};
}

inline LorenzState lorenz_euler_step(const LorenzSpec& s, const LorenzState& p, double dt) {
  LorenzState d = lorenz_deriv(s, p);
  return {p.x + dt * d.x, p.y + dt * d.y, p.z + dt * d.z};
}

inline LorenzState lorenz_rk4_step(const LorenzSpec& s, const LorenzState& p, double dt) {
  LorenzState k1 = lorenz_deriv(s, p);
  LorenzState p2{p.x + 0.5 * dt * k1.x, p.y + 0.5 * dt * k1.y, p.z + 0.5 * dt * k1.z};
  LorenzState k2 = lorenz_deriv(s, p2);
  LorenzState p3{p.x + 0.5 * dt * k2.x, p.y + 0.5 * dt * k2.y, p.z + 0.5 * dt * k2.z};
  LorenzState k3 = lorenz_deriv(s, p3);
  LorenzState p4{p.x + dt * k3.x, p.y + dt * k3.y, p.z + dt * k3.z};
  LorenzState k4 = lorenz_deriv(s, p4);
  return {p.x + dt / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
          p.y + dt / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
          p.z + dt / 6.0 * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z)};
}

// One shared latent trajectory per condition; trials within the condition
// differ only in Poisson noise. Latents are standardized over the whole
// dataset before the readout and stored as the ground truth.
inline DatasetBundle gen_lorenz(const LorenzSpec& spec) {
  spec.validate();
  Rng structure(derive_seed(spec.seed, 0));

  // Latent trajectories, one per condition, with a non-finite guard.
  std::vector<std::vector<LorenzState>> trajs(spec.n_conditions);
  size_t regenerated = 0;
  for (size_t c = 0; c < spec.n_conditions; ++c) {
    for (;;) {
      LorenzState p{structure.uniform(-10.0, 10.0), structure.uniform(-10.0, 10.0),
                    structure.uniform(-10.0, 10.0)};
      bool ok = true;
      for (size_t i = 0; i < spec.burn_in && ok; ++i) {
        p = lorenz_rk4_step(spec, p, spec.dt);
        ok = std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z);
      }
      std::vector<LorenzState> traj;
      traj.reserve(spec.steps);
      for (size_t i = 0; i < spec.steps && ok; ++i) {
        traj.push_back(p);
        p = lorenz_rk4_step(spec, p, spec.dt);
        ok = std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z);
      }
      if (ok) {
        trajs[c] = std::move(traj);
        break;
      }
      ++regenerated;
    }
  }

  // Standardize each latent dimension over all conditions and steps.
  double mean[3] = {0, 0, 0}, var[3] = {0, 0, 0};
  size_t total = spec.n_conditions * spec.steps;
  for (const auto& traj : trajs) {
    for (const auto& p : traj) {
      mean[0] += p.x;
      mean[1] += p.y;
      mean[2] += p.z;
    }
  }
  for (double& m : mean) m /= static_cast<double>(total);
  for (const auto& traj : trajs) {
    for (const auto& p : traj) {
      var[0] += (p.x - mean[0]) * (p.x - mean[0]);
      var[1] += (p.y - mean[1]) * (p.y - mean[1]);
      var[2] += (p.z - mean[2]) * (p.z - mean[2]);
    }
  }
  double stddev[3];
  for (int d = 0; d < 3; ++d) stddev[d] = std::sqrt(std::max(var[d] / static_cast<double>(total), 1e-12));

  // Random linear readout shared by all trials.
  Tensor w({spec.n_neurons, 3});
  Tensor bias({spec.n_neurons});
  for (size_t i = 0; i < w.numel(); ++i) w[i] = structure.normal();
  for (size_t i = 0; i < bias.numel(); ++i) bias[i] = structure.normal();

  nlohmann::json manifest = spec.to_json();
  manifest["regenerated_conditions"] = regenerated;

  DatasetBundle bundle;
  bundle.manifest = manifest.dump();
  size_t train_per_condition = (spec.trials_per_condition * 8 + 5) / 10;

  for (size_t c = 0; c < spec.n_conditions; ++c) {
    // Standardized latents and per-bin rates, shared across the condition.
    std::vector<double> latents(spec.steps * 3);
    std::vector<double> rates(spec.steps * spec.n_neurons);
    for (size_t t = 0; t < spec.steps; ++t) {
      const LorenzState& p = trajs[c][t];
      double zs[3] = {(p.x - mean[0]) / stddev[0], (p.y - mean[1]) / stddev[1],
                      (p.z - mean[2]) / stddev[2]};
      for (int d = 0; d < 3; ++d) latents[t * 3 + d] = zs[d];
      for (size_t n = 0; n < spec.n_neurons; ++n) {
        double pre = w.at(n, 0) * zs[0] + w.at(n, 1) * zs[1] + w.at(n, 2) * zs[2] + bias[n];
        rates[t * spec.n_neurons + n] = softplus_value(pre) * spec.rate_hz * spec.bin_seconds;
      }
    }
    for (size_t trial = 0; trial < spec.trials_per_condition; ++trial) {
      Rng noise(derive_seed(spec.seed, 2000000 + c * spec.trials_per_condition + trial));
      SpikeSequence seq;
      seq.T = spec.steps;
      seq.N = spec.n_neurons;
      seq.label = static_cast<int32_t>(c);
      seq.latent_dim = 3;
      seq.latents = latents;
      seq.counts.resize(spec.steps * spec.n_neurons);
      for (size_t i = 0; i < seq.counts.size(); ++i) seq.counts[i] = noise.poisson(rates[i]);
      if (trial < train_per_condition) {
        bundle.train.push_back(std::move(seq));
      } else {
        bundle.test.push_back(std::move(seq));
      }
    }
  }
  return bundle;
}

// ---- time-shuffle control ----

// Permutes each trial's time indices (spikes and ground-truth latents move
// together), leaving everything else intact.
inline DatasetBundle shuffle_time(const DatasetBundle& src, uint64_t seed) {
  DatasetBundle out;
  nlohmann::json manifest{{"generator", "time_shuffle"}, {"seed", seed}};
  try {
    manifest["source"] = nlohmann::json::parse(src.manifest);
  } catch (const nlohmann::json::exception&) {
    manifest["source"] = src.manifest;
  }
  out.manifest = manifest.dump();

  size_t trial_counter = 0;
  auto shuffle_part = [&](const std::vector<SpikeSequence>& part) {
    std::vector<SpikeSequence> res;
    res.reserve(part.size());
    for (const auto& tr : part) {
      Rng rng(derive_seed(seed, trial_counter++));
      std::vector<size_t> perm(tr.T);
      for (size_t i = 0; i < tr.T; ++i) perm[i] = i;
      for (size_t i = tr.T; i > 1; --i) {
        size_t j = rng.index(i);
        std::swap(perm[i - 1], perm[j]);
      }
      SpikeSequence s = tr;
      for (size_t t = 0; t < tr.T; ++t) {
        size_t from = perm[t];
        for (size_t n = 0; n < tr.N; ++n) s.counts[t * tr.N + n] = tr.counts[from * tr.N + n];
        for (size_t d = 0; d < tr.latent_dim; ++d) {
          s.latents[t * tr.latent_dim + d] = tr.latents[from * tr.latent_dim + d];
        }
      }
      res.push_back(std::move(s));
    }
    return res;
  };
  out.train = shuffle_part(src.train);
  out.validation = shuffle_part(src.validation);
  out.test = shuffle_part(src.test);
  return out;
}

// ---- labeled scene-like surrogate ----

struct SceneSpec {
  size_t n_classes = 5;
  size_t trials_per_class = 50;
  size_t T = 25;
  size_t N = 100;
  double jitter = 0.3;
  uint64_t seed = 1;

  void validate() const {
    if (n_classes == 0 || trials_per_class == 0 || T == 0 || N == 0) {
      throw ConfigError("scene: bad sizes");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"generator", "scene"},      {"n_classes", n_classes},
                          {"trials_per_class", trials_per_class}, {"T", T},
                          {"N", N},                    {"jitter", jitter},
                          {"seed", seed}};
  }
};

// Per class, a fixed random rate template over T x N; each trial adds
// Gaussian rate jitter before Poisson sampling. Split 80/10/10 per class.
inline DatasetBundle gen_scene_surrogate(const SceneSpec& spec) {
  spec.validate();
  Rng structure(derive_seed(spec.seed, 0));

  std::vector<std::vector<double>> templates(spec.n_classes);
  for (auto& tpl : templates) {
    tpl.resize(spec.T * spec.N);
    for (auto& v : tpl) v = structure.uniform(0.5, 6.0);
  }

  DatasetBundle bundle;
  bundle.manifest = spec.to_json().dump();
  size_t n_train = spec.trials_per_class * 8 / 10;
  size_t n_val = spec.trials_per_class / 10;

  for (size_t c = 0; c < spec.n_classes; ++c) {
    for (size_t trial = 0; trial < spec.trials_per_class; ++trial) {
      Rng rng(derive_seed(spec.seed, 3000000 + c * spec.trials_per_class + trial));
      SpikeSequence seq;
      seq.T = spec.T;
      seq.N = spec.N;
      seq.label = static_cast<int32_t>(c);
      seq.counts.resize(spec.T * spec.N);
      for (size_t i = 0; i < seq.counts.size(); ++i) {
        double rate = std::max(templates[c][i] + rng.normal(0.0, spec.jitter), 0.01);
        seq.counts[i] = rng.poisson(rate);
      }
      if (trial < n_train) {
        bundle.train.push_back(std::move(seq));
      } else if (trial < n_train + n_val) {
        bundle.validation.push_back(std::move(seq));
      } else {
        bundle.test.push_back(std::move(seq));
      }
    }
  }
  return bundle;
}

}  // namespace seqvae::synth
