#pragma once

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "seqvae/evaluation.hpp"
#include "seqvae/gradcheck.hpp"
#include "seqvae/model.hpp"
#include "seqvae/synthdata.hpp"
#include "seqvae/training.hpp"

namespace seqvae {
namespace exp {

// ---- dataset generation configs ----

inline synth::NonTemporalSpec nontemporal_spec_from_json(const nlohmann::json& j) {
  detail_cfg::reject_unknown(j,
                             {"n_clusters", "samples_per_cluster", "obs_dim", "flow_depth",
                              "flow_hidden", "variance_floor", "seed"},
                             "nontemporal params");
  synth::NonTemporalSpec s;
  s.n_clusters = detail_cfg::get_or<size_t>(j, "n_clusters", s.n_clusters);
  s.samples_per_cluster = detail_cfg::get_or<size_t>(j, "samples_per_cluster", s.samples_per_cluster);
  s.obs_dim = detail_cfg::get_or<size_t>(j, "obs_dim", s.obs_dim);
  s.flow_depth = detail_cfg::get_or<size_t>(j, "flow_depth", s.flow_depth);
  s.flow_hidden = detail_cfg::get_or<size_t>(j, "flow_hidden", s.flow_hidden);
  s.variance_floor = detail_cfg::get_or<double>(j, "variance_floor", s.variance_floor);
  s.seed = detail_cfg::get_or<uint64_t>(j, "seed", s.seed);
  s.validate();
  return s;
}

inline synth::LorenzSpec lorenz_spec_from_json(const nlohmann::json& j) {
  detail_cfg::reject_unknown(j,
                             {"sigma", "rho", "b", "dt", "steps", "burn_in", "n_conditions",
                              "trials_per_condition", "n_neurons", "rate_hz", "bin_seconds", "seed"},
                             "lorenz params");
  synth::LorenzSpec s;
  s.sigma = detail_cfg::get_or<double>(j, "sigma", s.sigma);
  s.rho = detail_cfg::get_or<double>(j, "rho", s.rho);
  s.b = detail_cfg::get_or<double>(j, "b", s.b);
  s.dt = detail_cfg::get_or<double>(j, "dt", s.dt);
  s.steps = detail_cfg::get_or<size_t>(j, "steps", s.steps);
  s.burn_in = detail_cfg::get_or<size_t>(j, "burn_in", s.burn_in);
  s.n_conditions = detail_cfg::get_or<size_t>(j, "n_conditions", s.n_conditions);
  s.trials_per_condition = detail_cfg::get_or<size_t>(j, "trials_per_condition", s.trials_per_condition);
  s.n_neurons = detail_cfg::get_or<size_t>(j, "n_neurons", s.n_neurons);
  s.rate_hz = detail_cfg::get_or<double>(j, "rate_hz", s.rate_hz);
  s.bin_seconds = detail_cfg::get_or<double>(j, "bin_seconds", s.bin_seconds);
  s.seed = detail_cfg::get_or<uint64_t>(j, "seed", s.seed);
  s.validate();
  return s;
}

inline synth::SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  detail_cfg::reject_unknown(j, {"n_classes", "trials_per_class", "T", "N", "jitter", "seed"},
                             "scene params");
  synth::SceneSpec s;
  s.n_classes = detail_cfg::get_or<size_t>(j, "n_classes", s.n_classes);
  s.trials_per_class = detail_cfg::get_or<size_t>(j, "trials_per_class", s.trials_per_class);
  s.T = detail_cfg::get_or<size_t>(j, "T", s.T);
  s.N = detail_cfg::get_or<size_t>(j, "N", s.N);
  s.jitter = detail_cfg::get_or<double>(j, "jitter", s.jitter);
  s.seed = detail_cfg::get_or<uint64_t>(j, "seed", s.seed);
  s.validate();
  return s;
}

struct GenConfig {
  std::string dataset;  // nontemporal | lorenz | scene
  nlohmann::json params = nlohmann::json::object();
  bool shuffle_time = false;
  uint64_t shuffle_seed = 1;

  static GenConfig from_json(const nlohmann::json& j) {
    detail_cfg::reject_unknown(j, {"dataset", "params", "shuffle_time", "shuffle_seed"},
                               "gen config");
    GenConfig c;
    if (!j.contains("dataset")) throw ConfigError("gen config: missing 'dataset'");
    c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("params")) {
      if (!j.at("params").is_object()) throw ConfigError("gen config: 'params' must be an object");
      c.params = j.at("params");
    }
    c.shuffle_time = detail_cfg::get_or<bool>(j, "shuffle_time", c.shuffle_time);
    c.shuffle_seed = detail_cfg::get_or<uint64_t>(j, "shuffle_seed", c.shuffle_seed);
    return c;
  }
};

inline DatasetBundle run_gen(const GenConfig& cfg) {
  DatasetBundle bundle;
  if (cfg.dataset == "nontemporal") {
    bundle = synth::gen_nontemporal(nontemporal_spec_from_json(cfg.params));
  } else if (cfg.dataset == "lorenz") {
    bundle = synth::gen_lorenz(lorenz_spec_from_json(cfg.params));
  } else if (cfg.dataset == "scene") {
    bundle = synth::gen_scene_surrogate(scene_spec_from_json(cfg.params));
  } else {
    throw ConfigError("gen config: unknown dataset '" + cfg.dataset +
                      "' (expected nontemporal, lorenz, or scene)");
  }
  if (cfg.shuffle_time) bundle = synth::shuffle_time(bundle, cfg.shuffle_seed);
  return bundle;
}

// ---- train run config ----

struct TrainRunConfig {
  ModelConfig model;
  TrainConfig train;

  nlohmann::json to_json() const {
    return nlohmann::json{{"model", model.to_json()}, {"train", train.to_json()}};
  }

  static TrainRunConfig from_json(const nlohmann::json& j) {
    detail_cfg::reject_unknown(j, {"model", "train"}, "train run config");
    TrainRunConfig c;
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    return c;
  }
};

// ---- evaluation protocols ----

struct EvalOptions {
  std::string protocol = "reconstruction";  // reconstruction | classification | scene | movie
  eval::LatentBlock block = eval::LatentBlock::Both;
  size_t window = 20;       // trailing steps concatenated for scene reps
  int frame_window = 0;     // movie accuracy tolerance in frames
  size_t frame_group = 4;   // latent steps averaged per movie frame
  size_t markov_order = 0;  // 0: model default
  bool fit_on_train = false;
};

namespace detail_exp {

inline size_t effective_order(const Model& model, const EvalOptions& opt) {
  return opt.markov_order > 0 ? opt.markov_order : model.config().inference_order();
}

inline Tensor infer_trial(const Model& model, ParamStore& store, const SpikeSequence& tr,
                          size_t order, eval::LatentBlock block, size_t content_dim) {
  Tensor lat = infer_windowed_latents(model, store, tr.counts, tr.T, tr.N, order);
  return eval::select_latent_cols(lat, block, content_dim);
}

// Representation per trial plus label, for the classification protocols.
struct LabeledReps {
  std::vector<std::vector<double>> x;
  std::vector<int32_t> y;
};

// Moves every tenth representation into a validation split when the dataset
// ships none. At least one point stays on each side.
inline void carve_validation(LabeledReps& train, LabeledReps& val) {
  LabeledReps kept;
  for (size_t i = 0; i < train.x.size(); ++i) {
    if (i % 10 == 9) {
      val.x.push_back(std::move(train.x[i]));
      val.y.push_back(train.y[i]);
    } else {
      kept.x.push_back(std::move(train.x[i]));
      kept.y.push_back(train.y[i]);
    }
  }
  if (val.x.empty()) {
    if (kept.x.size() < 2) throw DataError("too few training points to carve a validation split");
    val.x.push_back(std::move(kept.x.back()));
    val.y.push_back(kept.y.back());
    kept.x.pop_back();
    kept.y.pop_back();
  }
  train = std::move(kept);
}

inline nlohmann::json decoding_json(const eval::DecodingResult& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cls, acc] : r.per_class) per_class[std::to_string(cls)] = acc;
  return nlohmann::json{{"accuracy", r.accuracy},
                        {"chosen_k", r.chosen_k},
                        {"per_class", per_class},
                        {"n_test", r.n_test}};
}

}  // namespace detail_exp

// Linear readout of ground-truth latents from inferred latents, scored on the
// test split. The readout is fitted on the scored points themselves unless
// fit_on_train is set.
inline nlohmann::json eval_reconstruction(const Model& model, ParamStore& store,
                                          const DatasetBundle& bundle, const EvalOptions& opt) {
  const size_t order = detail_exp::effective_order(model, opt);
  const size_t mc_dim = model.config().content_dim();

  auto collect = [&](const std::vector<SpikeSequence>& part, const char* name) {
    size_t rows = 0;
    for (const auto& tr : part) {
      if (tr.latent_dim == 0) {
        throw DataError(std::string("reconstruction protocol requires ground-truth latents in the ") +
                        name + " split");
      }
      rows += tr.T;
    }
    if (rows == 0) throw DataError(std::string("empty ") + name + " split");
    size_t xcols = 0;
    Tensor x, y;
    size_t r0 = 0;
    for (const auto& tr : part) {
      Tensor lat = detail_exp::infer_trial(model, store, tr, order, opt.block, mc_dim);
      if (r0 == 0) {
        xcols = lat.cols();
        x = Tensor({rows, xcols});
        y = Tensor({rows, tr.latent_dim});
      }
      for (size_t t = 0; t < tr.T; ++t, ++r0) {
        for (size_t c = 0; c < xcols; ++c) x.data()[r0 * xcols + c] = lat.data()[t * xcols + c];
        const double* src = tr.latent_row(t);
        for (size_t c = 0; c < tr.latent_dim; ++c) y.data()[r0 * tr.latent_dim + c] = src[c];
      }
    }
    return std::make_pair(x, y);
  };

  auto [x_test, y_test] = collect(bundle.test, "test");
  eval::ReconstructionScore score;
  if (opt.fit_on_train) {
    auto [x_train, y_train] = collect(bundle.train, "train");
    score = eval::linear_r2(x_train, y_train, x_test, y_test);
  } else {
    score = eval::linear_r2(x_test, y_test);
  }

  return nlohmann::json{{"protocol", "reconstruction"},
                        {"latents", eval::latent_block_name(opt.block)},
                        {"markov_order", order},
                        {"fit_on", opt.fit_on_train ? "train" : "test"},
                        {"r_squared", score.r_squared},
                        {"per_dim", score.per_dim},
                        {"n_points", score.n_points},
                        {"ridge_fallback", score.ridge_fallback}};
}

// KNN over whole-trial representations (all latent steps concatenated).
inline nlohmann::json eval_classification(const Model& model, ParamStore& store,
                                          const DatasetBundle& bundle, const EvalOptions& opt) {
  const size_t order = detail_exp::effective_order(model, opt);
  const size_t mc_dim = model.config().content_dim();

  auto reps = [&](const std::vector<SpikeSequence>& part, const char* name) {
    detail_exp::LabeledReps r;
    for (const auto& tr : part) {
      if (tr.label < 0) {
        throw DataError(std::string("classification protocol requires labels in the ") + name +
                        " split");
      }
      Tensor lat = detail_exp::infer_trial(model, store, tr, order, opt.block, mc_dim);
      r.x.push_back(eval::concat_last_steps(lat, lat.rows()));
      r.y.push_back(tr.label);
    }
    return r;
  };

  detail_exp::LabeledReps train = reps(bundle.train, "train");
  detail_exp::LabeledReps test = reps(bundle.test, "test");
  detail_exp::LabeledReps val;
  bool carved = bundle.validation.empty();
  if (carved) {
    detail_exp::carve_validation(train, val);
  } else {
    val = reps(bundle.validation, "validation");
  }

  eval::KnnClassifier knn(std::move(train.x), std::move(train.y));
  eval::DecodingResult r = eval::knn_classify(knn, val.x, val.y, test.x, test.y);
  nlohmann::json out = detail_exp::decoding_json(r);
  out["protocol"] = "classification";
  out["latents"] = eval::latent_block_name(opt.block);
  out["markov_order"] = order;
  out["validation_carved"] = carved;
  return out;
}

// KNN over trailing-window representations (scene-identity decoding).
inline nlohmann::json eval_scene(const Model& model, ParamStore& store, const DatasetBundle& bundle,
                                 const EvalOptions& opt) {
  const size_t order = detail_exp::effective_order(model, opt);
  const size_t mc_dim = model.config().content_dim();

  auto reps = [&](const std::vector<SpikeSequence>& part, const char* name) {
    detail_exp::LabeledReps r;
    for (const auto& tr : part) {
      if (tr.label < 0) {
        throw DataError(std::string("scene protocol requires labels in the ") + name + " split");
      }
      Tensor lat = detail_exp::infer_trial(model, store, tr, order, opt.block, mc_dim);
      r.x.push_back(eval::concat_last_steps(lat, opt.window));
      r.y.push_back(tr.label);
    }
    return r;
  };

  detail_exp::LabeledReps train = reps(bundle.train, "train");
  detail_exp::LabeledReps test = reps(bundle.test, "test");
  detail_exp::LabeledReps val;
  bool carved = bundle.validation.empty();
  if (carved) {
    detail_exp::carve_validation(train, val);
  } else {
    val = reps(bundle.validation, "validation");
  }

  eval::KnnClassifier knn(std::move(train.x), std::move(train.y));
  eval::DecodingResult r = eval::knn_classify(knn, val.x, val.y, test.x, test.y);
  nlohmann::json out = detail_exp::decoding_json(r);
  out["protocol"] = "scene";
  out["latents"] = eval::latent_block_name(opt.block);
  out["markov_order"] = order;
  out["window"] = opt.window;
  out["validation_carved"] = carved;
  return out;
}

// Frame-index decoding within trials: one representation per group of
// frame_group steps, labeled by frame position, scored with a tolerance of
// frame_window frames either way.
inline nlohmann::json eval_movie(const Model& model, ParamStore& store, const DatasetBundle& bundle,
                                 const EvalOptions& opt) {
  const size_t order = detail_exp::effective_order(model, opt);
  const size_t mc_dim = model.config().content_dim();

  auto reps = [&](const std::vector<SpikeSequence>& part, const char* name) {
    detail_exp::LabeledReps r;
    for (const auto& tr : part) {
      Tensor lat = detail_exp::infer_trial(model, store, tr, order, opt.block, mc_dim);
      auto frames = eval::frame_means(lat, opt.frame_group);
      if (frames.empty()) {
        throw DataError(std::string("movie protocol: trial shorter than one frame group in the ") +
                        name + " split");
      }
      for (size_t fidx = 0; fidx < frames.size(); ++fidx) {
        r.x.push_back(std::move(frames[fidx]));
        r.y.push_back(static_cast<int32_t>(fidx));
      }
    }
    return r;
  };

  detail_exp::LabeledReps train = reps(bundle.train, "train");
  detail_exp::LabeledReps test = reps(bundle.test, "test");
  detail_exp::LabeledReps val;
  bool carved = bundle.validation.empty();
  if (carved) {
    detail_exp::carve_validation(train, val);
  } else {
    val = reps(bundle.validation, "validation");
  }

  eval::KnnClassifier knn(std::move(train.x), std::move(train.y));
  size_t k = knn.select_k(val.x, val.y);
  std::vector<int32_t> preds = knn.predict_all(test.x, k);
  double exact = eval::windowed_accuracy(preds, test.y, 0);
  double windowed = eval::windowed_accuracy(preds, test.y, opt.frame_window);

  return nlohmann::json{{"protocol", "movie"},
                        {"latents", eval::latent_block_name(opt.block)},
                        {"markov_order", order},
                        {"chosen_k", k},
                        {"frame_group", opt.frame_group},
                        {"frame_window", opt.frame_window},
                        {"accuracy", exact},
                        {"windowed_accuracy", windowed},
                        {"n_test", preds.size()},
                        {"validation_carved", carved}};
}

inline nlohmann::json run_protocol(const Model& model, ParamStore& store,
                                   const DatasetBundle& bundle, const EvalOptions& opt) {
  if (opt.protocol == "reconstruction") return eval_reconstruction(model, store, bundle, opt);
  if (opt.protocol == "classification") return eval_classification(model, store, bundle, opt);
  if (opt.protocol == "scene") return eval_scene(model, store, bundle, opt);
  if (opt.protocol == "movie") return eval_movie(model, store, bundle, opt);
  throw ConfigError("unknown protocol '" + opt.protocol +
                    "' (expected reconstruction, classification, scene, or movie)");
}

// Primary scalar used for multi-seed aggregation.
inline const char* primary_metric(const std::string& protocol) {
  return protocol == "reconstruction" ? "r_squared" : "accuracy";
}

inline nlohmann::json run_eval(const std::string& checkpoint_path, const std::string& data_dir,
                               const EvalOptions& opt) {
  Model model = load_checkpoint(checkpoint_path);
  DatasetBundle bundle = load_bundle(data_dir);
  nlohmann::json metrics = run_protocol(model, model.store(), bundle, opt);
  metrics["checkpoint"] = checkpoint_path;
  metrics["checkpoint_hash"] = hex64(io::file_hash(checkpoint_path));
  metrics["data_dir"] = data_dir;
  metrics["manifest_hash"] = hex64(fnv1a64(bundle.manifest.data(), bundle.manifest.size()));
  return metrics;
}

inline std::string substitute_seed(const std::string& tmpl, uint64_t seed) {
  std::string out = tmpl;
  const std::string key = "{seed}";
  size_t pos = 0;
  while ((pos = out.find(key, pos)) != std::string::npos) {
    out.replace(pos, key.size(), std::to_string(seed));
  }
  return out;
}

// Evaluates one checkpoint per seed ("{seed}" substituted into the path) and
// reports the mean and standard error of the protocol's primary metric.
inline nlohmann::json run_eval_seeds(const std::string& checkpoint_template,
                                     const std::string& data_dir, const EvalOptions& opt,
                                     const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("seed list must be non-empty");
  nlohmann::json per_seed = nlohmann::json::array();
  std::vector<double> values;
  const char* metric = primary_metric(opt.protocol);
  for (uint64_t s : seeds) {
    nlohmann::json r = run_eval(substitute_seed(checkpoint_template, s), data_dir, opt);
    r["seed"] = s;
    values.push_back(r.at(metric).get<double>());
    per_seed.push_back(std::move(r));
  }
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double stderr_v = 0.0;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    stderr_v = std::sqrt(ss / static_cast<double>(values.size() - 1)) /
               std::sqrt(static_cast<double>(values.size()));
  }
  return nlohmann::json{{"per_seed", per_seed},
                        {"aggregate", nlohmann::json{{"metric", metric},
                                                     {"mean", mean},
                                                     {"stderr", stderr_v},
                                                     {"n_seeds", seeds.size()}}}};
}

// Bundle copy with the model's inferred latents in place of the originals.
inline DatasetBundle dump_latents_bundle(const Model& model, ParamStore& store,
                                         const DatasetBundle& src, const EvalOptions& opt) {
  const size_t order = detail_exp::effective_order(model, opt);
  const size_t m = model.config().latent_dim;
  DatasetBundle out;
  auto convert = [&](const std::vector<SpikeSequence>& part) {
    std::vector<SpikeSequence> res;
    res.reserve(part.size());
    for (const auto& tr : part) {
      SpikeSequence seq = tr;
      Tensor lat = infer_windowed_latents(model, store, tr.counts, tr.T, tr.N, order);
      seq.latent_dim = m;
      seq.latents.assign(lat.data(), lat.data() + lat.numel());
      res.push_back(std::move(seq));
    }
    return res;
  };
  out.train = convert(src.train);
  out.validation = convert(src.validation);
  out.test = convert(src.test);
  nlohmann::json source;
  try {
    source = nlohmann::json::parse(src.manifest);
  } catch (const nlohmann::json::exception&) {
    throw DataError("dump-latents: source manifest is not valid JSON");
  }
  nlohmann::json manifest{{"latents", "inferred"},
                          {"latent_dim", m},
                          {"content_dim", model.config().content_dim()},
                          {"markov_order", order},
                          {"source", source}};
  out.manifest = manifest.dump();
  return out;
}

// ---- full-objective gradient check (the end-to-end differentiation gate) ----

struct GradCheckSpec {
  size_t n_neurons = 4;
  size_t t_seq = 3;
  size_t latent_dim = 4;
  size_t state_dim = 4;
  size_t batch = 2;
  size_t negatives = 2;
  uint64_t seed = 7;
  // Balances central-difference truncation on strongly curved coordinates
  // against cancellation noise on near-zero gradients.
  double eps = 3e-5;
};

inline GradCheckReport full_loss_gradcheck(const GradCheckSpec& g) {
  ModelConfig mc;
  mc.n_neurons = g.n_neurons;
  mc.latent_dim = g.latent_dim;
  mc.state_dim = g.state_dim;
  mc.t_seq = g.t_seq;
  mc.delta_max = 1;
  mc.validate();

  Rng init(derive_seed(g.seed, 0));
  Model model(mc, init);

  Rng data_rng(derive_seed(g.seed, 1));
  const size_t B = g.batch;
  const size_t n_extra = g.negatives > B - 1 ? g.negatives - (B - 1) : 0;
  auto draw_counts = [&](size_t rows) {
    std::vector<Tensor> steps(g.t_seq, Tensor({rows, g.n_neurons}));
    for (auto& s : steps) {
      for (size_t i = 0; i < s.numel(); ++i) s[i] = static_cast<double>(data_rng.poisson(3.0));
    }
    return steps;
  };

  BatchData batch;
  batch.x_anchor = draw_counts(B);
  batch.x_positive = draw_counts(B);
  if (n_extra > 0) batch.x_extra = draw_counts(n_extra);
  batch.noise = draw_noise_steps(g.t_seq, 2 * B + n_extra, mc.style_dim(), data_rng);
  batch.neg_idx = build_negative_indices(B, n_extra, g.negatives);

  auto builder = [&model, batch](const Binding& bind) {
    Fwd f{bind, model.store(), true};
    return batch_loss(model, f, batch).total;
  };
  return grad_check(model.store(), builder, g.eps);
}

}  // namespace exp
}  // namespace seqvae
