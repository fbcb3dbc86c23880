// Acceptance gate: one PASS/FAIL line per criterion on stdout, progress on
// stderr, exit 0 only if every criterion holds. Thresholds are pinned here.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seqvae/experiment.hpp"

using namespace seqvae;
namespace fs = std::filesystem;

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

void report(int n, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", n, detail.c_str());
  std::fflush(stdout);
}

void progress(const std::string& msg) {
  std::fprintf(stderr, "[acceptance] %s\n", msg.c_str());
  std::fflush(stderr);
}

// ---- shared fixtures ----

struct Shared {
  std::string work;
  DatasetBundle lorenz;                      // generator defaults, seed 1
  DatasetBundle lorenz_shuffled;             // time-shuffled control
  std::vector<double> r2_full, r2_shuffled;  // per training seed
  std::vector<double> r2_content, r2_style;
  std::vector<std::string> full_ckpts;
};

ModelConfig lorenz_model_config() {
  ModelConfig mc;
  mc.n_neurons = 30;
  mc.latent_dim = 8;
  mc.state_dim = 32;
  mc.t_seq = 50;  // 50 ms of 1 ms bins
  mc.delta_max = 10;
  mc.lambda_prior = 0.01;
  return mc;
}

TrainConfig lorenz_train_config(uint64_t seed) {
  TrainConfig tc;
  tc.iterations = 5000;
  tc.batch_size = 8;
  tc.lr = 0.001;
  tc.seed = seed;
  tc.log_interval = 1000;
  return tc;
}

double eval_r2(Model& model, const DatasetBundle& bundle, eval::LatentBlock block) {
  exp::EvalOptions opt;
  opt.block = block;
  return exp::run_protocol(model, model.store(), bundle, opt).at("r_squared").get<double>();
}

double mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

// Mean absolute lag-1 autocorrelation of the latent trajectories.
double mean_abs_lag1(const std::vector<SpikeSequence>& trials) {
  double acc = 0.0;
  size_t n = 0;
  for (const auto& tr : trials) {
    for (size_t d = 0; d < tr.latent_dim; ++d) {
      double m = 0.0;
      for (size_t t = 0; t < tr.T; ++t) m += tr.latents[t * tr.latent_dim + d];
      m /= static_cast<double>(tr.T);
      double num = 0.0, den = 0.0;
      for (size_t t = 0; t < tr.T; ++t) {
        double c = tr.latents[t * tr.latent_dim + d] - m;
        den += c * c;
        if (t + 1 < tr.T) num += c * (tr.latents[(t + 1) * tr.latent_dim + d] - m);
      }
      if (den > 0.0) {
        acc += std::fabs(num / den);
        ++n;
      }
    }
  }
  return acc / static_cast<double>(n);
}

// ---- criteria ----

bool criterion1() {
  double t0 = now_s();
  exp::GradCheckSpec spec;
  GradCheckReport rep = exp::full_loss_gradcheck(spec);
  double dt = now_s() - t0;
  bool pass = rep.max_rel_err < 1e-4 && dt < 10.0;
  report(1, pass,
         "full objective gradient check: max rel err " + fmt(rep.max_rel_err) + " (worst " +
             rep.worst_param + "), " + fmt(dt) + " s");
  return pass;
}

bool criterion2() {
  auto scalar = [](double v) { return constant(Tensor({1, 1}, {v})); };
  double worst_form = 0.0;

  auto check = [&](double got, double want) {
    worst_form = std::max(worst_form, std::fabs(got - want));
  };
  check(objectives::poisson_nll(Tensor({1, 1}, {0.0}), scalar(1.0)).item(), 1.0);
  check(objectives::poisson_nll(Tensor({1, 1}, {2.0}), scalar(2.0)).item(),
        0.5 * std::log(4.0 * M_PI));
  check(objectives::gaussian_kl(scalar(0.7), scalar(-0.3), scalar(0.7), scalar(-0.3)).item(), 0.0);
  check(objectives::gaussian_kl(scalar(1.0), scalar(0.0), scalar(0.0), scalar(0.0)).item(), 0.5);
  check(objectives::gaussian_kl(scalar(0.0), scalar(std::log(4.0)), scalar(0.0), scalar(0.0)).item(),
        0.8068528194400547);

  // One positive and one negative at identical similarity: loss is log 2
  // regardless of temperature.
  double worst_sym = 0.0;
  for (double tau : {0.1, 0.5, 2.0}) {
    Var anchors = constant(Tensor({1, 2}, {1.0, 0.0}));
    Var positives = constant(Tensor({1, 2}, {1.0, 0.0}));
    Var extra = constant(Tensor({1, 2}, {1.0, 0.0}));
    double got = objectives::nt_xent(anchors, positives, extra, tau).item();
    worst_sym = std::max(worst_sym, std::fabs(got - std::log(2.0)));
  }
  bool pass = worst_form < 1e-9 && worst_sym < 1e-12;
  report(2, pass,
         "closed-form losses: divergence/likelihood within " + fmt(worst_form) +
             " of the exact values, contrastive symmetry within " + fmt(worst_sym) + " of log 2");
  return pass;
}

bool criterion3(Shared& sh) {
  double t0 = now_s();
  progress("criterion 3: generating the chaotic-attractor dataset");
  sh.lorenz = synth::gen_lorenz(synth::LorenzSpec{});
  sh.lorenz_shuffled = synth::shuffle_time(sh.lorenz, 101);

  ModelConfig mc = lorenz_model_config();
  for (uint64_t seed : {1, 2, 3}) {
    TrainConfig tc = lorenz_train_config(seed);
    {
      progress("criterion 3: training on the original data, seed " + std::to_string(seed));
      Rng init(derive_seed(tc.seed, 0));
      Model model(mc, init);
      train(model, tc, sh.lorenz);
      sh.r2_full.push_back(eval_r2(model, sh.lorenz, eval::LatentBlock::Both));
      sh.r2_content.push_back(eval_r2(model, sh.lorenz, eval::LatentBlock::Content));
      sh.r2_style.push_back(eval_r2(model, sh.lorenz, eval::LatentBlock::Style));
      std::string ckpt = sh.work + "/lorenz_seed" + std::to_string(seed) + ".nckp";
      save_checkpoint(ckpt, model);
      sh.full_ckpts.push_back(ckpt);
    }
    {
      progress("criterion 3: training on the shuffled control, seed " + std::to_string(seed));
      Rng init(derive_seed(tc.seed, 0));
      Model model(mc, init);
      train(model, tc, sh.lorenz_shuffled);
      sh.r2_shuffled.push_back(eval_r2(model, sh.lorenz_shuffled, eval::LatentBlock::Both));
    }
  }
  double mo = mean(sh.r2_full), ms = mean(sh.r2_shuffled);
  double dt = now_s() - t0;
  bool pass = mo >= 0.45 && ms <= 0.15 && (mo - ms) >= 0.30;
  report(3, pass,
         "latent decoding over 3 seeds: original R^2 " + fmt(mo) + " (>= 0.45), shuffled " +
             fmt(ms) + " (<= 0.15), gap " + fmt(mo - ms) + " (>= 0.30), " + fmt(dt / 60.0) +
             " min (target < 30)");
  return pass;
}

bool criterion4(Shared& sh) {
  ModelConfig mc = lorenz_model_config();
  mc.contrast = ContrastMode::Off;
  mc.swap = false;

  size_t full_wins = 0, content_wins = 0;
  std::vector<double> r2_ablated;
  for (uint64_t seed : {1, 2, 3}) {
    progress("criterion 4: training the no-swap no-contrast variant, seed " + std::to_string(seed));
    TrainConfig tc = lorenz_train_config(seed);
    Rng init(derive_seed(tc.seed, 0));
    Model model(mc, init);
    train(model, tc, sh.lorenz);
    r2_ablated.push_back(eval_r2(model, sh.lorenz, eval::LatentBlock::Both));
  }
  for (size_t i = 0; i < 3; ++i) {
    if (sh.r2_full[i] >= r2_ablated[i]) ++full_wins;
    if (sh.r2_content[i] >= sh.r2_style[i]) ++content_wins;
  }
  bool pass = full_wins >= 2 && content_wins >= 2;
  report(4, pass,
         "ablation ordering: full model beats the stripped variant on " +
             std::to_string(full_wins) + "/3 seeds (full " + fmt(mean(sh.r2_full)) +
             " vs ablated " + fmt(mean(r2_ablated)) + "); content beats style on " +
             std::to_string(content_wins) + "/3 seeds");
  return pass;
}

bool criterion5(const std::string& work) {
  progress("criterion 5: generating the non-temporal cluster dataset");
  DatasetBundle bundle = synth::gen_nontemporal(synth::NonTemporalSpec{});

  ModelConfig mc;
  mc.n_neurons = 100;
  mc.latent_dim = 4;
  mc.state_dim = 32;
  mc.t_seq = 1;
  mc.delta_max = 0;
  mc.lambda_prior = 0.01;
  TrainConfig tc;
  tc.iterations = 5000;
  tc.batch_size = 64;
  tc.lr = 0.001;
  tc.seed = 1;
  tc.log_interval = 1000;

  Rng init_a(derive_seed(tc.seed, 0));
  Model untrained(mc, init_a);
  exp::EvalOptions rec;
  double r2_before = exp::run_protocol(untrained, untrained.store(), bundle, rec)
                         .at("r_squared")
                         .get<double>();

  progress("criterion 5: training on the cluster data");
  Rng init_b(derive_seed(tc.seed, 0));
  Model model(mc, init_b);
  train(model, tc, bundle);
  save_checkpoint(work + "/nontemporal.nckp", model);

  double r2_after =
      exp::run_protocol(model, model.store(), bundle, rec).at("r_squared").get<double>();

  exp::EvalOptions cls;
  cls.protocol = "classification";
  cls.block = eval::LatentBlock::Content;
  double acc =
      exp::run_protocol(model, model.store(), bundle, cls).at("accuracy").get<double>();

  bool pass = acc >= 0.90 && (r2_after - r2_before) >= 0.2;
  report(5, pass,
         "cluster recovery: content KNN accuracy " + fmt(acc) + " (>= 0.9), latent R^2 " +
             fmt(r2_after) + " vs untrained " + fmt(r2_before) + " (gain >= 0.2)");
  return pass;
}

bool criterion6(const Shared& sh) {
  progress("criterion 6: causality checks");
  Model trained = load_checkpoint(sh.full_ckpts[0]);
  ModelConfig mc = lorenz_model_config();
  Rng fresh(derive_seed(99, 0));
  Model untrained(mc, fresh);

  double worst = 0.0;
  auto check_model = [&](Model& m) {
    const ModelConfig& cfg = m.config();
    const size_t T = 8, B = 2, cut = 5;
    Rng data_rng(derive_seed(402, 1));
    std::vector<Tensor> x(T), noise(T);
    for (size_t t = 0; t < T; ++t) {
      x[t] = Tensor({B, cfg.n_neurons});
      for (size_t i = 0; i < x[t].numel(); ++i) {
        x[t][i] = static_cast<double>(data_rng.poisson(2.0));
      }
      noise[t] = Tensor({B, cfg.style_dim()});
      for (size_t i = 0; i < noise[t].numel(); ++i) noise[t][i] = data_rng.normal();
    }
    std::vector<Tensor> x2 = x;
    for (size_t t = cut; t < T; ++t) {
      for (size_t i = 0; i < x2[t].numel(); ++i) x2[t][i] += 5.0;
    }

    NoGradGuard ng;
    Binding bind(m.store(), false);
    Fwd f{bind, m.store(), false};
    Unrolled u1 = m.unroll(f, x, noise);
    Unrolled u2 = m.unroll(f, x2, noise);
    for (size_t t = 0; t < cut; ++t) {
      for (const auto& pr :
           {std::make_pair(&u1.steps[t].z_c, &u2.steps[t].z_c),
            std::make_pair(&u1.steps[t].mu_q, &u2.steps[t].mu_q),
            std::make_pair(&u1.steps[t].logvar_q, &u2.steps[t].logvar_q),
            std::make_pair(&u1.steps[t].rates, &u2.steps[t].rates)}) {
        const Tensor& a = pr.first->value();
        const Tensor& b = pr.second->value();
        for (size_t i = 0; i < a.numel(); ++i) {
          worst = std::max(worst, std::fabs(a[i] - b[i]));
        }
      }
    }

    // Windowed inference at order n must ignore everything before t - n.
    const size_t trial_t = 12, order = 3, t_star = 8;
    std::vector<uint32_t> counts(trial_t * cfg.n_neurons);
    for (auto& c : counts) c = data_rng.poisson(3.0);
    std::vector<uint32_t> counts2 = counts;
    for (size_t t = 0; t + order < t_star; ++t) {
      for (size_t j = 0; j < cfg.n_neurons; ++j) counts2[t * cfg.n_neurons + j] += 7;
    }
    Tensor lat1 = infer_windowed_latents(m, m.store(), counts, trial_t, cfg.n_neurons, order);
    Tensor lat2 = infer_windowed_latents(m, m.store(), counts2, trial_t, cfg.n_neurons, order);
    for (size_t t = t_star; t < trial_t; ++t) {
      for (size_t c = 0; c < lat1.cols(); ++c) {
        worst = std::max(worst,
                         std::fabs(lat1.data()[t * lat1.cols() + c] -
                                   lat2.data()[t * lat2.cols() + c]));
      }
    }
  };
  check_model(trained);
  check_model(untrained);

  bool pass = worst == 0.0;
  report(6, pass,
         "causality: future perturbations leak " + fmt(worst) +
             " into past latents, posteriors, and rates (must be exactly 0)");
  return pass;
}

bool criterion7(const Shared& sh) {
  progress("criterion 7: shuffle mechanics");
  DatasetBundle shuffled = synth::shuffle_time(sh.lorenz, 7);

  bool preserved = shuffled.train.size() == sh.lorenz.train.size();
  for (size_t i = 0; preserved && i < sh.lorenz.train.size(); ++i) {
    const SpikeSequence& a = sh.lorenz.train[i];
    const SpikeSequence& b = shuffled.train[i];
    if (a.T != b.T || a.N != b.N || a.label != b.label || a.latent_dim != b.latent_dim) {
      preserved = false;
      break;
    }
    using Row = std::pair<std::vector<uint32_t>, std::vector<double>>;
    auto rows = [](const SpikeSequence& s) {
      std::vector<Row> out(s.T);
      for (size_t t = 0; t < s.T; ++t) {
        out[t].first.assign(s.counts.begin() + static_cast<std::ptrdiff_t>(t * s.N),
                            s.counts.begin() + static_cast<std::ptrdiff_t>((t + 1) * s.N));
        out[t].second.assign(
            s.latents.begin() + static_cast<std::ptrdiff_t>(t * s.latent_dim),
            s.latents.begin() + static_cast<std::ptrdiff_t>((t + 1) * s.latent_dim));
      }
      std::sort(out.begin(), out.end());
      return out;
    };
    if (rows(a) != rows(b)) preserved = false;
  }

  double before = mean_abs_lag1(sh.lorenz.train);
  double after = mean_abs_lag1(shuffled.train);
  bool pass = preserved && before > 0.9 && after < 0.2;
  report(7, pass,
         std::string("shuffle control: joint (spikes, latent) rows ") +
             (preserved ? "preserved" : "CORRUPTED") + ", mean |lag-1 autocorr| " + fmt(before) +
             " -> " + fmt(after) + " (needs > 0.9 -> < 0.2)");
  return pass;
}

bool criterion8() {
  progress("criterion 8: KNN oracle comparison");
  Rng rng(derive_seed(88, 0));

  auto brute_predict = [](const std::vector<std::vector<double>>& tx,
                          const std::vector<int32_t>& ty, const std::vector<double>& q,
                          size_t k) {
    std::vector<std::pair<double, size_t>> d(tx.size());
    for (size_t i = 0; i < tx.size(); ++i) {
      double acc = 0.0;
      for (size_t j = 0; j < q.size(); ++j) acc += (tx[i][j] - q[j]) * (tx[i][j] - q[j]);
      d[i] = {acc, i};
    }
    std::sort(d.begin(), d.end());
    k = std::min(k, d.size());
    std::map<int32_t, size_t> counts;
    for (size_t i = 0; i < k; ++i) ++counts[ty[d[i].second]];
    size_t best = 0;
    for (const auto& [cls, n] : counts) best = std::max(best, n);
    for (size_t i = 0; i < k; ++i) {
      if (counts[ty[d[i].second]] == best) return ty[d[i].second];
    }
    return int32_t{-1};
  };

  size_t mismatches = 0;
  for (int inst = 0; inst < 100; ++inst) {
    size_t n_train = 3 + rng.index(48);  // <= 50 points
    size_t dim = 1 + rng.index(3);
    size_t n_classes = 2 + rng.index(3);
    bool quantized = inst % 2 == 0;  // grid coordinates force distance ties
    auto point = [&] {
      std::vector<double> p(dim);
      for (size_t j = 0; j < dim; ++j) {
        p[j] = quantized ? std::floor(rng.uniform() * 4.0) : rng.normal();
      }
      return p;
    };
    std::vector<std::vector<double>> tx, vx, qx;
    std::vector<int32_t> ty, vy;
    for (size_t i = 0; i < n_train; ++i) {
      tx.push_back(point());
      ty.push_back(static_cast<int32_t>(rng.index(n_classes)));
    }
    for (int i = 0; i < 6; ++i) {
      vx.push_back(point());
      vy.push_back(static_cast<int32_t>(rng.index(n_classes)));
    }
    for (int i = 0; i < 8; ++i) qx.push_back(point());

    eval::KnnClassifier knn(tx, ty);

    // Oracle k selection: best validation accuracy, ties to the smallest k.
    size_t oracle_k = 0, oracle_hits = 0;
    for (size_t k = 1; k <= 19 && k <= n_train; k += 2) {
      size_t hits = 0;
      for (size_t i = 0; i < vx.size(); ++i) {
        if (brute_predict(tx, ty, vx[i], k) == vy[i]) ++hits;
      }
      if (oracle_k == 0 || hits > oracle_hits) {
        oracle_k = k;
        oracle_hits = hits;
      }
    }
    size_t chosen = knn.select_k(vx, vy);
    if (chosen != oracle_k) {
      ++mismatches;
      continue;
    }
    std::vector<int32_t> got = knn.predict_all(qx, chosen);
    for (size_t i = 0; i < qx.size(); ++i) {
      if (got[i] != brute_predict(tx, ty, qx[i], chosen)) {
        ++mismatches;
        break;
      }
    }
  }
  bool pass = mismatches == 0;
  report(8, pass,
         "KNN decoding vs brute-force oracle: " + std::to_string(100 - mismatches) +
             "/100 instances match (k selection and tie rules included)");
  return pass;
}

bool criterion9(const std::string& work) {
  progress("criterion 9: byte-level reproducibility");
  auto run_once = [&](const std::string& dir) {
    fs::create_directories(dir);
    synth::LorenzSpec spec;
    spec.seed = 3;
    spec.steps = 80;
    spec.burn_in = 30;
    spec.n_conditions = 2;
    spec.trials_per_condition = 3;
    spec.n_neurons = 10;
    save_bundle(dir + "/data", synth::gen_lorenz(spec));
    DatasetBundle bundle = load_bundle(dir + "/data");

    ModelConfig mc;
    mc.n_neurons = 10;
    mc.latent_dim = 4;
    mc.state_dim = 8;
    mc.t_seq = 6;
    mc.delta_max = 2;
    TrainConfig tc;
    tc.iterations = 40;
    tc.batch_size = 4;
    tc.lr = 0.001;
    tc.seed = 5;
    tc.log_interval = 10;

    Rng init(derive_seed(tc.seed, 0));
    Model model(mc, init);
    TrainResult res = train(model, tc, bundle);
    io::write_text_file(dir + "/train.log", res.loss_log);
    save_checkpoint(dir + "/final.nckp", model);

    exp::EvalOptions opt;
    nlohmann::json metrics = exp::run_protocol(model, model.store(), bundle, opt);
    io::write_text_file(dir + "/report.json", metrics.dump(2) + "\n");
  };
  run_once(work + "/rep_a");
  run_once(work + "/rep_b");

  std::vector<std::string> files{"data/train.nspk", "data/val.nspk",  "data/test.nspk",
                                 "data/manifest.json", "train.log",  "final.nckp",
                                 "report.json"};
  size_t identical = 0;
  for (const auto& f : files) {
    if (io::read_file_bytes(work + "/rep_a/" + f) == io::read_file_bytes(work + "/rep_b/" + f)) {
      ++identical;
    }
  }
  bool pass = identical == files.size();
  report(9, pass,
         "reproducibility: " + std::to_string(identical) + "/" + std::to_string(files.size()) +
             " artifacts byte-identical across two full runs (data, checkpoint, log, report)");
  return pass;
}

}  // namespace

int main(int argc, char** argv) {
  std::string work = argc > 1 ? argv[1] : "acceptance_work";
  fs::create_directories(work);

  Shared sh;
  sh.work = work;

  int failures = 0;
  auto tally = [&](bool ok) {
    if (!ok) ++failures;
  };

  try {
    tally(criterion1());
    tally(criterion2());
    tally(criterion3(sh));
    tally(criterion4(sh));
    tally(criterion5(work));
    tally(criterion6(sh));
    tally(criterion7(sh));
    tally(criterion8());
    tally(criterion9(work));
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance: unhandled error: %s\n", e.what());
    return 1;
  }

  std::printf("%d/9 criteria passed\n", 9 - failures);
  return failures == 0 ? 0 : 1;
}
