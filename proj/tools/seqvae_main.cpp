// Command line front end: dataset generation, training, evaluation, latent
// export, and an end-to-end gradient check. Exit codes: 0 success, 1 config
// or usage error, 2 data error, 3 numerical error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "seqvae/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw seqvae::ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw seqvae::ConfigError("failed to parse " + path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  seqvae::io::write_text_file(path, j.dump(2) + "\n");
}

void refuse_existing(const std::string& path, bool force) {
  if (!force && fs::exists(path)) {
    throw seqvae::ConfigError(path + " already exists; pass --force to overwrite");
  }
}

struct GenArgs {
  std::string config, out;
  bool force = false;
};

void cmd_gen(const GenArgs& a) {
  seqvae::exp::GenConfig cfg = seqvae::exp::GenConfig::from_json(read_json_file(a.config));
  refuse_existing(a.out + "/train.nspk", a.force);
  seqvae::DatasetBundle bundle = seqvae::exp::run_gen(cfg);
  seqvae::save_bundle(a.out, bundle);
  json summary{{"out", a.out},
               {"train_trials", bundle.train.size()},
               {"validation_trials", bundle.validation.size()},
               {"test_trials", bundle.test.size()}};
  std::cout << summary.dump(2) << "\n";
}

struct TrainArgs {
  std::string config, data, out;
  bool force = false;
};

void cmd_train(const TrainArgs& a) {
  seqvae::exp::TrainRunConfig cfg = seqvae::exp::TrainRunConfig::from_json(read_json_file(a.config));
  refuse_existing(a.out + "/final.nckp", a.force);
  seqvae::DatasetBundle bundle = seqvae::load_bundle(a.data);
  fs::create_directories(a.out);

  json echo{{"model", cfg.model.to_json()},
            {"train", cfg.train.to_json()},
            {"data_dir", a.data},
            {"data_hashes",
             json{{"train.nspk", seqvae::hex64(seqvae::io::file_hash(a.data + "/train.nspk"))},
                  {"val.nspk", seqvae::hex64(seqvae::io::file_hash(a.data + "/val.nspk"))},
                  {"test.nspk", seqvae::hex64(seqvae::io::file_hash(a.data + "/test.nspk"))}}}};
  write_json_file(a.out + "/config.json", echo);

  seqvae::Rng init(seqvae::derive_seed(cfg.train.seed, 0));
  seqvae::Model model(cfg.model, init);
  seqvae::TrainResult result = seqvae::train(model, cfg.train, bundle, a.out,
                                             [](const std::string& line) { std::cout << line << "\n"; });
  seqvae::io::write_text_file(a.out + "/train.log", result.loss_log);
  seqvae::save_checkpoint(a.out + "/final.nckp", model);

  json run{{"checkpoint", "final.nckp"},
           {"checkpoint_hash", seqvae::hex64(seqvae::io::file_hash(a.out + "/final.nckp"))},
           {"iterations", cfg.train.iterations},
           {"excluded_trials", result.excluded_trials}};
  if (!result.history.empty()) {
    const auto& [it, b] = result.history.back();
    run["final_loss"] = json{{"iteration", it},       {"recons", b.recons},
                             {"regular", b.regular},  {"contrast", b.contrast},
                             {"swap_recons", b.swap_recons}, {"prior_l2", b.prior_l2},
                             {"total", b.total}};
  }
  write_json_file(a.out + "/run.json", run);
  std::cout << run.dump(2) << "\n";
}

struct EvalArgs {
  std::string checkpoint, data, out;
  std::string protocol = "reconstruction";
  std::string latents = "both";
  size_t window = 20;
  int frame_window = 0;
  size_t frame_group = 4;
  size_t markov_order = 0;
  bool fit_on_train = false;
  std::vector<uint64_t> seeds;
};

void cmd_eval(const EvalArgs& a) {
  seqvae::exp::EvalOptions opt;
  opt.protocol = a.protocol;
  opt.block = seqvae::eval::latent_block_from(a.latents);
  opt.window = a.window;
  opt.frame_window = a.frame_window;
  opt.frame_group = a.frame_group;
  opt.markov_order = a.markov_order;
  opt.fit_on_train = a.fit_on_train;

  json report = a.seeds.empty()
                    ? seqvae::exp::run_eval(a.checkpoint, a.data, opt)
                    : seqvae::exp::run_eval_seeds(a.checkpoint, a.data, opt, a.seeds);
  if (!a.out.empty()) {
    write_json_file(a.out, report);
  }
  std::cout << report.dump(2) << "\n";
}

struct DumpArgs {
  std::string checkpoint, data, out;
  size_t markov_order = 0;
  bool force = false;
};

void cmd_dump_latents(const DumpArgs& a) {
  refuse_existing(a.out + "/train.nspk", a.force);
  seqvae::Model model = seqvae::load_checkpoint(a.checkpoint);
  seqvae::DatasetBundle bundle = seqvae::load_bundle(a.data);
  seqvae::exp::EvalOptions opt;
  opt.markov_order = a.markov_order;
  seqvae::DatasetBundle out = seqvae::exp::dump_latents_bundle(model, model.store(), bundle, opt);
  seqvae::save_bundle(a.out, out);
  std::cout << json{{"out", a.out}, {"latent_dim", model.config().latent_dim}}.dump(2) << "\n";
}

struct GradArgs {
  seqvae::exp::GradCheckSpec spec;
  double tol = 1e-4;
};

int cmd_gradcheck(const GradArgs& a) {
  seqvae::GradCheckReport rep = seqvae::exp::full_loss_gradcheck(a.spec);
  json out{{"max_rel_err", rep.max_rel_err},
           {"worst_param", rep.worst_param},
           {"worst_index", rep.worst_index},
           {"worst_analytic", rep.worst_analytic},
           {"worst_numeric", rep.worst_numeric},
           {"tol", a.tol},
           {"pass", rep.max_rel_err <= a.tol}};
  std::cout << out.dump(2) << "\n";
  return rep.max_rel_err <= a.tol ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential latent-variable model for spike data"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset bundle");
  gen_cmd->add_option("--config", gen.config, "generator config JSON")->required();
  gen_cmd->add_option("--out", gen.out, "output bundle directory")->required();
  gen_cmd->add_flag("--force", gen.force, "overwrite an existing bundle");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset bundle");
  train_cmd->add_option("--config", tr.config, "model + optimizer config JSON")->required();
  train_cmd->add_option("--data", tr.data, "dataset bundle directory")->required();
  train_cmd->add_option("--out", tr.out, "run directory for logs and checkpoints")->required();
  train_cmd->add_flag("--force", tr.force, "overwrite an existing run directory");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset bundle");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint path ({seed} substituted with --seeds)")
      ->required();
  eval_cmd->add_option("--data", ev.data, "dataset bundle directory")->required();
  eval_cmd->add_option("--protocol", ev.protocol, "reconstruction | classification | scene | movie");
  eval_cmd->add_option("--latents", ev.latents, "latent block: content | style | both");
  eval_cmd->add_option("--window", ev.window, "trailing steps per scene representation");
  eval_cmd->add_option("--frame-window", ev.frame_window, "movie accuracy tolerance in frames");
  eval_cmd->add_option("--frame-group", ev.frame_group, "latent steps per movie frame");
  eval_cmd->add_option("--markov-order", ev.markov_order, "inference window order (0: model default)");
  eval_cmd->add_flag("--fit-on-train", ev.fit_on_train, "fit the linear readout on the train split");
  eval_cmd->add_option("--seeds", ev.seeds, "seeds for multi-seed aggregation")->delimiter(',');
  eval_cmd->add_option("--out", ev.out, "write the report JSON here as well as stdout");

  DumpArgs dl;
  auto* dump_cmd = app.add_subcommand("dump-latents", "export inferred latents as a bundle");
  dump_cmd->add_option("--checkpoint", dl.checkpoint, "checkpoint path")->required();
  dump_cmd->add_option("--data", dl.data, "dataset bundle directory")->required();
  dump_cmd->add_option("--out", dl.out, "output bundle directory")->required();
  dump_cmd->add_option("--markov-order", dl.markov_order, "inference window order (0: model default)");
  dump_cmd->add_flag("--force", dl.force, "overwrite an existing bundle");

  GradArgs gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "central-difference check of the full objective");
  grad_cmd->add_option("--neurons", gc.spec.n_neurons, "observed dimension");
  grad_cmd->add_option("--t-seq", gc.spec.t_seq, "window length");
  grad_cmd->add_option("--latent-dim", gc.spec.latent_dim, "latent dimension");
  grad_cmd->add_option("--state-dim", gc.spec.state_dim, "recurrent state dimension");
  grad_cmd->add_option("--batch", gc.spec.batch, "batch size");
  grad_cmd->add_option("--negatives", gc.spec.negatives, "negatives per anchor");
  grad_cmd->add_option("--seed", gc.spec.seed, "seed for parameters and data");
  grad_cmd->add_option("--eps", gc.spec.eps, "finite-difference step");
  grad_cmd->add_option("--tol", gc.tol, "max allowed relative error");

  int rc = 0;
  gen_cmd->callback([&] { cmd_gen(gen); });
  train_cmd->callback([&] { cmd_train(tr); });
  eval_cmd->callback([&] { cmd_eval(ev); });
  dump_cmd->callback([&] { cmd_dump_latents(dl); });
  grad_cmd->callback([&] { rc = cmd_gradcheck(gc); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const seqvae::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const seqvae::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const seqvae::NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  }
  return rc;
}
