// Command-line front end: training, evaluation, ablations, gradient
// checking, parameter accounting and synthetic data generation.
//
// Exit codes: 0 success, 1 contract/config failure, 2 I/O or format error.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mhn/mhn.hpp"

namespace {

mhn::RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mhn::IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw mhn::FormatError("bad JSON in " + path + ": " + e.what());
  }
  return mhn::RunConfig::from_json(j);
}

void apply_overrides(mhn::RunConfig& cfg, const std::optional<std::uint64_t>& seed,
                     const std::optional<std::string>& out) {
  if (seed) cfg.seed = *seed;
  if (out) cfg.out_dir = *out;
}

int run_train(const mhn::RunConfig& cfg) {
  std::cout << "epoch  train_loss  val_loss  val_metric  lr\n";
  mhn::TrainResult result = mhn::train(cfg, [](const mhn::EpochStats& e) {
    std::cout << std::setw(5) << e.epoch << "  " << std::fixed << std::setprecision(6)
              << std::setw(10) << e.train_loss << "  " << std::setw(8) << e.val_loss << "  "
              << std::setw(10) << e.val_metric << "  " << std::setprecision(2)
              << std::scientific << e.lr << "\n"
              << std::flush;
  });
  std::cout << "best " << result.best_val.metric << " " << std::fixed << std::setprecision(6)
            << result.best_val.value << " at epoch " << result.best_epoch;
  if (!result.checkpoint_path.empty()) std::cout << ", checkpoint " << result.checkpoint_path;
  std::cout << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& task,
             const std::string& split) {
  auto [model_cfg, step] = mhn::read_checkpoint_config(checkpoint);
  mhn::Dataset ds = mhn::load_dataset(data_dir, task);
  // The checkpointed head must match the dataset's answer space.
  const mhn::AnswerSpace expected = ds.answers;
  if (model_cfg.answers.kind != expected.kind)
    throw mhn::ConfigError("checkpoint task kind does not match dataset task '" + task + "'");
  mhn::Model model(model_cfg, 0);
  mhn::load_checkpoint(model.params(), model_cfg, checkpoint);
  mhn::EvalResult r = mhn::evaluate_split(model, ds, ds.split(split));
  std::cout << "split=" << split << " n=" << r.count << " step=" << step << " " << r.metric
            << "=" << std::fixed << std::setprecision(6) << r.value;
  if (r.metric == "mse") std::cout << " median_baseline_mse=" << r.baseline_mse;
  std::cout << " mean_loss=" << r.mean_loss << "\n";
  return 0;
}

int run_ablate(const mhn::RunConfig& cfg, const std::string& axis, std::size_t seeds,
               const std::string& json_out) {
  mhn::AblateResult result = mhn::ablate(cfg, axis, seeds);
  std::cout << mhn::format_ablation_table(result);
  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) throw mhn::IoError("cannot open " + json_out + " for writing");
    out << result.to_json().dump(2) << "\n";
  }
  return 0;
}

int run_gradcheck(std::uint64_t seed, double tol) {
  const auto t0 = std::chrono::steady_clock::now();
  auto results = mhn::full_gradcheck_suite(seed);
  bool ok = true;
  std::cout << "check                max_rel_err   elements  status\n";
  for (const auto& r : results) {
    const bool pass = r.passed(tol);
    ok = ok && pass;
    std::cout << std::left << std::setw(20) << r.name << " " << std::scientific
              << std::setprecision(3) << r.max_rel_err << "   " << std::right << std::setw(8)
              << r.checked << "  " << (pass ? "ok" : "FAIL") << "\n";
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << (ok ? "all gradients match" : "GRADIENT MISMATCH") << " (tolerance "
            << std::scientific << std::setprecision(1) << tol << ", " << std::fixed
            << std::setprecision(1) << secs << " s)\n";
  return ok ? 0 : 1;
}

int run_params(const mhn::RunConfig& cfg) {
  mhn::ModelConfig mc = cfg.model;
  // Parameter counts do not depend on the dataset beyond these widths;
  // fill from data when available, otherwise keep the config values.
  try {
    mhn::DatasetMeta meta = mhn::read_meta(cfg.data_dir + "/meta.json");
    mhn::Vocab vocab = mhn::read_vocab(cfg.data_dir + "/vocab.json");
    mc.vocab_size = vocab.size();
    mc.app_dim = meta.app_dim;
    mc.mot_dim = meta.mot_dim;
    mc.answers = mhn::detail::answer_space_for(meta, cfg.task);
  } catch (const mhn::IoError&) {
  }
  mhn::Model model(mc, cfg.seed);
  std::cout << "module              parameters\n";
  for (const auto& [module, count] : model.param_breakdown()) {
    if (module == "total") continue;
    std::cout << std::left << std::setw(18) << module << " " << std::right << std::setw(10)
              << count << "\n";
  }
  std::cout << std::left << std::setw(18) << "total" << " " << std::right << std::setw(10)
            << model.params().total_params() << "\n";
  return 0;
}

int run_gen_data(const std::string& out_dir, mhn::SyntheticConfig cfg) {
  mhn::generate_synthetic(cfg, out_dir);
  std::cout << "wrote dataset to " << out_dir << " (" << cfg.train_videos << "/"
            << cfg.val_videos << "/" << cfg.test_videos << " videos)\n";
  if (cfg.sigma == 0.0) {
    const double probe = mhn::frameqa_probe_accuracy(out_dir, "train");
    std::cout << "sigma=0 probe accuracy on frame-level task: " << std::fixed
              << std::setprecision(4) << probe << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilevel hierarchical network for video question answering"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;

  auto add_run_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run config JSON")->required();
    cmd->add_option("--seed", seed_override, "override config seed");
    cmd->add_option("--out", out_override, "override output directory");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a run config");
  add_run_opts(train_cmd);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string checkpoint, data_dir, task = "frameqa_attr", split = "test";
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--task", task, "task name");
  eval_cmd->add_option("--split", split, "train|val|test");

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train and compare model variants");
  std::string axis;
  std::size_t ablate_seeds = 5;
  std::string ablate_json;
  add_run_opts(ablate_cmd);
  ablate_cmd->add_option("--axis", axis, "ablation axis")->required();
  ablate_cmd->add_option("--seeds", ablate_seeds, "seeds per variant");
  ablate_cmd->add_option("--json", ablate_json, "also write results as JSON");

  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference checks for all primitives and the model");
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  gradcheck_cmd->add_option("--seed", gc_seed, "seed for random shapes and values");
  gradcheck_cmd->add_option("--tol", gc_tol, "max relative error");

  CLI::App* params_cmd = app.add_subcommand("params", "parameter count breakdown");
  add_run_opts(params_cmd);

  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_out;
  mhn::SyntheticConfig synth;
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--train-videos", synth.train_videos, "videos in the train split");
  gen_cmd->add_option("--val-videos", synth.val_videos, "videos in the val split");
  gen_cmd->add_option("--test-videos", synth.test_videos, "videos in the test split");
  gen_cmd->add_option("--frames", synth.frames, "frames per video");
  gen_cmd->add_option("--objects", synth.num_objects, "object vocabulary size");
  gen_cmd->add_option("--motifs", synth.num_motifs, "motif vocabulary size");
  gen_cmd->add_option("--app-dim", synth.app_dim, "appearance feature width");
  gen_cmd->add_option("--mot-dim", synth.mot_dim, "motion feature width");
  gen_cmd->add_option("--sigma", synth.sigma, "feature noise stddev");
  gen_cmd->add_option("--motion-gain", synth.motion_gain, "motion latent scale");
  gen_cmd->add_option("--count-min", synth.count_min, "minimum repetition count");
  gen_cmd->add_option("--count-max", synth.count_max, "maximum repetition count");
  gen_cmd->add_option("--candidates", synth.num_candidates, "multi-choice candidates");
  gen_cmd->add_option("--seed", synth.seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      mhn::RunConfig cfg = load_run_config(config_path);
      apply_overrides(cfg, seed_override, out_override);
      return run_train(cfg);
    }
    if (*eval_cmd) return run_eval(checkpoint, data_dir, task, split);
    if (*ablate_cmd) {
      mhn::RunConfig cfg = load_run_config(config_path);
      apply_overrides(cfg, seed_override, out_override);
      return run_ablate(cfg, axis, ablate_seeds, ablate_json);
    }
    if (*gradcheck_cmd) return run_gradcheck(gc_seed, gc_tol);
    if (*params_cmd) {
      mhn::RunConfig cfg = load_run_config(config_path);
      apply_overrides(cfg, seed_override, out_override);
      return run_params(cfg);
    }
    if (*gen_cmd) return run_gen_data(gen_out, synth);
  } catch (const mhn::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mhn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
