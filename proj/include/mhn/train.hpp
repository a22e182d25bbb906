#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhn/adam.hpp"
#include "mhn/data.hpp"
#include "mhn/decoders.hpp"
#include "mhn/errors.hpp"
#include "mhn/model.hpp"
#include "mhn/rng.hpp"

namespace mhn {

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 20;
  std::size_t patience = 10;          // epochs without improvement before halving
  std::string schedule = "plateau";   // "plateau" or "every_n"
  double lr_factor = 0.5;
  double min_improvement = 1e-4;
};

struct RunConfig {
  ModelConfig model;
  OptimConfig optim;
  std::string data_dir;
  std::string task = "frameqa_attr";
  std::uint64_t seed = 0;
  std::string out_dir;
  double stop_at_accuracy = -1.0;  // optional early-stop targets
  double stop_at_mse = -1.0;

  void validate() const {
    if (data_dir.empty()) throw ConfigError("run.data_dir must be set");
    static const char* kTasks[] = {"frameqa_attr", "action", "transition", "count", "mixed"};
    if (std::find(std::begin(kTasks), std::end(kTasks), task) == std::end(kTasks))
      throw ConfigError("run.task '" + task +
                        "' unknown (frameqa_attr|action|transition|count|mixed)");
    if (optim.lr <= 0) throw ConfigError("optim.lr must be positive");
    if (optim.batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
    if (optim.max_epochs < 1) throw ConfigError("optim.max_epochs must be >= 1");
    if (optim.patience < 1) throw ConfigError("optim.patience must be >= 1");
    if (optim.schedule != "plateau" && optim.schedule != "every_n")
      throw ConfigError("optim.schedule must be 'plateau' or 'every_n'");
    if (optim.lr_factor <= 0 || optim.lr_factor >= 1)
      throw ConfigError("optim.lr_factor must be in (0,1)");
    // Model-side invariants that do not depend on the dataset.
    if (model.d < 2 || model.d % 2 != 0) throw ConfigError("model.d must be even and >= 2");
    if (model.heads == 0 || model.d % model.heads != 0)
      throw ConfigError("model.d must be divisible by model.heads");
    if (model.level_scales.empty()) throw ConfigError("model.level_scales must be non-empty");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["model"] = model.to_json();
    j["optim"] = {{"lr", optim.lr},
                  {"beta1", optim.beta1},
                  {"beta2", optim.beta2},
                  {"batch_size", optim.batch_size},
                  {"max_epochs", optim.max_epochs},
                  {"patience", optim.patience},
                  {"schedule", optim.schedule},
                  {"lr_factor", optim.lr_factor},
                  {"min_improvement", optim.min_improvement}};
    j["data_dir"] = data_dir;
    j["task"] = task;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["stop_at_accuracy"] = stop_at_accuracy;
    j["stop_at_mse"] = stop_at_mse;
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("optim")) {
      const auto& o = j.at("optim");
      c.optim.lr = o.value("lr", c.optim.lr);
      c.optim.beta1 = o.value("beta1", c.optim.beta1);
      c.optim.beta2 = o.value("beta2", c.optim.beta2);
      c.optim.batch_size = o.value("batch_size", c.optim.batch_size);
      c.optim.max_epochs = o.value("max_epochs", c.optim.max_epochs);
      c.optim.patience = o.value("patience", c.optim.patience);
      c.optim.schedule = o.value("schedule", c.optim.schedule);
      c.optim.lr_factor = o.value("lr_factor", c.optim.lr_factor);
      c.optim.min_improvement = o.value("min_improvement", c.optim.min_improvement);
    }
    c.data_dir = j.value("data_dir", c.data_dir);
    c.task = j.value("task", c.task);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.stop_at_accuracy = j.value("stop_at_accuracy", c.stop_at_accuracy);
    c.stop_at_mse = j.value("stop_at_mse", c.stop_at_mse);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Dataset in model-ready form
// ---------------------------------------------------------------------------

struct Sample {
  std::string video_id;
  std::vector<std::size_t> question_ids;
  int answer = 0;
  std::vector<std::vector<std::size_t>> candidate_ids;
};

struct Dataset {
  DatasetMeta meta;
  Vocab vocab;
  std::unordered_map<std::string, FeatureRecord> features;
  std::vector<Sample> train, val, test;
  AnswerSpace answers;
  std::string task;

  const FeatureRecord& video(const std::string& id) const {
    auto it = features.find(id);
    if (it == features.end()) throw ContractError("no features for video '" + id + "'");
    return it->second;
  }

  const std::vector<Sample>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "' (train|val|test)");
  }
};

namespace detail {

inline AnswerSpace answer_space_for(const DatasetMeta& meta, const std::string& task) {
  AnswerSpace a;
  if (task == "frameqa_attr") {
    a.kind = AnswerSpace::Kind::open_ended;
    a.num_classes = meta.object_classes.size();
  } else if (task == "action") {
    a.kind = AnswerSpace::Kind::open_ended;
    a.num_classes = meta.motif_classes.size();
  } else if (task == "mixed") {
    a.kind = AnswerSpace::Kind::open_ended;
    a.num_classes = meta.object_classes.size() + meta.motif_classes.size();
  } else if (task == "count") {
    a.kind = AnswerSpace::Kind::count;
    a.count_min = meta.count_min;
    a.count_max = meta.count_max;
  } else if (task == "transition") {
    a.kind = AnswerSpace::Kind::multi_choice;
    a.num_candidates = meta.num_candidates;
  } else {
    throw ConfigError("unknown task '" + task + "'");
  }
  return a;
}

inline std::vector<Sample> to_samples(const std::vector<QARecord>& records,
                                      const std::string& task, const Vocab& vocab,
                                      const AnswerSpace& answers) {
  std::vector<Sample> out;
  for (const QARecord& r : records) {
    if (r.task != task) continue;
    Sample s;
    s.video_id = r.video_id;
    s.question_ids = vocab.encode(r.question);
    s.answer = r.answer;
    for (const auto& cand : r.candidates) s.candidate_ids.push_back(vocab.encode(cand));
    switch (answers.kind) {
      case AnswerSpace::Kind::open_ended:
        if (s.answer < 0 || static_cast<std::size_t>(s.answer) >= answers.num_classes)
          throw FormatError("answer id " + std::to_string(s.answer) + " out of range for '" +
                            r.video_id + "'");
        break;
      case AnswerSpace::Kind::count:
        if (s.answer < answers.count_min || s.answer > answers.count_max)
          throw FormatError("count answer " + std::to_string(s.answer) +
                            " outside declared range for '" + r.video_id + "'");
        break;
      case AnswerSpace::Kind::multi_choice:
        if (s.candidate_ids.size() != answers.num_candidates ||
            s.answer < 0 || static_cast<std::size_t>(s.answer) >= answers.num_candidates)
          throw FormatError("bad candidate list for '" + r.video_id + "'");
        break;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

inline Dataset load_dataset(const std::string& dir, const std::string& task) {
  Dataset ds;
  ds.task = task;
  ds.meta = read_meta(dir + "/meta.json");
  ds.vocab = read_vocab(dir + "/vocab.json");
  ds.features = load_feature_map(dir + "/features.bin");
  ds.answers = detail::answer_space_for(ds.meta, task);
  const std::string prefix = task == "mixed" ? "/mixed_" : "/";
  ds.train = detail::to_samples(read_qa_records(dir + prefix + "train.jsonl"), task, ds.vocab,
                                ds.answers);
  ds.val =
      detail::to_samples(read_qa_records(dir + prefix + "val.jsonl"), task, ds.vocab, ds.answers);
  ds.test = detail::to_samples(read_qa_records(dir + prefix + "test.jsonl"), task, ds.vocab,
                               ds.answers);
  return ds;
}

// ---------------------------------------------------------------------------
// Per-sample loss and evaluation
// ---------------------------------------------------------------------------

inline Tensor sample_loss(Model& model, const Dataset& ds, const Sample& s) {
  const FeatureRecord& video = ds.video(s.video_id);
  switch (ds.answers.kind) {
    case AnswerSpace::Kind::open_ended:
      return cross_entropy(model.open_logits(video, s.question_ids),
                           static_cast<std::size_t>(s.answer));
    case AnswerSpace::Kind::count:
      return mse_loss(model.count_output(video, s.question_ids), static_cast<double>(s.answer));
    case AnswerSpace::Kind::multi_choice:
      return hinge_loss(model.choice_scores(video, s.question_ids, s.candidate_ids),
                        static_cast<std::size_t>(s.answer));
  }
  throw ContractError("unreachable answer kind");
}

struct EvalResult {
  std::string metric = "accuracy";  // "accuracy" or "mse"
  double value = 0.0;
  double mean_loss = 0.0;
  double baseline_mse = 0.0;  // count task: all-predict-median baseline
  std::size_t count = 0;

  // Higher accuracy is better; lower MSE is better.
  bool better_than(const EvalResult& other) const {
    return metric == "mse" ? value < other.value : value > other.value;
  }
};

inline EvalResult evaluate_split(Model& model, const Dataset& ds,
                                 const std::vector<Sample>& samples) {
  NoGradGuard no_grad;
  EvalResult result;
  result.count = samples.size();
  if (samples.empty()) return result;
  double loss_sum = 0.0;
  if (ds.answers.kind == AnswerSpace::Kind::count) {
    result.metric = "mse";
    std::vector<int> labels;
    double se = 0.0;
    for (const Sample& s : samples) {
      const FeatureRecord& video = ds.video(s.video_id);
      Tensor raw = model.count_output(video, s.question_ids);
      loss_sum += mse_loss(raw, static_cast<double>(s.answer)).item();
      const int pred = count_predict(raw.item(), ds.answers);
      se += static_cast<double>((pred - s.answer) * (pred - s.answer));
      labels.push_back(s.answer);
    }
    result.value = se / static_cast<double>(samples.size());
    std::sort(labels.begin(), labels.end());
    const int median = labels[(labels.size() - 1) / 2];
    double base = 0.0;
    for (int y : labels) base += static_cast<double>((median - y) * (median - y));
    result.baseline_mse = base / static_cast<double>(labels.size());
  } else {
    std::size_t correct = 0;
    for (const Sample& s : samples) {
      const FeatureRecord& video = ds.video(s.video_id);
      if (ds.answers.kind == AnswerSpace::Kind::open_ended) {
        Tensor logits = model.open_logits(video, s.question_ids);
        loss_sum += cross_entropy(logits, static_cast<std::size_t>(s.answer)).item();
        correct += argmax(logits.value()) == static_cast<std::size_t>(s.answer) ? 1 : 0;
      } else {
        Tensor scores = model.choice_scores(video, s.question_ids, s.candidate_ids);
        loss_sum += hinge_loss(scores, static_cast<std::size_t>(s.answer)).item();
        correct += argmax(scores.value()) == static_cast<std::size_t>(s.answer) ? 1 : 0;
      }
    }
    result.value = static_cast<double>(correct) / static_cast<double>(samples.size());
  }
  result.mean_loss = loss_sum / static_cast<double>(samples.size());
  return result;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
  double seconds = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},           {"train_loss", train_loss}, {"val_loss", val_loss},
            {"val_metric", val_metric}, {"lr", lr},                 {"seconds", seconds}};
  }
};

struct TrainResult {
  std::vector<EpochStats> history;
  EvalResult best_val;
  std::size_t best_epoch = 0;
  std::string checkpoint_path;
  ModelConfig model_config;
};

// Fills the data-dependent model fields from the loaded dataset.
inline ModelConfig resolve_model_config(const RunConfig& cfg, const Dataset& ds) {
  ModelConfig mc = cfg.model;
  mc.vocab_size = ds.vocab.size();
  mc.app_dim = ds.meta.app_dim;
  mc.mot_dim = ds.meta.mot_dim;
  mc.answers = ds.answers;
  return mc;
}

using EpochCallback = std::function<void(const EpochStats&)>;

// Mini-batch Adam training with plateau-triggered learning-rate halving.
// On return `model` holds the best-validation parameters.
inline TrainResult train_into(const RunConfig& cfg, const Dataset& ds, Model& model,
                              const EpochCallback& on_epoch = {}) {
  cfg.validate();
  Adam adam({cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2, 1e-8});

  TrainResult result;
  result.model_config = model.config();
  const bool minimize = ds.answers.kind == AnswerSpace::Kind::count;
  result.best_val.metric = minimize ? "mse" : "accuracy";
  result.best_val.value = minimize ? 1e300 : -1e300;

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    result.checkpoint_path = cfg.out_dir + "/best.ckpt";
  }

  double best_plateau_loss = 1e300;
  std::size_t bad_epochs = 0;
  std::vector<std::size_t> order(ds.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> best_values;  // snapshot of the best parameters
  auto snapshot = [&]() {
    best_values.clear();
    for (const auto& [name, t] : model.params().entries())
      best_values.insert(best_values.end(), t.value().begin(), t.value().end());
  };
  auto restore = [&]() {
    if (best_values.empty()) return;
    std::size_t off = 0;
    for (auto& [name, t] : model.params().entries()) {
      Tensor tensor = t;
      std::copy_n(best_values.begin() + off, tensor.numel(), tensor.mutable_value().begin());
      off += tensor.numel();
    }
  };

  for (std::size_t epoch = 1; epoch <= cfg.optim.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(derive_seed(cfg.seed, 0xE400 + epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t batch = std::min(cfg.optim.batch_size, order.size() - done);
      const double inv = 1.0 / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        Tensor loss = sample_loss(model, ds, ds.train[order[done + b]]);
        loss_sum += loss.item();
        backward(scale(loss, inv));
      }
      adam.step(model.params());
      done += batch;
    }

    EvalResult val = evaluate_split(model, ds, ds.val);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    stats.val_loss = val.mean_loss;
    stats.val_metric = val.value;
    stats.lr = adam.learning_rate();

    if (cfg.optim.schedule == "plateau") {
      if (val.mean_loss < best_plateau_loss - cfg.optim.min_improvement) {
        best_plateau_loss = val.mean_loss;
        bad_epochs = 0;
      } else if (++bad_epochs >= cfg.optim.patience) {
        adam.set_learning_rate(adam.learning_rate() * cfg.optim.lr_factor);
        bad_epochs = 0;
      }
    } else if (epoch % cfg.optim.patience == 0) {
      adam.set_learning_rate(adam.learning_rate() * cfg.optim.lr_factor);
    }

    if (val.better_than(result.best_val)) {
      result.best_val = val;
      result.best_epoch = epoch;
      snapshot();
      if (!result.checkpoint_path.empty())
        save_checkpoint(model.params(), model.config(), epoch, result.checkpoint_path);
    }

    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    const bool hit_acc = cfg.stop_at_accuracy > 0 && !minimize &&
                         result.best_val.value >= cfg.stop_at_accuracy;
    const bool hit_mse =
        cfg.stop_at_mse > 0 && minimize && result.best_val.value <= cfg.stop_at_mse;
    if (hit_acc || hit_mse) break;
  }

  restore();  // leave the model at its best-validation parameters
  if (!cfg.out_dir.empty()) {
    std::ofstream metrics(cfg.out_dir + "/metrics.jsonl");
    for (const EpochStats& e : result.history) metrics << e.to_json().dump() << "\n";
  }
  return result;
}

inline TrainResult train(const RunConfig& cfg, const Dataset& ds,
                         const EpochCallback& on_epoch = {}) {
  Model model(resolve_model_config(cfg, ds), cfg.seed);
  return train_into(cfg, ds, model, on_epoch);
}

inline TrainResult train(const RunConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  Dataset ds = load_dataset(cfg.data_dir, cfg.task);
  return train(cfg, ds, on_epoch);
}

// ---------------------------------------------------------------------------
// Ablation harness
// ---------------------------------------------------------------------------

struct VariantResult {
  std::string name;
  std::vector<double> values;  // per seed, on the test split
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t total_params = 0;
};

struct AblateResult {
  std::string axis;
  std::string metric;
  std::vector<VariantResult> variants;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["axis"] = axis;
    j["metric"] = metric;
    j["variants"] = nlohmann::json::array();
    for (const auto& v : variants)
      j["variants"].push_back({{"name", v.name},
                               {"values", v.values},
                               {"mean", v.mean},
                               {"stddev", v.stddev},
                               {"total_params", v.total_params}});
    return j;
  }
};

inline const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes = {"single_scale",      "scale_order",
                                                "no_recurrence",     "high_level_only_pvr",
                                                "no_weight_sharing", "n_scales"};
  return axes;
}

namespace detail {

inline std::vector<std::pair<std::string, ModelConfig>> ablation_variants(
    const ModelConfig& base, const std::string& axis) {
  std::vector<std::pair<std::string, ModelConfig>> out;
  auto with_scales = [&](std::vector<std::size_t> scales) {
    ModelConfig m = base;
    m.level_scales = std::move(scales);
    return m;
  };
  if (axis == "single_scale") {
    const std::size_t levels = base.levels();
    for (std::size_t n = 1; n <= levels; ++n)
      out.emplace_back("single n=" + std::to_string(n),
                       with_scales(std::vector<std::size_t>(levels, n)));
  } else if (axis == "scale_order") {
    out.emplace_back("order 1,2,3", with_scales({1, 2, 3}));
    out.emplace_back("order 1,3,2", with_scales({1, 3, 2}));
    out.emplace_back("order 3,1,2", with_scales({3, 1, 2}));
    out.emplace_back("order 3,2,1", with_scales({3, 2, 1}));
  } else if (axis == "no_recurrence") {
    out.emplace_back("default", base);
    ModelConfig m = base;
    m.recurrence = false;
    out.emplace_back("no recurrence", m);
  } else if (axis == "high_level_only_pvr") {
    out.emplace_back("default", base);
    ModelConfig m = base;
    m.pvr_last_level_only = true;
    out.emplace_back("high level only", m);
  } else if (axis == "no_weight_sharing") {
    out.emplace_back("shared", base);
    ModelConfig m = base;
    m.pvr_shared = false;
    out.emplace_back("unshared", m);
  } else if (axis == "n_scales") {
    for (std::size_t n = 2; n <= 4; ++n) {
      std::vector<std::size_t> scales(n);
      for (std::size_t i = 0; i < n; ++i) scales[i] = i + 1;
      out.emplace_back("N=" + std::to_string(n), with_scales(std::move(scales)));
    }
  } else {
    std::string axes;
    for (const auto& a : ablation_axes()) axes += (axes.empty() ? "" : ", ") + a;
    throw ConfigError("unknown ablation axis '" + axis + "' (valid: " + axes + ")");
  }
  return out;
}

}  // namespace detail

// Trains and evaluates each variant of one axis over a shared seed set;
// reports mean and standard deviation of the test metric per variant.
inline AblateResult ablate(const RunConfig& base, const std::string& axis,
                           std::size_t num_seeds = 5) {
  base.validate();
  // Resolve variants first so an unknown axis fails before any compute.
  auto variants = detail::ablation_variants(base.model, axis);
  Dataset ds = load_dataset(base.data_dir, base.task);
  AblateResult result;
  result.axis = axis;
  result.metric = ds.answers.kind == AnswerSpace::Kind::count ? "mse" : "accuracy";

  for (auto& [name, model_cfg] : variants) {
    VariantResult v;
    v.name = name;
    for (std::size_t s = 0; s < num_seeds; ++s) {
      RunConfig run = base;
      run.model = model_cfg;
      run.seed = derive_seed(base.seed, 0xAB1A7E + s);
      run.out_dir.clear();
      Model model(resolve_model_config(run, ds), run.seed);
      v.total_params = model.params().total_params();
      train_into(run, ds, model);
      v.values.push_back(evaluate_split(model, ds, ds.test).value);
    }
    double sum = 0.0;
    for (double x : v.values) sum += x;
    v.mean = sum / static_cast<double>(v.values.size());
    double sq = 0.0;
    for (double x : v.values) sq += (x - v.mean) * (x - v.mean);
    v.stddev = v.values.size() > 1
                   ? std::sqrt(sq / static_cast<double>(v.values.size() - 1))
                   : 0.0;
    result.variants.push_back(std::move(v));
  }
  return result;
}

inline std::string format_ablation_table(const AblateResult& r) {
  std::ostringstream os;
  os << "axis: " << r.axis << "  (" << r.metric << " on test, mean +/- std over seeds)\n";
  std::size_t width = 12;
  for (const auto& v : r.variants) width = std::max(width, v.name.size() + 2);
  for (const auto& v : r.variants) {
    os << std::left << std::setw(static_cast<int>(width)) << v.name << std::right << std::fixed
       << std::setprecision(4) << v.mean << " +/- " << v.stddev
       << "   params=" << v.total_params << "\n";
  }
  return os.str();
}

}  // namespace mhn
