#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhn/attention.hpp"
#include "mhn/decoders.hpp"
#include "mhn/errors.hpp"
#include "mhn/params.hpp"
#include "mhn/pvr.hpp"
#include "mhn/rmi.hpp"
#include "mhn/rng.hpp"
#include "mhn/sampling.hpp"
#include "mhn/text.hpp"

namespace mhn {

struct ModelConfig {
  std::size_t d = 512;
  std::size_t heads = 8;
  std::size_t window = 16;  // frames sampled per clip
  std::vector<std::size_t> level_scales = {1, 2, 3};
  bool recurrence = true;
  bool pvr_shared = true;
  bool pvr_last_level_only = false;
  bool fusion_question_final = false;  // default: per-level question pooling
  std::size_t vocab_size = 2;
  std::size_t embed_dim = 300;
  std::size_t app_dim = 2048;
  std::size_t mot_dim = 2048;
  AnswerSpace answers;

  std::size_t levels() const { return level_scales.size(); }

  void validate() const {
    if (d < 2 || d % 2 != 0)
      throw ConfigError("model.d must be even and >= 2, got " + std::to_string(d));
    if (heads == 0 || d % heads != 0)
      throw ConfigError("model.d (" + std::to_string(d) + ") must be divisible by model.heads (" +
                        std::to_string(heads) + ")");
    if (window < 1) throw ConfigError("model.window must be >= 1");
    if (level_scales.empty()) throw ConfigError("model.level_scales must be non-empty");
    for (std::size_t s : level_scales)
      if (s < 1 || s > 8)
        throw ConfigError("model.level_scales entries must be in [1,8], got " + std::to_string(s));
    // Either a permutation of 1..N (multiscale) or a constant assignment
    // (single-scale variant).
    const bool constant =
        std::all_of(level_scales.begin(), level_scales.end(),
                    [&](std::size_t s) { return s == level_scales.front(); });
    std::set<std::size_t> distinct(level_scales.begin(), level_scales.end());
    bool permutation = distinct.size() == level_scales.size();
    if (permutation)
      for (std::size_t s = 1; s <= level_scales.size(); ++s)
        permutation = permutation && distinct.count(s) > 0;
    if (!permutation && !constant)
      throw ConfigError("model.level_scales must be a permutation of 1..N or a single repeated scale");
    if (vocab_size < 2) throw ConfigError("model.vocab_size must be >= 2");
    if (embed_dim < 1) throw ConfigError("model.embed_dim must be >= 1");
    if (app_dim < 1 || mot_dim < 1) throw ConfigError("model feature dims must be >= 1");
    switch (answers.kind) {
      case AnswerSpace::Kind::open_ended:
        if (answers.num_classes < 2) throw ConfigError("answers.num_classes must be >= 2");
        break;
      case AnswerSpace::Kind::count:
        if (answers.count_min > answers.count_max)
          throw ConfigError("answers.count_min must be <= answers.count_max");
        break;
      case AnswerSpace::Kind::multi_choice:
        if (answers.num_candidates < 2)
          throw ConfigError("answers.num_candidates must be >= 2");
        break;
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["d"] = d;
    j["heads"] = heads;
    j["window"] = window;
    j["level_scales"] = level_scales;
    j["recurrence"] = recurrence;
    j["pvr_shared"] = pvr_shared;
    j["pvr_last_level_only"] = pvr_last_level_only;
    j["fusion_question_final"] = fusion_question_final;
    j["vocab_size"] = vocab_size;
    j["embed_dim"] = embed_dim;
    j["app_dim"] = app_dim;
    j["mot_dim"] = mot_dim;
    switch (answers.kind) {
      case AnswerSpace::Kind::open_ended:
        j["task_kind"] = "open_ended";
        j["num_classes"] = answers.num_classes;
        break;
      case AnswerSpace::Kind::count:
        j["task_kind"] = "count";
        j["count_min"] = answers.count_min;
        j["count_max"] = answers.count_max;
        break;
      case AnswerSpace::Kind::multi_choice:
        j["task_kind"] = "multi_choice";
        j["num_candidates"] = answers.num_candidates;
        break;
    }
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d = j.value("d", c.d);
    c.heads = j.value("heads", c.heads);
    c.window = j.value("window", c.window);
    if (j.contains("level_scales"))
      c.level_scales = j.at("level_scales").get<std::vector<std::size_t>>();
    c.recurrence = j.value("recurrence", c.recurrence);
    c.pvr_shared = j.value("pvr_shared", c.pvr_shared);
    c.pvr_last_level_only = j.value("pvr_last_level_only", c.pvr_last_level_only);
    c.fusion_question_final = j.value("fusion_question_final", c.fusion_question_final);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.app_dim = j.value("app_dim", c.app_dim);
    c.mot_dim = j.value("mot_dim", c.mot_dim);
    const std::string kind = j.value("task_kind", "open_ended");
    if (kind == "open_ended") {
      c.answers.kind = AnswerSpace::Kind::open_ended;
      c.answers.num_classes = j.value("num_classes", std::size_t{0});
    } else if (kind == "count") {
      c.answers.kind = AnswerSpace::Kind::count;
      c.answers.count_min = j.value("count_min", 1);
      c.answers.count_max = j.value("count_max", 10);
    } else if (kind == "multi_choice") {
      c.answers.kind = AnswerSpace::Kind::multi_choice;
      c.answers.num_candidates = j.value("num_candidates", std::size_t{0});
    } else {
      throw ConfigError("unknown task_kind '" + kind + "'");
    }
    return c;
  }
};

// The full network: multiscale visual assembly, text encoding, recurrent
// multimodal interaction, weight-shared parallel reasoning, task decoder.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(seed, 0xC0DE));
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Per-level visual sequences for one video; a shared subgraph when the
  // same video feeds several text streams.
  std::vector<ScaleBundle> make_bundles(const FeatureRecord& video) {
    std::vector<ScaleBundle> bundles;
    bundles.reserve(cfg_.level_scales.size());
    for (std::size_t scale : cfg_.level_scales) {
      ClipPlan plan = sample_clip_indices(video.frames, cfg_.window, scale);
      bundles.push_back(assemble_scale(video, plan, app_proj_, mot_proj_, pos_.at(scale)));
    }
    return bundles;
  }

  // Question- (or candidate-) conditioned answering feature O in R^d.
  Tensor answer_feature(const FeatureRecord& video, const std::vector<std::size_t>& token_ids) {
    auto levels = interaction_outputs(video, token_ids);
    return fuse(levels).pooled;
  }

  Tensor feature_from_bundles(const std::vector<ScaleBundle>& bundles,
                              const std::vector<std::size_t>& token_ids) {
    Tensor q0 = encode_text(token_ids, text_);
    return fuse(rmi_forward(bundles, q0, rmi_)).pooled;
  }

  std::vector<LevelOutput> interaction_outputs(const FeatureRecord& video,
                                               const std::vector<std::size_t>& token_ids) {
    Tensor q0 = encode_text(token_ids, text_);
    return rmi_forward(make_bundles(video), q0, rmi_);
  }

  FusionOutput fuse(const std::vector<LevelOutput>& levels) {
    const std::size_t first = cfg_.pvr_last_level_only ? levels.size() - 1 : 0;
    std::vector<Tensor> rs, q_hats;
    for (std::size_t l = first; l < levels.size(); ++l) {
      rs.push_back(encode_level(levels[l].x_hat, encoder(l)));
      q_hats.push_back(cfg_.fusion_question_final ? levels.back().q_hat : levels[l].q_hat);
    }
    return fuse_levels(q_hats, rs);
  }

  Tensor open_logits(const FeatureRecord& video, const std::vector<std::size_t>& token_ids) {
    return open_ended_logits(answer_feature(video, token_ids), open_head_);
  }

  Tensor count_output(const FeatureRecord& video, const std::vector<std::size_t>& token_ids) {
    return count_raw(answer_feature(video, token_ids), count_head_);
  }

  Tensor choice_scores(const FeatureRecord& video, const std::vector<std::size_t>& question_ids,
                       const std::vector<std::vector<std::size_t>>& candidate_ids) {
    auto bundles = make_bundles(video);
    Tensor o_q = feature_from_bundles(bundles, question_ids);
    std::vector<Tensor> o_as;
    o_as.reserve(candidate_ids.size());
    for (const auto& ids : candidate_ids) o_as.push_back(feature_from_bundles(bundles, ids));
    return multichoice_scores(o_q, o_as, mc_head_);
  }

  const OpenEndedHead& open_head() const { return open_head_; }
  const CountHead& count_head() const { return count_head_; }
  const MultiChoiceHead& mc_head() const { return mc_head_; }
  const TextEncoderParams& text_params() const { return text_; }
  const RmiParams& rmi_params() const { return rmi_; }
  const EncoderParams& encoder(std::size_t level) const {
    return cfg_.pvr_shared ? encoders_.front() : encoders_.at(level);
  }

  // Parameter totals per module prefix plus the grand total.
  std::map<std::string, std::size_t> param_breakdown() const {
    std::map<std::string, std::size_t> out;
    out["embedding"] = params_.count_with_prefix("embed.");
    out["text_encoder"] = params_.count_with_prefix("text.");
    out["visual_projection"] = params_.count_with_prefix("vis.");
    out["positional"] = params_.count_with_prefix("pos.");
    out["rmi"] = params_.count_with_prefix("rmi.");
    out["pvr"] = params_.count_with_prefix("pvr.");
    out["decoder"] = params_.count_with_prefix("dec.");
    out["total"] = params_.total_params();
    return out;
  }

 private:
  Tensor reg(const std::string& name, Tensor t) { return params_.add(name, t); }

  LinearParams reg_linear(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    return {reg(prefix + ".w", xavier_uniform(in, out, rng)),
            reg(prefix + ".b", zeros_param({out}))};
  }

  LayerNormParams reg_ln(const std::string& prefix, std::size_t d) {
    return {reg(prefix + ".g", ones_param({d})), reg(prefix + ".b", zeros_param({d}))};
  }

  FfnParams reg_ffn(const std::string& prefix, std::size_t d, Rng& rng) {
    FfnParams f;
    f.ln = reg_ln(prefix + ".ln", d);
    f.w1 = reg(prefix + ".w1", xavier_uniform(d, 4 * d, rng));
    f.b1 = reg(prefix + ".b1", zeros_param({4 * d}));
    f.w2 = reg(prefix + ".w2", xavier_uniform(4 * d, d, rng));
    f.b2 = reg(prefix + ".b2", zeros_param({d}));
    return f;
  }

  McaParams reg_mca(const std::string& prefix, std::size_t d, Rng& rng, bool self_mode) {
    McaParams m;
    m.heads = cfg_.heads;
    m.wq = reg(prefix + ".wq", xavier_uniform(d, d, rng));
    m.wk = reg(prefix + ".wk", xavier_uniform(d, d, rng));
    m.wv = reg(prefix + ".wv", xavier_uniform(d, d, rng));
    m.wo = reg(prefix + ".wo", xavier_uniform(d, d, rng));
    if (self_mode) {
      // One input normalization serving query, key and value sources.
      m.ln_x = reg_ln(prefix + ".ln", d);
      m.ln_q = m.ln_x;
    } else {
      m.ln_x = reg_ln(prefix + ".lnx", d);
      m.ln_q = reg_ln(prefix + ".lnq", d);
    }
    return m;
  }

  LstmDirParams reg_lstm(const std::string& prefix, std::size_t in, std::size_t hidden,
                         Rng& rng) {
    LstmDirParams p;
    p.wx = reg(prefix + ".wx", xavier_uniform(in, 4 * hidden, rng));
    p.wh = reg(prefix + ".wh", xavier_uniform(hidden, 4 * hidden, rng));
    Tensor b = zeros_param({4 * hidden});
    // Forget-gate bias starts at 1.
    for (std::size_t j = hidden; j < 2 * hidden; ++j) b.mutable_value()[j] = 1.0;
    p.b = reg(prefix + ".b", b);
    return p;
  }

  EncoderParams reg_encoder(const std::string& prefix, std::size_t d, Rng& rng) {
    EncoderParams e;
    e.mca = reg_mca(prefix + ".mca", d, rng, /*self_mode=*/true);
    e.ffn = reg_ffn(prefix + ".ffn", d, rng);
    return e;
  }

  void build(Rng& rng) {
    const std::size_t d = cfg_.d;
    text_.embedding = reg("embed.table", normal_param({cfg_.vocab_size, cfg_.embed_dim}, 0.1, rng));
    text_.input_proj = reg_linear("text.proj", cfg_.embed_dim, d, rng);
    text_.hidden = d / 2;
    text_.fw = reg_lstm("text.lstm.fw", d, text_.hidden, rng);
    text_.bw = reg_lstm("text.lstm.bw", d, text_.hidden, rng);

    app_proj_ = reg_linear("vis.app", cfg_.app_dim, d, rng);
    mot_proj_ = reg_linear("vis.mot", cfg_.mot_dim, d, rng);

    std::set<std::size_t> distinct(cfg_.level_scales.begin(), cfg_.level_scales.end());
    for (std::size_t scale : distinct) {
      const std::size_t len = sequence_length(cfg_.window, scale);
      pos_[scale] = reg("pos.s" + std::to_string(scale), normal_param({len, d}, 0.02, rng));
    }

    rmi_.recurrence = cfg_.recurrence;
    for (std::size_t l = 0; l < cfg_.levels(); ++l) {
      const std::string prefix = "rmi.b" + std::to_string(l);
      InteractionBlockParams block;
      block.mca = reg_mca(prefix + ".mca", d, rng, /*self_mode=*/false);
      block.ffn_x = reg_ffn(prefix + ".ffnx", d, rng);
      block.ffn_q = reg_ffn(prefix + ".ffnq", d, rng);
      rmi_.blocks.push_back(block);
    }
    if (cfg_.recurrence) {
      for (std::size_t l = 1; l < cfg_.levels(); ++l) {
        const std::string prefix = "rmi.align" + std::to_string(l);
        rmi_.aligns.push_back({reg(prefix + ".w1", xavier_uniform(d, d, rng)),
                               reg(prefix + ".w2", xavier_uniform(d, d, rng))});
      }
    }

    if (cfg_.pvr_shared) {
      encoders_.push_back(reg_encoder("pvr.enc", d, rng));
    } else {
      for (std::size_t l = 0; l < cfg_.levels(); ++l)
        encoders_.push_back(reg_encoder("pvr.enc" + std::to_string(l), d, rng));
    }

    switch (cfg_.answers.kind) {
      case AnswerSpace::Kind::open_ended:
        open_head_.hidden = reg_linear("dec.open.h", d, d, rng);
        open_head_.out = reg_linear("dec.open.out", d, cfg_.answers.num_classes, rng);
        break;
      case AnswerSpace::Kind::count:
        count_head_.hidden = reg_linear("dec.count.h", d, d, rng);
        count_head_.out = reg_linear("dec.count.out", d, 1, rng);
        break;
      case AnswerSpace::Kind::multi_choice:
        mc_head_.hidden = reg_linear("dec.mc.h", 2 * d, d, rng);
        mc_head_.out = reg_linear("dec.mc.out", d, 1, rng);
        break;
    }
  }

  ModelConfig cfg_;
  ParamStore params_;
  TextEncoderParams text_;
  LinearParams app_proj_, mot_proj_;
  std::map<std::size_t, Tensor> pos_;
  RmiParams rmi_;
  std::vector<EncoderParams> encoders_;
  OpenEndedHead open_head_;
  CountHead count_head_;
  MultiChoiceHead mc_head_;
};

}  // namespace mhn
