#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mhn/fused.hpp"
#include "mhn/gradcheck.hpp"
#include "mhn/model.hpp"
#include "mhn/params.hpp"
#include "mhn/rng.hpp"
#include "mhn/sampling.hpp"
#include "mhn/tensor.hpp"
#include "mhn/text.hpp"

namespace mhn {

namespace detail {

inline Tensor rand_const(Shape shape, Rng& rng, double s = 1.0) {
  std::vector<double> data(numel_of(shape));
  for (double& v : data) v = rng.normal(0.0, s);
  return Tensor::from(std::move(shape), std::move(data), false);
}

inline Tensor rand_param(ParamStore& store, const std::string& name, Shape shape, Rng& rng,
                         double s = 1.0) {
  std::vector<double> data(numel_of(shape));
  for (double& v : data) v = rng.normal(0.0, s);
  return store.add(name, Tensor::from(std::move(shape), std::move(data), true));
}

}  // namespace detail

// Finite-difference checks for every autodiff primitive at small random
// shapes. Structured outputs (softmax rows, normalized rows) are reduced
// against a fixed random weight matrix so their gradients stay
// informative. Deterministic in the seed.
inline std::vector<GradCheckResult> primitive_gradchecks(std::uint64_t seed) {
  std::vector<GradCheckResult> results;
  Rng rng(derive_seed(seed, 0x60AD));

  // Weighted single-input check: loss = sum(op(x) * W) with W fixed.
  auto check1 = [&](const std::string& name, Shape in_shape, Shape out_shape, auto op) {
    ParamStore store;
    Tensor x = detail::rand_param(store, "x", in_shape, rng);
    Tensor w = detail::rand_const(out_shape, rng);
    results.push_back(
        check_gradients(name, store, [&]() { return sum_all(mul(op(x), w)); }));
  };

  {
    ParamStore store;
    Tensor a = detail::rand_param(store, "a", {3, 4}, rng);
    Tensor b = detail::rand_param(store, "b", {4, 2}, rng);
    results.push_back(check_gradients("matmul", store, [&]() { return sum_all(matmul(a, b)); }));
  }
  {
    ParamStore store;
    Tensor a = detail::rand_param(store, "a", {3, 4}, rng);
    Tensor b = detail::rand_param(store, "b", {5, 4}, rng);
    Tensor w = detail::rand_const({3, 5}, rng);
    results.push_back(check_gradients("matmul_nt", store,
                                      [&]() { return sum_all(mul(matmul_nt(a, b), w)); }));
  }
  {
    ParamStore store;
    Tensor a = detail::rand_param(store, "a", {2, 3}, rng);
    Tensor b = detail::rand_param(store, "b", {2, 3}, rng);
    results.push_back(check_gradients("add_sub_mul", store, [&]() {
      return sum_all(mul(add(a, b), sub(a, scale(b, 0.5))));
    }));
  }
  {
    ParamStore store;
    Tensor x = detail::rand_param(store, "x", {3, 4}, rng);
    Tensor bias = detail::rand_param(store, "b", {4}, rng);
    results.push_back(check_gradients("add_rowwise", store,
                                      [&]() { return sum_all(gelu(add_rowwise(x, bias))); }));
  }
  check1("transpose", {3, 5}, {5, 3}, [](const Tensor& x) { return transpose(x); });
  check1("reshape", {2, 6}, {3, 4}, [](const Tensor& x) { return reshape(x, {3, 4}); });
  {
    ParamStore store;
    Tensor a = detail::rand_param(store, "a", {2, 3}, rng);
    Tensor b = detail::rand_param(store, "b", {4, 3}, rng);
    Tensor w = detail::rand_const({6, 3}, rng);
    results.push_back(check_gradients("concat_rows", store,
                                      [&]() { return sum_all(mul(concat_rows({a, b}), w)); }));
  }
  {
    ParamStore store;
    Tensor a = detail::rand_param(store, "a", {3, 2}, rng);
    Tensor b = detail::rand_param(store, "b", {3, 5}, rng);
    Tensor w = detail::rand_const({3, 7}, rng);
    results.push_back(check_gradients("concat_cols", store,
                                      [&]() { return sum_all(mul(concat_cols({a, b}), w)); }));
  }
  check1("slice_rows", {5, 3}, {3, 3}, [](const Tensor& x) { return slice_rows(x, 1, 4); });
  check1("slice_cols", {3, 6}, {3, 3}, [](const Tensor& x) { return slice_cols(x, 2, 5); });
  {
    // Repeated indices exercise gradient accumulation in the scatter.
    const std::vector<std::size_t> idx = {0, 2, 2, 4};
    check1("gather_rows", {5, 3}, {4, 3},
           [&idx](const Tensor& x) { return gather_rows(x, idx); });
  }
  check1("softmax_last", {3, 5}, {3, 5}, [](const Tensor& x) { return softmax_last(x); });
  check1("log_softmax_last", {3, 5}, {3, 5},
         [](const Tensor& x) { return log_softmax_last(x); });
  {
    ParamStore store;
    Tensor x = detail::rand_param(store, "x", {2, 8}, rng);
    Tensor g = detail::rand_param(store, "g", {8}, rng, 0.5);
    Tensor b = detail::rand_param(store, "b", {8}, rng, 0.5);
    Tensor w = detail::rand_const({2, 8}, rng);
    results.push_back(check_gradients("layer_norm", store,
                                      [&]() { return sum_all(mul(layer_norm(x, g, b), w)); }));
  }
  check1("gelu", {3, 4}, {3, 4}, [](const Tensor& x) { return gelu(x); });
  check1("tanh", {3, 4}, {3, 4}, [](const Tensor& x) { return tanh(x); });
  check1("sigmoid", {3, 4}, {3, 4}, [](const Tensor& x) { return sigmoid(x); });
  check1("mean_pool_time", {4, 3}, {3}, [](const Tensor& x) { return mean_pool_time(x); });
  {
    ParamStore store;
    Tensor x = detail::rand_param(store, "x", {2, 3}, rng);
    results.push_back(check_gradients("pick", store, [&]() { return pick(x, 4); }));
  }
  check1("add_scalar", {2, 2}, {2, 2},
         [](const Tensor& x) { return gelu(add_scalar(x, 0.3)); });
  // relu checked away from its kink.
  check1("relu", {3, 4}, {3, 4}, [](const Tensor& x) { return relu(add_scalar(x, 3.0)); });
  {
    ParamStore store;
    Tensor fq = detail::rand_param(store, "fq", {3, 4}, rng);
    Tensor fk = detail::rand_param(store, "fk", {5, 4}, rng);
    Tensor fv = detail::rand_param(store, "fv", {5, 4}, rng);
    Tensor w = detail::rand_const({3, 4}, rng);
    results.push_back(check_gradients("multi_head_attention", store, [&]() {
      return sum_all(mul(multi_head_attention(fq, fk, fv, 2, 0.5), w));
    }));
  }
  for (bool reverse : {false, true}) {
    ParamStore store;
    Tensor x = detail::rand_param(store, "x", {4, 3}, rng);
    Tensor wx = detail::rand_param(store, "wx", {3, 8}, rng, 0.5);
    Tensor wh = detail::rand_param(store, "wh", {2, 8}, rng, 0.5);
    Tensor b = detail::rand_param(store, "b", {8}, rng, 0.3);
    Tensor w = detail::rand_const({4, 2}, rng);
    results.push_back(
        check_gradients(reverse ? "lstm_sequence_bw" : "lstm_sequence_fw", store, [&]() {
          return sum_all(mul(lstm_sequence(x, wx, wh, b, 2, reverse), w));
        }));
  }
  return results;
}

// One small FeatureRecord with deterministic contents.
inline FeatureRecord gradcheck_video(std::uint64_t seed, std::size_t frames, std::size_t app_dim,
                                     std::size_t mot_dim) {
  Rng rng(derive_seed(seed, 0xF1D0));
  FeatureRecord r;
  r.video_id = "gradcheck";
  r.frames = frames;
  r.app_dim = app_dim;
  r.mot_dim = mot_dim;
  r.appearance.resize(frames * app_dim);
  r.motion.resize(frames * mot_dim);
  for (double& v : r.appearance) v = rng.normal(0.0, 1.0);
  for (double& v : r.motion) v = rng.normal(0.0, 1.0);
  return r;
}

inline ModelConfig gradcheck_model_config(AnswerSpace::Kind kind) {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.window = 2;
  cfg.level_scales = {1, 2};
  cfg.vocab_size = 10;
  cfg.app_dim = 4;
  cfg.mot_dim = 4;
  cfg.answers.kind = kind;
  cfg.answers.num_classes = 4;
  cfg.answers.num_candidates = 2;
  return cfg;
}

// Full-network check: every parameter gradient of a complete forward pass
// against central finite differences.
inline GradCheckResult model_gradcheck(std::uint64_t seed, AnswerSpace::Kind kind,
                                       double h = 1e-5) {
  const ModelConfig cfg = gradcheck_model_config(kind);
  Model model(cfg, seed);
  const FeatureRecord video = gradcheck_video(seed, 6, cfg.app_dim, cfg.mot_dim);
  const std::vector<std::size_t> question = {2, 5, 3};
  const std::vector<std::vector<std::size_t>> candidates = {{4, 7}, {8, 3, 6}};

  auto loss_fn = [&]() -> Tensor {
    switch (kind) {
      case AnswerSpace::Kind::open_ended:
        return cross_entropy(model.open_logits(video, question), 1);
      case AnswerSpace::Kind::count:
        return mse_loss(model.count_output(video, question), 3.0);
      case AnswerSpace::Kind::multi_choice:
        return hinge_loss(model.choice_scores(video, question, candidates), 0);
    }
    throw ContractError("unreachable");
  };
  std::string name = "model";
  switch (kind) {
    case AnswerSpace::Kind::open_ended: name = "model_open_ended"; break;
    case AnswerSpace::Kind::count: name = "model_count"; break;
    case AnswerSpace::Kind::multi_choice: name = "model_multi_choice"; break;
  }
  return check_gradients(name, model.params(), loss_fn, h);
}

// Everything the gradient-integrity gate requires: all primitives plus the
// full network under each decoder.
inline std::vector<GradCheckResult> full_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckResult> results = primitive_gradchecks(seed);
  results.push_back(model_gradcheck(seed, AnswerSpace::Kind::open_ended));
  results.push_back(model_gradcheck(seed, AnswerSpace::Kind::count));
  results.push_back(model_gradcheck(seed, AnswerSpace::Kind::multi_choice));
  return results;
}

}  // namespace mhn
