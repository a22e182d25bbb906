#include <catch2/catch_amalgamated.hpp>

#include "mhn/gradcheck_suite.hpp"
#include "mhn/model.hpp"
#include "test_helpers.hpp"

using namespace mhn;
using Catch::Approx;

namespace {

ModelConfig small_config(std::size_t levels = 2) {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.window = 2;
  cfg.level_scales.clear();
  for (std::size_t i = 1; i <= levels; ++i) cfg.level_scales.push_back(i);
  cfg.vocab_size = 12;
  cfg.app_dim = 4;
  cfg.mot_dim = 4;
  cfg.answers.kind = AnswerSpace::Kind::open_ended;
  cfg.answers.num_classes = 4;
  return cfg;
}

}  // namespace

TEST_CASE("config validation rejects bad settings with field names") {
  ModelConfig cfg = small_config();
  SECTION("odd width") {
    cfg.d = 7;
    cfg.heads = 1;
    REQUIRE_THROWS_MATCHES(Model(cfg, 0), ConfigError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("model.d")));
  }
  SECTION("width not divisible by heads") {
    cfg.d = 8;
    cfg.heads = 3;
    REQUIRE_THROWS_MATCHES(Model(cfg, 0), ConfigError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("model.heads")));
  }
  SECTION("empty level scales") {
    cfg.level_scales.clear();
    REQUIRE_THROWS_AS(Model(cfg, 0), ConfigError);
  }
  SECTION("scale assignment must be a permutation or constant") {
    cfg.level_scales = {1, 1, 2};
    REQUIRE_THROWS_AS(Model(cfg, 0), ConfigError);
    cfg.level_scales = {2, 4};  // distinct but not 1..N
    REQUIRE_THROWS_AS(Model(cfg, 0), ConfigError);
    cfg.level_scales = {3, 3, 3};  // single-scale variant is allowed
    REQUIRE_NOTHROW(Model(cfg, 0));
    cfg.level_scales = {2, 1, 3};
    REQUIRE_NOTHROW(Model(cfg, 0));
  }
  SECTION("open-ended needs at least two classes") {
    cfg.answers.num_classes = 1;
    REQUIRE_THROWS_AS(Model(cfg, 0), ConfigError);
  }
}

TEST_CASE("weight sharing accounting") {
  // Unshared-minus-shared parameter delta is exactly (N-1) encoder layers,
  // and the shared reasoning module has the same size at every N.
  std::size_t shared_pvr_at_n2 = 0;
  for (std::size_t n = 2; n <= 4; ++n) {
    ModelConfig shared = small_config(n);
    ModelConfig unshared = shared;
    unshared.pvr_shared = false;
    Model ms(shared, 1);
    Model mu(unshared, 1);
    const std::size_t pvr_shared_count = ms.params().count_with_prefix("pvr.");
    const std::size_t pvr_unshared_count = mu.params().count_with_prefix("pvr.");
    REQUIRE(pvr_unshared_count == n * pvr_shared_count);
    REQUIRE(mu.params().total_params() - ms.params().total_params() ==
            (n - 1) * pvr_shared_count);
    if (n == 2)
      shared_pvr_at_n2 = pvr_shared_count;
    else
      REQUIRE(pvr_shared_count == shared_pvr_at_n2);
  }
}

TEST_CASE("parameter count is invariant to window size and level order") {
  ModelConfig a = small_config(3);
  ModelConfig b = a;
  b.level_scales = {3, 1, 2};
  ModelConfig c = a;
  c.window = 4;  // longer clips: only positional tables grow
  Model ma(a, 2), mb(b, 2), mc(c, 2);
  REQUIRE(ma.params().total_params() == mb.params().total_params());
  const std::size_t pos_a = ma.params().count_with_prefix("pos.");
  const std::size_t pos_c = mc.params().count_with_prefix("pos.");
  REQUIRE(ma.params().total_params() - pos_a == mc.params().total_params() - pos_c);
}

TEST_CASE("shared mode reuses one encoder parameter set across levels") {
  Model shared(small_config(3), 3);
  REQUIRE(shared.encoder(0).mca.wq.node() == shared.encoder(2).mca.wq.node());
  REQUIRE(shared.encoder(0).ffn.w1.node() == shared.encoder(1).ffn.w1.node());

  ModelConfig cfg = small_config(3);
  cfg.pvr_shared = false;
  Model unshared(cfg, 3);
  REQUIRE(unshared.encoder(0).mca.wq.node() != unshared.encoder(1).mca.wq.node());
}

TEST_CASE("shared encoder accumulates gradients from every level") {
  ModelConfig cfg = small_config(2);
  Model model(cfg, 5);
  const FeatureRecord video = gradcheck_video(5, 6, cfg.app_dim, cfg.mot_dim);

  auto grad_norm = [&](bool both_levels) {
    ModelConfig c = cfg;
    c.pvr_last_level_only = !both_levels;
    Model m(c, 5);
    m.params().zero_grads();
    backward(cross_entropy(m.open_logits(video, {2, 3}), 0));
    double sum = 0;
    for (double g : m.encoder(0).mca.wq.grad()) sum += g * g;
    return sum;
  };
  // Gradients flow into the shared encoder in both modes and the
  // two-level path differs from the single-level one.
  REQUIRE(grad_norm(true) > 0.0);
  REQUIRE(grad_norm(true) != grad_norm(false));
}

TEST_CASE("candidate stream reuses the question-stream parameters") {
  ModelConfig cfg = small_config(2);
  cfg.answers.kind = AnswerSpace::Kind::multi_choice;
  cfg.answers.num_candidates = 3;
  Model model(cfg, 7);
  const std::size_t before = model.params().size();
  const FeatureRecord video = gradcheck_video(7, 6, cfg.app_dim, cfg.mot_dim);
  Tensor scores = model.choice_scores(video, {1, 2}, {{3}, {4, 5}, {6}});
  REQUIRE(scores.numel() == 3);
  // No extra parameters appear for the candidate pipeline: encoding both
  // streams touches exactly the same named tensors.
  REQUIRE(model.params().size() == before);
  backward(sum_all(scores));
  REQUIRE(model.text_params().embedding.has_grad());
}

TEST_CASE("pvr_last_level_only fuses a single level") {
  ModelConfig cfg = small_config(3);
  cfg.pvr_last_level_only = true;
  Model model(cfg, 11);
  const FeatureRecord video = gradcheck_video(11, 6, cfg.app_dim, cfg.mot_dim);
  auto levels = model.interaction_outputs(video, {2, 3, 4});
  FusionOutput fused = model.fuse(levels);
  REQUIRE(fused.weights.size() == 1);
  REQUIRE(fused.weights[0] == Approx(1.0));
}

TEST_CASE("model construction is deterministic in the seed") {
  Model a(small_config(2), 17);
  Model b(small_config(2), 17);
  Model c(small_config(2), 18);
  REQUIRE(a.params().total_params() == b.params().total_params());
  bool same_17 = true, same_18 = true;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    same_17 = same_17 &&
              a.params().entries()[i].second.value() == b.params().entries()[i].second.value();
    same_18 = same_18 &&
              a.params().entries()[i].second.value() == c.params().entries()[i].second.value();
  }
  REQUIRE(same_17);
  REQUIRE_FALSE(same_18);
}

TEST_CASE("forward pass is deterministic and fusion weights normalize") {
  ModelConfig cfg = small_config(3);
  Model model(cfg, 23);
  const FeatureRecord video = gradcheck_video(23, 9, cfg.app_dim, cfg.mot_dim);
  auto levels = model.interaction_outputs(video, {5, 1, 8});
  FusionOutput fused = model.fuse(levels);
  double sum = 0;
  for (double w : fused.weights) {
    REQUIRE(w >= 0.0);
    sum += w;
  }
  REQUIRE(std::fabs(sum - 1.0) < 1e-9);

  Model again(cfg, 23);
  auto levels2 = again.interaction_outputs(video, {5, 1, 8});
  REQUIRE(model.fuse(levels).pooled.value() == again.fuse(levels2).pooled.value());
}
