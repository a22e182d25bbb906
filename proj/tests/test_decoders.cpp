#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mhn/decoders.hpp"
#include "mhn/gradcheck.hpp"
#include "test_helpers.hpp"

using namespace mhn;
using namespace mhn_test;
using Catch::Approx;

TEST_CASE("open-ended head") {
  Rng rng(71);
  SECTION("zero weights give a uniform distribution") {
    OpenEndedHead head{{Tensor::zeros({4, 4}), Tensor::zeros({4})},
                       {Tensor::zeros({4, 6}), Tensor::zeros({6})}};
    Tensor p = open_ended_probs(randt({4}, rng), head);
    for (double v : p.value()) REQUIRE(v == Approx(1.0 / 6.0));
  }
  SECTION("probabilities sum to one on random inputs") {
    OpenEndedHead head{{randt({8, 8}, rng), randt({8}, rng)},
                       {randt({8, 5}, rng), randt({5}, rng)}};
    for (int trial = 0; trial < 10; ++trial) {
      Tensor p = open_ended_probs(randt({8}, rng, 2.0), head);
      double sum = 0;
      for (double v : p.value()) {
        REQUIRE(v >= 0.0);
        sum += v;
      }
      REQUIRE(std::fabs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("cross-entropy gradient at the logits is P minus onehot") {
  Rng rng(73);
  ParamStore store;
  Tensor logits = store.add("logits", randt({5}, rng, 1.5, true));
  const std::size_t target = 2;

  store.zero_grads();
  backward(cross_entropy(logits, target));
  Tensor probs = softmax_last(logits);
  for (std::size_t i = 0; i < 5; ++i) {
    const double expect = probs.value()[i] - (i == target ? 1.0 : 0.0);
    REQUIRE(logits.grad()[i] == Approx(expect).margin(1e-12));
  }

  auto fd = check_gradients("ce", store, [&]() { return cross_entropy(logits, target); });
  REQUIRE(fd.max_rel_err < 1e-8);
}

TEST_CASE("count prediction rounding and clamping") {
  AnswerSpace space;
  space.kind = AnswerSpace::Kind::count;
  space.count_min = 1;
  space.count_max = 10;
  REQUIRE(count_predict(3.4, space) == 3);
  REQUIRE(count_predict(12.7, space) == 10);
  REQUIRE(count_predict(0.2, space) == 1);
  REQUIRE(count_predict(3.5, space) == 4);   // half away from zero
  REQUIRE(count_predict(-2.5, space) == 1);  // clamped from -3
  SECTION("image is always inside the declared range") {
    Rng rng(77);
    for (int i = 0; i < 200; ++i) {
      const int p = count_predict(rng.normal(5, 12), space);
      REQUIRE(p >= space.count_min);
      REQUIRE(p <= space.count_max);
    }
  }
}

TEST_CASE("count head loss gradients") {
  Rng rng(79);
  ParamStore store;
  CountHead head;
  head.hidden = {store.add("h.w", randt({8, 8}, rng, 0.4, true)),
                 store.add("h.b", zeros_param({8}))};
  head.out = {store.add("o.w", randt({8, 1}, rng, 0.4, true)),
              store.add("o.b", zeros_param({1}))};
  Tensor o = randt({8}, rng);
  auto fd = check_gradients("count_mse", store,
                            [&]() { return mse_loss(count_raw(o, head), 4.0); });
  REQUIRE(fd.max_rel_err < 1e-5);
}

TEST_CASE("multi-choice head") {
  Rng rng(83);
  MultiChoiceHead head{{randt({16, 8}, rng), randt({8}, rng)},
                       {randt({8, 1}, rng), randt({1}, rng)}};
  SECTION("shape contract: K=5 candidates give 5 scores") {
    std::vector<Tensor> cands;
    for (int k = 0; k < 5; ++k) cands.push_back(randt({8}, rng));
    REQUIRE(multichoice_scores(randt({8}, rng), cands, head).numel() == 5);
  }
  SECTION("identical candidates score identically; argmax ties to the lowest index") {
    Tensor o_q = randt({8}, rng);
    Tensor cand = randt({8}, rng);
    Tensor scores = multichoice_scores(o_q, {cand, cand, cand}, head);
    REQUIRE(scores.value()[0] == scores.value()[1]);
    REQUIRE(scores.value()[1] == scores.value()[2]);
    REQUIRE(argmax(scores.value()) == 0);
  }
  SECTION("fewer than two candidates rejected") {
    REQUIRE_THROWS_AS(multichoice_scores(randt({8}, rng), {randt({8}, rng)}, head),
                      ConfigError);
  }
}

TEST_CASE("hinge loss") {
  SECTION("correct answer ahead by the margin gives zero") {
    REQUIRE(hinge_loss(Tensor::from({2}, {2.0, 0.5}), 0).item() == 0.0);
  }
  SECTION("tied scores give exactly the margin") {
    REQUIRE(hinge_loss(Tensor::from({2}, {0.0, 0.0}), 0).item() == 1.0);
  }
  SECTION("sums over every incorrect candidate") {
    REQUIRE(hinge_loss(Tensor::from({3}, {0.0, 1.0, 2.0}), 0).item() == 5.0);
  }
  SECTION("zero iff every incorrect score trails by at least the margin") {
    Rng rng(87);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> scores(4);
      for (double& s : scores) s = rng.normal(0, 2);
      const std::size_t c = rng.integer(4);
      bool separated = true;
      for (std::size_t k = 0; k < 4; ++k)
        if (k != c) separated = separated && scores[k] <= scores[c] - 1.0;
      const double loss = hinge_loss(Tensor::from({4}, scores), c).item();
      REQUIRE((loss == 0.0) == separated);
    }
  }
  SECTION("gradient check away from hinge kinks") {
    ParamStore store;
    Tensor scores = store.add("p", Tensor::from({3}, {0.3, 1.4, -0.8}, true));
    auto fd = check_gradients("hinge", store, [&]() { return hinge_loss(scores, 1); });
    REQUIRE(fd.max_rel_err < 1e-8);
  }
}
