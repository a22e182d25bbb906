#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mhn/gradcheck.hpp"
#include "mhn/rmi.hpp"
#include "test_helpers.hpp"

using namespace mhn;
using namespace mhn_test;
using Catch::Approx;

TEST_CASE("mca basics") {
  Rng rng(7);
  SECTION("single key row receives weight one; output rows replicate") {
    McaParams w = make_mca(4, 2, rng);
    Tensor x = randt({3, 4}, rng);
    Tensor q = randt({1, 4}, rng);
    Tensor att = mca_attention_rows(x, q, w, 0);
    for (double v : att.value()) REQUIRE(v == Approx(1.0));
    Tensor out = mca(x, q, w);
    for (std::size_t r = 1; r < 3; ++r)
      for (std::size_t j = 0; j < 4; ++j)
        REQUIRE(out.value()[r * 4 + j] == Approx(out.value()[j]));
  }
  SECTION("two identical key rows each receive weight one half") {
    McaParams w = make_mca(4, 2, rng);
    Tensor x = randt({2, 4}, rng);
    std::vector<double> row = {0.3, -1.2, 0.8, 0.1};
    std::vector<double> qv = row;
    qv.insert(qv.end(), row.begin(), row.end());
    Tensor q = Tensor::from({2, 4}, qv);
    for (std::size_t h = 0; h < 2; ++h) {
      Tensor att = mca_attention_rows(x, q, w, h);
      for (double v : att.value()) REQUIRE(v == Approx(0.5));
    }
  }
  SECTION("head count must divide the width") {
    McaParams w = make_mca(4, 2, rng);
    w.heads = 3;
    REQUIRE_THROWS_AS(mca(randt({2, 4}, rng), randt({2, 4}, rng), w), ConfigError);
  }
  SECTION("attention rows sum to one within 1e-9") {
    for (int trial = 0; trial < 10; ++trial) {
      McaParams w = make_mca(8, 2, rng);
      Tensor x = randt({4, 8}, rng);
      Tensor q = randt({3, 8}, rng);
      for (std::size_t h = 0; h < 2; ++h) {
        Tensor att = mca_attention_rows(x, q, w, h);
        for (std::size_t r = 0; r < 4; ++r) {
          double sum = 0;
          for (std::size_t c = 0; c < 3; ++c) sum += att.value()[r * 3 + c];
          REQUIRE(std::fabs(sum - 1.0) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("mca matches a head-by-head oracle") {
  // Independent plain-double path: per head, query/key/value projections
  // from weight column blocks, scaled scores, row softmax, value mix,
  // concatenation, output projection.
  Rng rng(13);
  const std::size_t d = 4, H = 2, dh = d / H;
  McaParams w = make_mca(d, H, rng);
  Tensor x = randt({3, d}, rng);
  Tensor q = randt({2, d}, rng);

  Mat lx = mat_layernorm(to_mat(x));
  Mat lq = mat_layernorm(to_mat(q));
  Mat wq = to_mat(w.wq), wk = to_mat(w.wk), wv = to_mat(w.wv);
  Mat concat(3, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < H; ++h) {
    Mat fq = mat_mul(lx, mat_cols(wq, h * dh, (h + 1) * dh));
    Mat fk = mat_mul(lq, mat_cols(wk, h * dh, (h + 1) * dh));
    Mat fv = mat_mul(lq, mat_cols(wv, h * dh, (h + 1) * dh));
    Mat scores(3, std::vector<double>(2, 0.0));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        for (std::size_t k = 0; k < dh; ++k) scores[i][j] += fq[i][k] * fk[j][k];
        scores[i][j] /= std::sqrt(static_cast<double>(d));
      }
    Mat att = mat_softmax_rows(scores);
    Mat mixed = mat_mul(att, fv);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < dh; ++k) concat[i][h * dh + k] = mixed[i][k];
  }
  Mat expect = mat_mul(concat, to_mat(w.wo));

  Tensor out = mca(x, q, w);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < d; ++j)
      REQUIRE(out.value()[i * d + j] == Approx(expect[i][j]).margin(1e-12));
}

TEST_CASE("interaction block") {
  Rng rng(29);
  SECTION("shape preservation") {
    InteractionBlockParams p = make_block(8, 2, rng);
    LevelOutput out = interaction_block(randt({17, 8}, rng), randt({5, 8}, rng), p);
    REQUIRE(out.x_hat.shape() == Shape{17, 8});
    REQUIRE(out.q_hat.shape() == Shape{5, 8});
  }
  SECTION("zeroed output layers make the block an identity on both streams") {
    InteractionBlockParams p = make_block(6, 2, rng);
    fill_zero(p.mca.wo);
    fill_zero(p.ffn_x.w2);
    fill_zero(p.ffn_x.b2);
    fill_zero(p.ffn_q.w2);
    fill_zero(p.ffn_q.b2);
    Tensor x = randt({4, 6}, rng);
    Tensor q = randt({3, 6}, rng);
    LevelOutput out = interaction_block(x, q, p);
    REQUIRE(out.x_hat.value() == x.value());
    REQUIRE(out.q_hat.value() == q.value());
  }
  SECTION("gradients match finite differences at d=8 H=2") {
    ParamStore store;
    Rng prng(31);
    InteractionBlockParams p;
    p.mca.heads = 2;
    p.mca.wq = store.add("wq", randt({8, 8}, prng, 0.35, true));
    p.mca.wk = store.add("wk", randt({8, 8}, prng, 0.35, true));
    p.mca.wv = store.add("wv", randt({8, 8}, prng, 0.35, true));
    p.mca.wo = store.add("wo", randt({8, 8}, prng, 0.35, true));
    p.mca.ln_x = {store.add("lnx.g", ones_param({8})), store.add("lnx.b", zeros_param({8}))};
    p.mca.ln_q = {store.add("lnq.g", ones_param({8})), store.add("lnq.b", zeros_param({8}))};
    auto ffn = [&](const std::string& prefix) {
      FfnParams f;
      f.ln = {store.add(prefix + ".ln.g", ones_param({8})),
              store.add(prefix + ".ln.b", zeros_param({8}))};
      f.w1 = store.add(prefix + ".w1", randt({8, 32}, prng, 0.35, true));
      f.b1 = store.add(prefix + ".b1", zeros_param({32}));
      f.w2 = store.add(prefix + ".w2", randt({32, 8}, prng, 0.2, true));
      f.b2 = store.add(prefix + ".b2", zeros_param({8}));
      return f;
    };
    p.ffn_x = ffn("fx");
    p.ffn_q = ffn("fq");
    Tensor x = randt({3, 8}, prng);
    Tensor q = randt({2, 8}, prng);
    Rng wrng(32);
    Tensor wx = randt({3, 8}, wrng);
    Tensor wq2 = randt({2, 8}, wrng);
    auto result = check_gradients("block", store, [&]() {
      LevelOutput out = interaction_block(x, q, p);
      return add(sum_all(mul(out.x_hat, wx)), sum_all(mul(out.q_hat, wq2)));
    });
    REQUIRE(result.max_rel_err < 1e-4);
  }
}

TEST_CASE("recurrent alignment") {
  Rng rng(41);
  SECTION("zero previous level leaves the current input untouched") {
    AlignParams w{randt({4, 4}, rng), randt({4, 4}, rng)};
    Tensor x = randt({3, 4}, rng);
    Tensor out = recurrent_align(x, Tensor::zeros({5, 4}), w);
    REQUIRE(out.value() == x.value());
  }
  SECTION("shapes and attention normalization") {
    AlignParams w{randt({4, 4}, rng), randt({4, 4}, rng)};
    Tensor cur = randt({34, 4}, rng);
    Tensor prev = randt({17, 4}, rng);
    Tensor out = recurrent_align(cur, prev, w);
    REQUIRE(out.shape() == Shape{34, 4});
    Tensor att = recurrent_align_attention(cur, prev, w);
    REQUIRE(att.shape() == Shape{34, 17});
    for (std::size_t r = 0; r < 34; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < 17; ++c) sum += att.value()[r * 17 + c];
      REQUIRE(std::fabs(sum - 1.0) < 1e-9);
    }
  }
  SECTION("matches a hand-computed softmax mix at d=4") {
    AlignParams w{randt({4, 4}, rng), randt({4, 4}, rng)};
    Tensor cur = randt({2, 4}, rng);
    Tensor prev = randt({3, 4}, rng);

    Mat a = mat_mul(to_mat(cur), to_mat(w.w1));
    Mat b = mat_mul(to_mat(prev), to_mat(w.w2));
    Mat scores(2, std::vector<double>(3, 0.0));
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t k = 0; k < 4; ++k) scores[i][j] += a[i][k] * b[j][k];
        scores[i][j] /= 2.0;  // sqrt(d) = 2
      }
    Mat mix = mat_mul(mat_softmax_rows(scores), to_mat(prev));
    Tensor out = recurrent_align(cur, prev, w);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        REQUIRE(out.value()[i * 4 + j] ==
                Approx(to_mat(cur)[i][j] + mix[i][j]).margin(1e-12));
  }
}

namespace {

ScaleBundle fake_bundle(std::size_t scale, std::size_t len, std::size_t d, Rng& rng) {
  ScaleBundle b;
  b.scale = scale;
  b.x = randt({len, d}, rng);
  b.length = len;
  return b;
}

RmiParams make_rmi(std::size_t levels, std::size_t d, std::size_t heads, bool recurrence,
                   Rng& rng) {
  RmiParams p;
  p.recurrence = recurrence;
  for (std::size_t l = 0; l < levels; ++l) p.blocks.push_back(make_block(d, heads, rng));
  if (recurrence)
    for (std::size_t l = 1; l < levels; ++l)
      p.aligns.push_back({randt({d, d}, rng), randt({d, d}, rng)});
  return p;
}

}  // namespace

TEST_CASE("rmi_forward") {
  Rng rng(55);
  SECTION("one level degenerates to a single block") {
    RmiParams p = make_rmi(1, 8, 2, true, rng);
    REQUIRE(p.aligns.empty());
    Tensor q0 = randt({4, 8}, rng);
    std::vector<ScaleBundle> bundles = {fake_bundle(1, 5, 8, rng)};
    auto outs = rmi_forward(bundles, q0, p);
    REQUIRE(outs.size() == 1);
    LevelOutput direct = interaction_block(bundles[0].x, q0, p.blocks[0]);
    REQUIRE(outs[0].x_hat.value() == direct.x_hat.value());
    REQUIRE(outs[0].q_hat.value() == direct.q_hat.value());
  }
  SECTION("three levels at T=16 keep visual lengths 17/34/68") {
    RmiParams p = make_rmi(3, 8, 2, true, rng);
    Tensor q0 = randt({6, 8}, rng);
    std::vector<ScaleBundle> bundles = {fake_bundle(1, 17, 8, rng), fake_bundle(2, 34, 8, rng),
                                        fake_bundle(3, 68, 8, rng)};
    auto outs = rmi_forward(bundles, q0, p);
    REQUIRE(outs[0].x_hat.dim(0) == 17);
    REQUIRE(outs[1].x_hat.dim(0) == 34);
    REQUIRE(outs[2].x_hat.dim(0) == 68);
    for (const auto& o : outs) REQUIRE(o.q_hat.dim(0) == 6);
  }
  SECTION("permuted level order keeps each level's own length") {
    RmiParams p = make_rmi(3, 8, 2, true, rng);
    Tensor q0 = randt({6, 8}, rng);
    std::vector<ScaleBundle> bundles = {fake_bundle(3, 68, 8, rng), fake_bundle(1, 17, 8, rng),
                                        fake_bundle(2, 34, 8, rng)};
    auto outs = rmi_forward(bundles, q0, p);
    REQUIRE(outs[0].x_hat.dim(0) == 68);
    REQUIRE(outs[1].x_hat.dim(0) == 17);
    REQUIRE(outs[2].x_hat.dim(0) == 34);
  }
  SECTION("empty bundle list is a configuration error") {
    RmiParams p = make_rmi(1, 8, 2, true, rng);
    REQUIRE_THROWS_AS(rmi_forward({}, randt({2, 8}, rng), p), ConfigError);
  }
  SECTION("recurrence off isolates levels; on couples them") {
    Tensor q0 = randt({4, 8}, rng);
    std::vector<ScaleBundle> bundles = {fake_bundle(1, 5, 8, rng), fake_bundle(2, 10, 8, rng),
                                        fake_bundle(3, 20, 8, rng)};
    std::vector<ScaleBundle> perturbed = bundles;
    {
      Rng prng(56);
      ScaleBundle b0 = bundles[0];
      std::vector<double> bumped = b0.x.value();
      bumped[3] += 0.5;
      perturbed[0] = ScaleBundle{b0.scale, Tensor::from(b0.x.shape(), bumped), b0.length};
    }
    {
      Rng seed_rng(57);
      RmiParams off = make_rmi(3, 8, 2, false, seed_rng);
      auto a = rmi_forward(bundles, q0, off);
      auto b = rmi_forward(perturbed, q0, off);
      REQUIRE(a[0].x_hat.value() != b[0].x_hat.value());
      REQUIRE(a[1].x_hat.value() == b[1].x_hat.value());
      REQUIRE(a[2].x_hat.value() == b[2].x_hat.value());
    }
    {
      Rng seed_rng(57);
      RmiParams on = make_rmi(3, 8, 2, true, seed_rng);
      auto a = rmi_forward(bundles, q0, on);
      auto b = rmi_forward(perturbed, q0, on);
      REQUIRE(a[1].x_hat.value() != b[1].x_hat.value());
      REQUIRE(a[2].x_hat.value() != b[2].x_hat.value());
    }
  }
}
