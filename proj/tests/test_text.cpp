#include <catch2/catch_amalgamated.hpp>

#include "mhn/gradcheck.hpp"
#include "mhn/text.hpp"
#include "test_helpers.hpp"

using namespace mhn;

namespace {

TextEncoderParams make_text_params(std::size_t vocab, std::size_t d, Rng& rng, bool req = false) {
  TextEncoderParams p;
  p.embedding = mhn_test::randt({vocab, 6}, rng, 0.5, req);
  p.input_proj = {mhn_test::randt({6, d}, rng, 0.5, req), Tensor::zeros({d}, req)};
  p.hidden = d / 2;
  auto lstm = [&](void) -> LstmDirParams {
    return {mhn_test::randt({d, 4 * p.hidden}, rng, 0.5, req),
            mhn_test::randt({p.hidden, 4 * p.hidden}, rng, 0.5, req),
            Tensor::zeros({4 * p.hidden}, req)};
  };
  p.fw = lstm();
  p.bw = lstm();
  return p;
}

}  // namespace

TEST_CASE("vocab") {
  Vocab v;
  REQUIRE(v.lookup("<pad>") == Vocab::kPad);
  REQUIRE(v.lookup("never-seen") == Vocab::kUnk);
  const std::size_t id = v.add("hello");
  REQUIRE(v.add("hello") == id);  // idempotent
  REQUIRE(v.lookup("hello") == id);
  SECTION("JSON round trip preserves ids") {
    v.add("world");
    Vocab back = Vocab::from_json(v.to_json());
    REQUIRE(back.size() == v.size());
    REQUIRE(back.lookup("hello") == v.lookup("hello"));
    REQUIRE(back.lookup("world") == v.lookup("world"));
    REQUIRE(back.lookup("<pad>") == Vocab::kPad);
  }
}

TEST_CASE("encode_text output contract") {
  Rng rng(21);
  TextEncoderParams p = make_text_params(12, 8, rng);
  SECTION("L=5 d=8 gives a 5x8 matrix") {
    Tensor out = encode_text({1, 4, 7, 2, 9}, p);
    REQUIRE(out.shape() == Shape{5, 8});
  }
  SECTION("row count always equals token count") {
    for (std::size_t L : {std::size_t{1}, std::size_t{3}, std::size_t{9}}) {
      std::vector<std::size_t> ids(L, 2);
      REQUIRE(encode_text(ids, p).dim(0) == L);
    }
  }
  SECTION("empty sequence rejected") {
    REQUIRE_THROWS_AS(encode_text({}, p), ContractError);
  }
  SECTION("order sensitivity: reversing a non-palindromic sequence changes the output") {
    Tensor fwd = encode_text({1, 4, 7, 2, 9}, p);
    Tensor rev = encode_text({9, 2, 7, 4, 1}, p);
    bool any_diff = false;
    for (std::size_t i = 0; i < fwd.numel(); ++i)
      any_diff = any_diff || fwd.value()[i] != rev.value()[i];
    REQUIRE(any_diff);
  }
}

TEST_CASE("text encoder gradients vs finite differences") {
  ParamStore store;
  Rng rng(33);
  const std::size_t d = 4, h = 2, vocab = 9;
  TextEncoderParams p;
  p.embedding = store.add("embed", mhn_test::randt({vocab, 6}, rng, 0.5, true));
  p.input_proj = {store.add("proj.w", mhn_test::randt({6, d}, rng, 0.5, true)),
                  store.add("proj.b", Tensor::zeros({d}, true))};
  p.hidden = h;
  p.fw = {store.add("fw.wx", mhn_test::randt({d, 4 * h}, rng, 0.5, true)),
          store.add("fw.wh", mhn_test::randt({h, 4 * h}, rng, 0.5, true)),
          store.add("fw.b", Tensor::zeros({4 * h}, true))};
  p.bw = {store.add("bw.wx", mhn_test::randt({d, 4 * h}, rng, 0.5, true)),
          store.add("bw.wh", mhn_test::randt({h, 4 * h}, rng, 0.5, true)),
          store.add("bw.b", Tensor::zeros({4 * h}, true))};
  Rng wrng(34);
  Tensor w = mhn_test::randt({3, d}, wrng);
  auto result = check_gradients(
      "bilstm", store, [&]() { return sum_all(mul(encode_text({2, 5, 8}, p), w)); }, 1e-6);
  REQUIRE(result.max_rel_err < 1e-4);
}
