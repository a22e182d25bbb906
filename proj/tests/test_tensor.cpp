#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mhn/gradcheck.hpp"
#include "mhn/gradcheck_suite.hpp"
#include "mhn/rng.hpp"
#include "mhn/tensor.hpp"

using namespace mhn;
using Catch::Approx;

TEST_CASE("matmul basic cases") {
  SECTION("identity") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(eye, m);
    REQUIRE(out.value() == std::vector<double>{1, 2, 3, 4});
  }
  SECTION("selector row") {
    Tensor sel = Tensor::from({1, 2}, {1, 0});
    Tensor col = Tensor::from({2, 1}, {2, 5});
    REQUIRE(matmul(sel, col).value() == std::vector<double>{2});
  }
  SECTION("shape mismatch names both shapes") {
    Tensor a = Tensor::from({2, 3}, std::vector<double>(6, 0.0));
    Tensor b = Tensor::from({2, 2}, std::vector<double>(4, 0.0));
    REQUIRE_THROWS_MATCHES(matmul(a, b), DimensionError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("[2,3]") &&
                               Catch::Matchers::ContainsSubstring("[2,2]")));
  }
}

TEST_CASE("matmul gradient matches central finite differences") {
  ParamStore store;
  Rng rng(11);
  std::vector<double> av(12), bv(8);
  for (double& v : av) v = rng.normal(0, 1);
  for (double& v : bv) v = rng.normal(0, 1);
  Tensor a = store.add("a", Tensor::from({3, 4}, av, true));
  Tensor b = store.add("b", Tensor::from({4, 2}, bv, true));
  auto result = check_gradients("matmul", store, [&]() { return sum_all(matmul(a, b)); }, 1e-6);
  REQUIRE(result.max_rel_err < 1e-6);
}

TEST_CASE("softmax_last values and invariants") {
  SECTION("symmetry") {
    Tensor out = softmax_last(Tensor::from({2}, {0, 0}));
    REQUIRE(out.value()[0] == Approx(0.5));
    REQUIRE(out.value()[1] == Approx(0.5));
  }
  SECTION("max subtraction prevents overflow") {
    Tensor out = softmax_last(Tensor::from({3}, {1000, 1000, 1000}));
    for (double v : out.value()) REQUIRE(v == Approx(1.0 / 3.0));
  }
  SECTION("direct evaluation") {
    Tensor out = softmax_last(Tensor::from({3}, {1, 2, 3}));
    REQUIRE(out.value()[0] == Approx(0.09003).margin(1e-5));
    REQUIRE(out.value()[1] == Approx(0.24473).margin(1e-5));
    REQUIRE(out.value()[2] == Approx(0.66524).margin(1e-5));
  }
  SECTION("rows sum to one within 1e-9 on random inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t rows = 1 + rng.integer(4), cols = 1 + rng.integer(7);
      std::vector<double> data(rows * cols);
      for (double& v : data) v = rng.normal(0, 5);
      Tensor out = softmax_last(Tensor::from({rows, cols}, data));
      for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double v = out.value()[r * cols + c];
          REQUIRE(v >= 0.0);
          REQUIRE(v <= 1.0);
          sum += v;
        }
        REQUIRE(std::fabs(sum - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("layer_norm values") {
  Tensor gamma = Tensor::from({4}, {1, 1, 1, 1});
  Tensor beta = Tensor::from({4}, {0, 0, 0, 0});
  SECTION("constant row normalizes to zero") {
    Tensor out = layer_norm(Tensor::from({1, 4}, {5, 5, 5, 5}), gamma, beta);
    for (double v : out.value()) REQUIRE(v == Approx(0.0).margin(1e-12));
  }
  SECTION("symmetric pair has unit variance") {
    Tensor g2 = Tensor::from({2}, {1, 1});
    Tensor b2 = Tensor::from({2}, {0, 0});
    Tensor out = layer_norm(Tensor::from({1, 2}, {1, -1}), g2, b2);
    REQUIRE(out.value()[0] == Approx(1.0).margin(1e-4));
    REQUIRE(out.value()[1] == Approx(-1.0).margin(1e-4));
  }
  SECTION("gradient vs finite differences") {
    ParamStore store;
    Rng rng(17);
    std::vector<double> xv(16), wv(16);
    for (double& v : xv) v = rng.normal(0, 1);
    for (double& v : wv) v = rng.normal(0, 1);
    Tensor x = store.add("x", Tensor::from({2, 8}, xv, true));
    Tensor g = store.add("g", ones_param({8}));
    Tensor b = store.add("b", zeros_param({8}));
    Tensor w = Tensor::from({2, 8}, wv);
    auto result = check_gradients(
        "layer_norm", store, [&]() { return sum_all(mul(layer_norm(x, g, b), w)); }, 1e-6);
    REQUIRE(result.max_rel_err < 1e-5);
  }
}

TEST_CASE("gelu values") {
  REQUIRE(gelu(Tensor::scalar(0)).item() == Approx(0.0).margin(1e-12));
  REQUIRE(gelu(Tensor::scalar(10)).item() == Approx(10.0).margin(1e-6));
  REQUIRE(gelu(Tensor::scalar(-0.5)).item() == Approx(-0.1543).margin(1e-3));
  SECTION("monotone nondecreasing right of the dip") {
    // x * Phi(x) has its minimum near x = -0.75 and decreases left of it.
    double prev = gelu(Tensor::scalar(-0.7)).item();
    for (double x = -0.6; x < 6.0; x += 0.1) {
      const double y = gelu(Tensor::scalar(x)).item();
      REQUIRE(y >= prev - 1e-12);
      prev = y;
    }
  }
}

TEST_CASE("mean_pool_time") {
  SECTION("single row is identity") {
    Tensor out = mean_pool_time(Tensor::from({1, 3}, {4, 5, 6}));
    REQUIRE(out.value() == std::vector<double>{4, 5, 6});
  }
  SECTION("arithmetic") {
    Tensor out = mean_pool_time(Tensor::from({2, 2}, {1, 3, 3, 1}));
    REQUIRE(out.value() == std::vector<double>{2, 2});
  }
  SECTION("gradient distributes 1/L") {
    Tensor x = Tensor::from({4, 3}, std::vector<double>(12, 1.0), true);
    backward(sum_all(mean_pool_time(x)));
    for (double g : x.grad()) REQUIRE(g == Approx(0.25));
  }
  SECTION("empty sequence rejected") {
    REQUIRE_THROWS_AS(mean_pool_time(Tensor::zeros({0, 3})), ContractError);
  }
}

TEST_CASE("backward contract") {
  SECTION("sum of parameter gives ones") {
    Tensor p = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    backward(sum_all(p));
    for (double g : p.grad()) REQUIRE(g == 1.0);
  }
  SECTION("parameter used twice accumulates") {
    Tensor p = Tensor::scalar(3.0);
    Tensor q = Tensor::from({1}, {3.0}, true);
    (void)p;
    backward(add(sum_all(q), sum_all(q)));
    REQUIRE(q.grad()[0] == 2.0);
  }
  SECTION("f(p)+f(p) has exactly twice the gradient of f(p)") {
    auto grads = [](bool doubled) {
      Tensor p = Tensor::from({3}, {0.3, -0.2, 0.9}, true);
      Tensor f = sum_all(gelu(p));
      backward(doubled ? add(f, sum_all(gelu(p))) : f);
      return p.grad();
    };
    auto g1 = grads(false);
    auto g2 = grads(true);
    for (std::size_t i = 0; i < g1.size(); ++i) REQUIRE(g2[i] == Approx(2.0 * g1[i]).epsilon(0));
  }
  SECTION("non-scalar loss rejected") {
    Tensor p = Tensor::from({2}, {1, 2}, true);
    REQUIRE_THROWS_AS(backward(gelu(p)), ContractError);
  }
  SECTION("gradients accumulate across backward calls until zeroed") {
    Tensor p = Tensor::from({1}, {2.0}, true);
    backward(sum_all(p));
    backward(sum_all(p));
    REQUIRE(p.grad()[0] == 2.0);
    p.zero_grad();
    REQUIRE(p.grad()[0] == 0.0);
  }
}

TEST_CASE("every primitive passes finite-difference checks at 1e-5") {
  for (const auto& r : primitive_gradchecks(123)) {
    INFO(r.name << " max_rel_err=" << r.max_rel_err);
    CHECK(r.max_rel_err < 1e-5);
  }
}

TEST_CASE("identical seeds give bit-identical values and gradients") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> xv(24), wv(24);
    for (double& v : xv) v = rng.normal(0, 1);
    for (double& v : wv) v = rng.normal(0, 1);
    Tensor x = Tensor::from({4, 6}, xv, true);
    Tensor w = Tensor::from({4, 6}, wv);
    Tensor g = ones_param({6});
    Tensor b = zeros_param({6});
    Tensor loss = sum_all(mul(softmax_last(gelu(layer_norm(x, g, b))), w));
    backward(loss);
    return std::make_pair(loss.item(), x.grad());
  };
  auto [v1, g1] = run(99);
  auto [v2, g2] = run(99);
  REQUIRE(v1 == v2);
  REQUIRE(g1 == g2);
}

TEST_CASE("no-grad mode skips recording") {
  Tensor p = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  Tensor out = sum_all(gelu(p));
  REQUIRE_FALSE(out.needs_grad());
}
