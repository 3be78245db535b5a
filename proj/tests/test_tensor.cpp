#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "catch_amalgamated.hpp"
#include "mcan/tensor.hpp"
#include "support/checkgrad.hpp"
#include "support/oracles.hpp"

using namespace mcan;

using testsupport::check_grads;
using testsupport::random_tensor;

TEST_CASE("matmul matches triple-loop reference") {
  std::mt19937_64 rng(11);
  for (auto [m, k, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1},
                         {3, 4, 5},
                         {7, 2, 7},
                         {5, 8, 1}}) {
    Tensor a = random_tensor(rng, m, k, false);
    Tensor b = random_tensor(rng, k, n, false);
    auto ref = oracle::matmul(a.data(), b.data(), m, k, n);
    Tensor c = matmul(a, b);
    REQUIRE(oracle::max_abs_diff(c.data(), ref) < 1e-13);
  }
}

TEST_CASE("softmax matches extended-precision reference") {
  std::mt19937_64 rng(12);
  Tensor x = Tensor::from({4, 6}, oracle::random_vec(rng, 24, -8.0, 8.0));
  auto ref = oracle::softmax_rows(x.data(), 4, 6);
  REQUIRE(oracle::max_abs_diff(softmax_rows(x).data(), ref) < 1e-14);

  SECTION("rows sum to one") {
    Tensor y = softmax_rows(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) s += y.at(i, j);
      REQUIRE(std::fabs(s - 1.0) < 1e-14);
    }
  }
}

TEST_CASE("masked softmax zeroes masked keys and renormalizes") {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor(rng, 3, 5, false);
  Mask keep = {1, 0, 1, 1, 0};
  Tensor y = masked_softmax_rows(x, keep);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(y.at(i, 1) == 0.0);
    REQUIRE(y.at(i, 4) == 0.0);
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += y.at(i, j);
    REQUIRE(std::fabs(s - 1.0) < 1e-14);
  }

  SECTION("masked keys do not influence kept probabilities") {
    Tensor x2 = x.detached();
    x2.mutable_data()[1] = 40.0;  // huge logit on a masked key
    x2.mutable_data()[4] = -40.0;
    Tensor y2 = masked_softmax_rows(x2, keep);
    for (std::size_t j = 0; j < 5; ++j) REQUIRE(std::fabs(y2.at(0, j) - y.at(0, j)) < 1e-15);
  }

  SECTION("an all-masked mask is rejected") {
    REQUIRE_THROWS_AS(masked_softmax_rows(x, Mask{0, 0, 0, 0, 0}), ValueError);
  }
}

TEST_CASE("layer norm standardizes rows") {
  std::mt19937_64 rng(14);
  Tensor x = random_tensor(rng, 5, 7, false);
  Tensor gamma = Tensor::full({1, 7}, 1.0);
  Tensor beta = Tensor::zeros({1, 7});
  Tensor y = layer_norm(x, gamma, beta);
  for (std::size_t i = 0; i < 5; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 7; ++j) mean += y.at(i, j);
    mean /= 7.0;
    for (std::size_t j = 0; j < 7; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= 7.0;
    REQUIRE(std::fabs(mean) < 1e-12);
    REQUIRE(std::fabs(var - 1.0) < 1e-4);  // eps in the denominator skews variance slightly
  }
}

TEST_CASE("elementwise and linear op gradients match finite differences") {
  std::mt19937_64 rng(21);

  SECTION("add / sub / mul / scale") {
    Tensor a = random_tensor(rng, 3, 4);
    Tensor b = random_tensor(rng, 3, 4);
    check_grads({a, b}, [&]() { return add(a, b); }, rng);
    check_grads({a, b}, [&]() { return sub(a, b); }, rng);
    check_grads({a, b}, [&]() { return mul(a, b); }, rng);
    check_grads({a}, [&]() { return scale(a, -1.7); }, rng);
  }

  SECTION("add_rowvec") {
    Tensor x = random_tensor(rng, 4, 3);
    Tensor b = random_tensor(rng, 1, 3);
    check_grads({x, b}, [&]() { return add_rowvec(x, b); }, rng);
  }

  SECTION("matmul") {
    Tensor a = random_tensor(rng, 3, 5);
    Tensor b = random_tensor(rng, 5, 2);
    check_grads({a, b}, [&]() { return matmul(a, b); }, rng);
  }

  SECTION("transpose") {
    Tensor a = random_tensor(rng, 3, 5);
    check_grads({a}, [&]() { return transpose(a); }, rng);
  }

  SECTION("chained product keeps both paths") {
    Tensor a = random_tensor(rng, 2, 3);
    Tensor b = random_tensor(rng, 3, 3);
    check_grads({a, b}, [&]() { return matmul(matmul(a, b), transpose(a)); }, rng);
  }
}

TEST_CASE("nonlinearity gradients match finite differences") {
  std::mt19937_64 rng(22);
  Tensor x = random_tensor(rng, 3, 4);
  check_grads({x}, [&]() { return sigmoid(x); }, rng);
  check_grads({x}, [&]() { return tanh_act(x); }, rng);
  check_grads({x}, [&]() { return softmax_rows(x); }, rng);

  Mask keep = {1, 0, 1, 1};
  check_grads({x}, [&]() { return masked_softmax_rows(x, keep); }, rng);
}

TEST_CASE("layer norm gradients match finite differences") {
  std::mt19937_64 rng(23);
  Tensor x = random_tensor(rng, 3, 6);
  Tensor gamma = Tensor::from({1, 6}, oracle::random_vec(rng, 6, 0.5, 1.5), true);
  Tensor beta = random_tensor(rng, 1, 6);
  check_grads({x, gamma, beta}, [&]() { return layer_norm(x, gamma, beta); }, rng);
}

TEST_CASE("slicing and concatenation gradients match finite differences") {
  std::mt19937_64 rng(24);
  Tensor a = random_tensor(rng, 3, 6);
  Tensor b = random_tensor(rng, 2, 6);
  Tensor c = random_tensor(rng, 3, 2);
  check_grads({a}, [&]() { return slice_cols(a, 1, 4); }, rng);
  check_grads({a, b}, [&]() { return concat_rows({a, b}); }, rng);
  check_grads({a, c}, [&]() { return concat_cols({a, c}); }, rng);
}

TEST_CASE("gather, scatter and masking gradients match finite differences") {
  std::mt19937_64 rng(25);
  Tensor a = random_tensor(rng, 5, 3);
  std::vector<std::size_t> idx = {4, 0, 2};
  check_grads({a}, [&]() { return gather_rows(a, idx); }, rng);

  Tensor packed = random_tensor(rng, 3, 4);
  check_grads({packed}, [&]() { return scatter_rows(packed, idx, 6); }, rng);

  Mask keep = {1, 0, 1, 1, 0};
  check_grads({a}, [&]() { return mask_rows(a, keep); }, rng);
  check_grads({a}, [&]() { return masked_mean_rows(a, keep); }, rng);
}

TEST_CASE("reduction gradients match finite differences") {
  std::mt19937_64 rng(26);
  Tensor a = random_tensor(rng, 4, 3);
  Tensor r1 = random_tensor(rng, 1, 5);
  Tensor r2 = random_tensor(rng, 1, 5);
  check_grads({a}, [&]() { return sum_all(a); }, rng);
  check_grads({a}, [&]() { return mean_all(a); }, rng);
  check_grads({r1, r2}, [&]() { return dot_rows(r1, r2); }, rng);
}

TEST_CASE("gather followed by scatter restores masked rows exactly") {
  std::mt19937_64 rng(27);
  Tensor a = random_tensor(rng, 6, 3, false);
  std::vector<std::size_t> idx = {0, 2, 5};
  Tensor back = scatter_rows(gather_rows(a, idx), idx, 6);
  for (auto i : idx)
    for (std::size_t j = 0; j < 3; ++j) REQUIRE(back.at(i, j) == a.at(i, j));
  for (std::size_t j = 0; j < 3; ++j) {
    REQUIRE(back.at(1, j) == 0.0);
    REQUIRE(back.at(3, j) == 0.0);
    REQUIRE(back.at(4, j) == 0.0);
  }
}

TEST_CASE("backward rejects bad graphs") {
  std::mt19937_64 rng(31);
  Tensor a = random_tensor(rng, 2, 2);

  SECTION("non-scalar root") { REQUIRE_THROWS_AS(backward(add(a, a)), ShapeError); }

  SECTION("running a consumed graph again") {
    Tensor loss = sum_all(mul(a, a));
    backward(loss);
    REQUIRE_THROWS_AS(backward(loss), ValueError);
  }

  SECTION("reusing a consumed interior node") {
    Tensor h = mul(a, a);
    backward(sum_all(h));
    REQUIRE_THROWS_AS(backward(sum_all(h)), ValueError);
  }

  SECTION("gradients accumulate across fan-out") {
    Tensor x = Tensor::from({1, 1}, {3.0}, true);
    Tensor y = add(mul(x, x), x);  // x^2 + x, d/dx = 2x + 1
    backward(sum_all(y));
    REQUIRE(std::fabs(x.grad()[0] - 7.0) < 1e-12);
  }
}

TEST_CASE("non-finite results are rejected") {
  Tensor big = Tensor::from({1, 2}, {1e308, 1e308});
  REQUIRE_THROWS_AS(add(big, big), NumericError);
  REQUIRE_THROWS_AS(scale(big, 10.0), NumericError);
}

TEST_CASE("shape errors carry both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 3});
  REQUIRE_THROWS_AS(add(a, b), ShapeError);
  REQUIRE_THROWS_AS(matmul(a, a), ShapeError);
  REQUIRE_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("(2,3)"));
}
