#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cetnet/rng.hpp"
#include "cetnet/tensor.hpp"
#include "support/oracles.hpp"

using namespace cetnet;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, bool requires_grad = false) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  Tensor t(std::move(shape), std::move(v));
  if (requires_grad) t.set_requires_grad();
  return t;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
  Tensor eye({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor x({3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor y = matmul(eye, x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.at(i) == x.at(i));

  Tensor a({1, 1}, std::vector<double>{2});
  Tensor b({1, 1}, std::vector<double>{3});
  CHECK(matmul(a, b).value() == 6.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Tensor a({2, 3});
  Tensor b({4, 2});
  CHECK_THROWS_MATCHES(matmul(a, b), ShapeError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("[2x3]") &&
                           Catch::Matchers::ContainsSubstring("[4x2]")));
}

TEST_CASE("matmul matches naive product on random input") {
  Rng rng(7);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  auto expected = oracles::naive_matmul(a.values(), b.values(), 4, 5, 3);
  Tensor got = matmul(a, b);
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(got.at(i) == Catch::Approx(expected[i]).margin(1e-12));
}

TEST_CASE("matmul gradient matches central differences") {
  Rng rng(11);
  Tensor a = random_tensor({4, 5}, rng, true);
  Tensor b = random_tensor({5, 3}, rng, true);
  auto result = oracles::finite_difference_check(
      {a, b}, [&] { return sum(matmul(a, b)); });
  CHECK(result.max_rel_err < 1e-6);
}

TEST_CASE("dilated_conv1d zero weights give zero output") {
  Rng rng(3);
  Tensor x = random_tensor({6, 2}, rng);
  Tensor w({3, 2, 2});
  Tensor b({2});
  Tensor y = dilated_conv1d(x, w, b, 1);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.at(i) == 0.0);
}

TEST_CASE("dilated_conv1d center-tap identity kernel is the identity map") {
  Rng rng(4);
  const std::size_t c = 3;
  Tensor x = random_tensor({10, c}, rng);
  Tensor w({3, c, c});
  for (std::size_t i = 0; i < c; ++i) w.mutable_data()[(1 * c + i) * c + i] = 1.0;
  Tensor b({c});
  for (long dilation : {1L, 2L, 4L, 8L}) {
    Tensor y = dilated_conv1d(x, w, b, dilation);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.at(i) == x.at(i));
  }
}

TEST_CASE("dilated_conv1d matches direct summation oracle") {
  Rng rng(5);
  Tensor x = random_tensor({8, 1}, rng);
  Tensor w = random_tensor({3, 1, 1}, rng);
  Tensor b = random_tensor({1}, rng);
  auto expected = oracles::naive_dilated_conv(x.values(), w.values(), b.values(), 8, 1, 1, 2);
  Tensor y = dilated_conv1d(x, w, b, 2);
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(y.at(i) == Catch::Approx(expected[i]).margin(1e-12));
}

TEST_CASE("dilated_conv1d parameter validation") {
  Tensor x({4, 2});
  Tensor w({3, 2, 2});
  Tensor b({2});
  CHECK_THROWS_AS(dilated_conv1d(x, w, b, 0), ConfigError);
  Tensor w5({5, 2, 2});
  CHECK_THROWS_AS(dilated_conv1d(x, w5, b, 1), ConfigError);
}

TEST_CASE("dilated_conv1d gradients match central differences") {
  Rng rng(6);
  Tensor x = random_tensor({7, 2}, rng, true);
  Tensor w = random_tensor({3, 2, 3}, rng, true);
  Tensor b = random_tensor({3}, rng, true);
  auto result = oracles::finite_difference_check(
      {x, w, b}, [&] { return sum(dilated_conv1d(x, w, b, 2)); });
  CHECK(result.max_rel_err < 1e-6);
}

TEST_CASE("relu forward values") {
  Tensor x({1, 3}, std::vector<double>{-1, 0, 2});
  Tensor y = relu(x);
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == 0.0);
  CHECK(y.at(2) == 2.0);
}

TEST_CASE("softmax_rows of zeros is uniform") {
  Tensor x({1, 3});
  Tensor y = softmax_rows(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y.at(i) == Catch::Approx(1.0 / 3).margin(1e-15));
}

TEST_CASE("softmax_rows is stable for large inputs") {
  Tensor x({1, 2}, std::vector<double>{1000.0, 1000.0});
  Tensor y = softmax_rows(x);
  CHECK(y.at(0) == Catch::Approx(0.5).margin(1e-15));
  CHECK(y.at(1) == Catch::Approx(0.5).margin(1e-15));
  CHECK(all_finite(y));
}

TEST_CASE("softmax_rows rows sum to one and stay within [0,1]") {
  Rng rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = random_tensor({5, 7}, rng);
    Tensor y = softmax_rows(x);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        const double v = y(i, j);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        s += v;
      }
      CHECK(s == Catch::Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("log_softmax_rows equals log of softmax") {
  Rng rng(10);
  Tensor x = random_tensor({4, 5}, rng);
  Tensor a = log_softmax_rows(x);
  Tensor b = softmax_rows(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(a.at(i) == Catch::Approx(std::log(b.at(i))).margin(1e-12));
}

TEST_CASE("elementwise op gradients match central differences") {
  Rng rng(12);
  Tensor x = random_tensor({4, 4}, rng, true);
  Tensor y = random_tensor({4, 4}, rng, true);

  SECTION("add") {
    auto r = oracles::finite_difference_check({x, y}, [&] { return sum(add(x, y)); });
    CHECK(r.max_rel_err < 1e-6);
  }
  SECTION("sub") {
    auto r = oracles::finite_difference_check({x, y}, [&] { return sum(sub(x, y)); });
    CHECK(r.max_rel_err < 1e-6);
  }
  SECTION("scale") {
    auto r = oracles::finite_difference_check({x}, [&] { return sum(scale(x, -2.5)); });
    CHECK(r.max_rel_err < 1e-6);
  }
  SECTION("relu away from the kink") {
    auto r = oracles::finite_difference_check({x}, [&] { return sum(relu(x)); });
    CHECK(r.max_rel_err < 1e-4);
  }
  SECTION("transpose") {
    auto r = oracles::finite_difference_check(
        {x, y}, [&] { return sum(matmul(transpose(x), y)); });
    CHECK(r.max_rel_err < 1e-6);
  }
  SECTION("softmax composed with matmul") {
    auto r = oracles::finite_difference_check(
        {x, y}, [&] { return sum(matmul(softmax_rows(x), y)); });
    CHECK(r.max_rel_err < 1e-4);
  }
  SECTION("log_softmax weighted by a constant") {
    Rng rng2(13);
    Tensor weights = random_tensor({4, 4}, rng2);
    auto r = oracles::finite_difference_check({x}, [&] {
      // sum over entries of lp .* weights, built from column slices so the
      // whole expression stays on the tape.
      Tensor lp = log_softmax_rows(x);
      Tensor total;
      for (std::size_t j = 0; j < 4; ++j) {
        Tensor col = slice_cols(lp, j, j + 1);
        Tensor wcol({4, 1}, std::vector<double>{weights.at(j), weights.at(4 + j),
                                                weights.at(8 + j), weights.at(12 + j)});
        Tensor term = matmul(transpose(col), wcol);
        total = (j == 0) ? term : add(total, term);
      }
      return total;
    });
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("add_bias broadcasts and propagates gradients") {
  Rng rng(14);
  Tensor x = random_tensor({5, 3}, rng, true);
  Tensor b = random_tensor({3}, rng, true);
  Tensor y = add_bias(x, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(y(i, j) == Catch::Approx(x(i, j) + b.at(j)).margin(1e-15));
  auto r = oracles::finite_difference_check({x, b}, [&] { return sum(add_bias(x, b)); });
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("concat_channels and slice_cols round trip with gradients") {
  Rng rng(15);
  Tensor a = random_tensor({4, 2}, rng, true);
  Tensor b = random_tensor({4, 3}, rng, true);
  Tensor cat = concat_channels(a, b);
  REQUIRE(cat.cols() == 5);
  Tensor back_a = slice_cols(cat, 0, 2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(back_a.at(i) == a.at(i));

  auto r = oracles::finite_difference_check({a, b}, [&] {
    Tensor cat2 = concat_channels(a, b);
    return sum(slice_cols(cat2, 1, 4));
  });
  CHECK(r.max_rel_err < 1e-6);

  Tensor c({3, 2});
  CHECK_THROWS_AS(concat_channels(a, c), ShapeError);
}

TEST_CASE("instance_norm basic properties") {
  Tensor gamma({2}, std::vector<double>{1, 1});
  Tensor beta({2});

  SECTION("constant channel maps to zeros") {
    Tensor x({4, 2}, std::vector<double>{3, -1, 3, -1, 3, -1, 3, -1});
    Tensor y = instance_norm(x, gamma, beta);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.at(i) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("symmetric channel maps to approximately +-1") {
    const double a = 2.0;
    Tensor x({2, 2}, std::vector<double>{-a, -a, a, a});
    Tensor y = instance_norm(x, gamma, beta);
    CHECK(y.at(0) == Catch::Approx(-1.0).margin(1e-5));
    CHECK(y.at(2) == Catch::Approx(1.0).margin(1e-5));
  }
  SECTION("moments after normalization") {
    Rng rng(16);
    Tensor x = random_tensor({16, 4}, rng);
    Tensor g4({4}, std::vector<double>{1, 1, 1, 1});
    Tensor b4({4});
    Tensor y = instance_norm(x, g4, b4);
    for (std::size_t ch = 0; ch < 4; ++ch) {
      double mean = 0.0, var = 0.0;
      for (std::size_t t = 0; t < 16; ++t) mean += y(t, ch);
      mean /= 16.0;
      for (std::size_t t = 0; t < 16; ++t) var += (y(t, ch) - mean) * (y(t, ch) - mean);
      var /= 16.0;
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-3);
    }
  }
  SECTION("empty input rejected") {
    // Zero-size dimensions cannot be constructed at all.
    CHECK_THROWS_AS(Tensor({0, 2}), ShapeError);
  }
}

TEST_CASE("layer_norm basic properties") {
  Tensor gamma({3}, std::vector<double>{1, 1, 1});
  Tensor beta({3});

  SECTION("constant frame maps to zeros") {
    Tensor x({2, 3}, std::vector<double>{5, 5, 5, -2, -2, -2});
    Tensor y = layer_norm(x, gamma, beta);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.at(i) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("symmetric frame maps to approximately +-1") {
    Tensor g2({2}, std::vector<double>{1, 1});
    Tensor b2({2});
    Tensor x({1, 2}, std::vector<double>{-3.0, 3.0});
    Tensor y = layer_norm(x, g2, b2);
    CHECK(y.at(0) == Catch::Approx(-1.0).margin(1e-5));
    CHECK(y.at(1) == Catch::Approx(1.0).margin(1e-5));
  }
  SECTION("per-frame moments") {
    Rng rng(17);
    Tensor x = random_tensor({6, 8}, rng);
    Tensor g8 = Tensor::full({8}, 1.0);
    Tensor b8({8});
    Tensor y = layer_norm(x, g8, b8);
    for (std::size_t t = 0; t < 6; ++t) {
      double mean = 0.0, var = 0.0;
      for (std::size_t ch = 0; ch < 8; ++ch) mean += y(t, ch);
      mean /= 8.0;
      for (std::size_t ch = 0; ch < 8; ++ch) var += (y(t, ch) - mean) * (y(t, ch) - mean);
      var /= 8.0;
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-3);
    }
  }
}

TEST_CASE("normalization gradients match central differences") {
  Rng rng(18);
  Tensor x = random_tensor({6, 3}, rng, true);
  Tensor gamma = random_tensor({3}, rng, true);
  Tensor beta = random_tensor({3}, rng, true);
  Tensor mixer = random_tensor({3, 2}, rng);

  SECTION("instance_norm") {
    auto r = oracles::finite_difference_check({x, gamma, beta}, [&] {
      return sum(matmul(instance_norm(x, gamma, beta), mixer));
    });
    CHECK(r.max_rel_err < 1e-4);
  }
  SECTION("layer_norm") {
    auto r = oracles::finite_difference_check({x, gamma, beta}, [&] {
      return sum(matmul(layer_norm(x, gamma, beta), mixer));
    });
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("backward fills gradients for simple roots") {
  SECTION("sum of tensor gives all-ones gradient") {
    Tensor x({2, 3});
    x.set_requires_grad();
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor loss = sum(x);
      tape.backward(loss);
    }
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SECTION("sum of relu at positive inputs gives all-ones gradient") {
    Tensor x({2, 2}, std::vector<double>{1, 2, 3, 4});
    x.set_requires_grad();
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(sum(relu(x)));
    }
    for (double g : x.grad()) CHECK(g == 1.0);
  }
}

TEST_CASE("backward contract errors") {
  Tensor x({2, 2});
  x.set_requires_grad();
  Tape tape;
  TapeScope scope(tape);
  Tensor y = relu(x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
  Tape empty;
  CHECK_THROWS_AS(empty.backward(Tensor::scalar(1.0)), Error);
}

TEST_CASE("repeated backward accumulates parameter gradients") {
  Tensor x({2, 2}, std::vector<double>{1, 2, 3, 4});
  x.set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum(relu(matmul(x, x)));
    tape.backward(loss);
    std::vector<double> once = x.grad();
    tape.backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i)
      CHECK(x.grad()[i] == Catch::Approx(2.0 * once[i]).margin(1e-12));
  }
}

TEST_CASE("no recording happens without an active tape") {
  Tensor x({2, 2}, std::vector<double>{1, 2, 3, 4});
  x.set_requires_grad();
  Tensor y = relu(x);
  CHECK_FALSE(Tape::active());
  CHECK(y.needs_grad() == false);
}

TEST_CASE("forward passes are deterministic") {
  Rng rng1(42), rng2(42);
  Tensor a1 = random_tensor({8, 8}, rng1);
  Tensor a2 = random_tensor({8, 8}, rng2);
  Tensor g = Tensor::full({8}, 1.0);
  Tensor b({8});
  Tensor y1 = softmax_rows(matmul(instance_norm(a1, g, b), transpose(a1)));
  Tensor y2 = softmax_rows(matmul(instance_norm(a2, g, b), transpose(a2)));
  REQUIRE(y1.size() == y2.size());
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1.at(i) == y2.at(i));
}
