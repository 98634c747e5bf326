#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "../support/oracles.hpp"
#include "headlamp/activations.hpp"

using namespace headlamp;

namespace {

std::vector<double> random_row(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> z(n);
  for (auto& v : z) v = scale * rng.normal();
  return z;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

void check_simplex(const SimplexVector& s) {
  CHECK(std::abs(sum(s.values) - 1.0) <= 1e-9);
  std::vector<std::size_t> positive;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    CHECK(s.values[i] >= 0.0);
    if (s.values[i] > 0.0) positive.push_back(i);
  }
  CHECK(positive == s.support);
}

}  // namespace

TEST_CASE("softmax examples") {
  auto a = softmax(std::vector<double>{0, 0});
  CHECK(a.values[0] == doctest::Approx(0.5).epsilon(1e-15));
  for (double c : {-1000.0, 0.0, 3.5, 1e4}) {
    auto b = softmax(std::vector<double>{c, c, c, c});
    for (double v : b.values) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  auto d = softmax(std::vector<double>{std::log(1.0), std::log(3.0)});
  CHECK(d.values[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(d.values[1] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK_THROWS_AS(softmax(std::vector<double>{}), ArgumentError);
}

TEST_CASE("softmax is strictly positive and a simplex point") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    auto s = softmax(random_row(rng, 1 + rng.below(20), 5.0));
    check_simplex(s);
    CHECK(s.support.size() == s.values.size());
  }
}

TEST_CASE("sparsemax examples") {
  auto a = sparsemax(std::vector<double>{0.5, 0.5});
  CHECK(a.values == std::vector<double>{0.5, 0.5});
  auto b = sparsemax(std::vector<double>{2, 0});
  CHECK(b.values == std::vector<double>{1, 0});
  CHECK(b.support == std::vector<std::size_t>{0});
  auto c = sparsemax(std::vector<double>{0.6, 0.4, -5});
  CHECK(c.values[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(c.values[1] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(c.values[2] == 0.0);
  CHECK_THROWS_AS(sparsemax(std::vector<double>{}), ArgumentError);
}

TEST_CASE("sparsemax matches the support-enumeration oracle") {
  Rng rng(2024);
  for (int i = 0; i < 500; ++i) {
    const auto z = random_row(rng, 2 + rng.below(7));
    const auto got = sparsemax(z);
    const auto want = oracle::simplex_projection(z);
    for (std::size_t k = 0; k < z.size(); ++k) REQUIRE(std::abs(got.values[k] - want[k]) <= 1e-8);
    check_simplex(got);
  }
}

TEST_CASE("sparsemax tie rule picks the smaller support") {
  // k = 2 gives 1 + 2*0 = 1, not > 1, so only the first entry stays.
  auto s = sparsemax(std::vector<double>{1, 0});
  CHECK(s.values == std::vector<double>{1, 0});
  auto t = sparsemax(std::vector<double>{1, 0, 0});
  CHECK(t.values == std::vector<double>{1, 0, 0});
}

TEST_CASE("sparsemax is exactly shift invariant") {
  Rng rng(5);
  for (int i = 0; i < 300; ++i) {
    // Dyadic inputs and integer shifts keep every subtraction exact.
    std::vector<double> z(2 + rng.below(7));
    for (auto& v : z) v = static_cast<double>(static_cast<int>(rng.below(64)) - 32) / 16.0;
    const double c = static_cast<double>(static_cast<int>(rng.below(200)) - 100);
    auto shifted = z;
    for (auto& v : shifted) v += c;
    CHECK(sparsemax(z).values == sparsemax(shifted).values);
  }
}

TEST_CASE("sparsemax is one-hot when the top entry leads by at least one") {
  Rng rng(9);
  for (int i = 0; i < 300; ++i) {
    auto z = random_row(rng, 2 + rng.below(10));
    const auto top = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    double second = -INFINITY;
    for (std::size_t k = 0; k < z.size(); ++k)
      if (k != top) second = std::max(second, z[k]);
    z[top] = second + 1.0 + rng.uniform();
    auto s = sparsemax(z);
    CHECK(s.support == std::vector<std::size_t>{top});
    CHECK(s.values[top] == 1.0);
  }
}

TEST_CASE("sparsemax outputs are simplex points with exact zeros allowed") {
  Rng rng(13);
  std::size_t zeros = 0;
  for (int i = 0; i < 300; ++i) {
    auto s = sparsemax(random_row(rng, 1 + rng.below(20), 3.0));
    check_simplex(s);
    zeros += std::count(s.values.begin(), s.values.end(), 0.0);
  }
  CHECK(zeros > 0);
}

TEST_CASE("sparsemax median support on dimension 50 is at most half") {
  Rng rng(50);
  std::vector<std::size_t> sizes;
  for (int i = 0; i < 1000; ++i) sizes.push_back(sparsemax(random_row(rng, 50)).support.size());
  std::nth_element(sizes.begin(), sizes.begin() + 500, sizes.end());
  const auto median = sizes[500];
  MESSAGE("median sparsemax support size over 1000 standard-normal rows of dim 50: " << median);
  CHECK(median <= 25);
}

TEST_CASE("sparsemax_vjp examples") {
  SimplexVector one_hot{{1, 0}, {0}};
  CHECK(sparsemax_vjp(one_hot, std::vector<double>{3.0, -2.0}) == std::vector<double>{0, 0});
  SimplexVector half{{0.5, 0.5}, {0, 1}};
  CHECK(sparsemax_vjp(half, std::vector<double>{1, 0}) == std::vector<double>{0.5, -0.5});
  CHECK_THROWS_AS(sparsemax_vjp(half, std::vector<double>{1}), ArgumentError);
}

TEST_CASE("sparsemax_vjp matches finite differences away from support boundaries") {
  Rng rng(21);
  int checked = 0;
  for (int trial = 0; trial < 400 && checked < 100; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    const auto z0 = random_row(rng, n);
    const auto w = random_row(rng, n);
    // Skip points where an entry sits within 1e-6 of the threshold.
    const auto s0 = sparsemax(z0);
    const auto& sorted_support = s0.support;
    double tau = 0.0;
    for (auto i : sorted_support) tau += z0[i];
    tau = (tau - 1.0) / static_cast<double>(sorted_support.size());
    bool near = false;
    for (double v : z0) near |= std::abs(v - tau) < 1e-6;
    if (near) continue;
    ++checked;
    auto f = [&](const Tensor& z) {
      const auto s = sparsemax(z.values());
      ValueAndGradient out;
      for (std::size_t i = 0; i < n; ++i) out.value += s.values[i] * w[i];
      out.gradient = Tensor({n}, sparsemax_vjp(s, w));
      return out;
    };
    CHECK(check_gradient(f, Tensor({n}, z0)) <= 1e-4);
  }
  CHECK(checked >= 50);
}

TEST_CASE("softmax_vjp matches finite differences") {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    const auto z0 = random_row(rng, n, 2.0);
    const auto w = random_row(rng, n);
    auto f = [&](const Tensor& z) {
      const auto s = softmax(z.values());
      ValueAndGradient out;
      for (std::size_t i = 0; i < n; ++i) out.value += s.values[i] * w[i];
      out.gradient = Tensor({n}, softmax_vjp(s.values, w));
      return out;
    };
    CHECK(check_gradient(f, Tensor({n}, z0)) <= 1e-4);
  }
}

TEST_CASE("attention_weights applies the activation per row") {
  auto soft = attention_weights(Tensor::matrix(1, 3, {0, 0, 0}), AttentionKind::Softmax);
  for (double v : soft.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  auto sparse = attention_weights(Tensor::matrix(2, 3, {2, 0, 0, 0.6, 0.4, -5}), AttentionKind::Sparsemax);
  CHECK(sparse.at(0, 0) == 1.0);
  CHECK(sparse.at(0, 1) == 0.0);
  CHECK(sparse.at(1, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(sparse.at(1, 2) == 0.0);
}
