#include <doctest.h>

#include <cmath>
#include <vector>

#include "moue/numerics.hpp"
#include "moue/rng.hpp"

using namespace moue;

TEST_CASE("softmax_masked basic values") {
  Vector logits(2);
  logits << 0.0, 0.0;
  Vector p = softmax_masked(logits, {true, true});
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));

  Vector l3(3);
  l3 << 5.0, 5.0, 5.0;
  p = softmax_masked(l3, {true, false, true});
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[1] == 0.0);
  CHECK(p[2] == doctest::Approx(0.5).epsilon(1e-15));

  Vector l2(2);
  l2 << std::log(3.0), 0.0;
  p = softmax_masked(l2, {true, true});
  CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("softmax_masked rejects an all-masked input") {
  Vector logits(3);
  logits << 1.0, 2.0, 3.0;
  CHECK_THROWS_WITH_AS(softmax_masked(logits, {false, false, false}), "empty reachable set",
                       std::invalid_argument);
  Vector all_inf = Vector::Constant(3, kNegInf);
  CHECK_THROWS_AS(softmax_neg_inf(all_inf), std::invalid_argument);
}

TEST_CASE("softmax_masked sums to one on random masked vectors") {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + rng.next_below(24);
    Vector logits(n);
    std::vector<bool> mask(static_cast<std::size_t>(n));
    bool any = false;
    for (int i = 0; i < n; ++i) {
      logits[i] = 20.0 * (rng.next_double() - 0.5);
      mask[static_cast<std::size_t>(i)] = rng.next_below(3) != 0;
      any = any || mask[static_cast<std::size_t>(i)];
    }
    if (!any) mask[0] = true;
    const Vector p = softmax_masked(logits, mask);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    for (int i = 0; i < n; ++i) {
      if (mask[static_cast<std::size_t>(i)]) {
        CHECK(p[i] > 0.0);
      } else {
        CHECK(p[i] == 0.0);
      }
    }
  }
}

TEST_CASE("top_k_select ordering, ties and sentinels") {
  Vector s(3);
  s << 1.0, 3.0, 2.0;
  CHECK(top_k_select(s, 2) == std::vector<int>{1, 2});

  Vector ties(3);
  ties << 7.0, 7.0, 7.0;
  CHECK(top_k_select(ties, 2) == std::vector<int>{0, 1});

  Vector with_inf(4);
  with_inf << kNegInf, 4.0, kNegInf, 9.0;
  CHECK(top_k_select(with_inf, 2) == std::vector<int>{3, 1});

  CHECK_THROWS_WITH_AS(top_k_select(with_inf, 3), "insufficient reachable experts",
                       std::invalid_argument);
}

TEST_CASE("top_k_select is deterministic on repeated calls") {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + rng.next_below(16);
    Vector s(n);
    for (int i = 0; i < n; ++i) s[i] = rng.next_below(5);  // force ties
    const int k = 1 + rng.next_below(n);
    CHECK(top_k_select(s, k) == top_k_select(s, k));
  }
}

TEST_CASE("log_binomial matches exact binomials") {
  CHECK(log_binomial(4, 2) == doctest::Approx(std::log(6.0)).epsilon(1e-14));
  CHECK(log_binomial(17, 0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(log_binomial(12, 2) == doctest::Approx(std::log(66.0)).epsilon(1e-14));
  CHECK_THROWS_WITH_AS(log_binomial(3, 4), "invalid binomial", std::invalid_argument);

  // Pascal's triangle is the independent oracle.
  std::vector<std::vector<double>> pascal(31);
  for (int n = 0; n <= 30; ++n) {
    pascal[static_cast<std::size_t>(n)].resize(static_cast<std::size_t>(n) + 1, 1.0);
    for (int k = 1; k < n; ++k) {
      pascal[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)] =
          pascal[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(k - 1)] +
          pascal[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(k)];
    }
    for (int k = 0; k <= n; ++k) {
      const double exact = pascal[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)];
      CHECK(std::abs(std::exp(log_binomial(n, k)) - exact) < 0.5);
    }
  }
}

TEST_CASE("SplitMix64 streams are reproducible") {
  SplitMix64 a(123);
  SplitMix64 b(123);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
  // Documented first outputs of seed 0 (pins the algorithm itself).
  SplitMix64 zero(0);
  CHECK(zero.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(zero.next_u64() == 0x6e789e6aa1b965f4ULL);
}
