#include <doctest.h>

#include <algorithm>
#include <set>

#include "tabor/rng.hpp"

using tabor::Rng;

TEST_SUITE("rng") {
  TEST_CASE("same seed reproduces the sequence exactly") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  }

  TEST_CASE("different seeds diverge") {
    Rng a(1), b(2);
    bool differ = false;
    for (int i = 0; i < 8 && !differ; ++i) differ = a.next_u64() != b.next_u64();
    CHECK(differ);
  }

  TEST_CASE("next_double stays in [0,1) and is roughly centered") {
    Rng rng(7);
    double sum = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      double x = rng.next_double();
      REQUIRE(x >= 0.0);
      REQUIRE(x < 1.0);
      sum += x;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.03));
  }

  TEST_CASE("uniform respects its bounds") {
    Rng rng(9);
    for (int i = 0; i < 1000; ++i) {
      double x = rng.uniform(-3.0, 5.0);
      REQUIRE(x >= -3.0);
      REQUIRE(x < 5.0);
    }
  }

  TEST_CASE("uniform_int is inclusive on both ends") {
    Rng rng(11);
    std::set<int> seen;
    for (int i = 0; i < 2000; ++i) {
      int x = rng.uniform_int(0, 3);
      REQUIRE(x >= 0);
      REQUIRE(x <= 3);
      seen.insert(x);
    }
    CHECK(seen.size() == 4);
    CHECK_THROWS_AS(rng.uniform_int(2, 1), tabor::Error);
  }

  TEST_CASE("below never reaches its bound") {
    Rng rng(13);
    for (int i = 0; i < 2000; ++i) REQUIRE(rng.below(17) < 17);
  }

  TEST_CASE("shuffle permutes without losing elements") {
    Rng rng(5);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<size_t>(i)] = i;
    std::vector<int> orig = v;
    rng.shuffle(v);
    CHECK(v != orig);  // astronomically unlikely to be identity
    std::sort(v.begin(), v.end());
    CHECK(v == orig);
  }

  TEST_CASE("sample draws k distinct values from the range") {
    Rng rng(21);
    for (int round = 0; round < 20; ++round) {
      std::vector<int> s = rng.sample(30, 12);
      REQUIRE(s.size() == 12);
      std::set<int> uniq(s.begin(), s.end());
      REQUIRE(uniq.size() == 12);
      for (int x : s) {
        REQUIRE(x >= 0);
        REQUIRE(x < 30);
      }
    }
    std::vector<int> all = rng.sample(10, 10);
    std::sort(all.begin(), all.end());
    for (int i = 0; i < 10; ++i) CHECK(all[static_cast<size_t>(i)] == i);
    CHECK_THROWS_AS(rng.sample(5, 6), tabor::Error);
  }

  TEST_CASE("derive_seed separates streams deterministically") {
    CHECK(tabor::derive_seed(7, 0) == tabor::derive_seed(7, 0));
    CHECK(tabor::derive_seed(7, 0) != tabor::derive_seed(7, 1));
    CHECK(tabor::derive_seed(7, 0) != tabor::derive_seed(8, 0));
  }
}
