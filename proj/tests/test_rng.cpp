#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "suq/parallel.hpp"
#include "suq/rng.hpp"

using suq::Rng;

TEST_CASE("same seed, same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("children do not depend on parent consumption") {
  Rng a(7), b(7);
  for (int i = 0; i < 13; ++i) b.next_u64();
  Rng ca = a.split("views").stream(3);
  Rng cb = b.split("views").stream(3);
  CHECK(ca.next_u64() == cb.next_u64());
  CHECK(a.split("x").next_u64() != a.split("y").next_u64());
  CHECK(a.stream(0).next_u64() != a.stream(1).next_u64());
}

TEST_CASE("uniform stays in the open unit interval and has the right mean") {
  Rng r(1);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("normal, gamma and beta moments") {
  Rng r(2);
  const int n = 200000;
  double s = 0, s2 = 0, g = 0, b = 0, b2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
    g += r.gamma(0.7);
    const double y = r.beta(2.5, 1.5);
    b += y;
    b2 += y * y;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.015);
  CHECK(std::abs(g / n - 0.7) < 0.015);
  const double mean = 2.5 / 4.0;
  const double var = 2.5 * 1.5 / (16.0 * 5.0);
  CHECK(std::abs(b / n - mean) < 0.003);
  CHECK(std::abs(b2 / n - mean * mean - var) < 0.003);
}

TEST_CASE("index is uniform and shuffle permutes") {
  Rng r(3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) counts[r.index(5)]++;
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
  std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7};
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>({0, 1, 2, 3, 4, 5, 6, 7}));
}

TEST_CASE("parallel_for visits every index once for any thread count") {
  for (int threads : {1, 3, 8}) {
    suq::set_num_threads(threads);
    std::vector<int> hits(1001, 0);
    suq::parallel_for(1001, [&](long i) { hits[i]++; });
    for (int h : hits) CHECK(h == 1);
  }
  suq::set_num_threads(1);
}
