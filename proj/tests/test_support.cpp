#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <numeric>
#include <vector>

#include "railpipe/parallel.hpp"
#include "railpipe/rng.hpp"

using namespace railpipe;

TEST_CASE("rng: identical seeds give identical streams") {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) {
    REQUIRE(a.next() == b.next());
  }
  Rng c = Rng::for_stream(5, 17);
  Rng d = Rng::for_stream(5, 17);
  bool all_equal = true;
  for (int i = 0; i < 100; ++i) all_equal = all_equal && c.next() == d.next();
  REQUIRE(all_equal);
  // neighboring streams diverge immediately
  Rng f = Rng::for_stream(5, 17);
  Rng g = Rng::for_stream(5, 18);
  REQUIRE(f.next() != g.next());
}

TEST_CASE("rng: uniform stays in range and covers it") {
  Rng rng(7);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double v = rng.uniform();
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  REQUIRE(lo < 0.001);
  REQUIRE(hi > 0.999);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(-3.0, 5.0);
    REQUIRE(v >= -3.0);
    REQUIRE(v < 5.0 + 1e-12);
  }
}

TEST_CASE("rng: uniform_int is unbiased across a small modulus") {
  Rng rng(11);
  const std::uint64_t n = 7;
  std::vector<std::size_t> hits(n, 0);
  const std::size_t draws = 70000;
  for (std::size_t i = 0; i < draws; ++i) ++hits[rng.uniform_int(n)];
  for (std::uint64_t k = 0; k < n; ++k) {
    const double expect = static_cast<double>(draws) / n;
    REQUIRE(std::abs(hits[k] - expect) < 5.0 * std::sqrt(expect));
  }
  REQUIRE_THROWS_AS(rng.uniform_int(0), std::invalid_argument);
}

TEST_CASE("rng: normal moments") {
  Rng rng(13);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal(2.0, 3.0);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  REQUIRE(std::abs(mean - 2.0) < 0.05);
  REQUIRE(std::abs(var - 9.0) < 0.2);
}

TEST_CASE("rng: beta moments for symmetric alphas") {
  // Beta(a, a): mean 1/2, variance 1/(8a + 4)
  for (double alpha : {0.5, 1.0, 2.0, 4.0}) {
    Rng rng(17);
    double sum = 0.0, sq = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
      const double v = rng.beta(alpha);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    REQUIRE(std::abs(mean - 0.5) < 0.01);
    REQUIRE(std::abs(var - 1.0 / (8.0 * alpha + 4.0)) < 0.01);
  }
  Rng rng(19);
  REQUIRE_THROWS_AS(rng.beta(0.0), std::invalid_argument);
}

TEST_CASE("parallel_for: covers every index exactly once, any job count") {
  for (unsigned jobs : {1u, 2u, 3u, 8u}) {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { hits[i] += 1; });
    REQUIRE(std::accumulate(hits.begin(), hits.end(), 0) == 1000);
    for (int h : hits) REQUIRE(h == 1);
  }
  // n smaller than the worker count
  std::vector<int> tiny(3, 0);
  parallel_for(tiny.size(), 16, [&](std::size_t i) { tiny[i] = 1; });
  REQUIRE(tiny == std::vector<int>{1, 1, 1});
  parallel_for(0, 4, [](std::size_t) { FAIL("body ran for n = 0"); });
}

TEST_CASE("parallel_for: results independent of the job count") {
  auto compute = [](unsigned jobs) {
    std::vector<double> out(500);
    parallel_for(out.size(), jobs, [&](std::size_t i) {
      Rng rng = Rng::for_stream(3, i);
      out[i] = rng.uniform() + rng.normal(0, 1);
    });
    return out;
  };
  const auto a = compute(1);
  const auto b = compute(4);
  REQUIRE(a == b);
}

TEST_CASE("parallel_for: exceptions propagate") {
  REQUIRE_THROWS_WITH(
      parallel_for(100, 4,
                   [](std::size_t i) {
                     if (i == 57) throw std::runtime_error("index 57");
                   }),
      "index 57");
}
