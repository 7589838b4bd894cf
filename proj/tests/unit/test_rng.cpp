/**
 * Copyright 2026 The signreg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "signreg/rng.hpp"

using signreg::Rng;

TEST_CASE("same seed gives the same stream") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);
}

TEST_CASE("split does not advance the parent and streams differ") {
  Rng parent(7);
  const auto before = parent.counter();
  Rng s0 = parent.split(0), s1 = parent.split(1), s0b = parent.split(0);
  CHECK(parent.counter() == before);
  CHECK(s0.next_u64() == s0b.next_u64());
  Rng t0 = parent.split(0);
  CHECK(t0.next_u64() != s1.next_u64());
}

TEST_CASE("uniform draws stay in [0, 1) with the right mean") {
  Rng r(1);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("uniform_index covers its range and rejects zero") {
  Rng r(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto k = r.uniform_index(7);
    REQUIRE(k < 7);
    seen.insert(k);
  }
  CHECK(seen.size() == 7);
  CHECK_THROWS(r.uniform_index(0));
}

TEST_CASE("normal draws have unit variance") {
  Rng r(5);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  const double mean = s / n;
  CHECK(std::abs(mean) < 0.01);
  CHECK(s2 / n - mean * mean == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("gamma mean equals its shape") {
  for (double shape : {0.2, 1.0, 3.5}) {
    Rng r(11);
    double s = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) s += r.gamma(shape);
    CHECK(s / n == doctest::Approx(shape).epsilon(0.02));
  }
  Rng r(0);
  CHECK_THROWS(r.gamma(0.0));
}

TEST_CASE("Beta(0.2, 0.2) deciles match the regularized incomplete beta") {
  Rng r(2024);
  const int n = 100000;
  std::vector<double> draws(n);
  for (auto& d : draws) d = r.beta(0.2, 0.2);
  for (double d : draws) {
    REQUIRE(d >= 0.0);
    REQUIRE(d <= 1.0);
  }
  for (int q = 1; q < 10; ++q) {
    const double x = q / 10.0;
    const double empirical =
        static_cast<double>(std::count_if(draws.begin(), draws.end(), [&](double v) { return v <= x; })) / n;
    CHECK(std::abs(empirical - boost::math::ibeta(0.2, 0.2, x)) < 0.01);
  }
}

TEST_CASE("permutation is a permutation and shuffle keeps the multiset") {
  Rng r(9);
  auto p = r.permutation(50);
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expect(50);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted == expect);
  CHECK(p != expect);

  std::vector<int> items{1, 2, 3, 4, 5, 6};
  r.shuffle(std::span<int>(items));
  std::sort(items.begin(), items.end());
  CHECK(items == std::vector<int>{1, 2, 3, 4, 5, 6});
}
