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

#include <atomic>
#include <stdexcept>

#include "doctest.h"
#include "signreg/parallel.hpp"
#include "signreg/sign.hpp"

using namespace signreg;

TEST_CASE("parallel_for visits every index once") {
  set_thread_count(4);
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  set_thread_count(0);
  CHECK(thread_count() == 1);
}

TEST_CASE("the first failing index wins") {
  set_thread_count(3);
  try {
    parallel_for(10, [](std::size_t i) {
      if (i == 7 || i == 4) throw std::runtime_error(std::to_string(i));
    });
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "4");
  }
  set_thread_count(1);
}

TEST_CASE("SIGN output does not depend on the thread count") {
  Rng rng(1);
  const Model m = build_basic_cnn({1, 8, 8}, 3, 0.3, 2);
  std::vector<Sample> samples(13);
  for (auto& s : samples) {
    s.image = normal(rng, {1, 8, 8}, 0, 1);
    s.raw = false;
  }
  SignConfig cfg;
  cfg.k = 3;
  cfg.step_scale = 0.01;
  set_thread_count(1);
  const auto one = transform_dataset(m, samples, {cfg}, 4);
  set_thread_count(3);
  const auto three = transform_dataset(m, samples, {cfg}, 4);
  set_thread_count(1);
  REQUIRE(one.size() == three.size());
  for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i].image.identical(three[i].image));
}
