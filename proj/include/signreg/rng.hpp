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

#ifndef SIGNREG_RNG_HPP_
#define SIGNREG_RNG_HPP_

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace signreg {

// Counter-based generator: the n-th draw is a pure function of (seed, n), so
// streams are reproducible across platforms and independent streams can be
// split off deterministically without consuming from the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Standard normal via Box-Muller (one draw per pair of uniforms, no caching).
  double normal() noexcept;

  // Gamma(shape, 1) by Marsaglia-Tsang, with the shape < 1 boost.
  double gamma(double shape);

  // Beta(a, b) as the ratio of two gamma draws.
  double beta(double a, double b);

  // Child stream keyed by `stream`; does not advance this generator.
  Rng split(std::uint64_t stream) const noexcept;

  std::vector<std::size_t> permutation(std::size_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

// SplitMix64 finalizer; exposed for checksums and seed derivation.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace signreg

#endif  // SIGNREG_RNG_HPP_
