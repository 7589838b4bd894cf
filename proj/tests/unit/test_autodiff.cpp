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

#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "signreg/autodiff.hpp"
#include "signreg/error.hpp"
#include "signreg/rng.hpp"

using namespace signreg;

namespace {

// Compares vjp(fn, x, w) with central differences of x -> <w, fn(x)>.
double primitive_error(const Composition& fn, const Tensor& x, std::uint64_t seed = 0) {
  Rng rng(seed);
  auto traced = forward(fn, x);
  const Tensor w = normal(rng, traced.output.shape(), 0.0, 1.0);
  const Tensor analytic = vjp(traced.tape, traced.output_node, w);
  const Tensor numeric = oracle::numeric_gradient(
      [&](const Tensor& t) { return dot(forward(fn, t).output, w); }, x, 1e-5);
  return oracle::rel_error(analytic, numeric);
}

}  // namespace

TEST_CASE("primitive gradients match central differences") {
  Rng rng(17);
  const Tensor m = normal(rng, {4, 3}, 0, 1);
  const Tensor v = normal(rng, {3}, 0, 1);
  const Tensor same = normal(rng, {2, 4}, 0, 1);

  SUBCASE("matmul, both operands") {
    CHECK(primitive_error([&](Tape& t, NodeRef x) { return ops::matmul(t, x, t.constant(m)); },
                          normal(rng, {2, 4}, 0, 1)) < 1e-5);
    CHECK(primitive_error([&](Tape& t, NodeRef x) { return ops::matmul(t, t.constant(same), x); },
                          normal(rng, {4, 3}, 0, 1)) < 1e-5);
  }
  SUBCASE("add, add_bias, mul, scale, sum, reshape") {
    CHECK(primitive_error([&](Tape& t, NodeRef x) { return ops::add(t, x, t.constant(same)); },
                          normal(rng, {2, 4}, 0, 1)) < 1e-5);
    CHECK(primitive_error([&](Tape& t, NodeRef x) { return ops::add_bias(t, x, t.constant(v)); },
                          normal(rng, {5, 3}, 0, 1)) < 1e-5);
    CHECK(primitive_error([&](Tape& t, NodeRef b) { return ops::add_bias(t, t.constant(m), b); }, v) < 1e-5);
    CHECK(primitive_error([&](Tape& t, NodeRef x) { return ops::mul(t, x, t.constant(same)); },
                          normal(rng, {2, 4}, 0, 1)) < 1e-5);
    CHECK(primitive_error([&](Tape& t, NodeRef x) { return ops::scale(t, x, -2.5); }, v) < 1e-5);
    CHECK(primitive_error([&](Tape& t, NodeRef x) { return ops::sum(t, x); }, same) < 1e-5);
    CHECK(primitive_error([&](Tape& t, NodeRef x) { return ops::reshape(t, x, {8}); }, same) < 1e-5);
  }
  SUBCASE("relu and softplus away from the kink") {
    CHECK(primitive_error([](Tape& t, NodeRef x) { return ops::relu(t, x); }, normal(rng, {3, 5}, 0, 1)) < 1e-5);
    CHECK(primitive_error([](Tape& t, NodeRef x) { return ops::softplus(t, x); },
                          normal(rng, {3, 5}, 0, 3)) < 1e-5);
  }
  SUBCASE("conv2d with respect to input, weight and bias") {
    const Tensor x = normal(rng, {2, 3, 5, 6}, 0, 1);
    const Tensor w = normal(rng, {4, 3, 3, 3}, 0, 1);
    const Tensor b = normal(rng, {4}, 0, 1);
    CHECK(primitive_error([&](Tape& t, NodeRef in) { return ops::conv2d(t, in, t.constant(w), t.constant(b)); },
                          x) < 1e-5);
    CHECK(primitive_error([&](Tape& t, NodeRef in) { return ops::conv2d(t, t.constant(x), in, t.constant(b)); },
                          w) < 1e-5);
    CHECK(primitive_error([&](Tape& t, NodeRef in) { return ops::conv2d(t, t.constant(x), t.constant(w), in); },
                          b) < 1e-5);
  }
  SUBCASE("maxpool2d without ties") {
    CHECK(primitive_error([](Tape& t, NodeRef x) { return ops::maxpool2d(t, x, 2); },
                          normal(rng, {2, 2, 4, 6}, 0, 1)) < 1e-5);
  }
  SUBCASE("dropout with a fixed mask") {
    CHECK(primitive_error(
              [](Tape& t, NodeRef x) {
                Rng mask_rng(99);
                return ops::dropout(t, x, 0.4, mask_rng);
              },
              normal(rng, {4, 6}, 0, 1)) < 1e-5);
  }
}

TEST_CASE("conv2d kernel equals the direct six-loop convolution") {
  Rng rng(2);
  for (std::size_t k : {1u, 3u, 5u}) {
    const Tensor x = normal(rng, {3, 2, 7, 5}, 0, 1);
    const Tensor w = normal(rng, {4, 2, k, k}, 0, 1);
    const Tensor b = normal(rng, {4}, 0, 1);
    CHECK(oracle::max_abs_diff(kernels::conv2d(x, w, b), oracle::conv2d(x, w, b)) < 1e-12);
  }
  CHECK_THROWS(kernels::conv2d(Tensor::ones({1, 2, 4, 4}), Tensor::ones({1, 2, 2, 2}), Tensor::ones({1})));
  CHECK_THROWS(kernels::conv2d(Tensor::ones({1, 3, 4, 4}), Tensor::ones({1, 2, 3, 3}), Tensor::ones({1})));
}

TEST_CASE("relu passes zero gradient at exactly zero") {
  auto traced = forward([](Tape& t, NodeRef x) { return ops::relu(t, x); }, Tensor({3}, {-1.0, 0.0, 2.0}));
  const Tensor g = vjp(traced.tape, traced.output_node, Tensor::ones({3}));
  CHECK(g.to_vector() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("maxpool ties route the gradient to the lowest flat index") {
  auto traced = forward([](Tape& t, NodeRef x) { return ops::maxpool2d(t, x, 2); },
                        Tensor({1, 1, 2, 2}, {5.0, 5.0, 5.0, 5.0}));
  CHECK(traced.output.to_vector() == std::vector<double>{5.0});
  const Tensor g = vjp(traced.tape, traced.output_node, Tensor::ones({1, 1, 1, 1}));
  CHECK(g.to_vector() == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("dropout is inverted and identity outside training") {
  Rng rng(4);
  Tape tape;
  const NodeRef x = tape.input(Tensor::ones({1000}));
  const NodeRef y = ops::dropout(tape, x, 0.25, rng);
  std::size_t kept = 0;
  for (double v : tape.value(y).data()) {
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15));
    kept += v != 0.0;
  }
  CHECK(kept > 700);
  CHECK(kept < 800);
  CHECK_THROWS(ops::dropout(tape, x, 1.0, rng));
}

TEST_CASE("summed_jacobian equals the row sum of the explicit Jacobian") {
  Rng rng(8);
  const Tensor w = normal(rng, {5, 4}, 0, 1);
  const Composition fn = [&](Tape& t, NodeRef x) {
    return ops::softplus(t, ops::matmul(t, ops::relu(t, x), t.constant(w)));
  };
  const Tensor x = normal(rng, {1, 5}, 0, 1);
  auto traced = forward(fn, x);
  const Tensor summed = summed_jacobian(traced.tape, traced.output_node);
  std::vector<double> oracle_sum(5, 0.0);
  for (std::size_t a = 0; a < 4; ++a) {
    std::vector<double> onehot(4, 0.0);
    onehot[a] = 1.0;
    const Tensor row = vjp(traced.tape, traced.output_node, Tensor({1, 4}, onehot));
    for (std::size_t i = 0; i < 5; ++i) oracle_sum[i] += row[i];
  }
  CHECK(oracle::max_abs_diff(summed, Tensor({1, 5}, oracle_sum)) < 1e-12);
}

TEST_CASE("nodes from another tape are rejected") {
  Tape a, b;
  const NodeRef xa = a.input(Tensor::ones({2}));
  b.input(Tensor::ones({2}));
  try {
    ops::relu(b, xa);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNodeNotOnTape);
  }
}

TEST_CASE("unreached nodes get zero cotangents") {
  Tape t;
  const NodeRef x = t.input(Tensor::ones({3}));
  const NodeRef unused = t.parameter("unused", Tensor::ones({2}));
  const NodeRef y = ops::scale(t, x, 2.0);
  const GradMap g = t.backward(y, Tensor::ones({3}));
  CHECK_FALSE(g.reached(unused));
  CHECK(g.at(unused).to_vector() == std::vector<double>{0.0, 0.0});
  CHECK(g.at(x).to_vector() == std::vector<double>{2.0, 2.0, 2.0});
}

TEST_CASE("param_gradients needs a scalar loss") {
  Tape t;
  const NodeRef x = t.input(Tensor::ones({1, 2}));
  const NodeRef w = t.parameter("w", Tensor({2, 2}, {1, 2, 3, 4}));
  const NodeRef y = ops::matmul(t, x, w);
  try {
    param_gradients(t, y);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNonScalarLoss);
  }
  const auto grads = param_gradients(t, ops::sum(t, y));
  CHECK(grads.at("w").to_vector() == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("gradients accumulate over shared subexpressions") {
  // y = x * x + x, dy/dx = 2x + 1
  auto traced = forward([](Tape& t, NodeRef x) { return ops::add(t, ops::mul(t, x, x), x); },
                        Tensor({2}, {3.0, -1.0}));
  const Tensor g = vjp(traced.tape, traced.output_node, Tensor::ones({2}));
  CHECK(g.to_vector() == std::vector<double>{7.0, -1.0});
}
