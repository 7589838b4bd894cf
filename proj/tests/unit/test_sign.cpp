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
#include "signreg/error.hpp"
#include "signreg/rng.hpp"
#include "signreg/sign.hpp"

using namespace signreg;

namespace {

// x -> x W + b (pre-logits) -> classifier.
Model linear_model(const Tensor& w, const Tensor& b, std::size_t classes = 2) {
  const std::size_t n = w.dim(0), h = w.dim(1);
  std::vector<Layer> layers{{LayerKind::kDense, "a", n, h, 0, 0.0},
                            {LayerKind::kDense, "classifier", h, classes, 0, 0.0}};
  ParamStore p{{"a.weight", w}, {"a.bias", b},
               {"classifier.weight", Tensor::ones({h, classes})}, {"classifier.bias", zeros({classes})}};
  return Model({n}, layers, p, {{kPreLogitsTap, 1}, {kLogitsTap, 2}});
}

// Summed Jacobian of relu(x W + b) written out by hand.
Tensor relu_layer_jacobian(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = w.dim(0), h = w.dim(1);
  std::vector<double> g(n, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    double z = b[j];
    for (std::size_t i = 0; i < n; ++i) z += x[i] * w.at({i, j});
    if (z <= 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) g[i] += w.at({i, j});
  }
  return Tensor({n}, g);
}

Tensor unit_max_abs(const Tensor& d) {
  const double m = max_abs(d);
  return m == 0.0 ? d : scale(d, 1.0 / m);
}

}  // namespace

TEST_CASE("linear pre-logits: closed form under both evaluation policies") {
  Rng rng(11);
  const Tensor w = normal(rng, {5, 3}, 0, 1), b = normal(rng, {3}, 0, 1);
  const Model m = linear_model(w, b);
  const Tensor x = normal(rng, {5}, 0, 1);
  const Tensor s = sum_rows(transpose(w));  // row sums of W
  for (auto point : {EvalPoint::kCurrentIterate, EvalPoint::kOriginalPoint}) {
    for (auto norm : {DeltaNormalization::kNone, DeltaNormalization::kUnitMaxAbs}) {
      SignConfig cfg;
      cfg.k = 7;
      cfg.step_scale = 0.3;
      cfg.eval_point = point;
      cfg.normalize = norm;
      const auto r = sign_transform(m, x, cfg);
      const Tensor step = norm == DeltaNormalization::kNone ? s : unit_max_abs(s);
      const Tensor expect = axpy(x, 7 * 0.3, step);
      CHECK(oracle::max_abs_diff(r.transformed, expect) < 1e-10);
      CHECK(oracle::max_abs_diff(r.final_delta, scale(step, 7 * 0.3)) < 1e-10);
      REQUIRE(r.delta_norms.size() == 7);
      for (double v : r.delta_norms) CHECK(v == doctest::Approx(norm2(step)).epsilon(1e-12));
    }
  }
}

TEST_CASE("K = 1 is one Jacobian step from the input") {
  Rng rng(12);
  const Model m = build_small_mlp(6, {4}, 3, 2);
  const Tensor x = normal(rng, {6}, 0, 1);
  SignConfig cfg;
  const auto r = sign_transform(m, x, cfg);
  const Tensor j = relu_layer_jacobian(x, m.params().at("hidden1.weight"), m.params().at("hidden1.bias"));
  CHECK(oracle::max_abs_diff(r.transformed, add(x, j)) < 1e-12);
}

TEST_CASE("MLP iterations follow the hand-written ReLU oracle") {
  Rng rng(13);
  const Model m = build_small_mlp(4, {8}, 2, 3);
  const Tensor& w = m.params().at("hidden1.weight");
  const Tensor& b = m.params().at("hidden1.bias");
  const Tensor x = normal(rng, {4}, 0, 1);
  for (auto point : {EvalPoint::kCurrentIterate, EvalPoint::kOriginalPoint}) {
    SignConfig cfg;
    cfg.k = 25;
    cfg.step_scale = 0.05;
    cfg.eval_point = point;
    Tensor p = x;
    for (std::size_t k = 0; k < cfg.k; ++k) {
      const Tensor d = relu_layer_jacobian(point == EvalPoint::kCurrentIterate ? p : x, w, b);
      p = axpy(p, cfg.step_scale, d);
    }
    const auto r = sign_transform(m, x, cfg);
    CHECK(oracle::max_abs_diff(r.transformed, p) < 1e-10);
  }
}

TEST_CASE("batch summed Jacobian matches central differences on BasicCNN") {
  Rng rng(14);
  const Model m = build_basic_cnn({1, 8, 8}, 3, 0.3, 4);
  const Tensor x = normal(rng, {1, 1, 8, 8}, 0, 1);
  const Tensor j = batch_summed_jacobian(m, x, kPreLogitsTap);
  auto f = [&](const Tensor& in) {
    Tape tape;
    ForwardOptions o;
    o.stop_at_tap = kPreLogitsTap;
    return sum(tape.value(m.forward(tape, tape.input(in), o).taps.at(kPreLogitsTap)));
  };
  CHECK(oracle::rel_error(j, oracle::numeric_gradient(f, x)) < 1e-5);
}

TEST_CASE("batched transform is bit-identical to per-sample transforms") {
  Rng rng(15);
  const Model m = build_basic_cnn({2, 8, 8}, 3, 0.3, 5);
  const Tensor batch = normal(rng, {5, 2, 8, 8}, 0, 1);
  SignConfig cfg;
  cfg.k = 4;
  cfg.step_scale = 0.01;
  const auto rows = sign_transform_batch(m, batch, cfg);
  REQUIRE(rows.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto one = sign_transform(m, slice_leading(batch, i), cfg);
    CHECK(rows[i].transformed.identical(one.transformed));
    CHECK(rows[i].final_delta.identical(one.final_delta));
    CHECK(rows[i].delta_norms == one.delta_norms);
    CHECK(oracle::max_abs_diff(rows[i].transformed, add(slice_leading(batch, i), rows[i].final_delta)) <
          1e-12);
  }
}

TEST_CASE("negative values survive and divergence is reported") {
  const Tensor w({2, 1}, {-1.0, -2.0});
  const Model m = linear_model(w, zeros({1}));
  SignConfig cfg;
  cfg.k = 3;
  const auto r = sign_transform(m, zeros({2}), cfg);
  CHECK(r.transformed.to_vector() == std::vector<double>{-3.0, -6.0});

  const Model big = linear_model(Tensor({2, 2}, {1e308, 1e308, 1.0, 1.0}), zeros({2}));
  CHECK_THROWS_AS(sign_transform(big, zeros({2}), cfg), Error);
  cfg.k = 0;
  CHECK_THROWS_AS(sign_transform(m, zeros({2}), cfg), Error);
  cfg.k = 1;
  cfg.tap = "nope";
  CHECK_THROWS_AS(sign_transform(m, zeros({2}), cfg), Error);
}

TEST_CASE("dataset transform keeps originals, labels and provenance") {
  Rng rng(16);
  const Model m = build_small_mlp(3, {4}, 2, 1);
  std::vector<Sample> samples(5);
  for (std::size_t i = 0; i < 5; ++i) {
    samples[i].image = normal(rng, {3}, 0, 1);
    samples[i].label = i % 2;
    samples[i].raw = false;
  }
  SignConfig a, b;
  a.k = 2;
  b.k = 3;
  b.normalize = DeltaNormalization::kUnitMaxAbs;
  const auto out = transform_dataset(m, samples, {a, b}, 2);
  REQUIRE(out.size() == 15);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(out[i].image.identical(samples[i].image));
    CHECK_FALSE(out[i].provenance.has_value());
    CHECK(out[5 + i].label == samples[i].label);
    CHECK(out[5 + i].image.identical(sign_transform(m, samples[i].image, a).transformed));
    CHECK(out[10 + i].image.identical(sign_transform(m, samples[i].image, b).transformed));
  }
  CHECK(out[5].provenance->kind == "sign");
  CHECK(out[5].provenance->source_checksum == model_checksum(m));
  CHECK(out[10].provenance->k == 3);
  CHECK(out[10].provenance->normalize == "unit-max-abs");

  const auto deltas = delta_only_dataset(m, samples, a, 3);
  REQUIRE(deltas.size() == 5);
  CHECK(deltas[4].image.identical(sign_transform(m, samples[4].image, a).final_delta));
  CHECK(deltas[4].provenance->kind == "sign-delta");

  samples[2].image = zeros({4});
  CHECK_THROWS_AS(transform_dataset(m, samples, {a}), Error);
}

TEST_CASE("display rescale maps to the 0-255 range") {
  const Tensor t({3}, {-2.0, 0.0, 2.0});
  CHECK(display_rescale(t).to_vector() == std::vector<double>{0.0, 127.5, 255.0});
  CHECK(max_abs(display_rescale(Tensor::full({2}, 5.0))) == 0.0);
}
