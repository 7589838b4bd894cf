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
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "signreg/error.hpp"
#include "signreg/nn.hpp"
#include "signreg/rng.hpp"
#include "signreg/training.hpp"

using namespace signreg;
namespace fs = std::filesystem;

namespace {
fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "signreg_test_nn";
  fs::create_directories(dir);
  return dir / name;
}
}  // namespace

TEST_CASE("BasicCNN layer stack and parameter count") {
  const Model m = build_basic_cnn({3, 32, 32}, 10);
  std::vector<LayerKind> kinds;
  for (const auto& l : m.layers()) kinds.push_back(l.kind);
  using K = LayerKind;
  const std::vector<LayerKind> expect{K::kConv2d, K::kRelu,  K::kConv2d,  K::kRelu, K::kMaxPool2d, K::kDropout,
                                      K::kConv2d, K::kRelu,  K::kConv2d,  K::kRelu, K::kMaxPool2d, K::kDropout,
                                      K::kFlatten, K::kDense, K::kRelu, K::kDropout, K::kDense};
  CHECK(kinds == expect);
  const std::size_t expected = (3 * 32 * 9 + 32) + (32 * 32 * 9 + 32) + (32 * 64 * 9 + 64) +
                               (64 * 64 * 9 + 64) + (64 * 8 * 8 * 512 + 512) + (512 * 10 + 10);
  CHECK(m.parameter_count() == expected);
  CHECK(m.num_classes() == 10);
  CHECK(m.has_tap(kPreLogitsTap));
  CHECK(m.taps().at(kLogitsTap) == m.layers().size());
}

TEST_CASE("initialization is Kaiming-uniform with zero biases") {
  const Model m = build_basic_cnn({1, 8, 8}, 3, 0.3, 5);
  for (const auto& [name, t] : m.params()) {
    if (name.ends_with(".bias")) {
      CHECK(max_abs(t) == 0.0);
    } else {
      const std::size_t fan_in = t.rank() == 4 ? t.dim(1) * t.dim(2) * t.dim(3) : t.dim(0);
      CHECK(max_abs(t) <= std::sqrt(6.0 / static_cast<double>(fan_in)));
      CHECK(max_abs(t) > 0.5 * std::sqrt(6.0 / static_cast<double>(fan_in)));
    }
  }
  CHECK(model_checksum(build_basic_cnn({1, 8, 8}, 3, 0.3, 5)) == model_checksum(m));
  CHECK(model_checksum(build_basic_cnn({1, 8, 8}, 3, 0.3, 6)) != model_checksum(m));
}

TEST_CASE("shape errors are reported at build time") {
  CHECK_THROWS_AS(build_basic_cnn({3, 4, 4}, 10), Error);
  CHECK_THROWS_AS(build_small_mlp(16, {}, 3), Error);
  CHECK_THROWS_AS(build_small_mlp(16, {8}, 0), Error);
}

TEST_CASE("forward output shapes and the pre-logits tap") {
  const Model m = build_basic_cnn({3, 16, 16}, 4);
  Rng rng(1);
  const Tensor batch = normal(rng, {2, 3, 16, 16}, 0, 1);
  Tape tape;
  const auto out = m.forward(tape, tape.input(batch));
  CHECK(tape.value(out.logits).shape() == Shape{2, 4});
  CHECK(tape.value(out.taps.at(kPreLogitsTap)).shape() == Shape{2, 512});
  CHECK_FALSE(out.sigma.has_value());
  CHECK(m.predict(batch).logits.identical(tape.value(out.logits)));
  CHECK_THROWS(m.predict(normal(rng, {2, 3, 8, 8}, 0, 1)));
}

TEST_CASE("stop_at_tap stops early") {
  const Model m = build_small_mlp(6, {5, 4}, 3);
  Tape tape;
  ForwardOptions opts;
  opts.stop_at_tap = kPreLogitsTap;
  const auto out = m.forward(tape, tape.input(Tensor::ones({1, 6})), opts);
  CHECK(tape.value(out.taps.at(kPreLogitsTap)).shape() == Shape{1, 4});
  opts.stop_at_tap = "no-such-tap";
  Tape t2;
  CHECK_THROWS_AS(m.forward(t2, t2.input(Tensor::ones({1, 6})), opts), Error);
}

TEST_CASE("training mode needs an rng when dropout is active") {
  const Model m = build_basic_cnn({1, 8, 8}, 2);
  Tape tape;
  ForwardOptions opts;
  opts.train = true;
  CHECK_THROWS(m.forward(tape, tape.input(Tensor::ones({1, 1, 8, 8})), opts));
}

TEST_CASE("SmallMLP parameter gradients match central differences") {
  Model m = build_small_mlp(5, {6}, 3, 2);
  Rng rng(3);
  const Tensor x = normal(rng, {4, 5}, 0, 1);
  Tensor targets = Tensor::full({4, 3}, 0.0);
  std::vector<double> y(12, 0.0);
  for (std::size_t i = 0; i < 4; ++i) y[i * 3 + i % 3] = 1.0;
  targets = Tensor({4, 3}, y);

  Tape tape;
  const auto out = m.forward(tape, tape.input(x));
  const auto grads = param_gradients(tape, cross_entropy(tape, out.logits, targets));
  for (const auto& [name, value] : m.params()) {
    const Tensor numeric = oracle::numeric_gradient(
        [&](const Tensor& p) {
          Model copy = m;
          ParamStore ps = copy.params();
          ps[name] = p;
          copy.set_params(ps);
          return cross_entropy(copy.predict(x).logits, targets);
        },
        value);
    CHECK(oracle::rel_error(grads.at(name), numeric) < 1e-5);
  }
}

TEST_CASE("set_params rejects renamed or reshaped parameters") {
  Model m = build_small_mlp(4, {3}, 2);
  ParamStore ps = m.params();
  ps.begin()->second = Tensor::ones({1});
  CHECK_THROWS_AS(m.set_params(ps), Error);
  ps = m.params();
  ps["extra.weight"] = Tensor::ones({1});
  CHECK_THROWS_AS(m.set_params(ps), Error);
}

TEST_CASE("uncertainty head keeps the classifier and yields positive sigma") {
  const Model base = build_basic_cnn({1, 8, 8}, 3, 0.3, 1);
  const Model head = attach_uncertainty_head(base, 4);
  CHECK(head.has_uncertainty_head());
  CHECK(head.num_classes() == 3);
  Rng rng(2);
  const Tensor batch = normal(rng, {3, 1, 8, 8}, 0, 1);
  const auto p = head.predict(batch);
  CHECK(p.logits.identical(base.predict(batch).logits));
  REQUIRE(p.sigma.has_value());
  for (double s : p.sigma->data()) CHECK(s > 0.0);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  ModelSpec spec;
  spec.arch = "basic-cnn";
  spec.input_shape = {2, 8, 8};
  spec.num_classes = 3;
  spec.uncertainty_head = true;
  spec.init_seed = 9;
  const Model m = build_model(spec);
  const auto path = temp_file("model.ckpt");
  save_checkpoint(path, m, R"({"note":"x"})");
  const Checkpoint ck = load_checkpoint(path);
  CHECK(model_checksum(ck.model) == model_checksum(m));
  CHECK(ck.meta_json.find("\"note\"") != std::string::npos);
  Rng rng(1);
  const Tensor batch = normal(rng, {2, 2, 8, 8}, 0, 1);
  CHECK(ck.model.predict(batch).logits.identical(m.predict(batch).logits));
  CHECK(ck.model.predict(batch).sigma->identical(*m.predict(batch).sigma));

  // Bad magic and truncation are format errors.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  save_checkpoint(path, m);
  fs::resize_file(path, fs::file_size(path) - 8);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  CHECK_THROWS_AS(load_checkpoint(temp_file("missing.ckpt")), Error);
}
