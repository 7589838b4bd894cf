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
#include "signreg/datasets.hpp"
#include "signreg/error.hpp"
#include "signreg/rng.hpp"

using namespace signreg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "signreg_test_datasets" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> random_record(Rng& rng) {
  std::vector<std::uint8_t> r(kCifarRecordBytes);
  r[0] = static_cast<std::uint8_t>(rng.uniform_index(10));
  for (std::size_t i = 1; i < r.size(); ++i) r[i] = static_cast<std::uint8_t>(rng.uniform_index(256));
  return r;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Nearest-class-mean classifier fitted on `train`, scored on `test`.
double nearest_mean_accuracy(const DatasetSplit& d) {
  const std::size_t C = d.num_classes(), n = d.train.front().image.size();
  std::vector<std::vector<double>> mean(C, std::vector<double>(n, 0.0));
  std::vector<double> count(C, 0.0);
  for (const auto& s : d.train) {
    for (std::size_t i = 0; i < n; ++i) mean[s.label][i] += s.image[i];
    count[s.label] += 1;
  }
  for (std::size_t c = 0; c < C; ++c)
    for (auto& v : mean[c]) v /= count[c];
  std::size_t correct = 0;
  for (const auto& s : d.test) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < C; ++c) {
      double dist = 0.0;
      for (std::size_t i = 0; i < n; ++i) dist += (s.image[i] - mean[c][i]) * (s.image[i] - mean[c][i]);
      if (dist < best_d) best_d = dist, best = c;
    }
    correct += best == s.label;
  }
  return static_cast<double>(correct) / static_cast<double>(d.test.size());
}

}  // namespace

TEST_CASE("CIFAR-10 records round-trip byte for byte") {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto rec = random_record(rng);
    const Sample s = decode_cifar10_record(rec);
    CHECK(s.image.shape() == Shape{3, 32, 32});
    CHECK(s.label == rec[0]);
    CHECK(s.image.at({1, 0, 0}) == static_cast<double>(rec[1 + 1024]));
    CHECK(s.image.at({2, 31, 31}) == static_cast<double>(rec[3072]));
    CHECK(encode_cifar10_record(s) == rec);
  }
  std::vector<std::uint8_t> bad(kCifarRecordBytes, 0);
  bad[0] = 10;
  CHECK_THROWS_AS(decode_cifar10_record(bad), Error);
  CHECK_THROWS_AS(decode_cifar10_record(std::vector<std::uint8_t>(100, 0)), Error);
}

TEST_CASE("CIFAR-10 directory loading with a validation carve") {
  const auto dir = temp_dir("cifar");
  Rng rng(2);
  std::vector<std::uint8_t> train, test;
  for (int i = 0; i < 30; ++i) {
    auto r = random_record(rng);
    train.insert(train.end(), r.begin(), r.end());
  }
  for (int i = 0; i < 7; ++i) {
    auto r = random_record(rng);
    test.insert(test.end(), r.begin(), r.end());
  }
  write_bytes(dir / "data_batch_1.bin", train);
  write_bytes(dir / "test_batch.bin", test);
  CifarOptions opts;
  opts.val_count = 5;
  const auto split = load_cifar10_binary(dir, opts);
  CHECK(split.train.size() == 25);
  CHECK(split.val.size() == 5);
  CHECK(split.test.size() == 7);
  CHECK(split.class_names == cifar10_class_names());
  CHECK(encode_cifar10_record(split.val.back()) ==
        std::vector<std::uint8_t>(train.end() - kCifarRecordBytes, train.end()));

  write_bytes(dir / "test_batch.bin", std::vector<std::uint8_t>(kCifarRecordBytes + 1, 0));
  CHECK_THROWS_AS(load_cifar10_binary(dir, opts), Error);
  CHECK_THROWS_AS(load_cifar10_binary(temp_dir("empty"), opts), Error);
}

TEST_CASE("synthetic blobs are deterministic and separable") {
  Rng a(5), b(5);
  const auto d1 = make_synthetic_blobs(3, 40, {1, 8, 8}, 10.0, a);
  const auto d2 = make_synthetic_blobs(3, 40, {1, 8, 8}, 10.0, b);
  REQUIRE(d1.train.size() == 120);
  CHECK(d1.val.size() == 30);
  CHECK(d1.test.size() == 30);
  for (std::size_t i = 0; i < d1.train.size(); ++i) CHECK(d1.train[i].image.identical(d2.train[i].image));
  for (const auto& s : d1.train) {
    CHECK(s.raw);
    for (double v : s.image.data()) CHECK((v >= 0.0 && v <= 255.0));
  }
  Rng c(5);
  BlobOptions opts;
  opts.test_per_class = 200;
  const auto flat = make_synthetic_blobs(3, 200, {1, 8, 8}, 0.0, c, opts);
  CHECK(nearest_mean_accuracy(flat) < 0.45);
  Rng e(5);
  CHECK(nearest_mean_accuracy(make_synthetic_blobs(3, 200, {1, 8, 8}, 10.0, e, opts)) > 0.85);
}

TEST_CASE("normalization statistics and round-trip") {
  Rng rng(7);
  auto d = make_synthetic_blobs(2, 30, {3, 8, 8}, 4.0, rng);
  const auto original = d.test;
  normalize(d);
  CHECK(d.normalized);
  REQUIRE(d.stats.has_value());
  // Recompute per-channel moments of the normalized training split.
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0, n = 0.0;
    for (const auto& smp : d.train)
      for (std::size_t i = 0; i < 64; ++i) {
        const double v = smp.image[c * 64 + i];
        s += v, s2 += v * v, n += 1;
      }
    CHECK(std::abs(s / n) < 1e-9);
    CHECK(std::abs(std::sqrt(s2 / n - (s / n) * (s / n)) - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(normalize(d), Error);
  denormalize(d);
  for (std::size_t i = 0; i < original.size(); ++i) {
    CHECK(oracle::max_abs_diff(d.test[i].image, original[i].image) < 1e-10);
  }
}

TEST_CASE("constant channels hit the std floor instead of dividing by zero") {
  Sample s;
  s.image = Tensor::full({1, 2, 2}, 7.0);
  const std::vector<Sample> v{s, s};
  const auto stats = compute_norm_stats(v);
  CHECK(stats.std[0] == kStdFloor);
  CHECK(max_abs(normalize_image(s.image, stats)) == 0.0);
}

TEST_CASE("PPM decoding handles P6, P5 and P3 with maxval scaling") {
  const std::string p6 = std::string("P6\n# c\n2 1\n255\n") + std::string("\x01\x02\x03\xff\x00\x80", 6);
  const Tensor a = decode_ppm(std::vector<std::uint8_t>(p6.begin(), p6.end()));
  CHECK(a.shape() == Shape{3, 1, 2});
  CHECK(a.to_vector() == std::vector<double>{1, 255, 2, 0, 3, 128});

  const std::string p3 = "P3 1 1 15\n15 0 5\n";
  const Tensor b = decode_ppm(std::vector<std::uint8_t>(p3.begin(), p3.end()));
  CHECK(b.to_vector() == std::vector<double>{255, 0, 85});

  const std::string p5 = std::string("P5 1 1 255\n") + "\x2a";
  const Tensor g = decode_ppm(std::vector<std::uint8_t>(p5.begin(), p5.end()));
  CHECK(g.to_vector() == std::vector<double>{42, 42, 42});

  const std::string junk = "P9 1 1 255\n";
  CHECK_THROWS_AS(decode_ppm(std::vector<std::uint8_t>(junk.begin(), junk.end())), Error);
}

TEST_CASE("bilinear resize keeps constant images exact") {
  const Tensor img = Tensor::full({3, 5, 7}, 123.456);
  for (auto [h, w] : {std::pair<size_t, size_t>{32, 32}, {3, 2}, {5, 7}, {64, 9}}) {
    const Tensor r = resize_bilinear(img, h, w);
    CHECK(r.shape() == Shape{3, h, w});
    for (double v : r.data()) CHECK(v == 123.456);
  }
  // Identity size reproduces the input.
  Rng rng(1);
  const Tensor x = uniform(rng, {2, 4, 6}, 0, 255);
  CHECK(resize_bilinear(x, 4, 6).identical(x));
}

TEST_CASE("PPM write/read and the OOD directory loader") {
  const auto dir = temp_dir("ood");
  fs::create_directories(dir / "cats");
  fs::create_directories(dir / "trucks");
  write_ppm(dir / "cats" / "a.ppm", Tensor::full({3, 4, 4}, 10.0));
  write_ppm(dir / "cats" / "b.ppm", Tensor::full({3, 4, 4}, 20.0));
  write_ppm(dir / "trucks" / "c.ppm", Tensor::full({3, 8, 8}, 30.0));
  CHECK(read_ppm(dir / "cats" / "a.ppm").identical(Tensor::full({3, 4, 4}, 10.0)));

  const auto samples = load_ood_directory(dir, {{"cats", 3}, {"trucks", 9}}, 32, 32);
  REQUIRE(samples.size() == 3);
  CHECK(samples[0].label == 3);
  CHECK(samples[1].image.identical(Tensor::full({3, 32, 32}, 20.0)));
  CHECK(samples[2].label == 9);
  CHECK_THROWS_AS(load_ood_directory(dir, {{"cats", 3}}, 32, 32), Error);

  std::ofstream(dir / "cats" / "notes.txt") << "x";
  CHECK_THROWS_AS(load_ood_directory(dir, {{"cats", 3}, {"trucks", 9}}, 32, 32), Error);
}

TEST_CASE("sample containers round-trip images, labels and provenance") {
  const auto dir = temp_dir("container");
  Rng rng(3);
  std::vector<Sample> samples(3);
  for (std::size_t i = 0; i < 3; ++i) {
    samples[i].image = normal(rng, {1, 2, 3}, 0, 1);
    samples[i].label = i;
    samples[i].raw = i == 0;
  }
  samples[1].soft_label = Tensor({3}, {0.25, 0.75, 0.0});
  samples[2].provenance = Provenance{"sign", "0123456789abcdef", 50, 0.5, "pre-logits", "original-point", "none"};
  save_samples(dir / "s.smpl", samples);
  const auto back = load_samples(dir / "s.smpl");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].image.identical(samples[i].image));
    CHECK(back[i].label == samples[i].label);
    CHECK(back[i].raw == samples[i].raw);
  }
  CHECK(back[1].soft_label->identical(*samples[1].soft_label));
  CHECK(*back[2].provenance == *samples[2].provenance);
  CHECK_FALSE(back[0].provenance.has_value());

  save_samples(dir / "t.smpl", back);
  std::ifstream a(dir / "s.smpl", std::ios::binary), b(dir / "t.smpl", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
}

TEST_CASE("batches use soft labels only when they are distributions") {
  std::vector<Sample> s(2);
  s[0].image = Tensor::ones({2});
  s[0].label = 1;
  s[1].image = Tensor::full({2}, 2.0);
  s[1].label = 0;
  s[1].soft_label = Tensor({3}, {0.5, 0.5, 0.0});
  const Batch b = make_batch(s, 3);
  CHECK(b.images.shape() == Shape{2, 2});
  CHECK(b.targets.to_vector() == std::vector<double>{0, 1, 0, 0.5, 0.5, 0});
  CHECK(b.labels == std::vector<std::size_t>{1, 0});
  s[1].soft_label = Tensor({3}, {0.5, 0.6, 0.0});
  CHECK(make_batch(s, 3).targets.to_vector() == std::vector<double>{0, 1, 0, 1, 0, 0});
  s[1].soft_label.reset();
  s[1].label = 3;
  CHECK_THROWS_AS(make_batch(s, 3), Error);
}
