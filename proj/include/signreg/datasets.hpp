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

#ifndef SIGNREG_DATASETS_HPP_
#define SIGNREG_DATASETS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "signreg/tensor.hpp"

namespace signreg {

// Where a derived sample came from.
struct Provenance {
  std::string kind;  // "sign" or "sign-delta"
  std::string source_checksum;
  std::size_t k = 0;
  double step_scale = 1.0;
  std::string tap;
  std::string eval_point;
  std::string normalize;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Sample {
  Tensor image;     // (channels, height, width) or a flat feature vector
  bool raw = true;  // true: 0-255 intensity domain; false: normalized model space
  std::size_t label = 0;
  // Overrides `label` for the loss when present (mixup targets).
  std::optional<Tensor> soft_label;
  std::optional<Provenance> provenance;
};

struct NormStats {
  std::vector<double> mean;  // per channel
  std::vector<double> std;   // per channel, floored at kStdFloor
};

inline constexpr double kStdFloor = 1e-6;

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  std::vector<std::string> class_names;
  std::optional<NormStats> stats;
  bool normalized = false;

  std::size_t num_classes() const noexcept { return class_names.size(); }
};

// ---- CIFAR-10 binary format -------------------------------------------------
// Each record is 3073 bytes: a label byte (0-9) then 1024 red, 1024 green and
// 1024 blue bytes, each plane 32x32 row-major.

inline constexpr std::size_t kCifarRecordBytes = 3073;

struct CifarOptions {
  std::size_t val_count = 5000;  // carved from the end of the training batches
  std::size_t max_train = 0;     // 0 = all; applied before the validation carve
  std::size_t max_test = 0;
  std::optional<std::uint64_t> shuffle_seed;  // shuffle train before the carve
};

Sample decode_cifar10_record(std::span<const std::uint8_t> record);
std::vector<std::uint8_t> encode_cifar10_record(const Sample& sample);
std::vector<Sample> read_cifar10_file(const std::filesystem::path& path);
// Reads data_batch_{1..5}.bin (those present, at least one) and test_batch.bin.
DatasetSplit load_cifar10_binary(const std::filesystem::path& dir, const CifarOptions& options = {});

const std::vector<std::string>& cifar10_class_names();

// ---- Synthetic blobs ------------------------------------------------------------

struct BlobOptions {
  std::size_t val_per_class = 0;   // 0: samples_per_class / 4 (at least 1)
  std::size_t test_per_class = 0;  // 0: samples_per_class / 4 (at least 1)
  double noise_sigma = 32.0;       // per-pixel noise, intensity units
  double blob_radius = 0.0;        // 0: min(height, width) / 8, at least 1
  double jitter = 1.0;             // max random blob offset in pixels
  // Class-independent blobs stamped at random positions, amplitude relative to
  // the class blob.
  std::size_t distractors = 0;
};

// Class c is a Gaussian bump at a class-specific location with a
// class-specific channel mix; amplitude grows with `separation`, and
// separation 0 makes every class the same distribution.
DatasetSplit make_synthetic_blobs(std::size_t num_classes, std::size_t samples_per_class,
                                  const Shape& image_shape, double separation, Rng& rng,
                                  const BlobOptions& options = {});

// ---- Normalization ------------------------------------------------------------

NormStats compute_norm_stats(std::span<const Sample> samples);
Tensor normalize_image(const Tensor& image, const NormStats& stats);
Tensor denormalize_image(const Tensor& image, const NormStats& stats);
std::vector<Sample> normalize_samples(std::span<const Sample> samples, const NormStats& stats);

// Computes stats from train (unless already present) and normalizes all splits.
void normalize(DatasetSplit& split);
void denormalize(DatasetSplit& split);

// ---- Images on disk -------------------------------------------------------------

// Netpbm P6/P5/P3 (P5 is replicated to three channels), scaled to 0-255.
Tensor decode_ppm(std::span<const std::uint8_t> bytes);
Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

// Half-pixel-centred bilinear resize of a (channels, h, w) image.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

// One sub-directory per class; `class_map` maps directory names to labels.
std::vector<Sample> load_ood_directory(const std::filesystem::path& dir,
                                       const std::map<std::string, std::size_t>& class_map,
                                       std::size_t height = 32, std::size_t width = 32);

// ---- Sample container -----------------------------------------------------------
// 8-byte magic "SGNRSMPL", u64 little-endian manifest length, a JSON manifest
// {version, provenance[], samples[{label, shape, offset, raw, soft_label?,
// provenance?}]}, then raw little-endian f64 image data.

inline constexpr const char* kSampleContainerVersion = "signreg-samples-1";

void save_samples(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> load_samples(const std::filesystem::path& path);

// ---- Batching -----------------------------------------------------------------

struct Batch {
  Tensor images;   // [batch, ...]
  Tensor targets;  // [batch, classes] probability rows
  std::vector<std::size_t> labels;
};

Tensor one_hot(std::size_t label, std::size_t num_classes);
Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices,
                 std::size_t num_classes);
Batch make_batch(std::span<const Sample> samples, std::size_t num_classes);

}  // namespace signreg

#endif  // SIGNREG_DATASETS_HPP_
