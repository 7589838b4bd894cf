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

#ifndef SIGNREG_AUGMENT_HPP_
#define SIGNREG_AUGMENT_HPP_

#include <span>
#include <string>

#include "signreg/datasets.hpp"
#include "signreg/rng.hpp"
#include "signreg/tensor.hpp"

namespace signreg {

// ---- Classical augmentation ------------------------------------------------------

struct ClassicalParams {
  bool hflip = false;
  bool vflip = false;
  int shift_y = 0;  // pixel (c, y, x) moves to (c, y + shift_y, x + shift_x)
  int shift_x = 0;
  int quarter_turns = 0;  // counter-clockwise; odd values need a square image
};

inline constexpr double kMaxShiftFraction = 0.1;

// Flips with p = 0.5 each, integer shifts up to 10% of each side, and a
// rotation from {0, 90, 180, 270} degrees ({0, 180} for non-square images).
ClassicalParams sample_classical_params(Rng& rng, const Shape& image_shape);

Tensor flip_horizontal(const Tensor& image);
Tensor flip_vertical(const Tensor& image);
Tensor shift_image(const Tensor& image, int dy, int dx);
Tensor rotate_quarter_turns(const Tensor& image, int turns);
Tensor apply_classical(const Tensor& image, const ClassicalParams& params);

Sample classical_augment(const Sample& sample, Rng& rng);

// ---- mixup ------------------------------------------------------------------

struct MixupConfig {
  double alpha = 0.2;  // lambda ~ Beta(alpha, alpha)

  void validate() const;
};

struct MixedPair {
  Tensor image;
  Tensor label;
};

// image = lambda * img1 + (1 - lambda) * img2, and the same for the labels.
MixedPair mixup(const Tensor& image1, const Tensor& label1, const Tensor& image2,
                const Tensor& label2, double lambda);

// Row i is mixed with row partners[i] using lambdas[i].
Batch mixup_batch_with(const Batch& batch, std::span<const std::size_t> partners,
                       std::span<const double> lambdas);
// Partners from a random permutation of the batch, one Beta draw per row.
Batch mixup_batch(const Batch& batch, const MixupConfig& cfg, Rng& rng);

// ---- Corruptions --------------------------------------------------------------

enum class CorruptionKind { kPixelOff, kGaussian };

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kPixelOff;
  std::size_t pixel_count = 50;
  double mu = 0.0;
  double sigma = 10.0;  // 0-255 intensity units

  // e.g. "pixel-off:50" or "gaussian:0:10"; parse_corruption reads it back.
  std::string label() const;
};

CorruptionSpec parse_corruption(std::string_view text);

// Operates on raw 0-255 images. pixel-off zeroes every channel at
// `pixel_count` distinct positions; gaussian adds N(mu, sigma^2) noise and
// clips to [0, 255].
Tensor corrupt_image(const Tensor& image, const CorruptionSpec& spec, Rng& rng);
Sample corrupt(const Sample& sample, const CorruptionSpec& spec, Rng& rng);

}  // namespace signreg

#endif  // SIGNREG_AUGMENT_HPP_
