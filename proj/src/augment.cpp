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

#include "signreg/augment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "signreg/error.hpp"

namespace signreg {
namespace {

struct ImageDims {
  std::size_t c, h, w;
};

ImageDims dims(const Tensor& image) {
  if (image.rank() != 3) {
    raise(ErrorKind::kShapeMismatch, "expected a (c, h, w) image, got " + shape_to_string(image.shape()));
  }
  return {image.dim(0), image.dim(1), image.dim(2)};
}

// out(c, y, x) = in(c, src(y, x)) for a coordinate remap.
template <typename Map>
Tensor remap(const Tensor& image, std::size_t out_h, std::size_t out_w, Map map) {
  const auto d = dims(image);
  const auto v = image.data();
  std::vector<double> out(d.c * out_h * out_w);
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto [sy, sx] = map(y, x);
        out[(c * out_h + y) * out_w + x] = v[(c * d.h + sy) * d.w + sx];
      }
  return Tensor({d.c, out_h, out_w}, std::move(out));
}

double parse_number(std::string_view text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    raise(ErrorKind::kConfig, "bad number '" + std::string(text) + "' in corruption spec");
  }
  return v;
}

}  // namespace

ClassicalParams sample_classical_params(Rng& rng, const Shape& image_shape) {
  if (image_shape.size() != 3) raise(ErrorKind::kShapeMismatch, "classical augmentation needs (c, h, w)");
  const auto max_dy = static_cast<int>(std::floor(kMaxShiftFraction * static_cast<double>(image_shape[1])));
  const auto max_dx = static_cast<int>(std::floor(kMaxShiftFraction * static_cast<double>(image_shape[2])));
  ClassicalParams p;
  p.hflip = rng.bernoulli(0.5);
  p.vflip = rng.bernoulli(0.5);
  p.shift_y = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(2 * max_dy + 1))) - max_dy;
  p.shift_x = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(2 * max_dx + 1))) - max_dx;
  const bool square = image_shape[1] == image_shape[2];
  p.quarter_turns = square ? static_cast<int>(rng.uniform_index(4)) : 2 * static_cast<int>(rng.uniform_index(2));
  return p;
}

Tensor flip_horizontal(const Tensor& image) {
  const auto d = dims(image);
  return remap(image, d.h, d.w, [&](std::size_t y, std::size_t x) { return std::pair{y, d.w - 1 - x}; });
}

Tensor flip_vertical(const Tensor& image) {
  const auto d = dims(image);
  return remap(image, d.h, d.w, [&](std::size_t y, std::size_t x) { return std::pair{d.h - 1 - y, x}; });
}

Tensor shift_image(const Tensor& image, int dy, int dx) {
  const auto d = dims(image);
  const auto v = image.data();
  std::vector<double> out(image.size(), 0.0);
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        const auto ty = static_cast<std::ptrdiff_t>(y) + dy;
        const auto tx = static_cast<std::ptrdiff_t>(x) + dx;
        if (ty < 0 || tx < 0 || ty >= static_cast<std::ptrdiff_t>(d.h) ||
            tx >= static_cast<std::ptrdiff_t>(d.w)) {
          continue;
        }
        out[(c * d.h + static_cast<std::size_t>(ty)) * d.w + static_cast<std::size_t>(tx)] =
            v[(c * d.h + y) * d.w + x];
      }
  return Tensor(image.shape(), std::move(out));
}

Tensor rotate_quarter_turns(const Tensor& image, int turns) {
  const auto d = dims(image);
  turns = ((turns % 4) + 4) % 4;
  switch (turns) {
    case 0:
      return image;
    case 2:
      return remap(image, d.h, d.w,
                   [&](std::size_t y, std::size_t x) { return std::pair{d.h - 1 - y, d.w - 1 - x}; });
    case 1:  // counter-clockwise: out(y, x) = in(x, w - 1 - y)
      return remap(image, d.w, d.h, [&](std::size_t y, std::size_t x) { return std::pair{x, d.w - 1 - y}; });
    default:
      return remap(image, d.w, d.h, [&](std::size_t y, std::size_t x) { return std::pair{d.h - 1 - x, y}; });
  }
}

Tensor apply_classical(const Tensor& image, const ClassicalParams& params) {
  const auto d = dims(image);
  if (params.quarter_turns % 2 != 0 && d.h != d.w) {
    raise(ErrorKind::kInvalidArgument, "odd quarter turns need a square image");
  }
  Tensor out = image;
  if (params.hflip) out = flip_horizontal(out);
  if (params.vflip) out = flip_vertical(out);
  if (params.shift_y != 0 || params.shift_x != 0) out = shift_image(out, params.shift_y, params.shift_x);
  if (params.quarter_turns % 4 != 0) out = rotate_quarter_turns(out, params.quarter_turns);
  return out;
}

Sample classical_augment(const Sample& sample, Rng& rng) {
  Sample out = sample;
  out.image = apply_classical(sample.image, sample_classical_params(rng, sample.image.shape()));
  return out;
}

void MixupConfig::validate() const {
  if (!(alpha > 0.0)) raise(ErrorKind::kInvalidArgument, "mixup alpha must be > 0");
}

MixedPair mixup(const Tensor& image1, const Tensor& label1, const Tensor& image2,
                const Tensor& label2, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) raise(ErrorKind::kInvalidArgument, "lambda must be in [0, 1]");
  if (!image1.same_shape(image2) || !label1.same_shape(label2)) {
    raise(ErrorKind::kShapeMismatch, "mixup operands differ in shape");
  }
  return {axpy(scale(image1, lambda), 1.0 - lambda, image2),
          axpy(scale(label1, lambda), 1.0 - lambda, label2)};
}

Batch mixup_batch_with(const Batch& batch, std::span<const std::size_t> partners,
                       std::span<const double> lambdas) {
  const std::size_t n = batch.labels.size();
  if (partners.size() != n || lambdas.size() != n) raise(ErrorKind::kShapeMismatch, "mixup plan size");
  const std::size_t per_image = batch.images.size() / n;
  const std::size_t classes = batch.targets.dim(1);
  const auto img = batch.images.data();
  const auto tgt = batch.targets.data();
  std::vector<double> images(batch.images.size()), targets(batch.targets.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = partners[i];
    const double lam = lambdas[i];
    if (j >= n) raise(ErrorKind::kInvalidArgument, "mixup partner out of range");
    if (!(lam >= 0.0 && lam <= 1.0)) raise(ErrorKind::kInvalidArgument, "lambda must be in [0, 1]");
    for (std::size_t k = 0; k < per_image; ++k) {
      images[i * per_image + k] = lam * img[i * per_image + k] + (1.0 - lam) * img[j * per_image + k];
    }
    for (std::size_t k = 0; k < classes; ++k) {
      targets[i * classes + k] = lam * tgt[i * classes + k] + (1.0 - lam) * tgt[j * classes + k];
    }
  }
  return Batch{Tensor(batch.images.shape(), std::move(images)),
               Tensor(batch.targets.shape(), std::move(targets)), batch.labels};
}

Batch mixup_batch(const Batch& batch, const MixupConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n = batch.labels.size();
  if (n < 2) raise(ErrorKind::kInvalidArgument, "mixup needs a batch of at least 2 samples");
  const auto partners = rng.permutation(n);
  std::vector<double> lambdas(n);
  for (auto& l : lambdas) l = rng.beta(cfg.alpha, cfg.alpha);
  return mixup_batch_with(batch, partners, lambdas);
}

std::string CorruptionSpec::label() const {
  std::ostringstream os;
  if (kind == CorruptionKind::kPixelOff) {
    os << "pixel-off:" << pixel_count;
  } else {
    os << "gaussian:" << mu << ':' << sigma;
  }
  return os.str();
}

CorruptionSpec parse_corruption(std::string_view text) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = text.find(':', start);
    parts.push_back(text.substr(start, colon == std::string_view::npos ? colon : colon - start));
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  CorruptionSpec spec;
  if (parts[0] == "pixel-off") {
    spec.kind = CorruptionKind::kPixelOff;
    if (parts.size() > 2) raise(ErrorKind::kConfig, "pixel-off takes one argument");
    if (parts.size() == 2) {
      const double count = parse_number(parts[1]);
      if (count < 0 || count != std::floor(count)) raise(ErrorKind::kConfig, "pixel count must be a whole number");
      spec.pixel_count = static_cast<std::size_t>(count);
    }
  } else if (parts[0] == "gaussian") {
    spec.kind = CorruptionKind::kGaussian;
    if (parts.size() > 3) raise(ErrorKind::kConfig, "gaussian takes mu and sigma");
    if (parts.size() >= 2) spec.mu = parse_number(parts[1]);
    if (parts.size() == 3) spec.sigma = parse_number(parts[2]);
    if (!(spec.sigma >= 0.0)) raise(ErrorKind::kConfig, "gaussian sigma must be >= 0");
  } else {
    raise(ErrorKind::kConfig, "unknown corruption '" + std::string(text) + "'");
  }
  return spec;
}

Tensor corrupt_image(const Tensor& image, const CorruptionSpec& spec, Rng& rng) {
  const auto d = dims(image);
  if (spec.kind == CorruptionKind::kPixelOff) {
    const std::size_t positions = d.h * d.w;
    if (spec.pixel_count > positions) {
      raise(ErrorKind::kInvalidArgument, "pixel count " + std::to_string(spec.pixel_count) +
                                             " exceeds " + std::to_string(positions) + " positions");
    }
    if (spec.pixel_count == 0) return image;
    // Shuffle of all positions, first pixel_count taken: distinct by construction.
    const auto order = rng.permutation(positions);
    std::vector<double> out = image.to_vector();
    for (std::size_t i = 0; i < spec.pixel_count; ++i) {
      for (std::size_t c = 0; c < d.c; ++c) out[c * positions + order[i]] = 0.0;
    }
    return Tensor(image.shape(), std::move(out));
  }
  if (!(spec.sigma >= 0.0)) raise(ErrorKind::kInvalidArgument, "negative-sigma");
  if (spec.sigma == 0.0 && spec.mu == 0.0) return image;
  std::vector<double> out = image.to_vector();
  for (auto& v : out) v = std::clamp(v + spec.mu + spec.sigma * rng.normal(), 0.0, 255.0);
  return Tensor(image.shape(), std::move(out));
}

Sample corrupt(const Sample& sample, const CorruptionSpec& spec, Rng& rng) {
  if (!sample.raw) raise(ErrorKind::kState, "corruptions apply to raw 0-255 images");
  Sample out = sample;
  out.image = corrupt_image(sample.image, spec, rng);
  return out;
}

}  // namespace signreg
