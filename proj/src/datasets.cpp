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

#include "signreg/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "json.hpp"
#include "signreg/error.hpp"
#include "signreg/rng.hpp"

namespace signreg {
namespace {

using nlohmann::json;

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = kCifarSide * kCifarSide;
constexpr char kContainerMagic[8] = {'S', 'G', 'N', 'R', 'S', 'M', 'P', 'L'};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise(ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::size_t channel_count(const Tensor& image) { return image.rank() == 3 ? image.dim(0) : 1; }

double clamp_intensity(double v) { return std::clamp(v, 0.0, 255.0); }

}  // namespace

const std::vector<std::string>& cifar10_class_names() {
  static const std::vector<std::string> names{"airplane", "automobile", "bird",  "cat",  "deer",
                                              "dog",      "frog",       "horse", "ship", "truck"};
  return names;
}

Sample decode_cifar10_record(std::span<const std::uint8_t> record) {
  if (record.size() != kCifarRecordBytes) {
    raise(ErrorKind::kFormat, "CIFAR-10 record must be 3073 bytes, got " + std::to_string(record.size()));
  }
  if (record[0] > 9) raise(ErrorKind::kFormat, "CIFAR-10 label byte " + std::to_string(record[0]) + " > 9");
  std::vector<double> pixels(3 * kCifarPixels);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = record[1 + i];
  Sample s;
  s.image = Tensor({3, kCifarSide, kCifarSide}, std::move(pixels));
  s.label = record[0];
  return s;
}

std::vector<std::uint8_t> encode_cifar10_record(const Sample& sample) {
  if (sample.image.shape() != Shape{3, kCifarSide, kCifarSide}) {
    raise(ErrorKind::kShapeMismatch, "CIFAR-10 records hold (3,32,32) images");
  }
  if (sample.label > 9) raise(ErrorKind::kInvalidArgument, "CIFAR-10 labels are 0-9");
  std::vector<std::uint8_t> out(kCifarRecordBytes);
  out[0] = static_cast<std::uint8_t>(sample.label);
  const auto v = sample.image.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[1 + i] = static_cast<std::uint8_t>(std::lround(clamp_intensity(v[i])));
  }
  return out;
}

std::vector<Sample> read_cifar10_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    raise(ErrorKind::kFormat, path.string() + ": wrong file size " + std::to_string(bytes.size()) +
                                  " (not a multiple of 3073)");
  }
  std::vector<Sample> out;
  out.reserve(bytes.size() / kCifarRecordBytes);
  for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
    out.push_back(decode_cifar10_record(
        std::span<const std::uint8_t>(bytes.data() + off, kCifarRecordBytes)));
  }
  return out;
}

DatasetSplit load_cifar10_binary(const std::filesystem::path& dir, const CifarOptions& options) {
  DatasetSplit split;
  split.class_names = cifar10_class_names();
  std::vector<Sample> train;
  for (int i = 1; i <= 5; ++i) {
    const auto path = dir / ("data_batch_" + std::to_string(i) + ".bin");
    if (!std::filesystem::exists(path)) continue;
    auto part = read_cifar10_file(path);
    std::move(part.begin(), part.end(), std::back_inserter(train));
  }
  if (train.empty()) raise(ErrorKind::kIo, "no data_batch_*.bin files in " + dir.string());
  split.test = read_cifar10_file(dir / "test_batch.bin");

  if (options.shuffle_seed) {
    Rng rng(*options.shuffle_seed);
    rng.shuffle(std::span<Sample>(train));
  }
  if (options.max_train > 0 && train.size() > options.max_train) train.resize(options.max_train);
  if (options.max_test > 0 && split.test.size() > options.max_test) split.test.resize(options.max_test);
  if (options.val_count >= train.size()) {
    raise(ErrorKind::kInvalidArgument, "validation carve leaves no training samples");
  }
  const auto cut = static_cast<std::ptrdiff_t>(train.size() - options.val_count);
  split.val.assign(std::make_move_iterator(train.begin() + cut), std::make_move_iterator(train.end()));
  train.erase(train.begin() + cut, train.end());
  split.train = std::move(train);
  return split;
}

DatasetSplit make_synthetic_blobs(std::size_t num_classes, std::size_t samples_per_class,
                                  const Shape& image_shape, double separation, Rng& rng,
                                  const BlobOptions& options) {
  if (!(separation >= 0.0)) raise(ErrorKind::kInvalidArgument, "separation must be >= 0");
  if (num_classes == 0 || samples_per_class == 0) {
    raise(ErrorKind::kInvalidArgument, "blobs need at least one class and one sample");
  }
  if (image_shape.size() != 3) raise(ErrorKind::kInvalidShape, "blob images are (channels, h, w)");
  validate_shape(image_shape);
  const std::size_t channels = image_shape[0], h = image_shape[1], w = image_shape[2];
  const double radius = options.blob_radius > 0.0
                            ? options.blob_radius
                            : std::max(1.0, static_cast<double>(std::min(h, w)) / 8.0);
  // Intensity units of bump amplitude per unit of separation.
  const double amplitude = 6.0 * separation;

  struct ClassPattern {
    double cy, cx;
    std::vector<double> mix;
  };
  std::vector<ClassPattern> patterns;
  const double ring = 0.3 * static_cast<double>(std::min(h, w));
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(num_classes);
    ClassPattern p{(static_cast<double>(h) - 1.0) / 2.0 + ring * std::sin(angle),
                   (static_cast<double>(w) - 1.0) / 2.0 + ring * std::cos(angle),
                   std::vector<double>(channels, 0.5)};
    p.mix[c % channels] = 1.0;
    patterns.push_back(std::move(p));
  }

  auto stamp = [&](std::vector<double>& img, double cy, double cx, const std::vector<double>& mix,
                   double amp) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          img[(ch * h + y) * w + x] +=
              amp * mix[ch] * std::exp(-(dy * dy + dx * dx) / (2.0 * radius * radius));
        }
      }
    }
  };

  auto generate = [&](Rng& r, std::size_t per_class) {
    std::vector<Sample> out;
    out.reserve(per_class * num_classes);
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < num_classes; ++c) {
        std::vector<double> img(channels * h * w, 128.0);
        const auto& p = patterns[c];
        stamp(img, p.cy + r.uniform(-options.jitter, options.jitter),
              p.cx + r.uniform(-options.jitter, options.jitter), p.mix, amplitude);
        for (std::size_t d = 0; d < options.distractors; ++d) {
          std::vector<double> mix(channels, 0.5);
          mix[r.uniform_index(channels)] = 1.0;
          stamp(img, r.uniform(0.0, static_cast<double>(h - 1)),
                r.uniform(0.0, static_cast<double>(w - 1)), mix, amplitude);
        }
        for (auto& v : img) v = clamp_intensity(v + options.noise_sigma * r.normal());
        Sample s;
        s.image = Tensor(image_shape, std::move(img));
        s.label = c;
        out.push_back(std::move(s));
      }
    }
    return out;
  };

  const Rng base(rng.next_u64());
  const std::size_t quarter = std::max<std::size_t>(1, samples_per_class / 4);
  Rng train_rng = base.split(0), val_rng = base.split(1), test_rng = base.split(2);
  DatasetSplit split;
  split.train = generate(train_rng, samples_per_class);
  split.val = generate(val_rng, options.val_per_class ? options.val_per_class : quarter);
  split.test = generate(test_rng, options.test_per_class ? options.test_per_class : quarter);
  for (std::size_t c = 0; c < num_classes; ++c) split.class_names.push_back("class" + std::to_string(c));
  return split;
}

NormStats compute_norm_stats(std::span<const Sample> samples) {
  if (samples.empty()) raise(ErrorKind::kInvalidArgument, "cannot compute statistics of no samples");
  const std::size_t channels = channel_count(samples.front().image);
  std::vector<double> total(channels, 0.0), count(channels, 0.0);
  for (const auto& s : samples) {
    if (channel_count(s.image) != channels) raise(ErrorKind::kShapeMismatch, "mixed channel counts");
    const std::size_t plane = s.image.size() / channels;
    const auto v = s.image.data();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < plane; ++i) total[c] += v[c * plane + i];
      count[c] += static_cast<double>(plane);
    }
  }
  NormStats stats{std::vector<double>(channels), std::vector<double>(channels)};
  for (std::size_t c = 0; c < channels; ++c) stats.mean[c] = total[c] / count[c];
  std::vector<double> sq(channels, 0.0);
  for (const auto& s : samples) {
    const std::size_t plane = s.image.size() / channels;
    const auto v = s.image.data();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = v[c * plane + i] - stats.mean[c];
        sq[c] += d * d;
      }
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    stats.std[c] = std::max(kStdFloor, std::sqrt(sq[c] / count[c]));
  }
  return stats;
}

Tensor normalize_image(const Tensor& image, const NormStats& stats) {
  const std::size_t channels = channel_count(image);
  if (channels != stats.mean.size()) raise(ErrorKind::kShapeMismatch, "channel count vs statistics");
  const std::size_t plane = image.size() / channels;
  std::vector<double> out(image.size());
  const auto v = image.data();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      out[c * plane + i] = (v[c * plane + i] - stats.mean[c]) / stats.std[c];
  return Tensor(image.shape(), std::move(out));
}

Tensor denormalize_image(const Tensor& image, const NormStats& stats) {
  const std::size_t channels = channel_count(image);
  if (channels != stats.mean.size()) raise(ErrorKind::kShapeMismatch, "channel count vs statistics");
  const std::size_t plane = image.size() / channels;
  std::vector<double> out(image.size());
  const auto v = image.data();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      out[c * plane + i] = v[c * plane + i] * stats.std[c] + stats.mean[c];
  return Tensor(image.shape(), std::move(out));
}

std::vector<Sample> normalize_samples(std::span<const Sample> samples, const NormStats& stats) {
  std::vector<Sample> out(samples.begin(), samples.end());
  for (auto& s : out) {
    if (!s.raw) raise(ErrorKind::kState, "sample is already normalized");
    s.image = normalize_image(s.image, stats);
    s.raw = false;
  }
  return out;
}

void normalize(DatasetSplit& split) {
  if (split.normalized) raise(ErrorKind::kState, "double-normalization: split is already normalized");
  if (!split.stats) split.stats = compute_norm_stats(split.train);
  for (auto* part : {&split.train, &split.val, &split.test}) *part = normalize_samples(*part, *split.stats);
  split.normalized = true;
}

void denormalize(DatasetSplit& split) {
  if (!split.normalized || !split.stats) raise(ErrorKind::kState, "split is not normalized");
  for (auto* part : {&split.train, &split.val, &split.test}) {
    for (auto& s : *part) {
      s.image = denormalize_image(s.image, *split.stats);
      s.raw = true;
    }
  }
  split.normalized = false;
}

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::size_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) raise(ErrorKind::kFormat, "malformed PPM header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 24)) raise(ErrorKind::kFormat, "PPM header value too large");
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5' && bytes[1] != '3')) {
    raise(ErrorKind::kFormat, "not a P3/P5/P6 netpbm image");
  }
  const char kind = static_cast<char>(bytes[1]);
  pos = 2;
  const std::size_t width = read_uint(), height = read_uint(), maxval = read_uint();
  if (width == 0 || height == 0 || maxval == 0 || maxval > 255) {
    raise(ErrorKind::kFormat, "unsupported PPM geometry or maxval");
  }
  const std::size_t in_channels = kind == '5' ? 1 : 3;
  const std::size_t n = width * height * in_channels;
  std::vector<double> interleaved(n);
  if (kind == '3') {
    for (auto& v : interleaved) v = static_cast<double>(read_uint());
  } else {
    ++pos;  // single whitespace byte after maxval
    if (bytes.size() < pos + n) raise(ErrorKind::kFormat, "PPM pixel data truncated");
    for (std::size_t i = 0; i < n; ++i) interleaved[i] = bytes[pos + i];
  }
  std::vector<double> planar(3 * width * height);
  const double scale_to_255 = 255.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = (y * width + x) * in_channels + (in_channels == 1 ? 0 : c);
        const double v = interleaved[src];
        planar[(c * height + y) * width + x] = maxval == 255 ? v : v * scale_to_255;
      }
    }
  }
  return Tensor({3, height, width}, std::move(planar));
}

Tensor read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_ppm(bytes);
  } catch (const Error& e) {
    raise(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1)) {
    raise(ErrorKind::kShapeMismatch, "write_ppm expects a (3|1, h, w) image");
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) raise(ErrorKind::kIo, "cannot write " + path.string());
  os << "P6\n" << w << ' ' << h << "\n255\n";
  const auto v = image.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double px = v[((c == 1 ? 0 : ch) * h + y) * w + x];
        os.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(clamp_intensity(px)))));
      }
    }
  }
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) raise(ErrorKind::kShapeMismatch, "resize_bilinear expects (c, h, w)");
  if (height == 0 || width == 0) raise(ErrorKind::kInvalidShape, "resize target must be non-empty");
  const std::size_t c = image.dim(0), ih = image.dim(1), iw = image.dim(2);
  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      t[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(ih, height), tx = taps(iw, width);
  const auto v = image.data();
  std::vector<double> out(c * height * width);
  // a + f * (b - a) keeps constant regions exact.
  auto lerp = [](double a, double b, double f) { return a + f * (b - a); };
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = v.data() + ch * ih * iw;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double top = lerp(plane[ty[y].lo * iw + tx[x].lo], plane[ty[y].lo * iw + tx[x].hi], tx[x].frac);
        const double bot = lerp(plane[ty[y].hi * iw + tx[x].lo], plane[ty[y].hi * iw + tx[x].hi], tx[x].frac);
        out[(ch * height + y) * width + x] = lerp(top, bot, ty[y].frac);
      }
    }
  }
  return Tensor({c, height, width}, std::move(out));
}

std::vector<Sample> load_ood_directory(const std::filesystem::path& dir,
                                       const std::map<std::string, std::size_t>& class_map,
                                       std::size_t height, std::size_t width) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) raise(ErrorKind::kIo, dir.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && entry.path().filename().string().front() != '.') {
      class_dirs.push_back(entry.path());
    }
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  std::vector<Sample> out;
  for (const auto& cdir : class_dirs) {
    const auto name = cdir.filename().string();
    auto it = class_map.find(name);
    if (it == class_map.end()) raise(ErrorKind::kConfig, "unmapped OOD class folder '" + name + "'");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(cdir)) {
      if (entry.is_regular_file() && entry.path().filename().string().front() != '.') {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto ext = f.extension().string();
      if (ext != ".ppm" && ext != ".pgm" && ext != ".pnm") {
        raise(ErrorKind::kFormat, "undecodable file " + f.string() + " (convert images to PPM)");
      }
      Sample s;
      s.image = resize_bilinear(read_ppm(f), height, width);
      s.label = it->second;
      out.push_back(std::move(s));
    }
  }
  return out;
}

void save_samples(const std::filesystem::path& path, std::span<const Sample> samples) {
  json manifest;
  manifest["version"] = kSampleContainerVersion;
  json prov_table = json::array();
  std::vector<Provenance> seen;
  json entries = json::array();
  std::size_t offset = 0;
  for (const auto& s : samples) {
    json e{{"label", s.label}, {"shape", s.image.shape()}, {"offset", offset}, {"raw", s.raw}};
    if (s.soft_label) e["soft_label"] = s.soft_label->to_vector();
    if (s.provenance) {
      auto it = std::find(seen.begin(), seen.end(), *s.provenance);
      if (it == seen.end()) {
        const auto& p = *s.provenance;
        prov_table.push_back({{"kind", p.kind}, {"source_checksum", p.source_checksum}, {"k", p.k},
                              {"step_scale", p.step_scale}, {"tap", p.tap},
                              {"eval_point", p.eval_point}, {"normalize", p.normalize}});
        seen.push_back(p);
        it = seen.end() - 1;
      }
      e["provenance"] = static_cast<std::size_t>(it - seen.begin());
    }
    offset += s.image.size() * sizeof(double);
    entries.push_back(std::move(e));
  }
  manifest["provenance"] = prov_table;
  manifest["samples"] = entries;
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) raise(ErrorKind::kIo, "cannot write " + path.string());
  os.write(kContainerMagic, sizeof(kContainerMagic));
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& s : samples) {
    os.write(reinterpret_cast<const char*>(s.image.data().data()),
             static_cast<std::streamsize>(s.image.size() * sizeof(double)));
  }
  if (!os) raise(ErrorKind::kIo, "failed writing " + path.string());
}

std::vector<Sample> load_samples(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::uint64_t len = 0;
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
    raise(ErrorKind::kFormat, path.string() + " is not a signreg sample container");
  }
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (16 + len > bytes.size()) raise(ErrorKind::kFormat, "sample manifest truncated");
  const auto* blob = bytes.data() + 16 + len;
  const std::size_t blob_size = bytes.size() - 16 - len;
  try {
    const json manifest = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    if (manifest.at("version") != kSampleContainerVersion) {
      raise(ErrorKind::kFormat, "unsupported container version " + manifest.at("version").dump());
    }
    std::vector<Provenance> table;
    for (const auto& p : manifest.at("provenance")) {
      table.push_back(Provenance{p.at("kind"), p.at("source_checksum"), p.at("k"), p.at("step_scale"),
                                 p.at("tap"), p.at("eval_point"), p.at("normalize")});
    }
    std::vector<Sample> out;
    for (const auto& e : manifest.at("samples")) {
      Shape shape = e.at("shape").get<Shape>();
      validate_shape(shape);
      const auto offset = e.at("offset").get<std::size_t>();
      const std::size_t n = shape_size(shape);
      if (offset + n * sizeof(double) > blob_size) raise(ErrorKind::kFormat, "sample data truncated");
      std::vector<double> data(n);
      std::memcpy(data.data(), blob + offset, n * sizeof(double));
      Sample s;
      s.image = Tensor(std::move(shape), std::move(data));
      s.label = e.at("label").get<std::size_t>();
      s.raw = e.at("raw").get<bool>();
      if (e.contains("soft_label")) {
        auto soft = e.at("soft_label").get<std::vector<double>>();
        const std::size_t classes = soft.size();
        s.soft_label = Tensor({classes}, std::move(soft));
      }
      if (e.contains("provenance")) s.provenance = table.at(e.at("provenance").get<std::size_t>());
      out.push_back(std::move(s));
    }
    return out;
  } catch (const json::exception& e) {
    raise(ErrorKind::kFormat, "malformed sample manifest: " + std::string(e.what()));
  } catch (const std::out_of_range&) {
    raise(ErrorKind::kFormat, "sample manifest references a missing provenance record");
  }
}

Tensor one_hot(std::size_t label, std::size_t num_classes) {
  if (label >= num_classes) raise(ErrorKind::kInvalidArgument, "label out of range");
  std::vector<double> v(num_classes, 0.0);
  v[label] = 1.0;
  return Tensor({num_classes}, std::move(v));
}

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices,
                 std::size_t num_classes) {
  if (indices.empty()) raise(ErrorKind::kInvalidArgument, "empty batch");
  const Shape& shape = samples[indices[0]].image.shape();
  const std::size_t per = shape_size(shape);
  std::vector<double> images;
  std::vector<double> targets(indices.size() * num_classes, 0.0);
  images.reserve(indices.size() * per);
  Batch b;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& s = samples[indices[i]];
    if (s.image.shape() != shape) raise(ErrorKind::kShapeMismatch, "batch mixes image shapes");
    if (s.label >= num_classes) raise(ErrorKind::kInvalidArgument, "label out of range");
    images.insert(images.end(), s.image.data().begin(), s.image.data().end());
    // A soft label governs the target only when it is a proper distribution.
    if (s.soft_label && std::abs(sum(*s.soft_label) - 1.0) <= 1e-9) {
      if (s.soft_label->size() != num_classes) raise(ErrorKind::kShapeMismatch, "soft label width");
      std::copy(s.soft_label->data().begin(), s.soft_label->data().end(),
                targets.begin() + static_cast<std::ptrdiff_t>(i * num_classes));
    } else {
      targets[i * num_classes + s.label] = 1.0;
    }
    b.labels.push_back(s.label);
  }
  Shape batch_shape{indices.size()};
  batch_shape.insert(batch_shape.end(), shape.begin(), shape.end());
  b.images = Tensor(std::move(batch_shape), std::move(images));
  b.targets = Tensor({indices.size(), num_classes}, std::move(targets));
  return b;
}

Batch make_batch(std::span<const Sample> samples, std::size_t num_classes) {
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(samples, idx, num_classes);
}

}  // namespace signreg
