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

#include "signreg/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "signreg/error.hpp"

namespace signreg {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint and container formats assume a little-endian host");

constexpr char kCheckpointMagic[8] = {'S', 'G', 'N', 'R', 'C', 'K', 'P', 'T'};

// He/Kaiming uniform on fan-in: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor kaiming_uniform(Rng& rng, Shape shape, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return uniform(rng, std::move(shape), -bound, bound);
}

Layer dense(std::string name, std::size_t in, std::size_t out) {
  return Layer{LayerKind::kDense, std::move(name), in, out, 0, 0.0};
}

Layer conv(std::string name, std::size_t in, std::size_t out, std::size_t k) {
  return Layer{LayerKind::kConv2d, std::move(name), in, out, k, 0.0};
}

Layer simple(LayerKind kind, double drop_prob = 0.0, std::size_t window = 0) {
  return Layer{kind, {}, 0, 0, window, drop_prob};
}

void init_params(const std::vector<Layer>& layers, std::uint64_t seed, ParamStore& params) {
  const Rng root(seed);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    Rng rng = root.split(i);
    if (l.kind == LayerKind::kDense) {
      params[l.name + ".weight"] = kaiming_uniform(rng, {l.in, l.out}, l.in);
      params[l.name + ".bias"] = zeros({l.out});
    } else if (l.kind == LayerKind::kConv2d) {
      params[l.name + ".weight"] =
          kaiming_uniform(rng, {l.out, l.in, l.kernel, l.kernel}, l.in * l.kernel * l.kernel);
      params[l.name + ".bias"] = zeros({l.out});
    }
  }
}

const Tensor& param(const ParamStore& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) raise(ErrorKind::kState, "model is missing parameter " + name);
  return it->second;
}

void expect_param(const ParamStore& params, const std::string& name, const Shape& shape) {
  if (param(params, name).shape() != shape) {
    raise(ErrorKind::kShapeMismatch, "parameter " + name + " has shape " +
                                         shape_to_string(param(params, name).shape()) +
                                         ", expected " + shape_to_string(shape));
  }
}

NodeRef apply_dense(Tape& tape, NodeRef x, const ParamStore& params, const std::string& prefix) {
  auto w = tape.parameter(prefix + ".weight", param(params, prefix + ".weight"));
  auto b = tape.parameter(prefix + ".bias", param(params, prefix + ".bias"));
  return ops::add_bias(tape, ops::matmul(tape, x, w), b);
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool2d: return "maxpool2d";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kDense: return "dense";
    case LayerKind::kUncertaintyHead: return "uncertainty_head";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (auto k : {LayerKind::kConv2d, LayerKind::kRelu, LayerKind::kMaxPool2d, LayerKind::kDropout,
                 LayerKind::kFlatten, LayerKind::kDense, LayerKind::kUncertaintyHead}) {
    if (to_string(k) == name) return k;
  }
  raise(ErrorKind::kFormat, "unknown layer kind '" + std::string(name) + "'");
}

Model::Model(Shape input_shape, std::vector<Layer> layers, ParamStore params,
             std::map<std::string, std::size_t> taps)
    : input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      params_(std::move(params)),
      taps_(std::move(taps)) {
  validate();
}

void Model::validate() {
  validate_shape(input_shape_);
  for (const char* required : {kPreLogitsTap, kLogitsTap}) {
    if (!taps_.contains(required)) {
      raise(ErrorKind::kMissingTap, std::string("model has no '") + required + "' tap");
    }
  }
  for (const auto& [name, pos] : taps_) {
    if (pos > layers_.size()) raise(ErrorKind::kMissingTap, "tap '" + name + "' out of range");
  }
  if (taps_.at(kLogitsTap) != layers_.size()) {
    raise(ErrorKind::kMissingTap, "'logits' tap must be the final layer output");
  }

  // Walk per-sample shapes to check that consecutive layers fit together.
  Shape shape = input_shape_;
  std::size_t expected_params = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + ")";
    switch (l.kind) {
      case LayerKind::kConv2d:
        if (shape.size() != 3 || shape[0] != l.in || l.kernel % 2 == 0) {
          raise(ErrorKind::kShapeMismatch, where + " cannot take " + shape_to_string(shape));
        }
        expect_param(params_, l.name + ".weight", {l.out, l.in, l.kernel, l.kernel});
        expect_param(params_, l.name + ".bias", {l.out});
        expected_params += 2;
        shape = {l.out, shape[1], shape[2]};
        break;
      case LayerKind::kMaxPool2d:
        if (shape.size() != 3 || l.kernel == 0 || shape[1] < l.kernel || shape[2] < l.kernel) {
          raise(ErrorKind::kShapeMismatch, where + " cannot take " + shape_to_string(shape));
        }
        shape = {shape[0], shape[1] / l.kernel, shape[2] / l.kernel};
        break;
      case LayerKind::kFlatten:
        shape = {shape_size(shape)};
        break;
      case LayerKind::kDense:
      case LayerKind::kUncertaintyHead:
        if (shape.size() != 1 || shape[0] != l.in) {
          raise(ErrorKind::kShapeMismatch, where + " cannot take " + shape_to_string(shape));
        }
        if (l.kind == LayerKind::kDense) {
          expect_param(params_, l.name + ".weight", {l.in, l.out});
          expect_param(params_, l.name + ".bias", {l.out});
          expected_params += 2;
        } else {
          if (i + 1 != layers_.size()) raise(ErrorKind::kShapeMismatch, where + " must be last");
          for (const char* branch : {".f", ".sigma"}) {
            expect_param(params_, l.name + branch + ".weight", {l.in, l.out});
            expect_param(params_, l.name + branch + ".bias", {l.out});
          }
          expected_params += 4;
        }
        shape = {l.out};
        break;
      case LayerKind::kDropout:
        if (!(l.drop_prob >= 0.0 && l.drop_prob < 1.0)) {
          raise(ErrorKind::kInvalidArgument, where + " drop probability must be in [0, 1)");
        }
        break;
      case LayerKind::kRelu:
        break;
    }
  }
  if (shape.size() != 1) {
    raise(ErrorKind::kShapeMismatch, "model output must be a vector, got " + shape_to_string(shape));
  }
  if (expected_params != params_.size()) {
    raise(ErrorKind::kState, "parameter store has entries no layer uses");
  }
  num_classes_ = shape[0];
}

bool Model::has_uncertainty_head() const {
  return !layers_.empty() && layers_.back().kind == LayerKind::kUncertaintyHead;
}

void Model::set_params(ParamStore params) {
  if (params.size() != params_.size()) raise(ErrorKind::kState, "parameter set mismatch");
  for (const auto& [name, value] : params_) expect_param(params, name, value.shape());
  params_ = std::move(params);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

ModelOutput Model::forward(Tape& tape, NodeRef input, const ForwardOptions& options) const {
  const Shape& in_shape = tape.value(input).shape();
  if (in_shape.size() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), in_shape.begin() + 1)) {
    raise(ErrorKind::kShapeMismatch, "model expects [batch]+" + shape_to_string(input_shape_) +
                                         ", got " + shape_to_string(in_shape));
  }
  std::optional<std::size_t> stop;
  if (options.stop_at_tap) {
    auto it = taps_.find(*options.stop_at_tap);
    if (it == taps_.end()) raise(ErrorKind::kMissingTap, "no tap '" + *options.stop_at_tap + "'");
    stop = it->second;
  }
  std::multimap<std::size_t, std::string> at_position;
  for (const auto& [name, pos] : taps_) at_position.emplace(pos, name);

  ModelOutput out;
  const std::size_t batch = in_shape[0];
  NodeRef x = input;
  auto record_taps = [&](std::size_t pos) {
    auto [lo, hi] = at_position.equal_range(pos);
    for (auto it = lo; it != hi; ++it) out.taps[it->second] = x;
  };
  record_taps(0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (stop && i >= *stop) break;
    const auto& l = layers_[i];
    switch (l.kind) {
      case LayerKind::kConv2d: {
        auto w = tape.parameter(l.name + ".weight", param(params_, l.name + ".weight"));
        auto b = tape.parameter(l.name + ".bias", param(params_, l.name + ".bias"));
        x = ops::conv2d(tape, x, w, b);
        break;
      }
      case LayerKind::kRelu:
        x = ops::relu(tape, x);
        break;
      case LayerKind::kMaxPool2d:
        x = ops::maxpool2d(tape, x, l.kernel);
        break;
      case LayerKind::kDropout:
        if (options.train && l.drop_prob > 0.0) {
          if (!options.rng) raise(ErrorKind::kInvalidArgument, "training forward needs an rng");
          x = ops::dropout(tape, x, l.drop_prob, *options.rng);
        }
        break;
      case LayerKind::kFlatten:
        x = ops::reshape(tape, x, {batch, shape_size(tape.value(x).shape()) / batch});
        break;
      case LayerKind::kDense:
        x = apply_dense(tape, x, params_, l.name);
        break;
      case LayerKind::kUncertaintyHead: {
        const NodeRef features = x;
        x = apply_dense(tape, features, params_, l.name + ".f");
        out.sigma = ops::softplus(tape, apply_dense(tape, features, params_, l.name + ".sigma"));
        break;
      }
    }
    record_taps(i + 1);
  }
  out.logits = x;
  return out;
}

Prediction Model::predict(const Tensor& batch) const {
  Tape tape;
  const auto out = forward(tape, tape.input(batch));
  Prediction p{tape.value(out.logits), std::nullopt};
  if (out.sigma) p.sigma = tape.value(*out.sigma);
  return p;
}

Model build_basic_cnn(const Shape& input_shape, std::size_t num_classes, double drop_prob,
                      std::uint64_t seed) {
  if (input_shape.size() != 3) {
    raise(ErrorKind::kInvalidShape, "basic-cnn expects (channels, height, width)");
  }
  validate_shape(input_shape);
  if (input_shape[1] < 8 || input_shape[2] < 8) {
    raise(ErrorKind::kInvalidShape, "basic-cnn needs height and width >= 8, got " +
                                        shape_to_string(input_shape));
  }
  if (num_classes == 0) raise(ErrorKind::kInvalidArgument, "num_classes must be >= 1");
  const std::size_t c = input_shape[0];
  const std::size_t flat = 64 * (input_shape[1] / 4) * (input_shape[2] / 4);
  std::vector<Layer> layers{
      conv("conv1", c, 32, 3),      simple(LayerKind::kRelu),
      conv("conv2", 32, 32, 3),     simple(LayerKind::kRelu),
      simple(LayerKind::kMaxPool2d, 0.0, 2), simple(LayerKind::kDropout, drop_prob),
      conv("conv3", 32, 64, 3),     simple(LayerKind::kRelu),
      conv("conv4", 64, 64, 3),     simple(LayerKind::kRelu),
      simple(LayerKind::kMaxPool2d, 0.0, 2), simple(LayerKind::kDropout, drop_prob),
      simple(LayerKind::kFlatten),
      dense("fc1", flat, 512),      simple(LayerKind::kRelu),
      simple(LayerKind::kDropout, drop_prob),
      dense("classifier", 512, num_classes),
  };
  ParamStore params;
  init_params(layers, seed, params);
  const std::size_t n = layers.size();
  return Model(input_shape, std::move(layers), std::move(params),
               {{kPreLogitsTap, n - 1}, {kLogitsTap, n}});
}

Model build_small_mlp(const Shape& input_shape, const std::vector<std::size_t>& hidden,
                      std::size_t num_classes, std::uint64_t seed) {
  validate_shape(input_shape);
  if (hidden.empty()) raise(ErrorKind::kInvalidArgument, "small-mlp needs at least one hidden layer");
  if (num_classes == 0) raise(ErrorKind::kInvalidArgument, "num_classes must be >= 1");
  std::vector<Layer> layers;
  if (input_shape.size() > 1) layers.push_back(simple(LayerKind::kFlatten));
  std::size_t width = shape_size(input_shape);
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] == 0) raise(ErrorKind::kInvalidArgument, "hidden width must be >= 1");
    layers.push_back(dense("hidden" + std::to_string(i + 1), width, hidden[i]));
    layers.push_back(simple(LayerKind::kRelu));
    width = hidden[i];
  }
  layers.push_back(dense("classifier", width, num_classes));
  ParamStore params;
  init_params(layers, seed, params);
  const std::size_t n = layers.size();
  return Model(input_shape, std::move(layers), std::move(params),
               {{kPreLogitsTap, n - 1}, {kLogitsTap, n}});
}

Model attach_uncertainty_head(const Model& model, std::uint64_t seed) {
  if (!model.has_tap(kPreLogitsTap)) raise(ErrorKind::kMissingTap, "model has no 'pre-logits' tap");
  const std::size_t pos = model.taps().at(kPreLogitsTap);
  const auto& layers = model.layers();
  if (pos + 1 != layers.size() || layers.back().kind != LayerKind::kDense) {
    raise(ErrorKind::kMissingTap, "'pre-logits' must feed a single final dense classifier");
  }
  const Layer old = layers.back();
  std::vector<Layer> out_layers(layers.begin(), layers.end() - 1);
  out_layers.push_back(Layer{LayerKind::kUncertaintyHead, "head", old.in, old.out, 0, 0.0});

  ParamStore params = model.params();
  params["head.f.weight"] = params.at(old.name + ".weight");
  params["head.f.bias"] = params.at(old.name + ".bias");
  params.erase(old.name + ".weight");
  params.erase(old.name + ".bias");
  Rng rng = Rng(seed).split(0x5167);
  params["head.sigma.weight"] = kaiming_uniform(rng, {old.in, old.out}, old.in);
  params["head.sigma.bias"] = zeros({old.out});

  auto taps = model.taps();
  taps[kLogitsTap] = out_layers.size();
  return Model(model.input_shape(), std::move(out_layers), std::move(params), std::move(taps));
}

Model build_model(const ModelSpec& spec) {
  Model model = [&] {
    if (spec.arch == "basic-cnn") {
      return build_basic_cnn(spec.input_shape, spec.num_classes, spec.drop_prob, spec.init_seed);
    }
    if (spec.arch == "small-mlp") {
      return build_small_mlp(spec.input_shape, spec.hidden, spec.num_classes, spec.init_seed);
    }
    raise(ErrorKind::kConfig, "unknown architecture '" + spec.arch + "'");
  }();
  if (spec.uncertainty_head) return attach_uncertainty_head(model, spec.init_seed);
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& meta_json) {
  json header;
  header["version"] = kCheckpointVersion;
  header["input_shape"] = model.input_shape();
  json layers = json::array();
  for (const auto& l : model.layers()) {
    layers.push_back({{"kind", to_string(l.kind)}, {"name", l.name}, {"in", l.in},
                      {"out", l.out}, {"kernel", l.kernel}, {"drop_prob", l.drop_prob}});
  }
  header["layers"] = layers;
  header["taps"] = model.taps();
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : model.params()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(double);
  }
  header["tensors"] = tensors;
  header["meta"] = json::parse(meta_json);
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) raise(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, t] : model.params()) {
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) raise(ErrorKind::kIo, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  is.read(magic, sizeof(magic));
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0 || len > (1u << 30)) {
    raise(ErrorKind::kFormat, path.string() + " is not a signreg checkpoint");
  }
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  std::vector<char> blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    const json header = json::parse(text);
    if (header.at("version") != kCheckpointVersion) {
      raise(ErrorKind::kFormat, "unsupported checkpoint version " + header.at("version").dump());
    }
    std::vector<Layer> layers;
    for (const auto& l : header.at("layers")) {
      layers.push_back(Layer{layer_kind_from_string(l.at("kind").get<std::string>()),
                             l.at("name").get<std::string>(), l.at("in").get<std::size_t>(),
                             l.at("out").get<std::size_t>(), l.at("kernel").get<std::size_t>(),
                             l.at("drop_prob").get<double>()});
    }
    ParamStore params;
    for (const auto& t : header.at("tensors")) {
      Shape shape = t.at("shape").get<Shape>();
      validate_shape(shape);
      const auto offset = t.at("offset").get<std::size_t>();
      const std::size_t n = shape_size(shape);
      if (offset + n * sizeof(double) > blob.size()) {
        raise(ErrorKind::kFormat, "checkpoint tensor data truncated");
      }
      std::vector<double> data(n);
      std::memcpy(data.data(), blob.data() + offset, n * sizeof(double));
      params[t.at("name").get<std::string>()] = Tensor(std::move(shape), std::move(data));
    }
    Model model(header.at("input_shape").get<Shape>(), std::move(layers), std::move(params),
                header.at("taps").get<std::map<std::string, std::size_t>>());
    return Checkpoint{std::move(model), header.value("meta", json::object()).dump()};
  } catch (const json::exception& e) {
    raise(ErrorKind::kFormat, "malformed checkpoint header: " + std::string(e.what()));
  }
}

std::string model_checksum(const Model& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : model.params()) {
    feed(name.data(), name.size());
    for (auto e : t.shape()) {
      const std::uint64_t v = e;
      feed(&v, sizeof(v));
    }
    feed(t.data().data(), t.size() * sizeof(double));
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace signreg
