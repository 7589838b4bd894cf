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

#ifndef SIGNREG_NN_HPP_
#define SIGNREG_NN_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "signreg/autodiff.hpp"
#include "signreg/tensor.hpp"

namespace signreg {

inline constexpr const char* kPreLogitsTap = "pre-logits";
inline constexpr const char* kLogitsTap = "logits";

enum class LayerKind { kConv2d, kRelu, kMaxPool2d, kDropout, kFlatten, kDense, kUncertaintyHead };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

// Parameters of a layer live in the model's store under "<name>.weight" and
// "<name>.bias" (the uncertainty head uses "<name>.f.*" and "<name>.sigma.*").
struct Layer {
  LayerKind kind;
  std::string name;
  std::size_t in = 0;      // dense: fan-in; conv: input channels
  std::size_t out = 0;     // dense: units; conv: output channels
  std::size_t kernel = 0;  // conv kernel size, maxpool window
  double drop_prob = 0.0;
};

using ParamStore = std::map<std::string, Tensor>;

struct ForwardOptions {
  bool train = false;    // enables dropout
  Rng* rng = nullptr;    // required when train is true and any dropout is active
  // Stop once this tap has been produced.
  std::optional<std::string> stop_at_tap;
};

struct ModelOutput {
  NodeRef logits;
  std::optional<NodeRef> sigma;  // present with an uncertainty head
  std::map<std::string, NodeRef> taps;
};

struct Prediction {
  Tensor logits;
  std::optional<Tensor> sigma;
};

// Ordered layer stack. Taps name positions in the stack: position p is the
// value after the first p layers, so position 0 is the input itself.
class Model {
 public:
  Model(Shape input_shape, std::vector<Layer> layers, ParamStore params,
        std::map<std::string, std::size_t> taps);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const ParamStore& params() const noexcept { return params_; }
  const std::map<std::string, std::size_t>& taps() const noexcept { return taps_; }
  bool has_tap(const std::string& name) const { return taps_.contains(name); }
  bool has_uncertainty_head() const;

  // Replaces the parameter values; names and shapes must match exactly.
  void set_params(ParamStore params);

  // `input` holds a batch: [batch, input_shape...].
  ModelOutput forward(Tape& tape, NodeRef input, const ForwardOptions& options = {}) const;

  // Eager inference with dropout disabled.
  Prediction predict(const Tensor& batch) const;

  std::size_t parameter_count() const;

 private:
  void validate();

  Shape input_shape_;
  std::vector<Layer> layers_;
  ParamStore params_;
  std::map<std::string, std::size_t> taps_;
  std::size_t num_classes_ = 0;
};

Model build_basic_cnn(const Shape& input_shape, std::size_t num_classes, double drop_prob = 0.3,
                      std::uint64_t seed = 0);
Model build_small_mlp(const Shape& input_shape, const std::vector<std::size_t>& hidden,
                      std::size_t num_classes, std::uint64_t seed = 0);
inline Model build_small_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                             std::size_t num_classes, std::uint64_t seed = 0) {
  return build_small_mlp(Shape{input_dim}, hidden, num_classes, seed);
}

// Swaps the final classifier for parallel unary (f) and sigma branches fed
// by the pre-logits features. The f branch keeps the old classifier weights;
// sigma goes through softplus so it is always positive.
Model attach_uncertainty_head(const Model& model, std::uint64_t seed = 0);

// Declarative description used by configs and pipelines.
struct ModelSpec {
  std::string arch = "basic-cnn";  // basic-cnn | small-mlp
  Shape input_shape{3, 32, 32};
  std::size_t num_classes = 10;
  std::vector<std::size_t> hidden{64};  // small-mlp only
  double drop_prob = 0.3;               // basic-cnn only
  bool uncertainty_head = false;
  std::uint64_t init_seed = 0;
};

Model build_model(const ModelSpec& spec);

// Checkpoint: 8-byte magic "SGNRCKPT", u64 little-endian header length, a JSON
// header {version, input_shape, layers, taps, tensors[{name, shape, offset}],
// meta}, then raw little-endian f64 tensor data.
inline constexpr const char* kCheckpointVersion = "signreg-ckpt-1";

struct Checkpoint {
  Model model;
  std::string meta_json;  // free-form JSON object carried alongside the model
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& meta_json = "{}");
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over parameter names, shapes and bytes, as 16 hex digits.
std::string model_checksum(const Model& model);

}  // namespace signreg

#endif  // SIGNREG_NN_HPP_
