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

#ifndef SIGNREG_SIGN_HPP_
#define SIGNREG_SIGN_HPP_

#include <span>
#include <string>
#include <vector>

#include "signreg/datasets.hpp"
#include "signreg/nn.hpp"
#include "signreg/tensor.hpp"

namespace signreg {

// Where the Jacobian is evaluated at each iteration.
enum class EvalPoint {
  kCurrentIterate,  // at p*_k, re-evaluated every step
  kOriginalPoint,   // always at the untouched input p
};

enum class DeltaNormalization {
  kNone,
  kUnitMaxAbs,  // rescale each step's delta so max |delta_i| == 1
};

std::string_view to_string(EvalPoint point);
std::string_view to_string(DeltaNormalization mode);
EvalPoint eval_point_from_string(std::string_view name);
DeltaNormalization delta_normalization_from_string(std::string_view name);

struct SignConfig {
  std::size_t k = 1;
  std::string tap = kPreLogitsTap;
  double step_scale = 1.0;
  EvalPoint eval_point = EvalPoint::kCurrentIterate;
  DeltaNormalization normalize = DeltaNormalization::kNone;

  void validate() const;
};

struct SignResult {
  Tensor transformed;
  // Accumulated displacement transformed - input, i.e. step_scale * Σ_k delta_k.
  Tensor final_delta;
  // L2 norm of each step's (normalized) delta, one entry per iteration.
  std::vector<double> delta_norms;
};

// Per-sample summed Jacobians of `tap` with respect to the input for a batch
// [batch, input_shape...], dropout disabled. Samples never interact in the
// forward pass, so one backward sweep with an all-ones cotangent yields every
// sample's row sums at once.
Tensor batch_summed_jacobian(const Model& model, const Tensor& batch, const std::string& tap);

// Iterative SIGN on a single sample shaped like model.input_shape():
//   p*_0 = p;  p*_{k+1} = p*_k + step_scale * delta_{k+1}
// where delta_{k+1} is the summed Jacobian of the tap at the chosen point.
// Negative values are kept; throws kNonFinite if a delta diverges.
SignResult sign_transform(const Model& model, const Tensor& input, const SignConfig& cfg);

// Same as sign_transform for every sample of a batch; row i of each result is
// bit-identical to sign_transform on sample i.
std::vector<SignResult> sign_transform_batch(const Model& model, const Tensor& batch,
                                             const SignConfig& cfg);

// Originals followed, per config, by one transformed copy of every sample
// with its label unchanged and a provenance record attached.
std::vector<Sample> transform_dataset(const Model& model, std::span<const Sample> samples,
                                      const std::vector<SignConfig>& configs,
                                      std::size_t chunk = 64);

// The accumulated deltas alone, labels preserved.
std::vector<Sample> delta_only_dataset(const Model& model, std::span<const Sample> samples,
                                       const SignConfig& cfg, std::size_t chunk = 64);

// Min-max rescale to 0-255 for viewing; stored samples keep raw values.
Tensor display_rescale(const Tensor& image);

}  // namespace signreg

#endif  // SIGNREG_SIGN_HPP_
