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

#include "signreg/sign.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "signreg/error.hpp"
#include "signreg/parallel.hpp"

namespace signreg {
namespace {

Tensor normalize_rows(const Tensor& delta, std::size_t rows) {
  const std::size_t per = delta.size() / rows;
  std::vector<double> out = delta.to_vector();
  for (std::size_t r = 0; r < rows; ++r) {
    double m = 0.0;
    for (std::size_t i = 0; i < per; ++i) m = std::max(m, std::abs(out[r * per + i]));
    if (m == 0.0) continue;
    for (std::size_t i = 0; i < per; ++i) out[r * per + i] /= m;
  }
  return Tensor(delta.shape(), std::move(out));
}

// Index of the first row holding a NaN/Inf, if any.
std::optional<std::size_t> first_nonfinite_row(const Tensor& t, std::size_t rows) {
  const std::size_t per = t.size() / rows;
  const auto v = t.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) return i / per;
  }
  return std::nullopt;
}

std::vector<SignResult> run_batch(const Model& model, const Tensor& batch, const SignConfig& cfg,
                                  std::optional<std::size_t> index_base) {
  cfg.validate();
  const std::size_t rows = batch.dim(0);
  const std::size_t per = batch.size() / rows;
  auto fail = [&](std::size_t row, std::size_t iteration) {
    std::string where = index_base ? "sample " + std::to_string(*index_base + row) + ": " : "";
    raise(ErrorKind::kNonFinite, where + "non-finite delta at iteration " +
                                     std::to_string(iteration + 1) + " (transform diverged)");
  };

  Tensor current = batch;
  Tensor accumulated = zeros(batch.shape());
  std::vector<std::vector<double>> norms(rows);
  std::optional<Tensor> fixed_delta;
  for (std::size_t k = 0; k < cfg.k; ++k) {
    Tensor delta;
    if (cfg.eval_point == EvalPoint::kOriginalPoint && fixed_delta) {
      delta = *fixed_delta;
    } else {
      const Tensor& at = cfg.eval_point == EvalPoint::kOriginalPoint ? batch : current;
      delta = batch_summed_jacobian(model, at, cfg.tap);
      if (auto bad = first_nonfinite_row(delta, rows)) fail(*bad, k);
      if (cfg.normalize == DeltaNormalization::kUnitMaxAbs) delta = normalize_rows(delta, rows);
      if (cfg.eval_point == EvalPoint::kOriginalPoint) fixed_delta = delta;
    }
    const auto d = delta.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double sq = 0.0;
      for (std::size_t i = 0; i < per; ++i) sq += d[r * per + i] * d[r * per + i];
      norms[r].push_back(std::sqrt(sq));
    }
    current = axpy(current, cfg.step_scale, delta);
    accumulated = axpy(accumulated, cfg.step_scale, delta);
    if (auto bad = first_nonfinite_row(current, rows)) fail(*bad, k);
  }

  std::vector<SignResult> out;
  out.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    out.push_back(SignResult{slice_leading(current, r), slice_leading(accumulated, r),
                             std::move(norms[r])});
  }
  return out;
}

Tensor as_batch(const Model& model, std::span<const Sample> samples, std::size_t begin,
                std::size_t end) {
  std::vector<Tensor> images;
  images.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    if (samples[i].image.shape() != model.input_shape()) {
      raise(ErrorKind::kShapeMismatch, "sample " + std::to_string(i) + " has shape " +
                                           shape_to_string(samples[i].image.shape()) +
                                           ", model expects " + shape_to_string(model.input_shape()));
    }
    images.push_back(samples[i].image);
  }
  return stack(images);
}

Provenance provenance_for(const std::string& checksum, const SignConfig& cfg, const char* kind) {
  return Provenance{kind,
                    checksum,
                    cfg.k,
                    cfg.step_scale,
                    cfg.tap,
                    std::string(to_string(cfg.eval_point)),
                    std::string(to_string(cfg.normalize))};
}

template <typename Emit>
void for_each_chunk(const Model& model, std::span<const Sample> samples, const SignConfig& cfg,
                    std::size_t chunk, Emit emit) {
  chunk = std::max<std::size_t>(chunk, 1);
  const std::size_t chunks = (samples.size() + chunk - 1) / chunk;
  std::vector<std::vector<SignResult>> results(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * chunk, end = std::min(samples.size(), begin + chunk);
    results[c] = run_batch(model, as_batch(model, samples, begin, end), cfg, begin);
  });
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t j = 0; j < results[c].size(); ++j) emit(c * chunk + j, std::move(results[c][j]));
  }
}

}  // namespace

std::string_view to_string(EvalPoint point) {
  return point == EvalPoint::kCurrentIterate ? "current-iterate" : "original-point";
}

std::string_view to_string(DeltaNormalization mode) {
  return mode == DeltaNormalization::kNone ? "none" : "unit-max-abs";
}

EvalPoint eval_point_from_string(std::string_view name) {
  if (name == "current-iterate") return EvalPoint::kCurrentIterate;
  if (name == "original-point") return EvalPoint::kOriginalPoint;
  raise(ErrorKind::kConfig, "unknown eval point '" + std::string(name) + "'");
}

DeltaNormalization delta_normalization_from_string(std::string_view name) {
  if (name == "none") return DeltaNormalization::kNone;
  if (name == "unit-max-abs") return DeltaNormalization::kUnitMaxAbs;
  raise(ErrorKind::kConfig, "unknown delta normalization '" + std::string(name) + "'");
}

void SignConfig::validate() const {
  if (k < 1) raise(ErrorKind::kInvalidArgument, "SIGN iteration count k must be >= 1");
  if (!(step_scale > 0.0) || !std::isfinite(step_scale)) {
    raise(ErrorKind::kInvalidArgument, "SIGN step scale must be a positive finite number");
  }
  if (tap.empty()) raise(ErrorKind::kInvalidArgument, "SIGN tap name is empty");
}

Tensor batch_summed_jacobian(const Model& model, const Tensor& batch, const std::string& tap) {
  if (!model.has_tap(tap)) raise(ErrorKind::kMissingTap, "model has no tap '" + tap + "'");
  Tape tape;
  const NodeRef input = tape.input(batch);
  ForwardOptions options;
  options.stop_at_tap = tap;
  const auto out = model.forward(tape, input, options);
  return summed_jacobian(tape, out.taps.at(tap));
}

SignResult sign_transform(const Model& model, const Tensor& input, const SignConfig& cfg) {
  if (input.shape() != model.input_shape()) {
    raise(ErrorKind::kShapeMismatch, "input " + shape_to_string(input.shape()) +
                                         " does not match model input " +
                                         shape_to_string(model.input_shape()));
  }
  Shape batched{1};
  batched.insert(batched.end(), input.shape().begin(), input.shape().end());
  return std::move(run_batch(model, input.reshaped(batched), cfg, std::nullopt).front());
}

std::vector<SignResult> sign_transform_batch(const Model& model, const Tensor& batch,
                                             const SignConfig& cfg) {
  return run_batch(model, batch, cfg, 0);
}

std::vector<Sample> transform_dataset(const Model& model, std::span<const Sample> samples,
                                      const std::vector<SignConfig>& configs, std::size_t chunk) {
  for (const auto& cfg : configs) cfg.validate();
  std::vector<Sample> out(samples.begin(), samples.end());
  if (configs.empty() || samples.empty()) return out;
  const std::string checksum = model_checksum(model);
  out.reserve(samples.size() * (configs.size() + 1));
  for (const auto& cfg : configs) {
    const auto prov = provenance_for(checksum, cfg, "sign");
    for_each_chunk(model, samples, cfg, chunk, [&](std::size_t i, SignResult r) {
      Sample s = samples[i];
      s.image = std::move(r.transformed);
      s.provenance = prov;
      out.push_back(std::move(s));
    });
  }
  return out;
}

std::vector<Sample> delta_only_dataset(const Model& model, std::span<const Sample> samples,
                                       const SignConfig& cfg, std::size_t chunk) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(samples.size());
  const auto prov = provenance_for(model_checksum(model), cfg, "sign-delta");
  for_each_chunk(model, samples, cfg, chunk, [&](std::size_t i, SignResult r) {
    Sample s = samples[i];
    s.image = std::move(r.final_delta);
    s.provenance = prov;
    out.push_back(std::move(s));
  });
  return out;
}

Tensor display_rescale(const Tensor& image) {
  const auto v = image.data();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  std::vector<double> out(v.size(), 0.0);
  if (range > 0.0) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = 255.0 * (v[i] - *lo) / range;
  }
  return Tensor(image.shape(), std::move(out));
}

}  // namespace signreg
