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

// Measurement protocols: per-class accuracy, the low-confidence bucket,
// corruption robustness, OOD tables, transferability and PCA projections.

#ifndef SIGNREG_EVALHARNESS_HPP_
#define SIGNREG_EVALHARNESS_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "signreg/augment.hpp"
#include "signreg/datasets.hpp"
#include "signreg/nn.hpp"
#include "signreg/rng.hpp"
#include "signreg/sign.hpp"
#include "signreg/training.hpp"

namespace signreg {

// Correct predictions with top-class probability at or below this value
// land in the low-confidence bucket.
inline constexpr double kLowConfidenceThreshold = 0.5;

struct SampleRecord {
  std::size_t id = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
  double top_prob = 0.0;
  std::optional<double> uncertainty;  // only with an uncertainty head
  std::string split;

  bool correct() const noexcept { return label == predicted; }
};

struct BucketStats {
  std::size_t count = 0;
  std::optional<double> mean_probability;  // absent when count == 0
  std::optional<double> mean_uncertainty;
};

struct ClassRow {
  std::size_t label = 0;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::optional<double> accuracy;  // absent when the class has no samples
  BucketStats bucket;
};

struct CorruptionResult {
  std::string spec;
  std::vector<double> accuracies;  // one per repeat
  double mean = 0.0;
  double std = 0.0;  // population std over repeats
};

struct EvalReport {
  std::vector<ClassRow> per_class;
  std::size_t total = 0;
  std::size_t correct = 0;
  double mean_accuracy = 0.0;
  BucketStats low_confidence;
  std::optional<double> min_correct_probability;
  std::vector<CorruptionResult> corruption;
  std::optional<std::vector<ClassRow>> ood;
};

struct Evaluation {
  EvalReport report;
  std::vector<SampleRecord> records;
};

struct EvalOptions {
  // MC draws for models with an uncertainty head; ignored otherwise.
  std::size_t mc_samples = 20;
  std::uint64_t seed = 0;
  std::string split = "test";
};

// Builds a report from per-sample records alone.
EvalReport summarize(std::span<const SampleRecord> records, std::size_t num_classes);

Evaluation evaluate(const Model& model, std::span<const Sample> samples, const EvalOptions& options = {});

std::optional<double> min_correct_probability(const Model& model, std::span<const Sample> samples,
                                              const EvalOptions& options = {});

// `samples` are raw; each draw is corrupted, then normalized with `stats`
// when given.
std::vector<CorruptionResult> robustness_suite(const Model& model, std::span<const Sample> samples,
                                               std::span<const CorruptionSpec> specs, std::size_t repeats,
                                               const Rng& rng, const std::optional<NormStats>& stats,
                                               const EvalOptions& options = {});

// Per-class table restricted to the classes present in `samples`.
std::vector<ClassRow> ood_evaluate(const Model& model, std::span<const Sample> samples,
                                   const EvalOptions& options = {});

struct TransferResult {
  Evaluation transfer;  // target trained on the SIGN-augmented set
  Evaluation control;   // target trained on the plain set, same seeds
  Model source;
};

TransferResult transferability_protocol(const ModelSpec& source_spec, const ModelSpec& target_spec,
                                        const DatasetSplit& data, const std::vector<SignConfig>& sign_cfgs,
                                        const TrainConfig& source_cfg, const TrainConfig& target_cfg,
                                        const EvalOptions& options = {});

// Trains `source`, replaces every sample of every split by its accumulated
// SIGN delta (standardized with the delta training split's statistics), and
// trains a fresh probe on the deltas alone.
struct DeltaOnlyResult {
  Evaluation probe_eval;  // on the test deltas
  double chance = 0.0;
  Model source;
  Model probe;
};

DeltaOnlyResult delta_only_protocol(const ModelSpec& source_spec, const TrainConfig& source_cfg,
                                    const ModelSpec& probe_spec, const TrainConfig& probe_cfg,
                                    const SignConfig& sign_cfg, const DatasetSplit& data,
                                    const EvalOptions& options = {});

struct ProjectionRow {
  double x = 0.0;
  double y = 0.0;
  std::size_t label = 0;
  std::string split;
};

struct ProjectionExport {
  std::vector<ProjectionRow> rows;
  std::vector<double> explained_variance;  // eigenvalues of the two components
  std::vector<std::vector<double>> components;
};

// PCA of centered activations via power iteration with deflation.
ProjectionExport project_features(const Model& model, std::span<const Sample> samples,
                                  const std::string& tap, const std::string& split = "test");
ProjectionExport project_rows(const std::vector<std::vector<double>>& rows, std::span<const std::size_t> labels,
                              const std::string& split);

// ---- Serialization ---------------------------------------------------------

void write_records_csv(const std::string& path, std::span<const SampleRecord> records);
std::vector<SampleRecord> read_records_csv(const std::string& path);
void write_projection_csv(const std::string& path, const ProjectionExport& projection);
std::string report_to_json(const EvalReport& report, const std::vector<std::string>& class_names = {});

}  // namespace signreg

#endif  // SIGNREG_EVALHARNESS_HPP_
