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

#ifndef SIGNREG_TRAINING_HPP_
#define SIGNREG_TRAINING_HPP_

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "signreg/augment.hpp"
#include "signreg/autodiff.hpp"
#include "signreg/datasets.hpp"
#include "signreg/nn.hpp"
#include "signreg/sign.hpp"

namespace signreg {

// ---- Losses ---------------------------------------------------------------------

// Mean over the batch of -Σ_c y_c (z_c - logsumexp(z)). Label rows must sum
// to 1 within 1e-9.
double cross_entropy(const Tensor& logits, const Tensor& targets);
NodeRef cross_entropy(Tape& tape, NodeRef logits, const Tensor& targets);

// Monte-Carlo aleatoric loss. For each row i, T draws eps_t ~ N(0, I) give
// x_t = f_i + sigma_i * eps_t and
//   L_i = log (1/T) Σ_t exp(Σ_c y_ic (x_tc - logsumexp(x_t)))
// which is the per-sample log-likelihood; the returned loss is -mean_i L_i
// so that it can be minimized. Noise is drawn row-major over (i, t, c).
double aleatoric_loss(const Tensor& f, const Tensor& sigma, std::span<const std::size_t> labels,
                      std::size_t mc_samples, Rng& rng);
NodeRef aleatoric_loss(Tape& tape, NodeRef f, NodeRef sigma, const Tensor& targets,
                       std::size_t mc_samples, Rng& rng);

double log_sum_exp(std::span<const double> values);
std::vector<double> softmax(std::span<const double> logits);

// ---- Optimizers -----------------------------------------------------------------

enum class OptimizerKind { kSgdMomentum, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  double lr = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  void step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr);

 private:
  OptimizerConfig cfg_;
  std::map<std::string, Tensor> first_;
  std::map<std::string, Tensor> second_;
  std::size_t steps_ = 0;
};

// ---- Training loop ----------------------------------------------------------------

enum class Strategy { kNone, kClassical, kMixup, kSign, kSignPlusClassical };

std::string_view to_string(Strategy strategy);
Strategy strategy_from_string(std::string_view name);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  OptimizerConfig optimizer;
  bool lr_decay = true;  // x0.1 at 50% and again at 75% of the epochs
  Strategy strategy = Strategy::kNone;
  MixupConfig mixup;
  std::size_t mc_samples = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::optional<std::size_t> selected_epoch;  // argmax val accuracy, first on ties
  double wall_seconds = 0.0;
};

struct TrainResult {
  Model model;  // parameters from the selected epoch (initialization with 0 epochs)
  TrainReport report;
};

double learning_rate_at(const TrainConfig& cfg, std::size_t epoch_index);

// `data` must already be normalized. The sign strategies expect the training
// split to hold SIGN samples (see sign_pipeline); beyond that they behave like
// none / classical.
TrainResult train(Model model, const DatasetSplit& data, const TrainConfig& cfg);

// ---- SIGN pipeline -------------------------------------------------------------

struct PipelineResult {
  Model source;
  TrainReport source_report;
  std::vector<Sample> augmented_train;
  Model final_model;
  TrainReport final_report;
};

std::vector<SignConfig> default_sign_configs();  // K = 50 and K = 100

// 1) trains a source model, 2) adds one SIGN copy of the training set per
// config, 3) trains a fresh model (final_spec, or source_spec when absent) on
// originals plus copies.
PipelineResult sign_pipeline(const DatasetSplit& data, const ModelSpec& source_spec,
                             const TrainConfig& pretrain_cfg, const std::vector<SignConfig>& sign_cfgs,
                             const TrainConfig& final_cfg,
                             const std::optional<ModelSpec>& final_spec = std::nullopt);

}  // namespace signreg

#endif  // SIGNREG_TRAINING_HPP_
