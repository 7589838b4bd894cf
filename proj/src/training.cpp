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

#include "signreg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "signreg/error.hpp"

namespace signreg {
namespace {

constexpr std::size_t kEvalChunk = 256;

void check_label_rows(const Tensor& targets) {
  const std::size_t rows = targets.dim(0), classes = targets.dim(1);
  const auto y = targets.data();
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += y[i * classes + c];
    if (std::abs(s - 1.0) > 1e-9) {
      raise(ErrorKind::kInvalidArgument,
            "label row " + std::to_string(i) + " sums to " + std::to_string(s) + ", not 1");
    }
  }
}

void check_logits_targets(const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 2 || !logits.same_shape(targets)) {
    raise(ErrorKind::kShapeMismatch, "logits " + shape_to_string(logits.shape()) + " vs targets " +
                                         shape_to_string(targets.shape()));
  }
  check_label_rows(targets);
}

struct CrossEntropyTrace {
  double loss;
  std::vector<double> grad;  // d loss / d logits
};

CrossEntropyTrace cross_entropy_trace(const Tensor& logits, const Tensor& targets) {
  check_logits_targets(logits, targets);
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  const auto z = logits.data();
  const auto y = targets.data();
  CrossEntropyTrace out{0.0, std::vector<double>(logits.size())};
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::span<const double> row(z.data() + i * classes, classes);
    const double lse = log_sum_exp(row);
    double ysum = 0.0, row_loss = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      row_loss -= y[i * classes + c] * (row[c] - lse);
      ysum += y[i * classes + c];
    }
    out.loss += row_loss;
    for (std::size_t c = 0; c < classes; ++c) {
      out.grad[i * classes + c] = (std::exp(row[c] - lse) * ysum - y[i * classes + c]) * inv_rows;
    }
  }
  out.loss *= inv_rows;
  return out;
}

struct AleatoricTrace {
  double loss = 0.0;
  std::vector<double> grad_f;
  std::vector<double> grad_sigma;
};

AleatoricTrace aleatoric_trace(const Tensor& f, const Tensor& sigma, const Tensor& targets,
                               std::size_t mc_samples, Rng& rng, bool want_grad) {
  check_logits_targets(f, targets);
  if (!f.same_shape(sigma)) raise(ErrorKind::kShapeMismatch, "f and sigma differ in shape");
  if (mc_samples == 0) raise(ErrorKind::kInvalidArgument, "aleatoric loss needs T >= 1");
  for (double s : sigma.data()) {
    if (!(s > 0.0)) raise(ErrorKind::kInvalidArgument, "nonpositive sigma in aleatoric loss");
  }
  const std::size_t rows = f.dim(0), classes = f.dim(1), T = mc_samples;
  const auto fv = f.data();
  const auto sv = sigma.data();
  const auto y = targets.data();
  const double inv_rows = 1.0 / static_cast<double>(rows);
  const double log_t = std::log(static_cast<double>(T));

  AleatoricTrace out;
  if (want_grad) {
    out.grad_f.assign(f.size(), 0.0);
    out.grad_sigma.assign(f.size(), 0.0);
  }
  std::vector<double> eps(T * classes), logp(T), xhat(classes);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* fi = fv.data() + i * classes;
    const double* si = sv.data() + i * classes;
    const double* yi = y.data() + i * classes;
    for (auto& e : eps) e = rng.normal();
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < classes; ++c) xhat[c] = fi[c] + si[c] * eps[t * classes + c];
      const double lse = log_sum_exp(xhat);
      double l = 0.0;
      for (std::size_t c = 0; c < classes; ++c) l += yi[c] * (xhat[c] - lse);
      logp[t] = l;
    }
    const double lme = log_sum_exp(logp) - log_t;  // log-mean-exp over draws
    out.loss -= lme * inv_rows;
    if (!want_grad) continue;
    double ysum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) ysum += yi[c];
    for (std::size_t t = 0; t < T; ++t) {
      // Weight of draw t in d(log-mean-exp): softmax over the draws.
      const double w = std::exp(logp[t] - lme - log_t);
      for (std::size_t c = 0; c < classes; ++c) xhat[c] = fi[c] + si[c] * eps[t * classes + c];
      const double lse = log_sum_exp(xhat);
      for (std::size_t c = 0; c < classes; ++c) {
        const double dl = yi[c] - std::exp(xhat[c] - lse) * ysum;
        const double g = -inv_rows * w * dl;
        out.grad_f[i * classes + c] += g;
        out.grad_sigma[i * classes + c] += g * eps[t * classes + c];
      }
    }
  }
  return out;
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

LossAccuracy evaluate_split(const Model& model, std::span<const Sample> samples) {
  const std::size_t classes = model.num_classes();
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < samples.size(); begin += kEvalChunk) {
    const auto part = samples.subspan(begin, std::min(kEvalChunk, samples.size() - begin));
    Batch b = make_batch(part, classes);
    const Tensor logits = model.predict(b.images).logits;
    std::vector<double> hard(b.labels.size() * classes, 0.0);
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
      hard[i * classes + b.labels[i]] = 1.0;
      if (argmax_row(logits.data().subspan(i * classes, classes)) == b.labels[i]) ++correct;
    }
    loss += cross_entropy(logits, Tensor(logits.shape(), std::move(hard))) *
            static_cast<double>(part.size());
  }
  const auto n = static_cast<double>(samples.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

double log_sum_exp(std::span<const double> values) {
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(logits[i] - lse);
  return out;
}

double cross_entropy(const Tensor& logits, const Tensor& targets) {
  check_logits_targets(logits, targets);
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const auto row = logits.data().subspan(i * classes, classes);
    const double lse = log_sum_exp(row);
    for (std::size_t c = 0; c < classes; ++c) loss -= targets[i * classes + c] * (row[c] - lse);
  }
  return loss / static_cast<double>(rows);
}

NodeRef cross_entropy(Tape& tape, NodeRef logits, const Tensor& targets) {
  auto trace = cross_entropy_trace(tape.value(logits), targets);
  Tensor grad(tape.value(logits).shape(), std::move(trace.grad));
  return tape.record(OpKind::kCrossEntropy, {logits}, Tensor::scalar(trace.loss),
                     [grad](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<std::optional<Tensor>>{scale(grad, g[0])};
                     });
}

double aleatoric_loss(const Tensor& f, const Tensor& sigma, std::span<const std::size_t> labels,
                      std::size_t mc_samples, Rng& rng) {
  if (f.rank() != 2 || labels.size() != f.dim(0)) {
    raise(ErrorKind::kShapeMismatch, "one label per row of f is required");
  }
  const std::size_t classes = f.dim(1);
  std::vector<double> targets(f.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) raise(ErrorKind::kInvalidArgument, "label out of range");
    targets[i * classes + labels[i]] = 1.0;
  }
  return aleatoric_trace(f, sigma, Tensor(f.shape(), std::move(targets)), mc_samples, rng, false).loss;
}

NodeRef aleatoric_loss(Tape& tape, NodeRef f, NodeRef sigma, const Tensor& targets,
                       std::size_t mc_samples, Rng& rng) {
  auto trace = aleatoric_trace(tape.value(f), tape.value(sigma), targets, mc_samples, rng, true);
  const Shape shape = tape.value(f).shape();
  Tensor gf(shape, std::move(trace.grad_f)), gs(shape, std::move(trace.grad_sigma));
  return tape.record(OpKind::kAleatoricLoss, {f, sigma}, Tensor::scalar(trace.loss),
                     [gf, gs](const Tensor& g, const std::vector<bool>& need) {
                       std::vector<std::optional<Tensor>> out(2);
                       if (need[0]) out[0] = scale(gf, g[0]);
                       if (need[1]) out[1] = scale(gs, g[0]);
                       return out;
                     });
}

void Optimizer::step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr) {
  ++steps_;
  for (auto& [name, value] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (!g.same_shape(value)) raise(ErrorKind::kShapeMismatch, "gradient shape for " + name);
    if (cfg_.kind == OptimizerKind::kSgdMomentum) {
      auto [it, fresh] = first_.try_emplace(name, zeros(value.shape()));
      it->second = axpy(g, cfg_.momentum, it->second);  // v = momentum * v + g
      value = axpy(value, -lr, it->second);
    } else {
      auto [m, fm] = first_.try_emplace(name, zeros(value.shape()));
      auto [v, fv] = second_.try_emplace(name, zeros(value.shape()));
      m->second = axpy(scale(m->second, cfg_.beta1), 1.0 - cfg_.beta1, g);
      v->second = axpy(scale(v->second, cfg_.beta2), 1.0 - cfg_.beta2, mul(g, g));
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
      std::vector<double> out = value.to_vector();
      const auto mv = m->second.data();
      const auto vv = v->second.data();
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= lr * (mv[i] / c1) / (std::sqrt(vv[i] / c2) + cfg_.eps);
      }
      value = Tensor(value.shape(), std::move(out));
    }
  }
}

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::kNone: return "none";
    case Strategy::kClassical: return "classical";
    case Strategy::kMixup: return "mixup";
    case Strategy::kSign: return "sign";
    case Strategy::kSignPlusClassical: return "sign-plus-classical";
  }
  return "none";
}

Strategy strategy_from_string(std::string_view name) {
  for (auto s : {Strategy::kNone, Strategy::kClassical, Strategy::kMixup, Strategy::kSign,
                 Strategy::kSignPlusClassical}) {
    if (to_string(s) == name) return s;
  }
  raise(ErrorKind::kConfig, "unknown strategy '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (batch_size < 1) raise(ErrorKind::kInvalidArgument, "batch size must be >= 1");
  if (mc_samples < 1) raise(ErrorKind::kInvalidArgument, "mc samples T must be >= 1");
  if (!(optimizer.lr >= 0.0)) raise(ErrorKind::kInvalidArgument, "learning rate must be >= 0");
  mixup.validate();
}

double learning_rate_at(const TrainConfig& cfg, std::size_t epoch_index) {
  double lr = cfg.optimizer.lr;
  if (!cfg.lr_decay) return lr;
  if (2 * epoch_index >= cfg.epochs) lr *= 0.1;
  if (4 * epoch_index >= 3 * cfg.epochs) lr *= 0.1;
  return lr;
}

TrainResult train(Model model, const DatasetSplit& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  if (data.train.empty()) raise(ErrorKind::kInvalidArgument, "empty dataset: no training samples");
  if (data.val.empty()) raise(ErrorKind::kInvalidArgument, "training needs a validation split");
  if (std::any_of(data.train.begin(), data.train.end(), [](const Sample& s) { return s.raw; })) {
    raise(ErrorKind::kState, "training data must be normalized first");
  }
  const std::size_t classes = model.num_classes();
  if (!data.class_names.empty() && data.num_classes() != classes) {
    raise(ErrorKind::kShapeMismatch, "model has " + std::to_string(classes) + " classes, data has " +
                                         std::to_string(data.num_classes()));
  }
  const bool sign_strategy = cfg.strategy == Strategy::kSign || cfg.strategy == Strategy::kSignPlusClassical;
  if (sign_strategy &&
      std::none_of(data.train.begin(), data.train.end(), [](const Sample& s) {
        return s.provenance && s.provenance->kind == "sign";
      })) {
    raise(ErrorKind::kState, "strategy " + std::string(to_string(cfg.strategy)) +
                                 " needs a SIGN-augmented training set from a trained source model");
  }
  const bool classical = cfg.strategy == Strategy::kClassical || cfg.strategy == Strategy::kSignPlusClassical;
  const bool mixup = cfg.strategy == Strategy::kMixup;

  TrainResult result{model, {}};
  Optimizer optimizer(cfg.optimizer);
  ParamStore params = model.params();
  double best = -1.0;
  const Rng root(cfg.seed);
  const std::size_t n = data.train.size();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    Rng epoch_rng = root.split(epoch);
    Rng aug_rng = epoch_rng.split(1), drop_rng = epoch_rng.split(2), mc_rng = epoch_rng.split(3);
    const auto order = epoch_rng.permutation(n);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      Batch batch;
      if (classical) {
        std::vector<Sample> augmented;
        augmented.reserve(idx.size());
        for (auto i : idx) augmented.push_back(classical_augment(data.train[i], aug_rng));
        batch = make_batch(augmented, classes);
      } else {
        batch = make_batch(data.train, idx, classes);
      }
      if (mixup && idx.size() >= 2) batch = mixup_batch(batch, cfg.mixup, aug_rng);

      Tape tape;
      ForwardOptions options;
      options.train = true;
      options.rng = &drop_rng;
      const auto out = model.forward(tape, tape.input(batch.images), options);
      const NodeRef loss = out.sigma
                               ? aleatoric_loss(tape, out.logits, *out.sigma, batch.targets,
                                                cfg.mc_samples, mc_rng)
                               : cross_entropy(tape, out.logits, batch.targets);
      const auto grads = param_gradients(tape, loss);
      loss_sum += tape.value(loss)[0] * static_cast<double>(idx.size());
      const Tensor& logits = tape.value(out.logits);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (argmax_row(logits.data().subspan(i * classes, classes)) == batch.labels[i]) ++correct;
      }
      optimizer.step(params, grads, lr);
      model.set_params(params);
    }
    const auto val = evaluate_split(model, data.val);
    result.report.epochs.push_back(EpochRecord{epoch + 1, loss_sum / static_cast<double>(n),
                                               static_cast<double>(correct) / static_cast<double>(n),
                                               val.loss, val.accuracy});
    if (val.accuracy > best) {
      best = val.accuracy;
      result.model = model;
      result.report.selected_epoch = epoch + 1;
    }
  }
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::vector<SignConfig> default_sign_configs() {
  SignConfig k50;
  k50.k = 50;
  SignConfig k100;
  k100.k = 100;
  return {k50, k100};
}

PipelineResult sign_pipeline(const DatasetSplit& data, const ModelSpec& source_spec,
                             const TrainConfig& pretrain_cfg, const std::vector<SignConfig>& sign_cfgs,
                             const TrainConfig& final_cfg, const std::optional<ModelSpec>& final_spec) {
  if (pretrain_cfg.strategy == Strategy::kSign || pretrain_cfg.strategy == Strategy::kSignPlusClassical) {
    raise(ErrorKind::kConfig, "the source model cannot itself be trained with a SIGN strategy");
  }
  for (const auto& c : sign_cfgs) c.validate();
  auto source = train(build_model(source_spec), data, pretrain_cfg);

  DatasetSplit augmented = data;
  augmented.train = transform_dataset(source.model, data.train, sign_cfgs);

  // The offline copies are already in the training set; what remains of the
  // strategy is whether classical augmentation runs on top.
  TrainConfig cfg = final_cfg;
  if (cfg.strategy == Strategy::kSign) cfg.strategy = Strategy::kNone;
  if (cfg.strategy == Strategy::kSignPlusClassical) cfg.strategy = Strategy::kClassical;
  auto final_run = train(build_model(final_spec.value_or(source_spec)), augmented, cfg);

  return PipelineResult{std::move(source.model), std::move(source.report), std::move(augmented.train),
                        std::move(final_run.model), std::move(final_run.report)};
}

}  // namespace signreg
