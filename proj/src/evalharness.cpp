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

#include "signreg/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "signreg/error.hpp"

namespace signreg {
namespace {

constexpr std::size_t kEvalChunk = 256;
constexpr double kPowerTolerance = 1e-9;
constexpr std::size_t kPowerMaxIterations = 200000;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<ClassRow> class_rows(std::span<const SampleRecord> records, std::size_t num_classes) {
  std::vector<ClassRow> rows(num_classes);
  std::vector<double> prob_sum(num_classes, 0.0), unc_sum(num_classes, 0.0);
  std::vector<std::size_t> unc_count(num_classes, 0);
  for (std::size_t c = 0; c < num_classes; ++c) rows[c].label = c;
  for (const auto& r : records) {
    if (r.label >= num_classes) raise(ErrorKind::kInvalidArgument, "record label out of range");
    auto& row = rows[r.label];
    ++row.total;
    if (!r.correct()) continue;
    ++row.correct;
    if (r.top_prob <= kLowConfidenceThreshold) {
      ++row.bucket.count;
      prob_sum[r.label] += r.top_prob;
      if (r.uncertainty) {
        unc_sum[r.label] += *r.uncertainty;
        ++unc_count[r.label];
      }
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& row = rows[c];
    if (row.total > 0) row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.total);
    if (row.bucket.count > 0) {
      row.bucket.mean_probability = prob_sum[c] / static_cast<double>(row.bucket.count);
      if (unc_count[c] > 0) row.bucket.mean_uncertainty = unc_sum[c] / static_cast<double>(unc_count[c]);
    }
  }
  return rows;
}

std::vector<Sample> normalized_copy(std::span<const Sample> samples, const std::optional<NormStats>& stats) {
  if (stats) return normalize_samples(samples, *stats);
  return {samples.begin(), samples.end()};
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void fix_sign(std::vector<double>& v) {
  for (double x : v) {
    if (std::abs(x) > 1e-12) {
      if (x < 0.0) {
        for (auto& y : v) y = -y;
      }
      return;
    }
  }
}

// Leading eigenpair of the symmetric matrix `m` (row-major, n x n).
std::pair<double, std::vector<double>> power_iteration(const std::vector<double>& m, std::size_t n,
                                                       std::size_t component) {
  Rng rng = Rng(0x9ca).split(component);
  std::vector<double> v(n), w(n);
  for (auto& x : v) x = rng.normal();
  double norm = std::sqrt(dot(v, v));
  for (auto& x : v) x /= norm;
  for (std::size_t it = 0; it < kPowerMaxIterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += m[i * n + j] * v[j];
      w[i] = s;
    }
    norm = std::sqrt(dot(w, w));
    if (norm == 0.0) return {0.0, std::vector<double>(n, 0.0)};
    for (auto& x : w) x /= norm;
    fix_sign(w);
    double diff = 0.0;
    for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, std::abs(w[i] - v[i]));
    v.swap(w);
    if (diff < kPowerTolerance) break;
  }
  // Rayleigh quotient.
  double lambda = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += m[i * n + j] * v[j];
    lambda += v[i] * s;
  }
  return {lambda, v};
}

}  // namespace

EvalReport summarize(std::span<const SampleRecord> records, std::size_t num_classes) {
  if (records.empty()) raise(ErrorKind::kInvalidArgument, "cannot evaluate an empty sample list");
  EvalReport report;
  report.per_class = class_rows(records, num_classes);
  double prob_sum = 0.0, unc_sum = 0.0;
  std::size_t unc_count = 0;
  for (const auto& r : records) {
    ++report.total;
    if (!r.correct()) continue;
    ++report.correct;
    if (!report.min_correct_probability || r.top_prob < *report.min_correct_probability) {
      report.min_correct_probability = r.top_prob;
    }
    if (r.top_prob <= kLowConfidenceThreshold) {
      ++report.low_confidence.count;
      prob_sum += r.top_prob;
      if (r.uncertainty) {
        unc_sum += *r.uncertainty;
        ++unc_count;
      }
    }
  }
  report.mean_accuracy = static_cast<double>(report.correct) / static_cast<double>(report.total);
  if (report.low_confidence.count > 0) {
    report.low_confidence.mean_probability = prob_sum / static_cast<double>(report.low_confidence.count);
    if (unc_count > 0) report.low_confidence.mean_uncertainty = unc_sum / static_cast<double>(unc_count);
  }
  return report;
}

Evaluation evaluate(const Model& model, std::span<const Sample> samples, const EvalOptions& options) {
  if (samples.empty()) raise(ErrorKind::kInvalidArgument, "cannot evaluate an empty sample list");
  const std::size_t classes = model.num_classes();
  const bool mc = model.has_uncertainty_head();
  if (mc && options.mc_samples == 0) raise(ErrorKind::kInvalidArgument, "mc samples T must be >= 1");
  Rng rng(options.seed);
  Evaluation out;
  out.records.reserve(samples.size());
  std::vector<double> probs(classes), noisy(classes);
  for (std::size_t begin = 0; begin < samples.size(); begin += kEvalChunk) {
    const auto part = samples.subspan(begin, std::min(kEvalChunk, samples.size() - begin));
    const Batch batch = make_batch(part, classes);
    const Prediction pred = model.predict(batch.images);
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto f = pred.logits.data().subspan(i * classes, classes);
      SampleRecord rec;
      rec.id = begin + i;
      rec.label = part[i].label;
      rec.split = options.split;
      if (mc) {
        const auto sigma = pred.sigma->data().subspan(i * classes, classes);
        std::fill(probs.begin(), probs.end(), 0.0);
        for (std::size_t t = 0; t < options.mc_samples; ++t) {
          for (std::size_t c = 0; c < classes; ++c) noisy[c] = f[c] + sigma[c] * rng.normal();
          const auto p = softmax(noisy);
          for (std::size_t c = 0; c < classes; ++c) probs[c] += p[c];
        }
        for (auto& p : probs) p /= static_cast<double>(options.mc_samples);
        double s = 0.0;
        for (double v : sigma) s += v;
        rec.uncertainty = s / static_cast<double>(classes);
      } else {
        probs = softmax(f);
      }
      rec.predicted = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      rec.top_prob = probs[rec.predicted];
      out.records.push_back(std::move(rec));
    }
  }
  out.report = summarize(out.records, classes);
  return out;
}

std::optional<double> min_correct_probability(const Model& model, std::span<const Sample> samples,
                                              const EvalOptions& options) {
  return evaluate(model, samples, options).report.min_correct_probability;
}

std::vector<CorruptionResult> robustness_suite(const Model& model, std::span<const Sample> samples,
                                               std::span<const CorruptionSpec> specs, std::size_t repeats,
                                               const Rng& rng, const std::optional<NormStats>& stats,
                                               const EvalOptions& options) {
  if (repeats == 0) raise(ErrorKind::kInvalidArgument, "robustness suite needs at least one repeat");
  std::vector<CorruptionResult> results;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    CorruptionResult res;
    res.spec = specs[s].label();
    const Rng spec_rng = rng.split(s);
    for (std::size_t r = 0; r < repeats; ++r) {
      Rng draw = spec_rng.split(r);
      std::vector<Sample> corrupted;
      corrupted.reserve(samples.size());
      for (const auto& sample : samples) corrupted.push_back(corrupt(sample, specs[s], draw));
      const auto ready = normalized_copy(corrupted, stats);
      res.accuracies.push_back(evaluate(model, ready, options).report.mean_accuracy);
    }
    double sum = 0.0;
    for (double a : res.accuracies) sum += a;
    res.mean = sum / static_cast<double>(repeats);
    double var = 0.0;
    for (double a : res.accuracies) var += (a - res.mean) * (a - res.mean);
    res.std = std::sqrt(var / static_cast<double>(repeats));
    results.push_back(std::move(res));
  }
  return results;
}

std::vector<ClassRow> ood_evaluate(const Model& model, std::span<const Sample> samples,
                                   const EvalOptions& options) {
  const auto eval = evaluate(model, samples, options);
  std::vector<ClassRow> present;
  for (const auto& row : eval.report.per_class) {
    if (row.total > 0) present.push_back(row);
  }
  return present;
}

TransferResult transferability_protocol(const ModelSpec& source_spec, const ModelSpec& target_spec,
                                        const DatasetSplit& data, const std::vector<SignConfig>& sign_cfgs,
                                        const TrainConfig& source_cfg, const TrainConfig& target_cfg,
                                        const EvalOptions& options) {
  if (source_spec.arch == target_spec.arch) {
    raise(ErrorKind::kInvalidArgument, "transferability needs two distinct architectures, got " +
                                           source_spec.arch + " twice");
  }
  if (data.test.empty()) raise(ErrorKind::kInvalidArgument, "transferability needs a test split");
  auto source = train(build_model(source_spec), data, source_cfg);

  DatasetSplit augmented = data;
  augmented.train = transform_dataset(source.model, data.train, sign_cfgs);
  TrainConfig cfg = target_cfg;
  if (cfg.strategy == Strategy::kSign) cfg.strategy = Strategy::kNone;
  if (cfg.strategy == Strategy::kSignPlusClassical) cfg.strategy = Strategy::kClassical;

  auto transfer = train(build_model(target_spec), augmented, cfg);
  auto control = train(build_model(target_spec), data, cfg);
  return TransferResult{evaluate(transfer.model, data.test, options), evaluate(control.model, data.test, options),
                        std::move(source.model)};
}

DeltaOnlyResult delta_only_protocol(const ModelSpec& source_spec, const TrainConfig& source_cfg,
                                    const ModelSpec& probe_spec, const TrainConfig& probe_cfg,
                                    const SignConfig& sign_cfg, const DatasetSplit& data,
                                    const EvalOptions& options) {
  if (data.test.empty()) raise(ErrorKind::kInvalidArgument, "delta-only protocol needs a test split");
  auto source = train(build_model(source_spec), data, source_cfg);

  DatasetSplit deltas;
  deltas.class_names = data.class_names;
  auto to_raw_deltas = [&](std::span<const Sample> samples) {
    auto out = delta_only_dataset(source.model, samples, sign_cfg);
    for (auto& s : out) s.raw = true;  // fresh domain, standardized below
    return out;
  };
  deltas.train = to_raw_deltas(data.train);
  deltas.val = to_raw_deltas(data.val);
  deltas.test = to_raw_deltas(data.test);
  normalize(deltas);

  auto probe = train(build_model(probe_spec), deltas, probe_cfg);
  auto eval = evaluate(probe.model, deltas.test, options);
  const double chance = 1.0 / static_cast<double>(source.model.num_classes());
  return DeltaOnlyResult{std::move(eval), chance, std::move(source.model), std::move(probe.model)};
}

ProjectionExport project_rows(const std::vector<std::vector<double>>& rows, std::span<const std::size_t> labels,
                              const std::string& split) {
  if (rows.size() < 3) raise(ErrorKind::kInvalidArgument, "projection needs at least 3 samples");
  if (labels.size() != rows.size()) raise(ErrorKind::kShapeMismatch, "one label per projected row");
  const std::size_t n = rows.size(), d = rows[0].size();
  if (d == 0) raise(ErrorKind::kInvalidShape, "projection rows are empty");
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) raise(ErrorKind::kShapeMismatch, "projection rows differ in length");
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  std::vector<std::vector<double>> centered(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) centered[i][j] = rows[i][j] - mean[j];
  }
  std::vector<double> cov(d * d, 0.0);
  for (const auto& r : centered) {
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) cov[a * d + b] += r[a] * r[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov[a * d + b] /= static_cast<double>(n);
      cov[b * d + a] = cov[a * d + b];
    }
  }
  ProjectionExport out;
  for (std::size_t comp = 0; comp < 2; ++comp) {
    if (comp >= d) {
      out.explained_variance.push_back(0.0);
      out.components.emplace_back(d, 0.0);
      continue;
    }
    auto [lambda, v] = power_iteration(cov, d, comp);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
    }
    out.explained_variance.push_back(lambda);
    out.components.push_back(std::move(v));
  }
  out.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.rows.push_back(ProjectionRow{dot(centered[i], out.components[0]), dot(centered[i], out.components[1]),
                                     labels[i], split});
  }
  return out;
}

ProjectionExport project_features(const Model& model, std::span<const Sample> samples, const std::string& tap,
                                  const std::string& split) {
  if (!model.has_tap(tap)) raise(ErrorKind::kMissingTap, "model has no tap '" + tap + "'");
  if (samples.size() < 3) raise(ErrorKind::kInvalidArgument, "projection needs at least 3 samples");
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
  for (std::size_t begin = 0; begin < samples.size(); begin += kEvalChunk) {
    const auto part = samples.subspan(begin, std::min(kEvalChunk, samples.size() - begin));
    const Batch batch = make_batch(part, model.num_classes());
    Tape tape;
    ForwardOptions opts;
    opts.stop_at_tap = tap;
    const auto out = model.forward(tape, tape.input(batch.images), opts);
    const Tensor& act = tape.value(out.taps.at(tap));
    const std::size_t width = act.size() / part.size();
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto row = act.data().subspan(i * width, width);
      rows.emplace_back(row.begin(), row.end());
      labels.push_back(part[i].label);
    }
  }
  return project_rows(rows, labels, split);
}

void write_records_csv(const std::string& path, std::span<const SampleRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::kIo, "cannot write " + path);
  out << "sample_id,true,predicted,top_prob,uncertainty,split\n";
  for (const auto& r : records) {
    out << r.id << ',' << r.label << ',' << r.predicted << ',' << format_double(r.top_prob) << ','
        << (r.uncertainty ? format_double(*r.uncertainty) : "NA") << ',' << r.split << '\n';
  }
  if (!out) raise(ErrorKind::kIo, "write failed for " + path);
}

std::vector<SampleRecord> read_records_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::kIo, "cannot read " + path);
  std::string line;
  std::getline(in, line);
  if (line != "sample_id,true,predicted,top_prob,uncertainty,split") {
    raise(ErrorKind::kFormat, path + ": unexpected header");
  }
  std::vector<SampleRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) raise(ErrorKind::kFormat, path + ": malformed row '" + line + "'");
    try {
      SampleRecord r;
      r.id = std::stoull(cells[0]);
      r.label = std::stoull(cells[1]);
      r.predicted = std::stoull(cells[2]);
      r.top_prob = std::stod(cells[3]);
      if (cells[4] != "NA") r.uncertainty = std::stod(cells[4]);
      r.split = cells[5];
      records.push_back(std::move(r));
    } catch (const std::logic_error&) {
      raise(ErrorKind::kFormat, path + ": malformed row '" + line + "'");
    }
  }
  return records;
}

void write_projection_csv(const std::string& path, const ProjectionExport& projection) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::kIo, "cannot write " + path);
  out << "x,y,class,split\n";
  for (const auto& r : projection.rows) {
    out << format_double(r.x) << ',' << format_double(r.y) << ',' << r.label << ',' << r.split << '\n';
  }
  if (!out) raise(ErrorKind::kIo, "write failed for " + path);
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json bucket_json(const BucketStats& b) {
  return {{"count", b.count},
          {"mean_probability", optional_json(b.mean_probability)},
          {"mean_uncertainty", optional_json(b.mean_uncertainty)}};
}

nlohmann::ordered_json rows_json(const std::vector<ClassRow>& rows, const std::vector<std::string>& names) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["class"] = r.label;
    if (r.label < names.size()) j["name"] = names[r.label];
    j["total"] = r.total;
    j["correct"] = r.correct;
    j["accuracy"] = optional_json(r.accuracy);
    j["low_confidence"] = bucket_json(r.bucket);
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace

std::string report_to_json(const EvalReport& report, const std::vector<std::string>& class_names) {
  nlohmann::ordered_json j;
  j["total"] = report.total;
  j["correct"] = report.correct;
  j["mean_accuracy"] = report.mean_accuracy;
  j["per_class"] = rows_json(report.per_class, class_names);
  j["low_confidence"] = bucket_json(report.low_confidence);
  j["min_correct_probability"] = optional_json(report.min_correct_probability);
  if (!report.corruption.empty()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : report.corruption) {
      arr.push_back({{"spec", c.spec}, {"accuracies", c.accuracies}, {"mean", c.mean}, {"std", c.std}});
    }
    j["corruption"] = std::move(arr);
  }
  if (report.ood) j["ood"] = rows_json(*report.ood, class_names);
  return j.dump(2) + "\n";
}

}  // namespace signreg
