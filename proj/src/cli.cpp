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

#include "signreg/cli.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "signreg/error.hpp"
#include "signreg/evalharness.hpp"
#include "signreg/parallel.hpp"

namespace signreg::cli {
namespace fs = std::filesystem;
using boost::property_tree::ptree;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// One INI section; remembers which keys were read so leftovers can be
// reported as unknown.
class Section {
 public:
  Section(const ptree* node, std::string name) : node_(node), name_(std::move(name)) {}

  bool present() const { return node_ != nullptr; }
  bool has(const std::string& key) const { return node_ && node_->find(key) != node_->not_found(); }

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (!node_) return std::nullopt;
    auto it = node_->find(key);
    if (it == node_->not_found()) return std::nullopt;
    return trim(it->second.data());
  }

  std::string str(const std::string& key, const std::string& fallback) {
    auto v = raw(key);
    return v ? *v : fallback;
  }

  template <typename T>
  T integer(const std::string& key, T fallback, T min_value = 0) {
    auto v = raw(key);
    if (!v) return fallback;
    T out{};
    const auto* end = v->data() + v->size();
    auto [ptr, ec] = std::from_chars(v->data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError(qualified(key), "expected an integer, got '" + *v + "'");
    if (out < min_value) {
      throw ConfigError(qualified(key), "must be >= " + std::to_string(min_value) + ", got " + *v);
    }
    return out;
  }

  double real(const std::string& key, double fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    char* end = nullptr;
    errno = 0;
    const double out = std::strtod(v->c_str(), &end);
    if (v->empty() || end != v->c_str() + v->size() || errno != 0 || !std::isfinite(out)) {
      throw ConfigError(qualified(key), "expected a finite number, got '" + *v + "'");
    }
    return out;
  }

  bool boolean(const std::string& key, bool fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ConfigError(qualified(key), "expected true or false, got '" + *v + "'");
  }

  std::vector<std::size_t> sizes(const std::string& key, const std::vector<std::size_t>& fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    std::vector<std::size_t> out;
    for (const auto& item : split_list(*v)) {
      std::size_t x = 0;
      auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
      if (ec != std::errc() || ptr != item.data() + item.size()) {
        throw ConfigError(qualified(key), "expected a comma-separated list of integers, got '" + *v + "'");
      }
      out.push_back(x);
    }
    return out;
  }

  std::string qualified(const std::string& key) const { return name_ + "." + key; }

  void reject_unknown() const {
    if (!node_) return;
    for (const auto& [key, child] : *node_) {
      if (!used_.count(key)) throw ConfigError(qualified(key), "unknown key");
    }
  }

 private:
  const ptree* node_;
  std::string name_;
  std::set<std::string> used_;
};

const ptree* child(const ptree& root, const std::string& name) {
  auto it = root.find(name);
  return it == root.not_found() ? nullptr : &it->second;
}

fs::path resolve_path(const fs::path& base, const std::string& text) {
  fs::path p(text);
  return p.is_absolute() ? p : base / p;
}

ModelSpec parse_model(Section& s, const ModelSpec& defaults) {
  ModelSpec m = defaults;
  m.arch = s.str("arch", m.arch);
  if (m.arch != "basic-cnn" && m.arch != "small-mlp") {
    throw ConfigError(s.qualified("arch"), "expected basic-cnn or small-mlp, got '" + m.arch + "'");
  }
  m.init_seed = s.integer<std::uint64_t>("init_seed", m.init_seed);
  m.hidden = s.sizes("hidden", m.hidden);
  if (m.arch == "small-mlp" && (m.hidden.empty() || std::count(m.hidden.begin(), m.hidden.end(), 0u))) {
    throw ConfigError(s.qualified("hidden"), "small-mlp needs positive hidden widths");
  }
  m.drop_prob = s.real("drop_prob", m.drop_prob);
  if (m.drop_prob < 0.0 || m.drop_prob >= 1.0) throw ConfigError(s.qualified("drop_prob"), "must be in [0, 1)");
  m.uncertainty_head = s.boolean("uncertainty_head", m.uncertainty_head);
  return m;
}

TrainConfig parse_train(Section& s, const TrainConfig& defaults) {
  TrainConfig t = defaults;
  t.epochs = s.integer<std::size_t>("epochs", t.epochs);
  t.batch_size = s.integer<std::size_t>("batch_size", t.batch_size, 1);
  const std::string opt = s.str("optimizer", t.optimizer.kind == OptimizerKind::kAdam ? "adam" : "sgd-momentum");
  if (opt == "adam") {
    t.optimizer.kind = OptimizerKind::kAdam;
  } else if (opt == "sgd-momentum") {
    t.optimizer.kind = OptimizerKind::kSgdMomentum;
  } else {
    throw ConfigError(s.qualified("optimizer"), "expected sgd-momentum or adam, got '" + opt + "'");
  }
  t.optimizer.lr = s.real("lr", t.optimizer.lr);
  if (t.optimizer.lr < 0.0) throw ConfigError(s.qualified("lr"), "must be >= 0");
  t.optimizer.momentum = s.real("momentum", t.optimizer.momentum);
  t.optimizer.beta1 = s.real("beta1", t.optimizer.beta1);
  t.optimizer.beta2 = s.real("beta2", t.optimizer.beta2);
  t.optimizer.eps = s.real("eps", t.optimizer.eps);
  t.lr_decay = s.boolean("lr_decay", t.lr_decay);
  t.mc_samples = s.integer<std::size_t>("mc_samples", t.mc_samples, 1);
  t.seed = s.integer<std::uint64_t>("seed", t.seed);
  return t;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) raise(ErrorKind::kIo, "write failed for " + path.string());
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

ExperimentConfig load_or_throw(const fs::path& config_path) {
  ExperimentConfig cfg = load_config(config_path);
  set_thread_count(cfg.threads);
  return cfg;
}

std::string report_csv(const TrainReport& report) {
  std::string out = "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto& e : report.epochs) {
    out += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.train_accuracy) + "," +
           fmt(e.val_loss) + "," + fmt(e.val_accuracy) + "\n";
  }
  return out;
}

std::string report_json(const TrainReport& report) {
  nlohmann::ordered_json j;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : report.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"train_accuracy", e.train_accuracy},
                           {"val_loss", e.val_loss},
                           {"val_accuracy", e.val_accuracy}});
  }
  j["selected_epoch"] = report.selected_epoch ? nlohmann::ordered_json(*report.selected_epoch) : nullptr;
  return j.dump(2) + "\n";
}

std::string checkpoint_meta(const DatasetSplit& data, const std::string& role, Strategy strategy) {
  nlohmann::ordered_json j;
  j["role"] = role;
  j["strategy"] = std::string(to_string(strategy));
  j["class_names"] = data.class_names;
  if (data.stats) j["norm_stats"] = {{"mean", data.stats->mean}, {"std", data.stats->std}};
  return j.dump();
}

std::optional<NormStats> stats_from_meta(const std::string& meta) {
  const auto j = nlohmann::json::parse(meta, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("norm_stats")) return std::nullopt;
  NormStats s;
  s.mean = j["norm_stats"].at("mean").get<std::vector<double>>();
  s.std = j["norm_stats"].at("std").get<std::vector<double>>();
  return s;
}

// Config-level checkpoint load: a missing file is a user error.
Checkpoint open_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("checkpoint", "no such file: " + path.string());
  return load_checkpoint(path);
}

void require_compatible(const Model& model, std::span<const Sample> samples, const std::string& what) {
  for (const auto& s : samples) {
    if (s.image.shape() != model.input_shape()) {
      raise(ErrorKind::kShapeMismatch, what + " sample shape " + shape_to_string(s.image.shape()) +
                                           " does not match the model input " +
                                           shape_to_string(model.input_shape()));
    }
    if (s.label >= model.num_classes()) {
      raise(ErrorKind::kShapeMismatch, what + " label " + std::to_string(s.label) + " exceeds the model's " +
                                           std::to_string(model.num_classes()) + " classes");
    }
  }
}

ModelSpec fit_spec(ModelSpec spec, const DatasetSplit& data) {
  spec.input_shape = data.train.empty() ? Shape{} : data.train.front().image.shape();
  spec.num_classes = data.num_classes();
  return spec;
}

TrainConfig final_stage(TrainConfig cfg) {
  if (cfg.strategy == Strategy::kSign) cfg.strategy = Strategy::kNone;
  if (cfg.strategy == Strategy::kSignPlusClassical) cfg.strategy = Strategy::kClassical;
  return cfg;
}

}  // namespace

// ---- Config ------------------------------------------------------------------

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  ptree root;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("", std::string("malformed config: ") + e.what());
  }
  static const std::set<std::string> kSections = {"run", "dataset", "model", "strategy", "source", "train", "eval"};
  for (const auto& [name, node] : root) {
    if (!kSections.count(name)) {
      if (node.empty()) throw ConfigError(name, "keys must sit inside a [section]");
      throw ConfigError(name, "unknown section");
    }
  }

  ExperimentConfig cfg;
  Section run(child(root, "run"), "run");
  cfg.output_dir = resolve_path(base_dir, run.str("output_dir", "run"));
  cfg.threads = run.integer<std::size_t>("threads", 1, 1);
  if (const char* env = std::getenv(kThreadsEnv); env && *env) {
    std::size_t n = 0;
    const std::string v = env;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || ptr != v.data() + v.size() || n == 0) {
      throw ConfigError(kThreadsEnv, "expected a positive integer, got '" + v + "'");
    }
    cfg.threads = n;
  }
  run.reject_unknown();

  Section ds(child(root, "dataset"), "dataset");
  auto& d = cfg.dataset;
  d.kind = ds.str("kind", d.kind);
  d.split_seed = ds.integer<std::uint64_t>("split_seed", d.split_seed);
  if (d.kind == "blobs") {
    d.classes = ds.integer<std::size_t>("classes", d.classes, 2);
    d.samples_per_class = ds.integer<std::size_t>("samples_per_class", d.samples_per_class, 1);
    d.channels = ds.integer<std::size_t>("channels", d.channels, 1);
    d.height = ds.integer<std::size_t>("height", d.height, 1);
    d.width = ds.integer<std::size_t>("width", d.width, 1);
    d.separation = ds.real("separation", d.separation);
    if (d.separation < 0.0) throw ConfigError("dataset.separation", "must be >= 0");
    d.blobs.val_per_class = ds.integer<std::size_t>("val_per_class", d.blobs.val_per_class);
    d.blobs.test_per_class = ds.integer<std::size_t>("test_per_class", d.blobs.test_per_class);
    d.blobs.noise_sigma = ds.real("noise_sigma", d.blobs.noise_sigma);
    if (d.blobs.noise_sigma < 0.0) throw ConfigError("dataset.noise_sigma", "must be >= 0");
    d.blobs.blob_radius = ds.real("blob_radius", d.blobs.blob_radius);
    d.blobs.jitter = ds.real("jitter", d.blobs.jitter);
    d.blobs.distractors = ds.integer<std::size_t>("distractors", d.blobs.distractors);
  } else if (d.kind == "cifar10") {
    const auto path = ds.raw("path");
    if (!path || path->empty()) throw ConfigError("dataset.path", "required for kind = cifar10");
    d.path = resolve_path(base_dir, *path);
    if (!fs::is_directory(d.path)) throw ConfigError("dataset.path", "no such directory: " + d.path.string());
    d.cifar.val_count = ds.integer<std::size_t>("val_count", d.cifar.val_count);
    d.cifar.max_train = ds.integer<std::size_t>("max_train", d.cifar.max_train);
    d.cifar.max_test = ds.integer<std::size_t>("max_test", d.cifar.max_test);
    d.cifar.shuffle_seed = d.split_seed;
  } else {
    throw ConfigError("dataset.kind", "expected blobs or cifar10, got '" + d.kind + "'");
  }
  ds.reject_unknown();

  Section model(child(root, "model"), "model");
  cfg.model = parse_model(model, cfg.model);
  model.reject_unknown();

  Section train(child(root, "train"), "train");
  cfg.train = parse_train(train, cfg.train);
  train.reject_unknown();

  Section st(child(root, "strategy"), "strategy");
  try {
    cfg.strategy = strategy_from_string(st.str("name", "none"));
  } catch (const Error& e) {
    throw ConfigError("strategy.name", "expected one of none, classical, mixup, sign, sign-plus-classical");
  }
  cfg.train.strategy = cfg.strategy;
  cfg.train.mixup.alpha = st.real("mixup_alpha", cfg.train.mixup.alpha);
  if (!(cfg.train.mixup.alpha > 0.0)) throw ConfigError("strategy.mixup_alpha", "must be > 0");
  {
    const auto ks = st.sizes("sign_k", {50, 100});
    SignConfig base;
    base.step_scale = st.real("sign_step_scale", base.step_scale);
    if (!(base.step_scale > 0.0)) throw ConfigError("strategy.sign_step_scale", "must be > 0");
    base.tap = st.str("sign_tap", base.tap);
    try {
      base.eval_point = eval_point_from_string(st.str("sign_eval_point", std::string(to_string(base.eval_point))));
    } catch (const Error&) {
      throw ConfigError("strategy.sign_eval_point", "expected current-iterate or original-point");
    }
    try {
      base.normalize = delta_normalization_from_string(st.str("sign_normalize", std::string(to_string(base.normalize))));
    } catch (const Error&) {
      throw ConfigError("strategy.sign_normalize", "expected none or unit-max-abs");
    }
    for (auto k : ks) {
      if (k == 0) throw ConfigError("strategy.sign_k", "iteration counts must be >= 1");
      SignConfig c = base;
      c.k = k;
      cfg.sign.push_back(c);
    }
  }
  st.reject_unknown();

  const ptree* src_node = child(root, "source");
  if (src_node) {
    Section src(src_node, "source");
    SourceConfig sc;
    if (auto ck = src.raw("checkpoint"); ck && !ck->empty()) {
      sc.checkpoint = resolve_path(base_dir, *ck);
      if (!fs::exists(*sc.checkpoint)) {
        throw ConfigError("source.checkpoint", "no such file: " + sc.checkpoint->string());
      }
    }
    sc.model = parse_model(src, cfg.model);
    TrainConfig base = cfg.train;
    base.strategy = Strategy::kNone;
    sc.train = parse_train(src, base);
    src.reject_unknown();
    cfg.source = sc;
  }
  if (cfg.uses_sign() && !cfg.source) {
    throw ConfigError("source", "strategy '" + std::string(to_string(cfg.strategy)) +
                                    "' needs a [source] section describing the trained source model");
  }
  if (cfg.uses_sign() && cfg.sign.empty()) throw ConfigError("strategy.sign_k", "at least one K is required");

  Section ev(child(root, "eval"), "eval");
  if (auto specs = ev.raw("corruptions")) {
    for (const auto& item : split_list(*specs)) {
      try {
        cfg.eval.corruptions.push_back(parse_corruption(item));
      } catch (const Error& e) {
        throw ConfigError("eval.corruptions", e.what());
      }
    }
  }
  cfg.eval.repeats = ev.integer<std::size_t>("repeats", cfg.eval.repeats, 1);
  if (auto p = ev.raw("ood_path"); p && !p->empty()) {
    cfg.eval.ood_path = resolve_path(base_dir, *p);
    if (!fs::is_directory(*cfg.eval.ood_path)) {
      throw ConfigError("eval.ood_path", "no such directory: " + cfg.eval.ood_path->string());
    }
  }
  if (auto m = ev.raw("ood_class_map")) {
    for (const auto& item : split_list(*m)) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos || colon == 0) {
        throw ConfigError("eval.ood_class_map", "expected folder:class entries, got '" + item + "'");
      }
      const std::string label = trim(item.substr(colon + 1));
      std::size_t idx = 0;
      auto [ptr, ec] = std::from_chars(label.data(), label.data() + label.size(), idx);
      if (ec != std::errc() || ptr != label.data() + label.size()) {
        throw ConfigError("eval.ood_class_map", "class of '" + item + "' must be an index");
      }
      cfg.eval.ood_class_map[trim(item.substr(0, colon))] = idx;
    }
  }
  if (cfg.eval.ood_path && cfg.eval.ood_class_map.empty()) {
    throw ConfigError("eval.ood_class_map", "required when eval.ood_path is set");
  }
  cfg.eval.projection = ev.boolean("projection", cfg.eval.projection);
  cfg.eval.projection_tap = ev.str("projection_tap", cfg.eval.projection_tap);
  cfg.eval.mc_samples = ev.integer<std::size_t>("mc_samples", cfg.eval.mc_samples, 1);
  cfg.eval.seed = ev.integer<std::uint64_t>("seed", cfg.eval.seed);
  ev.reject_unknown();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

void model_ini(std::ostream& o, const ModelSpec& m) {
  o << "arch = " << m.arch << "\n"
    << "init_seed = " << m.init_seed << "\n"
    << "hidden = " << join(m.hidden) << "\n"
    << "drop_prob = " << fmt(m.drop_prob) << "\n"
    << "uncertainty_head = " << (m.uncertainty_head ? "true" : "false") << "\n";
}

void train_ini(std::ostream& o, const TrainConfig& t) {
  o << "epochs = " << t.epochs << "\n"
    << "batch_size = " << t.batch_size << "\n"
    << "optimizer = " << (t.optimizer.kind == OptimizerKind::kAdam ? "adam" : "sgd-momentum") << "\n"
    << "lr = " << fmt(t.optimizer.lr) << "\n"
    << "momentum = " << fmt(t.optimizer.momentum) << "\n"
    << "beta1 = " << fmt(t.optimizer.beta1) << "\n"
    << "beta2 = " << fmt(t.optimizer.beta2) << "\n"
    << "eps = " << fmt(t.optimizer.eps) << "\n"
    << "lr_decay = " << (t.lr_decay ? "true" : "false") << "\n"
    << "mc_samples = " << t.mc_samples << "\n"
    << "seed = " << t.seed << "\n";
}

}  // namespace

std::string to_ini(const ExperimentConfig& cfg) {
  std::ostringstream o;
  o << "; resolved configuration\n\n[run]\n"
    << "output_dir = " << fs::absolute(cfg.output_dir).lexically_normal().string() << "\n"
    << "threads = " << cfg.threads << "\n\n[dataset]\n"
    << "kind = " << cfg.dataset.kind << "\n"
    << "split_seed = " << cfg.dataset.split_seed << "\n";
  const auto& d = cfg.dataset;
  if (d.kind == "blobs") {
    o << "classes = " << d.classes << "\n"
      << "samples_per_class = " << d.samples_per_class << "\n"
      << "channels = " << d.channels << "\n"
      << "height = " << d.height << "\n"
      << "width = " << d.width << "\n"
      << "separation = " << fmt(d.separation) << "\n"
      << "val_per_class = " << d.blobs.val_per_class << "\n"
      << "test_per_class = " << d.blobs.test_per_class << "\n"
      << "noise_sigma = " << fmt(d.blobs.noise_sigma) << "\n"
      << "blob_radius = " << fmt(d.blobs.blob_radius) << "\n"
      << "jitter = " << fmt(d.blobs.jitter) << "\n"
      << "distractors = " << d.blobs.distractors << "\n";
  } else {
    o << "path = " << fs::absolute(d.path).lexically_normal().string() << "\n"
      << "val_count = " << d.cifar.val_count << "\n"
      << "max_train = " << d.cifar.max_train << "\n"
      << "max_test = " << d.cifar.max_test << "\n";
  }
  o << "\n[model]\n";
  model_ini(o, cfg.model);
  o << "\n[strategy]\nname = " << to_string(cfg.strategy) << "\n"
    << "mixup_alpha = " << fmt(cfg.train.mixup.alpha) << "\n";
  if (!cfg.sign.empty()) {
    std::vector<std::size_t> ks;
    for (const auto& s : cfg.sign) ks.push_back(s.k);
    const auto& s = cfg.sign.front();
    o << "sign_k = " << join(ks) << "\n"
      << "sign_step_scale = " << fmt(s.step_scale) << "\n"
      << "sign_tap = " << s.tap << "\n"
      << "sign_eval_point = " << to_string(s.eval_point) << "\n"
      << "sign_normalize = " << to_string(s.normalize) << "\n";
  }
  if (cfg.source) {
    o << "\n[source]\n";
    if (cfg.source->checkpoint) {
      o << "checkpoint = " << fs::absolute(*cfg.source->checkpoint).lexically_normal().string() << "\n";
    }
    model_ini(o, cfg.source->model);
    train_ini(o, cfg.source->train);
  }
  o << "\n[train]\n";
  train_ini(o, cfg.train);
  o << "\n[eval]\n";
  if (!cfg.eval.corruptions.empty()) {
    o << "corruptions = ";
    for (std::size_t i = 0; i < cfg.eval.corruptions.size(); ++i) {
      o << (i ? ", " : "") << cfg.eval.corruptions[i].label();
    }
    o << "\n";
  }
  o << "repeats = " << cfg.eval.repeats << "\n";
  if (cfg.eval.ood_path) o << "ood_path = " << fs::absolute(*cfg.eval.ood_path).lexically_normal().string() << "\n";
  if (!cfg.eval.ood_class_map.empty()) {
    o << "ood_class_map = ";
    bool first = true;
    for (const auto& [folder, idx] : cfg.eval.ood_class_map) {
      o << (first ? "" : ", ") << folder << ":" << idx;
      first = false;
    }
    o << "\n";
  }
  o << "projection = " << (cfg.eval.projection ? "true" : "false") << "\n"
    << "projection_tap = " << cfg.eval.projection_tap << "\n"
    << "mc_samples = " << cfg.eval.mc_samples << "\n"
    << "seed = " << cfg.eval.seed << "\n";
  return o.str();
}

DatasetSplit build_dataset(const DatasetConfig& cfg) {
  if (cfg.kind == "cifar10") return load_cifar10_binary(cfg.path, cfg.cifar);
  Rng rng(cfg.split_seed);
  return make_synthetic_blobs(cfg.classes, cfg.samples_per_class, Shape{cfg.channels, cfg.height, cfg.width},
                              cfg.separation, rng, cfg.blobs);
}

// ---- Commands ----------------------------------------------------------------

int cmd_train(const fs::path& config_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_or_throw(config_path);
    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "config.resolved.ini", to_ini(cfg));

    DatasetSplit data = build_dataset(cfg.dataset);
    normalize(data);
    ModelSpec spec = fit_spec(cfg.model, data);
    double wall = 0.0;

    if (cfg.uses_sign()) {
      Model source = [&] {
        if (cfg.source->checkpoint) {
          auto ck = load_checkpoint(*cfg.source->checkpoint);
          require_compatible(ck.model, data.train, "training");
          return ck.model;
        }
        auto src = train(build_model(fit_spec(cfg.source->model, data)), data, cfg.source->train);
        write_text(cfg.output_dir / "source_report.csv", report_csv(src.report));
        write_text(cfg.output_dir / "source_report.json", report_json(src.report));
        wall += src.report.wall_seconds;
        return src.model;
      }();
      save_checkpoint(cfg.output_dir / "source.ckpt", source, checkpoint_meta(data, "source", Strategy::kNone));
      DatasetSplit augmented = data;
      augmented.train = transform_dataset(source, data.train, cfg.sign);
      save_samples(cfg.output_dir / "sign_train.smpl", augmented.train);
      out << "sign: " << data.train.size() << " originals -> " << augmented.train.size() << " training samples\n";
      auto result = train(build_model(spec), augmented, final_stage(cfg.train));
      wall += result.report.wall_seconds;
      save_checkpoint(cfg.output_dir / "model.ckpt", result.model, checkpoint_meta(data, "final", cfg.strategy));
      write_text(cfg.output_dir / "train_report.csv", report_csv(result.report));
      write_text(cfg.output_dir / "train_report.json", report_json(result.report));
      if (result.report.selected_epoch) {
        out << "selected epoch " << *result.report.selected_epoch << ", val accuracy "
            << result.report.epochs[*result.report.selected_epoch - 1].val_accuracy << "\n";
      }
    } else {
      auto result = train(build_model(spec), data, cfg.train);
      wall += result.report.wall_seconds;
      save_checkpoint(cfg.output_dir / "model.ckpt", result.model, checkpoint_meta(data, "final", cfg.strategy));
      write_text(cfg.output_dir / "train_report.csv", report_csv(result.report));
      write_text(cfg.output_dir / "train_report.json", report_json(result.report));
      if (result.report.selected_epoch) {
        out << "selected epoch " << *result.report.selected_epoch << ", val accuracy "
            << result.report.epochs[*result.report.selected_epoch - 1].val_accuracy << "\n";
      } else {
        out << "0 epochs: saved the initial model\n";
      }
    }
    // Timing lives in its own file so the reports above stay bit-reproducible.
    write_text(cfg.output_dir / "timing.json", "{\"wall_seconds\": " + fmt(wall) + "}\n");
    out << "wrote " << cfg.output_dir.string() << "\n";
    return kExitOk;
  });
}

int cmd_transform(const fs::path& config_path, const fs::path& checkpoint, const std::string& input,
                  const fs::path& out_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_or_throw(config_path);
    auto ck = open_checkpoint(checkpoint);
    std::vector<Sample> samples;
    if (input == "train" || input == "val" || input == "test") {
      DatasetSplit data = build_dataset(cfg.dataset);
      samples = input == "train" ? data.train : input == "val" ? data.val : data.test;
    } else {
      if (!fs::exists(input)) throw ConfigError("input", "no such file: " + input);
      samples = load_samples(input);
    }
    const auto stats = stats_from_meta(ck.meta_json);
    if (stats && std::any_of(samples.begin(), samples.end(), [](const Sample& s) { return s.raw; })) {
      for (auto& s : samples) {
        if (s.raw) s = normalize_samples(std::span<const Sample>(&s, 1), *stats).front();
      }
    }
    require_compatible(ck.model, samples, "input");
    const auto transformed = transform_dataset(ck.model, samples, cfg.sign);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    save_samples(out_path, transformed);
    write_text(fs::path(out_path.string() + ".ini"), to_ini(cfg));
    out << "wrote " << transformed.size() << " samples (" << samples.size() << " originals, " << cfg.sign.size()
        << " SIGN configs) to " << out_path.string() << "\n";
    return kExitOk;
  });
}

namespace {

std::string na(const std::optional<double>& v, int precision = 4) {
  if (!v) return "N/A";
  std::ostringstream o;
  o << std::fixed << std::setprecision(precision) << *v;
  return o.str();
}

void print_rows(std::ostream& out, const std::vector<ClassRow>& rows, const std::vector<std::string>& names) {
  out << std::left << std::setw(14) << "class" << std::setw(10) << "accuracy" << "p<=0.5 (#)       uncertainty\n";
  for (const auto& r : rows) {
    const std::string name = r.label < names.size() ? names[r.label] : std::to_string(r.label);
    out << std::left << std::setw(14) << name << std::setw(10) << na(r.accuracy)
        << std::setw(17) << (na(r.bucket.mean_probability) + " (" + std::to_string(r.bucket.count) + ")")
        << na(r.bucket.mean_uncertainty) << "\n";
  }
}

void print_report(std::ostream& out, const EvalReport& report, const std::vector<std::string>& names) {
  print_rows(out, report.per_class, names);
  out << std::left << std::setw(14) << "mean" << std::setw(10) << na(report.mean_accuracy)
      << std::setw(17)
      << (na(report.low_confidence.mean_probability) + " (" + std::to_string(report.low_confidence.count) + ")")
      << na(report.low_confidence.mean_uncertainty) << "\n";
  out << "min correct probability: " << na(report.min_correct_probability) << "\n";
}

std::vector<std::string> names_from_meta(const std::string& meta, std::size_t classes) {
  const auto j = nlohmann::json::parse(meta, nullptr, false);
  if (!j.is_discarded() && j.is_object() && j.contains("class_names")) {
    auto names = j["class_names"].get<std::vector<std::string>>();
    if (names.size() == classes) return names;
  }
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) names.push_back(std::to_string(c));
  return names;
}

}  // namespace

int cmd_eval(const fs::path& config_path, const fs::path& checkpoint, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_or_throw(config_path);
    auto ck = open_checkpoint(checkpoint);
    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "eval_config.resolved.ini", to_ini(cfg));

    const DatasetSplit raw = build_dataset(cfg.dataset);
    const auto stats = stats_from_meta(ck.meta_json);
    const auto ready = [&](std::span<const Sample> s) {
      return stats ? normalize_samples(s, *stats) : std::vector<Sample>(s.begin(), s.end());
    };
    const auto test = ready(raw.test);
    require_compatible(ck.model, test, "test");
    const auto names = names_from_meta(ck.meta_json, ck.model.num_classes());

    EvalOptions opts;
    opts.mc_samples = cfg.eval.mc_samples;
    opts.seed = cfg.eval.seed;
    auto eval = evaluate(ck.model, test, opts);
    auto records = eval.records;

    if (!cfg.eval.corruptions.empty()) {
      eval.report.corruption = robustness_suite(ck.model, raw.test, cfg.eval.corruptions, cfg.eval.repeats,
                                                Rng(cfg.eval.seed).split(1), stats, opts);
    }
    if (cfg.eval.ood_path) {
      const auto& shape = ck.model.input_shape();
      auto ood_raw = load_ood_directory(*cfg.eval.ood_path, cfg.eval.ood_class_map, shape.at(1), shape.at(2));
      if (ood_raw.empty()) raise(ErrorKind::kIo, "no OOD images under " + cfg.eval.ood_path->string());
      auto ood = ready(ood_raw);
      require_compatible(ck.model, ood, "ood");
      EvalOptions ood_opts = opts;
      ood_opts.split = "ood";
      auto ood_eval = evaluate(ck.model, ood, ood_opts);
      std::vector<ClassRow> present;
      for (const auto& row : ood_eval.report.per_class) {
        if (row.total > 0) present.push_back(row);
      }
      eval.report.ood = present;
      records.insert(records.end(), ood_eval.records.begin(), ood_eval.records.end());
    }
    if (cfg.eval.projection) {
      const auto proj = project_features(ck.model, test, cfg.eval.projection_tap, "test");
      write_projection_csv((cfg.output_dir / "projection.csv").string(), proj);
    }
    write_records_csv((cfg.output_dir / "eval_samples.csv").string(), records);
    write_text(cfg.output_dir / "eval_report.json", report_to_json(eval.report, names));

    print_report(out, eval.report, names);
    for (const auto& c : eval.report.corruption) {
      out << "corruption " << c.spec << ": " << na(c.mean) << " +/- " << std::setprecision(2)
          << std::scientific << c.std << std::defaultfloat << "\n";
    }
    if (eval.report.ood) {
      out << "out-of-distribution:\n";
      print_rows(out, *eval.report.ood, names);
    }
    return kExitOk;
  });
}

// ---- Repro recipes -----------------------------------------------------------

const std::vector<std::string>& repro_recipes() {
  static const std::vector<std::string> kRecipes = {"classify", "uncertainty", "robustness",
                                                    "ood",      "transfer",    "delta-only"};
  return kRecipes;
}

namespace {

struct DeskSetup {
  DatasetSplit data;
  ModelSpec cnn;
  TrainConfig train;
  std::vector<SignConfig> sign;
};

DeskSetup desk_setup(const ReproOptions& options) {
  DeskSetup d;
  if (options.cifar_dir) {
    CifarOptions co;
    co.max_train = 4000;
    co.val_count = 500;
    co.max_test = 1000;
    co.shuffle_seed = options.seed;
    d.data = load_cifar10_binary(*options.cifar_dir, co);
  } else {
    Rng rng(options.seed);
    BlobOptions bo;
    bo.test_per_class = 100;
    d.data = make_synthetic_blobs(4, 80, Shape{1, 8, 8}, 6.0, rng, bo);
  }
  normalize(d.data);
  d.cnn.arch = "basic-cnn";
  d.cnn.input_shape = d.data.train.front().image.shape();
  d.cnn.num_classes = d.data.num_classes();
  d.cnn.init_seed = options.seed;
  d.train.epochs = 6;
  d.train.batch_size = 32;
  d.train.optimizer.lr = 0.01;
  d.train.seed = options.seed;
  for (std::size_t k : {50, 100}) {
    SignConfig c;
    c.k = k;
    c.normalize = DeltaNormalization::kUnitMaxAbs;
    c.step_scale = 0.01;
    d.sign.push_back(c);
  }
  return d;
}

Model train_with(const DeskSetup& d, ModelSpec spec, Strategy strategy, std::optional<Model>* source_out = nullptr) {
  TrainConfig cfg = d.train;
  cfg.strategy = strategy;
  if (strategy == Strategy::kSign || strategy == Strategy::kSignPlusClassical) {
    ModelSpec src_spec = spec;
    src_spec.uncertainty_head = false;
    TrainConfig src_cfg = d.train;
    src_cfg.strategy = Strategy::kNone;
    auto p = sign_pipeline(d.data, src_spec, src_cfg, d.sign, cfg, spec);
    if (source_out) *source_out = p.source;
    return p.final_model;
  }
  return train(build_model(spec), d.data, cfg).model;
}

void maybe_write(const ReproOptions& options, const std::string& name, const std::string& text) {
  if (!options.output_dir) return;
  fs::create_directories(*options.output_dir);
  write_text(*options.output_dir / name, text);
}

std::string fixed(double v, int precision = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(precision) << v;
  return o.str();
}

int repro_classify(const ReproOptions& options, std::ostream& out) {
  const auto d = desk_setup(options);
  const auto& names = d.data.class_names;
  std::vector<std::pair<std::string, EvalReport>> rows;
  for (auto s : {Strategy::kNone, Strategy::kClassical, Strategy::kMixup, Strategy::kSign}) {
    const Model m = train_with(d, d.cnn, s);
    rows.emplace_back(std::string(to_string(s)), evaluate(m, d.data.test).report);
    maybe_write(options, "classify_" + rows.back().first + ".json", report_to_json(rows.back().second, names));
  }
  out << std::left << std::setw(12) << "method";
  for (const auto& n : names) out << std::setw(10) << n.substr(0, 9);
  out << "mean\n";
  for (const auto& [name, rep] : rows) {
    out << std::left << std::setw(12) << name;
    for (const auto& r : rep.per_class) out << std::setw(10) << na(r.accuracy);
    out << fixed(rep.mean_accuracy) << "\n";
  }
  return kExitOk;
}

int repro_uncertainty(const ReproOptions& options, std::ostream& out) {
  const auto d = desk_setup(options);
  ModelSpec spec = d.cnn;
  spec.uncertainty_head = true;
  out << std::left << std::setw(12) << "method" << std::setw(10) << "accuracy" << std::setw(20) << "p<=0.5 (#)"
      << std::setw(14) << "uncertainty" << "min correct p\n";
  for (auto s : {Strategy::kNone, Strategy::kMixup, Strategy::kSign}) {
    const Model m = train_with(d, spec, s);
    const auto rep = evaluate(m, d.data.test).report;
    maybe_write(options, "uncertainty_" + std::string(to_string(s)) + ".json", report_to_json(rep));
    out << std::left << std::setw(12) << to_string(s) << std::setw(10) << fixed(rep.mean_accuracy) << std::setw(20)
        << (na(rep.low_confidence.mean_probability) + " (" + std::to_string(rep.low_confidence.count) + ")")
        << std::setw(14) << na(rep.low_confidence.mean_uncertainty) << na(rep.min_correct_probability) << "\n";
  }
  return kExitOk;
}

int repro_robustness(const ReproOptions& options, std::ostream& out) {
  const auto d = desk_setup(options);
  const auto& shape = d.cnn.input_shape;
  // 50 pixels of a 32x32 image, scaled to the desk-scale resolution.
  const auto pixels = static_cast<std::size_t>(
      std::max(1.0, std::round(50.0 * static_cast<double>(shape[1] * shape[2]) / 1024.0)));
  std::vector<CorruptionSpec> specs(2);
  specs[0].kind = CorruptionKind::kPixelOff;
  specs[0].pixel_count = pixels;
  specs[1].kind = CorruptionKind::kGaussian;
  std::vector<Sample> raw_test = d.data.test;
  for (auto& s : raw_test) {
    s.image = denormalize_image(s.image, *d.data.stats);
    s.raw = true;
  }
  out << std::left << std::setw(12) << "method" << std::setw(10) << "clean";
  for (const auto& s : specs) out << std::setw(24) << s.label();
  out << "\n";
  for (auto s : {Strategy::kNone, Strategy::kSign}) {
    const Model m = train_with(d, d.cnn, s);
    const double clean = evaluate(m, d.data.test).report.mean_accuracy;
    const auto res = robustness_suite(m, raw_test, specs, 5, Rng(options.seed).split(7), d.data.stats);
    out << std::left << std::setw(12) << to_string(s) << std::setw(10) << fixed(clean);
    for (const auto& r : res) {
      std::ostringstream cell;
      cell << fixed(r.mean) << " +/- " << std::setprecision(1) << std::scientific << r.std;
      out << std::setw(24) << cell.str();
    }
    out << "\n";
  }
  return kExitOk;
}

int repro_ood(const ReproOptions& options, std::ostream& out) {
  const auto d = desk_setup(options);
  // Shifted distribution: same class layout, stronger noise and jitter, and
  // one class missing so its row stays empty.
  Rng rng(options.seed + 1);
  BlobOptions bo;
  bo.noise_sigma = 64.0;
  bo.jitter = 2.0;
  auto shifted = make_synthetic_blobs(d.data.num_classes(), 40, d.cnn.input_shape, 6.0, rng, bo);
  std::vector<Sample> ood;
  for (const auto& s : shifted.train) {
    if (s.label + 1 != d.data.num_classes()) ood.push_back(s);
  }
  ood = normalize_samples(ood, *d.data.stats);
  for (auto s : {Strategy::kNone, Strategy::kSign}) {
    ModelSpec spec = d.cnn;
    spec.uncertainty_head = true;
    const Model m = train_with(d, spec, s);
    const auto rows = ood_evaluate(m, ood);
    out << to_string(s) << ":\n";
    print_rows(out, rows, d.data.class_names);
  }
  return kExitOk;
}

int repro_transfer(const ReproOptions& options, std::ostream& out) {
  const auto d = desk_setup(options);
  ModelSpec target;
  target.arch = "small-mlp";
  target.hidden = {64};
  target.input_shape = d.cnn.input_shape;
  target.num_classes = d.cnn.num_classes;
  target.init_seed = options.seed;
  const auto res = transferability_protocol(d.cnn, target, d.data, d.sign, d.train, d.train);
  maybe_write(options, "transfer_sign.json", report_to_json(res.transfer.report, d.data.class_names));
  maybe_write(options, "transfer_plain.json", report_to_json(res.control.report, d.data.class_names));
  out << std::left << std::setw(26) << "target (small-mlp) data";
  for (const auto& n : d.data.class_names) out << std::setw(10) << n.substr(0, 9);
  out << "mean\n";
  for (const auto& [name, rep] : {std::pair{"plain", &res.control.report}, std::pair{"SIGN from basic-cnn", &res.transfer.report}}) {
    out << std::left << std::setw(26) << name;
    for (const auto& r : rep->per_class) out << std::setw(10) << na(r.accuracy);
    out << fixed(rep->mean_accuracy) << "\n";
  }
  return kExitOk;
}

int repro_delta_only(const ReproOptions& options, std::ostream& out) {
  const auto d = desk_setup(options);
  ModelSpec probe;
  probe.arch = "small-mlp";
  probe.hidden = {64};
  probe.input_shape = d.cnn.input_shape;
  probe.num_classes = d.cnn.num_classes;
  probe.init_seed = options.seed;
  SignConfig sc;
  sc.k = 10;
  const auto res = delta_only_protocol(d.cnn, d.train, probe, d.train, sc, d.data);
  maybe_write(options, "delta_only.json", report_to_json(res.probe_eval.report, d.data.class_names));
  out << "delta-only accuracy " << fixed(res.probe_eval.report.mean_accuracy) << " vs chance " << fixed(res.chance)
      << " (" << fixed(res.probe_eval.report.mean_accuracy / res.chance, 2) << "x)\n";
  return kExitOk;
}

}  // namespace

int cmd_repro(const std::string& recipe, const ReproOptions& options, std::ostream& out, std::ostream& err) {
  const auto& names = repro_recipes();
  if (std::find(names.begin(), names.end(), recipe) == names.end()) {
    err << "unknown recipe '" << recipe << "'; valid recipes:";
    for (const auto& n : names) err << " " << n;
    err << "\n";
    return kExitConfig;
  }
  return guarded(err, [&] {
    if (options.cifar_dir && !fs::is_directory(*options.cifar_dir)) {
      throw ConfigError("cifar", "no such directory: " + options.cifar_dir->string());
    }
    if (recipe == "classify") return repro_classify(options, out);
    if (recipe == "uncertainty") return repro_uncertainty(options, out);
    if (recipe == "robustness") return repro_robustness(options, out);
    if (recipe == "ood") return repro_ood(options, out);
    if (recipe == "transfer") return repro_transfer(options, out);
    return repro_delta_only(options, out);
  });
}

}  // namespace signreg::cli
