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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "signreg/autodiff.hpp"
#include "signreg/augment.hpp"
#include "signreg/datasets.hpp"
#include "signreg/error.hpp"
#include "signreg/evalharness.hpp"
#include "signreg/nn.hpp"
#include "signreg/sign.hpp"
#include "signreg/training.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace signreg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.empty()) shape = {1};
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<Sample> to_samples(const Array& images, const std::vector<std::size_t>& labels, bool raw) {
  if (images.ndim() < 2 || static_cast<std::size_t>(images.shape(0)) != labels.size()) {
    throw py::value_error("images must be [n, ...] with one label per row");
  }
  const Tensor all = to_tensor(images);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Sample s;
    s.image = slice_leading(all, i);
    s.label = labels[i];
    s.raw = raw;
    out.push_back(std::move(s));
  }
  return out;
}

py::tuple from_samples(const std::vector<Sample>& samples) {
  if (samples.empty()) return py::make_tuple(Array(std::vector<py::ssize_t>{0}), std::vector<std::size_t>{});
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  for (const auto& s : samples) {
    images.push_back(s.image);
    labels.push_back(s.label);
  }
  return py::make_tuple(to_array(stack(images)), labels);
}

py::dict split_dict(const DatasetSplit& d) {
  py::dict out;
  out["train"] = from_samples(d.train);
  out["val"] = from_samples(d.val);
  out["test"] = from_samples(d.test);
  out["class_names"] = d.class_names;
  return out;
}

py::dict report_dict(const EvalReport& r) {
  py::dict out;
  std::vector<std::optional<double>> per_class;
  for (const auto& row : r.per_class) per_class.push_back(row.accuracy);
  out["per_class"] = per_class;
  out["mean_accuracy"] = r.mean_accuracy;
  out["total"] = r.total;
  out["correct"] = r.correct;
  out["low_confidence_count"] = r.low_confidence.count;
  out["low_confidence_mean_probability"] = r.low_confidence.mean_probability;
  out["low_confidence_mean_uncertainty"] = r.low_confidence.mean_uncertainty;
  out["min_correct_probability"] = r.min_correct_probability;
  return out;
}

SignConfig make_sign_config(std::size_t k, double step_scale, const std::string& tap, const std::string& eval_point,
                            const std::string& normalize) {
  SignConfig c;
  c.k = k;
  c.step_scale = step_scale;
  c.tap = tap;
  c.eval_point = eval_point_from_string(eval_point);
  c.normalize = delta_normalization_from_string(normalize);
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Signed input regularization: SIGN transform, losses, augmentation and evaluation";

  py::register_exception<Error>(m, "SignregError", PyExc_RuntimeError);

  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init<>())
      .def_readwrite("arch", &ModelSpec::arch)
      .def_readwrite("input_shape", &ModelSpec::input_shape)
      .def_readwrite("num_classes", &ModelSpec::num_classes)
      .def_readwrite("hidden", &ModelSpec::hidden)
      .def_readwrite("drop_prob", &ModelSpec::drop_prob)
      .def_readwrite("uncertainty_head", &ModelSpec::uncertainty_head)
      .def_readwrite("init_seed", &ModelSpec::init_seed);

  py::class_<Model>(m, "Model")
      .def_property_readonly("input_shape", &Model::input_shape)
      .def_property_readonly("num_classes", &Model::num_classes)
      .def_property_readonly("has_uncertainty_head", &Model::has_uncertainty_head)
      .def("parameter_count", &Model::parameter_count)
      .def("checksum", [](const Model& self) { return model_checksum(self); })
      .def(
          "predict",
          [](const Model& self, const Array& batch) {
            auto p = self.predict(to_tensor(batch));
            py::object sigma = p.sigma ? py::object(to_array(*p.sigma)) : py::none();
            return py::make_tuple(to_array(p.logits), sigma);
          },
          "batch"_a, "Logits (and sigma with an uncertainty head) for a batch, dropout off.");

  m.def("build_model", &build_model, "spec"_a);
  m.def("save_checkpoint", &save_checkpoint, "path"_a, "model"_a, "meta_json"_a = "{}");
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        auto ck = load_checkpoint(path);
        return py::make_tuple(ck.model, ck.meta_json);
      },
      "path"_a);

  m.def(
      "summed_jacobian",
      [](const Model& model, const Array& batch, const std::string& tap) {
        return to_array(batch_summed_jacobian(model, to_tensor(batch), tap));
      },
      "model"_a, "batch"_a, "tap"_a = std::string(kPreLogitsTap),
      "Per-sample sum over tap units of d(tap)/d(input).");

  m.def(
      "sign_transform",
      [](const Model& model, const Array& image, std::size_t k, double step_scale, const std::string& tap,
         const std::string& eval_point, const std::string& normalize) {
        const auto r = sign_transform(model, to_tensor(image), make_sign_config(k, step_scale, tap, eval_point, normalize));
        return py::make_tuple(to_array(r.transformed), to_array(r.final_delta), r.delta_norms);
      },
      "model"_a, "image"_a, "k"_a = 1, "step_scale"_a = 1.0, "tap"_a = std::string(kPreLogitsTap),
      "eval_point"_a = "current-iterate", "normalize"_a = "none",
      "Iterative SIGN on one sample; returns (transformed, accumulated delta, per-step delta norms).");

  m.def(
      "cross_entropy",
      [](const Array& logits, const Array& targets) { return cross_entropy(to_tensor(logits), to_tensor(targets)); },
      "logits"_a, "targets"_a);
  m.def(
      "aleatoric_loss",
      [](const Array& f, const Array& sigma, const std::vector<std::size_t>& labels, std::size_t mc_samples,
         std::uint64_t seed) {
        Rng rng(seed);
        return aleatoric_loss(to_tensor(f), to_tensor(sigma), labels, mc_samples, rng);
      },
      "f"_a, "sigma"_a, "labels"_a, "mc_samples"_a = 20, "seed"_a = 0);

  m.def(
      "mixup",
      [](const Array& x1, const Array& y1, const Array& x2, const Array& y2, double lam) {
        const auto r = mixup(to_tensor(x1), to_tensor(y1), to_tensor(x2), to_tensor(y2), lam);
        return py::make_tuple(to_array(r.image), to_array(r.label));
      },
      "x1"_a, "y1"_a, "x2"_a, "y2"_a, "lam"_a);
  m.def(
      "beta_samples",
      [](double a, double b, std::size_t n, std::uint64_t seed) {
        Rng rng(seed);
        std::vector<double> out(n);
        for (auto& v : out) v = rng.beta(a, b);
        return out;
      },
      "a"_a, "b"_a, "n"_a, "seed"_a = 0);
  m.def(
      "corrupt",
      [](const Array& image, const std::string& spec, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(corrupt_image(to_tensor(image), parse_corruption(spec), rng));
      },
      "image"_a, "spec"_a, "seed"_a = 0, "Corrupt a raw 0-255 image, e.g. spec='pixel-off:50' or 'gaussian:0:10'.");

  m.def(
      "synthetic_blobs",
      [](std::size_t classes, std::size_t samples_per_class, const Shape& shape, double separation,
         std::uint64_t seed, double noise_sigma) {
        Rng rng(seed);
        BlobOptions opts;
        opts.noise_sigma = noise_sigma;
        return split_dict(make_synthetic_blobs(classes, samples_per_class, shape, separation, rng, opts));
      },
      "classes"_a, "samples_per_class"_a, "shape"_a, "separation"_a, "seed"_a = 0, "noise_sigma"_a = 32.0,
      "Raw-domain synthetic dataset as {'train': (images, labels), 'val': ..., 'test': ..., 'class_names': ...}.");

  m.def(
      "train",
      [](const Model& model, const Array& train_x, const std::vector<std::size_t>& train_y, const Array& val_x,
         const std::vector<std::size_t>& val_y, std::size_t epochs, std::size_t batch_size, double lr,
         const std::string& strategy, std::uint64_t seed) {
        DatasetSplit data;
        data.train = to_samples(train_x, train_y, false);
        data.val = to_samples(val_x, val_y, false);
        data.normalized = true;
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.optimizer.lr = lr;
        cfg.strategy = strategy_from_string(strategy);
        cfg.seed = seed;
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return train(model, data, cfg);
        }();
        std::vector<double> val_acc;
        for (const auto& e : r.report.epochs) val_acc.push_back(e.val_accuracy);
        return py::make_tuple(r.model, val_acc);
      },
      "model"_a, "train_x"_a, "train_y"_a, "val_x"_a, "val_y"_a, "epochs"_a = 10, "batch_size"_a = 128,
      "lr"_a = 0.01, "strategy"_a = "none", "seed"_a = 0,
      "Train on already-normalized arrays; returns (best model, per-epoch validation accuracy).");

  m.def(
      "evaluate",
      [](const Model& model, const Array& x, const std::vector<std::size_t>& y, std::size_t mc_samples,
         std::uint64_t seed) {
        EvalOptions opts;
        opts.mc_samples = mc_samples;
        opts.seed = seed;
        return report_dict(evaluate(model, to_samples(x, y, false), opts).report);
      },
      "model"_a, "x"_a, "y"_a, "mc_samples"_a = 20, "seed"_a = 0);

  m.def(
      "project_rows",
      [](const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& labels) {
        const auto p = project_rows(rows, labels, "data");
        std::vector<std::pair<double, double>> xy;
        for (const auto& r : p.rows) xy.emplace_back(r.x, r.y);
        return py::make_tuple(xy, p.explained_variance);
      },
      "rows"_a, "labels"_a, "Top-2 PCA projection; returns (coordinates, explained variance).");
}
