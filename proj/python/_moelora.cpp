/* Copyright 2026 The moelora Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "moelora/checkpoint.hpp"
#include "moelora/config.hpp"
#include "moelora/diagnostics.hpp"
#include "moelora/errors.hpp"
#include "moelora/losses.hpp"
#include "moelora/moe.hpp"
#include "moelora/trainer.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace moelora;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IdArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_data(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

TokenBatch to_batch(const IdArray& ids) {
  if (ids.ndim() != 2) throw InputError("token ids must be a 2-D [batch, seq] array");
  TokenBatch tb;
  tb.batch = ids.shape(0);
  tb.seq = ids.shape(1);
  tb.ids.assign(ids.data(), ids.data() + ids.size());
  return tb;
}

py::dict outcome_dict(const TrainOutcome& out) {
  py::list metrics;
  for (const auto& m : out.metrics) metrics.append(metrics_json_line(m));
  py::dict d;
  d["metrics"] = metrics;
  d["checkpoint"] = py::bytes(serialize_checkpoint(out.checkpoint));
  d["abort_reason"] = out.abort_reason ? py::cast(*out.abort_reason) : py::none();
  return d;
}

// A model plus the configuration it was built from.
class PyModel {
 public:
  explicit PyModel(const std::string& config_json)
      : config_(parse_config(config_json)), model_(config_.model, config_.moe, config_.contrastive) {}
  PyModel(ExperimentConfig cfg, MoeLoraModel model) : config_(std::move(cfg)), model_(std::move(model)) {}

  Array lm_forward(const IdArray& ids) const { return to_array(model_.lm_forward(to_batch(ids))); }
  Array base_lm_forward(const IdArray& ids) const { return to_array(model_.base_lm_forward(to_batch(ids))); }
  void zero_adapter_ups() { model_.zero_adapter_ups(); }
  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& p : model_.trainable_parameters()) out.push_back(p.name);
    return out;
  }
  std::vector<std::string> frozen_names() const {
    std::vector<std::string> out;
    for (const auto& p : model_.frozen_parameters()) out.push_back(p.name);
    return out;
  }
  Array parameter(const std::string& name) const {
    for (const auto& p : model_.parameters()) {
      if (p.name == name) return to_array(p.tensor);
    }
    throw InputError("no parameter named '" + name + "'");
  }
  py::dict profile(std::optional<int> heldout_limit) const {
    const auto corpus = generate_synthetic_corpus(config_.corpus, config_.seed);
    std::vector<Sample> samples = corpus.heldout;
    if (heldout_limit && *heldout_limit < static_cast<int>(samples.size())) samples.resize(*heldout_limit);
    const auto prof = profile_routing(model_, samples, config_.corpus.num_tasks);
    py::dict d;
    d["global_conf"] = prof.confidence.global_conf;
    d["per_layer_conf"] = prof.confidence.per_layer_conf;
    d["utilization"] = prof.utilization;
    d["task_expert_nmi"] = prof.task_expert_nmi;
    return d;
  }
  py::dict probe_accuracy(int count, std::uint64_t key) const {
    const auto corpus = generate_synthetic_corpus(config_.corpus, config_.seed);
    const auto r = toy_mc_eval(model_, generate_probes(corpus, count, key));
    py::dict d;
    d["accuracy"] = r.accuracy;
    d["evaluated"] = r.evaluated;
    d["skipped"] = r.skipped;
    return d;
  }
  std::string config_json() const { return config_to_json(config_); }

 private:
  ExperimentConfig config_;
  MoeLoraModel model_;
};

}  // namespace

PYBIND11_MODULE(_moelora, m) {
  m.doc() = "LoRA mixture-of-experts with expert-contrastive training (C++ core)";
  m.attr("__version__") = MOELORA_VERSION;

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("default_config_json", [] { return config_to_json(ExperimentConfig{}); });
  m.def("gradcheck_config_json", [](std::uint64_t seed) { return config_to_json(gradcheck_config(seed)); },
        "seed"_a = 0);
  m.def("canonical_config", [](const std::string& text) { return config_to_json(parse_config(text)); }, "text"_a,
        "Validates a JSON config and returns its canonical form.");
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); }, "text"_a);

  m.def("weighted_average",
        [](const std::vector<std::pair<std::int64_t, double>>& rows) {
          std::vector<BenchmarkScore> scores;
          for (const auto& [n, acc] : rows) scores.push_back({"", n, acc});
          return weighted_average(scores);
        },
        "rows"_a, "Count-weighted mean of (count, accuracy) rows.");
  m.def("aggregate_scores", [](const std::string& text) { return weighted_average(parse_scores(text)); }, "text"_a,
        "Weighted average of a scores file body (name count accuracy per line).");

  m.def("route",
        [](const Array& logits, int top_k) {
          const RouterOutput r = route_from_logits(to_tensor(logits), top_k);
          return to_array(r.gates);
        },
        "logits"_a, "top_k"_a, "Top-k gates: softmax over the selected logits, zero elsewhere.");
  m.def("balance_loss", [](const Array& p_bar) { return balance_loss(to_tensor(p_bar)).item(); }, "p_bar"_a);
  m.def("info_nce",
        [](const Array& za, const Array& zb, const Array& negatives, double temperature, bool normalize) {
          return info_nce(to_tensor(za), to_tensor(zb), to_tensor(negatives), temperature, normalize).item();
        },
        "z_a"_a, "z_b"_a, "negatives"_a, "temperature"_a = 0.07, "normalize"_a = true);
  m.def("lr_at", [](int step, const std::string& config) { return lr_at(step, parse_config(config).train); },
        "step"_a, "config"_a);
  m.def("routing_confidence",
        [](const Array& gates) {
          RouterOutput r;
          r.gates = to_tensor(gates);
          r.tokens = r.gates.numel() / r.gates.size(-1);
          r.num_experts = static_cast<int>(r.gates.size(-1));
          std::vector<GateRecord> recs{{0, r}};
          return routing_confidence(recs, 1).global_conf;
        },
        "gates"_a, "Mean over tokens of the largest gate.");
  m.def("normalized_mutual_information",
        [](const std::vector<int>& a, const std::vector<int>& b) { return normalized_mutual_information(a, b); },
        "a"_a, "b"_a);

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&>(), "config"_a)
      .def("lm_forward", &PyModel::lm_forward, "ids"_a)
      .def("base_lm_forward", &PyModel::base_lm_forward, "ids"_a)
      .def("zero_adapter_ups", &PyModel::zero_adapter_ups)
      .def("trainable_names", &PyModel::trainable_names)
      .def("frozen_names", &PyModel::frozen_names)
      .def("parameter", &PyModel::parameter, "name"_a)
      .def("profile", &PyModel::profile, "heldout_limit"_a = py::none())
      .def("probe_accuracy", &PyModel::probe_accuracy, "count"_a = 1000, "key"_a = 0)
      .def("config_json", &PyModel::config_json);

  m.def("train",
        [](const std::string& config, std::optional<std::int64_t> stop_at) {
          const ExperimentConfig cfg = parse_config(config);
          const auto corpus = generate_synthetic_corpus(cfg.corpus, cfg.seed);
          MoeLoraModel model(cfg.model, cfg.moe, cfg.contrastive);
          TrainOutcome out;
          {
            py::gil_scoped_release release;
            out = train(model, corpus, cfg, initial_train_state(model), stop_at);
          }
          return outcome_dict(out);
        },
        "config"_a, "stop_at"_a = py::none(),
        "Trains from scratch. Returns metrics lines, checkpoint bytes and abort reason.");
  m.def("resume",
        [](const py::bytes& checkpoint, std::optional<std::int64_t> stop_at) {
          auto run = restore_checkpoint(deserialize_checkpoint(std::string(checkpoint)));
          const auto corpus = generate_synthetic_corpus(run.config.corpus, run.config.seed);
          TrainOutcome out;
          {
            py::gil_scoped_release release;
            out = train(run.model, corpus, run.config, std::move(run.state), stop_at);
          }
          return outcome_dict(out);
        },
        "checkpoint"_a, "stop_at"_a = py::none());
  m.def("load_model",
        [](const py::bytes& checkpoint) {
          auto run = restore_checkpoint(deserialize_checkpoint(std::string(checkpoint)));
          return PyModel(std::move(run.config), std::move(run.model));
        },
        "checkpoint"_a, "Model stored in serialized checkpoint bytes.");
  m.def("gradcheck",
        [](const std::optional<std::string>& config) {
          const auto r = objective_gradcheck(config ? parse_config(*config) : gradcheck_config());
          py::dict d;
          d["max_relative_error"] = r.max_relative_error;
          d["coordinates"] = r.coordinates;
          d["skipped_nonsmooth"] = r.skipped_nonsmooth;
          return d;
        },
        "config"_a = py::none());
}
