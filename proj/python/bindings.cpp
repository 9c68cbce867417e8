// Copyright 2026 The gatedvlad Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gatedvlad/bundle.hpp"
#include "gatedvlad/datagen.hpp"
#include "gatedvlad/ensemble.hpp"
#include "gatedvlad/errors.hpp"
#include "gatedvlad/half.hpp"
#include "gatedvlad/metrics.hpp"
#include "gatedvlad/model.hpp"
#include "gatedvlad/sizing.hpp"
#include "gatedvlad/training.hpp"

namespace py = pybind11;
using namespace gatedvlad;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> tensor_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  const std::vector<float> values = t.to_floats();
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

Tensor array_tensor(const std::string& name, const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(name, shape, std::vector<float>(a.data(), a.data() + a.size()));
}

FrameMatrix frames(const FloatArray& a, const char* what) {
  if (a.ndim() != 2) throw ShapeError(std::string(what) + " must be a 2-d array");
  FrameMatrix m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.data());
  return m;
}

py::dict size_dict(const SizeReport& r) {
  py::list tensors;
  for (const auto& t : r.tensors) {
    py::dict d;
    d["name"] = t.name;
    d["shape"] = t.shape;
    d["params"] = t.param_count;
    d["bytes"] = t.bytes;
    tensors.append(d);
  }
  py::dict out;
  out["tensors"] = tensors;
  out["total_bytes"] = r.total_bytes;
  out["params"] = r.param_count();
  out["big4_share"] = r.big4_share;
  return out;
}

py::dict compression_dict(const CompressionReport& r) {
  py::dict out;
  out["original_bytes"] = r.original_bytes;
  out["compressed_bytes"] = r.compressed_bytes;
  out["rate"] = r.rate();
  out["cast"] = r.cast_tensor_names;
  out["overflow_count"] = r.overflow_count;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gated NetVLAD model, GAP metric, compression and sizing";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<FormatError>(m, "FormatError", error);
  py::register_exception<CorruptionError>(m, "CorruptionError", error);
  py::register_exception<ValidationError>(m, "ValidationError", error);
  py::register_exception<ShapeError>(m, "ShapeError", error);
  py::register_exception<IncompatibleError>(m, "IncompatibleError", error);
  py::register_exception<SelectionError>(m, "SelectionError", error);
  py::register_exception<InputError>(m, "InputError", error);
  auto runtime = py::register_exception<RuntimeFailure>(m, "RuntimeFailure", error);
  py::register_exception<TrainingError>(m, "TrainingError", runtime);

  m.def("float_to_half_bits",
        py::vectorize([](float v) { return float_to_half_bits(v); }),
        "Round to nearest binary16, ties to even; returns raw bit patterns");
  m.def("half_bits_to_float", py::vectorize([](std::uint16_t b) { return half_bits_to_float(b); }));

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("make", &ModelConfig::make, py::arg("k_video"), py::arg("hidden"),
                  py::arg("vocab"), py::arg("d_video") = 1024, py::arg("d_audio") = 128)
      .def_readwrite("k_video", &ModelConfig::k_video)
      .def_readwrite("k_audio", &ModelConfig::k_audio)
      .def_readwrite("hidden", &ModelConfig::hidden)
      .def_readwrite("vocab", &ModelConfig::vocab)
      .def_readwrite("d_video", &ModelConfig::d_video)
      .def_readwrite("d_audio", &ModelConfig::d_audio)
      .def_readwrite("num_experts", &ModelConfig::num_experts)
      .def_readwrite("use_dummy_expert", &ModelConfig::use_dummy_expert)
      .def_readwrite("normalize_vlad", &ModelConfig::normalize_vlad)
      .def("to_json", &ModelConfig::to_json)
      .def_static("from_json", &ModelConfig::from_json)
      .def("hash", &ModelConfig::hash)
      .def(py::self == py::self);

  py::class_<TensorBundle>(m, "TensorBundle")
      .def(py::init<>())
      .def("names", &TensorBundle::names)
      .def("__len__", &TensorBundle::size)
      .def("__contains__", &TensorBundle::contains)
      .def("__getitem__", [](const TensorBundle& b, const std::string& name) {
        return tensor_array(b.at(name));
      })
      .def("__setitem__", [](TensorBundle& b, const std::string& name, const FloatArray& a) {
        b.put(array_tensor(name, a));
      })
      .def("precision", [](const TensorBundle& b, const std::string& name) {
        return std::string(precision_name(b.at(name).precision()));
      })
      .def("half_bits", [](const TensorBundle& b, const std::string& name) {
        const auto bits = b.at(name).half_bits();
        return py::array_t<std::uint16_t>(static_cast<py::ssize_t>(bits.size()), bits.data());
      })
      .def_property("metadata", [](const TensorBundle& b) { return b.metadata(); },
                    [](TensorBundle& b, const TensorBundle::Metadata& md) { b.metadata() = md; })
      .def("size_bytes", [](const TensorBundle& b) { return bundle_size_bytes(b); })
      .def("save", [](const TensorBundle& b, const std::filesystem::path& p) { save_bundle(b, p); })
      .def_static("load", &load_bundle)
      .def(py::self == py::self);

  m.def("init_weights", &init_weights, py::arg("config"), py::arg("seed"));
  m.def("zero_weights", &zero_weights);
  m.def("weight_layout", &weight_layout);
  m.def("big_four", &names::big_four);
  m.def(
      "forward",
      [](const ModelConfig& cfg, const TensorBundle& w, const FloatArray& video,
         const FloatArray& audio) {
        return forward(cfg, w, FrameFeatures{frames(video, "video"), frames(audio, "audio")});
      },
      py::arg("config"), py::arg("weights"), py::arg("video"), py::arg("audio"),
      "Inference-mode class probabilities for one video (N x d_video, N x d_audio frames)");

  m.def(
      "top_k",
      [](const std::vector<double>& probs, const std::string& video_id, int k) {
        std::vector<std::tuple<std::string, int, double>> out;
        for (const auto& r : top_k_predictions(probs, video_id, k)) {
          out.emplace_back(r.video_id, r.label_id, r.confidence);
        }
        return out;
      },
      py::arg("probs"), py::arg("video_id"), py::arg("k") = kDefaultTopK);
  m.def(
      "gap_at_k",
      [](const std::vector<std::tuple<std::string, int, double>>& records,
         const GroundTruth& truth) {
        std::vector<PredictionRecord> recs;
        for (const auto& [v, l, c] : records) recs.push_back({v, l, c});
        return gap_at_k(std::move(recs), truth).gap;
      },
      py::arg("records"), py::arg("truth"),
      "Global average precision over pooled (video_id, label, confidence) records");

  py::class_<SyntheticDatasetConfig>(m, "SyntheticDatasetConfig")
      .def(py::init<>())
      .def_readwrite("num_videos", &SyntheticDatasetConfig::num_videos)
      .def_readwrite("vocab", &SyntheticDatasetConfig::vocab)
      .def_readwrite("d_video", &SyntheticDatasetConfig::d_video)
      .def_readwrite("d_audio", &SyntheticDatasetConfig::d_audio)
      .def_readwrite("max_frames", &SyntheticDatasetConfig::max_frames)
      .def_readwrite("mean_labels_per_video", &SyntheticDatasetConfig::mean_labels_per_video)
      .def_readwrite("noise_sigma", &SyntheticDatasetConfig::noise_sigma)
      .def_readwrite("seed", &SyntheticDatasetConfig::seed);

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", [](const Dataset& d) { return d.videos.size(); })
      .def_readonly("vocab", &Dataset::vocab)
      .def_readonly("d_video", &Dataset::d_video)
      .def_readonly("d_audio", &Dataset::d_audio)
      .def("video_ids", [](const Dataset& d) {
        std::vector<std::string> ids;
        for (const auto& v : d.videos) ids.push_back(v.video_id);
        return ids;
      })
      .def("labels", [](const Dataset& d, std::size_t i) { return d.videos.at(i).labels; })
      .def("frames", [](const Dataset& d, std::size_t i) {
        const auto& f = d.videos.at(i).frames;
        return py::make_tuple(py::array_t<float>({f.video.rows(), f.video.cols()}, f.video.data()),
                              py::array_t<float>({f.audio.rows(), f.audio.cols()}, f.audio.data()));
      })
      .def("ground_truth", &Dataset::ground_truth)
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { save_dataset(d, p); })
      .def_static("load", &load_dataset)
      .def(py::self == py::self);

  m.def("generate", &generate);
  m.def("split", &split, py::arg("data"), py::arg("validate_fraction"), py::arg("seed"));

  py::enum_<OptimizerKind>(m, "OptimizerKind")
      .value("SGD", OptimizerKind::kSgd)
      .value("ADAM", OptimizerKind::kAdam);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("total_steps", &TrainConfig::total_steps)
      .def_readwrite("checkpoint_interval", &TrainConfig::checkpoint_interval)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("optimizer", &TrainConfig::optimizer);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("step", &Checkpoint::step)
      .def_readonly("config", &Checkpoint::config)
      .def_readonly("weights", &Checkpoint::weights)
      .def("to_bundle", &Checkpoint::to_bundle)
      .def_static("from_bundle", &Checkpoint::from_bundle);

  m.def(
      "train",
      [](const ModelConfig& cfg, const TrainConfig& tc, const Dataset& data) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(cfg, tc, data);
        }
        return py::make_tuple(r.checkpoints, r.loss_curve);
      },
      py::arg("config"), py::arg("train_config"), py::arg("data"),
      "Returns (checkpoints, [(step, loss), ...])");
  m.def("average_checkpoints",
        [](const std::vector<Checkpoint>& c) { return average_checkpoints(c); });
  m.def(
      "evaluate",
      [](const ModelConfig& cfg, const TensorBundle& w, const Dataset& d, int k, int threads) {
        py::gil_scoped_release release;
        return evaluate(cfg, w, d, k, threads).gap;
      },
      py::arg("config"), py::arg("weights"), py::arg("data"), py::arg("k") = kDefaultTopK,
      py::arg("threads") = 1);

  m.def(
      "float16_compress",
      [](const TensorBundle& w, std::optional<std::vector<std::string>> names, bool strict) {
        const CompressionSelection sel =
            names ? CompressionSelection::explicit_names(*names) : CompressionSelection{};
        CompressedWeights c = float16_compress(w, sel, strict);
        return py::make_tuple(c.weights, compression_dict(c.report));
      },
      py::arg("weights"), py::arg("names") = py::none(), py::arg("strict") = false);
  m.def("size_report", [](const TensorBundle& b) { return size_dict(size_report(b)); });
  m.def(
      "model_size_report",
      [](const ModelConfig& cfg) { return size_dict(enumerate_tensors(SizeModelConfig::from_model(cfg))); });
  m.def("calibration_report_json", [](const std::filesystem::path& table1) {
    return calibration_json(calibrate_size_model(load_table1_csv(table1)));
  });
  m.def(
      "sparse_compression_rate",
      [](std::uint64_t params, double sparsity, int value_bits, int index_bits, int indices) {
        return sparse_compression_rate(params, sparsity, value_bits,
                                       SparseScheme::coordinate(index_bits, indices));
      },
      py::arg("params"), py::arg("sparsity"), py::arg("value_bits") = 32,
      py::arg("index_bits") = 32, py::arg("indices_per_nonzero") = 2);
  m.def("quantization_rate", &quantization_rate, py::arg("from_bits") = 32, py::arg("to_bits") = 8);
  m.def(
      "budget_check",
      [](std::uint64_t total, std::uint64_t budget) {
        const BudgetVerdict v = budget_check(total, budget);
        return py::make_tuple(v.pass, v.headroom_bytes);
      },
      py::arg("total_bytes"), py::arg("budget_bytes") = kDefaultBudgetBytes);
}
