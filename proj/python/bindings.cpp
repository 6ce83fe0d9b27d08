#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <sstream>

#include "vidseq/cli.hpp"
#include "vidseq/engine.hpp"
#include "vidseq/metrics.hpp"
#include "vidseq/records.hpp"
#include "vidseq/synth.hpp"

namespace py = pybind11;
using namespace vidseq;

namespace {

py::object from_json(const std::string& s) { return py::module_::import("json").attr("loads")(s); }

BoundingBox to_box(const std::array<double, 4>& b) { return {b[0], b[1], b[2], b[3]}; }
std::array<double, 4> from_box(const BoundingBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }

Trajectory to_traj(const std::vector<std::array<double, 4>>& v) {
  Trajectory t;
  for (const auto& b : v) t.push_back(to_box(b));
  return t;
}

EventSet to_events(const std::vector<std::pair<double, double>>& spans) {
  EventSet e;
  for (auto [start, dur] : spans) e.push_back({{start, dur}, {}});
  return e;
}

py::list beams_to_list(const std::vector<BeamHypothesis>& beams) {
  py::list out;
  for (const auto& h : beams) {
    py::dict d;
    d["tokens"] = h.tokens;
    d["token_log_probs"] = h.token_log_probs;
    d["score"] = h.score;
    d["forced"] = h.forced;
    out.append(d);
  }
  return out;
}

StepMask python_mask(const py::object& mask, int vocab_size) {
  if (mask.is_none()) {
    return [vocab_size](std::span<const TokenId>) {
      return std::vector<std::uint8_t>(static_cast<std::size_t>(vocab_size), 1);
    };
  }
  return [mask](std::span<const TokenId> prefix) {
    const auto v = mask(std::vector<TokenId>(prefix.begin(), prefix.end())).cast<std::vector<bool>>();
    return std::vector<std::uint8_t>(v.begin(), v.end());
  };
}

StepScorer python_scorer(const py::function& scorer) {
  return [scorer](std::span<const TokenId> prefix) {
    return scorer(std::vector<TokenId>(prefix.begin(), prefix.end())).cast<std::vector<double>>();
  };
}

struct PyModel {
  std::shared_ptr<Model<float>> model;
  Vocabulary vocab;
};

std::map<std::string, std::string> stringify(const py::dict& d) {
  std::map<std::string, std::string> out;
  for (auto [k, v] : d) out[py::str(k)] = py::str(v);
  return out;
}

}  // namespace

PYBIND11_MODULE(_vidseq, m) {
  m.doc() = "vidseq: synthetic video tasks as token sequences";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  py::class_<Vocabulary>(m, "Vocabulary")
      .def_static("build", [](const std::vector<std::string>& words, int n_time, int n_box) {
        return Vocabulary::build(words, n_time, n_box);
      }, py::arg("words"), py::arg("n_time") = 300, py::arg("n_box") = 1000)
      .def_static("from_manifest", [](const std::string& text) {
        std::istringstream in(text);
        return Vocabulary::read_manifest(in);
      })
      .def("manifest", [](const Vocabulary& v) {
        std::ostringstream out;
        v.write_manifest(out);
        return out.str();
      })
      .def("__len__", &Vocabulary::size)
      .def_property_readonly("n_time", &Vocabulary::n_time)
      .def_property_readonly("n_box", &Vocabulary::n_box)
      .def_property_readonly("n_words", &Vocabulary::n_words)
      .def("token", &Vocabulary::token)
      .def("find", &Vocabulary::find)
      .def("kind", [](const Vocabulary& v, TokenId id) { return std::string(token_kind_name(v.kind(id))); })
      .def("encode_text", &Vocabulary::encode_text)
      .def("__eq__", &Vocabulary::operator==);

  m.def("synth_vocabulary", [](int n_time, int n_box) { return Vocabulary::build(synth_corpus(SynthSpec{}), n_time, n_box); },
        py::arg("n_time") = 300, py::arg("n_box") = 1000, "vocabulary covering every synthetic word");

  py::class_<TaskSample>(m, "Sample")
      .def_readonly("id", &TaskSample::id)
      .def_property_readonly("task", [](const TaskSample& s) { return std::string(task_name(s.kind)); })
      .def_property_readonly("duration", [](const TaskSample& s) { return s.clip.duration; })
      .def_property_readonly("frames", [](const TaskSample& s) {
        const auto& c = s.clip;
        py::array_t<float> a({c.frames, c.height, c.width, 3});
        std::copy(c.pixels.begin(), c.pixels.end(), a.mutable_data());
        return a;
      })
      .def("to_dict", [](const TaskSample& s) { return from_json(sample_to_json(s, "")); });

  m.def("generate", [](const std::string& task, std::size_t n, std::uint64_t first, std::uint64_t seed) {
    SynthSpec spec;
    spec.seed = seed;
    return generate(parse_task(task), spec, n, first);
  }, py::arg("task"), py::arg("n"), py::arg("first") = 0, py::arg("seed") = 0);

  m.def("encode_target", [](const TaskSample& s, const Vocabulary& v) {
    return encode_target(s, v, ClipMeta::of(s.clip)).ids;
  });
  m.def("parse_output", [](const std::vector<TokenId>& ids, const std::string& task, const Vocabulary& v,
                           double duration, double width, double height) {
    const auto p = parse_output({ids, parse_task(task)}, v, {duration, width, height});
    PredictionRecord r;
    r.kind = p.kind;
    r.value = p.value;
    py::dict d;
    d["value"] = from_json(prediction_to_json(r))["prediction"];
    d["empty"] = p.empty;
    d["swapped"] = p.swapped;
    d["clipped"] = p.clipped;
    return d;
  }, py::arg("tokens"), py::arg("task"), py::arg("vocab"), py::arg("duration") = 0.0, py::arg("width") = 0.0,
     py::arg("height") = 0.0);

  m.def("quantize_bin", &quantize_bin);
  m.def("bin_center", &bin_center);
  m.def("quantize_time", &quantize_time);
  m.def("dequantize_time", &dequantize_time);
  m.def("quantize_box", [](const Vocabulary& v, const std::array<double, 4>& b, double w, double h) {
    return quantize_box(v, to_box(b), w, h);
  });
  m.def("dequantize_box", [](const Vocabulary& v, const std::vector<TokenId>& t, double w, double h) {
    return from_box(dequantize_box(v, t, w, h).box);
  });

  m.def("box_iou", [](const std::array<double, 4>& a, const std::array<double, 4>& b) {
    return box_iou(to_box(a), to_box(b));
  });
  m.def("segment_iou", [](double s0, double d0, double s1, double d1) {
    return segment_iou({s0, d0}, {s1, d1});
  }, py::arg("start_a"), py::arg("duration_a"), py::arg("start_b"), py::arg("duration_b"));
  m.def("bleu4", &bleu4);
  m.def("tracking_metrics", [](const std::vector<std::array<double, 4>>& pred, const std::vector<std::array<double, 4>>& gt) {
    const auto t = tracking_metrics(to_traj(pred), to_traj(gt));
    py::dict d;
    d["success_auc"] = t.success_auc;
    d["success_curve"] = t.success_curve;
    d["precision"] = t.precision;
    d["normalized_precision"] = t.normalized_precision;
    return d;
  });
  m.def("dvp_prf", [](const std::vector<std::pair<double, double>>& pred, const std::vector<std::pair<double, double>>& gt) {
    const auto r = dvp_localization_prf(to_events(pred), to_events(gt));
    py::dict d;
    d["thresholds"] = r.thresholds;
    d["precision"] = r.precision;
    d["recall"] = r.recall;
    d["f1"] = r.f1;
    return d;
  }, "localization precision/recall over (start, duration) spans");

  m.def("beam_search", [](const py::function& scorer, int vocab_size, TokenId eos, int beam, int max_len,
                          const py::object& mask) {
    return beams_to_list(beam_search(python_scorer(scorer), python_mask(mask, vocab_size), vocab_size, eos, beam, max_len));
  }, py::arg("scorer"), py::arg("vocab_size"), py::arg("eos"), py::arg("beam"), py::arg("max_len"),
     py::arg("mask") = py::none());
  m.def("greedy_decode", [](const py::function& scorer, int vocab_size, TokenId eos, int max_len, const py::object& mask) {
    const py::list one = beams_to_list({greedy_decode(python_scorer(scorer), python_mask(mask, vocab_size), vocab_size, eos, max_len)});
    return py::object(one[0]);
  }, py::arg("scorer"), py::arg("vocab_size"), py::arg("eos"), py::arg("max_len"), py::arg("mask") = py::none());

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const Vocabulary& vocab, std::uint64_t seed, const py::dict& overrides) {
        auto kv = ModelConfig{}.to_map();
        for (const auto& [k, v] : stringify(overrides)) kv["model." + k] = v;
        kv["model.vocab_size"] = std::to_string(vocab.size());
        kv["model.n_time"] = std::to_string(vocab.n_time());
        kv["model.n_box"] = std::to_string(vocab.n_box());
        const auto cfg = ModelConfig::from_map(kv);
        return PyModel{std::make_shared<Model<float>>(cfg, seed), vocab};
      }), py::arg("vocab"), py::arg("seed") = 0, py::arg("config") = py::dict())
      .def_property_readonly("vocab", [](const PyModel& p) { return p.vocab; })
      .def_property_readonly("config", [](const PyModel& p) { return p.model->config().to_map(); })
      .def_property_readonly("parameter_count", [](const PyModel& p) { return p.model->parameter_count(); })
      .def("predict", [](const PyModel& p, const TaskSample& s, int beam) {
        PredictionRecord r;
        {
          py::gil_scoped_release release;
          r = predict(*p.model, p.vocab, s, beam);
        }
        return from_json(prediction_to_json(r));
      }, py::arg("sample"), py::arg("beam") = 4)
      .def("save", [](const PyModel& p, const std::filesystem::path& path) {
        save_checkpoint(path, *p.model, p.vocab, static_cast<const AdamW<float>*>(nullptr));
      });

  m.def("load_checkpoint", [](const std::filesystem::path& path) {
    auto ck = load_checkpoint(path);
    auto model = std::make_shared<Model<float>>(ck.config, 0);
    restore_parameters(*model, ck.container);
    return PyModel{model, ck.vocab};
  });

  m.def("train", [](PyModel& p, const std::vector<TaskSample>& samples, int steps, int batch, double lr,
                    std::uint64_t seed, bool augment) {
    TaskData data;
    for (const auto& s : samples) data[s.kind].push_back(s);
    TrainConfig tc;
    for (const auto& [k, v] : data) tc.tasks.push_back(k);
    tc.mode = tc.tasks.size() > 1 ? TrainMode::Joint : TrainMode::Separate;
    tc.steps = steps;
    tc.batch = batch;
    tc.lr = lr;
    tc.seed = seed;
    tc.augment = augment;
    AdamW<float> opt(p.model->parameter_tensors(), optimizer_options(tc));
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = run_training(tc, data, *p.model, opt, p.vocab);
    }
    std::vector<double> losses;
    for (const auto& e : r.log) losses.push_back(e.loss);
    return losses;
  }, py::arg("model"), py::arg("samples"), py::arg("steps"), py::arg("batch") = 8, py::arg("lr") = 2e-3,
     py::arg("seed") = 0, py::arg("augment") = true, "trains in place and returns the per-step losses");

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  }, "runs the command-line tool in-process; returns (exit code, stdout, stderr)");
}
