// Python bindings: the loss and selector primitives on numpy arrays, plus the
// config-driven commands returning plain dicts.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tkd/error.hpp"
#include "tkd/run_config.hpp"

namespace py = pybind11;
using namespace tkd;

namespace {

// Tensors cross the boundary as (cells, 5 + classes) arrays; s is inferred.
DetectionTensor to_tensor(const Matrix& values) {
  const int cells = static_cast<int>(values.rows());
  const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cells))));
  if (s * s != cells || values.cols() < 6) {
    throw std::invalid_argument("expected a (s*s, 5 + classes) array, got (" + std::to_string(values.rows()) +
                                ", " + std::to_string(values.cols()) + ")");
  }
  return DetectionTensor(GridShape{s, static_cast<int>(values.cols()) - 5}, values);
}

DistillConfig distill_config(double lambda, double theta_h) {
  DistillConfig cfg;
  cfg.lambda = lambda;
  cfg.theta_h = theta_h;
  cfg.validate();
  return cfg;
}

py::dict metrics_dict(const ThresholdMetrics& m) {
  py::dict d;
  d["iou"] = m.iou;
  d["ap"] = m.ap;
  d["precision"] = m.precision;
  d["recall"] = m.recall;
  d["f1"] = m.f1;
  d["tp"] = m.tp;
  d["fp"] = m.fp;
  d["fn"] = m.fn;
  return d;
}

py::dict run(const std::filesystem::path& config, const std::vector<std::string>& overrides) {
  const RunConfig cfg = load_run_config(config, overrides);
  PipelineReport report;
  {
    py::gil_scoped_release release;
    const Stream stream = materialize_stream(cfg);
    const Student student(cfg.model, cfg.stream);
    report = run_pipeline(stream, student, cfg.pipeline);
  }
  py::dict d;
  d["mode"] = to_string(report.mode);
  d["selector"] = to_string(report.selector);
  d["frames"] = report.frames;
  d["key_frames"] = report.key_frames;
  d["key_fraction"] = report.key_fraction;
  d["fps"] = report.fps;
  d["dropped"] = report.dropped;
  d["aborted"] = report.aborted;
  d["error"] = report.error;
  py::list train;
  for (const FrameLog& f : report.log) train.append(f.train);
  d["train"] = train;
  py::list evals;
  if (report.eval)
    for (const ThresholdMetrics& m : report.eval->thresholds) evals.append(metrics_dict(m));
  d["eval"] = evals;
  return d;
}

py::list ablate(const std::filesystem::path& config, const std::vector<std::string>& overrides) {
  const RunConfig cfg = load_run_config(config, overrides);
  std::vector<AblationRow> rows;
  {
    py::gil_scoped_release release;
    const Stream stream = materialize_stream(cfg);
    const Student student(cfg.model, cfg.stream);
    rows = ablate_lambda(stream, student, cfg.pipeline, cfg.lambdas);
  }
  py::list out;
  for (const AblationRow& r : rows) {
    py::dict d;
    d["lambda"] = r.lambda;
    d["ap"] = r.ap;
    d["f1"] = r.f1;
    d["tp"] = r.tp;
    d["fp"] = r.fp;
    d["fn"] = r.fn;
    d["key_frames"] = r.key_frames;
    d["key_fraction"] = r.key_fraction;
    out.append(d);
  }
  return out;
}

py::list bench(const std::filesystem::path& config, const std::vector<std::string>& overrides) {
  const RunConfig cfg = load_run_config(config, overrides);
  const auto rows = bench_loss_cost(cfg.bench);
  py::list out;
  for (const BenchRow& r : rows) {
    py::dict d;
    d["targets"] = r.targets;
    d["decoded"] = r.decoded;
    d["tkd_us"] = r.tkd_us;
    d["nms_us"] = r.nms_us;
    d["tkd_loss"] = r.tkd_loss;
    d["nms_loss"] = r.nms_loss;
    out.append(d);
  }
  return out;
}

int generate(const std::filesystem::path& config, const std::filesystem::path& out,
             const std::vector<std::string>& overrides) {
  const RunConfig cfg = load_run_config(config, overrides);
  const Stream stream = materialize_stream(cfg);
  write_trace(stream, out);
  return static_cast<int>(stream.frames.size());
}

}  // namespace

PYBIND11_MODULE(_tkd, m) {
  m.doc() = "Online teacher-student distillation for streaming detection";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def(
      "tkd_loss",
      [](const Matrix& student, const Matrix& oracle, double lambda, double theta_h) {
        return tkd_loss(to_tensor(student), to_tensor(oracle), distill_config(lambda, theta_h));
      },
      py::arg("student"), py::arg("oracle"), py::arg("lam") = 0.4, py::arg("theta_h") = 0.5);
  m.def(
      "tkd_loss_terms",
      [](const Matrix& student, const Matrix& oracle, double lambda, double theta_h) {
        const TkdLossTerms t = tkd_loss_terms(to_tensor(student), to_tensor(oracle), distill_config(lambda, theta_h));
        py::dict d;
        d["high"] = t.high;
        d["empty"] = t.empty;
        d["high_cells"] = t.high_cells;
        d["empty_cells"] = t.empty_cells;
        return d;
      },
      py::arg("student"), py::arg("oracle"), py::arg("lam") = 0.4, py::arg("theta_h") = 0.5);
  m.def(
      "compose_target",
      [](const Matrix& student, const Matrix& oracle, double lambda, double theta_h) {
        return Matrix(compose_target(to_tensor(student), to_tensor(oracle), distill_config(lambda, theta_h)).values());
      },
      py::arg("student"), py::arg("oracle"), py::arg("lam") = 0.4, py::arg("theta_h") = 0.5);
  m.def(
      "high_cells",
      [](const Matrix& oracle, double theta_h) {
        const CellPartition p = partition_cells(to_tensor(oracle), theta_h);
        std::vector<bool> out(p.high.size());
        for (int i = 0; i < p.high.size(); ++i) out[i] = p.high[i];
        return out;
      },
      py::arg("oracle"), py::arg("theta_h") = 0.5);
  m.def("next_probability", &next_probability, py::arg("p_t"), py::arg("helpful"), py::arg("lstm_vote"),
        py::arg("p_min") = 0.05, py::arg("p_step") = 0.05);

  m.def("run", &run, py::arg("config"), py::arg("overrides") = std::vector<std::string>{});
  m.def("ablate", &ablate, py::arg("config"), py::arg("overrides") = std::vector<std::string>{});
  m.def("bench", &bench, py::arg("config"), py::arg("overrides") = std::vector<std::string>{});
  m.def("generate", &generate, py::arg("config"), py::arg("out"),
        py::arg("overrides") = std::vector<std::string>{});
}
