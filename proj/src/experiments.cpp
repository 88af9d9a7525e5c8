#include "tkd/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

#include "tkd/error.hpp"

namespace tkd {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void keep(double v) {
  [[maybe_unused]] static volatile double sink = 0.0;
  sink = v;
}

template <typename F>
double time_us(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
}

// n objects, one per distinct cell, centered so every cell encodes cleanly.
std::vector<GroundTruthObject> objects_in_cells(int n, const GridShape& shape, std::mt19937_64& rng) {
  std::vector<int> cells(shape.cells());
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  std::uniform_real_distribution<double> jitter(0.2, 0.8);
  std::uniform_real_distribution<double> size(0.05, 0.15);
  std::uniform_int_distribution<int> cls(0, shape.c - 1);
  std::vector<GroundTruthObject> out;
  for (int i = 0; i < n; ++i) {
    GroundTruthObject g;
    g.object_id = i;
    g.class_id = cls(rng);
    g.box.cx = (cells[i] % shape.s + jitter(rng)) / shape.s;
    g.box.cy = (cells[i] / shape.s + jitter(rng)) / shape.s;
    g.box.w = size(rng);
    g.box.h = size(rng);
    out.push_back(g);
  }
  return out;
}

}  // namespace

std::vector<AblationRow> ablate_lambda(const Stream& stream, const Student& student,
                                       const PipelineConfig& cfg, const std::vector<double>& lambdas) {
  if (lambdas.empty()) throw ConfigError("ablate.lambdas must not be empty");
  std::vector<AblationRow> rows;
  for (double lambda : lambdas) {
    PipelineConfig run = cfg;
    run.distill.lambda = lambda;
    const PipelineReport r = run_pipeline(stream, student, run);
    const ThresholdMetrics& m = r.eval->thresholds.front();
    AblationRow row;
    row.lambda = lambda;
    row.ap = m.ap;
    row.f1 = m.f1;
    row.tp = m.tp;
    row.fp = m.fp;
    row.fn = m.fn;
    row.key_frames = r.key_frames;
    row.key_fraction = r.key_fraction;
    rows.push_back(row);
  }
  return rows;
}

void BenchConfig::validate() const {
  if (target_counts.empty()) throw ConfigError("bench.target_counts must not be empty");
  if (trials < 1) throw ConfigError("bench.trials must be >= 1");
  try {
    tkd::validate(GridShape{s, classes});
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bench.") + e.what());
  }
  for (int n : target_counts) {
    if (n < 0 || n > s * s) throw ConfigError("bench.target_counts entries must lie in [0, s*s]");
  }
}

std::vector<BenchRow> bench_loss_cost(const BenchConfig& cfg) {
  cfg.validate();
  const GridShape shape{cfg.s, cfg.classes};
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> perturb(0.0, 0.3);
  OracleNoiseSpec noise;
  noise.box_jitter_sigma = 0.0;
  const DistillConfig dc;

  struct Case {
    std::vector<GroundTruthObject> gt;
    DetectionTensor oracle;
    DetectionTensor student;
    std::vector<double> tkd_times;
    std::vector<double> nms_times;
  };
  std::vector<Case> cases;
  for (int n : cfg.target_counts) {
    Case c;
    c.gt = objects_in_cells(n, shape, rng);
    c.oracle = synth_oracle(c.gt, noise, shape, rng);
    c.student = c.oracle;
    for (Eigen::Index i = 0; i < c.student.values().size(); ++i) c.student.values().data()[i] += perturb(rng);
    cases.push_back(std::move(c));
  }

  // Trials round-robin over the target counts so clock drift hits every count alike.
  for (int t = 0; t <= cfg.trials; ++t) {
    for (Case& c : cases) {
      const double a = time_us([&] { keep(tkd_loss(c.student, c.oracle, dc)); });
      const double b = time_us([&] { keep(nms_loss(c.student, c.oracle, c.gt, cfg.conf_threshold, cfg.nms_iou)); });
      if (t == 0) continue;  // warm-up
      c.tkd_times.push_back(a);
      c.nms_times.push_back(b);
    }
  }

  std::vector<BenchRow> rows;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const Case& c = cases[i];
    BenchRow row;
    row.targets = cfg.target_counts[i];
    row.decoded = static_cast<int>(nms(decode_tensor(c.student, cfg.conf_threshold), cfg.nms_iou).size());
    row.tkd_us = median(c.tkd_times);
    row.nms_us = median(c.nms_times);
    row.tkd_loss = tkd_loss(c.student, c.oracle, dc);
    row.nms_loss = nms_loss(c.student, c.oracle, c.gt, cfg.conf_threshold, cfg.nms_iou);
    rows.push_back(row);
  }
  return rows;
}

std::vector<int> keyframe_histogram(const std::vector<FrameLog>& log, int bin_size) {
  if (bin_size < 1) throw std::invalid_argument("keyframe_histogram: bin_size must be >= 1");
  std::vector<int> bins((log.size() + bin_size - 1) / bin_size, 0);
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (log[i].train) ++bins[i / bin_size];
  }
  return bins;
}

std::vector<int> change_point_response(const std::vector<FrameLog>& log,
                                       const std::vector<std::int64_t>& change_points, int window) {
  std::vector<int> out;
  out.reserve(change_points.size());
  for (std::int64_t cp : change_points) {
    int count = 0;
    for (std::int64_t f = cp; f <= cp + window && f < static_cast<std::int64_t>(log.size()); ++f) {
      if (f >= 0 && log[f].train) ++count;
    }
    out.push_back(count);
  }
  return out;
}

}  // namespace tkd
