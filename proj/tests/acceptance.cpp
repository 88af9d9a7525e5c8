// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. `tkd_acceptance 3 5` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tkd/distill.hpp"
#include "tkd/experiments.hpp"
#include "tkd/run_config.hpp"

using namespace tkd;

namespace {

const std::filesystem::path kConfigs = TKD_CONFIG_DIR;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [miss]");
    pass = pass && ok;
  }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

DetectionTensor random_tensor(const GridShape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 2.0);
  DetectionTensor t(shape);
  for (Eigen::Index i = 0; i < t.values().size(); ++i) t.values().data()[i] = n(rng);
  return t;
}

const ThresholdMetrics& at50(const PipelineReport& r) { return r.eval->at(0.5); }

// 1. Loss correctness.
Outcome loss_correctness() {
  Outcome out;
  std::mt19937_64 rng(1);
  const GridShape sh{8, 6};

  double max_identical = 0.0;
  for (int i = 0; i < 100; ++i) {
    const DetectionTensor a = random_tensor(sh, rng);
    for (double lambda : {0.0, 0.4, 1.0}) {
      DistillConfig cfg;
      cfg.lambda = lambda;
      max_identical = std::max(max_identical, tkd_loss(a, a, cfg));
    }
  }
  out.require(max_identical == 0.0, fmt("identical tensors: max loss %.1e", max_identical));

  // E-term against (1 - lambda)^2 times a plain E-cell MSE computed here
  std::uniform_real_distribution<double> lam(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const DetectionTensor s = random_tensor(sh, rng);
    const DetectionTensor o = random_tensor(sh, rng);
    DistillConfig cfg;
    cfg.lambda = lam(rng);
    double sum = 0.0;
    int n = 0;
    for (int cell = 0; cell < sh.cells(); ++cell) {
      if (1.0 / (1.0 + std::exp(-o.values()(cell, 0))) >= cfg.theta_h) continue;
      for (int ch = 0; ch < sh.channels(); ++ch) {
        const double d = s.values()(cell, ch) - o.values()(cell, ch);
        sum += d * d;
        ++n;
      }
    }
    const double expected = n ? (1.0 - cfg.lambda) * (1.0 - cfg.lambda) * sum / n : 0.0;
    worst = std::max(worst, std::abs(tkd_loss_terms(s, o, cfg).empty - expected));
  }
  out.require(worst <= 1e-10, fmt("E-term identity: max |err| %.1e over 1000 pairs", worst));

  // decoder gradient vs central differences on the fixed composed target
  const DecoderParams p0 = make_decoder(32, 16, 6, 3);
  std::normal_distribution<double> n01(0.0, 1.0);
  FeatureFrame f;
  f.s = 4;
  f.values = Matrix(16, 32);
  for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = n01(rng);
  const DetectionTensor o = random_tensor(GridShape{4, 6}, rng);
  const DistillConfig cfg;
  const DetectionTensor s0 = decoder_forward(p0, f);
  const DetectionTensor target = compose_target(s0, o, cfg);
  const CellPartition part = partition_cells(o, cfg.theta_h);
  const DecoderGrad g = decoder_grad(p0, f, tkd_loss_grad(s0, o, cfg));
  DecoderParams p = p0;
  auto loss = [&] { return partitioned_mse(decoder_forward(p, f), target, part); };
  double worst_rel = 0.0;
  int checked = 0;
  auto probe = [&](double& ref, double analytic) {
    const double eps = 1e-5;
    const double x0 = ref;
    ref = x0 + eps;
    const double up = loss();
    ref = x0 - eps;
    const double down = loss();
    ref = x0;
    const double fd = (up - down) / (2 * eps);
    const double scale = std::max({std::abs(fd), std::abs(analytic), 1e-6});
    worst_rel = std::max(worst_rel, std::abs(fd - analytic) / scale);
    ++checked;
  };
  for (int r = 0; r < p.w1.rows(); ++r)
    for (int c = 0; c < p.w1.cols(); ++c) probe(p.w1(r, c), g.w1(r, c));
  for (int r = 0; r < p.b1.size(); ++r) probe(p.b1(r), g.b1(r));
  for (int r = 0; r < p.w2.rows(); ++r)
    for (int c = 0; c < p.w2.cols(); ++c) probe(p.w2(r, c), g.w2(r, c));
  for (int r = 0; r < p.b2.size(); ++r) probe(p.b2(r), g.b2(r));
  out.require(worst_rel <= 1e-4, fmt("decoder grad vs FD: max rel err %.1e over %.0f params", worst_rel, checked));
  return out;
}

// 2. Selector state machine.
Outcome selector_state_machine() {
  Outcome out;
  auto transition = [](double p, double delta_l) {
    SelectorConfig sc;
    sc.p_init = p;
    sc.tau = 0;
    SelectorState st = make_selector_state(sc, 4);
    st.lstm.w_out.setZero();
    st.lstm.b_out = 50.0;  // LSTM votes for the frame
    const Decision d = decide(st, 0, Vector::Zero(4));
    FeedbackRecord fb;
    fb.frame_id = d.frame_id;
    fb.delta_l = delta_l;
    apply_feedback(st, fb);
    return st.p_t;
  };
  const double a = transition(0.50, -0.2);
  const double b = transition(0.05, -0.2);
  const double c = transition(0.60, 0.05);
  out.require(std::abs(a - 0.45) < 1e-12 && std::abs(b - 0.05) < 1e-12 && std::abs(c - 1.0) < 1e-12,
              fmt("p_t trajectories %.2f %.2f %.2f", a, b, c));

  SelectorConfig sc;
  sc.tau = 2;
  sc.p_init = 0.5;
  sc.seed = 3;
  SelectorState st = make_selector_state(sc, 4);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::int64_t last = -1000;
  int violations = 0;
  int positives = 0;
  for (int frame = 0; frame < 10000; ++frame) {
    Vector s(4);
    for (int i = 0; i < 4; ++i) s(i) = n01(rng);
    const Decision d = decide(st, frame, s);
    if (!d.train) continue;
    ++positives;
    if (frame - last <= 2) ++violations;
    last = frame;
    FeedbackRecord fb;
    fb.frame_id = frame;
    fb.delta_l = frame % 3 == 0 ? -0.5 : 0.2;
    apply_feedback(st, fb);
  }
  out.require(violations == 0 && positives > 0,
              fmt("tau=2 over 10^4 frames: %.0f positives, %.0f violations", positives, violations));

  SelectorConfig floor_cfg;
  floor_cfg.p_init = 0.05;
  floor_cfg.tau = 0;
  floor_cfg.seed = 11;
  SelectorState fs = make_selector_state(floor_cfg, 4);
  fs.lstm.w_out.setZero();
  fs.lstm.b_out = -50.0;
  int hits = 0;
  for (int i = 0; i < 100000; ++i) {
    const Decision d = decide(fs, i, Vector::Zero(4));
    if (d.train) {
      ++hits;
      discard_pending(fs, i);
    }
  }
  const double rate = hits / 1e5;
  out.require(std::abs(rate - 0.05) <= 0.005, fmt("Bernoulli floor rate %.4f", rate));
  return out;
}

// 3. Adaptation benefit.
Outcome adaptation_benefit() {
  Outcome out;
  const RunConfig tkd_cfg = load_run_config(kConfigs / "run.json");
  const RunConfig rnd_cfg = load_run_config(kConfigs / "run_random.json");
  const Stream stream = materialize_stream(tkd_cfg);
  const Student student(tkd_cfg.model, tkd_cfg.stream);

  PipelineConfig frozen_cfg = tkd_cfg.pipeline;
  frozen_cfg.mode = Mode::frozen_student;
  const PipelineReport tkd = run_pipeline(stream, student, tkd_cfg.pipeline);
  const PipelineReport rnd = run_pipeline(stream, student, rnd_cfg.pipeline);
  const PipelineReport frozen = run_pipeline(stream, student, frozen_cfg);
  const double f_tkd = at50(tkd).f1;
  const double f_rnd = at50(rnd).f1;
  const double f_frz = at50(frozen).f1;

  out.require(stream.frames.size() == 2000 && stream.change_points().size() == 3,
              fmt("%.0f frames, %.0f scene changes", stream.frames.size(), stream.change_points().size()));
  out.require(f_tkd - f_frz >= 0.15, fmt("F1 tkd %.3f vs frozen %.3f", f_tkd, f_frz));
  out.require(f_tkd >= f_rnd - 0.02, fmt("F1 tkd %.3f vs random %.3f", f_tkd, f_rnd));
  out.require(tkd.key_fraction <= rnd.key_fraction,
              fmt("key fraction tkd %.3f vs random %.3f", tkd.key_fraction, rnd.key_fraction));
  return out;
}

// 4. Lambda ablation trend.
Outcome lambda_ablation() {
  Outcome out;
  const RunConfig cfg = load_run_config(kConfigs / "ablate.json");
  const Stream stream = materialize_stream(cfg);
  const Student student(cfg.model, cfg.stream);
  const auto rows = ablate_lambda(stream, student, cfg.pipeline, cfg.lambdas);
  auto row = [&](double l) {
    return *std::find_if(rows.begin(), rows.end(), [&](const AblationRow& r) { return std::abs(r.lambda - l) < 1e-9; });
  };
  std::string table;
  for (const auto& r : rows) {
    table += fmt("%.1f:", r.lambda) + std::to_string(r.tp) + "/" + std::to_string(r.fp) + "/" +
             std::to_string(r.key_frames) + " ";
  }
  std::printf("      lambda:TP/FP/keys  %s\n", table.c_str());

  out.require(row(0.2).fp > row(0.4).fp, fmt("FP(0.2)=%.0f > FP(0.4)=%.0f", row(0.2).fp, row(0.4).fp));
  out.require(row(0.8).tp < row(0.4).tp, fmt("TP(0.8)=%.0f < TP(0.4)=%.0f", row(0.8).tp, row(0.4).tp));
  bool fewest_keys = true;
  bool lowest_fp = true;
  for (const auto& r : rows) {
    if (r.lambda == 0.0) continue;
    fewest_keys = fewest_keys && row(0.0).key_frames < r.key_frames;
    lowest_fp = lowest_fp && row(0.0).fp < r.fp;
  }
  out.require(fewest_keys, fmt("lambda 0 has the fewest key frames (%.0f)", row(0.0).key_frames));
  out.require(lowest_fp, fmt("lambda 0 has the lowest FP (%.0f)", row(0.0).fp));
  return out;
}

// 5. Loss-cost scaling.
Outcome loss_cost() {
  Outcome out;
  const RunConfig cfg = load_run_config(kConfigs / "bench.json");
  const auto rows = bench_loss_cost(cfg.bench);
  auto by = [&](int n) { return *std::find_if(rows.begin(), rows.end(), [&](const BenchRow& r) { return r.targets == n; }); };
  const double ratio = by(50).tkd_us / by(1).tkd_us;
  out.require(ratio <= 1.5, fmt("tkd_loss 50 vs 1 targets: %.2fx", ratio));
  bool increasing = true;
  std::string nms;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    nms += fmt("%.1f ", rows[i].nms_us);
    if (i > 0) increasing = increasing && rows[i].nms_us > rows[i - 1].nms_us;
  }
  out.require(increasing, "nms_loss us over {1,10,25,50}: " + nms);
  return out;
}

// 6. Parallelism.
Outcome parallelism() {
  Outcome out;
  RunConfig cfg = load_run_config(kConfigs / "run.json");
  const Stream stream = materialize_stream(cfg);
  const Student student(cfg.model, cfg.stream);
  const double forward_ms = measure_student_forward_ms(student, stream, 200);

  PipelineConfig base = cfg.pipeline;
  base.oracle_delay_ms = 10.0 * forward_ms;
  base.selector.kind = SelectorKind::random;
  base.selector.prob = 0.25;
  base.selector.baseline_tau = 0;

  PipelineConfig frozen = base;
  frozen.mode = Mode::frozen_student;
  PipelineConfig seq = base;
  seq.mode = Mode::sequential;
  PipelineConfig par = base;
  par.mode = Mode::parallel;
  // Paired rounds: each ratio compares runs taken back to back, and the median
  // over rounds discards the ones a noisy shared core distorted.
  std::vector<double> par_ratio, seq_ratio;
  PipelineReport rp;
  for (int round = 0; round < 5; ++round) {
    const PipelineReport f = run_pipeline(stream, student, frozen);
    const PipelineReport q = run_pipeline(stream, student, seq);
    rp = run_pipeline(stream, student, par);
    par_ratio.push_back(rp.fps / f.fps);
    seq_ratio.push_back(q.fps / f.fps);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  std::printf("      forward %.3f ms, oracle delay %.3f ms, key rate %.3f, parallel dropped %d\n", forward_ms,
              base.oracle_delay_ms, rp.key_fraction, rp.dropped);
  const double pr = median(par_ratio);
  const double sr = median(seq_ratio);
  out.require(pr >= 0.8, fmt("parallel/frozen FPS median %.2f (range %.2f-%.2f)", pr,
                             *std::min_element(par_ratio.begin(), par_ratio.end()),
                             *std::max_element(par_ratio.begin(), par_ratio.end())));
  out.require(sr <= 0.5, fmt("sequential/frozen FPS median %.2f (range %.2f-%.2f)", sr,
                             *std::min_element(seq_ratio.begin(), seq_ratio.end()),
                             *std::max_element(seq_ratio.begin(), seq_ratio.end())));
  return out;
}

// 7. Adaptivity.
Outcome adaptivity() {
  Outcome out;
  RunConfig fixed = load_run_config(kConfigs / "ablate.json", {"stream.n_frames=2000"});
  fixed.scenes.at(0).duration = {2000, 2000};
  const Stream still = materialize_stream(fixed);
  const Student student(fixed.model, fixed.stream);
  const PipelineReport r = run_pipeline(still, student, fixed.pipeline);
  const auto bins = keyframe_histogram(r.log, 100);
  const std::size_t q = bins.size() / 4;
  const double first = std::accumulate(bins.begin(), bins.begin() + q, 0.0) / q;
  const double last = std::accumulate(bins.end() - q, bins.end(), 0.0) / q;
  out.require(last < first, fmt("static stream key frames per bin: first quartile %.1f, last %.1f", first, last));

  RunConfig cycling = load_run_config(kConfigs / "run.json");
  for (SceneSpec& s : cycling.scenes) s.duration = {200, 200};
  const Stream changing = materialize_stream(cycling);
  const PipelineReport rc = run_pipeline(changing, student, cycling.pipeline);
  const auto cps = changing.change_points();
  const int window = 5;
  const auto counts = change_point_response(rc.log, cps, window);
  // a spike: more key frames in [cp, cp + 5] than the run-wide density predicts
  const double expected = rc.key_fraction * (window + 1);
  int spikes = 0;
  for (int c : counts) spikes += c > expected;
  const double share = cps.empty() ? 0.0 : double(spikes) / cps.size();
  out.require(share >= 0.75, fmt("spikes after %.0f of %.0f change points (baseline %.2f per window)", spikes,
                                 cps.size(), expected));
  return out;
}

// 8. Transfer.
Outcome transfer() {
  Outcome out;
  const RunConfig a_cfg = load_run_config(kConfigs / "ablate.json");
  const RunConfig b_cfg = load_run_config(kConfigs / "ablate.json", {"seed=" + std::to_string(a_cfg.seed + 100)});
  const Stream a = materialize_stream(a_cfg);
  const Stream b = materialize_stream(b_cfg);
  const Student student(a_cfg.model, a_cfg.stream);

  const PipelineReport adapt = run_pipeline(a, student, a_cfg.pipeline);
  PipelineConfig frozen = b_cfg.pipeline;
  frozen.mode = Mode::frozen_student;
  PipelineInit init;
  init.decoder = adapt.final_decoder;
  const PipelineReport transferred = run_pipeline(b, student, frozen, init);
  const PipelineReport baseline = run_pipeline(b, student, frozen);
  const double ft = at50(transferred).f1;
  const double fb = at50(baseline).f1;
  out.require(ft >= fb + 0.01, fmt("stream B F1 adapted-on-A %.3f vs frozen %.3f", ft, fb));
  return out;
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "loss correctness", 10, loss_correctness},
      {2, "selector state machine", 30, selector_state_machine},
      {3, "adaptation benefit", 300, adaptation_benefit},
      {4, "lambda ablation trend", 600, lambda_ablation},
      {5, "loss-cost scaling", 60, loss_cost},
      {6, "parallel inference", 120, parallelism},
      {7, "key-frame adaptivity", 180, adaptivity},
      {8, "transfer", 180, transfer},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) o.require(false, fmt("runtime %.1f s over the %.0f s budget", secs, c.budget_s));
    std::printf("[%s] %d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
