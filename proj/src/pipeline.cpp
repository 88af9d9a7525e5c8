#include "tkd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>

#ifdef __linux__
#include <sys/resource.h>
#include <sys/syscall.h>
#include <unistd.h>
#endif

#include "tkd/error.hpp"

namespace tkd {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void simulate_oracle_cost(double delay_ms) {
  if (delay_ms > 0.0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay_ms));
}

// Best effort: on a machine with few cores the worker should yield to inference.
void lower_priority(int nice) {
#ifdef __linux__
  if (nice > 0) setpriority(PRIO_PROCESS, static_cast<id_t>(syscall(SYS_gettid)), nice);
#else
  (void)nice;
#endif
}

// Uniform front-end over the adaptive selector and the baselines.
class Selection {
 public:
  Selection(const PipelineConfig& cfg, int summary_dim, const PipelineInit& init)
      : kind_(cfg.selector.kind), gate_(cfg.selector.baseline_tau) {
    const SelectorSpec& spec = cfg.selector;
    switch (kind_) {
      case SelectorKind::tkd: {
        if (init.selector) {
          tkd_ = *init.selector;
        } else {
          SelectorConfig sc = spec.tkd;
          sc.seed = cfg.seed * 0x9e3779b97f4a7c15ULL + 1;
          tkd_ = make_selector_state(sc, summary_dim);
        }
        break;
      }
      case SelectorKind::random:
        random_.emplace(spec.prob, spec.baseline_tau, cfg.seed * 0x9e3779b97f4a7c15ULL + 2);
        break;
      case SelectorKind::periodic:
        periodic_.emplace(spec.period, spec.baseline_tau);
        break;
      case SelectorKind::scene_change:
        if (!(spec.threshold >= 0.0)) throw ConfigError("selector.threshold must be >= 0");
        scene_.emplace(spec.threshold);
        break;
    }
  }

  Decision decide(const FrameRecord& rec, const FeatureSummary& summary) {
    switch (kind_) {
      case SelectorKind::tkd: return tkd::decide(*tkd_, rec.frame_id, summary);
      case SelectorKind::random: return random_->decide(rec.frame_id);
      case SelectorKind::periodic: return periodic_->decide(rec.frame_id);
      case SelectorKind::scene_change: {
        Decision d = scene_->decide(rec.frame);
        if (!gate_.open()) {
          d.suppressed = true;
          d.train = false;
        }
        gate_.admit(d.train);
        return d;
      }
    }
    return {};
  }

  void feedback(const FeedbackRecord& fb) {
    if (tkd_) apply_feedback(*tkd_, fb);
  }
  void discard(std::int64_t frame_id) {
    if (tkd_) discard_pending(*tkd_, frame_id);
  }
  const std::optional<SelectorState>& state() const { return tkd_; }

 private:
  SelectorKind kind_;
  TrainGate gate_;
  std::optional<SelectorState> tkd_;
  std::optional<RandomSelector> random_;
  std::optional<PeriodicSelector> periodic_;
  std::optional<SceneChangeSelector> scene_;
};

struct StudentPass {
  Backbone::Output bb;
  std::vector<Detection> dets;
};

StudentPass student_pass(const Student& student, const DecoderParams& tkd_params,
                         const FrameRecord& rec, const PipelineConfig& cfg) {
  StudentPass out;
  out.bb = student.backbone().forward(rec.frame);
  const DetectionTensor tkd_out = decoder_forward(tkd_params, out.bb.features);
  if (cfg.use_general_decoder) {
    const DetectionTensor general_out = decoder_forward(student.general(), out.bb.features);
    out.dets = merge_detections(tkd_out, general_out, cfg.conf_threshold, cfg.nms_iou);
  } else {
    out.dets = nms(decode_tensor(tkd_out, cfg.conf_threshold), cfg.nms_iou);
  }
  return out;
}

std::vector<Detection> oracle_detections(const FrameRecord& rec, const GridShape& shape,
                                         const PipelineConfig& cfg) {
  const DetectionTensor t = oracle_for_frame(rec, cfg.oracle_noise, shape, cfg.oracle_seed);
  return nms(decode_tensor(t, cfg.eval.gt_conf_threshold), cfg.nms_iou);
}

LossEvent to_event(const FeedbackRecord& fb, std::uint64_t version) {
  LossEvent e;
  e.frame_id = fb.frame_id;
  e.loss_before = fb.loss_before;
  e.loss_after = fb.loss_after;
  e.delta_l = fb.delta_l;
  e.source = fb.source;
  e.committed_version = fb.ok() ? version : 0;
  e.error = fb.error;
  return e;
}

void check_stream(const Stream& stream, const Student& student) {
  if (!(stream.shape == student.shape())) {
    throw ConfigError("stream grid shape does not match the model");
  }
  if (stream.input_dim != student.backbone().config().input_dim) {
    throw ConfigError("stream feature dim does not match model.input_dim");
  }
}

PipelineReport start_report(const Stream& stream, const PipelineConfig& cfg) {
  PipelineReport r;
  r.mode = cfg.mode;
  r.selector = cfg.selector.kind;
  r.log.reserve(stream.frames.size());
  r.detections.reserve(stream.frames.size());
  return r;
}

void finish_report(PipelineReport& r, double seconds) {
  r.frames = static_cast<int>(r.log.size());
  r.key_frames = static_cast<int>(
      std::count_if(r.log.begin(), r.log.end(), [](const FrameLog& f) { return f.train; }));
  r.key_fraction = r.frames ? static_cast<double>(r.key_frames) / r.frames : 0.0;
  r.seconds = seconds;
  r.fps = seconds > 0.0 ? r.frames / seconds : 0.0;
}

FrameLog log_decision(const Decision& d, std::uint64_t version) {
  FrameLog f;
  f.frame_id = d.frame_id;
  f.train = d.train;
  f.lstm_vote = d.lstm_vote;
  f.random_vote = d.random_vote;
  f.suppressed = d.suppressed;
  f.p_t = d.p_t;
  f.decoder_version = version;
  return f;
}

// frozen_student, mixed and oracle_only: no decoder updates.
PipelineReport run_static(const Stream& stream, const Student& student, const PipelineConfig& cfg,
                          const PipelineInit& init) {
  PipelineReport r = start_report(stream, cfg);
  const DecoderParams params = init.decoder ? *init.decoder : student.initial_tkd();
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 3);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto t_start = Clock::now();
  for (const FrameRecord& rec : stream.frames) {
    const auto t0 = Clock::now();
    bool use_oracle = cfg.mode == Mode::oracle_only;
    if (cfg.mode == Mode::mixed) use_oracle = u01(rng) < cfg.p_oracle;
    FrameLog f;
    f.frame_id = rec.frame_id;
    f.decoder_version = params.version;
    f.oracle_answered = use_oracle;
    if (use_oracle) {
      simulate_oracle_cost(cfg.oracle_delay_ms);
      r.detections.push_back(oracle_detections(rec, stream.shape, cfg));
    } else {
      r.detections.push_back(student_pass(student, params, rec, cfg).dets);
    }
    f.latency_ms = ms_since(t0);
    r.log.push_back(f);
  }
  finish_report(r, std::chrono::duration<double>(Clock::now() - t_start).count());
  r.final_decoder = params;
  return r;
}

}  // namespace

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::sequential: return "sequential";
    case Mode::parallel: return "parallel";
    case Mode::frozen_student: return "frozen_student";
    case Mode::mixed: return "mixed";
    case Mode::oracle_only: return "oracle_only";
  }
  return "sequential";
}

Mode mode_from_string(const std::string& name) {
  for (Mode m : {Mode::sequential, Mode::parallel, Mode::frozen_student, Mode::mixed, Mode::oracle_only}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("pipeline.mode: unknown mode '" + name + "'");
}

const char* to_string(SelectorKind kind) {
  switch (kind) {
    case SelectorKind::tkd: return "tkd";
    case SelectorKind::random: return "random";
    case SelectorKind::scene_change: return "scene_change";
    case SelectorKind::periodic: return "periodic";
  }
  return "tkd";
}

SelectorKind selector_kind_from_string(const std::string& name) {
  for (SelectorKind k : {SelectorKind::tkd, SelectorKind::random, SelectorKind::scene_change,
                         SelectorKind::periodic}) {
    if (name == to_string(k)) return k;
  }
  throw ConfigError("selector.kind: unknown selector '" + name + "'");
}

void PipelineConfig::validate() const {
  distill.validate();
  oracle_noise.validate();
  eval.validate();
  selector.tkd.validate();
  if (!(selector.prob >= 0.0 && selector.prob <= 1.0)) throw ConfigError("selector.prob must lie in [0, 1]");
  if (selector.period < 1) throw ConfigError("selector.period must be >= 1");
  if (!(selector.threshold >= 0.0)) throw ConfigError("selector.threshold must be >= 0");
  if (selector.baseline_tau < 0) throw ConfigError("selector.baseline_tau must be >= 0");
  if (!(oracle_delay_ms >= 0.0)) throw ConfigError("pipeline.oracle_delay_ms must be >= 0");
  if (queue_capacity < 1) throw ConfigError("pipeline.queue_capacity must be >= 1");
  if (worker_nice < 0 || worker_nice > 19) throw ConfigError("pipeline.worker_nice must lie in [0, 19]");
  if (!(p_oracle >= 0.0 && p_oracle <= 1.0)) throw ConfigError("pipeline.p_oracle must lie in [0, 1]");
  if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0)) {
    throw ConfigError("pipeline.conf_threshold must lie in [0, 1]");
  }
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("pipeline.nms_iou must lie in (0, 1]");
}

double PipelineReport::mean_latency_ms(bool key) const {
  double sum = 0.0;
  int n = 0;
  for (const FrameLog& f : log) {
    if (f.train != key) continue;
    sum += f.latency_ms;
    ++n;
  }
  return n ? sum / n : 0.0;
}

std::vector<Detection> merge_detections(const DetectionTensor& tkd_out, const DetectionTensor& general_out,
                                        double conf_threshold, double iou_threshold) {
  if (!(tkd_out.shape() == general_out.shape())) {
    throw std::invalid_argument("merge_detections: tensor shapes differ");
  }
  std::vector<Detection> all = decode_tensor(tkd_out, conf_threshold);
  std::vector<Detection> general = decode_tensor(general_out, conf_threshold);
  all.insert(all.end(), std::make_move_iterator(general.begin()), std::make_move_iterator(general.end()));
  return nms(std::move(all), iou_threshold);
}

PipelineReport run_sequential(const Stream& stream, const Student& student, const PipelineConfig& cfg,
                              const PipelineInit& init) {
  cfg.validate();
  check_stream(stream, student);
  PipelineReport r = start_report(stream, cfg);
  DecoderStore store(init.decoder ? *init.decoder : student.initial_tkd());
  Selection sel(cfg, 2 * student.backbone().config().feature_dim, init);

  const auto t_start = Clock::now();
  for (const FrameRecord& rec : stream.frames) {
    const auto t0 = Clock::now();
    const auto snap = store.snapshot();
    StudentPass pass = student_pass(student, *snap, rec, cfg);
    const Decision d = sel.decide(rec, pass.bb.summary);
    FrameLog f = log_decision(d, snap->version);
    r.detections.push_back(std::move(pass.dets));

    if (d.train) {
      simulate_oracle_cost(cfg.oracle_delay_ms);
      const DetectionTensor oracle = oracle_for_frame(rec, cfg.oracle_noise, stream.shape, cfg.oracle_seed);
      DistillOutcome out = distill_step(*snap, pass.bb.features, oracle, cfg.distill);
      out.feedback.source = d.source();
      std::uint64_t version = 0;
      if (out.feedback.ok()) version = store.commit(std::move(out.params));
      sel.feedback(out.feedback);
      r.losses.push_back(to_event(out.feedback, version));
      if (!out.feedback.ok()) {
        r.aborted = true;
        r.error = "frame " + std::to_string(rec.frame_id) + ": " + out.feedback.error;
      }
    }
    f.latency_ms = ms_since(t0);
    r.log.push_back(f);
    if (r.aborted) break;
  }
  finish_report(r, std::chrono::duration<double>(Clock::now() - t_start).count());
  r.final_decoder = *store.snapshot();
  r.final_selector = sel.state();
  return r;
}

PipelineReport run_parallel(const Stream& stream, const Student& student, const PipelineConfig& cfg,
                            const PipelineInit& init) {
  cfg.validate();
  check_stream(stream, student);
  PipelineReport r = start_report(stream, cfg);
  DecoderStore store(init.decoder ? *init.decoder : student.initial_tkd());
  Selection sel(cfg, 2 * student.backbone().config().feature_dim, init);

  struct Job {
    const FrameRecord* rec;
    FeatureFrame features;  // deep copy of the key frame's backbone output
    DecisionSource source;
  };
  struct Done {
    FeedbackRecord fb;
    std::uint64_t version;
  };
  std::mutex qmu;
  std::condition_variable cv;
  std::deque<Job> queue;
  bool stop = false;
  std::mutex fmu;
  std::vector<Done> done;
  std::exception_ptr worker_error;
  bool worker_failed = false;

  std::thread worker([&] {
    lower_priority(cfg.worker_nice);
    try {
      for (;;) {
        Job job;
        {
          std::unique_lock<std::mutex> lock(qmu);
          cv.wait(lock, [&] { return stop || !queue.empty(); });
          if (stop) return;
          job = std::move(queue.front());
          queue.pop_front();
        }
        simulate_oracle_cost(cfg.oracle_delay_ms);
        const DetectionTensor oracle =
            oracle_for_frame(*job.rec, cfg.oracle_noise, stream.shape, cfg.oracle_seed);
        DistillOutcome out = distill_step(*store.snapshot(), job.features, oracle, cfg.distill);
        out.feedback.source = job.source;
        std::uint64_t version = 0;
        if (out.feedback.ok()) version = store.commit(std::move(out.params));
        std::lock_guard<std::mutex> lock(fmu);
        done.push_back({std::move(out.feedback), version});
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(fmu);
      worker_error = std::current_exception();
      worker_failed = true;
    }
  });

  auto drain_feedback = [&] {
    std::vector<Done> batch;
    {
      std::lock_guard<std::mutex> lock(fmu);
      batch.swap(done);
      if (worker_failed) return false;
    }
    for (const Done& item : batch) {
      sel.feedback(item.fb);
      r.losses.push_back(to_event(item.fb, item.version));
      if (!item.fb.ok() && !r.aborted) {
        r.aborted = true;
        r.error = "frame " + std::to_string(item.fb.frame_id) + ": " + item.fb.error;
      }
    }
    return true;
  };

  const auto t_start = Clock::now();
  for (const FrameRecord& rec : stream.frames) {
    const auto t0 = Clock::now();
    if (!drain_feedback() || r.aborted) break;
    const auto snap = store.snapshot();
    StudentPass pass = student_pass(student, *snap, rec, cfg);
    const Decision d = sel.decide(rec, pass.bb.summary);
    FrameLog f = log_decision(d, snap->version);
    r.detections.push_back(std::move(pass.dets));
    if (d.train) {
      std::optional<std::int64_t> evicted;
      {
        std::lock_guard<std::mutex> lock(qmu);
        if (static_cast<int>(queue.size()) >= cfg.queue_capacity) {
          evicted = queue.front().rec->frame_id;
          queue.pop_front();
        }
        queue.push_back({&rec, std::move(pass.bb.features), d.source()});
      }
      cv.notify_one();
      if (evicted) {
        ++r.dropped;
        sel.discard(*evicted);
      }
    }
    f.latency_ms = ms_since(t0);
    r.log.push_back(f);
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - t_start).count();

  {
    std::lock_guard<std::mutex> lock(qmu);
    stop = true;
    r.unprocessed = static_cast<int>(queue.size());
    for (const Job& job : queue) sel.discard(job.rec->frame_id);
    queue.clear();
  }
  cv.notify_one();
  worker.join();
  if (worker_error) {
    r.aborted = true;
    try {
      std::rethrow_exception(worker_error);
    } catch (const std::exception& e) {
      r.error = std::string("distillation worker failed: ") + e.what();
    }
  } else {
    drain_feedback();
  }
  finish_report(r, seconds);
  r.final_decoder = *store.snapshot();
  r.final_selector = sel.state();
  return r;
}

PipelineReport run_pipeline(const Stream& stream, const Student& student, const PipelineConfig& cfg,
                            const PipelineInit& init) {
  cfg.validate();
  check_stream(stream, student);
  PipelineReport r;
  switch (cfg.mode) {
    case Mode::sequential: r = run_sequential(stream, student, cfg, init); break;
    case Mode::parallel: r = run_parallel(stream, student, cfg, init); break;
    default: r = run_static(stream, student, cfg, init); break;
  }
  r.eval = evaluate_report(r, stream, cfg);
  return r;
}

std::vector<std::vector<GroundTruthObject>> reference_labels(const Stream& stream,
                                                             const PipelineConfig& cfg) {
  std::vector<std::vector<GroundTruthObject>> out;
  out.reserve(stream.frames.size());
  for (const FrameRecord& rec : stream.frames) {
    if (cfg.eval.gt_source == GtSource::true_gt) {
      out.push_back(rec.gt);
    } else {
      out.push_back(detections_as_gt(oracle_detections(rec, stream.shape, cfg)));
    }
  }
  return out;
}

EvalSummary evaluate_report(const PipelineReport& report, const Stream& stream,
                            const PipelineConfig& cfg) {
  const auto labels = reference_labels(stream, cfg);
  std::vector<EvalFrame> frames;
  frames.reserve(report.detections.size());
  for (std::size_t i = 0; i < report.detections.size() && i < labels.size(); ++i) {
    frames.push_back({report.detections[i], labels[i]});
  }
  return evaluate(frames, stream.shape.c, cfg.eval);
}

double measure_student_forward_ms(const Student& student, const Stream& stream, int frames) {
  if (stream.frames.empty()) throw std::invalid_argument("measure_student_forward_ms: empty stream");
  PipelineConfig cfg;
  const DecoderParams params = student.initial_tkd();
  std::vector<double> times;
  for (int i = 0; i < frames + 5; ++i) {
    const FrameRecord& rec = stream.frames[i % stream.frames.size()];
    const auto t0 = Clock::now();
    const StudentPass pass = student_pass(student, params, rec, cfg);
    const double t = ms_since(t0);
    if (i >= 5) times.push_back(t);
  }
  std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
  return times[times.size() / 2];
}

}  // namespace tkd
