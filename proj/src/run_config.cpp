#include "tkd/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "tkd/error.hpp"

namespace tkd {

namespace {

using nlohmann::json;

// Typed, path-aware view of one JSON object. Every key read is recorded so
// finish() can reject the ones nobody asked for.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) throw ConfigError(where("") + " must be an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_ && j_->contains(key) && !j_->at(key).is_null();
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!has(key)) return;
    try {
      out = j_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  template <typename T>
  T need(const char* key) {
    if (!has(key)) throw ConfigError(where(key) + " is required");
    T out{};
    get(key, out);
    return out;
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_->at(key);
  }

  Section sub(const char* key) {
    seen_.insert(key);
    const json* child = (j_ && j_->contains(key) && !j_->at(key).is_null()) ? &j_->at(key) : nullptr;
    return Section(child, where(key));
  }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key;
    return key.empty() ? path_ : path_ + "." + key;
  }

  void finish() const {
    if (!j_) return;
    for (const auto& [k, v] : j_->items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where(k) + "'");
    }
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

IntRange int_range(Section& s, const char* key, IntRange fallback) {
  if (!s.has(key)) return fallback;
  std::vector<int> v;
  s.get(key, v);
  if (v.size() != 2) throw ConfigError(s.where(key) + " must be [min, max]");
  return {v[0], v[1]};
}

SceneSpec parse_scene(const json& j, const std::string& path, int index) {
  Section s(&j, path);
  SceneSpec scene;
  scene.scene_id = index;
  s.get("scene_id", scene.scene_id);
  scene.class_distribution = s.need<std::vector<double>>("class_distribution");
  scene.object_count = int_range(s, "object_count", scene.object_count);
  scene.duration = int_range(s, "duration", scene.duration);
  s.get("motion_sigma", scene.motion_sigma);
  s.get("appearance_shift", scene.appearance_shift);
  s.get("background", scene.background);
  s.get("turnover", scene.turnover);
  s.finish();
  return scene;
}

void parse_stream(Section s, RunConfig& cfg) {
  StreamConfig& sc = cfg.stream;
  Section grid = s.sub("grid");
  grid.get("s", sc.shape.s);
  grid.get("classes", sc.shape.c);
  grid.finish();
  s.get("input_dim", sc.input_dim);
  s.get("n_frames", sc.n_frames);
  s.get("transition_len", sc.transition_len);
  s.get("world_seed", sc.world_seed);
  s.get("amplitude", sc.amplitude);
  s.get("halo", sc.halo);
  s.get("texture", sc.texture);
  s.get("frame_noise", sc.frame_noise);
  s.get("size_min", sc.size_min);
  s.get("size_max", sc.size_max);
  if (s.has("scenes")) {
    const json& list = s.raw("scenes");
    if (!list.is_array()) throw ConfigError(s.where("scenes") + " must be an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      cfg.scenes.push_back(
          parse_scene(list[i], s.where("scenes") + "[" + std::to_string(i) + "]", static_cast<int>(i)));
    }
  }
  s.finish();
}

void parse_model(Section s, ModelConfig& m) {
  Section bb = s.sub("backbone");
  bb.get("hidden_dim", m.backbone.hidden_dim);
  bb.get("feature_dim", m.backbone.feature_dim);
  bb.get("seed", m.backbone.seed);
  bb.finish();
  s.get("decoder_hidden", m.decoder_hidden);
  s.get("seed", m.seed);
  s.get("pretrain_frames", m.pretrain_frames);
  s.get("pretrain_epochs", m.pretrain_epochs);
  s.get("pretrain_lr", m.pretrain_lr);
  s.finish();
}

void parse_oracle(Section s, PipelineConfig& p) {
  OracleNoiseSpec& n = p.oracle_noise;
  s.get("seed", p.oracle_seed);
  s.get("delay_ms", p.oracle_delay_ms);
  s.get("empty_cell_noise_rate", n.empty_cell_noise_rate);
  s.get("halo_noise_rate", n.halo_noise_rate);
  if (s.has("noise_logit_range")) {
    std::vector<double> r;
    s.get("noise_logit_range", r);
    if (r.size() != 2) throw ConfigError(s.where("noise_logit_range") + " must be [lo, hi]");
    n.noise_lo = r[0];
    n.noise_hi = r[1];
  }
  s.get("box_jitter_sigma", n.box_jitter_sigma);
  s.get("class_flip_prob", n.class_flip_prob);
  s.get("object_logit", n.object_logit);
  s.get("empty_logit", n.empty_logit);
  s.get("class_logit", n.class_logit);
  s.finish();
}

void parse_selector(Section s, SelectorSpec& sel) {
  if (s.has("kind")) {
    try {
      sel.kind = selector_kind_from_string(s.need<std::string>("kind"));
    } catch (const ConfigError& e) {
      throw ConfigError(s.where("kind") + ": " + e.what());
    }
  }
  SelectorConfig& t = sel.tkd;
  s.get("p_init", t.p_init);
  s.get("p_min", t.p_min);
  s.get("p_step", t.p_step);
  s.get("tau", t.tau);
  s.get("sigma", t.sigma);
  s.get("lstm_hidden", t.lstm_hidden);
  s.get("lstm_lr", t.lstm_lr);
  s.get("lstm_init_scale", t.lstm_init_scale);
  s.get("prob", sel.prob);
  s.get("threshold", sel.threshold);
  s.get("period", sel.period);
  s.get("baseline_tau", sel.baseline_tau);
  s.finish();
}

void parse_distill(Section s, DistillConfig& d) {
  s.get("lambda", d.lambda);
  s.get("theta_h", d.theta_h);
  s.get("beta", d.beta);
  s.get("lr", d.lr);
  s.get("steps_per_event", d.steps_per_event);
  s.finish();
}

void parse_eval(Section s, EvalConfig& e) {
  s.get("iou_thresholds", e.iou_thresholds);
  s.get("conf_threshold", e.conf_threshold);
  if (s.has("gt_source")) {
    try {
      e.gt_source = gt_source_from_string(s.need<std::string>("gt_source"));
    } catch (const ConfigError& err) {
      throw ConfigError(s.where("gt_source") + ": " + err.what());
    }
  }
  s.get("gt_conf_threshold", e.gt_conf_threshold);
  s.get("nms_iou", e.nms_iou);
  s.finish();
}

void parse_pipeline(Section s, PipelineConfig& p) {
  if (s.has("mode")) {
    try {
      p.mode = mode_from_string(s.need<std::string>("mode"));
    } catch (const ConfigError& e) {
      throw ConfigError(s.where("mode") + ": " + e.what());
    }
  }
  s.get("queue_capacity", p.queue_capacity);
  s.get("worker_nice", p.worker_nice);
  s.get("p_oracle", p.p_oracle);
  s.get("conf_threshold", p.conf_threshold);
  s.get("nms_iou", p.nms_iou);
  s.get("use_general_decoder", p.use_general_decoder);
  s.finish();
}

void parse_bench(Section s, BenchConfig& b) {
  s.get("target_counts", b.target_counts);
  s.get("trials", b.trials);
  s.get("s", b.s);
  s.get("classes", b.classes);
  s.get("seed", b.seed);
  s.get("conf_threshold", b.conf_threshold);
  s.get("nms_iou", b.nms_iou);
  s.finish();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

void set_dotted(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

json detection_json(const Detection& d) {
  return {{"cx", d.box.cx}, {"cy", d.box.cy}, {"w", d.box.w}, {"h", d.box.h},
          {"class_id", d.class_id}, {"confidence", d.confidence}};
}

json eval_to_json(const EvalSummary& e) {
  json thresholds = json::array();
  for (const ThresholdMetrics& m : e.thresholds) {
    thresholds.push_back({{"iou", m.iou}, {"ap", m.ap}, {"precision", m.precision}, {"recall", m.recall},
                          {"f1", m.f1}, {"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn},
                          {"class_ap", m.class_ap}});
  }
  return {{"frames", e.frames}, {"gt_objects", e.gt_objects}, {"thresholds", thresholds}};
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  if (trace && !scenes.empty()) {
    throw ConfigError("config sets both 'trace' and 'stream.scenes'; supply exactly one");
  }
  stream.validate();
  for (const SceneSpec& s : scenes) s.validate(stream.shape.c);
  model.validate();
  pipeline.validate();
  if (lambdas.empty()) throw ConfigError("ablate.lambdas must not be empty");
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("ablate.lambdas entries must lie in [0, 1]");
  }
  bench.validate();
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section root(&doc, "");
  RunConfig cfg;
  cfg.seed = root.need<std::uint64_t>("seed");
  cfg.stream.seed = cfg.seed;
  cfg.pipeline.seed = cfg.seed;

  parse_stream(root.sub("stream"), cfg);
  if (root.has("trace")) cfg.trace = resolve(base_dir, root.need<std::string>("trace"));
  parse_model(root.sub("model"), cfg.model);
  parse_oracle(root.sub("oracle"), cfg.pipeline);
  parse_selector(root.sub("selector"), cfg.pipeline.selector);
  parse_distill(root.sub("distill"), cfg.pipeline.distill);
  parse_pipeline(root.sub("pipeline"), cfg.pipeline);
  // The eval section defaults its detection threshold to the pipeline's.
  cfg.pipeline.eval.conf_threshold = cfg.pipeline.conf_threshold;
  parse_eval(root.sub("eval"), cfg.pipeline.eval);

  Section ablate = root.sub("ablate");
  ablate.get("lambdas", cfg.lambdas);
  ablate.finish();
  parse_bench(root.sub("bench"), cfg.bench);
  if (root.has("init_checkpoint")) {
    cfg.init_checkpoint = resolve(base_dir, root.need<std::string>("init_checkpoint"));
  }

  Section out = root.sub("output");
  for (auto [key, field] : {std::pair{"report", &cfg.output.report}, std::pair{"table", &cfg.output.table},
                            std::pair{"csv", &cfg.output.csv}, std::pair{"checkpoint", &cfg.output.checkpoint}}) {
    if (out.has(key)) *field = resolve(base_dir, out.need<std::string>(key));
  }
  out.finish();
  root.finish();

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  if (!overrides.empty()) {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    for (const std::string& o : overrides) set_dotted(doc, o);
    text = doc.dump();
  }
  return parse_run_config(text, path.parent_path());
}

Stream materialize_stream(const RunConfig& cfg) {
  if (!cfg.trace) {
    if (cfg.scenes.empty()) throw ConfigError("config needs 'stream.scenes' or 'trace'");
    return generate_stream(cfg.scenes, cfg.stream);
  }
  Stream s = read_trace(*cfg.trace);
  if (s.shape.s != cfg.stream.shape.s || s.shape.c != cfg.stream.shape.c || s.input_dim != cfg.stream.input_dim) {
    throw ConfigError("trace " + cfg.trace->string() + " has grid " + std::to_string(s.shape.s) + "x" +
                      std::to_string(s.shape.c) + " and input_dim " + std::to_string(s.input_dim) +
                      ", which does not match stream.grid / stream.input_dim");
  }
  return s;
}

std::string report_json(const PipelineReport& r, bool with_detections) {
  json log = json::array();
  for (const FrameLog& f : r.log) {
    log.push_back({{"frame_id", f.frame_id}, {"train", f.train}, {"lstm_vote", f.lstm_vote},
                   {"random_vote", f.random_vote}, {"suppressed", f.suppressed},
                   {"oracle_answered", f.oracle_answered}, {"p_t", f.p_t}, {"latency_ms", f.latency_ms},
                   {"decoder_version", f.decoder_version}});
  }
  json losses = json::array();
  for (const LossEvent& e : r.losses) {
    losses.push_back({{"frame_id", e.frame_id}, {"loss_before", e.loss_before}, {"loss_after", e.loss_after},
                      {"delta_l", e.delta_l}, {"source", to_string(e.source)},
                      {"committed_version", e.committed_version}, {"error", e.error}});
  }
  json doc = {{"format", "tkd-report"},
              {"version", 1},
              {"summary",
               {{"mode", to_string(r.mode)},
                {"selector", to_string(r.selector)},
                {"frames", r.frames},
                {"key_frames", r.key_frames},
                {"key_fraction", r.key_fraction},
                {"seconds", r.seconds},
                {"fps", r.fps},
                {"dropped", r.dropped},
                {"unprocessed", r.unprocessed},
                {"aborted", r.aborted},
                {"error", r.error},
                {"mean_latency_key_ms", r.mean_latency_ms(true)},
                {"mean_latency_other_ms", r.mean_latency_ms(false)}}},
              {"eval", r.eval ? eval_to_json(*r.eval) : json(nullptr)},
              {"log", log},
              {"losses", losses}};
  if (with_detections) {
    json dets = json::array();
    for (const auto& frame : r.detections) {
      json list = json::array();
      for (const Detection& d : frame) list.push_back(detection_json(d));
      dets.push_back(list);
    }
    doc["detections"] = dets;
  }
  return doc.dump(1);
}

void write_report(const std::filesystem::path& path, const PipelineReport& report, bool with_detections) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open report for writing: " + path.string());
  out << report_json(report, with_detections) << '\n';
  if (!out) throw std::runtime_error("failed writing report: " + path.string());
}

std::vector<std::vector<Detection>> read_report_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report: " + path.string());
  try {
    const json doc = json::parse(in);
    if (!doc.contains("detections")) throw FormatError("report " + path.string() + " carries no detections");
    std::vector<std::vector<Detection>> out;
    for (const json& frame : doc.at("detections")) {
      std::vector<Detection>& list = out.emplace_back();
      for (const json& d : frame) {
        Detection det;
        det.box = {d.at("cx").get<double>(), d.at("cy").get<double>(), d.at("w").get<double>(),
                   d.at("h").get<double>()};
        det.class_id = d.at("class_id").get<int>();
        det.confidence = d.at("confidence").get<double>();
        list.push_back(det);
      }
    }
    return out;
  } catch (const json::exception& e) {
    throw FormatError("report " + path.string() + ": " + e.what());
  }
}

std::string eval_json(const EvalSummary& summary) { return eval_to_json(summary).dump(1); }

std::string format_eval_table(const EvalSummary& e) {
  std::ostringstream os;
  os << "  iou      ap    prec  recall      f1      tp      fp      fn\n";
  for (const ThresholdMetrics& m : e.thresholds) {
    char line[128];
    std::snprintf(line, sizeof line, "%5.2f  %6.3f  %6.3f  %6.3f  %6.3f  %6d  %6d  %6d\n", m.iou, m.ap,
                  m.precision, m.recall, m.f1, m.tp, m.fp, m.fn);
    os << line;
  }
  return os.str();
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "lambda      ap      f1      tp      fp      fn   keys  key_frac\n";
  for (const AblationRow& r : rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%6.2f  %6.3f  %6.3f  %6d  %6d  %6d  %5d  %8.3f\n", r.lambda, r.ap, r.f1,
                  r.tp, r.fp, r.fn, r.key_frames, r.key_fraction);
    os << line;
  }
  return os.str();
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "lambda,ap,f1,tp,fp,fn,key_frames,key_fraction\n";
  for (const AblationRow& r : rows) {
    os << fmt("%.6g", r.lambda) << ',' << fmt("%.6f", r.ap) << ',' << fmt("%.6f", r.f1) << ',' << r.tp << ','
       << r.fp << ',' << r.fn << ',' << r.key_frames << ',' << fmt("%.6f", r.key_fraction) << '\n';
  }
  return os.str();
}

std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "targets  decoded   tkd_us   nms_us   nms/tkd\n";
  for (const BenchRow& r : rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%7d  %7d  %7.2f  %7.2f  %8.2f\n", r.targets, r.decoded, r.tkd_us, r.nms_us,
                  r.tkd_us > 0 ? r.nms_us / r.tkd_us : 0.0);
    os << line;
  }
  return os.str();
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "targets,decoded,tkd_us,nms_us,tkd_loss,nms_loss\n";
  for (const BenchRow& r : rows) {
    os << r.targets << ',' << r.decoded << ',' << fmt("%.4f", r.tkd_us) << ',' << fmt("%.4f", r.nms_us) << ','
       << fmt("%.6g", r.tkd_loss) << ',' << fmt("%.6g", r.nms_loss) << '\n';
  }
  return os.str();
}

}  // namespace tkd
