#include "tkd/sim_stream.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string_view>

#include "tkd/error.hpp"

namespace tkd {

namespace {

constexpr int kGeometryChannels = 4;
// Oracle offsets stay within 2% of a cell edge so their logits remain bounded.
constexpr double kOffsetLogitLimit = 5.293304824724492;  // logit(0.995)

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

Vector random_unit(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = dist(rng);
  return v / v.norm();
}

// Class directions live in the appearance channels only.
Matrix canonical_class_dirs(const StreamConfig& cfg) {
  std::mt19937_64 rng(mix_seed(cfg.world_seed, 0xc1a55));
  const int n_app = cfg.input_dim - kGeometryChannels;
  Matrix dirs(cfg.shape.c, n_app);
  for (int k = 0; k < cfg.shape.c; ++k) dirs.row(k) = random_unit(n_app, rng).transpose();
  return dirs;
}

double offset_feature(double fraction) {
  const double f = std::clamp(fraction, 1e-6, 1.0 - 1e-6);
  return std::clamp(logit(f), -kOffsetLogitLimit, kOffsetLogitLimit) / kOffsetLogitLimit;
}

struct SceneLook {
  Matrix class_dirs;  // c x n_app
  Matrix background;  // cells x input_dim
};

SceneLook make_look(const SceneSpec& spec, const StreamConfig& cfg, const Matrix& canonical) {
  std::mt19937_64 rng(mix_seed(cfg.world_seed, 0x5ce7e, static_cast<std::uint64_t>(spec.scene_id)));
  const int n_app = cfg.input_dim - kGeometryChannels;
  SceneLook look;
  look.class_dirs = canonical;
  for (int k = 0; k < cfg.shape.c; ++k) {
    Vector u = canonical.row(k).transpose() + spec.appearance_shift * random_unit(n_app, rng);
    look.class_dirs.row(k) = (u / u.norm()).transpose();
  }
  Vector offset = Vector::Zero(cfg.input_dim);
  offset.tail(n_app) = spec.background * random_unit(n_app, rng);
  std::normal_distribution<double> tex(0.0, cfg.texture);
  look.background = Matrix(cfg.shape.cells(), cfg.input_dim);
  for (int cell = 0; cell < cfg.shape.cells(); ++cell) {
    for (int ch = 0; ch < cfg.input_dim; ++ch) {
      look.background(cell, ch) = offset(ch) + (ch < kGeometryChannels ? 0.0 : tex(rng));
    }
  }
  return look;
}

struct Segment {
  int scene_index = 0;
  std::int64_t start = 0;
  std::int64_t end = 0;
};

class SceneRun {
 public:
  SceneRun(const SceneSpec& spec, const StreamConfig& cfg, const Matrix& canonical,
           std::uint64_t seed, std::int64_t id_base)
      : spec_(spec), cfg_(cfg), look_(make_look(spec, cfg, canonical)), rng_(seed),
        next_id_(id_base),
        classes_(spec.class_distribution.begin(), spec.class_distribution.end()) {
    const int n = std::uniform_int_distribution<int>(spec.object_count.min, spec.object_count.max)(rng_);
    for (int i = 0; i < n; ++i) objects_.push_back(spawn());
  }

  const std::vector<GroundTruthObject>& objects() const { return objects_; }
  int scene_id() const { return spec_.scene_id; }

  void step() {
    std::normal_distribution<double> motion(0.0, spec_.motion_sigma);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (GroundTruthObject& obj : objects_) {
      if (spec_.turnover > 0.0 && u01(rng_) < spec_.turnover) {
        obj = spawn();
        continue;
      }
      if (spec_.motion_sigma > 0.0) {
        obj.box.cx += motion(rng_);
        obj.box.cy += motion(rng_);
      }
      obj.box.cx = std::clamp(obj.box.cx, obj.box.w / 2, 1.0 - obj.box.w / 2);
      obj.box.cy = std::clamp(obj.box.cy, obj.box.h / 2, 1.0 - obj.box.h / 2);
    }
  }

  Matrix render() const {
    const GridShape& shape = cfg_.shape;
    const double mid = 0.5 * (logit(cfg_.size_min) + logit(cfg_.size_max));
    const double half = std::max(0.5 * (logit(cfg_.size_max) - logit(cfg_.size_min)), 1e-3);
    Matrix x = look_.background;
    for (const GroundTruthObject& obj : objects_) {
      const double gx = std::clamp(obj.box.cx, 0.0, 1.0 - 1e-9) * shape.s;
      const double gy = std::clamp(obj.box.cy, 0.0, 1.0 - 1e-9) * shape.s;
      const int col = std::min(static_cast<int>(gx), shape.s - 1);
      const int row = std::min(static_cast<int>(gy), shape.s - 1);
      const int cell = row * shape.s + col;
      const double a = cfg_.amplitude;
      // geometry channels carry the offsets and sizes on the decoder's logit scale
      x(cell, 0) += a * offset_feature(gx - col);
      x(cell, 1) += a * offset_feature(gy - row);
      x(cell, 2) += a * (logit(obj.box.w) - mid) / half;
      x(cell, 3) += a * (logit(obj.box.h) - mid) / half;
      const auto dir = look_.class_dirs.row(obj.class_id);
      x.row(cell).tail(dir.size()) += a * dir;
      const int dr[4] = {-1, 1, 0, 0};
      const int dc[4] = {0, 0, -1, 1};
      for (int n = 0; n < 4; ++n) {
        const int r = row + dr[n];
        const int c = col + dc[n];
        if (r < 0 || r >= shape.s || c < 0 || c >= shape.s) continue;
        x.row(r * shape.s + c).tail(dir.size()) += cfg_.halo * a * dir;
      }
    }
    return x;
  }

 private:
  GroundTruthObject spawn() {
    std::uniform_real_distribution<double> size(cfg_.size_min, cfg_.size_max);
    GroundTruthObject obj;
    obj.object_id = next_id_++;
    obj.class_id = classes_(rng_);
    obj.box.w = size(rng_);
    obj.box.h = size(rng_);
    obj.box.cx = std::uniform_real_distribution<double>(obj.box.w / 2, 1.0 - obj.box.w / 2)(rng_);
    obj.box.cy = std::uniform_real_distribution<double>(obj.box.h / 2, 1.0 - obj.box.h / 2)(rng_);
    return obj;
  }

  const SceneSpec& spec_;
  const StreamConfig& cfg_;
  SceneLook look_;
  std::mt19937_64 rng_;
  std::int64_t next_id_;
  std::discrete_distribution<int> classes_;
  std::vector<GroundTruthObject> objects_;
};

void quantize_to_float(Matrix& m) {
  m = m.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

}  // namespace

void SceneSpec::validate(int classes) const {
  const std::string where = "scene " + std::to_string(scene_id) + ": ";
  if (static_cast<int>(class_distribution.size()) != classes) {
    throw ConfigError(where + "class_distribution must have " + std::to_string(classes) + " entries");
  }
  double sum = 0.0;
  for (double p : class_distribution) {
    if (!(p >= 0.0)) throw ConfigError(where + "class_distribution entries must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(where + "class_distribution must sum to 1");
  if (object_count.min < 0 || object_count.min > object_count.max) {
    throw ConfigError(where + "object_count must satisfy 0 <= min <= max");
  }
  if (duration.min < 1 || duration.min > duration.max) {
    throw ConfigError(where + "duration must satisfy 1 <= min <= max");
  }
  if (!(motion_sigma >= 0.0)) throw ConfigError(where + "motion_sigma must be >= 0");
  if (!(turnover >= 0.0 && turnover <= 1.0)) throw ConfigError(where + "turnover must lie in [0, 1]");
  if (!(appearance_shift >= 0.0)) throw ConfigError(where + "appearance_shift must be >= 0");
}

void StreamConfig::validate() const {
  try {
    tkd::validate(shape);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("stream.") + e.what());
  }
  if (n_frames < 1) throw ConfigError("stream.n_frames must be >= 1");
  if (transition_len < 2) throw ConfigError("stream.transition_len must be >= 2");
  if (input_dim < kGeometryChannels + 1) {
    throw ConfigError("stream.input_dim must exceed " + std::to_string(kGeometryChannels));
  }
  if (!(size_min > 0.0 && size_min <= size_max && size_max < 1.0)) {
    throw ConfigError("stream.size_min/size_max must satisfy 0 < min <= max < 1");
  }
}

std::vector<std::int64_t> Stream::change_points() const {
  std::vector<std::int64_t> out;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].scene_id != frames[i - 1].scene_id) out.push_back(static_cast<std::int64_t>(i));
  }
  return out;
}

SceneSpec generic_scene(int classes, int scene_id) {
  SceneSpec spec;
  spec.scene_id = scene_id;
  spec.class_distribution.assign(classes, 1.0 / classes);
  spec.object_count = {2, 5};
  spec.motion_sigma = 0.01;
  spec.duration = {1 << 30, 1 << 30};
  spec.appearance_shift = 0.0;
  spec.background = 0.0;
  spec.turnover = 0.05;
  return spec;
}

Stream generate_stream(const std::vector<SceneSpec>& scenes, const StreamConfig& cfg) {
  if (scenes.empty()) throw ConfigError("generate_stream: scene list is empty");
  cfg.validate();
  for (const SceneSpec& s : scenes) s.validate(cfg.shape.c);

  std::mt19937_64 rng(cfg.seed);
  std::vector<Segment> segments;
  for (std::int64_t t = 0; t < cfg.n_frames;) {
    const int idx = static_cast<int>(segments.size() % scenes.size());
    const IntRange d = scenes[idx].duration;
    const std::int64_t len = std::uniform_int_distribution<int>(d.min, d.max)(rng);
    segments.push_back({idx, t, std::min<std::int64_t>(t + len, cfg.n_frames)});
    t += len;
  }

  const Matrix canonical = canonical_class_dirs(cfg);
  const std::int64_t lead = cfg.transition_len / 2;
  const std::int64_t tail = cfg.transition_len - lead;
  auto active_from = [&](std::size_t k) { return k == 0 ? 0 : segments[k].start - lead; };
  auto active_to = [&](std::size_t k) {
    return k + 1 == segments.size() ? segments[k].end : segments[k].end + tail;
  };

  std::map<std::size_t, SceneRun> runs;
  std::mt19937_64 noise_rng(mix_seed(cfg.seed, 0x401ce));
  std::normal_distribution<double> noise(0.0, cfg.frame_noise);

  Stream stream;
  stream.shape = cfg.shape;
  stream.input_dim = cfg.input_dim;
  stream.frames.reserve(cfg.n_frames);

  std::size_t seg = 0;
  for (std::int64_t f = 0; f < cfg.n_frames; ++f) {
    while (segments[seg].end <= f) ++seg;
    for (std::size_t k = seg == 0 ? 0 : seg - 1; k <= std::min(seg + 1, segments.size() - 1); ++k) {
      if (f >= active_from(k) && f < active_to(k) && !runs.count(k)) {
        runs.emplace(std::piecewise_construct, std::forward_as_tuple(k),
                     std::forward_as_tuple(scenes[segments[k].scene_index], cfg, canonical,
                                           mix_seed(cfg.seed, 0x5e6, k),
                                           static_cast<std::int64_t>(k + 1) * 1000000));
      }
    }

    // blend partner: the neighbouring segment whose transition window holds f
    std::size_t from = seg;
    std::size_t to = seg;
    double alpha = 0.0;
    if (seg + 1 < segments.size() && f >= segments[seg + 1].start - lead) {
      to = seg + 1;
      alpha = static_cast<double>(f - (segments[to].start - lead) + 1) / (cfg.transition_len + 1);
    } else if (seg > 0 && f < segments[seg].start + tail) {
      from = seg - 1;
      alpha = static_cast<double>(f - (segments[seg].start - lead) + 1) / (cfg.transition_len + 1);
    }

    FrameRecord rec;
    rec.frame_id = f;
    const SceneRun& owner = runs.at(seg);
    rec.scene_id = owner.scene_id();
    rec.gt = owner.objects();
    rec.frame.frame_id = f;
    rec.frame.s = cfg.shape.s;
    if (from == to) {
      rec.frame.values = owner.render();
    } else {
      rec.frame.values = (1.0 - alpha) * runs.at(from).render() + alpha * runs.at(to).render();
    }
    for (Eigen::Index i = 0; i < rec.frame.values.size(); ++i) {
      rec.frame.values.data()[i] += noise(noise_rng);
    }
    quantize_to_float(rec.frame.values);
    stream.frames.push_back(std::move(rec));

    for (auto it = runs.begin(); it != runs.end();) {
      if (f + 1 >= active_to(it->first)) {
        it = runs.erase(it);
      } else {
        it->second.step();
        ++it;
      }
    }
  }
  return stream;
}

void OracleNoiseSpec::validate() const {
  if (!(empty_cell_noise_rate >= 0.0 && empty_cell_noise_rate <= 1.0)) {
    throw ConfigError("oracle_noise.empty_cell_noise_rate must lie in [0, 1]");
  }
  if (!(halo_noise_rate >= 0.0 && halo_noise_rate <= 1.0)) {
    throw ConfigError("oracle_noise.halo_noise_rate must lie in [0, 1]");
  }
  if (!(noise_lo <= noise_hi)) throw ConfigError("oracle_noise.noise_lo must be <= noise_hi");
  if (!(box_jitter_sigma >= 0.0)) throw ConfigError("oracle_noise.box_jitter_sigma must be >= 0");
  if (!(class_flip_prob >= 0.0 && class_flip_prob <= 1.0)) {
    throw ConfigError("oracle_noise.class_flip_prob must lie in [0, 1]");
  }
}

DetectionTensor synth_oracle(const std::vector<GroundTruthObject>& gt, const OracleNoiseSpec& noise,
                             const GridShape& shape, std::mt19937_64& rng) {
  DetectionTensor t(shape);
  Matrix& v = t.values();
  v.col(channel::kObjectness).setConstant(noise.empty_logit);

  std::normal_distribution<double> jitter(0.0, noise.box_jitter_sigma);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> spurious(noise.noise_lo, noise.noise_hi);
  std::vector<double> owner_dist(shape.cells(), -1.0);
  std::vector<int> owner_class(shape.cells(), -1);

  for (const GroundTruthObject& obj : gt) {
    Box box = obj.box;
    if (noise.box_jitter_sigma > 0.0) {
      box.cx = std::clamp(box.cx + jitter(rng), 0.0, 1.0 - 1e-9);
      box.cy = std::clamp(box.cy + jitter(rng), 0.0, 1.0 - 1e-9);
      box.w = std::clamp(box.w + jitter(rng), 0.01, 0.99);
      box.h = std::clamp(box.h + jitter(rng), 0.01, 0.99);
    }
    int cls = obj.class_id;
    if (noise.class_flip_prob > 0.0 && u01(rng) < noise.class_flip_prob && shape.c > 1) {
      cls = (cls + 1 + std::uniform_int_distribution<int>(0, shape.c - 2)(rng)) % shape.c;
    }
    // the responsible cell follows the true center; jitter only moves the encoded box
    const CellEncoding enc = encode_box(obj.box, shape);
    const double dist = distance_to_cell_center(obj.box, shape);
    if (owner_dist[enc.cell] >= 0.0 && owner_dist[enc.cell] <= dist) continue;
    owner_dist[enc.cell] = dist;
    owner_class[enc.cell] = cls;
    auto row = v.row(enc.cell);
    row(channel::kObjectness) = noise.object_logit;
    row(channel::kTx) = kOffsetLogitLimit * offset_feature(box.cx * shape.s - enc.cell % shape.s);
    row(channel::kTy) = kOffsetLogitLimit * offset_feature(box.cy * shape.s - enc.cell / shape.s);
    row(channel::kTw) = logit(box.w);
    row(channel::kTh) = logit(box.h);
    for (int k = 0; k < shape.c; ++k) {
      row(channel::kClass0 + k) = k == cls ? noise.class_logit : -noise.class_logit;
    }
  }

  if (noise.halo_noise_rate > 0.0) {
    for (int cell = 0; cell < shape.cells(); ++cell) {
      if (owner_class[cell] < 0) continue;
      const int r0 = cell / shape.s;
      const int c0 = cell % shape.s;
      const int dr[4] = {-1, 1, 0, 0};
      const int dc[4] = {0, 0, -1, 1};
      for (int n = 0; n < 4; ++n) {
        const int r = r0 + dr[n];
        const int c = c0 + dc[n];
        if (r < 0 || r >= shape.s || c < 0 || c >= shape.s) continue;
        const int nb = r * shape.s + c;
        if (owner_class[nb] >= 0) continue;
        if (u01(rng) < noise.halo_noise_rate) {
          v(nb, channel::kObjectness) = std::max(v(nb, channel::kObjectness), spurious(rng));
          v(nb, channel::kClass0 + owner_class[cell]) = 0.5 * noise.class_logit;
        }
      }
    }
  }
  if (noise.empty_cell_noise_rate > 0.0) {
    for (int cell = 0; cell < shape.cells(); ++cell) {
      if (owner_class[cell] >= 0) continue;
      if (u01(rng) < noise.empty_cell_noise_rate) {
        v(cell, channel::kObjectness) = std::max(v(cell, channel::kObjectness), spurious(rng));
      }
    }
  }
  return t;
}

DetectionTensor oracle_for_frame(const FrameRecord& record, const OracleNoiseSpec& noise,
                                 const GridShape& shape, std::uint64_t seed) {
  if (record.oracle) return *record.oracle;
  std::mt19937_64 rng(mix_seed(seed, 0x04ac1e, static_cast<std::uint64_t>(record.frame_id)));
  return synth_oracle(record.gt, noise, shape, rng);
}

// ---------------------------------------------------------------------------
// Trace files

namespace {

template <typename T>
void put_number(std::string& out, T value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  out.push_back(' ');
  out.append(buf, res.ptr);
}

class LineReader {
 public:
  LineReader(std::string_view line, std::int64_t line_no) : line_(line), line_no_(line_no) {}

  std::string_view token() {
    while (pos_ < line_.size() && line_[pos_] == ' ') ++pos_;
    if (pos_ >= line_.size()) throw FormatError("unexpected end of record", line_no_);
    const std::size_t start = pos_;
    while (pos_ < line_.size() && line_[pos_] != ' ') ++pos_;
    return line_.substr(start, pos_ - start);
  }

  void expect(std::string_view keyword) {
    const std::string_view tok = token();
    if (tok != keyword) {
      throw FormatError("expected '" + std::string(keyword) + "', found '" + std::string(tok) + "'",
                        line_no_);
    }
  }

  template <typename T>
  T number() {
    const std::string_view tok = token();
    T value{};
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
      throw FormatError("malformed number '" + std::string(tok) + "'", line_no_);
    }
    return value;
  }

  void finish() {
    while (pos_ < line_.size() && line_[pos_] == ' ') ++pos_;
    if (pos_ != line_.size()) throw FormatError("trailing data after record", line_no_);
  }

 private:
  std::string_view line_;
  std::int64_t line_no_;
  std::size_t pos_ = 0;
};

std::int64_t header_field(std::string_view header, std::string_view key) {
  const std::string needle = " " + std::string(key) + "=";
  const std::size_t at = header.find(needle);
  if (at == std::string_view::npos) throw FormatError("header lacks '" + std::string(key) + "'", 1);
  const std::size_t start = at + needle.size();
  std::size_t end = header.find(' ', start);
  if (end == std::string_view::npos) end = header.size();
  std::int64_t value = 0;
  auto res = std::from_chars(header.data() + start, header.data() + end, value);
  if (res.ec != std::errc() || res.ptr != header.data() + end) {
    throw FormatError("header field '" + std::string(key) + "' is not an integer", 1);
  }
  return value;
}

}  // namespace

void write_trace(const Stream& stream, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open trace for writing: " + path.string());
  out << "tkd-trace version=" << kTraceVersion << " s=" << stream.shape.s << " c=" << stream.shape.c
      << " d=" << stream.input_dim << " frames=" << stream.frames.size() << '\n';
  std::string line;
  for (const FrameRecord& rec : stream.frames) {
    line.clear();
    line += "frame";
    put_number(line, rec.frame_id);
    line += " scene";
    put_number(line, rec.scene_id);
    line += " gt";
    put_number(line, rec.gt.size());
    for (const GroundTruthObject& obj : rec.gt) {
      put_number(line, obj.class_id);
      put_number(line, obj.object_id);
      put_number(line, obj.box.cx);
      put_number(line, obj.box.cy);
      put_number(line, obj.box.w);
      put_number(line, obj.box.h);
    }
    line += " x";
    put_number(line, rec.frame.values.size());
    for (int r = 0; r < rec.frame.values.rows(); ++r)
      for (int c = 0; c < rec.frame.values.cols(); ++c)
        put_number(line, static_cast<float>(rec.frame.values(r, c)));
    line += " o";
    const Eigen::Index n_oracle = rec.oracle ? rec.oracle->values().size() : 0;
    put_number(line, n_oracle);
    if (rec.oracle) {
      const Matrix& ov = rec.oracle->values();
      for (int r = 0; r < ov.rows(); ++r)
        for (int c = 0; c < ov.cols(); ++c) put_number(line, ov(r, c));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw std::runtime_error("failed writing trace: " + path.string());
}

Stream read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty trace file", 1);
  if (line.rfind("tkd-trace ", 0) != 0) throw FormatError("missing 'tkd-trace' header", 1);
  const std::int64_t version = header_field(line, "version");
  if (version != kTraceVersion) {
    throw FormatError("unsupported trace version " + std::to_string(version), 1);
  }
  Stream stream;
  stream.shape.s = static_cast<int>(header_field(line, "s"));
  stream.shape.c = static_cast<int>(header_field(line, "c"));
  stream.input_dim = static_cast<int>(header_field(line, "d"));
  const std::int64_t n_frames = header_field(line, "frames");
  if (stream.shape.s < 1 || stream.shape.c < 1 || stream.input_dim < 1 || n_frames < 0) {
    throw FormatError("header dimensions must be positive", 1);
  }
  const std::int64_t n_features = static_cast<std::int64_t>(stream.shape.cells()) * stream.input_dim;
  const std::int64_t n_oracle = static_cast<std::int64_t>(stream.shape.size());

  std::int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    LineReader rd(line, line_no);
    FrameRecord rec;
    rd.expect("frame");
    rec.frame_id = rd.number<std::int64_t>();
    rd.expect("scene");
    rec.scene_id = rd.number<int>();
    rd.expect("gt");
    const auto n_gt = rd.number<std::int64_t>();
    if (n_gt < 0) throw FormatError("negative ground-truth count", line_no);
    for (std::int64_t i = 0; i < n_gt; ++i) {
      GroundTruthObject obj;
      obj.class_id = rd.number<int>();
      obj.object_id = rd.number<std::int64_t>();
      obj.box.cx = rd.number<double>();
      obj.box.cy = rd.number<double>();
      obj.box.w = rd.number<double>();
      obj.box.h = rd.number<double>();
      if (obj.class_id < 0 || obj.class_id >= stream.shape.c) {
        throw FormatError("class id " + std::to_string(obj.class_id) + " out of range", line_no);
      }
      if (!obj.box.valid()) throw FormatError("degenerate ground-truth box", line_no);
      rec.gt.push_back(obj);
    }
    rd.expect("x");
    const auto nx = rd.number<std::int64_t>();
    if (nx != n_features) {
      throw FormatError("feature count " + std::to_string(nx) + " does not match header s=" +
                            std::to_string(stream.shape.s) + " d=" + std::to_string(stream.input_dim) +
                            " (expected " + std::to_string(n_features) + ")",
                        line_no);
    }
    rec.frame.frame_id = rec.frame_id;
    rec.frame.s = stream.shape.s;
    rec.frame.values.resize(stream.shape.cells(), stream.input_dim);
    for (int r = 0; r < stream.shape.cells(); ++r)
      for (int c = 0; c < stream.input_dim; ++c) rec.frame.values(r, c) = rd.number<float>();
    rd.expect("o");
    const auto no = rd.number<std::int64_t>();
    if (no != 0 && no != n_oracle) {
      throw FormatError("oracle tensor count " + std::to_string(no) + " does not match header (expected " +
                            std::to_string(n_oracle) + ")",
                        line_no);
    }
    if (no) {
      Matrix ov(stream.shape.cells(), stream.shape.channels());
      for (int r = 0; r < ov.rows(); ++r)
        for (int c = 0; c < ov.cols(); ++c) ov(r, c) = rd.number<double>();
      rec.oracle = DetectionTensor(stream.shape, std::move(ov));
    }
    rd.finish();
    stream.frames.push_back(std::move(rec));
  }
  if (static_cast<std::int64_t>(stream.frames.size()) != n_frames) {
    throw FormatError("truncated trace: header promises " + std::to_string(n_frames) +
                          " frames, found " + std::to_string(stream.frames.size()),
                      line_no + 1);
  }
  return stream;
}

}  // namespace tkd
