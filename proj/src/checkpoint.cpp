#include <fstream>
#include <sstream>

#include "json.hpp"

#include "tkd/error.hpp"
#include "tkd/pipeline.hpp"

namespace tkd {

namespace {

using nlohmann::json;

json matrix_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(m.size());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw FormatError("checkpoint: missing field '" + where + key + "'");
  }
  return j.at(key);
}

Matrix matrix_from(const json& j, const std::string& where) {
  const auto rows = field(j, "rows", where).get<Eigen::Index>();
  const auto cols = field(j, "cols", where).get<Eigen::Index>();
  const auto data = field(j, "data", where).get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw FormatError("checkpoint: '" + where + "' holds " + std::to_string(data.size()) +
                      " values for a " + std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
  }
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[r * cols + c];
  return m;
}

Vector vector_from(const json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}

json decoder_json(const DecoderParams& p) {
  return {{"version", p.version}, {"w1", matrix_json(p.w1)}, {"b1", vector_json(p.b1)},
          {"w2", matrix_json(p.w2)}, {"b2", vector_json(p.b2)}};
}

DecoderParams decoder_from(const json& j) {
  DecoderParams p;
  p.version = field(j, "version", "decoder.").get<std::uint64_t>();
  p.w1 = matrix_from(field(j, "w1", "decoder."), "decoder.w1");
  p.b1 = vector_from(field(j, "b1", "decoder."));
  p.w2 = matrix_from(field(j, "w2", "decoder."), "decoder.w2");
  p.b2 = vector_from(field(j, "b2", "decoder."));
  if (p.b1.size() != p.w1.rows() || p.w2.cols() != p.w1.rows() || p.b2.size() != p.w2.rows() ||
      p.w2.rows() < 6) {
    throw FormatError("checkpoint: decoder dimensions are inconsistent");
  }
  return p;
}

json selector_json(const SelectorState& s) {
  std::ostringstream rng;
  rng << s.rng;
  json pending = json::array();
  for (const auto& [frame, p] : s.pending) {
    pending.push_back({{"frame_id", frame}, {"summary", vector_json(p.summary)},
                       {"h", vector_json(p.state_before.h)}, {"c", vector_json(p.state_before.c)},
                       {"lstm_vote", p.lstm_vote}, {"random_vote", p.random_vote}});
  }
  return {{"p_t", s.p_t},
          {"p_min", s.p_min},
          {"p_step", s.p_step},
          {"frames_since_train", s.frames_since_train},
          {"tau", s.tau},
          {"sigma", s.sigma},
          {"lstm_lr", s.lstm_lr},
          {"lstm",
           {{"wx", matrix_json(s.lstm.wx)},
            {"wh", matrix_json(s.lstm.wh)},
            {"b", vector_json(s.lstm.b)},
            {"w_out", vector_json(s.lstm.w_out)},
            {"b_out", s.lstm.b_out},
            {"h", vector_json(s.lstm.state.h)},
            {"c", vector_json(s.lstm.state.c)}}},
          {"rng", rng.str()},
          {"pending", pending}};
}

SelectorState selector_from(const json& j) {
  const std::string w = "selector.";
  SelectorState s;
  s.p_t = field(j, "p_t", w).get<double>();
  s.p_min = field(j, "p_min", w).get<double>();
  s.p_step = field(j, "p_step", w).get<double>();
  s.frames_since_train = field(j, "frames_since_train", w).get<int>();
  s.tau = field(j, "tau", w).get<int>();
  s.sigma = field(j, "sigma", w).get<double>();
  s.lstm_lr = field(j, "lstm_lr", w).get<double>();
  const json& l = field(j, "lstm", w);
  s.lstm.wx = matrix_from(field(l, "wx", "selector.lstm."), "selector.lstm.wx");
  s.lstm.wh = matrix_from(field(l, "wh", "selector.lstm."), "selector.lstm.wh");
  s.lstm.b = vector_from(field(l, "b", "selector.lstm."));
  s.lstm.w_out = vector_from(field(l, "w_out", "selector.lstm."));
  s.lstm.b_out = field(l, "b_out", "selector.lstm.").get<double>();
  s.lstm.state.h = vector_from(field(l, "h", "selector.lstm."));
  s.lstm.state.c = vector_from(field(l, "c", "selector.lstm."));
  const Eigen::Index h = s.lstm.wh.cols();
  if (s.lstm.wx.rows() != 4 * h || s.lstm.wh.rows() != 4 * h || s.lstm.b.size() != 4 * h ||
      s.lstm.w_out.size() != h || s.lstm.state.h.size() != h || s.lstm.state.c.size() != h) {
    throw FormatError("checkpoint: LSTM dimensions are inconsistent");
  }
  if (!(s.p_t >= s.p_min && s.p_t <= 1.0)) throw FormatError("checkpoint: selector.p_t out of range");
  std::istringstream rng(field(j, "rng", w).get<std::string>());
  rng >> s.rng;
  if (rng.fail()) throw FormatError("checkpoint: selector.rng is not a valid generator state");
  for (const json& p : field(j, "pending", w)) {
    PendingDecision d;
    d.summary = vector_from(field(p, "summary", "selector.pending."));
    d.state_before.h = vector_from(field(p, "h", "selector.pending."));
    d.state_before.c = vector_from(field(p, "c", "selector.pending."));
    d.lstm_vote = field(p, "lstm_vote", "selector.pending.").get<bool>();
    d.random_vote = field(p, "random_vote", "selector.pending.").get<bool>();
    s.pending[field(p, "frame_id", "selector.pending.").get<std::int64_t>()] = std::move(d);
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DecoderParams& decoder,
                     const SelectorState* selector) {
  json doc = {{"format", "tkd-checkpoint"}, {"version", kCheckpointVersion},
              {"decoder", decoder_json(decoder)}};
  doc["selector"] = selector ? selector_json(*selector) : json(nullptr);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint is not valid JSON (truncated?): ") + e.what());
  }
  try {
    if (field(doc, "format", "").get<std::string>() != "tkd-checkpoint") {
      throw FormatError("checkpoint: unexpected format tag");
    }
    const int version = field(doc, "version", "").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint cp;
    cp.decoder = decoder_from(field(doc, "decoder", ""));
    const json& sel = field(doc, "selector", "");
    if (!sel.is_null()) cp.selector = selector_from(sel);
    return cp;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace tkd
