#include "tkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tkd/error.hpp"

namespace tkd {

namespace {

constexpr double kProbEps = 1e-7;
constexpr double kMatchIou = 0.5;

void require_same_shape(const DetectionTensor& a, const DetectionTensor& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument(std::string(what) + ": student and oracle shapes differ");
  }
}

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

double bce(double predicted, double target) {
  const double p = clamp_prob(predicted);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

double class_prob(const Detection& det, int k) {
  if (det.class_probs.empty()) return k == det.class_id ? 1.0 : 0.0;
  return k < static_cast<int>(det.class_probs.size()) ? det.class_probs[k] : 0.0;
}

}  // namespace

void DistillConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("distill.lambda must lie in [0, 1]");
  if (!(theta_h > 0.0 && theta_h < 1.0)) throw ConfigError("distill.theta_h must lie in (0, 1)");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("distill.beta must lie in [0, 1]");
  if (!(lr > 0.0)) throw ConfigError("distill.lr must be > 0");
  if (steps_per_event < 1) throw ConfigError("distill.steps_per_event must be >= 1");
}

const char* to_string(DecisionSource source) {
  switch (source) {
    case DecisionSource::lstm: return "lstm";
    case DecisionSource::random: return "random";
    case DecisionSource::both: return "both";
    case DecisionSource::external: return "external";
  }
  return "external";
}

DecisionSource decision_source_from_string(const std::string& name) {
  if (name == "lstm") return DecisionSource::lstm;
  if (name == "random") return DecisionSource::random;
  if (name == "both") return DecisionSource::both;
  if (name == "external") return DecisionSource::external;
  throw std::invalid_argument("unknown decision source '" + name + "'");
}

DetectionTensor compose_target(const DetectionTensor& student, const DetectionTensor& oracle,
                               const DistillConfig& cfg) {
  require_same_shape(student, oracle, "compose_target");
  const CellPartition part = partition_cells(oracle, cfg.theta_h);
  DetectionTensor target = oracle;
  Matrix& t = target.values();
  const Matrix& s = student.values();
  for (int cell = 0; cell < oracle.shape().cells(); ++cell) {
    if (part.empty[cell]) {
      // o + lambda (s - o): exactly o at lambda 0 and exactly s when s == o
      t.row(cell) = oracle.values().row(cell) + cfg.lambda * (s.row(cell) - oracle.values().row(cell));
    }
  }
  return target;
}

double partitioned_mse(const DetectionTensor& student, const DetectionTensor& target,
                       const CellPartition& partition) {
  require_same_shape(student, target, "partitioned_mse");
  const int channels = student.shape().channels();
  double high = 0.0;
  double empty = 0.0;
  for (int cell = 0; cell < student.shape().cells(); ++cell) {
    const double sq = (student.values().row(cell) - target.values().row(cell)).squaredNorm();
    (partition.high[cell] ? high : empty) += sq;
  }
  const int nh = partition.high.count();
  const int ne = partition.empty.count();
  return (nh ? high / (nh * channels) : 0.0) + (ne ? empty / (ne * channels) : 0.0);
}

TkdLossTerms tkd_loss_terms(const DetectionTensor& student, const DetectionTensor& oracle,
                            const DistillConfig& cfg) {
  require_same_shape(student, oracle, "tkd_loss");
  const CellPartition part = partition_cells(oracle, cfg.theta_h);
  const DetectionTensor target = compose_target(student, oracle, cfg);
  const int channels = student.shape().channels();
  TkdLossTerms terms;
  terms.high_cells = part.high.count();
  terms.empty_cells = part.empty.count();
  for (int cell = 0; cell < student.shape().cells(); ++cell) {
    const double sq = (student.values().row(cell) - target.values().row(cell)).squaredNorm();
    (part.high[cell] ? terms.high : terms.empty) += sq;
  }
  if (terms.high_cells) terms.high /= static_cast<double>(terms.high_cells) * channels;
  if (terms.empty_cells) terms.empty /= static_cast<double>(terms.empty_cells) * channels;
  return terms;
}

double tkd_loss(const DetectionTensor& student, const DetectionTensor& oracle,
                const DistillConfig& cfg) {
  return tkd_loss_terms(student, oracle, cfg).total();
}

DetectionTensor tkd_loss_grad(const DetectionTensor& student, const DetectionTensor& oracle,
                              const DistillConfig& cfg) {
  require_same_shape(student, oracle, "tkd_loss_grad");
  const CellPartition part = partition_cells(oracle, cfg.theta_h);
  const DetectionTensor target = compose_target(student, oracle, cfg);
  const int channels = student.shape().channels();
  const int nh = part.high.count();
  const int ne = part.empty.count();
  DetectionTensor grad(student.shape());
  for (int cell = 0; cell < student.shape().cells(); ++cell) {
    const int n = part.high[cell] ? nh : ne;
    grad.values().row(cell) =
        (2.0 / (static_cast<double>(n) * channels)) *
        (student.values().row(cell) - target.values().row(cell));
  }
  return grad;
}

DetectionLoss matched_detection_loss(const std::vector<Detection>& student,
                                     const std::vector<Detection>& targets) {
  std::vector<std::size_t> order(student.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return student[a].confidence > student[b].confidence;
  });

  DetectionLoss loss;
  std::vector<bool> taken(targets.size(), false);
  for (std::size_t idx : order) {
    const Detection& det = student[idx];
    int best = -1;
    double best_iou = kMatchIou;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (taken[t]) continue;
      const double v = iou(det.box, targets[t].box);
      if (v >= best_iou) {
        best_iou = v;
        best = static_cast<int>(t);
      }
    }
    if (best < 0) {
      loss.obj += bce(det.objectness, 0.0);
      continue;
    }
    taken[best] = true;
    const Detection& tgt = targets[best];
    loss.obj += bce(det.objectness, tgt.objectness);
    loss.box += std::pow(det.box.cx - tgt.box.cx, 2) + std::pow(det.box.cy - tgt.box.cy, 2) +
                std::pow(det.box.w - tgt.box.w, 2) + std::pow(det.box.h - tgt.box.h, 2);
    const int n = std::max({static_cast<int>(tgt.class_probs.size()),
                            static_cast<int>(det.class_probs.size()),
                            std::max(tgt.class_id, det.class_id) + 1});
    for (int k = 0; k < n; ++k) {
      const double tk = class_prob(tgt, k);
      if (tk > 0.0) loss.cls -= tk * std::log(clamp_prob(class_prob(det, k)));
    }
  }
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (!taken[t]) loss.obj -= targets[t].objectness * std::log(kUndetectedObjectness);
  }
  return loss;
}

std::vector<Detection> as_targets(const std::vector<GroundTruthObject>& gt, int classes) {
  std::vector<Detection> out;
  out.reserve(gt.size());
  for (const GroundTruthObject& obj : gt) {
    Detection d;
    d.box = obj.box;
    d.class_id = obj.class_id;
    d.confidence = 1.0;
    d.objectness = 1.0;
    d.class_probs.assign(std::max(classes, obj.class_id + 1), 0.0);
    d.class_probs[obj.class_id] = 1.0;
    out.push_back(std::move(d));
  }
  return out;
}

double general_distill_loss(const std::vector<Detection>& student_dets,
                            const std::vector<GroundTruthObject>& gt,
                            const std::vector<Detection>& oracle_dets, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
  int classes = 1;
  for (const Detection& d : student_dets) {
    classes = std::max(classes, static_cast<int>(d.class_probs.size()));
  }
  const double l_gt = matched_detection_loss(student_dets, as_targets(gt, classes)).total();
  const double l_t = matched_detection_loss(student_dets, oracle_dets).total();
  return beta * l_gt + (1.0 - beta) * l_t;
}

double nms_loss(const DetectionTensor& student, const DetectionTensor& oracle,
                const std::vector<GroundTruthObject>& gt, double conf_threshold,
                double iou_threshold) {
  require_same_shape(student, oracle, "nms_loss");
  const std::vector<Detection> s = nms(decode_tensor(student, conf_threshold), iou_threshold);
  const std::vector<Detection> t = nms(decode_tensor(oracle, conf_threshold), iou_threshold);
  DetectionLoss loss = matched_detection_loss(s, as_targets(gt, student.shape().c));
  loss += matched_detection_loss(s, t);
  return loss.total();
}

DistillOutcome distill_step(const DecoderParams& params, const FeatureFrame& features,
                            const DetectionTensor& oracle, const DistillConfig& cfg) {
  cfg.validate();
  DistillOutcome out{params, FeedbackRecord{}};
  out.feedback.frame_id = features.frame_id;

  DecoderParams current = params;
  try {
    for (int step = 0; step < cfg.steps_per_event; ++step) {
      const DecoderActivations acts = decoder_forward_cached(current, features);
      if (step == 0) {
        out.feedback.loss_before = tkd_loss(acts.output, oracle, cfg);
        if (!std::isfinite(out.feedback.loss_before)) throw NumericError("non-finite loss");
      }
      const DetectionTensor g = tkd_loss_grad(acts.output, oracle, cfg);
      current = sgd_step(current, decoder_backward(current, features, acts, g), cfg.lr);
    }
    out.feedback.loss_after = tkd_loss(decoder_forward(current, features), oracle, cfg);
    if (!std::isfinite(out.feedback.loss_after)) throw NumericError("non-finite loss");
  } catch (const NumericError& e) {
    out.params = params;
    out.feedback.error = std::string("distill aborted: ") + e.what();
    out.feedback.loss_after = out.feedback.loss_before;
    out.feedback.delta_l = 0.0;
    return out;
  }
  out.params = std::move(current);
  out.feedback.delta_l = out.feedback.loss_after - out.feedback.loss_before;
  return out;
}

}  // namespace tkd
