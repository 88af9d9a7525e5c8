#include "tkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tkd/error.hpp"

namespace tkd {

const char* to_string(GtSource source) {
  return source == GtSource::true_gt ? "true_gt" : "oracle_as_gt";
}

GtSource gt_source_from_string(const std::string& name) {
  if (name == "true_gt") return GtSource::true_gt;
  if (name == "oracle_as_gt") return GtSource::oracle_as_gt;
  throw ConfigError("eval.gt_source must be 'true_gt' or 'oracle_as_gt', got '" + name + "'");
}

void EvalConfig::validate() const {
  if (iou_thresholds.empty()) throw ConfigError("eval.iou_thresholds must not be empty");
  for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
    const double t = iou_thresholds[i];
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("eval.iou_thresholds entries must lie in (0, 1)");
    if (i > 0 && !(t > iou_thresholds[i - 1])) {
      throw ConfigError("eval.iou_thresholds must be strictly increasing");
    }
  }
  if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0)) {
    throw ConfigError("eval.conf_threshold must lie in [0, 1]");
  }
  if (!(gt_conf_threshold >= 0.0 && gt_conf_threshold <= 1.0)) {
    throw ConfigError("eval.gt_conf_threshold must lie in [0, 1]");
  }
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("eval.nms_iou must lie in (0, 1]");
}

int MatchResult::tp_count() const {
  return static_cast<int>(std::count(tp.begin(), tp.end(), true));
}

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruthObject>& gt, double iou_threshold) {
  MatchResult out;
  out.tp.assign(dets.size(), false);
  std::vector<bool> used(gt.size(), false);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (used[g] || gt[g].class_id != dets[d].class_id) continue;
      const double v = iou(dets[d].box, gt[g].box);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      used[best] = true;
      out.tp[d] = true;
    } else {
      ++out.fp;
    }
  }
  out.fn = static_cast<int>(std::count(used.begin(), used.end(), false));
  return out;
}

double average_precision(const std::vector<bool>& tp_flags, int n_gt) {
  if (n_gt < 0) throw std::invalid_argument("average_precision: n_gt must be >= 0");
  if (n_gt == 0) {
    return std::find(tp_flags.begin(), tp_flags.end(), false) == tp_flags.end() ? 1.0 : 0.0;
  }
  const std::size_t n = tp_flags.size();
  std::vector<double> precision(n);
  std::vector<double> recall(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp_flags[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / n_gt;
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

const ThresholdMetrics& EvalSummary::at(double iou) const {
  for (const ThresholdMetrics& m : thresholds) {
    if (std::abs(m.iou - iou) < 1e-12) return m;
  }
  throw std::out_of_range("no metrics at IOU " + std::to_string(iou));
}

EvalSummary evaluate(const std::vector<EvalFrame>& frames, int classes, const EvalConfig& cfg) {
  cfg.validate();
  EvalSummary summary;
  summary.frames = static_cast<int>(frames.size());
  std::vector<int> gt_per_class(classes, 0);
  for (const EvalFrame& f : frames) {
    summary.gt_objects += static_cast<int>(f.gt.size());
    for (const GroundTruthObject& g : f.gt) {
      if (g.class_id < 0 || g.class_id >= classes) {
        throw std::invalid_argument("evaluate: ground-truth class out of range");
      }
      ++gt_per_class[g.class_id];
    }
  }

  struct Scored {
    double confidence;
    bool tp;
  };
  for (double thr : cfg.iou_thresholds) {
    ThresholdMetrics m;
    m.iou = thr;
    std::vector<std::vector<Scored>> per_class(classes);
    for (const EvalFrame& f : frames) {
      std::vector<Detection> dets;
      for (const Detection& d : f.dets) {
        if (d.confidence >= cfg.conf_threshold) dets.push_back(d);
      }
      std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        return a.confidence > b.confidence;
      });
      const MatchResult r = match_detections(dets, f.gt, thr);
      m.tp += r.tp_count();
      m.fp += r.fp;
      m.fn += r.fn;
      for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dets[i].class_id < 0 || dets[i].class_id >= classes) {
          throw std::invalid_argument("evaluate: detection class out of range");
        }
        per_class[dets[i].class_id].push_back({dets[i].confidence, r.tp[i]});
      }
    }
    m.precision = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
    m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
    m.f1 = f1_score(m.precision, m.recall);

    m.class_ap.assign(classes, -1.0);
    double ap_sum = 0.0;
    int ap_classes = 0;
    for (int k = 0; k < classes; ++k) {
      auto& scored = per_class[k];
      if (scored.empty() && gt_per_class[k] == 0) continue;
      std::stable_sort(scored.begin(), scored.end(),
                       [](const Scored& a, const Scored& b) { return a.confidence > b.confidence; });
      std::vector<bool> flags;
      flags.reserve(scored.size());
      for (const Scored& s : scored) flags.push_back(s.tp);
      m.class_ap[k] = average_precision(flags, gt_per_class[k]);
      ap_sum += m.class_ap[k];
      ++ap_classes;
    }
    m.ap = ap_classes ? ap_sum / ap_classes : 1.0;
    summary.thresholds.push_back(std::move(m));
  }
  return summary;
}

std::vector<GroundTruthObject> detections_as_gt(const std::vector<Detection>& dets) {
  std::vector<GroundTruthObject> out;
  out.reserve(dets.size());
  std::int64_t id = 0;
  for (const Detection& d : dets) {
    GroundTruthObject g;
    g.box = d.box;
    g.class_id = d.class_id;
    g.object_id = id++;
    out.push_back(g);
  }
  return out;
}

}  // namespace tkd
