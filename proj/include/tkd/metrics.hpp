#pragma once

// Detection metrics: greedy matching, all-point AP, precision/recall/F1.

#include <string>
#include <vector>

#include "tkd/detection.hpp"

namespace tkd {

enum class GtSource { true_gt, oracle_as_gt };

const char* to_string(GtSource source);
GtSource gt_source_from_string(const std::string& name);

struct EvalConfig {
  std::vector<double> iou_thresholds{0.5, 0.6, 0.75};
  double conf_threshold = 0.5;      // student detections below this are dropped
  GtSource gt_source = GtSource::oracle_as_gt;
  double gt_conf_threshold = 0.5;   // oracle decode threshold when it stands in for GT
  double nms_iou = 0.5;

  void validate() const;
};

struct MatchResult {
  std::vector<bool> tp;  // per detection, in input order
  int fp = 0;
  int fn = 0;

  int tp_count() const;
};

// Greedy matching: each detection (assumed sorted by confidence) takes the
// highest-IOU unmatched same-class GT with IOU >= threshold.
MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruthObject>& gt, double iou_threshold);

// All-point interpolated AP over flags ordered by descending confidence.
double average_precision(const std::vector<bool>& tp_flags, int n_gt);

double f1_score(double precision, double recall);

struct ThresholdMetrics {
  double iou = 0.0;
  double ap = 0.0;   // mean of per-class AP over classes present in GT or detections
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  std::vector<double> class_ap;  // -1 for a class absent from both GT and detections
};

struct EvalSummary {
  int frames = 0;
  int gt_objects = 0;
  std::vector<ThresholdMetrics> thresholds;

  // Metrics at the given IOU; throws std::out_of_range if it was not evaluated.
  const ThresholdMetrics& at(double iou) const;
};

// One evaluated frame: detections plus the ground truth they are scored against.
struct EvalFrame {
  std::vector<Detection> dets;
  std::vector<GroundTruthObject> gt;
};

EvalSummary evaluate(const std::vector<EvalFrame>& frames, int classes, const EvalConfig& cfg);

// Decoded oracle detections turned into ground-truth objects.
std::vector<GroundTruthObject> detections_as_gt(const std::vector<Detection>& dets);

}  // namespace tkd
