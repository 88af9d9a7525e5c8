#pragma once

// Distillation losses and the online decoder update.
//
// tkd_loss splits the grid by oracle objectness. Cells the oracle believes
// hold an object (H) are regressed onto the oracle directly. The remaining
// cells (E) are regressed onto a blend lambda * student + (1 - lambda) * oracle
// in which the student part is a detached constant, so lambda bounds how far
// oracle noise on empty cells can pull the student. Both terms are means over
// their cell channels; an empty partition contributes zero.

#include <cstdint>
#include <string>
#include <vector>

#include "tkd/detection.hpp"
#include "tkd/models.hpp"

namespace tkd {

struct DistillConfig {
  double lambda = 0.4;
  double theta_h = 0.5;
  double beta = 0.5;
  double lr = 1e-2;
  int steps_per_event = 5;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

enum class DecisionSource { lstm, random, both, external };

const char* to_string(DecisionSource source);
DecisionSource decision_source_from_string(const std::string& name);

struct FeedbackRecord {
  std::int64_t frame_id = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
  double delta_l = 0.0;  // loss_after - loss_before
  DecisionSource source = DecisionSource::external;
  std::string error;     // non-empty when the event was aborted

  bool ok() const { return error.empty(); }
};

DetectionTensor compose_target(const DetectionTensor& student, const DetectionTensor& oracle,
                               const DistillConfig& cfg);

struct TkdLossTerms {
  double high = 0.0;   // mean squared error over H-cell channels
  double empty = 0.0;  // modulated mean squared error over E-cell channels
  int high_cells = 0;
  int empty_cells = 0;

  double total() const { return high + empty; }
};

TkdLossTerms tkd_loss_terms(const DetectionTensor& student, const DetectionTensor& oracle,
                            const DistillConfig& cfg);
double tkd_loss(const DetectionTensor& student, const DetectionTensor& oracle,
                const DistillConfig& cfg);

// Gradient with respect to the student tensor, holding the composed target fixed.
DetectionTensor tkd_loss_grad(const DetectionTensor& student, const DetectionTensor& oracle,
                              const DistillConfig& cfg);

// Mean squared error with H and E cells reduced separately against a fixed target.
double partitioned_mse(const DetectionTensor& student, const DetectionTensor& target,
                       const CellPartition& partition);

// Matched-pair detection loss split into its three components.
struct DetectionLoss {
  double box = 0.0;
  double cls = 0.0;
  double obj = 0.0;

  double total() const { return box + cls + obj; }
  DetectionLoss& operator+=(const DetectionLoss& o) {
    box += o.box;
    cls += o.cls;
    obj += o.obj;
    return *this;
  }
};

// Objectness assumed for a target the student failed to detect at all.
inline constexpr double kUndetectedObjectness = 0.05;

// Greedy IOU >= 0.5 matching in descending student confidence. Matched pairs
// pay objectness BCE, box squared error and class cross-entropy against the
// target's objectness and class distribution. Unmatched student detections pay
// BCE toward objectness 0; unmatched targets pay -o * log(kUndetectedObjectness).
DetectionLoss matched_detection_loss(const std::vector<Detection>& student,
                                     const std::vector<Detection>& targets);

std::vector<Detection> as_targets(const std::vector<GroundTruthObject>& gt, int classes);

double general_distill_loss(const std::vector<Detection>& student_dets,
                            const std::vector<GroundTruthObject>& gt,
                            const std::vector<Detection>& oracle_dets, double beta);

// Decode + NMS on both tensors, then box, class and objectness losses against
// ground truth and teacher with unit weights.
double nms_loss(const DetectionTensor& student, const DetectionTensor& oracle,
                const std::vector<GroundTruthObject>& gt, double conf_threshold,
                double iou_threshold);

struct DistillOutcome {
  DecoderParams params;
  FeedbackRecord feedback;
};

// cfg.steps_per_event gradient steps on tkd_loss, recomposing the target each
// step. On a non-finite loss the original params are returned and
// feedback.error is set.
DistillOutcome distill_step(const DecoderParams& params, const FeatureFrame& features,
                            const DetectionTensor& oracle, const DistillConfig& cfg);

}  // namespace tkd
