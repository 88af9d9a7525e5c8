#pragma once

// Experiment harnesses: lambda sweep, loss cost benchmark, key-frame
// histograms and change-point response.

#include <cstdint>
#include <vector>

#include "tkd/pipeline.hpp"

namespace tkd {

struct AblationRow {
  double lambda = 0.0;
  double ap = 0.0;
  double f1 = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  int key_frames = 0;
  double key_fraction = 0.0;
};

// One full run per lambda on the same stream and seeds; metrics at the first
// IOU threshold of cfg.eval.
std::vector<AblationRow> ablate_lambda(const Stream& stream, const Student& student,
                                       const PipelineConfig& cfg, const std::vector<double>& lambdas);

struct BenchConfig {
  std::vector<int> target_counts{1, 10, 25, 50};
  int trials = 60;
  int s = 13;
  int classes = 6;
  std::uint64_t seed = 5;
  double conf_threshold = 0.25;
  double nms_iou = 0.5;

  void validate() const;
};

struct BenchRow {
  int targets = 0;
  int decoded = 0;       // student detections surviving decode + NMS
  double tkd_us = 0.0;   // median microseconds
  double nms_us = 0.0;
  double tkd_loss = 0.0;
  double nms_loss = 0.0;
};

// Tensors with n objects in distinct cells; median of trials after one warm-up pass.
std::vector<BenchRow> bench_loss_cost(const BenchConfig& cfg);

// Positive decisions per bin of bin_size frames (last bin may be partial).
std::vector<int> keyframe_histogram(const std::vector<FrameLog>& log, int bin_size);

// Key frames among frames [cp, cp + window] for every change point cp.
std::vector<int> change_point_response(const std::vector<FrameLog>& log,
                                       const std::vector<std::int64_t>& change_points, int window);

}  // namespace tkd
