#pragma once

// End-to-end stream runners.
//
// Sequential mode runs inference, the oracle and distillation on one thread.
// Parallel mode hands key frames to a single worker thread through a bounded
// drop-oldest queue; the worker is the only writer of the TKD decoder and
// reports feedback that the inference loop applies at the next frame
// boundary. Inference always reads a complete committed decoder snapshot.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tkd/distill.hpp"
#include "tkd/metrics.hpp"
#include "tkd/selector.hpp"
#include "tkd/sim_stream.hpp"
#include "tkd/student.hpp"

namespace tkd {

enum class Mode { sequential, parallel, frozen_student, mixed, oracle_only };
enum class SelectorKind { tkd, random, scene_change, periodic };

const char* to_string(Mode mode);
Mode mode_from_string(const std::string& name);
const char* to_string(SelectorKind kind);
SelectorKind selector_kind_from_string(const std::string& name);

struct SelectorSpec {
  SelectorKind kind = SelectorKind::tkd;
  SelectorConfig tkd;        // adaptive selector settings
  double prob = 0.27;        // random
  double threshold = 0.5;    // scene_change, mean absolute input difference
  int period = 4;            // periodic
  int baseline_tau = 0;      // training prevention gap for random / scene_change / periodic
};

struct PipelineConfig {
  Mode mode = Mode::sequential;
  SelectorSpec selector;
  DistillConfig distill;
  OracleNoiseSpec oracle_noise;
  std::uint64_t oracle_seed = 11;
  double oracle_delay_ms = 0.0;  // simulated oracle compute per key frame
  int queue_capacity = 4;
  int worker_nice = 10;          // parallel: scheduling niceness of the worker thread, 0 = unchanged
  double p_oracle = 0.27;        // mixed mode
  double conf_threshold = 0.5;   // detection threshold for both decoders
  double nms_iou = 0.5;
  bool use_general_decoder = true;
  std::uint64_t seed = 1;
  EvalConfig eval;

  void validate() const;
};

struct FrameLog {
  std::int64_t frame_id = 0;
  bool train = false;
  bool lstm_vote = false;
  bool random_vote = false;
  bool suppressed = false;
  bool oracle_answered = false;  // mixed / oracle_only
  double p_t = 0.0;
  double latency_ms = 0.0;
  std::uint64_t decoder_version = 0;
};

struct LossEvent {
  std::int64_t frame_id = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
  double delta_l = 0.0;
  DecisionSource source = DecisionSource::external;
  std::uint64_t committed_version = 0;  // 0 when aborted
  std::string error;
};

struct PipelineReport {
  Mode mode = Mode::sequential;
  SelectorKind selector = SelectorKind::tkd;
  int frames = 0;
  int key_frames = 0;
  double key_fraction = 0.0;
  double seconds = 0.0;
  double fps = 0.0;
  int dropped = 0;       // key frames evicted from a full queue
  int unprocessed = 0;   // key frames still queued when the stream ended
  bool aborted = false;
  std::string error;
  std::vector<FrameLog> log;
  std::vector<LossEvent> losses;
  std::vector<std::vector<Detection>> detections;
  std::optional<EvalSummary> eval;

  DecoderParams final_decoder;
  std::optional<SelectorState> final_selector;

  double mean_latency_ms(bool key) const;
};

// Starting state for a run, e.g. restored from a checkpoint.
struct PipelineInit {
  std::optional<DecoderParams> decoder;
  std::optional<SelectorState> selector;
};

std::vector<Detection> merge_detections(const DetectionTensor& tkd_out, const DetectionTensor& general_out,
                                        double conf_threshold, double iou_threshold);

PipelineReport run_sequential(const Stream& stream, const Student& student, const PipelineConfig& cfg,
                              const PipelineInit& init = {});
PipelineReport run_parallel(const Stream& stream, const Student& student, const PipelineConfig& cfg,
                            const PipelineInit& init = {});
// Dispatches on cfg.mode and fills report.eval.
PipelineReport run_pipeline(const Stream& stream, const Student& student, const PipelineConfig& cfg,
                            const PipelineInit& init = {});

// Ground truth per frame: true labels, or decoded oracle output.
std::vector<std::vector<GroundTruthObject>> reference_labels(const Stream& stream,
                                                             const PipelineConfig& cfg);
EvalSummary evaluate_report(const PipelineReport& report, const Stream& stream,
                            const PipelineConfig& cfg);

// Median wall time of the student's per-frame work (backbone, both decoders, merge).
double measure_student_forward_ms(const Student& student, const Stream& stream, int frames = 60);

// Versioned JSON document with decoder weights and, optionally, selector state.
struct Checkpoint {
  DecoderParams decoder;
  std::optional<SelectorState> selector;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const DecoderParams& decoder,
                     const SelectorState* selector);
// Throws FormatError on a version mismatch, truncation or missing fields.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tkd
