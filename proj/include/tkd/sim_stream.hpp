#pragma once

// Synthetic scene streams.
//
// Each frame is a pre-featurized grid (cells x input_dim). Channels 0..3
// carry an object's in-cell offset and size; the remaining channels carry
// appearance: a class direction bent by a per-scene shift, plus a per-scene
// background texture and per-frame noise. Objects also leak a weaker copy of
// their appearance into the four neighbouring cells. Scenes follow each other
// in list order; at every boundary the two scenes are blended linearly over
// transition_len frames and the ground truth switches at the midpoint.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tkd/detection.hpp"
#include "tkd/models.hpp"

namespace tkd {

struct IntRange {
  int min = 1;
  int max = 1;
};

struct SceneSpec {
  int scene_id = 0;
  std::vector<double> class_distribution;
  IntRange object_count{2, 4};
  double motion_sigma = 0.004;
  IntRange duration{500, 500};
  double appearance_shift = 0.0;  // 0 = canonical class appearance
  double background = 0.3;        // norm of the scene's background offset
  double turnover = 0.01;         // per-object per-frame replacement probability

  // Throws ConfigError naming the field.
  void validate(int classes) const;
};

struct StreamConfig {
  GridShape shape{8, 6};
  int input_dim = 24;
  int n_frames = 500;
  int transition_len = 4;
  std::uint64_t seed = 1;
  std::uint64_t world_seed = 2019;  // class appearance shared by every stream
  double amplitude = 1.0;
  double halo = 0.2;
  double texture = 0.05;
  double frame_noise = 0.05;
  double size_min = 0.10;
  double size_max = 0.25;

  void validate() const;
};

struct FrameRecord {
  std::int64_t frame_id = 0;
  int scene_id = 0;
  FeatureFrame frame;
  std::vector<GroundTruthObject> gt;
  std::optional<DetectionTensor> oracle;
};

struct Stream {
  GridShape shape;
  int input_dim = 0;
  std::vector<FrameRecord> frames;

  // Indices of frames whose scene_id differs from the previous frame.
  std::vector<std::int64_t> change_points() const;
};

Stream generate_stream(const std::vector<SceneSpec>& scenes, const StreamConfig& config);

// A scene-less "generic" stream: uniform classes, canonical appearance.
SceneSpec generic_scene(int classes, int scene_id = 1000);

struct OracleNoiseSpec {
  double empty_cell_noise_rate = 0.1;
  double noise_lo = -3.0;
  double noise_hi = -0.5;
  double halo_noise_rate = 0.0;  // extra spurious objectness next to objects
  double box_jitter_sigma = 0.005;
  double class_flip_prob = 0.0;
  double object_logit = 3.0;
  double empty_logit = -3.0;
  double class_logit = 3.0;

  void validate() const;
};

// Two objects in one cell: the one nearer the cell center wins.
DetectionTensor synth_oracle(const std::vector<GroundTruthObject>& gt, const OracleNoiseSpec& noise,
                             const GridShape& shape, std::mt19937_64& rng);

// Deterministic per-frame oracle; uses the cached tensor when present.
DetectionTensor oracle_for_frame(const FrameRecord& record, const OracleNoiseSpec& noise,
                                 const GridShape& shape, std::uint64_t seed);

inline constexpr int kTraceVersion = 1;

// Header line "tkd-trace version=1 s=.. c=.. d=.. frames=..", then one line per frame.
void write_trace(const Stream& stream, const std::filesystem::path& path);
// Throws FormatError naming the failing line.
Stream read_trace(const std::filesystem::path& path);

}  // namespace tkd
