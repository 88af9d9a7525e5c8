#pragma once

// One structured JSON file configures every CLI command. Keys are strict:
// an unknown key is a ConfigError naming its dotted path, so typos surface
// instead of silently falling back to defaults. See docs/config.md.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tkd/experiments.hpp"
#include "tkd/pipeline.hpp"
#include "tkd/student.hpp"

namespace tkd {

struct OutputPaths {
  std::filesystem::path report;      // run: JSON report
  std::filesystem::path table;       // ablate / bench / eval: aligned text table
  std::filesystem::path csv;         // ablate / bench: optional CSV
  std::filesystem::path checkpoint;  // run: adapted decoder + selector state
};

struct RunConfig {
  std::uint64_t seed = 0;
  // At most one of scenes (generated stream) and trace; commands that
  // consume a stream need one of them.
  StreamConfig stream;
  std::vector<SceneSpec> scenes;
  std::optional<std::filesystem::path> trace;
  ModelConfig model;
  PipelineConfig pipeline;
  std::vector<double> lambdas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  BenchConfig bench;
  std::optional<std::filesystem::path> init_checkpoint;
  OutputPaths output;

  void validate() const;
};

// Parses JSON text; relative paths resolve against base_dir.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});

// Reads the file and applies "dotted.key=value" overrides before parsing.
// The value is parsed as JSON when possible, otherwise taken as a string.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Generated or loaded stream for the config; ConfigError when neither is given.
Stream materialize_stream(const RunConfig& cfg);

// JSON report: summary, per-frame log, loss trace, evaluation and, when
// requested, per-frame detections (needed to re-score later).
std::string report_json(const PipelineReport& report, bool with_detections);
void write_report(const std::filesystem::path& path, const PipelineReport& report, bool with_detections);
// Per-frame detections of a report written with detections.
std::vector<std::vector<Detection>> read_report_detections(const std::filesystem::path& path);

std::string eval_json(const EvalSummary& summary);
std::string format_eval_table(const EvalSummary& summary);
std::string format_ablation_table(const std::vector<AblationRow>& rows);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string format_bench_table(const std::vector<BenchRow>& rows);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace tkd
