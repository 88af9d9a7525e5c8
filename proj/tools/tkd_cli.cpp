// tkd: generate synthetic streams, run the online distillation pipeline,
// sweep lambda, time the losses and re-score saved reports.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tkd/error.hpp"
#include "tkd/run_config.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON config file (schema in docs/config.md)")->required();
  cmd->add_option("-s,--set", c.overrides, "Override a config value, e.g. --set pipeline.mode=parallel")
      ->take_all();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing: " + path.string());
}

int cmd_generate(const Common& c, const std::string& out_path) {
  const tkd::RunConfig cfg = tkd::load_run_config(c.config, c.overrides);
  if (cfg.trace) throw tkd::ConfigError("generate needs stream.scenes, not a trace input");
  const tkd::Stream stream = tkd::materialize_stream(cfg);
  tkd::write_trace(stream, out_path);

  std::vector<long> hist(stream.shape.c, 0);
  for (const tkd::FrameRecord& rec : stream.frames)
    for (const tkd::GroundTruthObject& g : rec.gt) ++hist[g.class_id];
  std::printf("frames %zu  scene changes %zu  -> %s\n", stream.frames.size(), stream.change_points().size(),
              out_path.c_str());
  std::printf("class histogram:");
  for (std::size_t k = 0; k < hist.size(); ++k) std::printf(" %zu:%ld", k, hist[k]);
  std::printf("\n");
  return kOk;
}

int cmd_run(const Common& c, const std::string& report_flag, const std::string& checkpoint_flag) {
  tkd::RunConfig cfg = tkd::load_run_config(c.config, c.overrides);
  if (!report_flag.empty()) cfg.output.report = report_flag;
  if (!checkpoint_flag.empty()) cfg.output.checkpoint = checkpoint_flag;

  const tkd::Stream stream = tkd::materialize_stream(cfg);
  const tkd::Student student(cfg.model, cfg.stream);
  tkd::PipelineInit init;
  if (cfg.init_checkpoint) {
    tkd::Checkpoint cp = tkd::load_checkpoint(*cfg.init_checkpoint);
    init.decoder = std::move(cp.decoder);
    init.selector = std::move(cp.selector);
  }
  const tkd::PipelineReport report = tkd::run_pipeline(stream, student, cfg.pipeline, init);

  // Persist before judging the outcome so an aborted run still leaves its partial report.
  if (!cfg.output.report.empty()) tkd::write_report(cfg.output.report, report, true);
  if (!cfg.output.checkpoint.empty()) {
    tkd::save_checkpoint(cfg.output.checkpoint, report.final_decoder,
                         report.final_selector ? &*report.final_selector : nullptr);
  }

  const double f1 = report.eval ? report.eval->thresholds.front().f1 : 0.0;
  const double iou = report.eval ? report.eval->thresholds.front().iou : 0.0;
  std::printf("mode %s  selector %s  frames %d  fps %.1f  key_fraction %.3f  F1@%.2f %.3f  dropped %d\n",
              tkd::to_string(report.mode), tkd::to_string(report.selector), report.frames, report.fps,
              report.key_fraction, iou, f1, report.dropped);
  if (report.aborted) {
    std::fprintf(stderr, "run aborted: %s\n", report.error.c_str());
    return kRuntimeError;
  }
  return kOk;
}

void emit_table(const tkd::RunConfig& cfg, const std::string& table, const std::string& csv) {
  std::cout << table;
  if (!cfg.output.table.empty()) write_text(cfg.output.table, table);
  if (!cfg.output.csv.empty()) write_text(cfg.output.csv, csv);
}

int cmd_ablate(const Common& c) {
  const tkd::RunConfig cfg = tkd::load_run_config(c.config, c.overrides);
  const tkd::Stream stream = tkd::materialize_stream(cfg);
  const tkd::Student student(cfg.model, cfg.stream);
  const auto rows = tkd::ablate_lambda(stream, student, cfg.pipeline, cfg.lambdas);
  emit_table(cfg, tkd::format_ablation_table(rows), tkd::ablation_csv(rows));
  return kOk;
}

int cmd_bench(const Common& c) {
  const tkd::RunConfig cfg = tkd::load_run_config(c.config, c.overrides);
  const auto rows = tkd::bench_loss_cost(cfg.bench);
  emit_table(cfg, tkd::format_bench_table(rows), tkd::bench_csv(rows));
  return kOk;
}

int cmd_eval(const Common& c, const std::string& report_path) {
  const tkd::RunConfig cfg = tkd::load_run_config(c.config, c.overrides);
  const tkd::Stream stream = tkd::materialize_stream(cfg);
  tkd::PipelineReport report;
  report.detections = tkd::read_report_detections(report_path);
  if (report.detections.size() != stream.frames.size()) {
    throw tkd::FormatError("report holds " + std::to_string(report.detections.size()) + " frames but the stream has " +
                           std::to_string(stream.frames.size()));
  }
  const tkd::EvalSummary summary = tkd::evaluate_report(report, stream, cfg.pipeline);
  const std::string table = tkd::format_eval_table(summary);
  std::cout << table;
  if (!cfg.output.table.empty()) write_text(cfg.output.table, table);
  if (!cfg.output.csv.empty()) write_text(cfg.output.csv, tkd::eval_json(summary) + "\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online teacher-student distillation for streaming object detection"};
  app.require_subcommand(1);

  Common common;
  std::string trace_out;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic stream and write it as a trace file");
  add_common(gen, common);
  gen->add_option("-o,--out", trace_out, "Trace file to write")->required();

  std::string report_path;
  std::string checkpoint_path;
  auto* run = app.add_subcommand("run", "Run the pipeline and write a report");
  add_common(run, common);
  run->add_option("--report", report_path, "Report path (overrides output.report)");
  run->add_option("--checkpoint", checkpoint_path, "Checkpoint path (overrides output.checkpoint)");

  auto* ablate = app.add_subcommand("ablate", "Sweep lambda over identical runs");
  add_common(ablate, common);

  auto* bench = app.add_subcommand("bench", "Time tkd_loss against an NMS-based loss");
  add_common(bench, common);

  std::string eval_report;
  auto* eval = app.add_subcommand("eval", "Re-score a saved report against the configured stream");
  add_common(eval, common);
  eval->add_option("-r,--report", eval_report, "Report written by 'run'")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*gen) return cmd_generate(common, trace_out);
    if (*run) return cmd_run(common, report_path, checkpoint_path);
    if (*ablate) return cmd_ablate(common);
    if (*bench) return cmd_bench(common);
    if (*eval) return cmd_eval(common, eval_report);
  } catch (const tkd::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kOk;
}
