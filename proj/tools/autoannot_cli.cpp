// autoannot: synthetic-scene simulation, SMART-OD detection, FLASH annotation,
// evaluation and dataset deployment from the command line.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "autoannot/autoannot.hpp"

namespace fs = std::filesystem;
using namespace autoannot;

namespace {

constexpr int kAbortExit = 75;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::invalid_argument: return 2;
    case ErrorCategory::config: return 3;
    case ErrorCategory::io: return 4;
    case ErrorCategory::checkpoint: return 5;
    case ErrorCategory::propagation: return 6;
    case ErrorCategory::resource: return 7;
    case ErrorCategory::processing: return 8;
    case ErrorCategory::validation: return 9;
  }
  return 1;
}

struct Options {
  std::string config;
  std::vector<std::string> seqs;
  std::string out;
  std::string checkpoint_dir;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string mode = "auto";
  std::string pred;
  std::string id = "seq";
  std::string log_level = "warn";
  // fault injection
  int abort_after_frame = -1;
  std::string abort_at_phase;
  int abort_at_save = 1;
};

PipelineConfig load_config(const Options& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : read_config(o.config);
  if (o.seed) c.world.rng_seed = *o.seed;
  return c;
}

fs::path out_dir(const Options& o) {
  if (o.out.empty()) throw Error(ErrorCategory::invalid_argument, "--out is required");
  return o.out;
}

DatasetSequence single_seq(const Options& o) {
  if (o.seqs.size() != 1) throw Error(ErrorCategory::invalid_argument, "exactly one --seq is required");
  return read_sequence_dir(o.seqs.front());
}

CheckpointHook phase_abort(const Options& o) {
  if (o.abort_at_phase.empty()) return {};
  CheckpointPhase target;
  if (o.abort_at_phase == "temp_written") target = CheckpointPhase::temp_written;
  else if (o.abort_at_phase == "backup_written") target = CheckpointPhase::backup_written;
  else if (o.abort_at_phase == "promoted") target = CheckpointPhase::promoted;
  else if (o.abort_at_phase == "cleaned") target = CheckpointPhase::cleaned;
  else throw Error(ErrorCategory::invalid_argument, "unknown checkpoint phase '" + o.abort_at_phase + "'");
  return [target, n = o.abort_at_save](CheckpointPhase p, const fs::path&) mutable {
    if (p == target && --n == 0) std::_Exit(kAbortExit);
  };
}

int cmd_simulate(const Options& o) {
  const PipelineConfig c = load_config(o);
  const fs::path dir = out_dir(o);
  const DatasetSequence seq = make_sequence(o.id, c.world, c.noise, c.degradation);
  write_sequence_dir(seq, dir);
  std::cout << nlohmann::json{{"sequence", seq.id}, {"frames", seq.gt.size()}, {"dir", dir.string()}}.dump() << "\n";
  return 0;
}

int cmd_detect(const Options& o) {
  const PipelineConfig c = load_config(o);
  const DatasetSequence seq = single_seq(o);
  const OracleDetector det(seq.gt, seq.noise);
  std::vector<MotRecord> rows;
  for (int t = 0; t < det.num_frames(); ++t)
    for (const auto& d : run_smart_od(det, t, c.smart_od)) rows.push_back(to_mot(d, t, -1, seq.world.class_labels));
  const fs::path path = out_dir(o) / (seq.id + ".det.txt");
  write_mot(rows, path);
  const DetectionScore s = evaluate_smart_od(det, seq.gt, c.smart_od, c.deployment.iou_threshold);
  std::cout << nlohmann::json{{"sequence", seq.id},        {"detections", rows.size()}, {"precision", s.precision()},
                              {"recall", s.recall()},      {"tp", s.tp},                {"fp", s.fp},
                              {"fn", s.fn},                {"file", path.string()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_annotate(const Options& o, bool resume) {
  const PipelineConfig c = load_config(o);
  if (o.seqs.empty()) throw Error(ErrorCategory::invalid_argument, "--seq is required");
  if (resume && o.checkpoint_dir.empty()) throw Error(ErrorCategory::invalid_argument, "resume needs --checkpoint-dir");
  const fs::path dir = out_dir(o);
  for (const auto& s : o.seqs) {
    const DatasetSequence seq = read_sequence_dir(s);
    RunOptions ro;
    ro.mode = parse_processing_mode(o.mode);
    if (!o.checkpoint_dir.empty()) ro.checkpoint_dir = fs::path(o.checkpoint_dir);
    ro.sequence_id = seq.id;
    ro.rng_seed = o.seed.value_or(0);
    ro.resume = resume;
    if (o.abort_after_frame >= 0)
      ro.on_frame_done = [n = o.abort_after_frame](int t) {
        if (t == n) std::_Exit(kAbortExit);
      };
    ro.checkpoint_hook = phase_abort(o);
    const AnnotatedSequence a = annotate_sequence(seq, c, ro);
    write_annotations(a.annotations, dir / (seq.id + ".jsonl"));
    write_mot(annotations_to_mot(a.annotations, seq.world.class_labels), dir / (seq.id + ".txt"));
    const auto min_px = static_cast<std::size_t>(c.ash.epsilon_mask);
    const EvalReport r = evaluate(tracks_from_annotations(a.annotations), tracks_from_gt(seq.gt, min_px),
                                  c.deployment.iou_threshold, seq.id);
    std::cout << nlohmann::json{{"sequence", seq.id},
                                {"mode", to_string(a.run.mode_used)},
                                {"fell_back", a.run.fell_back},
                                {"resumed", a.run.resumed},
                                {"objects", a.masklets.size()},
                                {"mota", r.overall.mota},
                                {"idf1", r.overall.idf1},
                                {"idsw", r.overall.counts.idsw}}
                     .dump()
              << "\n";
  }
  return 0;
}

int cmd_evaluate(const Options& o) {
  const PipelineConfig c = load_config(o);
  const DatasetSequence seq = single_seq(o);
  if (o.pred.empty()) throw Error(ErrorCategory::invalid_argument, "--pred is required");
  const int n = static_cast<int>(seq.gt.size());
  const auto& labels = seq.world.class_labels;
  // ground truth regenerated from the world, with the annotation floor applied
  const TrackSequence gt = tracks_from_gt(seq.gt, static_cast<std::size_t>(c.ash.epsilon_mask));
  const TrackSequence pred = tracks_from_mot(read_mot(o.pred), n, labels);
  const EvalReport r = evaluate(pred, gt, c.deployment.iou_threshold, seq.id);
  const std::vector<EvalReport> one{r};
  const std::string csv = to_csv(one);
  if (o.out.empty()) std::cout << csv;
  else write_text(fs::path(o.out) / (seq.id + ".eval.csv"), csv);
  return 0;
}

int cmd_deploy(const Options& o) {
  const PipelineConfig c = load_config(o);
  if (o.seqs.empty()) throw Error(ErrorCategory::invalid_argument, "at least one --seq is required");
  std::vector<DatasetSequence> dataset;
  for (const auto& s : o.seqs) dataset.push_back(read_sequence_dir(s));
  const fs::path dir = out_dir(o);
  RunDatasetOptions ro;
  ro.workers = o.workers;
  ro.mode = parse_processing_mode(o.mode);
  ro.out_dir = dir;
  if (!o.checkpoint_dir.empty()) ro.checkpoint_dir = fs::path(o.checkpoint_dir);
  ro.seed = o.seed.value_or(0);
  const DeployReport d = deploy(dataset, c, ro);

  nlohmann::json rep{{"representative", {{"sequence", d.representative.id},
                                         {"frame", d.representative.frame},
                                         {"count", d.representative.count}}},
                     {"objective", d.optimization.objective},
                     {"grid_points", d.optimization.evaluated.size()},
                     {"smart_od", detail::write_value(d.optimized.smart_od)},
                     {"rep", {{"precision", d.rep_score.precision()}, {"recall", d.rep_score.recall()}}},
                     {"validation", {{"sequence", dataset[d.validation_index].id},
                                     {"precision", d.val_score.precision()},
                                     {"recall", d.val_score.recall()}}},
                     {"cross_validation_passed", d.cross_validation_passed}};
  if (d.dataset) {
    nlohmann::json seqs = nlohmann::json::array();
    for (const auto& s : d.dataset->sequences) {
      nlohmann::json e{{"sequence", s.id}, {"ok", s.ok}, {"fell_back", s.fell_back}, {"qa_sampled", s.qa_sampled},
                       {"flagged", s.flagged}};
      if (!s.ok) e["error"] = s.error;
      if (s.qa) e["qa"] = {{"mean", s.qa->mean}, {"min", s.qa->min}, {"instances", s.qa->instances}};
      seqs.push_back(e);
    }
    rep["sequences"] = seqs;
    rep["flagged"] = d.dataset->flagged;
    std::vector<EvalReport> evals;
    for (const auto& s : d.dataset->sequences)
      if (s.ok) evals.push_back(s.eval);
    evals.push_back(d.dataset->aggregate);
    write_text(dir / "eval.csv", to_csv(evals));
  }
  write_text(dir / "deploy_report.json", rep.dump(2) + "\n");
  std::cout << rep.dump() << "\n";
  if (!d.cross_validation_passed)
    throw Error(ErrorCategory::validation, "cross-validation failed; refine the grid and rerun");
  if (d.dataset) {
    for (const auto& s : d.dataset->sequences)
      if (!s.ok) throw Error(ErrorCategory::processing, "sequence '" + s.id + "' failed: " + s.error);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Automatic video multi-object annotation"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "pipeline config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "seed for the world / run");
    sub->add_option("--log-level", o.log_level, "trace|debug|info|warn|error|off");
  };
  const auto processing = [&](CLI::App* sub) {
    sub->add_option("--seq", o.seqs, "sequence directory (repeatable)")->required();
    sub->add_option("--out", o.out, "output directory")->required();
    sub->add_option("--checkpoint-dir", o.checkpoint_dir, "checkpoint directory");
    sub->add_option("--mode", o.mode, "full|chunk|auto")->check(CLI::IsMember({"full", "chunk", "auto"}));
    sub->add_option("--abort-after-frame", o.abort_after_frame)->group("");
    sub->add_option("--abort-at-phase", o.abort_at_phase)->group("");
    sub->add_option("--abort-at-save", o.abort_at_save)->group("");
  };

  auto* simulate = app.add_subcommand("simulate", "write a synthetic sequence directory");
  common(simulate);
  simulate->add_option("--out", o.out, "sequence directory to create")->required();
  simulate->add_option("--id", o.id, "sequence id");

  auto* detect = app.add_subcommand("detect", "run SMART-OD and write MOT detections");
  common(detect);
  detect->add_option("--seq", o.seqs, "sequence directory")->required();
  detect->add_option("--out", o.out, "output directory")->required();

  auto* annotate = app.add_subcommand("annotate", "SMART-OD + FLASH over one or more sequences");
  common(annotate);
  processing(annotate);

  auto* resume = app.add_subcommand("resume", "continue annotate from the newest checkpoint");
  common(resume);
  processing(resume);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "score MOT predictions against a sequence's ground truth");
  common(evaluate_cmd);
  evaluate_cmd->add_option("--seq", o.seqs, "sequence directory")->required();
  evaluate_cmd->add_option("--pred", o.pred, "predictions in MOT format")->required();
  evaluate_cmd->add_option("--out", o.out, "directory for <seq>.eval.csv (stdout when omitted)");

  auto* deploy_cmd = app.add_subcommand("deploy", "parameter search, cross-validation, dataset run and QA");
  common(deploy_cmd);
  processing(deploy_cmd);
  deploy_cmd->add_option("--workers", o.workers, "parallel sequences")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  auto logger = spdlog::stderr_color_mt("autoannot");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(o.log_level));

  try {
    if (simulate->parsed()) return cmd_simulate(o);
    if (detect->parsed()) return cmd_detect(o);
    if (annotate->parsed()) return cmd_annotate(o, false);
    if (resume->parsed()) return cmd_annotate(o, true);
    if (evaluate_cmd->parsed()) return cmd_evaluate(o);
    if (deploy_cmd->parsed()) return cmd_deploy(o);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.category()) << "]: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
