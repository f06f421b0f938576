#pragma once

// Dataset-level deployment: representative sequence, grid search on the most
// crowded frame, cross-sequence validation, the dataset run and sampled QA.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <spdlog/spdlog.h>

#include "autoannot/backends.hpp"
#include "autoannot/chunker.hpp"
#include "autoannot/config.hpp"
#include "autoannot/io.hpp"
#include "autoannot/metrics.hpp"
#include "autoannot/smart_od.hpp"

namespace autoannot {

struct SequenceCounts {
  std::string id;
  std::vector<int> counts;  // objects per frame
};

struct RepresentativeChoice {
  std::size_t index = 0;
  std::string id;
  int frame = 0;
  int count = 0;
};

/// Sequence holding the single most crowded frame; ties go to the first
/// sequence, then the lowest frame.
inline RepresentativeChoice select_representative(std::span<const SequenceCounts> dataset) {
  if (dataset.empty()) throw Error(ErrorCategory::invalid_argument, "select_representative: empty dataset");
  std::optional<RepresentativeChoice> best;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& c = dataset[i].counts;
    if (c.empty()) continue;
    const auto it = std::max_element(c.begin(), c.end());
    if (!best || *it > best->count)
      best = RepresentativeChoice{i, dataset[i].id, static_cast<int>(it - c.begin()), *it};
  }
  if (!best) throw Error(ErrorCategory::invalid_argument, "select_representative: every sequence is empty");
  return *best;
}

inline std::vector<int> object_counts(std::span<const GroundTruthFrame> gt) {
  std::vector<int> out;
  for (const auto& f : gt)
    out.push_back(static_cast<int>(std::count_if(f.objects.begin(), f.objects.end(),
                                                 [](const GroundTruthObject& o) { return o.visibility > 0.0; })));
  return out;
}

struct DetectionScore {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;

  double precision() const { return tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0; }
  double recall() const { return tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0; }
  double objective(double alpha) const { return alpha * recall() + (1.0 - alpha) * precision(); }
  DetectionScore& operator+=(const DetectionScore& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

inline DetectionScore score_detections(std::span<const Detection> dets, const GroundTruthFrame& gt,
                                       double iou_threshold) {
  std::vector<TrackedBox> p, g;
  for (const auto& d : dets) p.push_back({-1, d.box, d.class_label});
  for (const auto& o : gt.objects)
    if (o.visibility > 0.0) g.push_back({o.id, o.box, o.class_label});
  const FrameMatch m = match_frame(p, g, iou_threshold);
  return {static_cast<long long>(m.matches.size()), static_cast<long long>(m.false_positives.size()),
          static_cast<long long>(m.false_negatives.size())};
}

/// SMART-OD precision/recall over a whole sequence.
inline DetectionScore evaluate_smart_od(const DetectorBackend& detector, std::span<const GroundTruthFrame> gt,
                                        const SmartOdConfig& cfg, double iou_threshold) {
  DetectionScore s;
  for (const auto& f : gt) s += score_detections(run_smart_od(detector, f.frame_index, cfg), f, iou_threshold);
  return s;
}

/// Cartesian product of the deployment grid over `base`: threshold methods
/// outermost, then grid keys in sorted order with the last key varying fastest.
inline std::vector<SmartOdConfig> expand_grid(const SmartOdConfig& base, const DeploymentConfig& d) {
  std::vector<SmartOdConfig> out;
  std::vector<ThresholdMethod> methods;
  for (const auto& m : d.threshold_methods) methods.push_back(parse_threshold_method(m));
  if (methods.empty()) methods.push_back(base.threshold_method);
  std::vector<std::pair<std::string, std::vector<double>>> axes(d.grid.begin(), d.grid.end());
  for (const auto& [k, v] : axes)
    if (v.empty()) throw Error(ErrorCategory::config, "deployment.grid." + k + ": candidate list must be nonempty");
  for (auto m : methods) {
    std::vector<std::size_t> idx(axes.size(), 0);
    bool done = false;
    while (!done) {
      SmartOdConfig c = base;
      c.threshold_method = m;
      for (std::size_t a = 0; a < axes.size(); ++a) set_smart_od_field(c, axes[a].first, axes[a].second[idx[a]]);
      validate(c);
      out.push_back(c);
      // odometer step, last axis fastest
      done = true;
      for (std::size_t a = axes.size(); a-- > 0;) {
        if (++idx[a] < axes[a].second.size()) {
          done = false;
          break;
        }
        idx[a] = 0;
      }
    }
  }
  return out;
}

struct GridPoint {
  SmartOdConfig config;
  DetectionScore score;
  double objective = 0.0;
};

struct OptimizationResult {
  SmartOdConfig best;
  double objective = 0.0;
  DetectionScore score;
  std::vector<GridPoint> evaluated;  // grid order
};

/// Exhaustive search for argmax J = a R + (1 - a) P on one frame; the first
/// grid point wins ties.
inline OptimizationResult optimize_parameters(const DetectorBackend& detector, const GroundTruthFrame& frame,
                                              std::span<const SmartOdConfig> grid, double alpha_weight,
                                              double iou_threshold = 0.5) {
  if (grid.empty()) throw Error(ErrorCategory::invalid_argument, "optimize_parameters: empty grid");
  OptimizationResult r;
  std::optional<std::size_t> best;
  for (const auto& c : grid) {
    const DetectionScore s = score_detections(run_smart_od(detector, frame.frame_index, c), frame, iou_threshold);
    r.evaluated.push_back({c, s, s.objective(alpha_weight)});
    if (!best || r.evaluated.back().objective > r.evaluated[*best].objective) best = r.evaluated.size() - 1;
  }
  r.best = r.evaluated[*best].config;
  r.objective = r.evaluated[*best].objective;
  r.score = r.evaluated[*best].score;
  return r;
}

/// min(P_val, R_val) >= gamma * min(P_rep, R_rep).
inline bool cross_validate(double precision_val, double recall_val, double precision_rep, double recall_rep,
                           double gamma) {
  return std::min(precision_val, recall_val) >= gamma * std::min(precision_rep, recall_rep);
}

// ---------------------------------------------------------------------------
// QA

struct QaScore {
  double mean = 0.0;  // over ground-truth instances; unmatched ones count 0
  double min = 1.0;
  long long instances = 0;
};

/// Per frame, ground-truth masks are matched one-to-one to masklet masks by
/// greedy descending mask IoU. Ground truth with at most `min_pixels` visible
/// pixels is below the annotation floor and not scored.
inline QaScore mask_quality(const MaskletStore& store, std::span<const GroundTruthFrame> gt,
                            std::size_t min_pixels = 0) {
  QaScore q;
  double sum = 0.0;
  for (const auto& f : gt) {
    std::vector<const GroundTruthObject*> g;
    for (const auto& o : f.objects)
      if (o.mask.count() > min_pixels && !o.mask.empty()) g.push_back(&o);
    if (g.empty()) continue;
    std::vector<const BinaryMask*> p;
    for (const auto& [id, m] : store)
      if (auto it = m.entries.find(f.frame_index); it != m.entries.end() && !it->second.mask.empty())
        p.push_back(&it->second.mask);
    std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = 0; j < p.size(); ++j)
        if (double v = iou_mask(g[i]->mask, *p[j]); v > 0.0) cand.emplace_back(v, i, j);
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
      return std::tie(std::get<1>(a), std::get<2>(a)) < std::tie(std::get<1>(b), std::get<2>(b));
    });
    std::vector<double> best(g.size(), 0.0);
    std::vector<char> gu(g.size(), 0), pu(p.size(), 0);
    for (const auto& [v, i, j] : cand) {
      if (gu[i] || pu[j]) continue;
      gu[i] = pu[j] = 1;
      best[i] = v;
    }
    for (double v : best) {
      sum += v;
      q.min = std::min(q.min, v);
      ++q.instances;
    }
  }
  q.mean = q.instances > 0 ? sum / double(q.instances) : 1.0;
  if (q.instances == 0) q.min = 1.0;
  return q;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Stratified QA sample: sequences ranked by density (stable), cut into
/// tertiles, ceil(fraction * size) drawn from each by a seeded hash order.
/// Returns ascending indices.
inline std::vector<std::size_t> select_qa_sample(std::span<const int> densities, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw Error(ErrorCategory::invalid_argument, "select_qa_sample: fraction must be in (0, 1]");
  const std::size_t n = densities.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return densities[a] < densities[b]; });
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t lo = s * n / 3, hi = (s + 1) * n / 3;
    if (lo == hi) continue;
    std::vector<std::size_t> stratum(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                     order.begin() + static_cast<std::ptrdiff_t>(hi));
    std::sort(stratum.begin(), stratum.end(), [&](std::size_t a, std::size_t b) {
      const auto ka = detail::splitmix64(seed ^ detail::splitmix64(a)), kb = detail::splitmix64(seed ^ detail::splitmix64(b));
      return ka != kb ? ka < kb : a < b;
    });
    const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(stratum.size()) - 1e-12));
    out.insert(out.end(), stratum.begin(), stratum.begin() + static_cast<std::ptrdiff_t>(std::min(k, stratum.size())));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Dataset run

/// One synthetic sequence: ground truth plus the imperfections of its oracles.
struct DatasetSequence {
  std::string id;
  std::vector<GroundTruthFrame> gt;
  DetectionNoise noise;
  PropagationDegradation degradation;
  SyntheticWorldConfig world;
};

inline DatasetSequence make_sequence(std::string id, const SyntheticWorldConfig& world, const DetectionNoise& noise,
                                     const PropagationDegradation& degradation) {
  validate(noise);
  validate(degradation);
  return {std::move(id), generate_synthetic_sequence(world), noise, degradation, world};
}

inline constexpr int kSequenceSchemaVersion = 1;

/// Sequence directory: seqinfo.json (world, noise, degradation), gt/gt.txt
/// and det/det.txt (raw detector output) in MOT layout.
inline void write_sequence_dir(const DatasetSequence& seq, const std::filesystem::path& dir) {
  if (seq.gt.empty()) throw Error(ErrorCategory::invalid_argument, "sequence '" + seq.id + "' has no frames");
  nlohmann::json info{{"schema_version", kSequenceSchemaVersion},
                      {"id", seq.id},
                      {"width", seq.gt.front().width},
                      {"height", seq.gt.front().height},
                      {"num_frames", seq.gt.size()},
                      {"world", detail::write_value(seq.world)},
                      {"noise", detail::write_value(seq.noise)},
                      {"degradation", detail::write_value(seq.degradation)}};
  write_text(dir / "seqinfo.json", info.dump(2) + "\n");
  const auto& labels = seq.world.class_labels;
  write_mot(gt_to_mot(seq.gt, labels), dir / "gt" / "gt.txt");
  std::vector<MotRecord> det;
  for (const auto& f : seq.gt)
    for (const auto& d : oracle_detect(f, seq.noise)) det.push_back(to_mot(d, f.frame_index, -1, labels));
  write_mot(det, dir / "det" / "det.txt");
}

/// Rebuilds a sequence from its seqinfo.json (ground truth is regenerated
/// from the stored world).
inline DatasetSequence read_sequence_dir(const std::filesystem::path& dir) {
  const auto path = dir / "seqinfo.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::io, path.string() + ": " + e.what());
  }
  if (!j.is_object() || j.value("schema_version", -1) != kSequenceSchemaVersion)
    throw Error(ErrorCategory::io, path.string() + ": unsupported schema_version");
  try {
    SyntheticWorldConfig world;
    DetectionNoise noise;
    PropagationDegradation degradation;
    detail::read_value(j.at("world"), world, "world");
    detail::read_value(j.at("noise"), noise, "noise");
    detail::read_value(j.at("degradation"), degradation, "degradation");
    return make_sequence(j.at("id").get<std::string>(), world, noise, degradation);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::io, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.category(), path.string() + ": " + e.what());
  }
}

struct RunDatasetOptions {
  int workers = 1;
  ProcessingMode mode = ProcessingMode::automatic;
  std::optional<std::filesystem::path> out_dir;         // <seq>.jsonl and <seq>.txt per sequence
  std::optional<std::filesystem::path> checkpoint_dir;  // resumable runs
  bool resume = false;
  std::uint64_t seed = 0;
};

struct SequenceOutcome {
  std::string id;
  bool ok = false;
  std::string error;
  AnnotationDocument annotations;
  EvalReport eval;
  bool fell_back = false;
  bool qa_sampled = false;
  std::optional<QaScore> qa;
  bool flagged = false;
};

struct DatasetReport {
  std::vector<SequenceOutcome> sequences;  // dataset order
  std::vector<std::size_t> qa_sample;
  std::vector<std::string> flagged;  // sampled sequences with QA below tau_qa
  EvalReport aggregate;
};

/// Per-frame SMART-OD detections of a sequence.
inline std::vector<std::vector<Detection>> detect_sequence(const DetectorBackend& detector, const SmartOdConfig& cfg) {
  std::vector<std::vector<Detection>> out;
  for (int t = 0; t < detector.num_frames(); ++t) out.push_back(run_smart_od(detector, t, cfg));
  return out;
}

struct AnnotatedSequence {
  AnnotationDocument annotations;
  MaskletStore masklets;
  RunResult run;
};

inline AnnotatedSequence annotate_sequence(const DatasetSequence& seq, const PipelineConfig& cfg,
                                           const RunOptions& options) {
  if (seq.gt.empty()) throw Error(ErrorCategory::invalid_argument, "sequence '" + seq.id + "' has no frames");
  const OracleDetector detector(seq.gt, seq.noise);
  const OraclePropagator propagator(seq.gt, seq.degradation);
  const auto dets = detect_sequence(detector, cfg.smart_od);
  const FlashConfig flash = cfg.flash();
  AnnotatedSequence out;
  out.run = run_sequence(dets, detector.frame_width(), detector.frame_height(), propagator, flash, options);
  out.masklets = out.run.masklets;
  out.annotations = to_annotations(out.masklets, seq.id, detector.frame_width(), detector.frame_height(),
                                   detector.num_frames());
  return out;
}

/// Runs every sequence (bounded worker threads, results in dataset order),
/// then scores the stratified QA sample against ground truth. A failing
/// sequence is logged and reported; the others still run.
inline DatasetReport run_dataset(std::span<const DatasetSequence> dataset, const PipelineConfig& cfg,
                                 const RunDatasetOptions& opt) {
  DatasetReport report;
  report.sequences.resize(dataset.size());
  std::vector<std::optional<QaScore>> qa_all(dataset.size());
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next++; i < dataset.size(); i = next++) {
      const DatasetSequence& seq = dataset[i];
      SequenceOutcome& o = report.sequences[i];
      o.id = seq.id;
      try {
        RunOptions ro;
        ro.mode = opt.mode;
        ro.checkpoint_dir = opt.checkpoint_dir;
        ro.sequence_id = seq.id;
        ro.rng_seed = opt.seed;
        ro.resume = opt.resume;
        AnnotatedSequence a = annotate_sequence(seq, cfg, ro);
        o.fell_back = a.run.fell_back;
        const auto min_px = static_cast<std::size_t>(cfg.ash.epsilon_mask);
        o.eval = evaluate(tracks_from_annotations(a.annotations), tracks_from_gt(seq.gt, min_px),
                          cfg.deployment.iou_threshold, seq.id);
        qa_all[i] = mask_quality(a.masklets, seq.gt, min_px);
        if (opt.out_dir) {
          write_annotations(a.annotations, *opt.out_dir / (seq.id + ".jsonl"));
          write_mot(annotations_to_mot(a.annotations, cfg.world.class_labels), *opt.out_dir / (seq.id + ".txt"));
        }
        o.annotations = std::move(a.annotations);
        o.ok = true;
      } catch (const std::exception& e) {
        o.error = e.what();
        spdlog::error("sequence {} failed: {}", seq.id, e.what());
      }
    }
  };
  const int workers = std::max(1, std::min<int>(opt.workers, static_cast<int>(dataset.size())));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::vector<int> densities;
  for (const auto& s : dataset) {
    const auto c = object_counts(s.gt);
    densities.push_back(c.empty() ? 0 : *std::max_element(c.begin(), c.end()));
  }
  if (!dataset.empty())
    report.qa_sample = select_qa_sample(densities, cfg.deployment.qa_sample_fraction, cfg.deployment.qa_seed);
  for (auto i : report.qa_sample) {
    SequenceOutcome& o = report.sequences[i];
    o.qa_sampled = true;
    o.qa = qa_all[i];
    if (!o.ok || !o.qa || o.qa->mean < cfg.deployment.tau_qa) {
      o.flagged = true;
      report.flagged.push_back(o.id);
    }
  }
  std::vector<EvalReport> evals;
  for (const auto& o : report.sequences)
    if (o.ok) evals.push_back(o.eval);
  report.aggregate = aggregate(evals);
  return report;
}

struct DeployReport {
  RepresentativeChoice representative;
  OptimizationResult optimization;
  DetectionScore rep_score;
  std::size_t validation_index = 0;
  DetectionScore val_score;
  bool cross_validation_passed = false;
  PipelineConfig optimized;
  std::optional<DatasetReport> dataset;  // absent when cross-validation fails
};

/// Representative selection -> grid search on its most crowded frame ->
/// sequence-level scores -> cross-validation on a seeded random other
/// sequence -> dataset run with QA.
inline DeployReport deploy(std::span<const DatasetSequence> dataset, const PipelineConfig& cfg,
                           const RunDatasetOptions& opt) {
  if (dataset.empty()) throw Error(ErrorCategory::invalid_argument, "deploy: empty dataset");
  DeployReport r;
  std::vector<SequenceCounts> counts;
  for (const auto& s : dataset) counts.push_back({s.id, object_counts(s.gt)});
  r.representative = select_representative(counts);
  const DatasetSequence& rep = dataset[r.representative.index];
  const OracleDetector rep_detector(rep.gt, rep.noise);

  const auto grid = expand_grid(cfg.smart_od, cfg.deployment);
  r.optimization = optimize_parameters(rep_detector, rep.gt[static_cast<std::size_t>(r.representative.frame)], grid,
                                       cfg.deployment.alpha_weight, cfg.deployment.iou_threshold);
  r.optimized = cfg;
  r.optimized.smart_od = r.optimization.best;
  r.rep_score = evaluate_smart_od(rep_detector, rep.gt, r.optimized.smart_od, cfg.deployment.iou_threshold);

  r.validation_index = r.representative.index;
  if (dataset.size() > 1) {
    const std::size_t k = detail::splitmix64(cfg.deployment.qa_seed ^ 0x76616cULL) % (dataset.size() - 1);
    r.validation_index = k < r.representative.index ? k : k + 1;
  }
  const DatasetSequence& val = dataset[r.validation_index];
  const OracleDetector val_detector(val.gt, val.noise);
  r.val_score = evaluate_smart_od(val_detector, val.gt, r.optimized.smart_od, cfg.deployment.iou_threshold);
  r.cross_validation_passed = cross_validate(r.val_score.precision(), r.val_score.recall(), r.rep_score.precision(),
                                             r.rep_score.recall(), cfg.deployment.gamma);
  spdlog::info("deploy: representative {} (frame {}, {} objects), J = {:.4f}, validation {} {}", rep.id,
               r.representative.frame, r.representative.count, r.optimization.objective, val.id,
               r.cross_validation_passed ? "passed" : "failed");
  if (!r.cross_validation_passed) return r;
  r.dataset = run_dataset(dataset, r.optimized, opt);
  return r;
}

}  // namespace autoannot
