#pragma once

// Long-sequence processing: full-sequence FLASH with checkpoints, fallback to
// overlapping chunks with identity hand-off, and the three-phase checkpoint
// store.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "autoannot/ash.hpp"
#include "autoannot/assoc.hpp"
#include "autoannot/backends.hpp"
#include "autoannot/codec.hpp"
#include "autoannot/error.hpp"

namespace autoannot {

struct ChunkerConfig {
  int chi = 50;
  int omega = 10;
  double tau_overlap = 0.7;
  int window = -1;  // optimal-frame search radius; negative means omega
  int checkpoint_interval = 10;
  long long budget = 0;  // frame x object units per processing unit; 0 = unlimited

  int search_window() const { return window < 0 ? omega : window; }
  friend bool operator==(const ChunkerConfig&, const ChunkerConfig&) = default;
};

inline void validate(const ChunkerConfig& c) {
  const auto fail = [](const std::string& f, const std::string& why) {
    throw Error(ErrorCategory::config, "chunker." + f + ": " + why);
  };
  if (c.chi < 2) fail("chi", "must be >= 2");
  if (c.omega < 0) fail("omega", "must be >= 0");
  // s_{i+1} = e_i - omega shares omega + 1 frames, so omega + 1 < chi keeps chunks advancing.
  if (c.omega >= c.chi - 1) fail("omega", "must be < chi - 1");
  if (!(c.tau_overlap > 0.0 && c.tau_overlap < 1.0)) fail("tau_overlap", "must be in (0, 1)");
  if (c.checkpoint_interval < 0) fail("checkpoint_interval", "must be >= 0");
  if (c.budget < 0) fail("budget", "must be >= 0");
}

struct ChunkPlan {
  std::vector<std::pair<int, int>> chunks;  // inclusive [start, end]
  int omega = 0;
};

inline ChunkPlan plan_chunks(int num_frames, const ChunkerConfig& cfg) {
  if (num_frames < 1) throw Error(ErrorCategory::invalid_argument, "plan_chunks: num_frames must be >= 1");
  validate(cfg);
  ChunkPlan plan{{}, cfg.omega};
  int s = 0;
  for (;;) {
    const int e = std::min(s + cfg.chi - 1, num_frames - 1);
    plan.chunks.emplace_back(s, e);
    if (e == num_frames - 1) break;
    s = e - cfg.omega;
  }
  return plan;
}

/// Argmax of counts over [center - w, center + w] clipped to the sequence;
/// ties go to the lowest frame.
inline int find_optimal_frame(std::span<const int> counts, int center, int w) {
  if (w < 0) throw Error(ErrorCategory::invalid_argument, "find_optimal_frame: window must be >= 0");
  const int lo = std::max(0, center - w);
  const int hi = std::min(static_cast<int>(counts.size()) - 1, center + w);
  if (lo > hi) throw Error(ErrorCategory::invalid_argument, "find_optimal_frame: window outside the sequence");
  int best = lo;
  for (int f = lo + 1; f <= hi; ++f)
    if (counts[static_cast<std::size_t>(f)] > counts[static_cast<std::size_t>(best)]) best = f;
  return best;
}

/// Start of the chunk after [prev_start, prev_end]: optimal frame near
/// prev_end minus omega, clamped so the chunks overlap and still advance.
inline int adjusted_chunk_start(std::span<const int> counts, int prev_start, int prev_end, const ChunkerConfig& cfg) {
  const int optimal = find_optimal_frame(counts, prev_end, cfg.search_window());
  const int lo = std::max(prev_start + 1, prev_end - cfg.chi + 2);
  return std::clamp(std::max(0, optimal - cfg.omega), lo, prev_end);
}

struct OverlapMatch {
  std::map<int, int> inherited;  // B id -> A id
  std::vector<int> fresh;        // B ids left unmatched, ascending
};

/// Mean mask IoU of two masklets over the frames of F where either one has a
/// nonempty mask; nullopt when there is no such frame.
inline std::optional<double> mean_overlap_iou(const Masklet& a, const Masklet& b, std::span<const int> frames) {
  double sum = 0.0;
  int n = 0;
  for (int f : frames) {
    const auto ia = a.entries.find(f);
    const auto ib = b.entries.find(f);
    const bool has_a = ia != a.entries.end() && !ia->second.mask.empty();
    const bool has_b = ib != b.entries.end() && !ib->second.mask.empty();
    if (!has_a && !has_b) continue;
    ++n;
    if (has_a && has_b) sum += iou_mask(ia->second.mask, ib->second.mask);
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

/// Identity hand-off between consecutive chunks: greedy descending mean IoU,
/// strictly above tau_overlap, each A id used at most once.
inline OverlapMatch match_chunk_overlap(const MaskletStore& a, const MaskletStore& b, std::span<const int> frames,
                                        double tau_overlap) {
  if (frames.empty()) throw Error(ErrorCategory::invalid_argument, "match_chunk_overlap: no overlap frames");
  std::vector<std::tuple<double, int, int>> cand;  // (iou, a id, b id)
  for (const auto& [ida, ma] : a)
    for (const auto& [idb, mb] : b)
      if (auto v = mean_overlap_iou(ma, mb, frames); v && *v > tau_overlap) cand.emplace_back(*v, ida, idb);
  std::sort(cand.begin(), cand.end(), [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    return std::tie(std::get<1>(x), std::get<2>(x)) < std::tie(std::get<1>(y), std::get<2>(y));
  });
  OverlapMatch out;
  std::set<int> used_a;
  for (const auto& [v, ida, idb] : cand) {
    if (used_a.count(ida) || out.inherited.count(idb)) continue;
    used_a.insert(ida);
    out.inherited.emplace(idb, ida);
  }
  for (const auto& [idb, mb] : b)
    if (!out.inherited.count(idb)) out.fresh.push_back(idb);
  return out;
}

/// Folds chunk B into the stitched store A. Inherited ids keep A's entries in
/// the overlap and take B's elsewhere; fresh ids are numbered from next_id.
inline void stitch_chunk(MaskletStore& a, MaskletStore b, const OverlapMatch& match, int& next_id) {
  for (auto& [idb, mb] : b) {
    if (auto it = match.inherited.find(idb); it != match.inherited.end()) {
      Masklet& target = a.at(it->second);
      for (auto& [f, e] : mb.entries) target.entries.try_emplace(f, std::move(e));
    } else {
      const int id = next_id++;
      mb.object_id = id;
      a.emplace(id, std::move(mb));
    }
  }
}

/// Merges chunk B's overlap with the stitched store A and returns the global
/// id of every B object.
inline std::map<int, int> merge_chunk_overlap(MaskletStore& a, MaskletStore b, std::span<const int> frames,
                                              double tau_overlap, int& next_id) {
  const OverlapMatch m = match_chunk_overlap(a, b, frames, tau_overlap);
  std::map<int, int> mapping = m.inherited;
  int probe = next_id;
  for (int idb : m.fresh) mapping.emplace(idb, probe++);
  stitch_chunk(a, std::move(b), m, next_id);
  return mapping;
}

// ---------------------------------------------------------------------------
// Checkpoints

enum class ProcessingMode { full, chunk, automatic };

inline const char* to_string(ProcessingMode m) {
  switch (m) {
    case ProcessingMode::full: return "full";
    case ProcessingMode::chunk: return "chunk";
    case ProcessingMode::automatic: return "auto";
  }
  return "unknown";
}

inline ProcessingMode parse_processing_mode(std::string_view s) {
  if (s == "full") return ProcessingMode::full;
  if (s == "chunk") return ProcessingMode::chunk;
  if (s == "auto") return ProcessingMode::automatic;
  throw Error(ErrorCategory::invalid_argument, "unknown processing mode '" + std::string(s) + "'");
}

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  int schema_version = kCheckpointSchemaVersion;
  std::string sequence_id;
  std::string tag = "initial";  // initial | final | frame_NNNN
  long long revision = 0;       // increases with every save of a run
  ProcessingMode mode = ProcessingMode::full;
  int chunk_index = 0;  // chunks completed (chunk mode)
  std::pair<int, int> last_chunk{-1, -1};
  int last_frame = -1;  // last completed frame
  bool finalized = false;
  long long budget_used = 0;
  int next_global_id = 0;
  std::uint64_t rng_seed = 0;
  AssocState assoc;
  MaskletStore masklets;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::string frame_tag(int frame) {
  std::string digits = std::to_string(frame);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return "frame_" + digits;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, const std::string& seq,
                                             const std::string& tag) {
  return dir / (seq + "_ckpt_" + tag + ".json");
}

/// Start frame encoded in a checkpoint name: "initial" -> -1, "final" ->
/// max_frame, "frame_N" -> N. Accepts bare tags or full file names.
inline int resume_frame(std::string_view name, int max_frame = -1) {
  std::string s(name);
  if (auto slash = s.find_last_of("/\\"); slash != std::string::npos) s.erase(0, slash + 1);
  for (const char* ext : {".tmp", ".bak", ".json"})
    if (s.size() > std::string_view(ext).size() && s.ends_with(ext)) s.erase(s.size() - std::string_view(ext).size());
  if (auto p = s.rfind("ckpt_"); p != std::string::npos) s.erase(0, p + 5);
  if (s == "initial") return -1;
  if (s == "final") return max_frame;
  if (s.starts_with("frame_") && s.size() > 6) {
    const std::string_view digits = std::string_view(s).substr(6);
    int n = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (ec == std::errc() && ptr == digits.data() + digits.size() && n >= 0) return n;
  }
  throw Error(ErrorCategory::checkpoint, "unparseable checkpoint tag in '" + std::string(name) + "'");
}

inline std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json j{{"schema_version", c.schema_version},
                   {"sequence_id", c.sequence_id},
                   {"tag", c.tag},
                   {"revision", c.revision},
                   {"mode", to_string(c.mode)},
                   {"chunk_index", c.chunk_index},
                   {"last_chunk", {c.last_chunk.first, c.last_chunk.second}},
                   {"last_frame", c.last_frame},
                   {"finalized", c.finalized},
                   {"budget_used", c.budget_used},
                   {"next_global_id", c.next_global_id},
                   {"rng_seed", c.rng_seed},
                   {"assoc", codec::encode(c.assoc)},
                   {"masklets", codec::encode(c.masklets)}};
  return j.dump() + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const int version = j.at("schema_version").get<int>();
  if (version != kCheckpointSchemaVersion)
    throw Error(ErrorCategory::checkpoint, "schema version " + std::to_string(version) + " (expected " +
                                               std::to_string(kCheckpointSchemaVersion) + ")");
  Checkpoint c;
  c.schema_version = version;
  c.sequence_id = j.at("sequence_id").get<std::string>();
  c.tag = j.at("tag").get<std::string>();
  c.revision = j.at("revision").get<long long>();
  c.mode = parse_processing_mode(j.at("mode").get<std::string>());
  c.chunk_index = j.at("chunk_index").get<int>();
  c.last_chunk = {j.at("last_chunk").at(0).get<int>(), j.at("last_chunk").at(1).get<int>()};
  c.last_frame = j.at("last_frame").get<int>();
  c.finalized = j.at("finalized").get<bool>();
  c.budget_used = j.at("budget_used").get<long long>();
  c.next_global_id = j.at("next_global_id").get<int>();
  c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  c.assoc = codec::decode_assoc(j.at("assoc"));
  c.masklets = codec::decode_store(j.at("masklets"));
  return c;
}

namespace detail {

inline bool is_checkpoint_file(const std::filesystem::path& p, const std::string& seq, std::string_view suffix) {
  const std::string name = p.filename().string();
  return name.starts_with(seq + "_ckpt_") && name.ends_with(suffix);
}

inline std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& dir, const std::string& seq,
                                                           std::string_view suffix) {
  std::vector<std::filesystem::path> out;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec))
    if (e.is_regular_file() && is_checkpoint_file(e.path(), seq, suffix)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCategory::io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCategory::io, "cannot write " + p.string());
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCategory::io, "short write to " + p.string());
}

}  // namespace detail

/// Reads one checkpoint file. Failures name the backup to recover from.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return parse_checkpoint(detail::read_file(path));
  } catch (const std::exception& e) {
    std::string recovery = "none";
    const std::string name = path.filename().string();
    if (auto p = name.find("_ckpt_"); p != std::string::npos) {
      const auto baks = detail::list_checkpoints(path.parent_path(), name.substr(0, p), ".json.bak");
      for (const auto& b : baks)
        if (b != path) recovery = b.string();
    }
    throw Error(ErrorCategory::checkpoint,
                "checkpoint " + path.string() + " is unusable (" + e.what() + "); recovery file: " + recovery);
  }
}

enum class CheckpointPhase { temp_written, backup_written, promoted, cleaned };

using CheckpointHook = std::function<void(CheckpointPhase, const std::filesystem::path&)>;

/// Three-phase save: write <path>.tmp, back up the current checkpoint of the
/// sequence to <old>.bak, rename the temp file into place; then drop the
/// superseded file and older backups. At least one loadable checkpoint
/// exists on disk at every point once the first save has completed.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path, const CheckpointHook& hook = {}) {
  namespace fs = std::filesystem;
  const fs::path dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  std::error_code ec;
  fs::create_directories(dir, ec);
  const auto existing = detail::list_checkpoints(dir, c.sequence_id, ".json");

  fs::path tmp = path;
  tmp += ".tmp";
  detail::write_file(tmp, serialize_checkpoint(c));
  if (hook) hook(CheckpointPhase::temp_written, tmp);

  std::vector<fs::path> backups;
  for (const auto& old : existing) {
    fs::path bak = old;
    bak += ".bak";
    fs::path bak_tmp = bak;
    bak_tmp += ".tmp";
    fs::copy_file(old, bak_tmp, fs::copy_options::overwrite_existing);
    fs::rename(bak_tmp, bak);
    backups.push_back(bak);
  }
  if (hook) hook(CheckpointPhase::backup_written, backups.empty() ? fs::path() : backups.back());

  fs::rename(tmp, path);
  if (hook) hook(CheckpointPhase::promoted, path);

  for (const auto& old : existing)
    if (old != path) fs::remove(old, ec);
  for (const auto& bak : detail::list_checkpoints(dir, c.sequence_id, ".json.bak"))
    if (std::find(backups.begin(), backups.end(), bak) == backups.end()) fs::remove(bak, ec);
  if (hook) hook(CheckpointPhase::cleaned, path);
}

struct LoadedCheckpoint {
  Checkpoint checkpoint;
  std::filesystem::path path;
};

/// Newest loadable checkpoint (highest revision) among current files and
/// backups; nullopt when the sequence has none, meaning start from scratch.
inline std::optional<LoadedCheckpoint> find_latest_checkpoint(const std::filesystem::path& dir,
                                                              const std::string& seq) {
  auto files = detail::list_checkpoints(dir, seq, ".json");
  const auto baks = detail::list_checkpoints(dir, seq, ".json.bak");
  files.insert(files.end(), baks.begin(), baks.end());
  if (files.empty()) return std::nullopt;
  std::optional<LoadedCheckpoint> best;
  std::vector<std::string> failures;
  for (const auto& f : files) {
    try {
      Checkpoint c = load_checkpoint(f);
      if (c.sequence_id != seq) throw Error(ErrorCategory::checkpoint, "sequence id mismatch in " + f.string());
      if (!best || c.revision > best->checkpoint.revision) best = LoadedCheckpoint{std::move(c), f};
    } catch (const std::exception& e) {
      spdlog::warn("skipping checkpoint: {}", e.what());
      failures.push_back(e.what());
    }
  }
  if (!best) {
    std::string what = "no loadable checkpoint for '" + seq + "' in " + dir.string();
    for (const auto& f : failures) what += "; " + f;
    throw Error(ErrorCategory::checkpoint, what);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Sequence runner

struct FlashConfig {
  AssocConfig assoc;
  AshConfig ash;
  ChunkerConfig chunker;

  friend bool operator==(const FlashConfig&, const FlashConfig&) = default;
};

struct RunOptions {
  ProcessingMode mode = ProcessingMode::automatic;
  std::optional<std::filesystem::path> checkpoint_dir;
  std::string sequence_id = "seq";
  std::uint64_t rng_seed = 0;
  bool resume = true;
  std::function<void(int)> on_frame_done;  // after frame t (and its checkpoint, if any)
  CheckpointHook checkpoint_hook;
};

struct RunResult {
  MaskletStore masklets;
  ProcessingMode mode_used = ProcessingMode::full;
  bool fell_back = false;
  bool resumed = false;
  std::optional<std::filesystem::path> last_checkpoint;
};

namespace detail {

/// Track boxes follow the propagated masks: each track takes the tight box of
/// its masklet at frame - 1 when that mask is nonempty.
inline void refresh_tracks(AssocState& s, const MaskletStore& store, int frame) {
  for (auto& tr : s.tracks) {
    const auto it = store.find(tr.id);
    if (it == store.end()) continue;
    const auto e = it->second.entries.find(frame - 1);
    if (e == it->second.entries.end() || e->second.mask.empty()) continue;
    tr.last_box = *e->second.mask.tight_box();
    tr.last_seen_frame = frame - 1;
    tr.age = 0;
  }
}

class SequenceRunner {
 public:
  SequenceRunner(std::span<const std::vector<Detection>> detections, int width, int height,
                 const PropagatorBackend& propagator, const FlashConfig& cfg, const RunOptions& opt)
      : dets_(detections), width_(width), height_(height), prop_(propagator), cfg_(cfg), opt_(opt) {
    if (detections.empty()) throw Error(ErrorCategory::invalid_argument, "run_sequence: empty sequence");
    validate(cfg.assoc);
    validate(cfg.ash);
    validate(cfg.chunker);
    last_frame_ = static_cast<int>(detections.size()) - 1;
  }

  RunResult run() {
    std::optional<Checkpoint> resume;
    if (opt_.checkpoint_dir && !opt_.resume) {
      // a fresh run must not leave older revisions around for a later resume
      for (const auto& p : list_checkpoints(*opt_.checkpoint_dir, opt_.sequence_id, "")) {
        std::error_code ec;
        std::filesystem::remove(p, ec);
      }
    }
    if (opt_.checkpoint_dir && opt_.resume) {
      if (auto found = find_latest_checkpoint(*opt_.checkpoint_dir, opt_.sequence_id)) {
        spdlog::info("{}: resuming from {}", opt_.sequence_id, found->path.string());
        revision_ = found->checkpoint.revision + 1;
        last_ckpt_ = found->path;
        resume = std::move(found->checkpoint);
      }
    }
    RunResult result;
    result.resumed = resume.has_value();
    if (resume && resume->finalized) {
      result.masklets = std::move(resume->masklets);
      result.mode_used = resume->mode;
      result.last_checkpoint = last_ckpt_;
      return result;
    }

    const bool resume_chunk = resume && resume->mode == ProcessingMode::chunk;
    if (opt_.mode == ProcessingMode::chunk || (opt_.mode == ProcessingMode::automatic && resume_chunk)) {
      result.masklets = run_chunked(resume_chunk ? std::move(resume) : std::nullopt);
      result.mode_used = ProcessingMode::chunk;
      result.fell_back = opt_.mode == ProcessingMode::automatic;
      result.last_checkpoint = last_ckpt_;
      return result;
    }

    try {
      result.masklets = run_full(resume && resume->mode == ProcessingMode::full ? std::move(resume) : std::nullopt);
      result.mode_used = ProcessingMode::full;
    } catch (const PropagationError& e) {
      if (opt_.mode == ProcessingMode::full) throw;
      spdlog::warn("{}: full processing failed ({}); falling back to chunk mode from frame 0", opt_.sequence_id,
                   e.what());
      Checkpoint marker = blank(ProcessingMode::chunk);
      save(marker, "initial");
      try {
        result.masklets = run_chunked(std::nullopt);
      } catch (const std::exception& e2) {
        throw Error(ErrorCategory::processing,
                    "full and chunk processing both failed for '" + opt_.sequence_id + "': " + e2.what() +
                        "; last checkpoint: " + (last_ckpt_ ? last_ckpt_->string() : std::string("none")));
      }
      result.mode_used = ProcessingMode::chunk;
      result.fell_back = true;
    }
    result.last_checkpoint = last_ckpt_;
    return result;
  }

 private:
  Checkpoint blank(ProcessingMode mode) const {
    Checkpoint c;
    c.sequence_id = opt_.sequence_id;
    c.mode = mode;
    c.rng_seed = opt_.rng_seed;
    return c;
  }

  void save(Checkpoint& c, const std::string& tag) {
    if (!opt_.checkpoint_dir) return;
    c.tag = tag;
    c.revision = revision_++;
    const auto path = checkpoint_path(*opt_.checkpoint_dir, opt_.sequence_id, tag);
    save_checkpoint(c, path, opt_.checkpoint_hook);
    last_ckpt_ = path;
  }

  std::vector<Detection> prepared(int t) const {
    return prepare_detections(dets_[static_cast<std::size_t>(t)], width_, height_, cfg_.assoc);
  }

  /// Associates frame t and propagates its new objects through `end`.
  void step(AssocState& assoc, MaskletStore& store, int t, int end, long long& used) {
    refresh_tracks(assoc, store, t);
    const std::vector<Detection> dets = prepared(t);
    const AssociationResult r = associate_frame(assoc, dets, t, cfg_.assoc);
    if (r.new_objects.empty()) return;
    std::vector<ObjectPrompt> prompts;
    for (const auto& n : r.new_objects) {
      const Detection& d = dets[n.detection];
      prompts.push_back({n.id, d.box, d.class_label, d.confidence});
    }
    propagate_charged(store, prompts, t, end, used);
  }

  void propagate_charged(MaskletStore& store, std::span<const ObjectPrompt> prompts, int t, int end,
                         long long& used) {
    if (cfg_.chunker.budget > 0) {
      std::optional<long long> remaining = cfg_.chunker.budget - used;
      propagate_new_objects(store, prompts, t, end, prop_, cfg_.ash, &remaining);
      used = cfg_.chunker.budget - *remaining;
    } else {
      propagate_new_objects(store, prompts, t, end, prop_, cfg_.ash);
    }
  }

  MaskletStore run_full(std::optional<Checkpoint> resume) {
    Checkpoint st = resume ? std::move(*resume) : blank(ProcessingMode::full);
    if (!resume) save(st, "initial");
    const int interval = cfg_.chunker.checkpoint_interval;
    for (int t = st.last_frame + 1; t <= last_frame_; ++t) {
      step(st.assoc, st.masklets, t, last_frame_, st.budget_used);
      st.last_frame = t;
      if (interval > 0 && (t + 1) % interval == 0 && t != last_frame_) save(st, frame_tag(t));
      if (opt_.on_frame_done) opt_.on_frame_done(t);
    }
    postprocess(st.masklets, cfg_.ash);
    st.finalized = true;
    st.assoc = {};
    save(st, "final");
    return std::move(st.masklets);
  }

  /// One chunk over [s, e], seeded with the stitched masklets alive at s.
  /// Ids are chunk-local; trailing empties are pruned and redundant segments
  /// merged, smoothing waits for the stitched sequence.
  MaskletStore run_chunk(const MaskletStore& stitched, int s, int e) {
    AssocState assoc;
    assoc.last_frame = s - 1;
    MaskletStore store;
    std::vector<ObjectPrompt> seeds;
    for (const auto& [id, m] : stitched) {
      const auto it = m.entries.find(s);
      if (it == m.entries.end() || it->second.mask.count() <= static_cast<std::size_t>(cfg_.ash.epsilon_mask))
        continue;
      const int local = assoc.next_id++;
      const BBox box = *it->second.mask.tight_box();
      seeds.push_back({local, box, m.class_label, it->second.confidence});
      assoc.tracks.push_back({local, box, s, m.class_label, 0});
    }
    long long used = 0;
    if (!seeds.empty()) propagate_charged(store, seeds, s, e, used);
    for (int t = s; t <= e; ++t) {
      step(assoc, store, t, e, used);
      if (opt_.on_frame_done) opt_.on_frame_done(t);
    }
    MaskletStore pruned;
    for (auto& [id, m] : store)
      if (auto kept = remove_trailing_empty(std::move(m), cfg_.ash.epsilon_mask)) pruned.emplace(id, std::move(*kept));
    for (int t = s; t <= e; ++t) merge_redundant_frame(pruned, t, cfg_.ash.tau_merge, cfg_.ash.epsilon_mask);
    return pruned;
  }

  MaskletStore run_chunked(std::optional<Checkpoint> resume) {
    Checkpoint st = resume ? std::move(*resume) : blank(ProcessingMode::chunk);
    std::vector<int> counts;
    for (int t = 0; t <= last_frame_; ++t) counts.push_back(static_cast<int>(prepared(t).size()));
    const ChunkerConfig& cc = cfg_.chunker;
    for (;;) {
      const auto [ps, pe] = st.last_chunk;
      if (pe == last_frame_) break;
      const int s = pe < 0 ? 0 : adjusted_chunk_start(counts, ps, pe, cc);
      const int e = std::min(last_frame_, s + cc.chi - 1);
      MaskletStore b = run_chunk(st.masklets, s, e);
      if (pe < 0) {
        stitch_chunk(st.masklets, std::move(b), {}, st.next_global_id);
      } else {
        std::vector<int> overlap;
        for (int f = s; f <= pe; ++f) overlap.push_back(f);
        merge_chunk_overlap(st.masklets, std::move(b), overlap, cc.tau_overlap, st.next_global_id);
      }
      st.last_chunk = {s, e};
      st.last_frame = e;
      ++st.chunk_index;
      spdlog::debug("{}: chunk {} [{}, {}] done, {} objects", opt_.sequence_id, st.chunk_index, s, e,
                    st.masklets.size());
      if (e != last_frame_) save(st, frame_tag(e));
    }
    postprocess(st.masklets, cfg_.ash);
    st.finalized = true;
    save(st, "final");
    return std::move(st.masklets);
  }

  std::span<const std::vector<Detection>> dets_;
  int width_;
  int height_;
  const PropagatorBackend& prop_;
  const FlashConfig& cfg_;
  const RunOptions& opt_;
  int last_frame_ = 0;
  long long revision_ = 0;
  std::optional<std::filesystem::path> last_ckpt_;
};

}  // namespace detail

/// Per-frame detections -> finalized masklets. Full mode first (unless chunk
/// mode is forced); a propagation failure or exhausted budget restarts the
/// sequence in chunk mode. Resumes from the newest checkpoint when the
/// checkpoint directory holds one for this sequence.
inline RunResult run_sequence(std::span<const std::vector<Detection>> detections, int width, int height,
                              const PropagatorBackend& propagator, const FlashConfig& cfg,
                              const RunOptions& options = {}) {
  return detail::SequenceRunner(detections, width, height, propagator, cfg, options).run();
}

}  // namespace autoannot
