#pragma once

// Annotation and segmentation handler: batched mask propagation of new
// objects, then trailing-empty pruning, polygon smoothing and per-frame
// merging of redundant segments.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "autoannot/backends.hpp"
#include "autoannot/error.hpp"
#include "autoannot/geometry.hpp"

namespace autoannot {

struct AshConfig {
  int beta = 5;
  double alpha = 0.2;
  double tau_merge = 0.3;
  int epsilon_mask = 3;
  int resample_n = 64;
  bool adaptive_smoothing = false;

  friend bool operator==(const AshConfig&, const AshConfig&) = default;
};

inline void validate(const AshConfig& c) {
  const auto fail = [](const std::string& f, const std::string& why) {
    throw Error(ErrorCategory::config, "ash." + f + ": " + why);
  };
  if (c.beta < 1) fail("beta", "must be >= 1");
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) fail("alpha", "must be in [0, 1]");
  if (!(c.tau_merge > 0.0 && c.tau_merge < 1.0)) fail("tau_merge", "must be in (0, 1)");
  if (c.epsilon_mask < 1) fail("epsilon_mask", "must be >= 1");
  if (c.resample_n < 3) fail("resample_n", "must be >= 3");
}

struct MaskletEntry {
  BinaryMask mask;
  std::optional<Polygon> polygon;  // absent when the mask is below epsilon_mask
  BBox box;                        // box of the unsmoothed contour when present
  double confidence = 0.0;

  friend bool operator==(const MaskletEntry&, const MaskletEntry&) = default;
};

inline MaskletEntry make_entry(BinaryMask mask, double confidence, int epsilon_mask) {
  MaskletEntry e{std::move(mask), std::nullopt, {}, confidence};
  e.polygon = mask_to_polygon(e.mask, static_cast<std::size_t>(epsilon_mask));
  if (e.polygon) e.box = polygon_to_bbox(*e.polygon);
  return e;
}

struct Masklet {
  int object_id = 0;
  std::string class_label;
  std::map<int, MaskletEntry> entries;  // frame -> entry

  friend bool operator==(const Masklet&, const Masklet&) = default;
};

using MaskletStore = std::map<int, Masklet>;

/// Propagation failure; names the batch so callers can fall back.
class PropagationError : public Error {
 public:
  PropagationError(int frame, std::size_t batch, std::vector<int> ids, const std::string& what)
      : Error(ErrorCategory::propagation, what), frame_(frame), batch_(batch), ids_(std::move(ids)) {}

  int frame() const { return frame_; }
  std::size_t batch() const { return batch_; }
  const std::vector<int>& object_ids() const { return ids_; }

 private:
  int frame_;
  std::size_t batch_;
  std::vector<int> ids_;
};

template <class T>
std::vector<std::vector<T>> partition_batches(std::span<const T> items, int beta) {
  if (beta < 1) throw Error(ErrorCategory::invalid_argument, "batch size must be >= 1");
  std::vector<std::vector<T>> out;
  for (std::size_t i = 0; i < items.size(); i += static_cast<std::size_t>(beta)) {
    const std::size_t end = std::min(items.size(), i + static_cast<std::size_t>(beta));
    out.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(i), items.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

/// One masklet per prompt covering frames start..end.
inline std::vector<Masklet> propagate_batch(std::span<const ObjectPrompt> batch, int start_frame, int end_frame,
                                            const PropagatorBackend& propagator, const AshConfig& cfg,
                                            std::size_t batch_index = 0) {
  if (end_frame < start_frame) throw Error(ErrorCategory::invalid_argument, "propagate_batch: start > end");
  std::vector<int> ids;
  for (const auto& p : batch) ids.push_back(p.object_id);
  std::vector<std::vector<BinaryMask>> masks;
  try {
    masks = propagator.propagate(batch, start_frame, end_frame);
  } catch (const std::exception& e) {
    throw PropagationError(start_frame, batch_index, ids,
                           "propagation of batch " + std::to_string(batch_index) + " at frame " +
                               std::to_string(start_frame) + " failed: " + e.what());
  }
  const std::size_t span = static_cast<std::size_t>(end_frame - start_frame + 1);
  if (masks.size() != batch.size() ||
      std::any_of(masks.begin(), masks.end(), [&](const auto& m) { return m.size() != span; }))
    throw PropagationError(start_frame, batch_index, ids, "propagator returned a malformed batch");

  std::vector<Masklet> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Masklet m{batch[i].object_id, batch[i].class_label, {}};
    for (std::size_t k = 0; k < span; ++k)
      m.entries.emplace(start_frame + static_cast<int>(k),
                        make_entry(std::move(masks[i][k]), batch[i].confidence, cfg.epsilon_mask));
    out.push_back(std::move(m));
  }
  return out;
}

/// Truncates after the last frame whose mask has more than epsilon pixels;
/// nullopt when no frame qualifies.
inline std::optional<Masklet> remove_trailing_empty(Masklet m, int epsilon_mask) {
  std::optional<int> last;
  for (const auto& [f, e] : m.entries)
    if (e.mask.count() > static_cast<std::size_t>(epsilon_mask)) last = f;
  if (!last) return std::nullopt;
  m.entries.erase(m.entries.upper_bound(*last), m.entries.end());
  return m;
}

namespace detail {

/// Rotates `prev` so that, after both are centered on their centroids, its
/// first vertex is the one nearest to `cur`'s first vertex.
inline Polygon align_start(const Polygon& prev, const Polygon& cur) {
  const Point cp = centroid(prev), cc = centroid(cur);
  const double tx = cur.vertices[0].x - cc.x, ty = cur.vertices[0].y - cc.y;
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < prev.vertices.size(); ++i) {
    const double dx = prev.vertices[i].x - cp.x - tx, dy = prev.vertices[i].y - cp.y - ty;
    const double d = dx * dx + dy * dy;
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  Polygon out = prev;
  std::rotate(out.vertices.begin(), out.vertices.begin() + static_cast<std::ptrdiff_t>(best), out.vertices.end());
  return out;
}

}  // namespace detail

/// Recursive vertex-wise average over consecutive frames:
/// smoothed_t = alpha * P_t + (1 - alpha) * smoothed_{t-1}, both resampled to
/// resample_n vertices. The first frame of every run is left as is; a missing
/// frame or polygon restarts the recursion. alpha == 1 is the identity. Boxes
/// keep following the masks.
inline Masklet smooth_polygons(Masklet m, double alpha, int resample_n, bool adaptive = false) {
  if (alpha >= 1.0) return m;
  std::optional<Polygon> prev_smoothed, prev_raw;
  int prev_frame = 0;
  for (auto& [f, e] : m.entries) {
    if (!e.polygon || perimeter(*e.polygon) <= 0.0) {
      prev_smoothed.reset();
      continue;
    }
    const Polygon raw = *e.polygon;
    if (prev_smoothed && f == prev_frame + 1) {
      double a = alpha;
      if (adaptive) {
        const Point c0 = centroid(*prev_raw), c1 = centroid(raw);
        a = std::min(1.0, alpha * (1.0 + std::hypot(c1.x - c0.x, c1.y - c0.y)));
      }
      const Polygon cur = resample_polygon(raw, static_cast<std::size_t>(resample_n));
      const Polygon old = detail::align_start(resample_polygon(*prev_smoothed, static_cast<std::size_t>(resample_n)), cur);
      Polygon out;
      out.vertices.reserve(cur.size());
      for (std::size_t i = 0; i < cur.size(); ++i)
        out.vertices.push_back({a * cur.vertices[i].x + (1.0 - a) * old.vertices[i].x,
                                a * cur.vertices[i].y + (1.0 - a) * old.vertices[i].y});
      e.polygon = out;
    }
    prev_smoothed = e.polygon;
    prev_raw = raw;
    prev_frame = f;
  }
  return m;
}

/// Merges entries at frame t whose polygon IoU exceeds tau_merge, transitively
/// and until no such pair is left. The lowest id absorbs the others (mask
/// union, polygon and box re-derived); masklets left empty are dropped.
inline void merge_redundant_frame(MaskletStore& store, int frame, double tau_merge, int epsilon_mask) {
  for (;;) {
    std::vector<int> ids;
    std::vector<BinaryMask> raster;
    for (auto& [id, m] : store) {
      auto it = m.entries.find(frame);
      if (it == m.entries.end() || !it->second.polygon) continue;
      ids.push_back(id);
      raster.push_back(rasterize(*it->second.polygon, it->second.mask.width(), it->second.mask.height()));
    }
    const std::size_t n = ids.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    const auto find = [&](std::size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      const BBox bi = store.at(ids[i]).entries.at(frame).box;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (intersection_area(bi, store.at(ids[j]).entries.at(frame).box) <= 0.0) continue;
        if (iou_mask(raster[i], raster[j]) > tau_merge) {
          const std::size_t ri = find(i), rj = find(j);
          if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
          any = true;
        }
      }
    }
    if (!any) break;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t root = find(i);
      if (root == i) continue;
      // ids ascend, so the root carries the lowest id of its group.
      MaskletEntry& target = store.at(ids[root]).entries.at(frame);
      auto& src_entries = store.at(ids[i]).entries;
      const MaskletEntry& src = src_entries.at(frame);
      BinaryMask u = target.mask.united(src.mask);
      const double conf = std::max(target.confidence, src.confidence);
      target = make_entry(std::move(u), conf, epsilon_mask);
      src_entries.erase(frame);
    }
  }
  std::erase_if(store, [](const auto& kv) { return kv.second.entries.empty(); });
}

/// Prune -> smooth -> merge, in that order.
inline void postprocess(MaskletStore& store, const AshConfig& cfg) {
  MaskletStore pruned;
  for (auto& [id, m] : store) {
    if (auto kept = remove_trailing_empty(std::move(m), cfg.epsilon_mask))
      pruned.emplace(id, smooth_polygons(std::move(*kept), cfg.alpha, cfg.resample_n, cfg.adaptive_smoothing));
  }
  store = std::move(pruned);
  std::set<int> frames;
  for (const auto& [id, m] : store)
    for (const auto& [f, e] : m.entries) frames.insert(f);
  for (int f : frames) merge_redundant_frame(store, f, cfg.tau_merge, cfg.epsilon_mask);
}

/// Propagates the new objects of frame t through end_frame in batches of beta
/// and adds the masklets to the store. `budget` (frame x object units), when
/// given, is charged before each batch.
inline void propagate_new_objects(MaskletStore& store, std::span<const ObjectPrompt> prompts, int frame,
                                  int end_frame, const PropagatorBackend& propagator, const AshConfig& cfg,
                                  std::optional<long long>* budget = nullptr) {
  std::size_t index = 0;
  for (const auto& batch : partition_batches(prompts, cfg.beta)) {
    if (budget && budget->has_value()) {
      const long long cost = static_cast<long long>(batch.size()) * (end_frame - frame + 1);
      if (**budget < cost) {
        std::vector<int> ids;
        for (const auto& p : batch) ids.push_back(p.object_id);
        throw PropagationError(frame, index, ids, "frame x object budget exceeded at frame " + std::to_string(frame));
      }
      **budget -= cost;
    }
    for (auto& m : propagate_batch(batch, frame, end_frame, propagator, cfg, index)) {
      const int id = m.object_id;
      store.insert_or_assign(id, std::move(m));
    }
    ++index;
  }
}

/// New objects per frame -> finalized masklets over [first_frame, last_frame].
inline MaskletStore run_ash(const std::map<int, std::vector<ObjectPrompt>>& new_objects, int first_frame,
                            int last_frame, const PropagatorBackend& propagator, const AshConfig& cfg) {
  MaskletStore store;
  for (const auto& [frame, prompts] : new_objects) {
    if (frame < first_frame || frame > last_frame || prompts.empty()) continue;
    propagate_new_objects(store, prompts, frame, last_frame, propagator, cfg);
  }
  postprocess(store, cfg);
  return store;
}

}  // namespace autoannot
