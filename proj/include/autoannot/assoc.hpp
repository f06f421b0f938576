#pragma once

// Online detection-to-track association: box validation, confidence
// rescaling, greedy IoU matching and new-object identification.

#include <algorithm>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "autoannot/backends.hpp"
#include "autoannot/error.hpp"
#include "autoannot/geometry.hpp"

namespace autoannot {

struct Track {
  int id = 0;
  BBox last_box;
  int last_seen_frame = 0;
  std::string class_label;
  int age = 0;  // frames since the last match

  friend bool operator==(const Track&, const Track&) = default;
};

struct AssocConfig {
  double tau_track_det = 0.5;
  double lambda_min = 10.0;
  double lambda_max = 1000.0;
  double margin = 0.5;
  double aspect_min = 0.2;
  double aspect_max = 5.0;
  int track_buffer = 20;
  // Carried for tracker backends; the greedy matcher does not gate on them.
  double track_thresh = 0.6;
  double match_thresh = 0.7;
  bool rescale_confidence = true;

  friend bool operator==(const AssocConfig&, const AssocConfig&) = default;
};

inline void validate(const AssocConfig& c) {
  const auto fail = [](const std::string& f, const std::string& why) {
    throw Error(ErrorCategory::config, "assoc." + f + ": " + why);
  };
  if (!(c.tau_track_det > 0.0 && c.tau_track_det <= 1.0)) fail("tau_track_det", "must be in (0, 1]");
  if (!(c.lambda_min < c.lambda_max)) fail("lambda_min", "must be < lambda_max");
  if (!(c.aspect_min > 0.0 && c.aspect_min <= c.aspect_max)) fail("aspect_min", "need 0 < aspect_min <= aspect_max");
  if (c.margin < 0.0) fail("margin", "must be >= 0");
  if (c.track_buffer < 0) fail("track_buffer", "must be >= 0");
}

enum class BoxVerdict { accepted, bad_size, outside_margin, bad_aspect };

inline const char* to_string(BoxVerdict v) {
  switch (v) {
    case BoxVerdict::accepted: return "accepted";
    case BoxVerdict::bad_size: return "bad_size";
    case BoxVerdict::outside_margin: return "outside_margin";
    case BoxVerdict::bad_aspect: return "bad_aspect";
  }
  return "unknown";
}

inline BoxVerdict validate_box(const BBox& b, double frame_w, double frame_h, const AssocConfig& cfg) {
  const double w = b.width(), h = b.height();
  if (w < cfg.lambda_min || w > cfg.lambda_max || h < cfg.lambda_min || h > cfg.lambda_max)
    return BoxVerdict::bad_size;
  if (b.x1 < cfg.margin || b.y1 < cfg.margin || b.x2 > frame_w - cfg.margin || b.y2 > frame_h - cfg.margin)
    return BoxVerdict::outside_margin;
  const double aspect = w / h;
  if (aspect < cfg.aspect_min || aspect > cfg.aspect_max) return BoxVerdict::bad_aspect;
  return BoxVerdict::accepted;
}

/// Affine map of [min, max] onto [lo, hi]; a constant input maps to the midpoint.
inline std::vector<double> rescale_confidence(std::span<const double> scores, double lo = 0.7, double hi = 0.95) {
  if (scores.empty()) return {};
  const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
  const double range = *mx - *mn;
  std::vector<double> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(range > 0.0 ? lo + (s - *mn) * (hi - lo) / range : (lo + hi) / 2.0);
  return out;
}

/// Tracker state carried from frame to frame (and into checkpoints).
struct AssocState {
  std::vector<Track> tracks;  // live tracks, ascending id
  int next_id = 0;
  int last_frame = -1;

  friend bool operator==(const AssocState&, const AssocState&) = default;
};

struct NewObject {
  std::size_t detection = 0;
  int id = 0;
};

struct AssociationResult {
  std::vector<std::pair<std::size_t, int>> matches;  // (detection index, track id)
  std::vector<NewObject> new_objects;
};

/// Greedy matching in descending IoU (ties: lower track id, then lower
/// detection index). Each track takes at most one detection, and only above
/// tau_track_det. Unmatched detections open tracks with fresh ids in
/// detection order; tracks unmatched for more than track_buffer frames retire.
inline AssociationResult associate_frame(AssocState& state, std::span<const Detection> dets, int frame_index,
                                         const AssocConfig& cfg) {
  if (frame_index <= state.last_frame)
    throw Error(ErrorCategory::invalid_argument, "associate_frame: frame index must increase strictly");
  state.last_frame = frame_index;

  std::vector<std::tuple<double, int, std::size_t, std::size_t>> pairs;  // (iou, track id, det, track slot)
  for (std::size_t t = 0; t < state.tracks.size(); ++t)
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const double v = iou_box(state.tracks[t].last_box, dets[d].box);
      if (v > cfg.tau_track_det) pairs.emplace_back(v, state.tracks[t].id, d, t);
    }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });

  AssociationResult result;
  std::vector<char> det_used(dets.size(), 0), track_used(state.tracks.size(), 0);
  for (const auto& [v, id, d, t] : pairs) {
    if (det_used[d] || track_used[t]) continue;
    det_used[d] = track_used[t] = 1;
    result.matches.emplace_back(d, id);
    Track& tr = state.tracks[t];
    tr.last_box = dets[d].box;
    tr.last_seen_frame = frame_index;
    tr.age = 0;
  }
  std::sort(result.matches.begin(), result.matches.end());

  for (std::size_t t = 0; t < state.tracks.size(); ++t)
    if (!track_used[t]) state.tracks[t].age = frame_index - state.tracks[t].last_seen_frame;
  std::erase_if(state.tracks, [&](const Track& tr) { return tr.age > cfg.track_buffer; });

  for (std::size_t d = 0; d < dets.size(); ++d) {
    if (det_used[d]) continue;
    const int id = state.next_id++;
    result.new_objects.push_back({d, id});
    state.tracks.push_back({id, dets[d].box, frame_index, dets[d].class_label, 0});
  }
  return result;
}

/// Drops detections failing validate_box and, when enabled, rescales the
/// survivors' confidences onto [0.7, 0.95].
inline std::vector<Detection> prepare_detections(std::span<const Detection> dets, int frame_w, int frame_h,
                                                 const AssocConfig& cfg) {
  std::vector<Detection> out;
  for (const auto& d : dets)
    if (validate_box(d.box, frame_w, frame_h, cfg) == BoxVerdict::accepted) out.push_back(d);
  if (cfg.rescale_confidence && !out.empty()) {
    std::vector<double> c;
    for (const auto& d : out) c.push_back(d.confidence);
    const auto r = rescale_confidence(c);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].confidence = r[i];
  }
  return out;
}

}  // namespace autoannot
