#pragma once

// CLEAR-MOT style evaluation: per-frame greedy matching, precision/recall,
// MOTA, ID switches, and IDF1 over an optimal global identity assignment.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "autoannot/error.hpp"
#include "autoannot/geometry.hpp"

namespace autoannot {

struct TrackedBox {
  int id = 0;
  BBox box;
  std::string class_label;

  friend bool operator==(const TrackedBox&, const TrackedBox&) = default;
};

struct FrameBoxes {
  int frame = 0;
  std::vector<TrackedBox> boxes;

  friend bool operator==(const FrameBoxes&, const FrameBoxes&) = default;
};

using TrackSequence = std::vector<FrameBoxes>;

struct FrameMatch {
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (prediction, ground truth)
  std::vector<std::size_t> false_positives;                  // prediction indices
  std::vector<std::size_t> false_negatives;                  // ground-truth indices
};

/// Greedy descending-IoU one-to-one matching; pairs need IoU >= threshold.
/// Ties resolve toward the lower ground-truth index, then prediction index.
inline FrameMatch match_frame(std::span<const TrackedBox> pred, std::span<const TrackedBox> gt,
                              double iou_threshold = 0.5) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  for (std::size_t g = 0; g < gt.size(); ++g)
    for (std::size_t p = 0; p < pred.size(); ++p) {
      const double v = iou_box(pred[p].box, gt[g].box);
      if (v >= iou_threshold && v > 0.0) cand.emplace_back(v, g, p);
    }
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::tie(std::get<1>(a), std::get<2>(a)) < std::tie(std::get<1>(b), std::get<2>(b));
  });
  FrameMatch out;
  std::vector<char> pu(pred.size(), 0), gu(gt.size(), 0);
  for (const auto& [v, g, p] : cand) {
    if (pu[p] || gu[g]) continue;
    pu[p] = gu[g] = 1;
    out.matches.emplace_back(p, g);
  }
  std::sort(out.matches.begin(), out.matches.end());
  for (std::size_t p = 0; p < pred.size(); ++p)
    if (!pu[p]) out.false_positives.push_back(p);
  for (std::size_t g = 0; g < gt.size(); ++g)
    if (!gu[g]) out.false_negatives.push_back(g);
  return out;
}

struct MetricCounts {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long idsw = 0;
  long long num_gt = 0;
  long long num_pred = 0;
  long long idtp = 0;

  MetricCounts& operator+=(const MetricCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    idsw += o.idsw;
    num_gt += o.num_gt;
    num_pred += o.num_pred;
    idtp += o.idtp;
    return *this;
  }
  friend bool operator==(const MetricCounts&, const MetricCounts&) = default;
};

struct MetricsSummary {
  MetricCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double mota = 0.0;
  double idf1 = 0.0;
};

inline MetricsSummary summarize(const MetricCounts& c) {
  MetricsSummary s{c};
  s.precision = (c.tp + c.fp) > 0 ? double(c.tp) / double(c.tp + c.fp) : 0.0;
  s.recall = (c.tp + c.fn) > 0 ? double(c.tp) / double(c.tp + c.fn) : 0.0;
  s.mota = 1.0 - double(c.fp + c.fn + c.idsw) / double(std::max<long long>(c.num_gt, 1));
  s.idf1 = (c.num_gt + c.num_pred) > 0 ? 2.0 * double(c.idtp) / double(c.num_gt + c.num_pred) : 1.0;
  return s;
}

struct EvalReport {
  std::string sequence;
  MetricsSummary overall;
  std::map<std::string, MetricsSummary> per_class;  // filled when labels are present
};

namespace detail {

/// Maximum-weight assignment by bitmask DP over the columns; exact.
inline long long max_assignment_dp(const std::vector<std::vector<long long>>& w, std::size_t cols) {
  const std::size_t full = std::size_t{1} << cols;
  std::vector<long long> best(full, std::numeric_limits<long long>::min());
  best[0] = 0;
  for (const auto& row : w) {
    std::vector<long long> next = best;  // row left unassigned
    for (std::size_t mask = 0; mask < full; ++mask) {
      if (best[mask] == std::numeric_limits<long long>::min()) continue;
      for (std::size_t c = 0; c < cols; ++c) {
        if (mask & (std::size_t{1} << c)) continue;
        const std::size_t nm = mask | (std::size_t{1} << c);
        next[nm] = std::max(next[nm], best[mask] + row[c]);
      }
    }
    best = std::move(next);
  }
  return *std::max_element(best.begin(), best.end());
}

/// Maximum-weight assignment via the Hungarian method (O(n^3)) on the
/// zero-padded square matrix.
inline long long max_assignment_hungarian(const std::vector<std::vector<long long>>& w, std::size_t cols) {
  const std::size_t n = std::max(w.size(), cols);
  if (n == 0) return 0;
  long long wmax = 0;
  for (const auto& r : w)
    for (long long v : r) wmax = std::max(wmax, v);
  // cost = wmax - weight, minimized; 1-based arrays as in the classic formulation.
  const auto cost = [&](std::size_t i, std::size_t j) -> long long {
    const long long v = (i < w.size() && j < cols) ? w[i][j] : 0;
    return wmax - v;
  };
  constexpr long long kInf = std::numeric_limits<long long>::max() / 4;
  std::vector<long long> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<long long> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      long long delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const long long cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  long long total = 0;
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] - 1 < w.size() && j - 1 < cols) total += w[p[j] - 1][j - 1];
  return total;
}

inline long long max_assignment(std::vector<std::vector<long long>> w, std::size_t cols) {
  const std::size_t rows = w.size();
  if (rows == 0 || cols == 0) return 0;
  if (std::min(rows, cols) <= 12) {
    if (cols > rows) {  // run the DP over the smaller side
      std::vector<std::vector<long long>> t(cols, std::vector<long long>(rows));
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) t[j][i] = w[i][j];
      return max_assignment_dp(t, rows);
    }
    return max_assignment_dp(w, cols);
  }
  return max_assignment_hungarian(w, cols);
}

inline std::vector<TrackedBox> filter_label(std::span<const TrackedBox> boxes, const std::string& label) {
  std::vector<TrackedBox> out;
  for (const auto& b : boxes)
    if (b.class_label == label) out.push_back(b);
  return out;
}

}  // namespace detail

/// Counts for frame-aligned sequences; `label` restricts both sides to one class.
inline MetricCounts evaluate_counts(const TrackSequence& pred, const TrackSequence& gt, double iou_threshold,
                                    const std::string* label = nullptr) {
  if (pred.size() != gt.size())
    throw Error(ErrorCategory::invalid_argument, "evaluate: prediction and ground truth cover different frame counts");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i].frame != gt[i].frame)
      throw Error(ErrorCategory::invalid_argument,
                  "evaluate: frame mismatch at position " + std::to_string(i) + " (" + std::to_string(pred[i].frame) +
                      " vs " + std::to_string(gt[i].frame) + ")");

  MetricCounts c;
  std::map<int, int> last_match;  // gt id -> pred id of its previous matched frame
  std::map<int, std::size_t> gid, pid;
  std::map<std::pair<int, int>, long long> pair_hits;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto p = label ? detail::filter_label(pred[i].boxes, *label) : pred[i].boxes;
    const auto g = label ? detail::filter_label(gt[i].boxes, *label) : gt[i].boxes;
    c.num_gt += static_cast<long long>(g.size());
    c.num_pred += static_cast<long long>(p.size());
    const FrameMatch m = match_frame(p, g, iou_threshold);
    c.tp += static_cast<long long>(m.matches.size());
    c.fp += static_cast<long long>(m.false_positives.size());
    c.fn += static_cast<long long>(m.false_negatives.size());
    for (const auto& [pi, gi] : m.matches) {
      const int gt_id = g[gi].id, pred_id = p[pi].id;
      auto it = last_match.find(gt_id);
      if (it != last_match.end() && it->second != pred_id) ++c.idsw;
      last_match[gt_id] = pred_id;
    }
    for (const auto& gb : g) gid.emplace(gb.id, gid.size());
    for (const auto& pb : p) pid.emplace(pb.id, pid.size());
    for (const auto& gb : g)
      for (const auto& pb : p)
        if (iou_box(gb.box, pb.box) >= iou_threshold && iou_box(gb.box, pb.box) > 0.0) ++pair_hits[{gb.id, pb.id}];
  }
  std::vector<std::vector<long long>> w(gid.size(), std::vector<long long>(pid.size(), 0));
  for (const auto& [k, hits] : pair_hits) w[gid.at(k.first)][pid.at(k.second)] = hits;
  c.idtp = detail::max_assignment(std::move(w), pid.size());
  return c;
}

inline EvalReport evaluate(const TrackSequence& pred, const TrackSequence& gt, double iou_threshold = 0.5,
                           std::string sequence = {}) {
  EvalReport r;
  r.sequence = std::move(sequence);
  r.overall = summarize(evaluate_counts(pred, gt, iou_threshold));
  std::set<std::string> labels;
  for (const auto* seq : {&pred, &gt})
    for (const auto& f : *seq)
      for (const auto& b : f.boxes)
        if (!b.class_label.empty()) labels.insert(b.class_label);
  for (const auto& l : labels) r.per_class[l] = summarize(evaluate_counts(pred, gt, iou_threshold, &l));
  return r;
}

/// Dataset-level report: counts summed over sequences, ratios recomputed.
inline EvalReport aggregate(std::span<const EvalReport> reports, std::string name = "ALL") {
  EvalReport r;
  r.sequence = std::move(name);
  MetricCounts total;
  std::map<std::string, MetricCounts> per_class;
  for (const auto& x : reports) {
    total += x.overall.counts;
    for (const auto& [l, s] : x.per_class) per_class[l] += s.counts;
  }
  r.overall = summarize(total);
  for (const auto& [l, c] : per_class) r.per_class[l] = summarize(c);
  return r;
}

/// Flat `sequence,metric,value` rows, header first.
inline std::string to_csv(std::span<const EvalReport> reports) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << "sequence,metric,value\n";
  const auto rows = [&](const std::string& seq, const MetricsSummary& s) {
    os << seq << ",tp," << s.counts.tp << "\n"
       << seq << ",fp," << s.counts.fp << "\n"
       << seq << ",fn," << s.counts.fn << "\n"
       << seq << ",idsw," << s.counts.idsw << "\n"
       << seq << ",precision," << s.precision << "\n"
       << seq << ",recall," << s.recall << "\n"
       << seq << ",mota," << s.mota << "\n"
       << seq << ",idf1," << s.idf1 << "\n";
  };
  for (const auto& r : reports) {
    rows(r.sequence, r.overall);
    for (const auto& [l, s] : r.per_class) rows(r.sequence + "/" + l, s);
  }
  return os.str();
}

}  // namespace autoannot
