#pragma once

// Detection verification: area filtering, center-point DBSCAN into ROIs,
// per-frame dynamic confidence thresholds, sliced ROI re-detection and the
// dual IoU/confidence accept rule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <spdlog/spdlog.h>

#include "autoannot/backends.hpp"
#include "autoannot/error.hpp"
#include "autoannot/geometry.hpp"

namespace autoannot {

enum class ThresholdMethod { mean_std, kmeans, kmeans_mean_std, double_kmeans };

inline const char* to_string(ThresholdMethod m) {
  switch (m) {
    case ThresholdMethod::mean_std: return "mean_std";
    case ThresholdMethod::kmeans: return "kmeans";
    case ThresholdMethod::kmeans_mean_std: return "kmeans_mean_std";
    case ThresholdMethod::double_kmeans: return "double_kmeans";
  }
  return "mean_std";
}

inline ThresholdMethod parse_threshold_method(std::string_view s) {
  if (s == "mean_std") return ThresholdMethod::mean_std;
  if (s == "kmeans") return ThresholdMethod::kmeans;
  if (s == "kmeans_mean_std") return ThresholdMethod::kmeans_mean_std;
  if (s == "double_kmeans") return ThresholdMethod::double_kmeans;
  throw Error(ErrorCategory::config, "unknown threshold_method '" + std::string(s) + "'");
}

struct SmartOdConfig {
  double theta_c = 0.001;  // detector confidence
  double theta_i = 0.1;    // detector IoU
  double theta_n = 0.1;    // NMS
  double theta_v = 0.03;   // verification IoU
  double theta_min_area = 0.0008;
  double theta_max_area = 0.20;
  double epsilon_dbscan = 100.0;  // px
  int mu_dbscan = 1;
  double theta_min = 0.1;  // dynamic threshold floor
  ThresholdMethod threshold_method = ThresholdMethod::kmeans_mean_std;
  double slice_size = 256.0;
  double slice_overlap = 0.2;
  bool verification = true;  // false: accept everything that survives the area filter
  MaskGeneratorParams mask_generator;

  friend bool operator==(const SmartOdConfig&, const SmartOdConfig&) = default;
};

inline void validate(const SmartOdConfig& c) {
  const auto fail = [](const std::string& f, const std::string& why) {
    throw Error(ErrorCategory::config, "smart_od." + f + ": " + why);
  };
  if (!(c.theta_min_area >= 0.0 && c.theta_min_area < c.theta_max_area && c.theta_max_area <= 1.0))
    fail("theta_min_area", "need 0 <= theta_min_area < theta_max_area <= 1");
  if (!(c.epsilon_dbscan > 0.0)) fail("epsilon_dbscan", "must be > 0");
  if (c.mu_dbscan < 1) fail("mu_dbscan", "must be >= 1");
  if (!(c.slice_overlap >= 0.0 && c.slice_overlap < 1.0)) fail("slice_overlap", "must be in [0, 1)");
  if (!(c.slice_size >= 1.0)) fail("slice_size", "must be >= 1");
  if (!(c.theta_min >= 0.0 && c.theta_min <= 1.0)) fail("theta_min", "must be in [0, 1]");
  for (auto [name, v] : {std::pair{"theta_c", c.theta_c}, {"theta_i", c.theta_i}, {"theta_n", c.theta_n},
                         {"theta_v", c.theta_v}})
    if (!(v >= 0.0 && v <= 1.0)) fail(name, "must be in [0, 1]");
}

/// Keeps detections with theta_min_area < area / frame_area < theta_max_area.
inline std::vector<Detection> filter_area_ratio(std::span<const Detection> dets, double frame_area,
                                                const SmartOdConfig& cfg) {
  if (!(frame_area > 0.0)) throw Error(ErrorCategory::invalid_argument, "frame_area must be > 0");
  std::vector<Detection> out;
  for (const auto& d : dets) {
    const double r = d.box.area() / frame_area;
    if (cfg.theta_min_area < r && r < cfg.theta_max_area) out.push_back(d);
  }
  return out;
}

struct Roi {
  BBox box;
  std::vector<std::size_t> members;  // indices into the clustered detection list
};

/// DBSCAN over box centers (Euclidean, radius epsilon, min samples mu counting
/// the point itself). Each cluster becomes one ROI spanning its members; noise
/// points get no ROI.
inline std::vector<Roi> cluster_and_build_rois(std::span<const Detection> dets, const SmartOdConfig& cfg) {
  const std::size_t n = dets.size();
  std::vector<Point> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = dets[i].box.center();
  const double eps2 = cfg.epsilon_dbscan * cfg.epsilon_dbscan;
  const auto neighbours = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = c[i].x - c[j].x, dy = c[i].y - c[j].y;
      if (dx * dx + dy * dy <= eps2) out.push_back(j);
    }
    return out;
  };

  constexpr int kUnvisited = -2, kNoise = -1;
  std::vector<int> label(n, kUnvisited);
  int clusters = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    std::vector<std::size_t> seeds = neighbours(i);
    if (seeds.size() < static_cast<std::size_t>(cfg.mu_dbscan)) {
      label[i] = kNoise;
      continue;
    }
    const int id = clusters++;
    label[i] = id;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const std::size_t j = seeds[k];
      if (label[j] == kNoise) label[j] = id;  // border point
      if (label[j] != kUnvisited) continue;
      label[j] = id;
      std::vector<std::size_t> more = neighbours(j);
      if (more.size() >= static_cast<std::size_t>(cfg.mu_dbscan)) seeds.insert(seeds.end(), more.begin(), more.end());
    }
  }

  std::vector<Roi> rois(static_cast<std::size_t>(clusters));
  for (std::size_t i = 0; i < n; ++i)
    if (label[i] >= 0) rois[static_cast<std::size_t>(label[i])].members.push_back(i);
  for (auto& r : rois) {
    std::vector<BBox> boxes;
    for (auto m : r.members) boxes.push_back(dets[m].box);
    r.box = envelope(boxes);
  }
  return rois;
}

namespace detail {

/// Exact 1-D k-means on sorted values by dynamic programming over split
/// points. Returns the start index of each of the k clusters. Among equal
/// optima the earliest split points win.
inline std::vector<std::size_t> kmeans1d_splits(std::span<const double> sorted, std::size_t k) {
  const std::size_t n = sorted.size();
  std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    s1[i + 1] = s1[i] + sorted[i];
    s2[i + 1] = s2[i] + sorted[i] * sorted[i];
  }
  const auto sse = [&](std::size_t a, std::size_t b) {  // [a, b)
    const double cnt = double(b - a);
    const double sum = s1[b] - s1[a];
    return std::max(0.0, (s2[b] - s2[a]) - sum * sum / cnt);
  };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // cost[m][j]: best SSE of the first j values in m+1 clusters.
  std::vector<std::vector<double>> cost(k, std::vector<double>(n + 1, kInf));
  std::vector<std::vector<std::size_t>> arg(k, std::vector<std::size_t>(n + 1, 0));
  for (std::size_t j = 1; j <= n; ++j) cost[0][j] = sse(0, j);
  for (std::size_t m = 1; m < k; ++m) {
    for (std::size_t j = m + 1; j <= n; ++j) {
      for (std::size_t i = m; i < j; ++i) {
        const double v = cost[m - 1][i] + sse(i, j);
        if (v < cost[m][j]) {
          cost[m][j] = v;
          arg[m][j] = i;
        }
      }
    }
  }
  std::vector<std::size_t> starts(k, 0);
  std::size_t j = n;
  for (std::size_t m = k - 1; m >= 1; --m) {
    starts[m] = arg[m][j];
    j = starts[m];
  }
  return starts;
}

inline double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double pop_std(std::span<const double> v) {
  const double mu = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace detail

/// Per-frame confidence cutoff, floored at theta_min and capped at 1.
inline double dynamic_threshold(std::span<const double> scores, ThresholdMethod method, double theta_min) {
  if (scores.empty()) throw Error(ErrorCategory::invalid_argument, "dynamic_threshold needs at least one score");
  std::vector<double> s(scores.begin(), scores.end());
  std::sort(s.begin(), s.end());
  const auto mean_std = [&] { return detail::mean_of(s) - detail::pop_std(s); };

  double theta = 0.0;
  // Identical scores carry no separation; every method would return the
  // score itself and the strict accept rule would drop the whole frame.
  if (s.front() == s.back()) return std::clamp(theta_min, 0.0, 1.0);
  switch (method) {
    case ThresholdMethod::mean_std:
      theta = mean_std();
      break;
    case ThresholdMethod::kmeans:
    case ThresholdMethod::kmeans_mean_std: {
      if (s.size() < 3) {
        spdlog::debug("dynamic_threshold: {} scores < 3 clusters, falling back to mean_std", s.size());
        theta = mean_std();
        break;
      }
      const auto starts = detail::kmeans1d_splits(s, 3);
      if (method == ThresholdMethod::kmeans) {
        theta = s[starts[1]];  // smallest score of the top two clusters
      } else {
        const std::span<const double> low(s.data(), starts[1]);
        theta = detail::mean_of(low) + 2.0 * detail::pop_std(low);
      }
      break;
    }
    case ThresholdMethod::double_kmeans: {
      if (s.size() < 2) {
        spdlog::debug("dynamic_threshold: {} scores < 2 clusters, falling back to mean_std", s.size());
        theta = mean_std();
        break;
      }
      const std::size_t low_n = detail::kmeans1d_splits(s, 2)[1];
      if (low_n < 2) {
        theta = s[0];
        break;
      }
      const std::size_t lowest_n = detail::kmeans1d_splits(std::span<const double>(s.data(), low_n), 2)[1];
      theta = s[lowest_n - 1];  // largest score of the lowest sub-cluster
      break;
    }
  }
  return std::clamp(std::max(theta, theta_min), 0.0, 1.0);
}

/// Greedy class-agnostic NMS in descending confidence; suppresses IoU > threshold.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  std::vector<Detection> kept;
  for (auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                        [&](const Detection& k) { return iou_box(k.box, d.box) > iou_threshold; });
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

/// Overlapping tiles of side `slice` covering `region`; the last tile in each
/// direction is aligned to the region's far edge. A region smaller than a
/// tile is its own single tile.
inline std::vector<BBox> slice_grid(const BBox& region, double slice, double overlap) {
  const auto starts = [&](double lo, double hi) {
    std::vector<double> out;
    if (hi - lo <= slice) {
      out.push_back(lo);
      return out;
    }
    const double stride = std::max(1.0, slice * (1.0 - overlap));
    for (double x = lo; x + slice < hi; x += stride) out.push_back(x);
    out.push_back(hi - slice);
    return out;
  };
  std::vector<BBox> tiles;
  for (double y : starts(region.y1, region.y2))
    for (double x : starts(region.x1, region.x2))
      tiles.push_back({x, y, std::min(x + slice, region.x2), std::min(y + slice, region.y2)});
  return tiles;
}

/// Sliced re-detection of an ROI, merged by NMS at theta_n.
inline std::vector<Detection> sliced_predictions(const DetectorBackend& detector, int frame_index, const BBox& roi,
                                                 const SmartOdConfig& cfg) {
  const DetectorParams params{cfg.theta_c, cfg.theta_i, cfg.theta_n};
  std::vector<Detection> all;
  for (const auto& tile : slice_grid(roi, cfg.slice_size, cfg.slice_overlap)) {
    auto part = detector.detect(frame_index, tile, params);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return nms(std::move(all), cfg.theta_n);
}

/// Indices (into `dets`) of ROI members with max IoU to a sliced prediction
/// above theta_v and confidence above theta_final. Both comparisons strict.
inline std::vector<std::size_t> verify_roi(const Roi& roi, std::span<const Detection> dets,
                                           std::span<const Detection> sliced, double theta_final,
                                           const SmartOdConfig& cfg) {
  std::vector<std::size_t> accepted;
  for (auto idx : roi.members) {
    const Detection& d = dets[idx];
    double best = 0.0;
    for (const auto& p : sliced) best = std::max(best, iou_box(d.box, p.box));
    if (best > cfg.theta_v && d.confidence > theta_final) accepted.push_back(idx);
  }
  return accepted;
}

/// detect -> area filter -> ROIs -> dynamic threshold -> per-ROI verification.
/// Returns accepted detections in detection order with original confidences.
inline std::vector<Detection> run_smart_od(const DetectorBackend& detector, int frame_index,
                                           const SmartOdConfig& cfg) {
  const BBox frame{0.0, 0.0, double(detector.frame_width()), double(detector.frame_height())};
  const DetectorParams params{cfg.theta_c, cfg.theta_i, cfg.theta_n};
  const std::vector<Detection> raw = detector.detect(frame_index, frame, params);
  std::vector<Detection> dets = filter_area_ratio(raw, frame.area(), cfg);
  if (!cfg.verification || dets.empty()) return dets;

  const std::vector<Roi> rois = cluster_and_build_rois(dets, cfg);
  std::vector<double> confs;
  confs.reserve(dets.size());
  for (const auto& d : dets) confs.push_back(d.confidence);
  const double theta_final = dynamic_threshold(confs, cfg.threshold_method, cfg.theta_min);

  std::vector<char> keep(dets.size(), 0);
  for (const auto& roi : rois) {
    const auto sliced = sliced_predictions(detector, frame_index, roi.box, cfg);
    for (auto idx : verify_roi(roi, dets, sliced, theta_final, cfg)) keep[idx] = 1;
  }
  std::vector<Detection> out;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (keep[i]) out.push_back(dets[i]);
  return out;
}

}  // namespace autoannot
