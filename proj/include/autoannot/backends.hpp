#pragma once

// Contracts for the three neural roles (automatic mask generator,
// open-vocabulary detector, memory-based mask propagator) and a synthetic
// ellipse world that implements the detector and propagator as oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "autoannot/error.hpp"
#include "autoannot/geometry.hpp"

namespace autoannot {

struct Detection {
  BBox box;
  std::string class_label;
  double confidence = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct ConfidenceRange {
  double lo = 0.0;
  double hi = 1.0;

  double mid() const { return (lo + hi) / 2.0; }
  friend bool operator==(const ConfidenceRange&, const ConfidenceRange&) = default;
};

/// One ellipse with constant velocity. Center and semi-axes in pixels.
struct ObjectSpec {
  double cx = 0.0;
  double cy = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double axis_x = 10.0;
  double axis_y = 10.0;
  std::string class_label = "person";

  friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

struct SyntheticWorldConfig {
  int frame_width = 640;
  int frame_height = 480;
  int num_objects = 4;
  int num_frames = 100;
  double max_speed = 1.0;  // px/frame, per velocity component
  double axis_min = 15.0;
  double axis_max = 35.0;
  std::uint64_t rng_seed = 0;
  bool occlusion_enabled = true;
  std::vector<std::string> class_labels{"person"};
  // When nonempty, used verbatim instead of random generation (num_objects must match).
  std::vector<ObjectSpec> objects;

  friend bool operator==(const SyntheticWorldConfig&, const SyntheticWorldConfig&) = default;
};

struct DetectionNoise {
  double miss_rate = 0.0;
  double fp_rate = 0.0;  // expected false positives per full frame
  double jitter_sigma = 0.0;
  ConfidenceRange tp_confidence_range{0.6, 0.95};
  ConfidenceRange fp_confidence_range{0.05, 0.3};
  ConfidenceRange fp_box_size{16.0, 96.0};  // side length range of spurious boxes, px
  std::uint64_t rng_seed = 0;

  /// No misses, no spurious boxes, no jitter: confidences are the tp midpoint.
  bool is_zero() const { return miss_rate == 0.0 && fp_rate == 0.0 && jitter_sigma == 0.0; }

  friend bool operator==(const DetectionNoise&, const DetectionNoise&) = default;
};

/// Imperfections of the propagator oracle.
struct PropagationDegradation {
  double drift_x = 0.0;  // px/frame, accumulated from the prompt frame
  double drift_y = 0.0;
  double dropout_prob = 0.0;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const PropagationDegradation&, const PropagationDegradation&) = default;
};

struct GroundTruthObject {
  int id = 0;
  BinaryMask mask;  // visible part
  BBox box;         // tight box of `mask`; of the full footprint when fully occluded
  std::string class_label;
  double visibility = 1.0;
};

struct GroundTruthFrame {
  int frame_index = 0;
  int width = 1;
  int height = 1;
  std::vector<GroundTruthObject> objects;  // objects whose footprint intersects the frame
};

inline void validate(const SyntheticWorldConfig& c) {
  const auto fail = [](const std::string& f, const std::string& why) {
    throw Error(ErrorCategory::config, "world." + f + ": " + why);
  };
  if (c.frame_width < 1) fail("frame_width", "must be >= 1");
  if (c.frame_height < 1) fail("frame_height", "must be >= 1");
  if (c.num_objects < 1) fail("num_objects", "must be >= 1");
  if (c.num_frames < 1) fail("num_frames", "must be >= 1");
  if (!(c.axis_min > 0.0) || c.axis_max < c.axis_min) fail("axis_min", "need 0 < axis_min <= axis_max");
  if (c.class_labels.empty()) fail("class_labels", "must be nonempty");
  if (c.objects.empty()) {
    if (2.0 * c.axis_max >= c.frame_width || 2.0 * c.axis_max >= c.frame_height)
      fail("axis_max", "objects must fit inside the frame");
  } else {
    if (static_cast<int>(c.objects.size()) != c.num_objects) fail("objects", "count must equal num_objects");
    for (const auto& o : c.objects) {
      if (o.cx - o.axis_x < 0 || o.cy - o.axis_y < 0 || o.cx + o.axis_x > c.frame_width ||
          o.cy + o.axis_y > c.frame_height)
        fail("objects", "every object must fit inside the frame at t = 0");
    }
  }
}

inline void validate(const DetectionNoise& n) {
  const auto fail = [](const std::string& f, const std::string& why) {
    throw Error(ErrorCategory::config, "noise." + f + ": " + why);
  };
  if (!(n.miss_rate >= 0.0 && n.miss_rate <= 1.0)) fail("miss_rate", "must be in [0, 1]");
  if (!(n.fp_rate >= 0.0)) fail("fp_rate", "must be >= 0");
  if (!(n.jitter_sigma >= 0.0)) fail("jitter_sigma", "must be >= 0");
  for (auto [name, r] : {std::pair{"tp_confidence_range", n.tp_confidence_range},
                         {"fp_confidence_range", n.fp_confidence_range}})
    if (!(r.lo >= 0.0 && r.lo <= r.hi && r.hi <= 1.0)) fail(name, "need 0 <= lo <= hi <= 1");
  if (!(n.fp_box_size.lo >= 1.0 && n.fp_box_size.lo <= n.fp_box_size.hi)) fail("fp_box_size", "need 1 <= lo <= hi");
}

inline void validate(const PropagationDegradation& d) {
  if (!(d.dropout_prob >= 0.0 && d.dropout_prob <= 1.0))
    throw Error(ErrorCategory::config, "degradation.dropout_prob: must be in [0, 1]");
  if (!std::isfinite(d.drift_x) || !std::isfinite(d.drift_y))
    throw Error(ErrorCategory::config, "degradation.drift_x: drift must be finite");
}

/// Object list of the world: explicit, or drawn per object from (seed, index)
/// so that adding objects never perturbs earlier ones.
inline std::vector<ObjectSpec> world_objects(const SyntheticWorldConfig& c) {
  validate(c);
  if (!c.objects.empty()) return c.objects;
  std::vector<ObjectSpec> out;
  for (int i = 0; i < c.num_objects; ++i) {
    std::seed_seq seq{std::uint64_t{0x5eed}, c.rng_seed, static_cast<std::uint64_t>(i)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> axis(c.axis_min, c.axis_max);
    std::uniform_real_distribution<double> speed(-c.max_speed, c.max_speed);
    ObjectSpec o;
    o.axis_x = axis(rng);
    o.axis_y = axis(rng);
    o.cx = std::uniform_real_distribution<double>(o.axis_x, c.frame_width - o.axis_x)(rng);
    o.cy = std::uniform_real_distribution<double>(o.axis_y, c.frame_height - o.axis_y)(rng);
    o.vx = speed(rng);
    o.vy = speed(rng);
    o.class_label = c.class_labels[static_cast<std::size_t>(i) % c.class_labels.size()];
    out.push_back(o);
  }
  return out;
}

/// Filled ellipse at frame t; a pixel is inside when its center is.
inline BinaryMask ellipse_mask(const ObjectSpec& o, int t, int width, int height) {
  const double cx = o.cx + o.vx * t;
  const double cy = o.cy + o.vy * t;
  const PixelRect window{static_cast<int>(std::floor(cx - o.axis_x)), static_cast<int>(std::floor(cy - o.axis_y)),
                         static_cast<int>(std::ceil(cx + o.axis_x)) + 1,
                         static_cast<int>(std::ceil(cy + o.axis_y)) + 1};
  return BinaryMask::from_predicate(width, height, window, [&](int x, int y) {
    const double dx = (x + 0.5 - cx) / o.axis_x;
    const double dy = (y + 0.5 - cy) / o.axis_y;
    return dx * dx + dy * dy <= 1.0;
  });
}

inline std::vector<GroundTruthFrame> generate_synthetic_sequence(const SyntheticWorldConfig& cfg) {
  const std::vector<ObjectSpec> objs = world_objects(cfg);
  std::vector<GroundTruthFrame> frames;
  frames.reserve(static_cast<std::size_t>(cfg.num_frames));
  for (int t = 0; t < cfg.num_frames; ++t) {
    GroundTruthFrame f{t, cfg.frame_width, cfg.frame_height, {}};
    std::vector<BinaryMask> full;
    full.reserve(objs.size());
    for (const auto& o : objs) full.push_back(ellipse_mask(o, t, cfg.frame_width, cfg.frame_height));
    for (std::size_t i = 0; i < objs.size(); ++i) {
      if (full[i].empty()) continue;
      BinaryMask visible = full[i];
      if (cfg.occlusion_enabled) {
        for (std::size_t j = i + 1; j < objs.size(); ++j)
          if (!full[j].empty()) visible = visible.minus(full[j]);
      }
      GroundTruthObject g;
      g.id = static_cast<int>(i);
      g.visibility = static_cast<double>(visible.count()) / static_cast<double>(full[i].count());
      g.box = visible.empty() ? *full[i].tight_box() : *visible.tight_box();
      g.mask = std::move(visible);
      g.class_label = objs[i].class_label;
      f.objects.push_back(std::move(g));
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

namespace detail {

inline std::mt19937_64 seeded_rng(std::initializer_list<std::uint64_t> parts) {
  std::seed_seq seq(parts.begin(), parts.end());
  return std::mt19937_64(seq);
}

inline std::uint64_t bits_of(double v) {
  std::uint64_t u = 0;
  static_assert(sizeof(u) == sizeof(v));
  std::memcpy(&u, &v, sizeof(u));
  return u;
}

}  // namespace detail

/// Oracle open-vocabulary detector over `region` (the whole frame when
/// omitted). A visible object is reported when at least half of its box lies
/// inside the region, with the box clipped to the region. The spurious count
/// is Poisson with mean fp_rate scaled by region area / frame area.
inline std::vector<Detection> oracle_detect(const GroundTruthFrame& gt, const DetectionNoise& noise,
                                            std::optional<BBox> region = std::nullopt) {
  const BBox frame{0.0, 0.0, double(gt.width), double(gt.height)};
  const BBox r = region.value_or(frame);
  auto rng = detail::seeded_rng({noise.rng_seed, static_cast<std::uint64_t>(gt.frame_index), detail::bits_of(r.x1),
                                 detail::bits_of(r.y1), detail::bits_of(r.x2), detail::bits_of(r.y2)});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Detection> out;

  for (const auto& o : gt.objects) {
    if (o.visibility <= 0.0) continue;
    const double inside = intersection_area(o.box, r);
    if (o.box.area() <= 0.0 || inside < 0.5 * o.box.area()) continue;
    if (unit(rng) < noise.miss_rate) continue;
    BBox b{std::max(o.box.x1, r.x1), std::max(o.box.y1, r.y1), std::min(o.box.x2, r.x2), std::min(o.box.y2, r.y2)};
    if (noise.jitter_sigma > 0.0) {
      std::normal_distribution<double> jitter(0.0, noise.jitter_sigma);
      b.x1 += jitter(rng);
      b.y1 += jitter(rng);
      b.x2 += jitter(rng);
      b.y2 += jitter(rng);
      if (b.x2 < b.x1) std::swap(b.x1, b.x2);
      if (b.y2 < b.y1) std::swap(b.y1, b.y2);
    }
    const double conf = noise.is_zero()
                            ? noise.tp_confidence_range.mid()
                            : std::uniform_real_distribution<double>(noise.tp_confidence_range.lo,
                                                                     noise.tp_confidence_range.hi)(rng);
    out.push_back({b, o.class_label, conf});
  }

  if (noise.fp_rate > 0.0 && r.area() > 0.0) {
    std::poisson_distribution<int> count(noise.fp_rate * r.area() / frame.area());
    const int n = count(rng);
    std::uniform_real_distribution<double> side(noise.fp_box_size.lo, noise.fp_box_size.hi);
    std::uniform_real_distribution<double> conf(noise.fp_confidence_range.lo, noise.fp_confidence_range.hi);
    const std::string label = gt.objects.empty() ? std::string("person") : gt.objects.front().class_label;
    for (int k = 0; k < n; ++k) {
      const double w = std::min(side(rng), r.width());
      const double h = std::min(side(rng), r.height());
      const double x = r.x1 + unit(rng) * (r.width() - w);
      const double y = r.y1 + unit(rng) * (r.height() - h);
      out.push_back({{x, y, x + w, y + h}, label, conf(rng)});
    }
  }
  return out;
}

/// Masks of the ground-truth object prompted by `object_box` at `start_frame`,
/// for frames start_frame..end_frame inclusive. The prompted object is the
/// argmax box-IoU visible object, which must exceed 0.3; otherwise every mask
/// is empty. Masks are translated by the accumulated drift and dropped with
/// probability dropout_prob per frame.
inline std::vector<BinaryMask> oracle_propagate(const BBox& object_box, int start_frame, int end_frame,
                                                std::span<const GroundTruthFrame> gt,
                                                const PropagationDegradation& degradation) {
  if (start_frame < 0 || end_frame < start_frame || end_frame >= static_cast<int>(gt.size()))
    throw Error(ErrorCategory::invalid_argument, "oracle_propagate: frame range outside the sequence");
  const GroundTruthFrame& first = gt[static_cast<std::size_t>(start_frame)];
  int target = -1;
  double best = 0.3;
  for (const auto& o : first.objects) {
    if (o.visibility <= 0.0) continue;
    const double v = iou_box(object_box, o.box);
    if (v > best) {
      best = v;
      target = o.id;
    }
  }

  std::vector<BinaryMask> out;
  out.reserve(static_cast<std::size_t>(end_frame - start_frame + 1));
  for (int t = start_frame; t <= end_frame; ++t) {
    const GroundTruthFrame& f = gt[static_cast<std::size_t>(t)];
    BinaryMask m(f.width, f.height);
    if (target >= 0) {
      for (const auto& o : f.objects)
        if (o.id == target) m = o.mask;
    }
    if (!m.empty() && degradation.dropout_prob > 0.0) {
      auto rng = detail::seeded_rng({degradation.rng_seed, static_cast<std::uint64_t>(target),
                                     static_cast<std::uint64_t>(t)});
      if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < degradation.dropout_prob) m = BinaryMask(f.width, f.height);
    }
    const int delta = t - start_frame;
    const int dx = static_cast<int>(std::lround(degradation.drift_x * delta));
    const int dy = static_cast<int>(std::lround(degradation.drift_y * delta));
    if (!m.empty() && (dx != 0 || dy != 0)) m = m.translated(dx, dy);
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backend contracts

/// Parameters of the automatic mask generator (stability score threshold,
/// stability score offset, box NMS threshold).
struct MaskGeneratorParams {
  double stability_score_thresh = 0.90;
  double stability_score_offset = 0.7;
  double box_nms_thresh = 0.7;

  friend bool operator==(const MaskGeneratorParams&, const MaskGeneratorParams&) = default;
};

/// Whole-image instance mask generation. No in-tree implementation; the
/// synthetic detector already yields mask-consistent boxes.
class MaskGeneratorBackend {
 public:
  virtual ~MaskGeneratorBackend() = default;
  virtual std::vector<BinaryMask> generate(int frame_index, const MaskGeneratorParams& params) const = 0;
};

struct DetectorParams {
  double confidence = 0.001;
  double iou = 0.1;
  double nms = 0.1;
};

class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;
  virtual int frame_width() const = 0;
  virtual int frame_height() const = 0;
  virtual int num_frames() const = 0;
  /// Detections whose boxes lie within `region` of frame `frame_index`.
  virtual std::vector<Detection> detect(int frame_index, const BBox& region, const DetectorParams& params) const = 0;
};

struct ObjectPrompt {
  int object_id = 0;
  BBox box;
  std::string class_label;
  double confidence = 1.0;
};

class PropagatorBackend {
 public:
  virtual ~PropagatorBackend() = default;
  /// One mask per frame in [start_frame, end_frame] for every prompt of the batch.
  virtual std::vector<std::vector<BinaryMask>> propagate(std::span<const ObjectPrompt> batch, int start_frame,
                                                         int end_frame) const = 0;
};

class OracleDetector final : public DetectorBackend {
 public:
  OracleDetector(std::span<const GroundTruthFrame> gt, DetectionNoise noise) : gt_(gt), noise_(noise) {}

  int frame_width() const override { return gt_.empty() ? 1 : gt_.front().width; }
  int frame_height() const override { return gt_.empty() ? 1 : gt_.front().height; }
  int num_frames() const override { return static_cast<int>(gt_.size()); }

  std::vector<Detection> detect(int frame_index, const BBox& region, const DetectorParams& params) const override {
    if (frame_index < 0 || frame_index >= num_frames())
      throw Error(ErrorCategory::invalid_argument, "detector frame index out of range");
    std::vector<Detection> out = oracle_detect(gt_[static_cast<std::size_t>(frame_index)], noise_, region);
    std::erase_if(out, [&](const Detection& d) { return d.confidence < params.confidence; });
    return out;
  }

 private:
  std::span<const GroundTruthFrame> gt_;
  DetectionNoise noise_;
};

class OraclePropagator final : public PropagatorBackend {
 public:
  OraclePropagator(std::span<const GroundTruthFrame> gt, PropagationDegradation degradation)
      : gt_(gt), degradation_(degradation) {}

  std::vector<std::vector<BinaryMask>> propagate(std::span<const ObjectPrompt> batch, int start_frame,
                                                 int end_frame) const override {
    std::vector<std::vector<BinaryMask>> out;
    out.reserve(batch.size());
    for (const auto& p : batch) out.push_back(oracle_propagate(p.box, start_frame, end_frame, gt_, degradation_));
    return out;
  }

 private:
  std::span<const GroundTruthFrame> gt_;
  PropagationDegradation degradation_;
};

}  // namespace autoannot
