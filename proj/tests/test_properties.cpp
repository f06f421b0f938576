#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace autoannot;
using testutil::kCases;

namespace {

using Rng = std::mt19937_64;

double uni(Rng& r, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(r); }
int pick(Rng& r, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(r); }

BinaryMask random_ellipse(Rng& r, int w, int h, double amin, double amax) {
  ObjectSpec o;
  o.axis_x = uni(r, amin, amax);
  o.axis_y = uni(r, amin, amax);
  o.cx = uni(r, o.axis_x, w - o.axis_x);
  o.cy = uni(r, o.axis_y, h - o.axis_y);
  return ellipse_mask(o, 0, w, h);
}

BinaryMask random_rect(Rng& r, int w, int h, int max_side) {
  const int x0 = pick(r, 0, w - 2), y0 = pick(r, 0, h - 2);
  return testutil::rect_mask(w, h, x0, y0, std::min(w, x0 + pick(r, 1, max_side)), std::min(h, y0 + pick(r, 1, max_side)));
}

Polygon random_polygon(Rng& r, double extent) {
  Polygon p;
  const int n = pick(r, 3, 8);
  for (int i = 0; i < n; ++i) p.vertices.push_back({uni(r, 0, extent), uni(r, 0, extent)});
  return p;
}

// Objects in separate horizontal lanes, moving sideways, never touching.
SyntheticWorldConfig lane_world(Rng& r, int objects, int frames) {
  SyntheticWorldConfig c;
  c.frame_width = 160;
  c.frame_height = 40 * objects;
  c.num_objects = objects;
  c.num_frames = frames;
  c.axis_min = 8;
  c.axis_max = 14;
  for (int i = 0; i < objects; ++i) {
    ObjectSpec o;
    o.axis_x = uni(r, 8, 14);
    o.axis_y = uni(r, 8, 14);
    o.cx = uni(r, 40, 120);
    o.cy = 40.0 * i + 20.0;
    o.vx = uni(r, -1, 1);
    o.class_label = "person";
    c.objects.push_back(o);
  }
  return c;
}

std::size_t entry_count(const MaskletStore& s) {
  std::size_t n = 0;
  for (const auto& [id, m] : s) n += m.entries.size();
  return n;
}

TrackSequence random_gt(Rng& r, int frames, int objects) {
  TrackSequence s;
  for (int t = 0; t < frames; ++t) {
    FrameBoxes f{t, {}};
    for (int i = 0; i < objects; ++i)
      if (uni(r, 0, 1) < 0.85) f.boxes.push_back({i, {60.0 * i + t, 0, 60.0 * i + t + 20, 20}, "person"});
    s.push_back(f);
  }
  return s;
}

// Noisy tracker output: drops, jitter, id switches and spurious boxes.
TrackSequence random_pred(Rng& r, const TrackSequence& gt) {
  TrackSequence s;
  for (const auto& g : gt) {
    FrameBoxes f{g.frame, {}};
    std::set<int> used;
    for (const auto& b : g.boxes) {
      if (uni(r, 0, 1) < 0.2) continue;
      int id = uni(r, 0, 1) < 0.15 ? pick(r, 0, 5) : b.id;
      if (!used.insert(id).second) continue;
      const double j = uni(r, -4, 4);
      f.boxes.push_back({id, {b.box.x1 + j, b.box.y1, b.box.x2 + j, b.box.y2}, b.class_label});
    }
    if (uni(r, 0, 1) < 0.2) {
      const int id = 100 + pick(r, 0, 2);
      const double x = uni(r, 0, 300);
      if (used.insert(id).second) f.boxes.push_back({id, {x, 100, x + 15, 120}, "person"});
    }
    s.push_back(f);
  }
  return s;
}

SmartOdConfig tiny_frame_smart_od() {
  SmartOdConfig c;
  c.slice_size = 128;
  return c;
}

}  // namespace

// ---------------------------------------------------------------- geometry

TEST(GeometryProps, IouIsSymmetric) {
  Rng r(1);
  for (int k = 0; k < kCases; ++k) {
    const BBox a = testutil::random_box(r), b = testutil::random_box(r);
    EXPECT_EQ(iou_box(a, b), iou_box(b, a));
    const auto ma = testutil::random_mask(r, 24, 18, 0.4), mb = testutil::random_mask(r, 24, 18, 0.4);
    EXPECT_EQ(iou_mask(ma, mb), iou_mask(mb, ma));
    const Polygon pa = random_polygon(r, 30), pb = random_polygon(r, 30);
    EXPECT_EQ(iou_polygon(pa, pb, 32, 32), iou_polygon(pb, pa, 32, 32));
  }
}

TEST(GeometryProps, SelfIouIsOne) {
  Rng r(2);
  for (int k = 0; k < kCases; ++k) {
    BBox a = testutil::random_box(r);
    a.x2 += 0.5;
    a.y2 += 0.5;
    EXPECT_DOUBLE_EQ(iou_box(a, a), 1.0);
    const auto m = random_rect(r, 30, 20, 10);
    EXPECT_DOUBLE_EQ(iou_mask(m, m), 1.0);
    const Polygon p = testutil::rect_polygon(uni(r, 0, 10), uni(r, 0, 10), uni(r, 12, 30), uni(r, 12, 30));
    EXPECT_DOUBLE_EQ(iou_polygon(p, p, 32, 32), 1.0);
  }
}

TEST(GeometryProps, ContourBoxWithinExpandedTightBox) {
  Rng r(3);
  for (int k = 0; k < kCases; ++k) {
    const auto m = testutil::random_mask(r, 20, 16, uni(r, 0.05, 0.9));
    const auto p = mask_to_polygon(m);
    if (m.empty()) {
      EXPECT_FALSE(p);
      continue;
    }
    ASSERT_TRUE(p);
    EXPECT_GE(p->size(), 3u);
    const BBox tb = *m.tight_box(), pb = polygon_to_bbox(*p);
    EXPECT_LE(pb.x1, pb.x2);
    EXPECT_GE(pb.x1, tb.x1 - 1);
    EXPECT_GE(pb.y1, tb.y1 - 1);
    EXPECT_LE(pb.x2, tb.x2 + 1);
    EXPECT_LE(pb.y2, tb.y2 + 1);
  }
}

TEST(GeometryProps, ConvexBlobRasterRoundTrip) {
  Rng r(4);
  for (int k = 0; k < kCases; ++k) {
    const BinaryMask m = k % 2 ? random_ellipse(r, 64, 48, 3, 20) : random_rect(r, 64, 48, 30);
    if (m.count() < 25) continue;
    const auto p = mask_to_polygon(m);
    ASSERT_TRUE(p);
    EXPECT_GE(iou_mask(rasterize(*p, 64, 48), m), 0.9) << k;
  }
}

TEST(GeometryProps, EnvelopeContainsEveryBox) {
  Rng r(5);
  for (int k = 0; k < kCases; ++k) {
    std::vector<BBox> boxes(std::size_t(pick(r, 1, 6)));
    for (auto& b : boxes) b = testutil::random_box(r);
    const BBox e = envelope(boxes);
    EXPECT_LE(e.x1, e.x2);
    EXPECT_LE(e.y1, e.y2);
    for (const auto& b : boxes) EXPECT_DOUBLE_EQ(intersection_area(e, b), b.area());
  }
}

// ---------------------------------------------------------------- backends

TEST(BackendProps, OutputsAreReproducible) {
  Rng r(6);
  for (int k = 0; k < kCases; ++k) {
    auto w = testutil::small_world(r(), pick(r, 1, 3), 3, 96, 72);
    DetectionNoise n;
    n.miss_rate = uni(r, 0, 0.5);
    n.fp_rate = uni(r, 0, 3);
    n.jitter_sigma = uni(r, 0, 2);
    n.rng_seed = r();
    PropagationDegradation d{uni(r, -1, 1), uni(r, -1, 1), uni(r, 0, 0.3), r()};
    const auto g1 = generate_synthetic_sequence(w), g2 = generate_synthetic_sequence(w);
    ASSERT_EQ(g1.size(), g2.size());
    for (std::size_t t = 0; t < g1.size(); ++t) {
      ASSERT_EQ(g1[t].objects.size(), g2[t].objects.size());
      for (std::size_t i = 0; i < g1[t].objects.size(); ++i) EXPECT_EQ(g1[t].objects[i].mask, g2[t].objects[i].mask);
      EXPECT_EQ(oracle_detect(g1[t], n), oracle_detect(g2[t], n));
    }
    if (!g1[0].objects.empty()) {
      const BBox b = g1[0].objects[0].box;
      EXPECT_EQ(oracle_propagate(b, 0, 2, g1, d), oracle_propagate(b, 0, 2, g2, d));
    }
  }
}

TEST(BackendProps, GroundTruthAndDetectionInvariants) {
  Rng r(7);
  for (int k = 0; k < kCases; ++k) {
    const auto gt = generate_synthetic_sequence(testutil::small_world(r(), pick(r, 1, 4), 2, 96, 72));
    DetectionNoise n;
    n.fp_rate = 2;
    n.jitter_sigma = 1;
    n.rng_seed = r();
    for (const auto& f : gt) {
      std::set<int> ids;
      for (const auto& o : f.objects) {
        EXPECT_TRUE(ids.insert(o.id).second);
        EXPECT_GE(o.visibility, 0.0);
        EXPECT_LE(o.visibility, 1.0);
        if (o.visibility > 0.0) EXPECT_EQ(o.box, *o.mask.tight_box());
      }
      for (const auto& d : oracle_detect(f, n)) {
        EXPECT_GE(d.confidence, 0.0);
        EXPECT_LE(d.confidence, 1.0);
        EXPECT_LE(d.box.x1, d.box.x2);
        EXPECT_LE(d.box.y1, d.box.y2);
      }
    }
  }
}

TEST(BackendProps, ZeroNoiseOracleIsPerfect) {
  Rng r(8);
  for (int k = 0; k < kCases; ++k) {
    auto w = testutil::small_world(r(), pick(r, 1, 5), 1, 96, 72);
    w.occlusion_enabled = k % 2 == 0;
    const auto gt = generate_synthetic_sequence(w);
    const auto s = score_detections(oracle_detect(gt[0], {}), gt[0], 0.5);
    EXPECT_EQ(s.fp, 0);
    EXPECT_EQ(s.fn, 0);
  }
}

TEST(BackendProps, MoreOccludersNeverRaiseVisibility) {
  Rng r(9);
  for (int k = 0; k < kCases; ++k) {
    SyntheticWorldConfig c;
    c.frame_width = 64;
    c.frame_height = 48;
    c.num_frames = 3;
    c.num_objects = pick(r, 1, 3);
    c.max_speed = 2;
    c.axis_min = 4;
    c.axis_max = 12;
    c.rng_seed = r();
    c.objects = world_objects(c);
    const auto fewer = generate_synthetic_sequence(c);
    ObjectSpec extra;
    extra.axis_x = uni(r, 4, 14);
    extra.axis_y = uni(r, 4, 14);
    extra.cx = uni(r, extra.axis_x, 64 - extra.axis_x);
    extra.cy = uni(r, extra.axis_y, 48 - extra.axis_y);
    extra.vx = uni(r, -2, 2);
    extra.class_label = "person";
    c.objects.push_back(extra);
    ++c.num_objects;
    const auto more = generate_synthetic_sequence(c);
    for (int id = 0; id + 1 < c.num_objects; ++id) {
      double a = 0, b = 0;
      for (const auto& f : fewer)
        for (const auto& o : f.objects)
          if (o.id == id) a += o.visibility;
      for (const auto& f : more)
        for (const auto& o : f.objects)
          if (o.id == id) b += o.visibility;
      EXPECT_LE(b, a + 1e-12);
    }
  }
}

// ---------------------------------------------------------------- smart_od

TEST(SmartOdProps, RaisingThetaMinNeverAddsDetections) {
  Rng r(10);
  for (int k = 0; k < kCases; ++k) {
    const auto gt = generate_synthetic_sequence(testutil::small_world(r(), pick(r, 1, 4), 1, 120, 90));
    DetectionNoise n;
    n.fp_rate = uni(r, 0, 6);
    n.miss_rate = uni(r, 0, 0.3);
    n.rng_seed = r();
    const OracleDetector det(gt, n);
    SmartOdConfig lo = tiny_frame_smart_od();
    lo.threshold_method = static_cast<ThresholdMethod>(k % 4);
    lo.theta_min = uni(r, 0, 0.9);
    SmartOdConfig hi = lo;
    hi.theta_min = uni(r, lo.theta_min, 1.0);
    const auto a = run_smart_od(det, 0, lo), b = run_smart_od(det, 0, hi);
    for (const auto& d : b) EXPECT_NE(std::find(a.begin(), a.end(), d), a.end());
  }
}

TEST(SmartOdProps, VerificationSelectsWithoutFabricatingAndIsIdempotent) {
  Rng r(11);
  const SmartOdConfig cfg;
  for (int k = 0; k < kCases; ++k) {
    std::vector<Detection> dets(std::size_t(pick(r, 1, 10)));
    for (auto& d : dets) d = {testutil::random_box(r, 600, 60), "person", uni(r, 0, 1)};
    std::vector<Detection> sliced(std::size_t(pick(r, 0, 10)));
    for (auto& d : sliced) d = {testutil::random_box(r, 600, 60), "person", uni(r, 0, 1)};
    const double theta = uni(r, 0, 1);
    for (const auto& roi : cluster_and_build_rois(dets, cfg)) {
      const auto v1 = verify_roi(roi, dets, sliced, theta, cfg);
      EXPECT_EQ(v1, verify_roi(roi, dets, sliced, theta, cfg));
      for (auto i : v1) {
        EXPECT_NE(std::find(roi.members.begin(), roi.members.end(), i), roi.members.end());
        EXPECT_GT(dets[i].confidence, theta);
      }
    }
  }
}

TEST(SmartOdProps, ThresholdStaysInRange) {
  Rng r(12);
  for (int k = 0; k < kCases; ++k) {
    std::vector<double> s(std::size_t(pick(r, 1, 15)));
    for (auto& v : s) v = k % 5 == 0 ? 0.5 : uni(r, 0, 1);
    const double floor = uni(r, 0, 1);
    for (int m = 0; m < 4; ++m) {
      const double t = dynamic_threshold(s, static_cast<ThresholdMethod>(m), floor);
      EXPECT_GE(t, floor);
      EXPECT_LE(t, 1.0);
    }
  }
}

TEST(SmartOdProps, UnitMinPointsPartitionsDetectionsIntoRois) {
  Rng r(13);
  SmartOdConfig cfg;
  for (int k = 0; k < kCases; ++k) {
    cfg.epsilon_dbscan = uni(r, 1, 300);
    std::vector<Detection> dets(std::size_t(pick(r, 0, 12)));
    for (auto& d : dets) d = {testutil::random_box(r, 800, 50), "person", 0.5};
    std::vector<int> seen(dets.size(), 0);
    for (const auto& roi : cluster_and_build_rois(dets, cfg)) {
      std::vector<BBox> boxes;
      for (auto i : roi.members) {
        ++seen[i];
        boxes.push_back(dets[i].box);
      }
      ASSERT_FALSE(boxes.empty());
      EXPECT_EQ(roi.box, envelope(boxes));
    }
    for (int c : seen) EXPECT_EQ(c, 1);
  }
}

// ---------------------------------------------------------------- assoc

TEST(AssocProps, MappingIsAPartitionAndIdsNeverRepeat) {
  Rng r(14);
  for (int k = 0; k < kCases; ++k) {
    AssocState s;
    AssocConfig c;
    c.track_buffer = pick(r, 0, 3);
    std::set<int> issued;
    for (int t = 0; t < 6; ++t) {
      std::vector<Detection> dets(std::size_t(pick(r, 0, 6)));
      for (auto& d : dets) d = {testutil::random_box(r, 80, 30), "person", 0.8};
      const int before = s.next_id;
      const auto res = associate_frame(s, dets, t, c);
      std::vector<int> hits(dets.size(), 0);
      std::set<int> tracks;
      for (const auto& [d, id] : res.matches) {
        ++hits[d];
        EXPECT_TRUE(tracks.insert(id).second);
        EXPECT_TRUE(issued.count(id));
      }
      int last = before - 1;
      for (const auto& n : res.new_objects) {
        ++hits[n.detection];
        EXPECT_GT(n.id, last);
        last = n.id;
        EXPECT_TRUE(issued.insert(n.id).second);
      }
      for (int h : hits) EXPECT_EQ(h, 1);
      for (const auto& tr : s.tracks) EXPECT_LE(tr.last_seen_frame, t);
    }
  }
}

TEST(AssocProps, StaticOracleSceneOpensNoTracksAfterFirstFrame) {
  Rng r(15);
  const AssocConfig c;
  for (int k = 0; k < kCases; ++k) {
    auto w = testutil::small_world(r(), pick(r, 1, 4), 4, 160, 120);
    w.max_speed = 0.0;
    const auto gt = generate_synthetic_sequence(w);
    AssocState s;
    for (int t = 0; t < 4; ++t) {
      const auto dets = prepare_detections(oracle_detect(gt[std::size_t(t)], {}), 160, 120, c);
      const auto res = associate_frame(s, dets, t, c);
      if (t > 0) EXPECT_TRUE(res.new_objects.empty());
    }
  }
}

TEST(AssocProps, RescaledConfidenceInRangeAndOrderPreserving) {
  Rng r(16);
  for (int k = 0; k < kCases; ++k) {
    std::vector<double> s(std::size_t(pick(r, 1, 12)));
    for (auto& v : s) v = uni(r, 0, 1);
    const auto o = rescale_confidence(s);
    ASSERT_EQ(o.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_GE(o[i], 0.7 - 1e-12);
      EXPECT_LE(o[i], 0.95 + 1e-12);
      for (std::size_t j = 0; j < s.size(); ++j)
        if (s[i] < s[j]) EXPECT_LE(o[i], o[j]);
    }
  }
}

// ---------------------------------------------------------------- ash

TEST(AshProps, PostprocessNeverAddsEntries) {
  Rng r(17);
  AshConfig cfg;
  for (int k = 0; k < kCases; ++k) {
    MaskletStore s;
    for (int id = 0; id < pick(r, 1, 4); ++id) {
      Masklet m{id, "person", {}};
      const int first = pick(r, 0, 3);
      for (int f = first; f < first + pick(r, 1, 5); ++f) {
        const BinaryMask mask = uni(r, 0, 1) < 0.2 ? BinaryMask(40, 30) : random_rect(r, 40, 30, 14);
        m.entries.emplace(f, make_entry(mask, 0.8, cfg.epsilon_mask));
      }
      s.emplace(id, m);
    }
    cfg.alpha = uni(r, 0, 1);
    const std::size_t before = entry_count(s);
    postprocess(s, cfg);
    EXPECT_LE(entry_count(s), before);
  }
}

TEST(AshProps, SmoothingKeepsVertexCountAndAlphaOneIsIdentity) {
  Rng r(18);
  for (int k = 0; k < kCases; ++k) {
    Masklet m{0, "person", {}};
    const int frames = pick(r, 2, 5);
    for (int f = 0; f < frames; ++f) m.entries.emplace(f, make_entry(random_ellipse(r, 48, 40, 4, 10), 0.9, 3));
    const int n = pick(r, 8, 80);
    EXPECT_EQ(smooth_polygons(m, 1.0, n), m);
    const auto s = smooth_polygons(m, uni(r, 0, 0.99), n);
    EXPECT_EQ(s.entries.at(0), m.entries.at(0));
    for (int f = 1; f < frames; ++f) {
      EXPECT_EQ(s.entries.at(f).polygon->size(), std::size_t(n));
      EXPECT_EQ(s.entries.at(f).mask, m.entries.at(f).mask);
    }
  }
}

TEST(AshProps, MergeLeavesNoPairAboveThreshold) {
  Rng r(19);
  for (int k = 0; k < kCases; ++k) {
    MaskletStore s;
    for (int id = 0; id < pick(r, 2, 6); ++id) {
      Masklet m{id, "person", {}};
      m.entries.emplace(0, make_entry(random_rect(r, 30, 24, 16), 0.8, 3));
      s.emplace(id, m);
    }
    const double tau = uni(r, 0.05, 0.95);
    merge_redundant_frame(s, 0, tau, 3);
    std::vector<BinaryMask> raster;
    for (const auto& [id, m] : s)
      if (auto it = m.entries.find(0); it != m.entries.end() && it->second.polygon)
        raster.push_back(rasterize(*it->second.polygon, 30, 24));
    for (std::size_t i = 0; i < raster.size(); ++i)
      for (std::size_t j = i + 1; j < raster.size(); ++j) EXPECT_LE(iou_mask(raster[i], raster[j]), tau);
  }
}

TEST(AshProps, MaskletsStayWithinDetectionToEnd) {
  Rng r(20);
  for (int k = 0; k < kCases; ++k) {
    const auto w = lane_world(r, pick(r, 1, 3), 8);
    const auto gt = generate_synthetic_sequence(w);
    const OraclePropagator prop(gt, {});
    std::map<int, std::vector<ObjectPrompt>> prompts;
    std::map<int, int> first;
    for (int id = 0; id < w.num_objects; ++id) {
      const int f = pick(r, 0, 6);
      first[id] = f;
      for (const auto& o : gt[std::size_t(f)].objects)
        if (o.id == id) prompts[f].push_back({id, o.box, o.class_label, 0.9});
    }
    const auto store = run_ash(prompts, 0, 7, prop, {});
    for (const auto& [id, m] : store) {
      ASSERT_TRUE(first.count(id));
      for (const auto& [f, e] : m.entries) {
        EXPECT_GE(f, first[id]);
        EXPECT_LE(f, 7);
      }
      EXPECT_EQ(m.entries.begin()->first, first[id]);
    }
  }
}

// ---------------------------------------------------------------- chunker

TEST(ChunkerProps, PlanCoversEveryFrameWithFixedOverlap) {
  Rng r(21);
  for (int k = 0; k < kCases; ++k) {
    ChunkerConfig c;
    c.chi = pick(r, 3, 60);
    c.omega = pick(r, 0, c.chi - 2);
    const int n = pick(r, 1, 400);
    const auto plan = plan_chunks(n, c).chunks;
    ASSERT_FALSE(plan.empty());
    EXPECT_EQ(plan.front().first, 0);
    EXPECT_EQ(plan.back().second, n - 1);
    for (std::size_t i = 0; i < plan.size(); ++i) {
      EXPECT_LE(plan[i].first, plan[i].second);
      EXPECT_LE(plan[i].second - plan[i].first + 1, c.chi);
      if (i + 1 < plan.size()) {
        EXPECT_EQ(plan[i].second - plan[i].first + 1, c.chi);
        EXPECT_EQ(plan[i + 1].first, plan[i].second - c.omega);
        EXPECT_GT(plan[i + 1].first, plan[i].first);
      }
    }
  }
}

TEST(ChunkerProps, OverlapHandOffIsInjective) {
  Rng r(22);
  for (int k = 0; k < kCases; ++k) {
    MaskletStore a, b;
    const std::vector<int> frames{0, 1};
    for (int id = 0; id < pick(r, 0, 4); ++id) {
      Masklet m{id, "person", {}};
      const auto base = random_rect(r, 40, 30, 20);
      for (int f : frames) m.entries.emplace(f, make_entry(base, 0.9, 3));
      a.emplace(id, m);
    }
    for (int id = 0; id < pick(r, 0, 4); ++id) {
      Masklet m{id, "person", {}};
      // copies of A objects compete for the same identity
      const auto base = !a.empty() && uni(r, 0, 1) < 0.7 ? a.at(pick(r, 0, int(a.size()) - 1)).entries.at(0).mask
                                                          : random_rect(r, 40, 30, 20);
      for (int f : frames) m.entries.emplace(f, make_entry(base, 0.9, 3));
      b.emplace(id, m);
    }
    const auto match = match_chunk_overlap(a, b, frames, uni(r, 0.1, 0.9));
    std::set<int> targets;
    for (const auto& [idb, ida] : match.inherited) {
      EXPECT_TRUE(targets.insert(ida).second);
      EXPECT_TRUE(a.count(ida));
    }
    EXPECT_EQ(match.inherited.size() + match.fresh.size(), b.size());
  }
}

TEST(ChunkerProps, CheckpointRoundTripsAndStaysLoadableThroughSaves) {
  Rng r(23);
  const auto root = testutil::scratch_dir("prop_ckpt");
  for (int k = 0; k < kCases; ++k) {
    const std::string seq = "p" + std::to_string(k);
    const auto dir = root / seq;
    long long committed = -1;
    for (int save = 0; save < 3; ++save) {
      Checkpoint c;
      c.sequence_id = seq;
      c.revision = save;
      c.tag = save == 2 ? "final" : save == 0 ? "initial" : frame_tag(pick(r, 0, 500));
      c.mode = k % 2 ? ProcessingMode::chunk : ProcessingMode::full;
      c.last_frame = pick(r, -1, 500);
      c.budget_used = pick(r, 0, 10000);
      c.next_global_id = pick(r, 0, 20);
      c.rng_seed = r();
      c.assoc.next_id = c.next_global_id;
      c.assoc.tracks.push_back({pick(r, 0, 9), testutil::random_box(r), pick(r, 0, 9), "person", pick(r, 0, 3)});
      Masklet m{1, "person", {}};
      m.entries.emplace(pick(r, 0, 9), make_entry(random_rect(r, 32, 24, 12), uni(r, 0, 1), 3));
      c.masklets.emplace(1, m);
      EXPECT_EQ(parse_checkpoint(serialize_checkpoint(c)), c);
      save_checkpoint(c, checkpoint_path(dir, seq, c.tag), [&](CheckpointPhase, const std::filesystem::path&) {
        if (committed < 0) return;
        const auto latest = find_latest_checkpoint(dir, seq);
        ASSERT_TRUE(latest);
        EXPECT_GE(latest->checkpoint.revision, committed);
      });
      committed = save;
      const auto latest = find_latest_checkpoint(dir, seq);
      ASSERT_TRUE(latest);
      EXPECT_EQ(latest->checkpoint, c);
    }
  }
  std::filesystem::remove_all(root);
}

TEST(ChunkerProps, ChunkAndFullModesAgreeOnOracleData) {
  Rng r(24);
  FlashConfig cfg;
  cfg.chunker.chi = 10;
  cfg.chunker.omega = 3;
  for (int k = 0; k < kCases; ++k) {
    const auto w = lane_world(r, pick(r, 1, 3), 24);
    const auto gt = generate_synthetic_sequence(w);
    const OraclePropagator prop(gt, {});
    const auto dets = testutil::oracle_detections(gt);
    RunOptions full, chunk;
    full.mode = ProcessingMode::full;
    chunk.mode = ProcessingMode::chunk;
    const auto a = run_sequence(dets, w.frame_width, w.frame_height, prop, cfg, full).masklets;
    const auto b = run_sequence(dets, w.frame_width, w.frame_height, prop, cfg, chunk).masklets;
    EXPECT_EQ(a.size(), b.size()) << k;
    EXPECT_GE(testutil::min_aligned_iou(a, b, 3), 0.99) << k;
    EXPECT_GE(testutil::min_aligned_iou(b, a, 3), 0.99) << k;
  }
}

// ---------------------------------------------------------------- metrics

TEST(MetricsProps, SelfEvaluationIsPerfect) {
  Rng r(25);
  for (int k = 0; k < kCases; ++k) {
    const auto g = random_gt(r, pick(r, 1, 8), pick(r, 0, 4));
    const auto m = evaluate(g, g).overall;
    EXPECT_DOUBLE_EQ(m.mota, 1.0);
    EXPECT_DOUBLE_EQ(m.idf1, 1.0);
    EXPECT_EQ(m.counts.idsw, 0);
  }
}

TEST(MetricsProps, RelabelingPredictionsChangesNothing) {
  Rng r(26);
  for (int k = 0; k < kCases; ++k) {
    const auto g = random_gt(r, pick(r, 1, 8), pick(r, 1, 4));
    const auto p = random_pred(r, g);
    std::map<int, int> perm;
    for (const auto& f : p)
      for (const auto& b : f.boxes) perm.emplace(b.id, 0);
    std::vector<int> targets;
    for (const auto& [id, v] : perm) targets.push_back(1000 + id);
    std::shuffle(targets.begin(), targets.end(), r);
    std::size_t i = 0;
    for (auto& [id, v] : perm) v = targets[i++];
    auto q = p;
    for (auto& f : q)
      for (auto& b : f.boxes) b.id = perm.at(b.id);
    const auto a = evaluate(p, g).overall, b = evaluate(q, g).overall;
    EXPECT_DOUBLE_EQ(a.mota, b.mota);
    EXPECT_DOUBLE_EQ(a.idf1, b.idf1);
    EXPECT_EQ(a.counts.idsw, b.counts.idsw);
  }
}

TEST(MetricsProps, SpuriousTrackLowersMotaAndNeverRaisesIdf1) {
  Rng r(27);
  for (int k = 0; k < kCases; ++k) {
    const auto g = random_gt(r, pick(r, 1, 8), pick(r, 1, 4));
    const auto p = random_pred(r, g);
    auto q = p;
    bool added = false;
    for (auto& f : q)
      if (!added || uni(r, 0, 1) < 0.5) {
        f.boxes.push_back({999, {0, 500, 20, 520}, "person"});
        added = true;
      }
    const auto a = evaluate(p, g).overall, b = evaluate(q, g).overall;
    if (a.counts.num_gt > 0) EXPECT_LT(b.mota, a.mota);
    EXPECT_LE(b.idf1, a.idf1);
    for (const auto& m : {a, b}) {
      EXPECT_LE(m.mota, 1.0);
      EXPECT_GE(m.idf1, 0.0);
      EXPECT_LE(m.idf1, 1.0);
      const auto& c = m.counts;
      EXPECT_DOUBLE_EQ(m.precision, c.tp + c.fp > 0 ? double(c.tp) / double(c.tp + c.fp) : 0.0);
      if (c.num_gt > 0) EXPECT_DOUBLE_EQ(m.mota, 1.0 - double(c.fp + c.fn + c.idsw) / double(c.num_gt));
    }
  }
}

// ---------------------------------------------------------------- io

TEST(IoProps, MotRoundTripsAtValueLevel) {
  Rng r(28);
  for (int k = 0; k < kCases; ++k) {
    std::vector<MotRecord> recs;
    for (int i = 0; i < pick(r, 0, 12); ++i) {
      const auto dec = [&](long long lo, long long hi) {
        return double(std::uniform_int_distribution<long long>(lo, hi)(r)) / 1e6;
      };
      recs.push_back({pick(r, 1, 50), pick(r, -1, 30), dec(-1'000'000'000, 3'000'000'000), dec(0, 2'000'000'000),
                      dec(1, 500'000'000), dec(1, 500'000'000), dec(0, 1'000'000), pick(r, 1, 5), dec(0, 1'000'000)});
    }
    std::stable_sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.frame < b.frame; });
    const std::string text = format_mot(recs);
    EXPECT_EQ(text, format_mot(recs));
    std::istringstream in(text);
    const auto back = flatten(parse_mot(in));
    ASSERT_EQ(back.size(), recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      EXPECT_EQ(back[i].frame, recs[i].frame);
      EXPECT_EQ(back[i].id, recs[i].id);
      EXPECT_EQ(back[i].x, recs[i].x);
      EXPECT_EQ(back[i].y, recs[i].y);
      EXPECT_EQ(back[i].w, recs[i].w);
      EXPECT_EQ(back[i].h, recs[i].h);
      EXPECT_EQ(back[i].conf, recs[i].conf);
      EXPECT_EQ(back[i].class_id, recs[i].class_id);
      EXPECT_EQ(back[i].visibility, recs[i].visibility);
    }
  }
}

TEST(IoProps, AnnotationsRoundTripExactly) {
  Rng r(29);
  for (int k = 0; k < kCases; ++k) {
    AnnotationDocument d;
    d.sequence_id = "s" + std::to_string(k);
    d.width = pick(r, 1, 4000);
    d.height = pick(r, 1, 4000);
    for (int f = 0; f < pick(r, 0, 5); ++f) {
      AnnotatedFrame fr{f, {}};
      for (int o = 0; o < pick(r, 0, 3); ++o) {
        const Polygon p = random_polygon(r, 1000);
        fr.objects.push_back({o, k % 3 ? "person" : "car", uni(r, 0, 1), p, polygon_to_bbox(p)});
      }
      d.frames.push_back(fr);
    }
    const std::string text = format_annotations(d);
    EXPECT_EQ(text, format_annotations(d));
    std::istringstream in(text);
    EXPECT_EQ(parse_annotations(in), d);
  }
}

TEST(IoProps, ConfigRoundTripsExactly) {
  Rng r(30);
  for (int k = 0; k < kCases; ++k) {
    PipelineConfig c;
    c.smart_od.theta_min = uni(r, 0, 1);
    c.smart_od.epsilon_dbscan = uni(r, 1, 500);
    c.smart_od.threshold_method = static_cast<ThresholdMethod>(k % 4);
    c.ash.alpha = uni(r, 0, 1);
    c.ash.beta = pick(r, 1, 20);
    c.chunker.chi = pick(r, 3, 200);
    c.chunker.omega = pick(r, 0, c.chunker.chi - 2);
    c.world.rng_seed = r();
    c.noise.miss_rate = uni(r, 0, 1);
    c.degradation.drift_x = uni(r, -5, 5);
    c.deployment.grid["theta_v"] = {uni(r, 0, 1), uni(r, 0, 1)};
    const std::string text = serialize_config(c);
    EXPECT_EQ(parse_config_text(text), c);
    EXPECT_EQ(serialize_config(parse_config_text(text)), text);
  }
}

// ---------------------------------------------------------------- pipeline

TEST(PipelineProps, AnnotationIsDeterministic) {
  Rng r(31);
  PipelineConfig cfg;
  cfg.chunker.chi = 6;
  cfg.chunker.omega = 2;
  cfg.smart_od.slice_size = 96;
  for (int k = 0; k < kCases; ++k) {
    DetectionNoise n;
    n.miss_rate = uni(r, 0, 0.4);
    n.fp_rate = uni(r, 0, 2);
    n.jitter_sigma = uni(r, 0, 1.5);
    n.rng_seed = r();
    const auto seq = make_sequence("d", testutil::small_world(r(), pick(r, 1, 3), 10, 96, 72), n,
                                   {uni(r, -1, 1), 0.0, uni(r, 0, 0.2), r()});
    RunOptions o;
    o.mode = k % 2 ? ProcessingMode::chunk : ProcessingMode::automatic;
    const auto a = annotate_sequence(seq, cfg, o), b = annotate_sequence(seq, cfg, o);
    EXPECT_EQ(format_annotations(a.annotations), format_annotations(b.annotations));
  }
}

TEST(PipelineProps, GridSearchWinnerDominates) {
  Rng r(32);
  for (int k = 0; k < kCases; ++k) {
    const auto gt = generate_synthetic_sequence(testutil::small_world(r(), pick(r, 1, 4), 1, 120, 90));
    DetectionNoise n;
    n.fp_rate = uni(r, 0, 4);
    n.miss_rate = uni(r, 0, 0.3);
    n.rng_seed = r();
    const OracleDetector det(gt, n);
    std::vector<SmartOdConfig> grid(std::size_t(pick(r, 1, 4)), tiny_frame_smart_od());
    for (auto& c : grid) {
      c.theta_min = uni(r, 0, 0.9);
      c.threshold_method = static_cast<ThresholdMethod>(pick(r, 0, 3));
    }
    const double alpha = uni(r, 0, 1);
    const auto res = optimize_parameters(det, gt[0], grid, alpha);
    ASSERT_EQ(res.evaluated.size(), grid.size());
    for (const auto& p : res.evaluated) EXPECT_GE(res.objective, p.objective);
    EXPECT_DOUBLE_EQ(res.objective, res.score.objective(alpha));
  }
}

TEST(PipelineProps, QaSampleIsReproducibleAndStratified) {
  Rng r(33);
  for (int k = 0; k < kCases; ++k) {
    std::vector<int> dens(std::size_t(pick(r, 0, 30)));
    for (auto& d : dens) d = pick(r, 0, 20);
    const double frac = uni(r, 0.01, 1.0);
    const std::uint64_t seed = r();
    const auto a = select_qa_sample(dens, frac, seed);
    EXPECT_EQ(a, select_qa_sample(dens, frac, seed));
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), a.size());
    std::size_t expected = 0;
    const std::size_t n = dens.size();
    for (std::size_t s = 0; s < 3; ++s) {
      const std::size_t size = (s + 1) * n / 3 - s * n / 3;
      expected += std::min(size, std::size_t(std::ceil(frac * double(size) - 1e-12)));
    }
    EXPECT_EQ(a.size(), expected);
  }
}
