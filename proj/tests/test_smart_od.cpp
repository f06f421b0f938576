#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <random>

#include "test_util.hpp"

using namespace autoannot;

namespace {

Detection det(double x1, double y1, double x2, double y2, double c = 0.9) { return {{x1, y1, x2, y2}, "person", c}; }

double sse(const std::vector<double>& v, std::size_t a, std::size_t b) {
  double m = 0;
  for (std::size_t i = a; i < b; ++i) m += v[i];
  m /= double(b - a);
  double s = 0;
  for (std::size_t i = a; i < b; ++i) s += (v[i] - m) * (v[i] - m);
  return s;
}

// Best contiguous 3-partition of sorted values by enumeration.
std::pair<std::size_t, std::size_t> brute_three(const std::vector<double>& v) {
  double best = std::numeric_limits<double>::infinity();
  std::pair<std::size_t, std::size_t> arg{1, 2};
  for (std::size_t i = 1; i + 1 < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      const double c = sse(v, 0, i) + sse(v, i, j) + sse(v, j, v.size());
      if (c < best - 1e-12) {
        best = c;
        arg = {i, j};
      }
    }
  return arg;
}

}  // namespace

TEST(FilterAreaRatio, TinyBoxRemovedOnFullHd) {
  const std::vector<Detection> d{det(0, 0, 40, 20)};  // 800 px^2
  EXPECT_TRUE(filter_area_ratio(d, 1920.0 * 1080.0, {}).empty());
}

TEST(FilterAreaRatio, QuarterFrameRemoved) {
  const std::vector<Detection> d{det(0, 0, 960, 540)};
  EXPECT_TRUE(filter_area_ratio(d, 1920.0 * 1080.0, {}).empty());
}

TEST(FilterAreaRatio, FivePercentKeptInOrder) {
  const double side = std::sqrt(0.05 * 1920 * 1080);
  const std::vector<Detection> d{det(0, 0, side, side, 0.3), det(0, 0, 10, 10), det(5, 5, 5 + side, 5 + side, 0.7)};
  const auto out = filter_area_ratio(d, 1920.0 * 1080.0, {});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_DOUBLE_EQ(out[0].confidence, 0.3);
  EXPECT_DOUBLE_EQ(out[1].confidence, 0.7);
}

TEST(FilterAreaRatio, BoundsAreStrict) {
  SmartOdConfig c;
  c.theta_min_area = 0.01;
  c.theta_max_area = 0.25;
  const std::vector<Detection> d{det(0, 0, 10, 10), det(0, 0, 50, 50)};
  EXPECT_TRUE(filter_area_ratio(d, 10000.0, c).empty());
  EXPECT_THROW(filter_area_ratio(d, 0.0, c), Error);
}

TEST(Clustering, EmptyInput) { EXPECT_TRUE(cluster_and_build_rois({}, {}).empty()); }

TEST(Clustering, CloseCentersMergeIntoEnvelope) {
  const std::vector<Detection> d{det(0, 0, 20, 20), det(50, 0, 70, 30)};
  const auto rois = cluster_and_build_rois(d, {});
  ASSERT_EQ(rois.size(), 1u);
  EXPECT_EQ(rois[0].box, (BBox{0, 0, 70, 30}));
  EXPECT_EQ(rois[0].members, (std::vector<std::size_t>{0, 1}));
}

TEST(Clustering, FarCentersStaySeparate) {
  const std::vector<Detection> d{det(0, 0, 20, 20), det(500, 0, 520, 20)};
  const auto rois = cluster_and_build_rois(d, {});
  ASSERT_EQ(rois.size(), 2u);
  EXPECT_EQ(rois[0].box, d[0].box);
  EXPECT_EQ(rois[1].box, d[1].box);
}

TEST(Clustering, ChainsAreTransitive) {
  // 0-1 and 1-2 within 100 px, 0-2 not
  const std::vector<Detection> d{det(0, 0, 10, 10), det(90, 0, 100, 10), det(180, 0, 190, 10)};
  EXPECT_EQ(cluster_and_build_rois(d, {}).size(), 1u);
}

TEST(Clustering, MinSamplesMakesNoise) {
  SmartOdConfig c;
  c.mu_dbscan = 2;
  const std::vector<Detection> d{det(0, 0, 10, 10), det(20, 0, 30, 10), det(600, 0, 610, 10)};
  const auto rois = cluster_and_build_rois(d, c);
  ASSERT_EQ(rois.size(), 1u);
  EXPECT_EQ(rois[0].members, (std::vector<std::size_t>{0, 1}));
}

TEST(DynamicThreshold, MeanStd) {
  const std::vector<double> s{0.2, 0.4, 0.6, 0.8};
  EXPECT_NEAR(dynamic_threshold(s, ThresholdMethod::mean_std, 0.1), 0.5 - std::sqrt(0.05), 1e-4);
  EXPECT_NEAR(dynamic_threshold(s, ThresholdMethod::mean_std, 0.1), 0.2764, 1e-4);
}

TEST(DynamicThreshold, FloorClamp) {
  const std::vector<double> s{0.05, 0.05};
  EXPECT_DOUBLE_EQ(dynamic_threshold(s, ThresholdMethod::mean_std, 0.1), 0.1);
}

TEST(DynamicThreshold, KmeansThreeClusters) {
  const std::vector<double> s{0.9, 0.1, 0.52, 0.11, 0.91, 0.5};
  EXPECT_DOUBLE_EQ(dynamic_threshold(s, ThresholdMethod::kmeans, 0.0), 0.5);
  // the enumerated optimum agrees
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(brute_three(sorted), (std::pair<std::size_t, std::size_t>{2, 4}));
}

TEST(DynamicThreshold, KmeansMeanStdUsesLowestCluster) {
  const std::vector<double> s{0.1, 0.11, 0.5, 0.52, 0.9, 0.91};
  // lowest cluster {0.1, 0.11}: mean 0.105, sigma 0.005
  EXPECT_NEAR(dynamic_threshold(s, ThresholdMethod::kmeans_mean_std, 0.0), 0.115, 1e-12);
}

TEST(DynamicThreshold, DoubleKmeans) {
  // k=2 -> {0.1, 0.12, 0.4, 0.42} | {0.9, 0.95}; then {0.1, 0.12} | {0.4, 0.42}
  const std::vector<double> s{0.1, 0.12, 0.4, 0.42, 0.9, 0.95};
  EXPECT_DOUBLE_EQ(dynamic_threshold(s, ThresholdMethod::double_kmeans, 0.0), 0.12);
}

TEST(DynamicThreshold, FewScoresFallBackToMeanStd) {
  const std::vector<double> s{0.3, 0.7};
  EXPECT_DOUBLE_EQ(dynamic_threshold(s, ThresholdMethod::kmeans, 0.0),
                   dynamic_threshold(s, ThresholdMethod::mean_std, 0.0));
  const std::vector<double> one{0.4};
  EXPECT_DOUBLE_EQ(dynamic_threshold(one, ThresholdMethod::double_kmeans, 0.05), 0.05);
}

TEST(DynamicThreshold, EmptyThrows) {
  EXPECT_THROW(dynamic_threshold({}, ThresholdMethod::mean_std, 0.1), Error);
}

TEST(DynamicThreshold, DpAgreesWithEnumeration) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> v(3 + rng() % 10);
    for (auto& x : v) x = u(rng);
    std::sort(v.begin(), v.end());
    const auto [i, j] = brute_three(v);
    EXPECT_DOUBLE_EQ(dynamic_threshold(v, ThresholdMethod::kmeans, 0.0), v[i]);
    (void)j;
  }
}

TEST(VerifyRoi, AcceptRule) {
  const std::vector<Detection> d{det(0, 0, 10, 10, 0.9)};
  const Roi roi{d[0].box, {0}};
  const std::vector<Detection> sliced{det(0, 0, 10, 20)};  // IoU 0.5
  EXPECT_EQ(verify_roi(roi, d, sliced, 0.3, {}).size(), 1u);

  const std::vector<Detection> low{det(0, 0, 10, 10, 0.2)};
  EXPECT_TRUE(verify_roi(roi, low, sliced, 0.3, {}).empty());

  const std::vector<Detection> far{det(50, 50, 60, 60)};
  EXPECT_TRUE(verify_roi(roi, d, far, 0.3, {}).empty());
}

TEST(VerifyRoi, ComparisonsAreStrict) {
  const std::vector<Detection> d{det(0, 0, 10, 10, 0.3)};
  const Roi roi{d[0].box, {0}};
  const std::vector<Detection> same{det(0, 0, 10, 10)};
  EXPECT_TRUE(verify_roi(roi, d, same, 0.3, {}).empty());
  SmartOdConfig c;
  c.theta_v = 1.0;
  EXPECT_TRUE(verify_roi(roi, d, same, 0.1, c).empty());
}

TEST(Nms, SuppressesLowerScoringOverlap) {
  const auto kept = nms({det(0, 0, 10, 10, 0.5), det(1, 0, 11, 10, 0.8), det(50, 50, 60, 60, 0.1)}, 0.1);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_DOUBLE_EQ(kept[0].confidence, 0.8);
  EXPECT_DOUBLE_EQ(kept[1].confidence, 0.1);
}

TEST(SliceGrid, CoversRegionWithLastTileAligned) {
  const auto tiles = slice_grid({0, 0, 600, 300}, 256, 0.2);
  // x starts 0, 204.8, 344; y starts 0, 44
  ASSERT_EQ(tiles.size(), 6u);
  EXPECT_EQ(tiles.back(), (BBox{344, 44, 600, 300}));
  EXPECT_EQ(slice_grid({10, 10, 50, 50}, 256, 0.2), (std::vector<BBox>{{10, 10, 50, 50}}));
}

TEST(RunSmartOd, ZeroNoiseOracleAcceptsEverything) {
  const auto gt = generate_synthetic_sequence(testutil::small_world(4, 6, 5));
  const OracleDetector d(gt, {});
  for (int t = 0; t < 5; ++t) {
    const auto acc = run_smart_od(d, t, {});
    const auto s = score_detections(acc, gt[static_cast<std::size_t>(t)], 0.5);
    EXPECT_EQ(s.fp, 0);
    EXPECT_EQ(s.fn, 0);
    EXPECT_EQ(static_cast<std::size_t>(s.tp), gt[static_cast<std::size_t>(t)].objects.size());
  }
}

TEST(RunSmartOd, AcceptedConfidencesExceedThreshold) {
  auto w = testutil::small_world(8, 6, 10, 640, 480);
  const auto gt = generate_synthetic_sequence(w);
  DetectionNoise n;
  n.fp_rate = 5;
  n.fp_confidence_range = {0.0, 0.2};
  n.tp_confidence_range = {0.6, 0.95};
  n.rng_seed = 3;
  const OracleDetector d(gt, n);
  SmartOdConfig c;
  c.threshold_method = ThresholdMethod::mean_std;
  for (int t = 0; t < 10; ++t) {
    const BBox frame{0, 0, 640, 480};
    std::vector<double> confs;
    for (const auto& x : filter_area_ratio(d.detect(t, frame, {}), frame.area(), c)) confs.push_back(x.confidence);
    if (confs.empty()) continue;
    const double th = dynamic_threshold(confs, c.threshold_method, c.theta_min);
    for (const auto& a : run_smart_od(d, t, c)) EXPECT_GT(a.confidence, th);
  }
}

TEST(RunSmartOd, VerificationReducesFalsePositives) {
  const auto gt = generate_synthetic_sequence(testutil::small_world(21, 6, 20, 640, 480));
  DetectionNoise n;
  n.fp_rate = 5;
  n.fp_confidence_range = {0.0, 0.3};
  n.rng_seed = 9;
  const OracleDetector d(gt, n);
  SmartOdConfig on, off;
  off.verification = false;
  DetectionScore s_on, s_off;
  for (int t = 0; t < 20; ++t) {
    s_on += score_detections(run_smart_od(d, t, on), gt[static_cast<std::size_t>(t)], 0.5);
    s_off += score_detections(run_smart_od(d, t, off), gt[static_cast<std::size_t>(t)], 0.5);
  }
  EXPECT_LT(s_on.fp, s_off.fp);
}

TEST(SmartOdConfigCheck, RejectsInvalid) {
  SmartOdConfig c;
  c.theta_min_area = 0.3;
  EXPECT_THROW(validate(c), Error);
  c = {};
  c.mu_dbscan = 0;
  EXPECT_THROW(validate(c), Error);
  c = {};
  c.slice_overlap = 1.0;
  EXPECT_THROW(validate(c), Error);
  EXPECT_THROW(parse_threshold_method("otsu"), Error);
  EXPECT_EQ(parse_threshold_method("double_kmeans"), ThresholdMethod::double_kmeans);
}
