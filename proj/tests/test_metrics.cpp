#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "trident/trident.hpp"
#include "oracles.hpp"

using namespace trident;

namespace {

Detection det(BoxXYWH b, Real score) { return {b, score, 0, 0}; }

EvalConfig only(Real t) {
  EvalConfig c;
  c.iou_thresholds = {t};
  return c;
}

}  // namespace

TEST(Match, Examples) {
  GroundTruth gt{{0, 0, 10, 10}, 0};
  auto at = [&](Real x) { return det({x, 0, 10, 10}, 0.9); };
  // x = 2.5 gives IoU 0.6, x = 4.3 about 0.4.
  EXPECT_EQ(match_detections({at(2.5)}, {gt}, 0.5).det_to_gt[0], 0);
  EXPECT_EQ(match_detections({at(4.3)}, {gt}, 0.5).det_to_gt[0], -1);
  auto m = match_detections({det({0, 0, 10, 10}, 0.9), det({0, 0, 10, 10}, 0.8)}, {gt}, 0.5);
  EXPECT_EQ(m.det_to_gt[0], 0);
  EXPECT_EQ(m.det_to_gt[1], -1);
  EXPECT_THROW(match_detections({det({0, 0, 1, 1}, 0.1), det({0, 0, 1, 1}, 0.2)}, {gt}, 0.5), Error);
}

TEST(AP, PerfectAndEmpty) {
  EvalImage img{0, {{{0, 0, 10, 10}, 0}, {{50, 50, 40, 40}, 0}}, {}};
  EXPECT_EQ(average_precision({img}).ap, 0.0);
  img.dets = {det({0, 0, 10, 10}, 0.9), det({50, 50, 40, 40}, 0.8)};
  auto r = average_precision({img});
  EXPECT_DOUBLE_EQ(r.ap, 1.0);
  EXPECT_DOUBLE_EQ(r.ap50, 1.0);
  EXPECT_DOUBLE_EQ(r.ap75, 1.0);
}

TEST(AP, TwoGtOneCorrectDetection) {
  // Recall 0.5 at precision 1: recall levels 0.00..0.50 score 1, the rest 0.
  EvalImage img{0, {{{0, 0, 10, 10}, 0}, {{50, 50, 10, 10}, 0}}, {det({0, 0, 10, 10}, 0.9)}};
  EXPECT_DOUBLE_EQ(average_precision({img}, only(0.5)).ap, 51.0 / 101.0);
}

TEST(AP, EmptyBucketIsUndefined) {
  EvalImage img{0, {{{0, 0, 10, 10}, 0}}, {det({0, 0, 10, 10}, 0.9)}};
  auto r = average_precision({img});
  EXPECT_DOUBLE_EQ(r.ap_s, 1.0);
  EXPECT_EQ(r.ap_m, kUndefinedAP);
  EXPECT_EQ(r.ap_l, kUndefinedAP);
  std::ostringstream os;
  write_results_header(os);
  write_results_row(os, "m", r);
  EXPECT_EQ(os.str(), "method,AP,AP50,AP75,AP_s,AP_m,AP_l\nm,1.0000,1.0000,1.0000,1.0000,nan,nan\n");
}

TEST(AP, OutOfBucketGtIsIgnored) {
  // A large GT detected perfectly must not count as a false positive for AP_s.
  EvalImage img{0, {{{0, 0, 10, 10}, 0}, {{20, 20, 100, 100}, 0}},
                {det({20, 20, 100, 100}, 0.95), det({0, 0, 10, 10}, 0.5)}};
  auto r = average_precision({img});
  EXPECT_DOUBLE_EQ(r.ap_s, 1.0);
  EXPECT_DOUBLE_EQ(r.ap_l, 1.0);
}

TEST(AP, MatchesOracleOnEveryMatchPattern) {
  // Disjoint GT squares; each detection lands on one of them or on empty
  // space. Enumerates every assignment for up to 4 GT and 6 detections.
  std::size_t cases = 0;
  for (std::size_t ng = 1; ng <= 4; ++ng)
    for (std::size_t nd = 0; nd <= 6; ++nd)
      oracle::for_each_match_pattern(ng, nd, [&](const EvalImage& img) {
        EXPECT_DOUBLE_EQ(average_precision({img}, only(0.5)).ap, oracle::ap({img}, 0.5)) << ng << " gt, " << nd << " dets";
        ++cases;
      });
  EXPECT_GT(cases, 20000u);
}

TEST(AP, MatchesOracleOnRandomOverlaps) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<Real> pos(0, 30), size(8, 30), score(0, 1);
  std::uniform_int_distribution<int> ng(1, 4), nd(0, 6);
  for (int trial = 0; trial < 3000; ++trial) {
    std::vector<EvalImage> images(2);
    for (auto& img : images) {
      for (int g = ng(rng); g > 0; --g) img.gts.push_back({{pos(rng), pos(rng), size(rng), size(rng)}, 0});
      for (int d = nd(rng); d > 0; --d) img.dets.push_back(det({pos(rng), pos(rng), size(rng), size(rng)}, score(rng)));
    }
    for (Real t : {0.3, 0.5, 0.75})
      EXPECT_NEAR(average_precision(images, only(t)).ap, oracle::ap(images, t), 1e-12) << "trial " << trial;
  }
}

TEST(AP, MonotoneInCorrectAndDuplicateDetections) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<Real> pos(0, 60), size(8, 30), score(0.01, 0.99);
  for (int trial = 0; trial < 300; ++trial) {
    EvalImage img;
    for (int g = 0; g < 3; ++g) img.gts.push_back({{pos(rng), pos(rng), size(rng), size(rng)}, 0});
    img.gts.push_back({{200, 200, 20, 20}, 0});  // nothing below reaches it
    for (int d = 0; d < 4; ++d) img.dets.push_back(det({pos(rng), pos(rng), size(rng), size(rng)}, score(rng)));
    auto base = average_precision({img}).ap;
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
    auto more = img;
    more.dets.push_back(det(img.gts[3].box, score(rng)));
    EXPECT_GE(average_precision({more}).ap, base - 1e-12);
    auto dup = img;
    dup.dets.push_back(det({500, 500, 10, 10}, score(rng)));
    EXPECT_LE(average_precision({dup}).ap, base + 1e-12);
  }
}

TEST(EvalConfig, RejectsBadThresholds) {
  EvalConfig c;
  c.iou_thresholds = {0.5, 0.5};
  EXPECT_THROW(c.validate(), Error);
  c.iou_thresholds = {1.5};
  EXPECT_THROW(c.validate(), Error);
}
