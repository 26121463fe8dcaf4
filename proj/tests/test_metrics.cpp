#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diffguide/metrics.hpp"

using namespace diffguide;

namespace {

Detection det(double x1, double y1, double x2, double y2, double score,
              const std::string& img = "a", int label = 0) {
  Detection d;
  d.box = {x1, y1, x2, y2};
  d.score = score;
  d.image_id = img;
  d.label = label;
  return d;
}

GroundTruth single_gt(const Box& b, const std::string& img = "a", int label = 0) {
  GroundTruth g;
  g[img].boxes.push_back(b);
  g[img].labels.push_back(label);
  return g;
}

}  // namespace

TEST_CASE("ap corner cases") {
  GroundTruth g = single_gt({0, 0, 10, 10});
  // perfect single detection
  CHECK(ap_at_iou({det(0, 0, 10, 10, 0.9)}, g, 0.5).ap == doctest::Approx(1.0));
  // detection misses entirely
  CHECK(ap_at_iou({det(50, 50, 60, 60, 0.9)}, g, 0.5).ap == doctest::Approx(0.0));
  // no detections, GT present
  ApResult miss = ap_at_iou({}, g, 0.5);
  CHECK(miss.ap == 0.0);
  CHECK_FALSE(miss.empty);
  // neither detections nor GT -> marked empty
  CHECK(ap_at_iou({}, GroundTruth{}, 0.5).empty);
  // detection present, no GT -> zero but evaluable
  ApResult fp = ap_at_iou({det(0, 0, 1, 1, 0.5)}, GroundTruth{}, 0.5);
  CHECK(fp.ap == 0.0);
  CHECK_FALSE(fp.empty);
}

TEST_CASE("hand-computed PR table: two GT, three detections") {
  GroundTruth g;
  g["a"].boxes = {{0, 0, 10, 10}, {20, 20, 30, 30}};
  g["a"].labels = {0, 0};
  std::vector<Detection> dets = {
      det(0, 0, 10, 10, 0.9),    // TP
      det(50, 50, 60, 60, 0.8),  // FP
      det(20, 20, 30, 30, 0.7),  // TP
  };
  // tp = [1,0,1]; recall [.5,.5,1]; precision [1,.5,2/3]
  // envelope [1,2/3,2/3]; AP = .5*1 + .5*(2/3) = 5/6
  CHECK(ap_at_iou(dets, g, 0.5).ap == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("each GT matches at most one detection") {
  GroundTruth g = single_gt({0, 0, 10, 10});
  std::vector<Detection> dets = {det(0, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.8)};
  // second detection is a duplicate -> FP; recall [1,1], precision [1,.5]
  CHECK(ap_at_iou(dets, g, 0.5).ap == doctest::Approx(1.0));
}

TEST_CASE("mean_ap averages per-class AP and skips classes without GT") {
  GroundTruth g;
  g["a"].boxes = {{0, 0, 10, 10}, {20, 20, 30, 30}};
  g["a"].labels = {0, 1};
  std::vector<Detection> dets = {
      det(0, 0, 10, 10, 0.9, "a", 0),     // class 0: perfect -> 1.0
      det(40, 40, 50, 50, 0.9, "a", 1),   // class 1: miss -> 0.0
  };
  CHECK(map50(dets, g, {0, 1}) == doctest::Approx(0.5));
  // class 2 has no GT and must not drag the mean
  CHECK(map50(dets, g, {0, 1, 2}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(map50(dets, g, {2}), std::runtime_error);
}

TEST_CASE("ap_range is 1 for exact boxes and below map50 for loose ones") {
  GroundTruth g = single_gt({0, 0, 10, 10});
  std::vector<Detection> exact = {det(0, 0, 10, 10, 0.9)};
  CHECK(ap_range(exact, g, {0}) == doctest::Approx(1.0));

  // IoU = 0.7 box: counts at thresholds .5..  .7, fails above
  std::vector<Detection> loose = {det(0, 0, 10, 7, 0.9)};
  double r = ap_range(loose, g, {0});
  double m50 = map50(loose, g, {0});
  CHECK(m50 == doctest::Approx(1.0));
  CHECK(r < m50);
  CHECK(r == doctest::Approx(0.5));  // passes 5 of 10 thresholds
}

TEST_CASE("removing a false positive never decreases AP") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    GroundTruth g;
    int ngt = 1 + static_cast<int>(rng.uniform_int(0, 2));
    for (int i = 0; i < ngt; ++i) {
      double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
      g["a"].boxes.push_back({x, y, x + 10, y + 10});
      g["a"].labels.push_back(0);
    }
    std::vector<Detection> dets;
    for (int i = 0; i < ngt; ++i)
      if (rng.uniform() < 0.7) {
        Box b = g["a"].boxes[static_cast<size_t>(i)];
        dets.push_back(det(b[0], b[1], b[2], b[3], rng.uniform(0.1, 1.0)));
      }
    // add one far-away FP at random confidence
    std::vector<Detection> with_fp = dets;
    with_fp.push_back(det(500, 500, 510, 510, rng.uniform(0.1, 1.0)));
    CHECK(ap_at_iou(dets, g, 0.5).ap >= ap_at_iou(with_fp, g, 0.5).ap - 1e-12);
  }
}

TEST_CASE("mpc: uniform mean over all 75 cells, missing cells rejected") {
  CorruptionResults r;
  double acc = 0;
  int i = 0;
  for (int k = 0; k < kNumCorruptionKinds; ++k)
    for (int s = 1; s <= kNumSeverities; ++s) {
      double v = (i++ % 10) / 10.0;
      r[{k, s}] = v;
      acc += v;
    }
  CHECK(mpc(r) == doctest::Approx(acc / 75.0).epsilon(1e-12));

  r.erase({3, 2});
  CHECK_THROWS_WITH_AS(mpc(r), doctest::Contains("defocus_blur/2"), std::runtime_error);
}

TEST_CASE("rpc arithmetic including the published-style ratio") {
  CHECK(rpc(0.5, 1.0) == doctest::Approx(0.5));
  // 24.1 / 34.7 = 69.45% (robustness ratio quoted to one decimal)
  CHECK(rpc(24.1, 34.7) * 100.0 == doctest::Approx(69.45).epsilon(2e-3));
  CHECK_THROWS_AS(rpc(0.5, 0.0), std::invalid_argument);
}

TEST_CASE("d_ece: perfectly calibrated and known-gap cases") {
  GroundTruth g;
  for (int i = 0; i < 5; ++i) {
    std::string id = "im" + std::to_string(i);
    g[id].boxes.push_back({0, 0, 10, 10});
    g[id].labels.push_back(0);
  }
  // five hits at confidence 1.0 -> precision 1.0 in the top bin, gap 0
  std::vector<Detection> perfect;
  for (int i = 0; i < 5; ++i)
    perfect.push_back(det(0, 0, 10, 10, 1.0, "im" + std::to_string(i)));
  CHECK(d_ece(perfect, g).d_ece == doctest::Approx(0.0));

  // four hits and one miss, all at confidence 1.0 -> |0.8 - 1.0| = 0.2
  std::vector<Detection> over = perfect;
  over[4].box = {100, 100, 110, 110};
  CHECK(d_ece(over, g).d_ece == doctest::Approx(0.2).epsilon(1e-12));

  CalibrationReport none = d_ece({}, g);
  CHECK(none.empty);
  CHECK_THROWS_AS(d_ece(perfect, g, 0), std::invalid_argument);
}

TEST_CASE("d_ece bins split by confidence") {
  GroundTruth g = single_gt({0, 0, 10, 10}, "a");
  // one correct at 0.95, one incorrect at 0.15: two occupied bins,
  // weights 1/2 each, gaps |1-0.95| and |0-0.15|
  std::vector<Detection> dets = {det(0, 0, 10, 10, 0.95, "a"),
                                 det(70, 70, 80, 80, 0.15, "a")};
  CalibrationReport rep = d_ece(dets, g);
  CHECK(rep.d_ece == doctest::Approx(0.5 * 0.05 + 0.5 * 0.15).epsilon(1e-12));
  CHECK(rep.bins[1].count == 1);
  CHECK(rep.bins[9].count == 1);
}
