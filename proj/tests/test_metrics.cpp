#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "yolors/metrics.hpp"
#include "yolors/random.hpp"

using namespace yolors;

namespace {

Box random_box(RandomSource& rng, double span = 10.0) {
  const double x1 = rng.uniform(0, span), y1 = rng.uniform(0, span);
  return Box{x1, y1, x1 + rng.uniform(0.5, span / 2), y1 + rng.uniform(0.5, span / 2)};
}

// Independent exhaustive AP oracle: precision/recall per rank computed
// directly, every recall grid point answered by a full scan.
double ap_oracle(std::vector<Detection> dets, const std::vector<GroundTruth>& truths,
                 double thr) {
  if (truths.empty() || dets.empty()) return 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<char> used(truths.size(), 0);
  std::vector<double> prec, rec;
  int tp = 0;
  for (size_t r = 0; r < dets.size(); ++r) {
    double best = thr;
    int pick = -1;
    for (size_t g = 0; g < truths.size(); ++g) {
      if (used[g] || truths[g].class_id != dets[r].class_id ||
          truths[g].image_id != dets[r].image_id)
        continue;
      const double v = iou(dets[r].box, truths[g].box);
      if (v >= best) {
        best = v;
        pick = static_cast<int>(g);
      }
    }
    if (pick >= 0) {
      used[static_cast<size_t>(pick)] = 1;
      ++tp;
    }
    prec.push_back(double(tp) / double(r + 1));
    rec.push_back(double(tp) / double(truths.size()));
  }
  double acc = 0.0;
  for (int s = 0; s <= 100; ++s) {
    const double want = s / 100.0;
    double p = 0.0;
    for (size_t r = 0; r < prec.size(); ++r)
      if (rec[r] >= want - 1e-12) p = std::max(p, prec[r]);
    acc += p;
  }
  return acc / 101.0;
}

}  // namespace

TEST_CASE("iou") {
  Box a{0, 0, 2, 2};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{3, 3, 5, 5}) == 0.0);
  // area enumeration by hand: inter 1x2 = 2, union 4 + 4 - 2 = 6
  CHECK(iou(a, Box{1, 0, 3, 2}) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(iou(a, Box{1, 0, 3, 2}) == iou(Box{1, 0, 3, 2}, a));
  CHECK_THROWS_AS(iou(a, Box{1, 1, 1, 2}), std::invalid_argument);
}

TEST_CASE("match_detections") {
  SUBCASE("perfect one-to-one matching") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}, {1, {4, 4, 6, 6}, 0}};
    std::vector<Detection> dets = {{0, 0.9, {0, 0, 2, 2}, 0}, {1, 0.8, {4, 4, 6, 6}, 0}};
    MatchResult m = match_detections(dets, gts, 0.5);
    CHECK(m.tp == 2);
    CHECK(m.fp == 0);
    CHECK(m.fn == 0);
  }
  SUBCASE("no detections") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}, {0, {3, 3, 5, 5}, 0}};
    MatchResult m = match_detections({}, gts, 0.5);
    CHECK(m.tp == 0);
    CHECK(m.fp == 0);
    CHECK(m.fn == 2);
  }
  SUBCASE("a truth can be claimed once") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}};
    std::vector<Detection> dets = {{0, 0.9, {0, 0, 2, 2}, 0}, {0, 0.8, {0, 0, 2, 2}, 0}};
    MatchResult m = match_detections(dets, gts, 0.5);
    CHECK(m.tp == 1);
    CHECK(m.fp == 1);
    CHECK(m.det_is_tp == std::vector<int>{1, 0});  // the higher score wins
  }
  SUBCASE("counting identities hold on random instances") {
    RandomSource rng(1);
    for (int iter = 0; iter < 100; ++iter) {
      std::vector<GroundTruth> gts;
      std::vector<Detection> dets;
      const int ng = rng.uniform_int(0, 6), nd = rng.uniform_int(0, 6);
      for (int i = 0; i < ng; ++i) gts.push_back({rng.uniform_int(0, 2), random_box(rng), 0});
      for (int i = 0; i < nd; ++i)
        dets.push_back({rng.uniform_int(0, 2), rng.uniform(), random_box(rng), 0});
      MatchResult m = match_detections(dets, gts, 0.5);
      CHECK(m.tp + m.fp == nd);
      CHECK(m.tp + m.fn == ng);
    }
  }
}

TEST_CASE("precision_recall and f1") {
  SUBCASE("direct ratios") {
    MatchResult m;
    m.tp = 8;
    m.fp = 2;
    m.fn = 2;
    PrResult r = precision_recall(m);
    CHECK(r.precision == doctest::Approx(0.8));
    CHECK(r.recall == doctest::Approx(0.8));
  }
  SUBCASE("degenerate cases are flagged") {
    MatchResult m;
    m.tp = 0;
    m.fp = 5;
    m.fn = 0;
    PrResult r = precision_recall(m);
    CHECK(r.precision == 0.0);
    CHECK(r.precision_defined);
    CHECK_FALSE(r.recall_defined);
  }
  SUBCASE("p=0.9 r=1.0") {
    MatchResult m;
    m.tp = 90;
    m.fp = 10;
    m.fn = 0;
    PrResult r = precision_recall(m);
    CHECK(r.precision == doctest::Approx(0.9));
    CHECK(r.recall == doctest::Approx(1.0));
  }
  SUBCASE("f1 examples") {
    CHECK(f1(0.8, 0.8) == doctest::Approx(0.8).epsilon(1e-12));
    // the headline row: harmonic mean gives 0.905, matching the reported 0.90
    CHECK(f1(0.921, 0.890) == doctest::Approx(0.905).epsilon(1.2e-3));
    CHECK(f1(1.0, 0.0) == 0.0);
  }
  SUBCASE("f1 symmetry and bounds") {
    RandomSource rng(2);
    for (int iter = 0; iter < 200; ++iter) {
      const double p = rng.uniform(), r = rng.uniform();
      CHECK(f1(p, r) == f1(r, p));
      CHECK(f1(p, r) <= (p + r) / 2 + 1e-12);
      CHECK(f1(p, p) == doctest::Approx(p).epsilon(1e-12));
    }
  }
}

TEST_CASE("average_precision") {
  SUBCASE("perfect detector") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}, {0, {5, 5, 7, 7}, 1}};
    std::vector<Detection> dets = {{0, 0.9, {0, 0, 2, 2}, 0}, {0, 0.8, {5, 5, 7, 7}, 1}};
    CHECK(average_precision(dets, gts, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("no detections") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}};
    CHECK(average_precision({}, gts, 0.5) == 0.0);
  }
  SUBCASE("rank pattern TP FP TP over 2 truths, frozen from the oracle") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}, {0, {5, 5, 7, 7}, 0}};
    std::vector<Detection> dets = {{0, 0.9, {0, 0, 2, 2}, 0},
                                   {0, 0.8, {10, 10, 12, 12}, 0},
                                   {0, 0.7, {5, 5, 7, 7}, 0}};
    const double expect = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;  // 0.834983...
    CHECK(ap_oracle(dets, gts, 0.5) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(average_precision(dets, gts, 0.5) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("matches the exhaustive oracle on random instances") {
    RandomSource rng(3);
    for (int iter = 0; iter < 150; ++iter) {
      std::vector<GroundTruth> gts;
      std::vector<Detection> dets;
      const int ng = rng.uniform_int(1, 5), nd = rng.uniform_int(0, 10);
      for (int i = 0; i < ng; ++i) gts.push_back({0, random_box(rng), rng.uniform_int(0, 1)});
      for (int i = 0; i < nd; ++i) {
        // half the detections hover near a truth so matches actually happen
        if (i % 2 == 0 && !gts.empty()) {
          const auto& g = gts[static_cast<size_t>(i) % gts.size()];
          const double jx = rng.uniform(-0.4, 0.4), jy = rng.uniform(-0.4, 0.4);
          dets.push_back(
              {0, rng.uniform(), {g.box.x1 + jx, g.box.y1 + jy, g.box.x2 + jx, g.box.y2 + jy},
               g.image_id});
        } else {
          dets.push_back({0, rng.uniform(), random_box(rng), rng.uniform_int(0, 1)});
        }
      }
      const double got = average_precision(dets, gts, 0.5);
      CHECK(got == doctest::Approx(ap_oracle(dets, gts, 0.5)).epsilon(1e-9));
    }
  }
  SUBCASE("invariant under monotone score transformations") {
    RandomSource rng(4);
    std::vector<GroundTruth> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 4; ++i) gts.push_back({0, random_box(rng), 0});
    for (int i = 0; i < 8; ++i) {
      Box b = gts[static_cast<size_t>(i % 4)].box;
      const double j = rng.uniform(-0.6, 0.6);
      dets.push_back({0, rng.uniform(0.01, 0.99), {b.x1 + j, b.y1, b.x2 + j, b.y2}, 0});
    }
    const double base = average_precision(dets, gts, 0.5);
    auto transformed = dets;
    for (auto& d : transformed) d.score = std::exp(3.0 * d.score) + 7.0;  // strictly monotone
    CHECK(average_precision(transformed, gts, 0.5) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("map_at") {
  SUBCASE("perfect detections give 1.0 at every threshold") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}, {1, {5, 5, 7, 7}, 0}};
    std::vector<Detection> dets = {{0, 0.9, {0, 0, 2, 2}, 0}, {1, 0.8, {5, 5, 7, 7}, 0}};
    MapResult r = map_at(dets, gts);
    CHECK(r.map50 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.map50_95 == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("single class mAP equals its AP") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}, {0, {5, 5, 7, 7}, 0}};
    std::vector<Detection> dets = {{0, 0.9, {0.2, 0, 2.2, 2}, 0}, {0, 0.8, {9, 9, 11, 11}, 0}};
    MapResult r = map_at(dets, gts, {0.5});
    CHECK(r.map50 == doctest::Approx(average_precision(dets, gts, 0.5)).epsilon(1e-12));
  }
  SUBCASE("two classes average their APs") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}, {1, {5, 5, 7, 7}, 0}};
    std::vector<Detection> dets = {{0, 0.9, {0, 0, 2, 2}, 0}};  // class 1 never detected
    MapResult r = map_at(dets, gts, {0.5});
    CHECK(r.map50 == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.map50_95 <= 0.5 + 1e-12);
  }
  SUBCASE("map50_95 never exceeds the best per-threshold mAP") {
    RandomSource rng(6);
    std::vector<GroundTruth> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 5; ++i) gts.push_back({i % 2, random_box(rng), 0});
    for (int i = 0; i < 9; ++i) {
      Box b = gts[static_cast<size_t>(i % 5)].box;
      const double j = rng.uniform(-0.5, 0.5);
      dets.push_back({i % 2, rng.uniform(), {b.x1 + j, b.y1 + j, b.x2 + j, b.y2 + j}, 0});
    }
    MapResult r = map_at(dets, gts);
    double best = 0.0;
    for (size_t t = 0; t < r.thresholds.size(); ++t) {
      double m = 0.0;
      for (const auto& [c, row] : r.ap_per_class) m += row[t];
      best = std::max(best, m / static_cast<double>(r.ap_per_class.size()));
    }
    CHECK(r.map50_95 <= best + 1e-12);
  }
}

TEST_CASE("confusion_matrix") {
  SUBCASE("perfect predictions are diagonal") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}, {1, {5, 5, 7, 7}, 0}};
    std::vector<Detection> dets = {{0, 0.9, {0, 0, 2, 2}, 0}, {1, 0.8, {5, 5, 7, 7}, 0}};
    auto m = confusion_matrix(dets, gts, 2, 0.5, 0.25);
    CHECK(m[0][0] == 1);
    CHECK(m[1][1] == 1);
    CHECK(m[0][1] == 0);
    CHECK(m[2][0] == 0);
    CHECK(m[0][2] == 0);
  }
  SUBCASE("zero detections put all mass in the background column") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}, {1, {5, 5, 7, 7}, 0}};
    auto m = confusion_matrix({}, gts, 2, 0.5, 0.25);
    CHECK(m[0][2] == 1);
    CHECK(m[1][2] == 1);
  }
  SUBCASE("true-class row sums equal truth counts") {
    RandomSource rng(7);
    for (int iter = 0; iter < 50; ++iter) {
      std::vector<GroundTruth> gts;
      std::vector<Detection> dets;
      const int ng = rng.uniform_int(0, 8), nd = rng.uniform_int(0, 8);
      std::vector<int> count(3, 0);
      for (int i = 0; i < ng; ++i) {
        const int c = rng.uniform_int(0, 2);
        ++count[static_cast<size_t>(c)];
        gts.push_back({c, random_box(rng), 0});
      }
      for (int i = 0; i < nd; ++i)
        dets.push_back({rng.uniform_int(0, 2), rng.uniform(0.3, 1.0), random_box(rng), 0});
      auto m = confusion_matrix(dets, gts, 3, 0.5, 0.25);
      for (int c = 0; c < 3; ++c) {
        int row = 0;
        for (int p = 0; p <= 3; ++p) row += m[static_cast<size_t>(c)][static_cast<size_t>(p)];
        CHECK(row == count[static_cast<size_t>(c)]);
      }
    }
  }
  SUBCASE("a cross-class hit lands off-diagonal") {
    std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}};
    std::vector<Detection> dets = {{1, 0.9, {0, 0, 2, 2}, 0}};
    auto m = confusion_matrix(dets, gts, 2, 0.5, 0.25);
    CHECK(m[0][1] == 1);
  }
}

TEST_CASE("evaluate produces a coherent JSON report") {
  std::vector<GroundTruth> gts = {{0, {0, 0, 2, 2}, 0}, {1, {5, 5, 7, 7}, 0}, {0, {1, 5, 3, 8}, 1}};
  std::vector<Detection> dets = {{0, 0.9, {0, 0, 2, 2}, 0},
                                 {1, 0.85, {5, 5, 7, 7}, 0},
                                 {0, 0.6, {1.2, 5, 3.2, 8}, 1},
                                 {1, 0.4, {8, 8, 9, 9}, 1}};
  EvalReport r = evaluate(dets, gts, 2);
  CHECK(r.precision > 0.0);
  CHECK(r.precision <= 1.0);
  CHECK(r.recall == doctest::Approx(1.0));
  auto j = eval_report_to_json(r);
  for (const char* key : {"precision", "recall", "f1", "ap", "map50", "map50_95", "confusion"})
    CHECK(j.contains(key));
  CHECK(j["precision"].get<double>() <= 1.0);  // fractions, not percentages
  CHECK(j["map50"].get<double>() <= 1.0);
  CHECK(j["confusion"].size() == 3);
}
