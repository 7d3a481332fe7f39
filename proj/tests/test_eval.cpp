#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "polygcn/eval.hpp"
#include "polygcn/rng.hpp"

using namespace polygcn;

namespace {

Polygon square(double x0, double y0, double side) {
  return {{x0, y0}, {x0 + side, y0}, {x0 + side, y0 + side}, {x0, y0 + side}};
}

Polygon rect(double x0, double y0, double w, double h) {
  return {{x0, y0}, {x0 + w, y0}, {x0 + w, y0 + h}, {x0, y0 + h}};
}

// Exact IoU of two axis-aligned rectangles.
double rect_iou(double ax, double ay, double aw, double ah, double bx, double by, double bw,
                double bh) {
  const double iw = std::max(0.0, std::min(ax + aw, bx + bw) - std::max(ax, bx));
  const double ih = std::max(0.0, std::min(ay + ah, by + bh) - std::max(ay, by));
  const double inter = iw * ih;
  return inter / (aw * ah + bw * bh - inter);
}

}  // namespace

TEST_CASE("polygon IoU") {
  SUBCASE("half-overlapping squares") {
    CHECK(std::fabs(polygon_iou(square(0, 0, 10), square(5, 0, 10)) - 1.0 / 3.0) <= 0.01);
  }
  SUBCASE("identical and disjoint") {
    const Polygon p{{3, 1}, {9, 2}, {7, 8}, {4, 6}};
    CHECK(polygon_iou(p, p) == 1.0);
    CHECK(polygon_iou(square(0, 0, 4), square(10, 10, 4)) == 0.0);
  }
  SUBCASE("random rectangles against the exact value") {
    SeededRng rng(50);
    for (int k = 0; k < 100; ++k) {
      const double ax = rng.uniform(0, 20), ay = rng.uniform(0, 20);
      const double aw = rng.uniform(5, 20), ah = rng.uniform(5, 20);
      const double bx = rng.uniform(0, 20), by = rng.uniform(0, 20);
      const double bw = rng.uniform(5, 20), bh = rng.uniform(5, 20);
      const double want = rect_iou(ax, ay, aw, ah, bx, by, bw, bh);
      const IouDetail d = polygon_iou_detail(rect(ax, ay, aw, ah), rect(bx, by, bw, bh));
      CHECK(std::fabs(d.iou - want) <= 0.02);
      CHECK(d.consistent);
      // symmetric and bounded
      CHECK(polygon_iou(rect(bx, by, bw, bh), rect(ax, ay, aw, ah)) == d.iou);
      CHECK(d.iou >= 0.0);
      CHECK(d.iou <= 1.0);
    }
  }
  SUBCASE("orientation does not matter") {
    Polygon p = square(0, 0, 10), q = square(4, 3, 10);
    const double a = polygon_iou(p, q);
    std::reverse(q.begin(), q.end());
    CHECK(polygon_iou(p, q) == a);
  }
  SUBCASE("area consistency is reported") {
    const IouDetail d = polygon_iou_detail(square(0, 0, 10), square(2, 2, 10));
    CHECK(std::fabs(d.shoelace_area_p - 100.0) <= 1e-12);
    CHECK(std::fabs(d.raster_area_p - 100.0) / 100.0 <= kIouAreaTolerance);
    CHECK(d.consistent);
    // A sliver two cells wide on the 256 grid cannot match its shoelace area.
    const IouDetail thin = polygon_iou_detail(square(0, 0, 100), rect(0, 0, 100, 0.5), 256);
    CHECK_FALSE(thin.consistent);
  }
  SUBCASE("degenerate input") {
    CHECK(polygon_iou(square(0, 0, 5), Polygon{{0, 0}, {1, 1}, {2, 2}}) == 0.0);
    CHECK_THROWS_AS(polygon_iou(square(0, 0, 5), Polygon{{0, 0}, {1, 1}}), std::invalid_argument);
    CHECK_THROWS_AS(polygon_iou(square(0, 0, 5), Polygon{{0, 0}, {1, NAN}, {2, 0}}),
                    std::invalid_argument);
  }
}

TEST_CASE("matching") {
  SUBCASE("two hits and one duplicate") {
    const std::vector<Polygon> gts{square(0, 0, 10), square(20, 0, 10)};
    const std::vector<ScoredPolygon> preds{
        {square(0, 0, 10), 0.9}, {square(20, 0, 10), 0.8}, {square(1, 0, 10), 0.7}};
    const MatchResult r = match_and_score(preds, gts, 0.5);
    CHECK(r.tp == 2);
    CHECK(r.fp == 1);
    CHECK(r.fn == 0);
    const SplitMetrics m = split_metrics("fixture", r);
    CHECK(m.f1 == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(m.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(m.recall == 1.0);
  }
  SUBCASE("higher confidence claims first") {
    const std::vector<Polygon> gts{square(0, 0, 10)};
    const std::vector<ScoredPolygon> preds{{square(1, 0, 10), 0.2}, {square(3, 0, 10), 0.9}};
    const MatchResult r = match_and_score(preds, gts, 0.5);
    REQUIRE(r.pairs.size() == 1);
    CHECK(r.pairs[0].pred == 1);
    CHECK(r.tp == 1);
    CHECK(r.fp == 1);
  }
  SUBCASE("below threshold is a false positive and a miss") {
    const std::vector<Polygon> gts{square(0, 0, 10)};
    const std::vector<ScoredPolygon> preds{{square(6, 0, 10), 0.9}};
    const MatchResult r = match_and_score(preds, gts, 0.5);
    CHECK(r.tp == 0);
    CHECK(r.fp == 1);
    CHECK(r.fn == 1);
    const SplitMetrics m = split_metrics("miss", r);
    CHECK(m.f1 == 0.0);
    CHECK(m.f1_undefined);
  }
  SUBCASE("empty inputs") {
    const std::vector<Polygon> gts{square(0, 0, 10)};
    const MatchResult none = match_and_score({}, gts);
    CHECK(none.fn == 1);
    const std::vector<ScoredPolygon> preds{{square(0, 0, 10), 0.5}};
    CHECK(match_and_score(preds, {}).fp == 1);
  }
}

TEST_CASE("metrics from counts") {
  MatchResult r;
  r.tp = 8;
  r.fp = 2;
  r.fn = 2;
  const SplitMetrics m = split_metrics("s", r);
  CHECK(m.precision == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(m.recall == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(m.f1 == doctest::Approx(0.8).epsilon(1e-12));
  CHECK_FALSE(m.f1_undefined);
}

TEST_CASE("matching properties") {
  SeededRng rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Polygon> gts;
    std::vector<ScoredPolygon> preds;
    for (int g = 0; g < 4; ++g) gts.push_back(square(30.0 * g, 0, 20));
    for (int p = 0; p < 6; ++p) {
      const int g = static_cast<int>(rng.uniform(0, 4));
      preds.push_back({square(30.0 * g + rng.uniform(-8, 8), rng.uniform(-8, 8), 20),
                       static_cast<double>(p + 1) / 10.0 + rng.uniform(0, 0.05)});
    }
    const MatchResult base = match_and_score(preds, gts, 0.5);
    CHECK(base.tp + base.fp == preds.size());
    CHECK(base.tp + base.fn == gts.size());

    // Listing order of predictions does not matter when confidences differ.
    std::vector<ScoredPolygon> shuffled(preds.rbegin(), preds.rend());
    const MatchResult again = match_and_score(shuffled, gts, 0.5);
    CHECK(again.tp == base.tp);
    CHECK(again.fp == base.fp);

    // Raising the threshold never adds true positives.
    std::size_t last = preds.size() + 1;
    for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const std::size_t tp = match_and_score(preds, gts, thr).tp;
      CHECK(tp <= last);
      last = tp;
    }
  }
}

TEST_CASE("report") {
  MatchResult a, b;
  a.tp = 3;
  a.fp = 1;
  a.fn = 0;
  b.tp = 0;
  b.fp = 2;
  b.fn = 4;
  const std::vector<NamedResult> parts{{"train", a}, {"test", b}};
  const MetricsReport rep = report(parts, 0.5);
  REQUIRE(rep.splits.size() == 2);
  CHECK(rep.total.tp == 3);
  CHECK(rep.total.fp == 3);
  CHECK(rep.total.fn == 4);
  CHECK(rep.total.f1 == doctest::Approx(6.0 / 13.0).epsilon(1e-12));
  CHECK(rep.splits[1].f1_undefined);

  const std::string text = rep.table();
  CHECK(text.find("train") != std::string::npos);
  CHECK(text.find("no true positives") != std::string::npos);

  const MetricsReport back = MetricsReport::from_json(rep.to_json());
  CHECK(back.iou_threshold == rep.iou_threshold);
  REQUIRE(back.splits.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.splits[i].name == rep.splits[i].name);
    CHECK(back.splits[i].tp == rep.splits[i].tp);
    CHECK(back.splits[i].f1 == rep.splits[i].f1);
    CHECK(back.splits[i].f1_undefined == rep.splits[i].f1_undefined);
  }
  CHECK(back.total.precision == rep.total.precision);
  CHECK_THROWS(MetricsReport::from_json("{\"splits\": []}"));
}
