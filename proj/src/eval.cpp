#include "polygcn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace polygcn {

using json = nlohmann::json;

namespace {

void check_polygon(std::span<const Point> p, const char* which) {
  if (p.size() < 3) {
    throw std::invalid_argument(std::string("polygon_iou: ") + which + " has " +
                                std::to_string(p.size()) + " vertices, need >= 3");
  }
  for (const Point& v : p) {
    if (!std::isfinite(v.x) || !std::isfinite(v.y)) {
      throw std::invalid_argument(std::string("polygon_iou: ") + which +
                                  " has a non-finite vertex");
    }
  }
}

bool within(double raster, double shoelace) {
  if (shoelace == 0.0) return raster == 0.0;
  return std::fabs(raster - shoelace) / shoelace <= kIouAreaTolerance;
}

}  // namespace

IouDetail polygon_iou_detail(std::span<const Point> p, std::span<const Point> q,
                             std::size_t resolution) {
  check_polygon(p, "first polygon");
  check_polygon(q, "second polygon");
  if (resolution == 0) throw std::invalid_argument("polygon_iou: resolution must be positive");
  IouDetail d;
  d.shoelace_area_p = std::fabs(signed_area(p));
  d.shoelace_area_q = std::fabs(signed_area(q));
  if (d.shoelace_area_p == 0.0 || d.shoelace_area_q == 0.0) return d;

  const BoxCWH a = bounding_box(p), b = bounding_box(q);
  const double x0 = std::min(a.left(), b.left()), x1 = std::max(a.right(), b.right());
  const double y0 = std::min(a.top(), b.top()), y1 = std::max(a.bottom(), b.bottom());
  RasterGrid grid;
  grid.x0 = x0;
  grid.y0 = y0;
  grid.rows = grid.cols = resolution;
  grid.dx = (x1 - x0) / static_cast<double>(resolution);
  grid.dy = (y1 - y0) / static_cast<double>(resolution);

  const auto mp = fill_polygon(p, grid), mq = fill_polygon(q, grid);
  std::size_t np = 0, nq = 0, inter = 0, uni = 0;
  for (std::size_t i = 0; i < mp.size(); ++i) {
    np += mp[i];
    nq += mq[i];
    inter += mp[i] & mq[i];
    uni += mp[i] | mq[i];
  }
  const double cell = grid.dx * grid.dy;
  d.raster_area_p = static_cast<double>(np) * cell;
  d.raster_area_q = static_cast<double>(nq) * cell;
  d.consistent = within(d.raster_area_p, d.shoelace_area_p) &&
                 within(d.raster_area_q, d.shoelace_area_q);
  d.iou = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
  return d;
}

double polygon_iou(std::span<const Point> p, std::span<const Point> q, std::size_t resolution) {
  return polygon_iou_detail(p, q, resolution).iou;
}

MatchResult match_and_score(std::span<const ScoredPolygon> preds, std::span<const Polygon> gts,
                            double threshold) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return preds[i].confidence > preds[j].confidence;
  });
  MatchResult r;
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t i : order) {
    std::size_t best = gts.size();
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = polygon_iou(preds[i].polygon, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best < gts.size() && best_iou >= threshold) {
      taken[best] = true;
      r.pairs.push_back({i, best, best_iou});
      ++r.tp;
    } else {
      ++r.fp;
    }
  }
  r.fn = gts.size() - r.tp;
  return r;
}

void accumulate(MatchResult& into, const MatchResult& other) {
  into.tp += other.tp;
  into.fp += other.fp;
  into.fn += other.fn;
  into.pairs.insert(into.pairs.end(), other.pairs.begin(), other.pairs.end());
}

SplitMetrics split_metrics(const std::string& name, const MatchResult& result) {
  SplitMetrics m;
  m.name = name;
  m.tp = result.tp;
  m.fp = result.fp;
  m.fn = result.fn;
  const auto tp = static_cast<double>(m.tp);
  if (m.tp + m.fp > 0) m.precision = tp / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn > 0) m.recall = tp / static_cast<double>(m.tp + m.fn);
  if (m.tp == 0) {
    m.f1_undefined = true;
  } else {
    m.f1 = 2.0 * tp / static_cast<double>(2 * m.tp + m.fp + m.fn);
  }
  return m;
}

MetricsReport report(std::span<const NamedResult> results, double iou_threshold) {
  MetricsReport rep;
  rep.iou_threshold = iou_threshold;
  MatchResult pooled;
  for (const NamedResult& r : results) {
    rep.splits.push_back(split_metrics(r.name, r.result));
    pooled.tp += r.result.tp;
    pooled.fp += r.result.fp;
    pooled.fn += r.result.fn;
  }
  rep.total = split_metrics("total", pooled);
  return rep;
}

std::string MetricsReport::table() const {
  std::size_t width = 5;
  for (const SplitMetrics& s : splits) width = std::max(width, s.name.size());
  std::ostringstream out;
  auto row = [&](const SplitMetrics& s) {
    out << std::left << std::setw(static_cast<int>(width)) << s.name << std::right
        << std::setw(7) << s.tp << std::setw(7) << s.fp << std::setw(7) << s.fn << std::fixed
        << std::setprecision(4) << std::setw(11) << s.precision << std::setw(9) << s.recall
        << std::setw(9) << s.f1 << (s.f1_undefined ? "  (no true positives)" : "") << '\n';
  };
  out << "IoU threshold " << std::setprecision(2) << std::fixed << iou_threshold << '\n';
  out << std::left << std::setw(static_cast<int>(width)) << "split" << std::right
      << std::setw(7) << "TP" << std::setw(7) << "FP" << std::setw(7) << "FN" << std::setw(11)
      << "precision" << std::setw(9) << "recall" << std::setw(9) << "F1" << '\n';
  for (const SplitMetrics& s : splits) row(s);
  row(total);
  return out.str();
}

namespace {

json split_json(const SplitMetrics& s) {
  return json{{"name", s.name},           {"tp", s.tp},
              {"fp", s.fp},               {"fn", s.fn},
              {"precision", s.precision}, {"recall", s.recall},
              {"f1", s.f1},               {"f1_undefined", s.f1_undefined}};
}

SplitMetrics split_from_json(const json& j) {
  SplitMetrics s;
  s.name = j.at("name").get<std::string>();
  s.tp = j.at("tp").get<std::size_t>();
  s.fp = j.at("fp").get<std::size_t>();
  s.fn = j.at("fn").get<std::size_t>();
  s.precision = j.at("precision").get<double>();
  s.recall = j.at("recall").get<double>();
  s.f1 = j.at("f1").get<double>();
  s.f1_undefined = j.at("f1_undefined").get<bool>();
  return s;
}

}  // namespace

std::string MetricsReport::to_json() const {
  json splits_j = json::array();
  for (const SplitMetrics& s : splits) splits_j.push_back(split_json(s));
  return json{{"iou_threshold", iou_threshold}, {"splits", splits_j}, {"total", split_json(total)}}
      .dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  const json j = json::parse(text);
  MetricsReport r;
  r.iou_threshold = j.at("iou_threshold").get<double>();
  for (const json& s : j.at("splits")) r.splits.push_back(split_from_json(s));
  r.total = split_from_json(j.at("total"));
  return r;
}

}  // namespace polygcn
