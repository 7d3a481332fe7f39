#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "polygcn/polygon.hpp"

namespace polygcn {

struct ScoredPolygon {
  Polygon polygon;  // image pixels
  double confidence = 0.0;
};

struct IouDetail {
  double iou = 0.0;
  double raster_area_p = 0.0, raster_area_q = 0.0;  // cell counts times cell area
  double shoelace_area_p = 0.0, shoelace_area_q = 0.0;
  // Both raster areas within the relative bound of their shoelace areas.
  bool consistent = true;
};

constexpr std::size_t kIouResolution = 256;
constexpr double kIouAreaTolerance = 0.02;

/// Even-odd fill of both polygons on a resolution x resolution grid spanning
/// their joint bounding box. Zero-area input gives 0.
IouDetail polygon_iou_detail(std::span<const Point> p, std::span<const Point> q,
                             std::size_t resolution = kIouResolution);
double polygon_iou(std::span<const Point> p, std::span<const Point> q,
                   std::size_t resolution = kIouResolution);

struct MatchPair {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double iou = 0.0;
};

struct MatchResult {
  std::size_t tp = 0, fp = 0, fn = 0;
  std::vector<MatchPair> pairs;
};

/// Predictions in descending confidence (ties: lower index first) each claim
/// the unmatched ground truth of highest IoU (ties: lower index). The claim
/// is a true positive when that IoU reaches `threshold`.
MatchResult match_and_score(std::span<const ScoredPolygon> preds, std::span<const Polygon> gts,
                            double threshold = 0.5);

/// Adds counts and concatenates pairs; indices keep their per-image meaning.
void accumulate(MatchResult& into, const MatchResult& other);

struct SplitMetrics {
  std::string name;
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  bool f1_undefined = false;  // tp == 0, F1 reported as 0
};

SplitMetrics split_metrics(const std::string& name, const MatchResult& result);

struct MetricsReport {
  double iou_threshold = 0.5;
  std::vector<SplitMetrics> splits;
  SplitMetrics total;  // pooled counts

  /// Aligned plain-text table.
  std::string table() const;
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

struct NamedResult {
  std::string name;
  MatchResult result;
};
MetricsReport report(std::span<const NamedResult> results, double iou_threshold = 0.5);

}  // namespace polygcn
