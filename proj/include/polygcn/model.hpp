#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polygcn/backbone.hpp"
#include "polygcn/polyhead.hpp"

namespace polygcn {

struct ModelConfig {
  BackboneConfig backbone;
  AnchorConfig anchors;
  PolyHeadConfig poly;
  // The polygon head sees the detected box grown by this factor.
  double roi_margin = 1.5;
  double score_threshold = 0.5;
  double detection_nms = 0.5;
  std::size_t max_detections = 16;

  void validate() const;
  /// Canonical text listing every field, used for the checkpoint hash.
  std::string describe() const;
};

std::uint64_t fnv1a(std::string_view text);

/// All weights plus fixed structure (anchors, graph, initial polygon).
/// Tensors are handles into `params`, so a Model is move-only.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  std::uint64_t config_hash() const { return fnv1a(config_.describe()); }

  ParameterStore params;
  BackboneWeights backbone;
  RpnWeights rpn;
  LocWeights loc;
  BoundaryHeadWeights boundary;
  GcnStack gcn;
  GraphTopology topology;
  std::vector<Anchor> anchors;
  std::vector<BoxCWH> anchor_boxes;
  Polygon initial_polygon;

 private:
  ModelConfig config_;
};

/// Frame the polygon head works in for a detected box.
BoxCWH polygon_frame(const BoxCWH& box, double margin);

struct PolygonHeadOutput {
  BoundaryMasks masks;
  std::vector<Tensor> steps;  // refined polygon after each GCN step, unit frame
  BoxCWH frame;
};

/// RoI-Align on the grown box, boundary masks, enhancement, GCN refinement.
/// With `refine_polygon` false only the masks are produced.
PolygonHeadOutput polygon_head(const Model& model, const FeaturePyramid& pyramid,
                               const BoxCWH& box, bool refine_polygon = true);

struct Detection {
  BoxCWH box;
  double score = 0.0;  // sigmoid of the class logit
  Polygon polygon;     // image pixels
};

std::vector<Detection> infer(const Model& model, const Image& image);

}  // namespace polygcn
