#include "polygcn/model.hpp"

#include <sstream>
#include <stdexcept>

#include "polygcn/ops.hpp"

namespace polygcn {

void ModelConfig::validate() const {
  backbone.validate();
  anchors.validate();
  poly.validate();
  if (anchors.strides != backbone.strides()) {
    throw std::invalid_argument("ModelConfig: anchor strides must match the pyramid strides");
  }
  if (!(roi_margin >= 1.0)) throw std::invalid_argument("ModelConfig: roi_margin must be >= 1");
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
    throw std::invalid_argument("ModelConfig: score_threshold must be in [0, 1]");
  }
}

std::string ModelConfig::describe() const {
  std::ostringstream s;
  s.precision(17);
  auto list = [&](const std::vector<double>& v) {
    for (double x : v) s << x << ',';
    s << ';';
  };
  s << "backbone:" << backbone.image_size << ';' << backbone.channels_per_level << ';'
    << backbone.num_levels << ';' << backbone.stem_channels << ';' << backbone.blocks_per_stage
    << ';' << backbone.rpn_hidden << ';' << backbone.proposal_top_k << ';'
    << backbone.loc_roi_size << ';' << backbone.loc_hidden << ';' << backbone.min_proposal_size
    << ';' << backbone.fine_map << "|anchors:";
  list(anchors.strides);
  list(anchors.ratios);
  list(anchors.scales);
  s << anchors.nms_threshold << ';' << anchors.max_boxes << ';' << anchors.pos_neg_ratio.first
    << ':' << anchors.pos_neg_ratio.second << ';' << anchors.pos_iou << ';' << anchors.neg_iou
    << "|poly:" << poly.vertices << ';' << poly.roi_size << ';' << poly.init_radius << ';'
    << poly.gcn_steps << ';' << poly.blocks_per_step << ';' << poly.hidden << ';'
    << poly.boundary_hidden << "|head:"
    << roi_margin << ';' << score_threshold << ';' << detection_nms << ';' << max_detections;
  return s.str();
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  SeededRng rng(seed);
  backbone = make_backbone(params, config_.backbone, rng);
  rpn = make_rpn(params, config_.backbone, config_.anchors.ratios.size(), rng);
  loc = make_loc_head(params, config_.backbone, rng);
  boundary = make_boundary_head(params, config_.backbone.channels_per_level,
                                config_.poly.boundary_hidden, rng);
  gcn = make_gcn_stack(params, config_.poly, config_.backbone.channels_per_level, rng);
  topology = build_graph(config_.poly.vertices);
  const auto shapes = config_.backbone.level_shapes();
  anchors = generate_anchors(config_.anchors, shapes);
  for (const Anchor& a : anchors) anchor_boxes.push_back(a.box);
  initial_polygon = init_polygon(config_.poly.vertices, config_.poly.init_radius);
}

BoxCWH polygon_frame(const BoxCWH& box, double margin) {
  return {box.x, box.y, box.w * margin, box.h * margin};
}

PolygonHeadOutput polygon_head(const Model& model, const FeaturePyramid& pyramid,
                               const BoxCWH& box, bool refine_polygon) {
  PolygonHeadOutput out;
  out.frame = polygon_frame(box, model.config().roi_margin);
  Tensor roi = fine_roi_align(pyramid, out.frame, model.config().poly.roi_size);
  out.masks = boundary_forward(roi, model.boundary);
  if (refine_polygon) {
    Tensor fmap = enhance(roi, out.masks);
    out.steps = refine(fmap, polygon_tensor(model.initial_polygon), model.gcn, model.topology);
  }
  return out;
}

std::vector<Detection> infer(const Model& model, const Image& image) {
  NoGradGuard guard;
  const ModelConfig& cfg = model.config();
  const FeaturePyramid pyr = forward_pyramid(image_tensor(image), model.backbone, cfg.backbone);
  const RpnOutput rpn_out = rpn_forward(pyr, model.rpn);
  const Proposals props = propose_regions(rpn_out, model.anchors, cfg.backbone,
                                          cfg.anchors.nms_threshold);
  if (props.boxes.empty()) return {};
  const LocOutput loc = loc_forward(stack_rois(pyr, props.boxes, cfg.backbone.loc_roi_size),
                                    model.loc);
  const double size = static_cast<double>(cfg.backbone.image_size);
  std::vector<BoxCWH> boxes;
  std::vector<double> scores;
  for (std::size_t i = 0; i < props.boxes.size(); ++i) {
    const double score = sigmoid(loc.logits[i]);
    if (score < cfg.score_threshold) continue;
    const BoxDelta d{loc.deltas[4 * i], loc.deltas[4 * i + 1], loc.deltas[4 * i + 2],
                     loc.deltas[4 * i + 3]};
    const BoxCWH b = clip_box(decode_deltas(d, props.boxes[i]), size, size);
    if (!(b.w >= cfg.backbone.min_proposal_size && b.h >= cfg.backbone.min_proposal_size)) {
      continue;
    }
    boxes.push_back(b);
    scores.push_back(score);
  }
  std::vector<Detection> out;
  for (std::size_t i : nms(boxes, scores, cfg.detection_nms, cfg.max_detections)) {
    Detection d;
    d.box = boxes[i];
    d.score = scores[i];
    const PolygonHeadOutput head = polygon_head(model, pyr, d.box);
    d.polygon = from_unit_frame(tensor_polygon(head.steps.back()), head.frame);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace polygcn
