#include "polygcn/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "polygcn/ops.hpp"

namespace polygcn {

std::vector<double> BackboneConfig::strides() const {
  std::vector<double> s;
  for (std::size_t k = 0; k < num_levels; ++k) s.push_back(4.0 * static_cast<double>(1u << k));
  return s;
}

std::vector<LevelShape> BackboneConfig::level_shapes() const {
  std::vector<LevelShape> out;
  for (double s : strides()) {
    const auto n = static_cast<std::size_t>(static_cast<double>(image_size) / s);
    out.push_back({n, n});
  }
  return out;
}

void BackboneConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("BackboneConfig: " + m); };
  if (num_levels == 0) fail("num_levels must be >= 1");
  const std::size_t largest = 4u << (num_levels - 1);
  if (image_size == 0 || image_size % largest != 0) {
    fail("image_size " + std::to_string(image_size) + " not divisible by the largest stride " +
         std::to_string(largest));
  }
  if (image_size / largest < 2) fail("coarsest level would be smaller than 2x2");
  if (channels_per_level == 0 || stem_channels == 0 || rpn_hidden == 0 || loc_hidden == 0) {
    fail("widths must be positive");
  }
  if (blocks_per_stage == 0) fail("blocks_per_stage must be >= 1");
  if (proposal_top_k == 0) fail("proposal_top_k must be >= 1");
  if (loc_roi_size < 2) fail("loc_roi_size must be >= 2");
}

namespace {

ConvWeights make_conv(ParameterStore& store, const std::string& name, std::size_t k,
                      std::size_t cin, std::size_t cout, SeededRng& rng) {
  return {store.add_weight(name + ".w", {k, k, cin, cout}, k * k * cin, k * k * cout, rng),
          store.add_zeros(name + ".b", {cout})};
}

Tensor conv(const Tensor& x, const ConvWeights& c, int stride) {
  const int k = static_cast<int>(c.w.dim(0));
  return conv2d(x, c.w, c.b, stride, k / 2);
}

Tensor res_block(const Tensor& x, const ResBlockWeights& b) {
  Tensor h = relu(conv(x, b.conv1, b.stride));
  h = conv(h, b.conv2, 1);
  Tensor skip = b.proj.w.defined() ? conv(x, b.proj, b.stride) : x;
  return relu(add(h, skip));
}

}  // namespace

BackboneWeights make_backbone(ParameterStore& store, const BackboneConfig& config,
                              SeededRng& rng) {
  config.validate();
  const std::size_t c = config.channels_per_level;
  BackboneWeights w;
  w.stem1 = make_conv(store, "backbone.stem1", 3, 3, config.stem_channels, rng);
  w.stem2 = make_conv(store, "backbone.stem2", 3, config.stem_channels, c, rng);
  for (std::size_t s = 0; s < config.num_levels; ++s) {
    std::vector<ResBlockWeights> stage;
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      const std::string p = "backbone.stage" + std::to_string(s) + ".block" + std::to_string(b);
      ResBlockWeights rb;
      rb.stride = (s > 0 && b == 0) ? 2 : 1;
      rb.conv1 = make_conv(store, p + ".conv1", 3, c, c, rng);
      rb.conv2 = make_conv(store, p + ".conv2", 3, c, c, rng);
      if (rb.stride != 1) rb.proj = make_conv(store, p + ".proj", 1, c, c, rng);
      stage.push_back(rb);
    }
    w.stages.push_back(std::move(stage));
  }
  for (std::size_t s = 0; s < config.num_levels; ++s) {
    w.lateral.push_back(make_conv(store, "backbone.fpn.lateral" + std::to_string(s), 1, c, c, rng));
    w.output.push_back(make_conv(store, "backbone.fpn.output" + std::to_string(s), 3, c, c, rng));
  }
  if (config.fine_map) {
    w.fine_lateral = make_conv(store, "backbone.fine.lateral", 3, config.stem_channels, c, rng);
    w.fine_output = make_conv(store, "backbone.fine.output", 3, c, c, rng);
  }
  return w;
}

RpnWeights make_rpn(ParameterStore& store, const BackboneConfig& config,
                    std::size_t anchors_per_cell, SeededRng& rng) {
  const std::size_t c = config.channels_per_level, h = config.rpn_hidden;
  RpnWeights w;
  w.anchors_per_cell = anchors_per_cell;
  w.hidden = make_conv(store, "rpn.hidden", 3, c, h, rng);
  w.logits = make_conv(store, "rpn.logits", 1, h, anchors_per_cell, rng);
  w.deltas = make_conv(store, "rpn.deltas", 1, h, 4 * anchors_per_cell, rng);
  return w;
}

LocWeights make_loc_head(ParameterStore& store, const BackboneConfig& config, SeededRng& rng) {
  const std::size_t in = config.loc_roi_size * config.loc_roi_size * config.channels_per_level;
  const std::size_t h = config.loc_hidden;
  LocWeights w;
  w.fc1_w = store.add_weight("loc.fc1.w", {in, h}, in, h, rng);
  w.fc1_b = store.add_zeros("loc.fc1.b", {h});
  w.cls_w = store.add_weight("loc.cls.w", {h, 1}, h, 1, rng);
  w.cls_b = store.add_zeros("loc.cls.b", {1});
  w.box_w = store.add_weight("loc.box.w", {h, 4}, h, 4, rng);
  w.box_b = store.add_zeros("loc.box.b", {4});
  return w;
}

Tensor image_tensor(const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw std::invalid_argument("image_tensor: unsupported channel count " +
                                std::to_string(img.channels));
  }
  std::vector<double> v(img.width * img.height * 3);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t src = img.channels == 1 ? i : 3 * i + c;
      v[3 * i + c] = img.pixels[src] / 255.0 - 0.5;
    }
  }
  return Tensor({img.height, img.width, 3}, std::move(v));
}

FeaturePyramid forward_pyramid(const Tensor& image, const BackboneWeights& w,
                               const BackboneConfig& config) {
  if (image.rank() != 3 || image.dim(0) != config.image_size ||
      image.dim(1) != config.image_size || image.dim(2) != 3) {
    throw ShapeError("forward_pyramid: expected (" + std::to_string(config.image_size) + ", " +
                     std::to_string(config.image_size) + ", 3), got " + to_string(image.shape()));
  }
  const Tensor stem = relu(conv(image, w.stem1, 2));
  Tensor x = relu(conv(stem, w.stem2, 2));
  std::vector<Tensor> c;
  for (const auto& stage : w.stages) {
    for (const ResBlockWeights& b : stage) x = res_block(x, b);
    c.push_back(x);
  }
  FeaturePyramid p;
  p.strides = config.strides();
  p.levels.resize(c.size());
  Tensor top;
  for (std::size_t k = c.size(); k-- > 0;) {
    Tensor lat = conv(c[k], w.lateral[k], 1);
    top = top.defined() ? add(lat, upsample_nearest(top, 2)) : lat;
    p.levels[k] = conv(top, w.output[k], 1);
  }
  if (config.fine_map) {
    Tensor merged = add(conv(stem, w.fine_lateral, 1), upsample_nearest(top, 2));
    p.fine = conv(merged, w.fine_output, 1);
  }
  return p;
}

RpnOutput rpn_forward(const FeaturePyramid& pyramid, const RpnWeights& w) {
  std::vector<Tensor> logits, deltas;
  const std::size_t a = w.anchors_per_cell;
  for (const Tensor& level : pyramid.levels) {
    Tensor h = relu(conv(level, w.hidden, 1));
    const std::size_t cells = level.dim(0) * level.dim(1);
    logits.push_back(reshape(conv(h, w.logits, 1), {cells * a, 1}));
    deltas.push_back(reshape(conv(h, w.deltas, 1), {cells * a, 4}));
  }
  return {concat(logits, 0), concat(deltas, 0)};
}

Proposals propose_regions(const RpnOutput& out, std::span<const Anchor> anchors,
                          const BackboneConfig& config, double nms_threshold) {
  if (out.logits.dim(0) != anchors.size()) {
    throw ShapeError("propose_regions: " + std::to_string(out.logits.dim(0)) +
                     " outputs for " + std::to_string(anchors.size()) + " anchors");
  }
  const double size = static_cast<double>(config.image_size);
  std::vector<BoxCWH> boxes;
  std::vector<double> scores;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const BoxDelta d{out.deltas[4 * i], out.deltas[4 * i + 1], out.deltas[4 * i + 2],
                     out.deltas[4 * i + 3]};
    const BoxCWH b = clip_box(decode_deltas(d, anchors[i].box), size, size);
    if (!(b.w >= config.min_proposal_size && b.h >= config.min_proposal_size)) continue;
    boxes.push_back(b);
    scores.push_back(out.logits[i]);
  }
  Proposals p;
  for (std::size_t i : nms(boxes, scores, nms_threshold, config.proposal_top_k)) {
    p.boxes.push_back(boxes[i]);
    p.scores.push_back(scores[i]);
  }
  return p;
}

Tensor detection_loss(const Tensor& logits, const Tensor& deltas, std::span<const BoxCWH> refs,
                      std::span<const AnchorLabel> labels, std::span<const std::size_t> sampled,
                      std::span<const BoxCWH> gt_boxes) {
  if (logits.dim(0) != refs.size() || deltas.dim(0) != refs.size() ||
      labels.size() != refs.size()) {
    throw ShapeError("detection_loss: logits " + to_string(logits.shape()) + ", deltas " +
                     to_string(deltas.shape()) + " for " + std::to_string(refs.size()) +
                     " references and " + std::to_string(labels.size()) + " labels");
  }
  if (sampled.empty()) return Tensor::scalar(0.0);
  std::vector<double> y;
  std::vector<std::size_t> pos;
  std::vector<double> targets;
  for (std::size_t i : sampled) {
    const AnchorLabel& l = labels[i];
    if (l.label == LabelKind::Ignore) {
      throw std::invalid_argument("detection_loss: sampled index " + std::to_string(i) +
                                  " is labelled ignore");
    }
    const bool positive = l.label == LabelKind::Positive;
    y.push_back(positive ? 1.0 : 0.0);
    if (positive) {
      pos.push_back(i);
      const BoxDelta t = encode_deltas(gt_boxes[l.matched_gt.value()], refs[i]);
      targets.insert(targets.end(), {t.tx, t.ty, t.tw, t.th});
    }
  }
  Tensor cls = mean(bce_with_logits(index_select(logits, sampled), y));
  if (pos.empty()) return cls;
  Tensor diff = sub(index_select(deltas, pos), Tensor({pos.size(), 4}, std::move(targets)));
  Tensor reg = scale(sum(smooth_l1(diff)), 1.0 / static_cast<double>(pos.size()));
  return add(cls, reg);
}

Tensor rpn_loss(const RpnOutput& out, std::span<const AnchorLabel> labels,
                std::span<const std::size_t> sampled, std::span<const Anchor> anchors,
                std::span<const BoxCWH> gt_boxes) {
  std::vector<BoxCWH> refs(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) refs[i] = anchors[i].box;
  return detection_loss(out.logits, out.deltas, refs, labels, sampled, gt_boxes);
}

std::size_t roi_level(const BoxCWH& box, const FeaturePyramid& pyramid) {
  const int kmax = 2 + static_cast<int>(pyramid.levels.size()) - 1;
  return static_cast<std::size_t>(fpn_level(box.w, box.h, 4, 2, kmax) - 2);
}

Tensor pyramid_roi_align(const FeaturePyramid& pyramid, const BoxCWH& box, std::size_t size) {
  const std::size_t k = roi_level(box, pyramid);
  return roi_align(pyramid.levels[k], box, pyramid.strides[k], size, size);
}

Tensor fine_roi_align(const FeaturePyramid& pyramid, const BoxCWH& box, std::size_t size) {
  if (!pyramid.fine.defined()) return pyramid_roi_align(pyramid, box, size);
  return roi_align(pyramid.fine, box, pyramid.fine_stride, size, size);
}

Tensor stack_rois(const FeaturePyramid& pyramid, std::span<const BoxCWH> boxes,
                  std::size_t size) {
  if (boxes.empty()) throw std::invalid_argument("stack_rois: no boxes");
  std::vector<Tensor> rows;
  rows.reserve(boxes.size());
  for (const BoxCWH& b : boxes) {
    Tensor r = pyramid_roi_align(pyramid, b, size);
    rows.push_back(reshape(r, {1, r.numel()}));
  }
  return concat(rows, 0);
}

LocOutput loc_forward(const Tensor& roi_features, const LocWeights& w) {
  Tensor h = relu(linear(roi_features, w.fc1_w, w.fc1_b));
  return {linear(h, w.cls_w, w.cls_b), linear(h, w.box_w, w.box_b)};
}

Tensor loc_loss(const LocOutput& out, std::span<const AnchorLabel> labels,
                std::span<const std::size_t> sampled, std::span<const BoxCWH> proposals,
                std::span<const BoxCWH> gt_boxes) {
  return detection_loss(out.logits, out.deltas, proposals, labels, sampled, gt_boxes);
}

}  // namespace polygcn
