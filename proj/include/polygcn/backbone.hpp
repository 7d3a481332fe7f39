#pragma once

#include <cstddef>
#include <vector>

#include "polygcn/boxes.hpp"
#include "polygcn/image.hpp"
#include "polygcn/parameter.hpp"
#include "polygcn/tensor.hpp"

namespace polygcn {

struct BackboneConfig {
  std::size_t image_size = 128;
  std::size_t channels_per_level = 32;
  std::size_t num_levels = 3;
  std::size_t stem_channels = 16;
  std::size_t blocks_per_stage = 2;
  std::size_t rpn_hidden = 32;
  std::size_t proposal_top_k = 64;
  std::size_t loc_roi_size = 7;
  std::size_t loc_hidden = 128;
  double min_proposal_size = 1.0;
  // Extra stride-2 map, merged from the stem and the finest level, that the
  // polygon head crops instead of the pyramid.
  bool fine_map = true;

  /// Level strides: 4, 8, 16, ...
  std::vector<double> strides() const;
  std::vector<LevelShape> level_shapes() const;
  void validate() const;
};

/// Level k (0 = finest) is (H_k, W_k, C).
struct FeaturePyramid {
  std::vector<Tensor> levels;
  std::vector<double> strides;
  Tensor fine;  // (H / 2, W / 2, C) when enabled
  double fine_stride = 2.0;
};

struct ConvWeights {
  Tensor w, b;
};

struct ResBlockWeights {
  ConvWeights conv1, conv2;
  ConvWeights proj;  // 1x1 shortcut when the block downsamples
  int stride = 1;
};

struct BackboneWeights {
  ConvWeights stem1, stem2;
  std::vector<std::vector<ResBlockWeights>> stages;
  std::vector<ConvWeights> lateral, output;
  ConvWeights fine_lateral, fine_output;  // unset without fine_map
};

struct RpnWeights {
  ConvWeights hidden, logits, deltas;
  std::size_t anchors_per_cell = 0;
};

/// Hidden dense layer, then a class logit and four deltas per RoI.
struct LocWeights {
  Tensor fc1_w, fc1_b;
  Tensor cls_w, cls_b;
  Tensor box_w, box_b;
};

/// Per-anchor outputs in anchor order: logits (M, 1), deltas (M, 4).
struct RpnOutput {
  Tensor logits;
  Tensor deltas;
};

/// Per-RoI outputs: logits (R, 1), deltas (R, 4).
struct LocOutput {
  Tensor logits;
  Tensor deltas;
};

struct Proposals {
  std::vector<BoxCWH> boxes;
  std::vector<double> scores;  // objectness logits
};

BackboneWeights make_backbone(ParameterStore& store, const BackboneConfig& config,
                              SeededRng& rng);
RpnWeights make_rpn(ParameterStore& store, const BackboneConfig& config,
                    std::size_t anchors_per_cell, SeededRng& rng);
LocWeights make_loc_head(ParameterStore& store, const BackboneConfig& config, SeededRng& rng);

/// (H, W, 3) tensor with values v / 255 - 0.5; gray images are replicated.
Tensor image_tensor(const Image& img);

FeaturePyramid forward_pyramid(const Tensor& image, const BackboneWeights& weights,
                               const BackboneConfig& config);

RpnOutput rpn_forward(const FeaturePyramid& pyramid, const RpnWeights& weights);

/// Decode, clip to the image, drop boxes thinner than min_proposal_size,
/// NMS, keep the best proposal_top_k.
Proposals propose_regions(const RpnOutput& out, std::span<const Anchor> anchors,
                          const BackboneConfig& config, double nms_threshold);

/// (1 / N_cls) sum BCE over `sampled` + (1 / N_box) sum smooth L1 over the
/// four delta components of the sampled positives, N_box = positives.
/// `refs` are the boxes the deltas are relative to (anchors or proposals).
Tensor detection_loss(const Tensor& logits, const Tensor& deltas, std::span<const BoxCWH> refs,
                      std::span<const AnchorLabel> labels, std::span<const std::size_t> sampled,
                      std::span<const BoxCWH> gt_boxes);

Tensor rpn_loss(const RpnOutput& out, std::span<const AnchorLabel> labels,
                std::span<const std::size_t> sampled, std::span<const Anchor> anchors,
                std::span<const BoxCWH> gt_boxes);

/// Pyramid level index for a box (0 = finest).
std::size_t roi_level(const BoxCWH& box, const FeaturePyramid& pyramid);

/// RoI-Align on the level chosen for `box`.
Tensor pyramid_roi_align(const FeaturePyramid& pyramid, const BoxCWH& box, std::size_t size);

/// RoI-Align on the fine map if present, else as pyramid_roi_align.
Tensor fine_roi_align(const FeaturePyramid& pyramid, const BoxCWH& box, std::size_t size);

/// `roi_features` is (R, S, S, C) flattened to (R, S*S*C).
LocOutput loc_forward(const Tensor& roi_features, const LocWeights& weights);

Tensor loc_loss(const LocOutput& out, std::span<const AnchorLabel> labels,
                std::span<const std::size_t> sampled, std::span<const BoxCWH> proposals,
                std::span<const BoxCWH> gt_boxes);

/// Stacks RoI-Align crops of `boxes` into (R, S*S*C).
Tensor stack_rois(const FeaturePyramid& pyramid, std::span<const BoxCWH> boxes, std::size_t size);

}  // namespace polygcn
