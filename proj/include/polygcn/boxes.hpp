#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "polygcn/rng.hpp"
#include "polygcn/tensor.hpp"

namespace polygcn {

/// Axis-aligned box by centre and size, in pixels.
struct BoxCWH {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  double left() const { return x - 0.5 * w; }
  double top() const { return y - 0.5 * h; }
  double right() const { return x + 0.5 * w; }
  double bottom() const { return y + 0.5 * h; }
  double area() const { return w * h; }

  static BoxCWH from_corners(double x0, double y0, double x1, double y1);
  bool operator==(const BoxCWH&) const = default;
};

/// Regression target of a box relative to a reference (anchor or proposal).
struct BoxDelta {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;
  bool operator==(const BoxDelta&) const = default;
};

struct AnchorConfig {
  std::vector<double> strides{4, 8, 16};
  std::vector<double> ratios{0.5, 1.0, 2.0};  // h / w
  std::vector<double> scales{16, 32, 64};     // one side length per level
  double nms_threshold = 0.5;
  std::size_t max_boxes = 256;
  std::pair<std::size_t, std::size_t> pos_neg_ratio{1, 3};
  double pos_iou = 0.7;
  double neg_iou = 0.3;

  void validate() const;
};

struct Anchor {
  BoxCWH box;
  std::size_t level = 0;  // index into the pyramid, 0 = finest
};

struct LevelShape {
  std::size_t height = 0;
  std::size_t width = 0;
};

enum class LabelKind { Negative, Positive, Ignore };

struct AnchorLabel {
  LabelKind label = LabelKind::Negative;
  std::optional<std::size_t> matched_gt;  // set iff positive
};

/// One anchor per (cell, ratio) on every level, ordered level-major, then
/// row, column, ratio: the same order as an (H, W, A) head output.
std::vector<Anchor> generate_anchors(const AnchorConfig& config,
                                     std::span<const LevelShape> level_shapes);

BoxDelta encode_deltas(const BoxCWH& box, const BoxCWH& anchor);
/// Inverse of encode_deltas. tw, th are capped at ln(1000) first.
BoxCWH decode_deltas(const BoxDelta& delta, const BoxCWH& anchor);

double iou(const BoxCWH& a, const BoxCWH& b);

/// Greedy suppression: indices kept, in descending score (ties: lower index
/// first). A box is dropped when its IoU with a kept box exceeds
/// `threshold`. Stops after `max_keep` boxes when given.
std::vector<std::size_t> nms(std::span<const BoxCWH> boxes, std::span<const double> scores,
                             double threshold, std::size_t max_keep = 0);

/// Positive at IoU >= pos_iou or when the anchor is (one of) the best for
/// some GT; negative when its best IoU <= neg_iou; ignore otherwise.
std::vector<AnchorLabel> label_anchors(std::span<const BoxCWH> anchors,
                                       std::span<const BoxCWH> gt_boxes, double pos_iou,
                                       double neg_iou);

/// Proposal labels for the localization stage: positive iff best IoU >=
/// threshold, negative otherwise (no ignore band, no forced matches).
std::vector<AnchorLabel> label_proposals(std::span<const BoxCWH> proposals,
                                         std::span<const BoxCWH> gt_boxes, double threshold);

/// At most `max_boxes` indices (ascending). Positives are capped at
/// max_boxes * pos / (pos + neg); negatives fill the rest.
std::vector<std::size_t> sample_minibatch(std::span<const AnchorLabel> labels, SeededRng& rng,
                                          std::size_t max_boxes,
                                          std::pair<std::size_t, std::size_t> pos_neg_ratio);

/// floor(k0 + log2(sqrt(w h) / canonical)) clamped to [k_min, k_max].
int fpn_level(double w, double h, int k0, int k_min, int k_max, double canonical = 224.0);

/// RoI-Align over one (H, W, C) level with the given stride. The output
/// grid point (i, j) sits at unit RoI coordinates (j / (W_r - 1), i / (H_r - 1)),
/// i.e. the first and last points lie on the box edges; each output value
/// averages 2x2 bilinear samples at the quarter points of that point's cell.
/// Differentiable with respect to the feature map only.
Tensor roi_align(const Tensor& feature_map, const BoxCWH& box, double stride,
                 std::size_t out_h, std::size_t out_w);

/// Clamps a box to [0, W] x [0, H].
BoxCWH clip_box(const BoxCWH& box, double width, double height);

}  // namespace polygcn
