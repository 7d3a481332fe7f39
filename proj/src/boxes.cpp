#include "polygcn/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace polygcn {

BoxCWH BoxCWH::from_corners(double x0, double y0, double x1, double y1) {
  return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
}

void AnchorConfig::validate() const {
  if (strides.empty() || ratios.empty() || scales.empty()) {
    throw std::invalid_argument("anchor config: strides, ratios and scales must be non-empty");
  }
  for (std::size_t i = 1; i < strides.size(); ++i) {
    if (!(strides[i] > strides[i - 1])) {
      throw std::invalid_argument("anchor config: strides must be strictly increasing");
    }
  }
  if (scales.size() != strides.size()) {
    throw std::invalid_argument("anchor config: one scale per stride is required");
  }
  for (double r : ratios) {
    if (!(r > 0)) throw std::invalid_argument("anchor config: ratios must be positive");
  }
  if (pos_neg_ratio.first + pos_neg_ratio.second == 0) {
    throw std::invalid_argument("anchor config: positive/negative ratio is 0:0");
  }
}

std::vector<Anchor> generate_anchors(const AnchorConfig& config,
                                     std::span<const LevelShape> level_shapes) {
  config.validate();
  if (level_shapes.size() != config.strides.size()) {
    throw std::invalid_argument("generate_anchors: " + std::to_string(level_shapes.size()) +
                                " level shapes for " + std::to_string(config.strides.size()) +
                                " strides");
  }
  std::vector<Anchor> anchors;
  for (std::size_t l = 0; l < level_shapes.size(); ++l) {
    const double stride = config.strides[l];
    const double s = config.scales[l];
    for (std::size_t i = 0; i < level_shapes[l].height; ++i) {
      for (std::size_t j = 0; j < level_shapes[l].width; ++j) {
        for (double r : config.ratios) {
          const double root = std::sqrt(r);
          anchors.push_back({{(static_cast<double>(j) + 0.5) * stride,
                              (static_cast<double>(i) + 0.5) * stride, s / root, s * root},
                             l});
        }
      }
    }
  }
  return anchors;
}

BoxDelta encode_deltas(const BoxCWH& box, const BoxCWH& anchor) {
  return {(box.x - anchor.x) / anchor.w, (box.y - anchor.y) / anchor.h,
          std::log(box.w / anchor.w), std::log(box.h / anchor.h)};
}

BoxCWH decode_deltas(const BoxDelta& delta, const BoxCWH& anchor) {
  static const double kMaxLog = std::log(1000.0);
  return {anchor.x + delta.tx * anchor.w, anchor.y + delta.ty * anchor.h,
          anchor.w * std::exp(std::min(delta.tw, kMaxLog)),
          anchor.h * std::exp(std::min(delta.th, kMaxLog))};
}

double iou(const BoxCWH& a, const BoxCWH& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::min(1.0, inter / uni) : 0.0;
}

std::vector<std::size_t> nms(std::span<const BoxCWH> boxes, std::span<const double> scores,
                             double threshold, std::size_t max_keep) {
  if (boxes.size() != scores.size()) {
    throw std::invalid_argument("nms: " + std::to_string(boxes.size()) + " boxes but " +
                                std::to_string(scores.size()) + " scores");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : keep) {
      if (iou(boxes[idx], boxes[k]) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (suppressed) continue;
    keep.push_back(idx);
    if (max_keep && keep.size() >= max_keep) break;
  }
  return keep;
}

std::vector<AnchorLabel> label_anchors(std::span<const BoxCWH> anchors,
                                       std::span<const BoxCWH> gt_boxes, double pos_iou,
                                       double neg_iou) {
  if (anchors.empty()) throw std::invalid_argument("label_anchors: no anchors");
  std::vector<AnchorLabel> labels(anchors.size());
  if (gt_boxes.empty()) return labels;

  const std::size_t g = gt_boxes.size();
  std::vector<double> best_iou(anchors.size(), 0.0);
  std::vector<std::size_t> best_gt(anchors.size(), 0);
  std::vector<double> gt_best(g, 0.0);
  std::vector<double> ious(anchors.size() * g);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t k = 0; k < g; ++k) {
      const double v = iou(anchors[a], gt_boxes[k]);
      ious[a * g + k] = v;
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_gt[a] = k;
      }
      gt_best[k] = std::max(gt_best[k], v);
    }
  }
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    bool forced = false;
    for (std::size_t k = 0; k < g && !forced; ++k) {
      forced = gt_best[k] > 0.0 && ious[a * g + k] == gt_best[k];
    }
    if (best_iou[a] >= pos_iou || forced) {
      labels[a] = {LabelKind::Positive, best_gt[a]};
    } else if (best_iou[a] <= neg_iou) {
      labels[a] = {LabelKind::Negative, std::nullopt};
    } else {
      labels[a] = {LabelKind::Ignore, std::nullopt};
    }
  }
  return labels;
}

std::vector<AnchorLabel> label_proposals(std::span<const BoxCWH> proposals,
                                         std::span<const BoxCWH> gt_boxes, double threshold) {
  std::vector<AnchorLabel> labels(proposals.size());
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    double best = 0.0;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < gt_boxes.size(); ++k) {
      const double v = iou(proposals[p], gt_boxes[k]);
      if (v > best) {
        best = v;
        arg = k;
      }
    }
    if (!gt_boxes.empty() && best >= threshold) labels[p] = {LabelKind::Positive, arg};
  }
  return labels;
}

std::vector<std::size_t> sample_minibatch(std::span<const AnchorLabel> labels, SeededRng& rng,
                                          std::size_t max_boxes,
                                          std::pair<std::size_t, std::size_t> pos_neg_ratio) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].label == LabelKind::Positive) pos.push_back(i);
    if (labels[i].label == LabelKind::Negative) neg.push_back(i);
  }
  const std::size_t denom = pos_neg_ratio.first + pos_neg_ratio.second;
  const std::size_t pos_cap = max_boxes * pos_neg_ratio.first / denom;
  const std::size_t n_pos = std::min(pos.size(), pos_cap);
  const std::size_t n_neg = std::min(neg.size(), max_boxes - n_pos);

  std::vector<std::size_t> out;
  for (std::size_t i : rng.sample_without_replacement(pos.size(), n_pos)) out.push_back(pos[i]);
  for (std::size_t i : rng.sample_without_replacement(neg.size(), n_neg)) out.push_back(neg[i]);
  std::sort(out.begin(), out.end());
  return out;
}

int fpn_level(double w, double h, int k0, int k_min, int k_max, double canonical) {
  if (!(w > 0 && h > 0)) throw std::invalid_argument("fpn_level: non-positive box size");
  const double k = std::floor(static_cast<double>(k0) + std::log2(std::sqrt(w * h) / canonical));
  return static_cast<int>(std::clamp(k, static_cast<double>(k_min), static_cast<double>(k_max)));
}

BoxCWH clip_box(const BoxCWH& box, double width, double height) {
  const double x0 = std::clamp(box.left(), 0.0, width);
  const double y0 = std::clamp(box.top(), 0.0, height);
  const double x1 = std::clamp(box.right(), 0.0, width);
  const double y1 = std::clamp(box.bottom(), 0.0, height);
  return BoxCWH::from_corners(x0, y0, x1, y1);
}

Tensor roi_align(const Tensor& feature_map, const BoxCWH& box, double stride, std::size_t out_h,
                 std::size_t out_w) {
  if (feature_map.rank() != 3 || feature_map.dim(0) < 2 || feature_map.dim(1) < 2) {
    throw ShapeError("roi_align: feature map must be (H >= 2, W >= 2, C), got " +
                     to_string(feature_map.shape()));
  }
  if (out_h == 0 || out_w == 0) throw ShapeError("roi_align: empty output size");
  if (!(box.w > 0 && box.h > 0)) throw std::invalid_argument("roi_align: degenerate box");
  const std::size_t h = feature_map.dim(0), w = feature_map.dim(1), c = feature_map.dim(2);

  struct Tap {
    std::size_t index;  // flat (row * w + col)
    double weight;
  };
  // 4 samples x 4 taps per output point, weights already include the 1/4.
  std::vector<Tap> taps(out_h * out_w * 16);
  auto unit_samples = [](std::size_t i, std::size_t n, double out[2]) {
    if (n == 1) {
      out[0] = 0.25;
      out[1] = 0.75;
      return;
    }
    const double step = 1.0 / static_cast<double>(n - 1);
    const double centre = static_cast<double>(i) * step;
    out[0] = centre - 0.25 * step;
    out[1] = centre + 0.25 * step;
  };
  auto to_feature = [stride](double image_coord, std::size_t size) {
    return std::clamp(image_coord / stride - 0.5, 0.0, static_cast<double>(size - 1));
  };

  const auto fm = feature_map.data();
  std::vector<double> out(out_h * out_w * c, 0.0);
  for (std::size_t i = 0; i < out_h; ++i) {
    double vs[2];
    unit_samples(i, out_h, vs);
    for (std::size_t j = 0; j < out_w; ++j) {
      double us[2];
      unit_samples(j, out_w, us);
      Tap* t = &taps[(i * out_w + j) * 16];
      for (int sy = 0; sy < 2; ++sy) {
        const double py = to_feature(box.top() + vs[sy] * box.h, h);
        const std::size_t i0 = std::min(static_cast<std::size_t>(py), h - 2);
        const double fy = py - static_cast<double>(i0);
        for (int sx = 0; sx < 2; ++sx, t += 4) {
          const double px = to_feature(box.left() + us[sx] * box.w, w);
          const std::size_t j0 = std::min(static_cast<std::size_t>(px), w - 2);
          const double fx = px - static_cast<double>(j0);
          t[0] = {i0 * w + j0, 0.25 * (1 - fx) * (1 - fy)};
          t[1] = {i0 * w + j0 + 1, 0.25 * fx * (1 - fy)};
          t[2] = {(i0 + 1) * w + j0, 0.25 * (1 - fx) * fy};
          t[3] = {(i0 + 1) * w + j0 + 1, 0.25 * fx * fy};
        }
      }
      double* o = out.data() + (i * out_w + j) * c;
      const Tap* tp = &taps[(i * out_w + j) * 16];
      for (int k = 0; k < 16; ++k) {
        const double* src = fm.data() + tp[k].index * c;
        const double wt = tp[k].weight;
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] += wt * src[ch];
      }
    }
  }
  return detail::make_result(
      {out_h, out_w, c}, std::move(out), OpKind::RoiAlign, {&feature_map},
      [taps = std::move(taps), c](const TensorImpl& o) {
        TensorImpl& m = *o.node->inputs[0];
        if (!m.requires_grad) return;
        auto& g = m.ensure_grad();
        for (std::size_t p = 0; p < taps.size() / 16; ++p) {
          const double* go = o.grad.data() + p * c;
          for (std::size_t k = 0; k < 16; ++k) {
            const Tap& t = taps[p * 16 + k];
            double* d = g.data() + t.index * c;
            for (std::size_t ch = 0; ch < c; ++ch) d[ch] += t.weight * go[ch];
          }
        }
      });
}

}  // namespace polygcn
