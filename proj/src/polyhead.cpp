#include "polygcn/polyhead.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "polygcn/ops.hpp"

namespace polygcn {

void PolyHeadConfig::validate() const {
  if (vertices < 5) throw std::invalid_argument("PolyHeadConfig: vertices must be >= 5");
  if (roi_size < 2) throw std::invalid_argument("PolyHeadConfig: roi_size must be >= 2");
  if (!(init_radius > 0.0 && init_radius <= 0.5)) {
    throw std::invalid_argument("PolyHeadConfig: init_radius must be in (0, 0.5]");
  }
  if (gcn_steps == 0 || hidden == 0) throw std::invalid_argument("PolyHeadConfig: empty GCN");
  if (boundary_hidden == 0) throw std::invalid_argument("PolyHeadConfig: empty boundary head");
}

BoundaryHeadWeights make_boundary_head(ParameterStore& store, std::size_t channels,
                                       std::size_t hidden, SeededRng& rng) {
  BoundaryHeadWeights h;
  const std::size_t c = channels;
  h.vertex_hw = store.add_weight("boundary.vertex.hidden.w", {1, 1, c, hidden}, c, hidden, rng);
  h.vertex_hb = store.add_zeros("boundary.vertex.hidden.b", {hidden});
  h.vertex_w = store.add_weight("boundary.vertex.w", {1, 1, hidden, 1}, hidden, 1, rng);
  h.vertex_b = store.add_zeros("boundary.vertex.b", {1});
  h.edge_hw = store.add_weight("boundary.edge.hidden.w", {1, 1, c, hidden}, c, hidden, rng);
  h.edge_hb = store.add_zeros("boundary.edge.hidden.b", {hidden});
  h.edge_w = store.add_weight("boundary.edge.w", {1, 1, hidden, 1}, hidden, 1, rng);
  h.edge_b = store.add_zeros("boundary.edge.b", {1});
  return h;
}

GcnStack make_gcn_stack(ParameterStore& store, const PolyHeadConfig& config,
                        std::size_t feature_channels, SeededRng& rng) {
  config.validate();
  GcnStack stack;
  const std::size_t in = feature_channels + 4, f = config.hidden;
  for (std::size_t s = 0; s < config.gcn_steps; ++s) {
    const std::string p = "gcn.step" + std::to_string(s) + ".";
    GcnStepWeights step;
    step.proj_w = store.add_weight(p + "proj.w", {in, f}, in, f, rng);
    step.proj_b = store.add_zeros(p + "proj.b", {f});
    for (std::size_t b = 0; b < config.blocks_per_step; ++b) {
      const std::string q = p + "block" + std::to_string(b) + ".";
      GcnBlockWeights w;
      w.w0a = store.add_weight(q + "w0a", {f, f}, f, f, rng);
      w.w1a = store.add_weight(q + "w1a", {f, f}, f, f, rng);
      // zero second conv: every block starts as the identity
      w.w0b = store.add_zeros(q + "w0b", {f, f});
      w.w1b = store.add_zeros(q + "w1b", {f, f});
      step.blocks.push_back(w);
    }
    step.offset_w = store.add_zeros(p + "offset.w", {f, 2});
    step.offset_b = store.add_zeros(p + "offset.b", {2});
    stack.steps.push_back(std::move(step));
  }
  return stack;
}

BoundaryMasks boundary_forward(const Tensor& roi_features, const BoundaryHeadWeights& head) {
  auto branch = [&](const Tensor& hw, const Tensor& hb, const Tensor& w, const Tensor& b) {
    return conv2d(relu(conv2d(roi_features, hw, hb, 1, 0)), w, b, 1, 0);
  };
  return {branch(head.vertex_hw, head.vertex_hb, head.vertex_w, head.vertex_b),
          branch(head.edge_hw, head.edge_hb, head.edge_w, head.edge_b)};
}

Tensor enhance(const Tensor& roi_features, const BoundaryMasks& masks) {
  return concat({roi_features, masks.edge_logits, masks.vertex_logits}, 2);
}

Polygon init_polygon(std::size_t n, double radius) {
  if (n < 3) throw std::invalid_argument("init_polygon: need n >= 3");
  Polygon p;
  p.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // y points down, so increasing angle runs clockwise on screen
    const double a = -std::numbers::pi / 2 + 2.0 * std::numbers::pi * static_cast<double>(i) /
                                                 static_cast<double>(n);
    p.push_back({0.5 + radius * std::cos(a), 0.5 + radius * std::sin(a)});
  }
  return p;
}

GraphTopology build_graph(std::size_t n) {
  if (n < 5) {
    throw std::invalid_argument("build_graph: need n >= 5 for four distinct neighbours, got " +
                                std::to_string(n));
  }
  GraphTopology g;
  g.neighbors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    g.neighbors[i] = {(i + n - 2) % n, (i + n - 1) % n, (i + 1) % n, (i + 2) % n};
  }
  return g;
}

Tensor polygon_tensor(std::span<const Point> poly) {
  std::vector<double> v;
  v.reserve(2 * poly.size());
  for (const Point& p : poly) {
    v.push_back(p.x);
    v.push_back(p.y);
  }
  return Tensor({poly.size(), 2}, std::move(v));
}

Polygon tensor_polygon(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 2) {
    throw ShapeError("tensor_polygon: expected (N, 2), got " + to_string(t.shape()));
  }
  Polygon p(t.dim(0));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = {t[2 * i], t[2 * i + 1]};
  return p;
}

Tensor node_features(const Tensor& fmap, const Tensor& poly) {
  return concat({bilinear_sample(fmap, poly), poly}, 1);
}

Tensor graph_conv(const Tensor& f, const GraphTopology& topo, const Tensor& w0,
                  const Tensor& w1) {
  if (f.rank() != 2 || f.dim(0) != topo.size()) {
    throw ShapeError("graph_conv: features " + to_string(f.shape()) + " for " +
                     std::to_string(topo.size()) + " nodes");
  }
  return add(matmul(f, w0), matmul(neighbor_sum(f, topo.neighbors), w1));
}

Tensor gcn_residual_block(const Tensor& f, const GraphTopology& topo,
                          const GcnBlockWeights& w) {
  if (w.w0b.rank() != 2 || w.w0b.dim(1) != f.dim(1)) {
    throw ShapeError("gcn_residual_block: output width of " + to_string(w.w0b.shape()) +
                     " does not match features " + to_string(f.shape()));
  }
  Tensor r = relu(graph_conv(f, topo, w.w0a, w.w1a));
  Tensor r2 = graph_conv(r, topo, w.w0b, w.w1b);
  return relu(add(r2, f));
}

Tensor gcn_offsets(const Tensor& fmap, const Tensor& poly, const GraphTopology& topo,
                   const GcnStepWeights& step) {
  Tensor h = relu(linear(node_features(fmap, poly), step.proj_w, step.proj_b));
  for (const GcnBlockWeights& b : step.blocks) h = gcn_residual_block(h, topo, b);
  return linear(h, step.offset_w, step.offset_b);
}

std::vector<Tensor> refine(const Tensor& fmap, const Tensor& poly, const GcnStack& stack,
                           const GraphTopology& topo) {
  std::vector<Tensor> out;
  out.reserve(stack.steps.size());
  Tensor v = poly;
  for (const GcnStepWeights& step : stack.steps) {
    v = clamp(add(v, gcn_offsets(fmap, v, topo, step)), 0.0, 1.0);
    out.push_back(v);
  }
  return out;
}

Tensor boundary_loss(const BoundaryMasks& masks, const BoundaryRaster& target) {
  const std::size_t cells = target.rows * target.cols;
  if (masks.vertex_logits.numel() != cells || masks.edge_logits.numel() != cells) {
    throw ShapeError("boundary_loss: logits " + to_string(masks.vertex_logits.shape()) +
                     " / " + to_string(masks.edge_logits.shape()) + " vs raster " +
                     std::to_string(target.rows) + "x" + std::to_string(target.cols));
  }
  const std::vector<double> tv(target.vertex.begin(), target.vertex.end());
  const std::vector<double> te(target.edge.begin(), target.edge.end());
  return add(mean(bce_with_logits(masks.vertex_logits, tv)),
             mean(bce_with_logits(masks.edge_logits, te)));
}

double shifted_l1(std::span<const Point> pred, std::span<const Point> gt, std::size_t shift) {
  const std::size_t n = gt.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = pred[(i + shift) % n];
    s += std::fabs(p.x - gt[i].x);
    s += std::fabs(p.y - gt[i].y);
  }
  return s;
}

CyclicLoss cyclic_polygon_loss(const std::vector<Tensor>& preds, const std::vector<Polygon>& gts,
                               bool check_pred_orientation) {
  if (preds.size() != gts.size() || preds.empty()) {
    throw std::invalid_argument("cyclic_polygon_loss: " + std::to_string(preds.size()) +
                                " predictions vs " + std::to_string(gts.size()) +
                                " ground-truth polygons");
  }
  CyclicLoss out;
  std::vector<Tensor> terms;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const Polygon pred = tensor_polygon(preds[k]);
    const Polygon& gt = gts[k];
    if (pred.size() != gt.size()) {
      throw std::invalid_argument("cyclic_polygon_loss: polygon " + std::to_string(k) + " has " +
                                  std::to_string(pred.size()) + " vs " +
                                  std::to_string(gt.size()) + " vertices");
    }
    if (signed_area(gt) <= 0.0) {
      throw std::invalid_argument("cyclic_polygon_loss: ground truth " + std::to_string(k) +
                                  " is not clockwise");
    }
    if (check_pred_orientation && signed_area(pred) <= 0.0) {
      throw std::invalid_argument("cyclic_polygon_loss: prediction " + std::to_string(k) +
                                  " is not clockwise");
    }
    std::size_t best = 0;
    double best_v = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double v = shifted_l1(pred, gt, j);
      if (v < best_v) {
        best_v = v;
        best = j;
      }
    }
    out.shifts.push_back(best);
    out.per_polygon.push_back(best_v);
    Tensor d = abs(sub(roll_rows(preds[k], best), polygon_tensor(gt)));
    terms.push_back(reshape(sum(d), {1}));
  }
  out.loss = mean(concat(terms, 0));
  return out;
}

Tensor total_loss(const Tensor& l_rpn, const Tensor& l_loc, const Tensor& l_boun,
                  const Tensor& l_poly, const PolyLossConfig& config) {
  const double c = config.lambda / static_cast<double>(config.vertices);
  return add(add(add(l_rpn, l_loc), l_boun), scale(l_poly, c));
}

double total_loss(double l_rpn, double l_loc, double l_boun, double l_poly,
                  const PolyLossConfig& config) {
  const double c = config.lambda / static_cast<double>(config.vertices);
  return ((l_rpn + l_loc) + l_boun) + l_poly * c;
}

}  // namespace polygcn
