#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "polygcn/parameter.hpp"
#include "polygcn/polygon.hpp"
#include "polygcn/synth.hpp"
#include "polygcn/tensor.hpp"

namespace polygcn {

struct PolyHeadConfig {
  std::size_t vertices = 16;
  std::size_t roi_size = 28;
  double init_radius = 0.35;
  std::size_t gcn_steps = 3;
  std::size_t blocks_per_step = 2;
  std::size_t hidden = 64;
  std::size_t boundary_hidden = 16;

  void validate() const;
};

struct PolyLossConfig {
  double lambda = 1.0;
  std::size_t vertices = 16;
};

/// Per-pixel logits, each (H_r, W_r, 1).
struct BoundaryMasks {
  Tensor vertex_logits;
  Tensor edge_logits;
};

/// Per-pixel two-layer heads: 1x1 conv to `hidden`, ReLU, 1x1 conv to one
/// logit.
struct BoundaryHeadWeights {
  Tensor vertex_hw, vertex_hb;  // (1, 1, C, H), (H)
  Tensor vertex_w, vertex_b;    // (1, 1, H, 1), (1)
  Tensor edge_hw, edge_hb;
  Tensor edge_w, edge_b;
};

struct GcnBlockWeights {
  Tensor w0a, w1a;  // first graph conv, (F, F)
  Tensor w0b, w1b;  // second graph conv
};

struct GcnStepWeights {
  Tensor proj_w, proj_b;  // (C + 4, F), (F)
  std::vector<GcnBlockWeights> blocks;
  Tensor offset_w, offset_b;  // (F, 2), (2)
};

struct GcnStack {
  std::vector<GcnStepWeights> steps;
};

struct GraphTopology {
  std::vector<std::vector<std::size_t>> neighbors;
  std::size_t size() const { return neighbors.size(); }
};

/// Registers "boundary.*" parameters for C input channels.
BoundaryHeadWeights make_boundary_head(ParameterStore& store, std::size_t channels,
                                       std::size_t hidden, SeededRng& rng);
/// Registers "gcn.step<k>.*" parameters. Offset layers and the second conv
/// of each residual block start at zero, so the untrained stack leaves the
/// initial polygon in place.
GcnStack make_gcn_stack(ParameterStore& store, const PolyHeadConfig& config,
                        std::size_t feature_channels, SeededRng& rng);

BoundaryMasks boundary_forward(const Tensor& roi_features, const BoundaryHeadWeights& head);

/// Channel concatenation [features, edge logits, vertex logits].
Tensor enhance(const Tensor& roi_features, const BoundaryMasks& masks);

/// Regular n-gon about (0.5, 0.5), first vertex at the top, clockwise on screen.
Polygon init_polygon(std::size_t n, double radius);

/// Each node joined to i-2, i-1, i+1, i+2 (mod n).
GraphTopology build_graph(std::size_t n);

Tensor polygon_tensor(std::span<const Point> poly);
Polygon tensor_polygon(const Tensor& t);

/// (N, C' + 2): bilinear sample of `fmap` at each vertex, then (x, y).
Tensor node_features(const Tensor& fmap, const Tensor& poly);

/// w0 f_i + sum over neighbours of w1 f_j.
Tensor graph_conv(const Tensor& f, const GraphTopology& topo, const Tensor& w0,
                  const Tensor& w1);

/// relu(conv_b(relu(conv_a(f))) + f)
Tensor gcn_residual_block(const Tensor& f, const GraphTopology& topo,
                          const GcnBlockWeights& weights);

/// Per-step (Delta x, Delta y) for every vertex, before the update.
Tensor gcn_offsets(const Tensor& fmap, const Tensor& poly, const GraphTopology& topo,
                   const GcnStepWeights& step);

/// Polygon after every step; the last entry is the final prediction. Each
/// update is clamp(v + offset, 0, 1).
std::vector<Tensor> refine(const Tensor& fmap, const Tensor& poly, const GcnStack& stack,
                           const GraphTopology& topo);

/// Mean BCE over the vertex raster plus mean BCE over the edge raster.
Tensor boundary_loss(const BoundaryMasks& masks, const BoundaryRaster& target);

struct CyclicLoss {
  Tensor loss;                      // mean over polygons of the best-shift L1
  std::vector<std::size_t> shifts;  // pred vertex (i + shift) mod N pairs with gt vertex i
  std::vector<double> per_polygon;
};

/// Sum over vertices of |dx| + |dy| with pred cyclically shifted by `shift`.
double shifted_l1(std::span<const Point> pred, std::span<const Point> gt, std::size_t shift);

/// Exhaustive search over all cyclic shifts of each prediction; the gradient
/// follows the chosen correspondence. Ties pick the smallest shift.
/// Ground truth must be clockwise; predictions are checked too unless
/// `check_pred_orientation` is false (refined polygons may fold over).
CyclicLoss cyclic_polygon_loss(const std::vector<Tensor>& preds,
                               const std::vector<Polygon>& gts,
                               bool check_pred_orientation = true);

/// L_rpn + L_loc + L_boun + lambda / N * L_poly
Tensor total_loss(const Tensor& l_rpn, const Tensor& l_loc, const Tensor& l_boun,
                  const Tensor& l_poly, const PolyLossConfig& config);
double total_loss(double l_rpn, double l_loc, double l_boun, double l_poly,
                  const PolyLossConfig& config);

}  // namespace polygcn
