#pragma once

#include <span>
#include <vector>

#include "polygcn/tensor.hpp"

namespace polygcn {

// Element-wise arithmetic. Operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// Adds a length-C vector along the trailing axis of `x`.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);
/// Gradient passes where lo <= x <= hi.
Tensor clamp(const Tensor& x, double lo, double hi);

/// (m, k) x (k, n) -> (m, n)
Tensor matmul(const Tensor& a, const Tensor& b);
/// x (n, k) . w (k, m) + b (m); `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// HWC convolution. `w` is (k, k, C_in, C_out); `bias` (C_out) may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
/// Non-overlapping k x k max pooling over an HWC map.
Tensor max_pool2d(const Tensor& x, int k);
/// Nearest-neighbour upsampling of an HWC map by an integer factor.
Tensor upsample_nearest(const Tensor& x, int factor);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Rows of `x` (axis 0) at `indices`, in that order.
Tensor index_select(const Tensor& x, std::span<const std::size_t> indices);
/// y[i] = x[(i + shift) mod N] along axis 0.
Tensor roll_rows(const Tensor& x, std::size_t shift);
/// y[i] = sum over j in neighbors[i] of x[j]; x is (N, F).
Tensor neighbor_sum(const Tensor& x, const std::vector<std::vector<std::size_t>>& neighbors);

/// Samples an (H, W, C) map at unit coordinates. `coords` is (N, 2) holding
/// (x, y) in [0, 1], with x = 0 / 1 on the first / last column. Result is
/// (N, C), differentiable in both the map and the coordinates. Points on a
/// grid line use the cell to their right (below); the last line uses the
/// final cell.
Tensor bilinear_sample(const Tensor& map, const Tensor& coords);
Tensor bilinear_sample(const Tensor& map, double x, double y);

/// Element-wise smooth L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
Tensor smooth_l1(const Tensor& x);
/// Element-wise binary cross entropy on logits; `targets` in {0, 1}.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);

double smooth_l1(double x);
double bce_with_logits(double logit, double target);
double sigmoid(double x);

/// Generic entry for the parameter-free primitives: Add, Sub, Mul, MatMul,
/// Relu, Sigmoid, Abs, Concat (last axis), Sum, Mean, MaxPool (2x2),
/// Upsample (x2), SmoothL1, and Conv2d (stride 1, same padding, no bias).
Tensor primitive_forward(OpKind kind, std::span<const Tensor> inputs);

}  // namespace polygcn
