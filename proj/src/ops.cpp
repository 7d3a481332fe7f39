#include "polygcn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

namespace polygcn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;

using detail::make_result;

// Eigen peels an unaligned head off its vectorised loops, so a product over
// raw tensor buffers sums in an order that depends on where the heap put
// them. Operands are copied into Eigen-owned (aligned) storage so results
// are bit-identical between runs.
RowMat owned(const double* p, Eigen::Index rows, Eigen::Index cols) {
  return ConstMatMap(p, rows, cols);
}

std::vector<double> to_vector(const RowMat& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

void add_into(double* dst, const RowMat& m) {
  const double* src = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] += src[i];
}

void add_row_bias(std::vector<double>& out, const double* bias, Eigen::Index n) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % static_cast<std::size_t>(n)];
}

void add_column_sums(double* dst, const RowMat& g) {
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    for (Eigen::Index c = 0; c < g.cols(); ++c) dst[c] += g(r, c);
  }
}

TensorImpl& input(const TensorImpl& out, std::size_t i) { return *out.node->inputs[i]; }

void require_same_shape(const char* what, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_rank(const char* what, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + to_string(t.shape()));
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, OpKind kind, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
  return make_result(x.shape(), std::move(out), kind, {&x}, [deriv](const TensorImpl& o) {
    TensorImpl& a = input(o, 0);
    if (!a.requires_grad) return;
    auto& g = a.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * deriv(a.data[i], o.data[i]);
  });
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double smooth_l1(double x) {
  const double a = std::fabs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double bce_with_logits(double logit, double target) {
  // max(z, 0) - z*y + log(1 + exp(-|z|)) == -(y log p + (1-y) log(1-p))
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::fabs(logit)));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), OpKind::Add, {&a, &b}, [](const TensorImpl& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      TensorImpl& t = input(o, k);
      if (!t.requires_grad) continue;
      auto& g = t.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), OpKind::Sub, {&a, &b}, [](const TensorImpl& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      TensorImpl& t = input(o, k);
      if (!t.requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      auto& g = t.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), OpKind::Mul, {&a, &b}, [](const TensorImpl& o) {
    TensorImpl& x = input(o, 0);
    TensorImpl& y = input(o, 1);
    if (x.requires_grad) {
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * y.data[i];
    }
    if (y.requires_grad) {
      auto& g = y.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * x.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, OpKind::Scale, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, OpKind::AddScalar, [value](double v) { return v + value; },
      [](double, double) { return 1.0; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", bias, 1);
  if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    throw ShapeError("add_bias: trailing axis of " + to_string(x.shape()) +
                     " does not match bias " + to_string(bias.shape()));
  }
  const std::size_t c = bias.dim(0);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % c];
  return make_result(x.shape(), std::move(out), OpKind::AddBias, {&x, &bias},
                     [c](const TensorImpl& o) {
                       TensorImpl& xi = input(o, 0);
                       TensorImpl& bi = input(o, 1);
                       if (xi.requires_grad) {
                         auto& g = xi.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       }
                       if (bi.requires_grad) {
                         auto& g = bi.ensure_grad();
                         for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % c] += o.grad[i];
                       }
                     });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, OpKind::Relu, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, OpKind::Sigmoid, [](double v) { return sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, OpKind::Abs, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, OpKind::Clamp, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor smooth_l1(const Tensor& x) {
  return unary(
      x, OpKind::SmoothL1, [](double v) { return smooth_l1(v); },
      [](double v, double) {
        if (std::fabs(v) < 1.0) return v;
        return v > 0.0 ? 1.0 : -1.0;
      });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  if (targets.size() != logits.numel()) {
    throw ShapeError("bce_with_logits: " + std::to_string(targets.size()) +
                     " targets for logits of shape " + to_string(logits.shape()));
  }
  std::vector<double> y(targets.begin(), targets.end());
  std::vector<double> out(logits.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = bce_with_logits(logits[i], y[i]);
  return make_result(logits.shape(), std::move(out), OpKind::BceWithLogits, {&logits},
                     [y = std::move(y)](const TensorImpl& o) {
                       TensorImpl& z = input(o, 0);
                       if (!z.requires_grad) return;
                       auto& g = z.ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += o.grad[i] * (sigmoid(z.data[i]) - y[i]);
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  const RowMat prod = owned(a.data().data(), m, k) * owned(b.data().data(), k, n);
  return make_result({a.dim(0), b.dim(1)}, to_vector(prod), OpKind::MatMul, {&a, &b},
                     [m, k, n](const TensorImpl& o) {
                       TensorImpl& x = input(o, 0);
                       TensorImpl& y = input(o, 1);
                       const RowMat go = owned(o.grad.data(), m, n);
                       if (x.requires_grad) {
                         add_into(x.ensure_grad().data(),
                                  go * owned(y.data.data(), k, n).transpose());
                       }
                       if (y.requires_grad) {
                         add_into(y.ensure_grad().data(),
                                  owned(x.data.data(), m, k).transpose() * go);
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", w, 2);
  if (x.dim(1) != w.dim(0)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " +
                     to_string(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != w.dim(1))) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(w.shape()));
  }
  const auto m = static_cast<Eigen::Index>(x.dim(0));
  const auto k = static_cast<Eigen::Index>(x.dim(1));
  const auto n = static_cast<Eigen::Index>(w.dim(1));
  std::vector<double> out =
      to_vector(owned(x.data().data(), m, k) * owned(w.data().data(), k, n));
  if (has_bias) add_row_bias(out, bias.data().data(), n);
  auto bw = [m, k, n, has_bias](const TensorImpl& o) {
    TensorImpl& xi = input(o, 0);
    TensorImpl& wi = input(o, 1);
    const RowMat go = owned(o.grad.data(), m, n);
    if (xi.requires_grad) {
      add_into(xi.ensure_grad().data(), go * owned(wi.data.data(), k, n).transpose());
    }
    if (wi.requires_grad) {
      add_into(wi.ensure_grad().data(), owned(xi.data.data(), m, k).transpose() * go);
    }
    if (has_bias) {
      TensorImpl& bi = input(o, 2);
      if (bi.requires_grad) add_column_sums(bi.ensure_grad().data(), go);
    }
  };
  if (has_bias) {
    return make_result({x.dim(0), w.dim(1)}, std::move(out), OpKind::Linear, {&x, &w, &bias}, bw);
  }
  return make_result({x.dim(0), w.dim(1)}, std::move(out), OpKind::Linear, {&x, &w}, bw);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", w, 4);
  if (w.dim(0) != w.dim(1) || w.dim(2) != x.dim(2)) {
    throw ShapeError("conv2d: kernel " + to_string(w.shape()) + " incompatible with input " +
                     to_string(x.shape()));
  }
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != w.dim(3))) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match kernel " +
                     to_string(w.shape()));
  }
  const int h = static_cast<int>(x.dim(0));
  const int wd = static_cast<int>(x.dim(1));
  const int c = static_cast<int>(x.dim(2));
  const int k = static_cast<int>(w.dim(0));
  const int co = static_cast<int>(w.dim(3));
  if (h + 2 * pad < k || wd + 2 * pad < k) {
    throw ShapeError("conv2d: kernel " + to_string(w.shape()) + " larger than padded input " +
                     to_string(x.shape()));
  }
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  const Eigen::Index rows = static_cast<Eigen::Index>(ho) * wo;
  const Eigen::Index kk = static_cast<Eigen::Index>(k) * k * c;
  const bool direct = k == 1 && stride == 1 && pad == 0;

  auto cols = std::make_shared<std::vector<double>>();
  if (!direct) {
    cols->assign(static_cast<std::size_t>(rows * kk), 0.0);
    const double* xs = x.data().data();
    double* dst = cols->data();
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < k; ++kx, dst += c) {
            const int ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            std::memcpy(dst, xs + (static_cast<std::size_t>(iy) * wd + ix) * c,
                        sizeof(double) * static_cast<std::size_t>(c));
          }
        }
      }
    }
  }
  const double* col_ptr = direct ? x.data().data() : cols->data();
  std::vector<double> out = to_vector(owned(col_ptr, rows, kk) * owned(w.data().data(), kk, co));
  if (has_bias) add_row_bias(out, bias.data().data(), co);

  auto bw = [=](const TensorImpl& o) {
    TensorImpl& xi = input(o, 0);
    TensorImpl& wi = input(o, 1);
    const RowMat go = owned(o.grad.data(), rows, co);
    const double* cp = direct ? xi.data.data() : cols->data();
    if (wi.requires_grad) {
      add_into(wi.ensure_grad().data(), owned(cp, rows, kk).transpose() * go);
    }
    if (has_bias) {
      TensorImpl& bi = input(o, 2);
      if (bi.requires_grad) add_column_sums(bi.ensure_grad().data(), go);
    }
    if (!xi.requires_grad) return;
    auto& gx = xi.ensure_grad();
    const RowMat gcols = go * owned(wi.data.data(), kk, co).transpose();
    if (direct) {
      add_into(gx.data(), gcols);
      return;
    }
    const double* src = gcols.data();
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < k; ++kx, src += c) {
            const int ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            double* d = gx.data() + (static_cast<std::size_t>(iy) * wd + ix) * c;
            for (int ch = 0; ch < c; ++ch) d[ch] += src[ch];
          }
        }
      }
    }
  };
  Shape shape{static_cast<std::size_t>(ho), static_cast<std::size_t>(wo),
              static_cast<std::size_t>(co)};
  if (has_bias) return make_result(shape, std::move(out), OpKind::Conv2d, {&x, &w, &bias}, bw);
  return make_result(shape, std::move(out), OpKind::Conv2d, {&x, &w}, bw);
}

Tensor max_pool2d(const Tensor& x, int k) {
  require_rank("max_pool2d", x, 3);
  if (k < 1 || x.dim(0) < static_cast<std::size_t>(k) || x.dim(1) < static_cast<std::size_t>(k)) {
    throw ShapeError("max_pool2d: window " + std::to_string(k) + " too large for " +
                     to_string(x.shape()));
  }
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t ho = h / k, wo = w / k;
  std::vector<double> out(ho * wo * c);
  std::vector<std::size_t> arg(out.size());
  const auto xs = x.data();
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = (oy * k * w + ox * k) * c + ch;
        for (std::size_t dy = 0; dy < static_cast<std::size_t>(k); ++dy) {
          for (std::size_t dx = 0; dx < static_cast<std::size_t>(k); ++dx) {
            const std::size_t idx = ((oy * k + dy) * w + ox * k + dx) * c + ch;
            if (xs[idx] > xs[best]) best = idx;
          }
        }
        const std::size_t o = (oy * wo + ox) * c + ch;
        out[o] = xs[best];
        arg[o] = best;
      }
    }
  }
  return make_result({ho, wo, c}, std::move(out), OpKind::MaxPool, {&x},
                     [arg = std::move(arg)](const TensorImpl& o) {
                       TensorImpl& xi = input(o, 0);
                       if (!xi.requires_grad) return;
                       auto& g = xi.ensure_grad();
                       for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += o.grad[i];
                     });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_rank("upsample_nearest", x, 3);
  if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2), f = factor;
  const std::size_t ho = h * f, wo = w * f;
  std::vector<double> out(ho * wo * c);
  const auto xs = x.data();
  for (std::size_t y = 0; y < ho; ++y) {
    for (std::size_t xx = 0; xx < wo; ++xx) {
      const double* src = xs.data() + ((y / f) * w + xx / f) * c;
      std::copy(src, src + c, out.begin() + static_cast<std::ptrdiff_t>((y * wo + xx) * c));
    }
  }
  return make_result({ho, wo, c}, std::move(out), OpKind::Upsample, {&x},
                     [h, w, c, f, ho, wo](const TensorImpl& o) {
                       TensorImpl& xi = input(o, 0);
                       if (!xi.requires_grad) return;
                       auto& g = xi.ensure_grad();
                       for (std::size_t y = 0; y < ho; ++y) {
                         for (std::size_t xx = 0; xx < wo; ++xx) {
                           double* d = g.data() + ((y / f) * w + xx / f) * c;
                           const double* s = o.grad.data() + (y * wo + xx) * c;
                           for (std::size_t ch = 0; ch < c; ++ch) d[ch] += s[ch];
                         }
                       }
                       (void)h;
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     to_string(ref));
  }
  Shape shape = ref;
  shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == ref[d];
    if (!ok) {
      throw ShapeError("concat: shape " + to_string(s) + " incompatible with " + to_string(ref) +
                       " along axis " + std::to_string(axis));
    }
    shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  const std::size_t total = shape[axis] * inner;

  std::vector<std::size_t> widths, offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    widths.push_back(p.shape()[axis] * inner);
    offsets.push_back(offset);
    offset += widths.back();
  }
  std::vector<double> out(outer * total);
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto src = parts[pi].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * widths[pi]), widths[pi],
                  out.begin() + static_cast<std::ptrdiff_t>(o * total + offsets[pi]));
    }
  }
  return make_result(std::move(shape), std::move(out), OpKind::Concat, parts,
                     [outer, total, widths, offsets](const TensorImpl& o) {
                       for (std::size_t pi = 0; pi < widths.size(); ++pi) {
                         TensorImpl& t = input(o, pi);
                         if (!t.requires_grad) continue;
                         auto& g = t.ensure_grad();
                         for (std::size_t r = 0; r < outer; ++r) {
                           const double* s = o.grad.data() + r * total + offsets[pi];
                           double* d = g.data() + r * widths[pi];
                           for (std::size_t i = 0; i < widths[pi]; ++i) d[i] += s[i];
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), OpKind::Reshape, {&x},
                     [](const TensorImpl& o) {
                       TensorImpl& xi = input(o, 0);
                       if (!xi.requires_grad) return;
                       auto& g = xi.ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                     });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, OpKind::Sum, {&x}, [](const TensorImpl& o) {
    TensorImpl& xi = input(o, 0);
    if (!xi.requires_grad) return;
    auto& g = xi.ensure_grad();
    for (double& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor " + to_string(x.shape()));
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.numel());
  return make_result({}, {s / n}, OpKind::Mean, {&x}, [n](const TensorImpl& o) {
    TensorImpl& xi = input(o, 0);
    if (!xi.requires_grad) return;
    auto& g = xi.ensure_grad();
    for (double& v : g) v += o.grad[0] / n;
  });
}

Tensor index_select(const Tensor& x, std::span<const std::size_t> indices) {
  if (x.rank() == 0) throw ShapeError("index_select: scalar input");
  const std::size_t rows = x.dim(0);
  const std::size_t row = rows == 0 ? 0 : x.numel() / rows;
  for (auto i : indices) {
    if (i >= rows) {
      throw std::out_of_range("index_select: index " + std::to_string(i) + " out of range for " +
                              to_string(x.shape()));
    }
  }
  Shape shape = x.shape();
  shape[0] = indices.size();
  std::vector<double> out(indices.size() * row);
  const auto xs = x.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(indices[r] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(r * row));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result(std::move(shape), std::move(out), OpKind::IndexSelect, {&x},
                     [idx = std::move(idx), row](const TensorImpl& o) {
                       TensorImpl& xi = input(o, 0);
                       if (!xi.requires_grad) return;
                       auto& g = xi.ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         for (std::size_t j = 0; j < row; ++j) g[idx[r] * row + j] += o.grad[r * row + j];
                       }
                     });
}

Tensor roll_rows(const Tensor& x, std::size_t shift) {
  if (x.rank() == 0 || x.dim(0) == 0) throw ShapeError("roll_rows: needs at least one row");
  const std::size_t n = x.dim(0);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = (i + shift) % n;
  Tensor out = index_select(x, idx);
  if (out.impl()->node) out.impl()->node->op = OpKind::RollRows;
  return out;
}

Tensor neighbor_sum(const Tensor& x, const std::vector<std::vector<std::size_t>>& neighbors) {
  require_rank("neighbor_sum", x, 2);
  const std::size_t n = x.dim(0), f = x.dim(1);
  if (neighbors.size() != n) {
    throw ShapeError("neighbor_sum: topology has " + std::to_string(neighbors.size()) +
                     " nodes, features " + to_string(x.shape()));
  }
  std::vector<double> out(n * f, 0.0);
  const auto xs = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : neighbors[i]) {
      if (j >= n) throw std::out_of_range("neighbor_sum: neighbour index out of range");
      for (std::size_t d = 0; d < f; ++d) out[i * f + d] += xs[j * f + d];
    }
  }
  return make_result({n, f}, std::move(out), OpKind::NeighborSum, {&x},
                     [neighbors, f](const TensorImpl& o) {
                       TensorImpl& xi = input(o, 0);
                       if (!xi.requires_grad) return;
                       auto& g = xi.ensure_grad();
                       for (std::size_t i = 0; i < neighbors.size(); ++i) {
                         for (auto j : neighbors[i]) {
                           for (std::size_t d = 0; d < f; ++d) g[j * f + d] += o.grad[i * f + d];
                         }
                       }
                     });
}

Tensor bilinear_sample(const Tensor& map, const Tensor& coords) {
  require_rank("bilinear_sample", map, 3);
  require_rank("bilinear_sample", coords, 2);
  if (coords.dim(1) != 2) {
    throw ShapeError("bilinear_sample: coordinates must be (N, 2), got " +
                     to_string(coords.shape()));
  }
  const std::size_t h = map.dim(0), w = map.dim(1), c = map.dim(2);
  if (h < 2 || w < 2) {
    throw ShapeError("bilinear_sample: map must be at least 2x2, got " + to_string(map.shape()));
  }
  const std::size_t n = coords.dim(0);
  struct Cell {
    std::size_t i0, j0;
    double fx, fy;
  };
  std::vector<Cell> cells(n);
  const auto cs = coords.data();
  const auto ms = map.data();
  std::vector<double> out(n * c);
  for (std::size_t p = 0; p < n; ++p) {
    const double x = cs[2 * p], y = cs[2 * p + 1];
    if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
      throw std::out_of_range("bilinear_sample: coordinate (" + std::to_string(x) + ", " +
                              std::to_string(y) + ") outside [0, 1]");
    }
    const double px = x * static_cast<double>(w - 1);
    const double py = y * static_cast<double>(h - 1);
    const std::size_t j0 = std::min(static_cast<std::size_t>(std::floor(px)), w - 2);
    const std::size_t i0 = std::min(static_cast<std::size_t>(std::floor(py)), h - 2);
    const double fx = px - static_cast<double>(j0);
    const double fy = py - static_cast<double>(i0);
    cells[p] = {i0, j0, fx, fy};
    const double* v00 = ms.data() + (i0 * w + j0) * c;
    const double* v01 = v00 + c;
    const double* v10 = v00 + w * c;
    const double* v11 = v10 + c;
    const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy), w10 = (1 - fx) * fy,
                 w11 = fx * fy;
    for (std::size_t ch = 0; ch < c; ++ch) {
      out[p * c + ch] = w00 * v00[ch] + w01 * v01[ch] + w10 * v10[ch] + w11 * v11[ch];
    }
  }
  return make_result({n, c}, std::move(out), OpKind::BilinearSample, {&map, &coords},
                     [cells = std::move(cells), h, w, c](const TensorImpl& o) {
                       TensorImpl& mi = input(o, 0);
                       TensorImpl& ci = input(o, 1);
                       const double sx = static_cast<double>(w - 1);
                       const double sy = static_cast<double>(h - 1);
                       double* gm = mi.requires_grad ? mi.ensure_grad().data() : nullptr;
                       double* gc = ci.requires_grad ? ci.ensure_grad().data() : nullptr;
                       for (std::size_t p = 0; p < cells.size(); ++p) {
                         const auto [i0, j0, fx, fy] = cells[p];
                         const std::size_t b00 = (i0 * w + j0) * c;
                         const std::size_t b01 = b00 + c, b10 = b00 + w * c, b11 = b10 + c;
                         const double* g = o.grad.data() + p * c;
                         if (gm) {
                           const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy),
                                        w10 = (1 - fx) * fy, w11 = fx * fy;
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             gm[b00 + ch] += w00 * g[ch];
                             gm[b01 + ch] += w01 * g[ch];
                             gm[b10 + ch] += w10 * g[ch];
                             gm[b11 + ch] += w11 * g[ch];
                           }
                         }
                         if (gc) {
                           const double* m = mi.data.data();
                           double dx = 0.0, dy = 0.0;
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             dx += g[ch] * ((m[b01 + ch] - m[b00 + ch]) * (1 - fy) +
                                            (m[b11 + ch] - m[b10 + ch]) * fy);
                             dy += g[ch] * ((m[b10 + ch] - m[b00 + ch]) * (1 - fx) +
                                            (m[b11 + ch] - m[b01 + ch]) * fx);
                           }
                           gc[2 * p] += dx * sx;
                           gc[2 * p + 1] += dy * sy;
                         }
                       }
                     });
}

Tensor bilinear_sample(const Tensor& map, double x, double y) {
  Tensor coords({1, 2}, std::vector<double>{x, y});
  Tensor s = bilinear_sample(map, coords);
  return reshape(s, {s.dim(1)});
}

Tensor primitive_forward(OpKind kind, std::span<const Tensor> inputs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string("primitive_forward(") + op_name(kind) +
                                  "): expected " + std::to_string(n) + " inputs, got " +
                                  std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::Add: need(2); return add(inputs[0], inputs[1]);
    case OpKind::Sub: need(2); return sub(inputs[0], inputs[1]);
    case OpKind::Mul: need(2); return mul(inputs[0], inputs[1]);
    case OpKind::MatMul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::Relu: need(1); return relu(inputs[0]);
    case OpKind::Sigmoid: need(1); return sigmoid(inputs[0]);
    case OpKind::Abs: need(1); return abs(inputs[0]);
    case OpKind::Sum: need(1); return sum(inputs[0]);
    case OpKind::Mean: need(1); return mean(inputs[0]);
    case OpKind::MaxPool: need(1); return max_pool2d(inputs[0], 2);
    case OpKind::Upsample: need(1); return upsample_nearest(inputs[0], 2);
    case OpKind::SmoothL1: need(1); return smooth_l1(inputs[0]);
    case OpKind::Concat: {
      if (inputs.empty()) throw std::invalid_argument("primitive_forward(concat): no inputs");
      std::vector<Tensor> parts(inputs.begin(), inputs.end());
      return concat(parts, parts.front().rank() - 1);
    }
    case OpKind::Conv2d: {
      need(2);
      if (inputs[1].rank() != 4) {
        throw ShapeError("primitive_forward(conv2d): kernel shape " +
                         to_string(inputs[1].shape()));
      }
      return conv2d(inputs[0], inputs[1], Tensor{}, 1, static_cast<int>(inputs[1].dim(0) / 2));
    }
    default:
      throw std::invalid_argument(std::string("primitive_forward: ") + op_name(kind) +
                                  " needs extra arguments; call it directly");
  }
}

}  // namespace polygcn
