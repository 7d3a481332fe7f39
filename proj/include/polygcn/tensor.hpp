#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace polygcn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised by every primitive whose operand shapes are incompatible. The
/// message always carries the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  AddBias,
  MatMul,
  Linear,
  Conv2d,
  Relu,
  Sigmoid,
  Abs,
  Clamp,
  Concat,
  Sum,
  Mean,
  MaxPool,
  Upsample,
  Reshape,
  IndexSelect,
  RollRows,
  NeighborSum,
  BilinearSample,
  RoiAlign,
  SmoothL1,
  BceWithLogits,
};

const char* op_name(OpKind kind);

struct TensorImpl;

/// One recorded operation. Inputs are owned so the graph stays alive for as
/// long as any tensor produced from it does.
struct TapeNode {
  OpKind op = OpKind::Leaf;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Reads `out.grad` and accumulates into the grads of the inputs that
  // require them.
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::unique_ptr<TapeNode> node;

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

/// Dense row-major double tensor with an optional recorded history.
/// Copies share storage (handle semantics); use `detach()` or `clone()` for
/// an independent value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Writing through this on a tensor that already feeds a recorded op
  // invalidates that op's gradient.
  std::span<double> mutable_data() { return impl_->data; }
  std::span<const double> grad() const { return impl_->grad; }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  void zero_grad() { impl_->grad.clear(); }

  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
  OpKind op() const { return impl_->node ? impl_->node->op : OpKind::Leaf; }

  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

bool grad_enabled();

/// Disables recording for its lifetime (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar. Gradients accumulate into every
/// reachable tensor that requires them.
void backward(const Tensor& loss);

namespace detail {

using BackwardFn = std::function<void(const TensorImpl& out)>;

// Builds an op result. The backward closure is kept only when recording is
// enabled and some input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> data, OpKind op,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data, OpKind op,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

}  // namespace detail

}  // namespace polygcn
