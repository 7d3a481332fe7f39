#include "polygcn/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace polygcn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::AddBias: return "add_bias";
    case OpKind::MatMul: return "matmul";
    case OpKind::Linear: return "linear";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Abs: return "abs";
    case OpKind::Clamp: return "clamp";
    case OpKind::Concat: return "concat";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::MaxPool: return "max_pool";
    case OpKind::Upsample: return "upsample";
    case OpKind::Reshape: return "reshape";
    case OpKind::IndexSelect: return "index_select";
    case OpKind::RollRows: return "roll_rows";
    case OpKind::NeighborSum: return "neighbor_sum";
    case OpKind::BilinearSample: return "bilinear_sample";
    case OpKind::RoiAlign: return "roi_align";
    case OpKind::SmoothL1: return "smooth_l1";
    case OpKind::BceWithLogits: return "bce_with_logits";
  }
  return "unknown";
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(polygcn::numel(shape), fill);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (polygcn::numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + to_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(impl_->shape));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw ShapeError("item() on non-scalar tensor of shape " + to_string(impl_->shape));
  }
  return impl_->data[0];
}

Tensor Tensor::detach() const {
  return Tensor(impl_->shape, impl_->data, false);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  TensorImpl* root = loss.impl().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->node && next < node->node->inputs.size()) {
      TensorImpl* child = node->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (t->node && t->node->backward && !t->grad.empty()) t->node->backward(*t);
  }
}

namespace detail {

namespace {
Tensor finish(Shape shape, std::vector<double> data, OpKind op,
              std::vector<std::shared_ptr<TensorImpl>> inputs, bool any_grad,
              BackwardFn backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (any_grad && g_grad_enabled) {
    impl->requires_grad = true;
    impl->node = std::make_unique<TapeNode>();
    impl->node->op = op;
    impl->node->inputs = std::move(inputs);
    impl->node->backward = std::move(backward);
  }
  return Tensor(std::move(impl));
}
}  // namespace

Tensor make_result(Shape shape, std::vector<double> data, OpKind op,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  std::vector<std::shared_ptr<TensorImpl>> owned;
  bool any = false;
  if (g_grad_enabled) {
    for (const Tensor* t : inputs) {
      owned.push_back(t->impl());
      any = any || t->requires_grad();
    }
  }
  return finish(std::move(shape), std::move(data), op, std::move(owned), any,
                std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> data, OpKind op,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  std::vector<std::shared_ptr<TensorImpl>> owned;
  bool any = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) {
      owned.push_back(t.impl());
      any = any || t.requires_grad();
    }
  }
  return finish(std::move(shape), std::move(data), op, std::move(owned), any,
                std::move(backward));
}

}  // namespace detail

}  // namespace polygcn
