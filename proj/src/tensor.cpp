#include "tsmt/tensor.hpp"

#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tsmt {

namespace {
thread_local bool g_grad_enabled = true;

// Activation buffers run to ~100 MB. glibc maps such blocks fresh on every
// allocation, and the page faults cost more than the arithmetic; keep them
// on the heap so freed blocks are reused.
[[maybe_unused]] const bool g_allocator_tuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return true;
}();
}  // namespace

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void TensorImpl::accumulate_grad(const Vector& g) {
  if (grad.size() == 0)
    grad = g;
  else
    grad += g;
}

void TensorImpl::accumulate_grad(Vector&& g) {
  if (grad.size() == 0)
    grad = std::move(g);
  else
    grad += g;
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) : impl_(std::make_shared<TensorImpl>()) {
  const Index n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data = Vector::Constant(n, fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, Vector data, bool requires_grad) : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size())
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v[i++] = x;
  return Tensor(std::move(shape), std::move(v));
}

Index Tensor::dim(int axis) const {
  const int n = ndim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  return shape()[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  impl().requires_grad = value;
  return *this;
}

void Tensor::zero_grad() { impl().grad = Vector::Zero(numel()); }

Tensor Tensor::detach() const { return Tensor(shape(), data(), false); }

Tensor Tensor::wrap(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

TensorImpl& Tensor::impl() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

const TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  std::unordered_set<TensorImpl*> visited;
  // Iterative post-order DFS; inputs are emitted before the node itself.
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.impl_ptr().get(), 0);
  visited.insert(root.impl_ptr().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      TensorImpl* child = fn->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    tape.nodes_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

void Tape::run(const Tensor& root) const {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->grad_fn || node->grad.size() == 0) continue;
    node->grad_fn->apply(node->grad);
    if (node != root.impl_ptr().get() && !node->requires_grad) node->grad.resize(0);
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw DimensionError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  const Tape tape = Tape::record(loss);
  loss.impl_ptr()->accumulate_grad(Vector::Ones(1));
  tape.run(loss);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace tsmt
