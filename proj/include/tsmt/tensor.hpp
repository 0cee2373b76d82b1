#ifndef TSMT_TENSOR_HPP
#define TSMT_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tsmt {

using Index = std::int64_t;
using Shape = std::vector<Index>;
using Vector = Eigen::Matrix<double, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised for any shape, axis or dimension inconsistency.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for invalid layer or run configuration (groups, strides, weights...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// Backward rule recorded for one operation. `inputs` are the tensors the
/// rule may push gradient into; `apply` receives the output gradient.
struct GradNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const Vector& grad_out)> apply;
};

struct TensorImpl {
  Shape shape;
  Vector data;
  Vector grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<GradNode> grad_fn;

  void accumulate_grad(const Vector& g);
  void accumulate_grad(Vector&& g);
};

/// Dense row-major float64 tensor with an optional reverse-mode graph.
///
/// Copies share storage (handle semantics); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, Vector data, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }
  static Tensor from(Shape shape, std::initializer_list<double> values);
  static Tensor scalar(double value) { return Tensor(Shape{}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  Index dim(int axis) const;
  int ndim() const { return static_cast<int>(shape().size()); }
  Index numel() const { return impl().data.size(); }

  Vector& data() { return impl().data; }
  const Vector& data() const { return impl().data; }
  double* raw() { return impl().data.data(); }
  const double* raw() const { return impl().data.data(); }
  double& operator[](Index i) { return impl().data[i]; }
  double operator[](Index i) const { return impl().data[i]; }
  double item() const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool value = true);
  bool has_grad() const { return impl().grad.size() == numel(); }
  const Vector& grad() const { return impl().grad; }
  void zero_grad();
  void clear_grad() { impl().grad.resize(0); }

  /// Same storage semantics as PyTorch's detach(): new leaf, copied data.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<GradNode>& grad_fn() const { return impl().grad_fn; }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

  /// Wraps an existing impl; used by the op layer.
  static Tensor wrap(std::shared_ptr<TensorImpl> impl);

 private:
  TensorImpl& impl();
  const TensorImpl& impl() const;

  std::shared_ptr<TensorImpl> impl_;
};

/// Topologically ordered record of the operations reachable from a root.
///
/// Built from the grad_fn links of a forward pass; every node appears after
/// all of its inputs, and run() visits each node once in reverse order.
class Tape {
 public:
  static Tape record(const Tensor& root);

  const std::vector<TensorImpl*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  void run(const Tensor& root) const;

 private:
  std::vector<TensorImpl*> nodes_;
};

/// Populates .grad on every tensor reachable from `loss` that requires grad.
/// Throws DimensionError unless loss holds exactly one element.
void backward(const Tensor& loss);

/// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace tsmt

#endif  // TSMT_TENSOR_HPP
