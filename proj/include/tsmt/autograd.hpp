#ifndef TSMT_AUTOGRAD_HPP
#define TSMT_AUTOGRAD_HPP

// Helpers for defining differentiable ops outside ops.cpp.

#include <functional>
#include <vector>

#include "tsmt/tensor.hpp"

namespace tsmt::autograd {

using ImplPtr = std::shared_ptr<TensorImpl>;

inline bool tracks(const Tensor& t) { return t.defined() && (t.requires_grad() || t.grad_fn()); }
inline bool tracks(const ImplPtr& t) { return t && (t->requires_grad || t->grad_fn); }

inline void push(const ImplPtr& t, const Vector& g) {
  if (tracks(t)) t->accumulate_grad(g);
}

/// Wraps forward data as a tensor and records `apply` when any input is
/// tracked and recording is enabled.
Tensor make_result(Shape shape, Vector data, const char* op, const std::vector<Tensor>& inputs,
                   std::function<void(const Vector&)> apply);

}  // namespace tsmt::autograd

#endif  // TSMT_AUTOGRAD_HPP
