#ifndef TSMT_PARAMETER_HPP
#define TSMT_PARAMETER_HPP

#include <string>
#include <vector>

#include "tsmt/tensor.hpp"

namespace tsmt {

struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Ordered, uniquely named trainable parameters plus non-trainable buffers
/// (batch-norm running statistics).
class ParameterStore {
 public:
  Tensor& add_parameter(const std::string& name, Shape shape);
  Tensor& add_buffer(const std::string& name, Shape shape, double fill);

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& buffers() { return buffers_; }
  const std::vector<Parameter>& buffers() const { return buffers_; }

  const Tensor* find(const std::string& name) const;

  /// Scalar count of trainable parameters; buffers are excluded.
  Index count() const;
  void zero_grad();

 private:
  void check_unique(const std::string& name) const;

  std::vector<Parameter> params_;
  std::vector<Parameter> buffers_;
};

}  // namespace tsmt

#endif  // TSMT_PARAMETER_HPP
