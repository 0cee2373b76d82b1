#include "tsmt/parameter.hpp"

namespace tsmt {

void ParameterStore::check_unique(const std::string& name) const {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
}

Tensor& ParameterStore::add_parameter(const std::string& name, Shape shape) {
  check_unique(name);
  params_.push_back({name, Tensor(std::move(shape), 0.0, true)});
  return params_.back().tensor;
}

Tensor& ParameterStore::add_buffer(const std::string& name, Shape shape, double fill) {
  check_unique(name);
  buffers_.push_back({name, Tensor(std::move(shape), fill, false)});
  return buffers_.back().tensor;
}

const Tensor* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p.tensor;
  for (const auto& b : buffers_)
    if (b.name == name) return &b.tensor;
  return nullptr;
}

Index ParameterStore::count() const {
  Index n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace tsmt
