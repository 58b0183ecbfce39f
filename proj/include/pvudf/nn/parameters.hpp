#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "pvudf/nn/tensor.hpp"

namespace pvudf::nn {

/// A learnable tensor with its gradient and Adam moment buffers.
struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;
  bool grad_ready = false;  // set by backward, cleared by the optimizer
};

/// Named parameters plus non-learnable buffers (batchnorm running statistics).
/// Iteration is in name order, which fixes the serialization order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor initial);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Tensor& add_buffer(const std::string& name, Tensor initial);
  Tensor& buffer(const std::string& name);
  const Tensor& buffer(const std::string& name) const;

  std::map<std::string, Parameter>& parameters() { return params_; }
  const std::map<std::string, Parameter>& parameters() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t step) { step_ = step; }

  void zero_grad();
  std::size_t parameter_count() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  std::map<std::string, Parameter> params_;
  std::map<std::string, Tensor> buffers_;
  std::int64_t step_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update over every parameter, then zeroes gradients.
/// Throws if any parameter's gradient was not populated since the last step.
void adam_step(ParameterStore& store, const AdamConfig& config);

}  // namespace pvudf::nn
