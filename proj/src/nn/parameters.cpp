#include "pvudf/nn/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace pvudf::nn {

Parameter& ParameterStore::add(const std::string& name, Tensor initial) {
  if (params_.count(name) || buffers_.count(name)) {
    throw std::invalid_argument("duplicate parameter name '" + name + "'");
  }
  Parameter p;
  p.grad = Tensor(initial.shape());
  p.first_moment = Tensor(initial.shape());
  p.second_moment = Tensor(initial.shape());
  p.value = std::move(initial);
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterStore::add_buffer(const std::string& name, Tensor initial) {
  if (params_.count(name) || buffers_.count(name)) {
    throw std::invalid_argument("duplicate buffer name '" + name + "'");
  }
  return buffers_.emplace(name, std::move(initial)).first->second;
}

Tensor& ParameterStore::buffer(const std::string& name) {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw std::out_of_range("unknown buffer '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw std::out_of_range("unknown buffer '" + name + "'");
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [name, p] : params_) {
    p.grad.fill(0.0);
    p.grad_ready = false;
  }
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t count = 0;
  for (const auto& [name, p] : params_) count += p.value.size();
  return count;
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.step_ != b.step_ || a.buffers_ != b.buffers_ || a.params_.size() != b.params_.size()) {
    return false;
  }
  for (auto ia = a.params_.begin(), ib = b.params_.begin(); ia != a.params_.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.value != ib->second.value ||
        ia->second.first_moment != ib->second.first_moment ||
        ia->second.second_moment != ib->second.second_moment) {
      return false;
    }
  }
  return true;
}

void adam_step(ParameterStore& store, const AdamConfig& config) {
  for (const auto& [name, p] : store.parameters()) {
    if (!p.grad_ready) throw std::logic_error("adam_step: parameter '" + name + "' has no gradient");
  }
  const std::int64_t t = store.step() + 1;
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (auto& [name, p] : store.parameters()) {
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = p.first_moment.data();
    double* v = p.second_moment.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
  store.set_step(t);
  store.zero_grad();
}

}  // namespace pvudf::nn
