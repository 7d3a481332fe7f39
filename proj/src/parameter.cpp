#include "polygcn/parameter.hpp"

#include <cmath>
#include <stdexcept>

namespace polygcn {

Tensor ParameterStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  params_.push_back({name, value, true});
  return value;
}

Tensor ParameterStore::add_weight(const std::string& name, Shape shape, std::size_t fan_in,
                                  std::size_t fan_out, SeededRng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(numel(shape));
  for (double& v : data) v = rng.uniform(-a, a);
  return add(name, Tensor(std::move(shape), std::move(data)));
}

Tensor ParameterStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, Tensor(std::move(shape), 0.0));
}

Parameter& ParameterStore::get(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

const Parameter& ParameterStore::get(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

bool ParameterStore::contains(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

void ParameterStore::set_trainable(const std::function<bool(const std::string&)>& pred) {
  for (auto& p : params_) {
    p.trainable = pred(p.name);
    p.tensor.set_requires_grad(p.trainable);
    p.tensor.zero_grad();
  }
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

}  // namespace polygcn
