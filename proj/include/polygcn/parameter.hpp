#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "polygcn/rng.hpp"
#include "polygcn/tensor.hpp"

namespace polygcn {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Named parameter registry owned by a model. Names are unique; insertion
/// order is the canonical order for checkpoints and optimizers.
class ParameterStore {
 public:
  /// Glorot-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)).
  Tensor add_weight(const std::string& name, Shape shape, std::size_t fan_in,
                    std::size_t fan_out, SeededRng& rng);
  Tensor add_zeros(const std::string& name, Shape shape);
  Tensor add(const std::string& name, Tensor value);

  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  /// Marks every parameter trainable iff `pred(name)` holds. Frozen
  /// parameters stop requiring gradients, so no tape records through them.
  void set_trainable(const std::function<bool(const std::string&)>& pred);
  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
};

}  // namespace polygcn
