#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "polygcn/tensor.hpp"

namespace polygcn {

struct GradProbe {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool kink = false;  // excluded from pass/fail
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradProbe> probes;

  std::size_t checked() const;  // probes not flagged as kinks
  std::size_t kinks() const { return probes.size() - checked(); }
  double max_rel_error() const;
  bool passed() const;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // rel_error = |analytic - numeric| / max(|analytic|, |numeric|, floor)
  double floor = 1e-5;
  // A probe is a kink when its one-sided differences disagree by more than
  // kink_tol (relative, same floor), i.e. the function bends within +-eps.
  double kink_tol = 2e-4;
  // Coordinates to probe; empty means all.
  std::vector<std::size_t> coordinates;
  // Known non-differentiable points, e.g. |x| = 1 for smooth L1.
  std::function<bool(std::span<const double> x, std::size_t i)> is_kink;
};

/// Central-difference check of d f / d input. `f` must return a scalar.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& input,
                           const GradCheckOptions& options = {});

/// Same check against a tensor that `f` closes over (e.g. a model
/// parameter). `target` is perturbed in place and restored.
GradCheckReport grad_check_inplace(const std::function<Tensor()>& f, Tensor& target,
                                   const GradCheckOptions& options = {});

}  // namespace polygcn
