#include "polygcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace polygcn {

std::size_t GradCheckReport::checked() const {
  return static_cast<std::size_t>(
      std::count_if(probes.begin(), probes.end(), [](const GradProbe& p) { return !p.kink; }));
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& p : probes) {
    if (!p.kink) m = std::max(m, p.rel_error);
  }
  return m;
}

bool GradCheckReport::passed() const {
  return std::all_of(probes.begin(), probes.end(), [](const GradProbe& p) { return p.passed; });
}

GradCheckReport grad_check_inplace(const std::function<Tensor()>& f, Tensor& target,
                                   const GradCheckOptions& options) {
  const bool had_flag = target.requires_grad();
  target.set_requires_grad(true);
  target.zero_grad();
  {
    Tensor y = f();
    backward(y);
  }
  std::vector<double> analytic(target.numel(), 0.0);
  if (target.has_grad()) std::copy(target.grad().begin(), target.grad().end(), analytic.begin());
  target.zero_grad();
  target.set_requires_grad(had_flag);

  std::vector<std::size_t> coords = options.coordinates;
  if (coords.empty()) {
    coords.resize(target.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
  }
  for (std::size_t i : coords) {
    if (i >= target.numel()) {
      throw std::out_of_range("grad_check: coordinate " + std::to_string(i) +
                              " outside a tensor of " + std::to_string(target.numel()) +
                              " values");
    }
  }

  auto eval = [&] {
    NoGradGuard guard;
    return f().item();
  };
  const double f0 = eval();
  auto rel = [&](double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), options.floor});
  };

  GradCheckReport report;
  auto values = target.mutable_data();
  for (std::size_t i : coords) {
    const double saved = values[i];
    values[i] = saved + options.eps;
    const double fp = eval();
    values[i] = saved - options.eps;
    const double fm = eval();
    values[i] = saved;

    GradProbe p;
    p.index = i;
    p.analytic = analytic[i];
    p.numeric = (fp - fm) / (2.0 * options.eps);
    p.rel_error = rel(p.analytic, p.numeric);
    const double fwd = (fp - f0) / options.eps;
    const double bwd = (f0 - fm) / options.eps;
    p.kink = rel(fwd, bwd) > options.kink_tol ||
             (options.is_kink && options.is_kink(std::span<const double>(values), i));
    p.passed = p.kink || p.rel_error <= options.tol;
    report.probes.push_back(p);
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& input,
                           const GradCheckOptions& options) {
  Tensor x = input.detach();
  return grad_check_inplace([&] { return f(x); }, x, options);
}

}  // namespace polygcn
