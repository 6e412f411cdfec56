#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wsds/autodiff.hpp"

namespace wsds {

/// Builds a scalar from leaves bound on `tape`, in the order of the inputs.
using ScalarFunction = std::function<Var(Tape& tape, const std::vector<Var>& inputs)>;

/// Worst relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8)
/// over all inputs, with numeric gradients from central differences of step `h`.
double gradient_error(const ScalarFunction& fn, const std::vector<Tensor>& inputs,
                      double h = 1e-5);

struct GradCheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_error < tolerance; }
};

struct GradCheckOptions {
  /// Random instances per primitive op; network-level cases use fewer.
  std::size_t instances = 20;
  double step = 1e-5;
  std::uint64_t seed = 1;
  /// Called after each case finishes.
  std::function<void(const GradCheckResult&)> on_result;
};

/// Every differentiable op, every loss, the attention, encoder, FA block and
/// neck, and each parameter of a tiny full model (levels 2x2/4x4/8x8, C=8,
/// 2 heads, 2 points). Ops and layers must stay below 1e-4, the neck and
/// full model below 1e-3.
std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options = {});

}  // namespace wsds
