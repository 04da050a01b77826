#pragma once
// Finite-difference verification of the autodiff engine. Checks run in double
// so that the central-difference error stays far below the tolerance.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "metaprompt/tensor.hpp"

namespace metaprompt {

inline constexpr double kGradCheckEps = 1e-3;
inline constexpr double kGradCheckTolerance = 1e-3;

/// Max over elements of |a − n| / max(|a|, |n|, 1e-6), where a is the
/// analytic gradient of f at x0 and n the central difference with step eps.
double grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x0,
                  double eps = kGradCheckEps);

/// Same comparison for a tensor already wired into `loss` (for example a model
/// parameter). The tensor's values are perturbed in place and restored.
double grad_check_inplace(const std::function<TensorD()>& loss, TensorD param,
                          double eps = kGradCheckEps);

struct GradCheckOptions {
  double eps = kGradCheckEps;
  double tolerance = kGradCheckTolerance;
  std::uint64_t seed = 0;
  bool end_to_end = true;
  /// Adds a case whose backward is deliberately wrong.
  bool inject_fault = false;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckCase {
  std::string name;
  std::function<double(std::uint64_t seed, double eps)> run;
};

/// Every differentiable op, each listed once, followed by the end-to-end
/// segmentation and depth losses when requested.
std::vector<GradCheckCase> gradcheck_registry(const GradCheckOptions& options);

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options);

}  // namespace metaprompt
