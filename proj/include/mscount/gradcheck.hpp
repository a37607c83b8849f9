#pragma once

#include <cstddef>
#include <functional>

#include "mscount/tensor.hpp"

namespace mscount {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates skipped because the function has a kink within epsilon.
  std::size_t skipped = 0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Skip coordinates whose one-sided difference quotients disagree by more
  /// than kink_tolerance * max(1, |central|): the function is not
  /// differentiable within epsilon there (relu at 0, max-pool ties).
  bool skip_kinks = false;
  double kink_tolerance = 1e-2;
};

using ScalarFn = std::function<Tensor(Tape&)>;

/// Compares the tape gradient of scalar-valued `f` with respect to `x`
/// against central differences (f(x+eps e_i) - f(x-eps e_i)) / 2eps,
/// perturbing x in place. `f` must read x through the same storage.
/// Relative error per coordinate is |a - b| / max(1, |a|, |b|).
///
/// Throws std::invalid_argument for non-scalar f or epsilon outside [1e-7, 1e-3].
GradCheckResult gradient_check(const ScalarFn& f, Tensor x,
                               const GradCheckOptions& options = {});

/// Convenience form for a function of one input tensor.
GradCheckResult gradient_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                               const Tensor& x, double epsilon);

}  // namespace mscount
