#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "sca/tape.hpp"

namespace sca {

// Builds a scalar on `tape` from leaf variables bound to the parameters.
using ScalarGraph = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t param = 0;  // location of the worst entry
  std::size_t entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool finite = true;  // false if any evaluation produced NaN/Inf
  std::size_t entries_checked = 0;
};

// Compares tape gradients against central differences
// (f(x+eps) - f(x-eps)) / 2eps for every parameter entry.
//
// Relative error is |a - n| / max(|a|, |n|), defined as 0 when both are
// below `abs_floor`. A non-finite evaluation is reported at its coordinate
// with infinite error.
GradCheckResult finite_diff_check(const ScalarGraph& f,
                                  const std::vector<Tensor>& params,
                                  double eps = 1e-5, double abs_floor = 1e-12);

}  // namespace sca
