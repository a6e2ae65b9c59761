#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "multicos/tensor.hpp"

namespace multicos {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  /// Cap on probed elements per input (< 0 probes all). Probed elements are
  /// drawn deterministically from `seed`.
  int64_t max_elements_per_input = -1;
  uint64_t seed = 0;
};

struct GradCheckMismatch {
  size_t input;
  int64_t element;
  double analytic;
  double numeric;
  double error;
};

struct GradCheckReport {
  bool passed = true;
  double max_error = 0.0;
  int64_t probed = 0;
  std::vector<GradCheckMismatch> failures;
};

/// Compares tape gradients of the scalar `f` against central differences on
/// each element of `inputs`. The error of one element is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& opt = {});

}  // namespace multicos
