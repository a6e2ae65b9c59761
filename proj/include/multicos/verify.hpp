#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "multicos/grad_check.hpp"

namespace multicos {

/// One differentiable block of the model with a randomly initialised
/// instance, random inputs and a fixed tolerance.
struct GradientBlock {
  std::string name;
  double tol;
  std::function<GradCheckReport(uint64_t seed, bool corrupt)> run;
};

/// Every block exactly once, in a fixed order.
const std::vector<GradientBlock>& gradient_blocks();

struct BlockResult {
  std::string name;
  double tol = 0.0;
  bool passed = false;
  double max_error = 0.0;
  int64_t probed = 0;
};

/// Runs the registry. A block named in `corrupt` gets a deliberately wrong
/// analytic gradient so the harness can prove it notices.
std::vector<BlockResult> run_gradient_suite(uint64_t seed, const std::vector<std::string>& corrupt = {},
                                            const std::vector<std::string>& only = {});

}  // namespace multicos
