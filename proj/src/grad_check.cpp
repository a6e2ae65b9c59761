#include "multicos/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace multicos {

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& opt) {
  if (!(opt.step > 0.0 && opt.step <= 1e-2)) throw DomainError("grad_check step must lie in (0, 1e-2]");
  std::vector<Tensor> probes = inputs;
  for (auto& t : probes) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape::current().clear();
  const Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(probes.size());
  for (const auto& t : probes) analytic.push_back(t.grad());

  GradCheckReport report;
  std::mt19937_64 rng(opt.seed);
  NoGradGuard no_grad;
  for (size_t k = 0; k < probes.size(); ++k) {
    Tensor& t = probes[k];
    std::vector<int64_t> elements(static_cast<size_t>(t.numel()));
    std::iota(elements.begin(), elements.end(), 0);
    if (opt.max_elements_per_input >= 0 && static_cast<int64_t>(elements.size()) > opt.max_elements_per_input) {
      std::shuffle(elements.begin(), elements.end(), rng);
      elements.resize(static_cast<size_t>(opt.max_elements_per_input));
      std::sort(elements.begin(), elements.end());
    }
    auto values = t.mutable_data();
    for (int64_t e : elements) {
      const double saved = values[static_cast<size_t>(e)];
      values[static_cast<size_t>(e)] = saved + opt.step;
      const double up = f().item();
      values[static_cast<size_t>(e)] = saved - opt.step;
      const double down = f().item();
      values[static_cast<size_t>(e)] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[k][static_cast<size_t>(e)];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      report.max_error = std::max(report.max_error, err);
      ++report.probed;
      if (!(err < opt.tol)) {
        report.passed = false;
        report.failures.push_back({k, e, a, numeric, err});
      }
    }
  }
  return report;
}

}  // namespace multicos
