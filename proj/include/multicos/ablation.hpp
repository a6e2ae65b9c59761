#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "multicos/train.hpp"

namespace multicos {

struct AblationRow {
  std::string name;
  RunConfig config;
};

/// Configuration rows of the three ablation studies, derived from `base`:
///   5  fusion modules: rgb_only, +E_u, +SSFM, +LSFM, +SSFM+LSFM, +FFM+LSFM,
///      +FFM+SSFM, full
///   6  sub-modules of the state-space fusion: -g_w, -SSM, -CSSM, full
///   8  translator: w/o Know-Vec, Only Know-Vec, full
std::vector<AblationRow> ablation_rows(int table, const RunConfig& base);

struct RowResult {
  std::string name;
  RunConfig config;
  std::vector<StepLosses> curve;  // one entry per step
  MetricReport test;
};

/// Trains one row for `config.steps` steps on its own data and evaluates it
/// on the held-out scenes. `data` may be shared between rows with the same
/// data settings; null loads it from the config.
RowResult run_row(const AblationRow& row, std::shared_ptr<const TrainData> data = nullptr,
                  const std::function<void(int64_t, const StepLosses&)>& log = {});

}  // namespace multicos
