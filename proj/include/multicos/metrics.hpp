#pragma once

#include <string>
#include <vector>

#include "multicos/tensor.hpp"

namespace multicos {

inline constexpr int kThresholds = 256;  // t = k / 255, k = 0..255
inline constexpr double kBetaSquared = 0.3;

enum class FKind { kMax, kMean, kAdaptive };
enum class EKind { kMax, kMean };

/// Every metric takes a prediction in [0, 1] and a binary ground truth of
/// equal shape; only the last two axes are read as the image plane.
double metric_mae(const Tensor& pred, const Tensor& gt);
/// F at one binarization threshold (pred >= t).
double fmeasure_at(const Tensor& pred, const Tensor& gt, double threshold);
double metric_fmeasure(const Tensor& pred, const Tensor& gt, FKind kind);
double emeasure_at(const Tensor& pred, const Tensor& gt, double threshold);
double metric_emeasure(const Tensor& pred, const Tensor& gt, EKind kind);
double metric_smeasure(const Tensor& pred, const Tensor& gt, double alpha = 0.5);

struct MetricReport {
  std::string dataset;
  int64_t images = 0;
  double M = 0, F_max = 0, F_mean = 0, F_adp = 0, E_max = 0, E_mean = 0, S = 0;
};

MetricReport evaluate_image(const Tensor& pred, const Tensor& gt);

/// Order-independent mean of per-image reports.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::string dataset) { sum_.dataset = std::move(dataset); }
  void add(const Tensor& pred, const Tensor& gt);
  void add(const MetricReport& r);
  MetricReport result() const;

 private:
  MetricReport sum_;
};

std::string report_json(const MetricReport& r);
std::string report_json(const std::vector<MetricReport>& rows);
std::string report_table(const std::vector<MetricReport>& rows);

}  // namespace multicos
