#include "multicos/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "multicos/errors.hpp"

namespace multicos {

namespace {

struct Plane {
  int64_t h, w;
  const std::vector<double>& p;
  const std::vector<double>& g;
};

Plane checked(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape() || pred.rank() < 2) {
    throw ShapeMismatch("metric inputs " + shape_str(pred.shape()) + " and " + shape_str(gt.shape()));
  }
  for (double v : pred.values())
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("prediction value " + std::to_string(v) + " outside [0, 1]");
  const int64_t w = pred.dim(pred.rank() - 1);
  return Plane{pred.numel() / w, w, pred.values(), gt.values()};
}

double threshold(int k) { return static_cast<double>(k) / (kThresholds - 1); }

double f_score(const Plane& im, double t) {
  double tp = 0, pp = 0, gp = 0;
  for (size_t i = 0; i < im.p.size(); ++i) {
    const bool on = im.p[i] >= t, pos = im.g[i] > 0.5;
    tp += on && pos;
    pp += on;
    gp += pos;
  }
  if (gp == 0) return pp == 0 ? 1.0 : 0.0;
  if (tp == 0) return 0.0;
  const double precision = tp / pp, recall = tp / gp;
  return (1 + kBetaSquared) * precision * recall / (kBetaSquared * precision + recall);
}

double e_score(const Plane& im, double t) {
  const double n = static_cast<double>(im.p.size());
  double fg = 0, on = 0;
  for (size_t i = 0; i < im.p.size(); ++i) {
    fg += im.g[i] > 0.5;
    on += im.p[i] >= t;
  }
  if (fg == 0) return 1.0 - on / n;
  if (fg == n) return on / n;
  const double mu_f = on / n, mu_g = fg / n;
  double total = 0;
  for (size_t i = 0; i < im.p.size(); ++i) {
    const double a = (im.p[i] >= t ? 1.0 : 0.0) - mu_f;
    const double b = (im.g[i] > 0.5 ? 1.0 : 0.0) - mu_g;
    const double den = a * a + b * b;
    const double align = den == 0 ? 0.0 : 2 * a * b / den;
    total += (align + 1) * (align + 1) / 4;
  }
  // Normalized by the pixel count so that a perfect map scores exactly 1.
  return total / n;
}

double object_score(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double mu = 0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0;
  for (double v : x) var += (v - mu) * (v - mu);
  const double sigma = x.size() > 1 ? std::sqrt(var / static_cast<double>(x.size() - 1)) : 0.0;
  return 2 * mu / (mu * mu + 1 + sigma);
}

double s_object(const Plane& im, double mean_gt) {
  std::vector<double> fg, bg;
  for (size_t i = 0; i < im.p.size(); ++i) {
    if (im.g[i] > 0.5)
      fg.push_back(im.p[i]);
    else
      bg.push_back(1.0 - im.p[i]);
  }
  const double o_fg = object_score(fg), o_bg = object_score(bg);
  return o_bg + mean_gt * (o_fg - o_bg);
}

double ssim_region(const Plane& im, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
  const double n = static_cast<double>((r1 - r0) * (c1 - c0));
  double x = 0, y = 0;
  for (int64_t r = r0; r < r1; ++r)
    for (int64_t c = c0; c < c1; ++c) {
      x += im.p[static_cast<size_t>(r * im.w + c)];
      y += im.g[static_cast<size_t>(r * im.w + c)];
    }
  x /= n;
  y /= n;
  double sx = 0, sy = 0, sxy = 0;
  for (int64_t r = r0; r < r1; ++r)
    for (int64_t c = c0; c < c1; ++c) {
      const double dx = im.p[static_cast<size_t>(r * im.w + c)] - x;
      const double dy = im.g[static_cast<size_t>(r * im.w + c)] - y;
      sx += dx * dx;
      sy += dy * dy;
      sxy += dx * dy;
    }
  const double dof = n > 1 ? n - 1 : 1;
  sx /= dof;
  sy /= dof;
  sxy /= dof;
  const double alpha = 4 * (x * y) * sxy;
  const double beta = (x * x + y * y) * (sx + sy);
  if (alpha != 0) return alpha / beta;
  return beta == 0 ? 1.0 : 0.0;
}

double s_region(const Plane& im) {
  double cx = 0, cy = 0, count = 0;
  for (int64_t r = 0; r < im.h; ++r)
    for (int64_t c = 0; c < im.w; ++c)
      if (im.g[static_cast<size_t>(r * im.w + c)] > 0.5) {
        cx += static_cast<double>(c);
        cy += static_cast<double>(r);
        ++count;
      }
  const int64_t X = count == 0 ? im.w / 2 : std::min<int64_t>(im.w, std::llround(cx / count) + 1);
  const int64_t Y = count == 0 ? im.h / 2 : std::min<int64_t>(im.h, std::llround(cy / count) + 1);
  const int64_t rows[3] = {0, Y, im.h}, cols[3] = {0, X, im.w};
  double total = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const int64_t area = (rows[i + 1] - rows[i]) * (cols[j + 1] - cols[j]);
      if (area == 0) continue;
      total += static_cast<double>(area) * ssim_region(im, rows[i], rows[i + 1], cols[j], cols[j + 1]);
    }
  return total / static_cast<double>(im.h * im.w);
}

}  // namespace

double metric_mae(const Tensor& pred, const Tensor& gt) {
  Plane im = checked(pred, gt);
  double s = 0;
  for (size_t i = 0; i < im.p.size(); ++i) s += std::abs(im.p[i] - im.g[i]);
  return s / static_cast<double>(im.p.size());
}

double fmeasure_at(const Tensor& pred, const Tensor& gt, double t) { return f_score(checked(pred, gt), t); }

double metric_fmeasure(const Tensor& pred, const Tensor& gt, FKind kind) {
  Plane im = checked(pred, gt);
  if (kind == FKind::kAdaptive) {
    double m = 0;
    for (double v : im.p) m += v;
    m /= static_cast<double>(im.p.size());
    return f_score(im, std::min(2 * m, 1.0));
  }
  double best = 0, total = 0;
  for (int k = 0; k < kThresholds; ++k) {
    const double f = f_score(im, threshold(k));
    best = std::max(best, f);
    total += f;
  }
  return kind == FKind::kMax ? best : total / kThresholds;
}

double emeasure_at(const Tensor& pred, const Tensor& gt, double t) { return e_score(checked(pred, gt), t); }

double metric_emeasure(const Tensor& pred, const Tensor& gt, EKind kind) {
  Plane im = checked(pred, gt);
  double best = 0, total = 0;
  for (int k = 0; k < kThresholds; ++k) {
    const double e = e_score(im, threshold(k));
    best = std::max(best, e);
    total += e;
  }
  return kind == EKind::kMax ? best : total / kThresholds;
}

double metric_smeasure(const Tensor& pred, const Tensor& gt, double alpha) {
  Plane im = checked(pred, gt);
  double mean_gt = 0, mean_p = 0;
  for (size_t i = 0; i < im.p.size(); ++i) {
    mean_gt += im.g[i] > 0.5;
    mean_p += im.p[i];
  }
  mean_gt /= static_cast<double>(im.p.size());
  mean_p /= static_cast<double>(im.p.size());
  if (mean_gt == 0) return 1.0 - mean_p;
  if (mean_gt == 1) return mean_p;
  const double so = s_object(im, mean_gt), sr = s_region(im);
  return std::max(0.0, sr + alpha * (so - sr));
}

MetricReport evaluate_image(const Tensor& pred, const Tensor& gt) {
  MetricReport r;
  r.images = 1;
  r.M = metric_mae(pred, gt);
  r.F_max = metric_fmeasure(pred, gt, FKind::kMax);
  r.F_mean = metric_fmeasure(pred, gt, FKind::kMean);
  r.F_adp = metric_fmeasure(pred, gt, FKind::kAdaptive);
  r.E_max = metric_emeasure(pred, gt, EKind::kMax);
  r.E_mean = metric_emeasure(pred, gt, EKind::kMean);
  r.S = metric_smeasure(pred, gt);
  return r;
}

void MetricAccumulator::add(const Tensor& pred, const Tensor& gt) { add(evaluate_image(pred, gt)); }

void MetricAccumulator::add(const MetricReport& r) {
  const double n = static_cast<double>(r.images);
  sum_.images += r.images;
  sum_.M += n * r.M;
  sum_.F_max += n * r.F_max;
  sum_.F_mean += n * r.F_mean;
  sum_.F_adp += n * r.F_adp;
  sum_.E_max += n * r.E_max;
  sum_.E_mean += n * r.E_mean;
  sum_.S += n * r.S;
}

MetricReport MetricAccumulator::result() const {
  MetricReport r = sum_;
  if (r.images == 0) return r;
  const double n = static_cast<double>(r.images);
  for (double* v : {&r.M, &r.F_max, &r.F_mean, &r.F_adp, &r.E_max, &r.E_mean, &r.S}) *v /= n;
  return r;
}

namespace {

nlohmann::json to_json(const MetricReport& r) {
  return {{"dataset", r.dataset}, {"images", r.images}, {"M", r.M},         {"F_max", r.F_max},
          {"F_mean", r.F_mean},   {"F_adp", r.F_adp},   {"E_max", r.E_max}, {"E_mean", r.E_mean},
          {"S", r.S}};
}

}  // namespace

std::string report_json(const MetricReport& r) { return to_json(r).dump(2); }

std::string report_json(const std::vector<MetricReport>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) arr.push_back(to_json(r));
  return arr.dump(2);
}

std::string report_table(const std::vector<MetricReport>& rows) {
  size_t name_w = 7;
  for (const auto& r : rows) name_w = std::max(name_w, r.dataset.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "dataset" << std::right;
  for (const char* h : {"M", "F_max", "F_mean", "F_adp", "E_max", "E_mean", "S"}) os << std::setw(9) << h;
  os << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << r.dataset << std::right;
    for (double v : {r.M, r.F_max, r.F_mean, r.F_adp, r.E_max, r.E_mean, r.S}) os << std::setw(9) << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace multicos
