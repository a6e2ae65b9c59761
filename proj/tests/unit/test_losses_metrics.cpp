#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <json.hpp>

#include "multicos/grad_check.hpp"
#include "multicos/losses.hpp"
#include "multicos/metrics.hpp"
#include "multicos/ops.hpp"
#include "plain.hpp"
#include "rand.hpp"

using namespace multicos;

namespace {

Tensor binary_mask(std::mt19937_64& rng, Shape shape, double p = 0.4) {
  std::bernoulli_distribution b(p);
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = b(rng) ? 1.0 : 0.0;
  return t;
}

/// Mask with a filled rectangle so the boundary weights are non-trivial.
Tensor rect_mask(int64_t b, int64_t h, int64_t w, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
  Tensor t({b, 1, h, w});
  auto d = t.mutable_data();
  for (int64_t n = 0; n < b; ++n)
    for (int64_t r = r0; r < r1; ++r)
      for (int64_t c = c0; c < c1; ++c) d[static_cast<size_t>((n * h + r) * w + c)] = 1.0;
  return t;
}

std::vector<double> box_weights_loop(const Tensor& y) {
  const int64_t n = y.dim(0), h = y.dim(2), w = y.dim(3);
  std::vector<double> out(y.values().size());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        double s = 0;
        for (int64_t di = -7; di <= 7; ++di)
          for (int64_t dj = -7; dj <= 7; ++dj) {
            const int64_t ii = i + di, jj = j + dj;
            if (ii >= 0 && ii < h && jj >= 0 && jj < w) s += y.values()[static_cast<size_t>((b * h + ii) * w + jj)];
          }
        const double v = y.values()[static_cast<size_t>((b * h + i) * w + j)];
        out[static_cast<size_t>((b * h + i) * w + j)] = 1 + 5 * std::abs(s / 225.0 - v);
      }
  return out;
}

double wbce_loop(const Tensor& p, const Tensor& y, const Tensor& w) {
  const int64_t b = p.dim(0), per = p.numel() / b;
  double total = 0;
  for (int64_t n = 0; n < b; ++n) {
    double num = 0, den = 0;
    for (int64_t i = 0; i < per; ++i) {
      const size_t k = static_cast<size_t>(n * per + i);
      const double s = oracle::sig(p.values()[k]), t = y.values()[k];
      num += w.values()[k] * -(t * std::log(s) + (1 - t) * std::log(1 - s));
      den += w.values()[k];
    }
    total += num / den;
  }
  return total / static_cast<double>(b);
}

double wiou_loop(const Tensor& p, const Tensor& y, const Tensor& w) {
  const int64_t b = p.dim(0), per = p.numel() / b;
  double total = 0;
  for (int64_t n = 0; n < b; ++n) {
    double inter = 0, uni = 0;
    for (int64_t i = 0; i < per; ++i) {
      const size_t k = static_cast<size_t>(n * per + i);
      const double s = oracle::sig(p.values()[k]), t = y.values()[k];
      inter += w.values()[k] * s * t;
      uni += w.values()[k] * (s + t - s * t);
    }
    total += 1 - (inter + 1) / (uni + 1);
  }
  return total / static_cast<double>(b);
}

double dice_loop(const Tensor& p, const Tensor& e) {
  const int64_t b = p.dim(0), per = p.numel() / b;
  double total = 0;
  for (int64_t n = 0; n < b; ++n) {
    double inter = 0, sp = 0, se = 0;
    for (int64_t i = 0; i < per; ++i) {
      const size_t k = static_cast<size_t>(n * per + i);
      const double s = oracle::sig(p.values()[k]);
      inter += s * e.values()[k];
      sp += s;
      se += e.values()[k];
    }
    total += 1 - (2 * inter + 1) / (sp + se + 1);
  }
  return total / static_cast<double>(b);
}

Tensor saturated(const Tensor& y, double mag = 20.0) {
  Tensor t(y.shape());
  for (size_t i = 0; i < y.values().size(); ++i) t.mutable_data()[i] = y.values()[i] > 0.5 ? mag : -mag;
  return t;
}

Tensor nearest_map(const Tensor& y, int64_t h, int64_t w) {
  oracle::Map m = oracle::nearest(oracle::Map(y.dim(0), y.dim(1), y.dim(2), y.dim(3), y.values()), h, w);
  return Tensor({m.b, m.c, m.h, m.w}, m.v);
}

}  // namespace

TEST(Losses, BoundaryWeightsMatchBoxLoop) {
  std::mt19937_64 rng(101);
  Tensor y = binary_mask(rng, {2, 1, 19, 23});
  Tensor w = boundary_weights(y);
  EXPECT_LT(oracle::max_abs_diff(w.values(), box_weights_loop(y)), 1e-12);
  for (double v : w.values()) EXPECT_GE(v, 1.0);
  EXPECT_FALSE(w.requires_grad());
}

TEST(Losses, WeightedBce) {
  std::mt19937_64 rng(102);
  Tensor y = rect_mask(2, 16, 16, 3, 11, 4, 12);
  Tensor w = boundary_weights(y);
  EXPECT_LE(weighted_bce(saturated(y), y, w).item(), 1e-6);
  EXPECT_NEAR(weighted_bce(Tensor(y.shape(), 0.0), y, Tensor(y.shape(), 1.0)).item(), std::log(2.0), 1e-13);
  Tensor p = oracle::random_tensor(rng, y.shape(), -3, 3);
  EXPECT_NEAR(weighted_bce(p, y, w).item(), wbce_loop(p, y, w), 1e-12);
  EXPECT_THROW(weighted_bce(p, Tensor({2, 1, 16, 15}), w), ShapeMismatch);
}

TEST(Losses, WeightedIou) {
  std::mt19937_64 rng(103);
  Tensor y = rect_mask(2, 16, 16, 2, 9, 5, 14);
  Tensor w = boundary_weights(y);
  EXPECT_LE(weighted_iou(saturated(y), y, w).item(), 1e-6);
  const double n = 12 * 12;
  Tensor ones({1, 1, 12, 12}, 1.0);
  EXPECT_NEAR(weighted_iou(Tensor(ones.shape(), -20.0), ones, ones).item(), 1 - 1 / (n + 1), 1e-6);
  Tensor p = oracle::random_tensor(rng, y.shape(), -3, 3);
  EXPECT_NEAR(weighted_iou(p, y, w).item(), wiou_loop(p, y, w), 1e-12);
}

TEST(Losses, Dice) {
  std::mt19937_64 rng(104);
  Tensor e = rect_mask(2, 16, 16, 4, 5, 2, 14);
  EXPECT_LE(dice_loss(saturated(e), e).item(), 1e-6);
  Tensor empty({1, 1, 16, 16}, 0.0);
  EXPECT_LE(dice_loss(Tensor(empty.shape(), -20.0), empty).item(), 1e-6);
  Tensor p = oracle::random_tensor(rng, e.shape(), -3, 3);
  EXPECT_NEAR(dice_loss(p, e).item(), dice_loop(p, e), 1e-12);
}

TEST(Losses, GradientChecks) {
  std::mt19937_64 rng(105);
  Tensor y = binary_mask(rng, {2, 1, 6, 7});
  Tensor w = boundary_weights(y);
  Tensor p = oracle::random_tensor(rng, y.shape(), -2, 2);
  p.set_requires_grad(true);
  EXPECT_TRUE(grad_check([&] { return weighted_bce(p, y, w); }, {p}).passed);
  EXPECT_TRUE(grad_check([&] { return weighted_iou(p, y, w); }, {p}).passed);
  EXPECT_TRUE(grad_check([&] { return dice_loss(p, y); }, {p}).passed);
  Tensor t = oracle::random_tensor(rng, y.shape(), 0, 1);
  EXPECT_TRUE(grad_check([&] { return l1_loss(p, t); }, {p}).passed);
}

TEST(Losses, TranslationL1) {
  std::mt19937_64 rng(106);
  Tensor a = oracle::random_tensor(rng, {2, 1, 5, 5}, 0, 1), b = oracle::random_tensor(rng, {2, 1, 5, 5}, 0, 1);
  EXPECT_EQ(l1_loss(a, a).item(), 0.0);
  EXPECT_EQ(l1_loss(Tensor({1, 1, 4, 4}, 1.0), Tensor({1, 1, 4, 4}, 0.0)).item(), 1.0);
  double s = 0;
  for (size_t i = 0; i < a.values().size(); ++i) s += std::abs(a.values()[i] - b.values()[i]);
  EXPECT_NEAR(l1_loss(a, b).item(), s / 50.0, 1e-15);
  EXPECT_THROW(l1_loss(a, Tensor({2, 1, 5, 4})), ShapeMismatch);
}

namespace {

SegmentationOutput uniform_levels(const Tensor& mask_logits, const Tensor& edge_logits) {
  SegmentationOutput out;
  for (int k = 0; k < 5; ++k) out.masks.push_back(mask_logits);
  for (int k = 0; k < 4; ++k) out.edges.push_back(edge_logits);
  return out;
}

}  // namespace

TEST(Losses, SegmentationLossGeometricWeights) {
  std::mt19937_64 rng(107);
  Tensor y = rect_mask(2, 8, 8, 1, 6, 2, 7);
  Tensor e = binary_mask(rng, y.shape(), 0.2);
  Tensor pm = oracle::random_tensor(rng, y.shape(), -2, 2), pe = oracle::random_tensor(rng, y.shape(), -2, 2);
  Tensor w = boundary_weights(y);
  const double c_mask = wbce_loop(pm, y, w) + wiou_loop(pm, y, w);
  const double c_edge = dice_loop(pe, e);
  EXPECT_NEAR(segmentation_loss(uniform_levels(pm, pe), y, e).item(), c_mask * 31 / 16 + c_edge * 15 / 8, 1e-12);
  const double near_zero = segmentation_loss(uniform_levels(saturated(y), saturated(e)), y, e).item();
  EXPECT_GE(near_zero, 0.0);
  EXPECT_LE(near_zero, 1e-5);
}

TEST(Losses, SegmentationLossTermByTerm) {
  std::mt19937_64 rng(108);
  Tensor y = rect_mask(2, 32, 32, 5, 23, 8, 27);
  Tensor e = binary_mask(rng, y.shape(), 0.15);
  const int64_t sides[5] = {8, 4, 2, 1, 1};
  SegmentationOutput out;
  for (int k = 0; k < 5; ++k) out.masks.push_back(oracle::random_tensor(rng, {2, 1, sides[k], sides[k]}, -2, 2));
  for (int k = 0; k < 4; ++k) out.edges.push_back(oracle::random_tensor(rng, {2, 1, sides[k], sides[k]}, -2, 2));
  double expected = 0;
  for (int k = 0; k < 5; ++k) {
    Tensor yk = nearest_map(y, sides[k], sides[k]);
    Tensor wk(yk.shape(), box_weights_loop(yk));
    expected += std::ldexp(wbce_loop(out.masks[static_cast<size_t>(k)], yk, wk) +
                               wiou_loop(out.masks[static_cast<size_t>(k)], yk, wk),
                           -k);
  }
  for (int k = 0; k < 4; ++k)
    expected += std::ldexp(dice_loop(out.edges[static_cast<size_t>(k)], nearest_map(e, sides[k], sides[k])), -k);
  EXPECT_NEAR(segmentation_loss(out, y, e).item(), expected, 1e-12);
}

TEST(Metrics, PerfectAndInvertedPredictions) {
  std::mt19937_64 rng(109);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor y = binary_mask(rng, {1, 1, 24, 31}, 0.1 + 0.15 * trial);
    MetricReport r = evaluate_image(y, y);
    EXPECT_EQ(r.M, 0.0);
    EXPECT_EQ(r.F_max, 1.0);
    EXPECT_EQ(r.F_adp, 1.0);
    EXPECT_EQ(r.E_max, 1.0);
    EXPECT_EQ(r.S, 1.0);
    Tensor inv = 1.0 - y;
    EXPECT_EQ(metric_mae(inv, y), 1.0);
  }
}

TEST(Metrics, MaeAndThresholdedFMatchHandCounts) {
  std::mt19937_64 rng(110);
  Tensor y = binary_mask(rng, {1, 1, 20, 20}, 0.3);
  Tensor p = oracle::random_tensor(rng, y.shape(), 0, 1);
  double s = 0, tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < p.values().size(); ++i) {
    s += std::abs(p.values()[i] - y.values()[i]);
    const bool on = p.values()[i] >= 0.5, pos = y.values()[i] == 1.0;
    tp += on && pos;
    fp += on && !pos;
    fn += !on && pos;
  }
  EXPECT_NEAR(metric_mae(p, y), s / 400.0, 1e-15);
  const double prec = tp / (tp + fp), rec = tp / (tp + fn);
  EXPECT_NEAR(fmeasure_at(p, y, 0.5), 1.3 * prec * rec / (0.3 * prec + rec), 1e-14);
}

TEST(Metrics, RangesAndOrdering) {
  std::mt19937_64 rng(111);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor y = binary_mask(rng, {1, 1, 16, 16}, 0.35);
    Tensor p = oracle::random_tensor(rng, y.shape(), 0, 1);
    MetricReport r = evaluate_image(p, y);
    for (double v : {r.M, r.F_max, r.F_mean, r.F_adp, r.E_max, r.E_mean, r.S}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_GE(r.F_max, r.F_mean);
    EXPECT_GE(r.E_max, r.E_mean);
  }
}

TEST(Metrics, DegenerateGroundTruth) {
  Tensor empty({1, 1, 8, 8}, 0.0), full({1, 1, 8, 8}, 1.0);
  Tensor p({1, 1, 8, 8}, 0.25);
  EXPECT_DOUBLE_EQ(metric_smeasure(p, empty), 0.75);
  EXPECT_DOUBLE_EQ(metric_smeasure(p, full), 0.25);
  EXPECT_DOUBLE_EQ(emeasure_at(p, empty, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(emeasure_at(p, full, 0.2), 1.0);
}

TEST(Metrics, StructureRewardsSpatialAgreement) {
  Tensor y({1, 1, 16, 16}, 0.0);
  for (int64_t r = 4; r < 12; ++r)
    for (int64_t c = 4; c < 12; ++c) y.mutable_data()[static_cast<size_t>(r * 16 + c)] = 1.0;
  Tensor blurred = y * 0.8 + 0.1;
  Tensor shifted({1, 1, 16, 16}, 0.0);
  for (int64_t r = 0; r < 8; ++r)
    for (int64_t c = 0; c < 8; ++c) shifted.mutable_data()[static_cast<size_t>(r * 16 + c)] = 1.0;
  EXPECT_GT(metric_smeasure(blurred, y), metric_smeasure(shifted, y));
  EXPECT_GT(metric_smeasure(blurred, y), 0.8);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(metric_mae(Tensor({1, 1, 4, 4}), Tensor({1, 1, 4, 5})), ShapeMismatch);
  EXPECT_THROW(metric_mae(Tensor({1, 1, 4, 4}, 1.5), Tensor({1, 1, 4, 4})), DomainError);
  EXPECT_THROW(metric_smeasure(Tensor({1, 1, 4, 4}, -0.1), Tensor({1, 1, 4, 4})), DomainError);
}

TEST(Metrics, AccumulatorAndReports) {
  std::mt19937_64 rng(112);
  MetricAccumulator acc("toy");
  std::vector<MetricReport> per;
  for (int k = 0; k < 3; ++k) {
    Tensor y = binary_mask(rng, {1, 1, 8, 8});
    Tensor p = oracle::random_tensor(rng, y.shape(), 0, 1);
    per.push_back(evaluate_image(p, y));
    acc.add(p, y);
  }
  MetricReport r = acc.result();
  EXPECT_EQ(r.images, 3);
  EXPECT_NEAR(r.M, (per[0].M + per[1].M + per[2].M) / 3, 1e-15);
  auto j = nlohmann::json::parse(report_json(r));
  for (const char* key : {"dataset", "M", "F_max", "F_mean", "F_adp", "E_max", "E_mean", "S"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["dataset"], "toy");
  std::string table = report_table({r});
  EXPECT_NE(table.find("F_adp"), std::string::npos);
  EXPECT_NE(table.find("toy"), std::string::npos);
}
