#include "multicos/losses.hpp"

#include "multicos/ops.hpp"

namespace multicos {

namespace {

constexpr int64_t kBox = 15;

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Tensor resize_nearest(const Tensor& y, const Tensor& like) {
  if (y.dim(2) == like.dim(2) && y.dim(3) == like.dim(3)) return y;
  return interpolate(y, like.dim(2), like.dim(3), InterpMode::kNearest);
}

}  // namespace

Tensor boundary_weights(const Tensor& y) {
  if (y.rank() != 4) throw ShapeMismatch("weights need a (B, C, H, W) mask, got " + shape_str(y.shape()));
  const int64_t n = y.dim(0) * y.dim(1), h = y.dim(2), w = y.dim(3);
  const int64_t r = kBox / 2;
  const auto& v = y.values();
  // Summed-area table per plane.
  std::vector<double> out(v.size());
  std::vector<double> sat(static_cast<size_t>((h + 1) * (w + 1)));
  for (int64_t p = 0; p < n; ++p) {
    const double* src = v.data() + p * h * w;
    std::fill(sat.begin(), sat.end(), 0.0);
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j)
        sat[static_cast<size_t>((i + 1) * (w + 1) + j + 1)] = src[i * w + j] + sat[static_cast<size_t>(i * (w + 1) + j + 1)] +
                                                              sat[static_cast<size_t>((i + 1) * (w + 1) + j)] -
                                                              sat[static_cast<size_t>(i * (w + 1) + j)];
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const int64_t i0 = std::max<int64_t>(0, i - r), i1 = std::min(h, i + r + 1);
        const int64_t j0 = std::max<int64_t>(0, j - r), j1 = std::min(w, j + r + 1);
        const double s = sat[static_cast<size_t>(i1 * (w + 1) + j1)] - sat[static_cast<size_t>(i0 * (w + 1) + j1)] -
                         sat[static_cast<size_t>(i1 * (w + 1) + j0)] + sat[static_cast<size_t>(i0 * (w + 1) + j0)];
        const double box = s / static_cast<double>(kBox * kBox);
        out[static_cast<size_t>(p * h * w + i * w + j)] = 1.0 + 5.0 * std::abs(box - src[i * w + j]);
      }
  }
  return Tensor(y.shape(), std::move(out));
}

Tensor weighted_bce(const Tensor& logits, const Tensor& y, const Tensor& w) {
  require_same(logits, y, "weighted BCE");
  require_same(logits, w, "weighted BCE weights");
  // softplus(p) - p y is the stable form of -(y log s + (1 - y) log(1 - s)).
  Tensor per_pixel = softplus(logits) - logits * y;
  return mean(sum_per_sample(w * per_pixel) / sum_per_sample(w));
}

Tensor weighted_iou(const Tensor& logits, const Tensor& y, const Tensor& w) {
  require_same(logits, y, "weighted IoU");
  require_same(logits, w, "weighted IoU weights");
  Tensor s = sigmoid(logits);
  Tensor inter = sum_per_sample(w * s * y);
  Tensor uni = sum_per_sample(w * (s + y - s * y));
  return mean(1.0 - (inter + 1.0) / (uni + 1.0));
}

Tensor dice_loss(const Tensor& logits, const Tensor& target, double eps) {
  require_same(logits, target, "dice");
  Tensor s = sigmoid(logits);
  Tensor num = 2.0 * sum_per_sample(s * target) + eps;
  Tensor den = sum_per_sample(s) + sum_per_sample(target) + eps;
  return mean(1.0 - num / den);
}

Tensor segmentation_loss(const SegmentationOutput& out, const Tensor& mask, const Tensor& edge) {
  if (out.masks.size() != static_cast<size_t>(kLevels) || out.edges.size() != static_cast<size_t>(kFusedLevels)) {
    throw ShapeMismatch("segmentation loss expects 5 masks and 4 edges");
  }
  Tensor total = Tensor::scalar(0.0);
  double scale = 1.0;
  for (size_t k = 0; k < out.masks.size(); ++k, scale *= 0.5) {
    const Tensor& p = out.masks[k];
    Tensor y = resize_nearest(mask, p);
    Tensor w = boundary_weights(y);
    total = total + scale * (weighted_bce(p, y, w) + weighted_iou(p, y, w));
  }
  scale = 1.0;
  for (size_t k = 0; k < out.edges.size(); ++k, scale *= 0.5) {
    const Tensor& p = out.edges[k];
    total = total + scale * dice_loss(p, resize_nearest(edge, p));
  }
  return total;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "L1");
  return mean(abs(pred - target));
}

}  // namespace multicos
