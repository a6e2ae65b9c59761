#pragma once

#include "multicos/bfser.hpp"
#include "multicos/tensor.hpp"

namespace multicos {

/// Boundary-emphasis weights w = 1 + 5 |box15(y) - y| for (B, 1, H, W)
/// masks. The 15x15 box average counts zero padding. Returns a constant.
Tensor boundary_weights(const Tensor& y);

/// All three losses reduce per sample and then average over the batch.
Tensor weighted_bce(const Tensor& logits, const Tensor& y, const Tensor& w);
Tensor weighted_iou(const Tensor& logits, const Tensor& y, const Tensor& w);
Tensor dice_loss(const Tensor& logits, const Tensor& target, double eps = 1.0);

/// Masks at levels 1..5 carry weights 1, 1/2, .., 1/16 and edges at levels
/// 1..4 carry 1, .., 1/8. Ground truths are nearest-downsampled to each
/// level; pixel weights are recomputed at that resolution.
Tensor segmentation_loss(const SegmentationOutput& out, const Tensor& mask, const Tensor& edge);

/// Mean absolute difference.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

}  // namespace multicos
