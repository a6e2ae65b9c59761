#pragma once

#include <optional>
#include <vector>

#include "multicos/tensor.hpp"

namespace multicos {

// ---------------------------------------------------------------- elementwise

enum class UnaryKind { kSigmoid, kSilu, kSoftplus, kRelu, kLeakyRelu, kExp, kNeg, kAbs };

inline constexpr double kLeakySlope = 0.01;

Tensor apply_unary(UnaryKind kind, const Tensor& x, double leaky_slope = kLeakySlope);

inline Tensor sigmoid(const Tensor& x) { return apply_unary(UnaryKind::kSigmoid, x); }
inline Tensor silu(const Tensor& x) { return apply_unary(UnaryKind::kSilu, x); }
inline Tensor softplus(const Tensor& x) { return apply_unary(UnaryKind::kSoftplus, x); }
inline Tensor relu(const Tensor& x) { return apply_unary(UnaryKind::kRelu, x); }
inline Tensor leaky_relu(const Tensor& x, double slope = kLeakySlope) {
  return apply_unary(UnaryKind::kLeakyRelu, x, slope);
}
inline Tensor exp(const Tensor& x) { return apply_unary(UnaryKind::kExp, x); }
inline Tensor neg(const Tensor& x) { return apply_unary(UnaryKind::kNeg, x); }
inline Tensor abs(const Tensor& x) { return apply_unary(UnaryKind::kAbs, x); }

/// Scalar kernels shared by the tensor ops and by callers that work on raw
/// buffers (metrics, oracles of other modules).
double sigmoid_scalar(double x);
double softplus_scalar(double x);

enum class BinaryKind { kAdd, kSub, kMul, kDiv, kConcatChannels };

/// Broadcast rule: shapes are right-aligned after left-padding the lower rank
/// with ones, and size-1 axes stretch. One exception: a rank-1 operand of
/// length C paired with a rank-4 (B, C, H, W) operand is read as a
/// per-channel vector (1, C, 1, 1).
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor apply_binary(BinaryKind kind, const Tensor& a, const Tensor& b);

inline Tensor add(const Tensor& a, const Tensor& b) { return apply_binary(BinaryKind::kAdd, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return apply_binary(BinaryKind::kSub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return apply_binary(BinaryKind::kMul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return apply_binary(BinaryKind::kDiv, a, b); }
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  return apply_binary(BinaryKind::kConcatChannels, a, b);
}

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator-(double c, const Tensor& a) { return add_scalar(neg(a), c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces every axis but the first: (B, ...) -> (B).
Tensor sum_per_sample(const Tensor& x);
/// (B, C, H, W) -> (B, C, 1, 1).
Tensor global_avg_pool(const Tensor& x);

// ---------------------------------------------------------------- shape

Tensor reshape(const Tensor& x, Shape shape);
/// Channel concatenation of rank-4 maps along axis 1.
Tensor concat(const std::vector<Tensor>& parts);
/// Channels [start, start + count) of a rank-4 map.
Tensor slice_channels(const Tensor& x, int64_t start, int64_t count);
/// out[i] = x[index[i]]; the gradient scatters back. Backbone of every
/// permutation-style op (scan flattening, transposes).
Tensor gather(const Tensor& x, Shape out_shape, std::vector<int64_t> index);

// ---------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b);

/// Row-wise affine map x * weight^T + bias for x of shape (M, in). The weight
/// may be (out, in) or a 1x1 convolution kernel (out, in, 1, 1).
Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt);

enum class PaddingMode { kZeros, kReplicate };

struct Conv2dOptions {
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t dilation = 1;
  int64_t groups = 1;
  PaddingMode padding_mode = PaddingMode::kZeros;
};

/// Cross-correlation over NCHW input with (out, in/groups, kh, kw) weights.
Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias,
              const Conv2dOptions& opt = {});

// ---------------------------------------------------------------- normalization

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes over axis 1 (axis 0 for rank-1 input), then applies the
/// per-channel affine.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

/// Per-channel normalization of (B, C, H, W). Training mode uses batch
/// statistics and folds them into the running buffers (which are updated in
/// place); eval mode uses the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5);

// ---------------------------------------------------------------- resampling

enum class InterpMode { kNearest, kBilinear };

/// Bilinear sampling uses half-pixel centers (align_corners = false).
Tensor interpolate(const Tensor& x, int64_t out_h, int64_t out_w, InterpMode mode);

}  // namespace multicos
