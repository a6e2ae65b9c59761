#include <cmath>

#include "multicos/ops.hpp"

namespace multicos {

using detail::ImplPtr;
using detail::TensorImpl;

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  // max(x, 0) + log1p(exp(-|x|)) stays finite for any finite x.
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Tensor apply_unary(UnaryKind kind, const Tensor& x, double leaky_slope) {
  const auto& in = x.values();
  std::vector<double> out(in.size());
  for (size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    switch (kind) {
      case UnaryKind::kSigmoid: out[i] = sigmoid_scalar(v); break;
      case UnaryKind::kSilu: out[i] = v * sigmoid_scalar(v); break;
      case UnaryKind::kSoftplus: out[i] = softplus_scalar(v); break;
      case UnaryKind::kRelu: out[i] = v > 0 ? v : 0.0; break;
      case UnaryKind::kLeakyRelu: out[i] = v > 0 ? v : leaky_slope * v; break;
      case UnaryKind::kExp: out[i] = std::exp(v); break;
      case UnaryKind::kNeg: out[i] = -v; break;
      case UnaryKind::kAbs: out[i] = std::abs(v); break;
    }
  }
  ImplPtr xi = x.impl();
  return detail::make_result(x.shape(), std::move(out), {xi}, [xi, kind, leaky_slope](TensorImpl& o) {
    auto& gx = xi->grad_buffer();
    const auto& in = xi->data;
    for (size_t i = 0; i < in.size(); ++i) {
      const double g = o.grad[i];
      const double v = in[i];
      double d = 0.0;
      switch (kind) {
        case UnaryKind::kSigmoid: d = o.data[i] * (1.0 - o.data[i]); break;
        case UnaryKind::kSilu: {
          const double s = sigmoid_scalar(v);
          d = s * (1.0 + v * (1.0 - s));
          break;
        }
        case UnaryKind::kSoftplus: d = sigmoid_scalar(v); break;
        case UnaryKind::kRelu: d = v > 0 ? 1.0 : 0.0; break;
        case UnaryKind::kLeakyRelu: d = v > 0 ? 1.0 : leaky_slope; break;
        case UnaryKind::kExp: d = o.data[i]; break;
        case UnaryKind::kNeg: d = -1.0; break;
        case UnaryKind::kAbs: d = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); break;
      }
      gx[i] += g * d;
    }
  });
}

namespace {

// Per-channel reading of a rank-1 operand against a rank-4 feature map.
Shape aligned_shape(const Shape& s, const Shape& other, size_t rank) {
  if (s.size() == 1 && other.size() == 4 && rank == 4) return Shape{1, s[0], 1, 1};
  Shape out(rank, 1);
  std::copy(s.begin(), s.end(), out.begin() + static_cast<std::ptrdiff_t>(rank - s.size()));
  return out;
}

// Flat source index of every output element for an operand of shape `in`
// (already aligned to the output rank).
std::vector<int64_t> broadcast_index(const Shape& out, const Shape& in) {
  const size_t r = out.size();
  std::vector<int64_t> in_stride(r, 0);
  int64_t s = 1;
  for (size_t k = r; k-- > 0;) {
    in_stride[k] = in[k] == 1 ? 0 : s;
    s *= in[k];
  }
  const int64_t n = shape_numel(out);
  std::vector<int64_t> index(static_cast<size_t>(n));
  std::vector<int64_t> counter(r, 0);
  int64_t offset = 0;
  for (int64_t i = 0; i < n; ++i) {
    index[static_cast<size_t>(i)] = offset;
    for (size_t k = r; k-- > 0;) {
      ++counter[k];
      offset += in_stride[k];
      if (counter[k] < out[k]) break;
      offset -= in_stride[k] * counter[k];
      counter[k] = 0;
    }
  }
  return index;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  const Shape aa = aligned_shape(a, b, r);
  const Shape bb = aligned_shape(b, a, r);
  Shape out(r);
  for (size_t k = 0; k < r; ++k) {
    if (aa[k] == bb[k] || bb[k] == 1) {
      out[k] = aa[k];
    } else if (aa[k] == 1) {
      out[k] = bb[k];
    } else {
      throw ShapeMismatch(shape_str(a) + " vs " + shape_str(b));
    }
  }
  return out;
}

Tensor apply_binary(BinaryKind kind, const Tensor& a, const Tensor& b) {
  if (kind == BinaryKind::kConcatChannels) return concat({a, b});

  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const size_t n = static_cast<size_t>(shape_numel(out_shape));
  const size_t r = out_shape.size();

  // Index maps are only materialized when an operand is actually broadcast.
  std::shared_ptr<std::vector<int64_t>> ia, ib;
  if (a.shape() != out_shape) {
    ia = std::make_shared<std::vector<int64_t>>(broadcast_index(out_shape, aligned_shape(a.shape(), b.shape(), r)));
  }
  if (b.shape() != out_shape) {
    ib = std::make_shared<std::vector<int64_t>>(broadcast_index(out_shape, aligned_shape(b.shape(), a.shape(), r)));
  }
  auto at_a = [&](size_t i) { return ai->data[ia ? static_cast<size_t>((*ia)[i]) : i]; };
  auto at_b = [&](size_t i) { return bi->data[ib ? static_cast<size_t>((*ib)[i]) : i]; };

  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    const double x = at_a(i), y = at_b(i);
    switch (kind) {
      case BinaryKind::kAdd: out[i] = x + y; break;
      case BinaryKind::kSub: out[i] = x - y; break;
      case BinaryKind::kMul: out[i] = x * y; break;
      case BinaryKind::kDiv: out[i] = x / y; break;
      case BinaryKind::kConcatChannels: break;
    }
  }
  return detail::make_result(out_shape, std::move(out), {ai, bi}, [ai, bi, ia, ib, kind](TensorImpl& o) {
    const size_t n = o.data.size();
    auto src_a = [&](size_t i) { return ia ? static_cast<size_t>((*ia)[i]) : i; };
    auto src_b = [&](size_t i) { return ib ? static_cast<size_t>((*ib)[i]) : i; };
    if (ai->requires_grad) {
      auto& ga = ai->grad_buffer();
      for (size_t i = 0; i < n; ++i) {
        const double g = o.grad[i];
        double d = 1.0;
        if (kind == BinaryKind::kMul) d = bi->data[src_b(i)];
        if (kind == BinaryKind::kDiv) d = 1.0 / bi->data[src_b(i)];
        ga[src_a(i)] += g * d;
      }
    }
    if (bi->requires_grad) {
      auto& gb = bi->grad_buffer();
      for (size_t i = 0; i < n; ++i) {
        const double g = o.grad[i];
        double d = 1.0;
        if (kind == BinaryKind::kSub) d = -1.0;
        if (kind == BinaryKind::kMul) d = ai->data[src_a(i)];
        if (kind == BinaryKind::kDiv) {
          const double y = bi->data[src_b(i)];
          d = -ai->data[src_a(i)] / (y * y);
        }
        gb[src_b(i)] += g * d;
      }
    }
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.values());
  for (double& v : out) v += c;
  ImplPtr xi = x.impl();
  return detail::make_result(x.shape(), std::move(out), {xi}, [xi](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor mul_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.values());
  for (double& v : out) v *= c;
  ImplPtr xi = x.impl();
  return detail::make_result(x.shape(), std::move(out), {xi}, [xi, c](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += c * o.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  ImplPtr xi = x.impl();
  return detail::make_result(Shape{}, {s}, {xi}, [xi](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (double& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeMismatch("mean of empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_per_sample(const Tensor& x) {
  if (x.rank() < 1) throw ShapeMismatch("sum_per_sample needs rank >= 1");
  const int64_t batch = x.dim(0);
  const int64_t inner = batch == 0 ? 0 : x.numel() / batch;
  std::vector<double> out(static_cast<size_t>(batch), 0.0);
  const auto& d = x.values();
  for (int64_t b = 0; b < batch; ++b) {
    double s = 0.0;
    for (int64_t i = 0; i < inner; ++i) s += d[static_cast<size_t>(b * inner + i)];
    out[static_cast<size_t>(b)] = s;
  }
  ImplPtr xi = x.impl();
  return detail::make_result(Shape{batch}, std::move(out), {xi}, [xi, inner](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i / static_cast<size_t>(inner)];
  });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeMismatch("global_avg_pool expects rank-4 input, got " + shape_str(x.shape()));
  const int64_t bc = x.dim(0) * x.dim(1);
  const int64_t hw = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<size_t>(bc), 0.0);
  const auto& d = x.values();
  for (int64_t i = 0; i < bc; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < hw; ++j) s += d[static_cast<size_t>(i * hw + j)];
    out[static_cast<size_t>(i)] = s / static_cast<double>(hw);
  }
  ImplPtr xi = x.impl();
  return detail::make_result(Shape{x.dim(0), x.dim(1), 1, 1}, std::move(out), {xi}, [xi, hw](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    const double inv = 1.0 / static_cast<double>(hw);
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i / static_cast<size_t>(hw)] * inv;
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeMismatch("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  ImplPtr xi = x.impl();
  return detail::make_result(std::move(shape), x.values(), {xi}, [xi](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat of nothing");
  const Shape& ref = parts.front().shape();
  if (ref.size() != 4) throw ShapeMismatch("concat expects rank-4 maps, got " + shape_str(ref));
  int64_t channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != 4 || s[0] != ref[0] || s[2] != ref[2] || s[3] != ref[3]) {
      throw ShapeMismatch("concat_channels " + shape_str(ref) + " with " + shape_str(s));
    }
    channels += s[1];
  }
  const int64_t batch = ref[0], hw = ref[2] * ref[3];
  std::vector<double> out(static_cast<size_t>(batch * channels * hw));
  std::vector<ImplPtr> impls;
  std::vector<int64_t> offsets;
  int64_t c0 = 0;
  for (const auto& p : parts) {
    const int64_t c = p.dim(1);
    const auto& d = p.values();
    for (int64_t b = 0; b < batch; ++b) {
      std::copy_n(d.begin() + b * c * hw, c * hw, out.begin() + (b * channels + c0) * hw);
    }
    impls.push_back(p.impl());
    offsets.push_back(c0);
    c0 += c;
  }
  return detail::make_result(Shape{batch, channels, ref[2], ref[3]}, std::move(out), impls,
                             [impls, offsets, batch, channels, hw](TensorImpl& o) {
                               for (size_t k = 0; k < impls.size(); ++k) {
                                 if (!impls[k]->requires_grad) continue;
                                 auto& g = impls[k]->grad_buffer();
                                 const int64_t c = impls[k]->shape[1];
                                 for (int64_t b = 0; b < batch; ++b) {
                                   const double* src = o.grad.data() + (b * channels + offsets[k]) * hw;
                                   double* dst = g.data() + b * c * hw;
                                   for (int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
                                 }
                               }
                             });
}

Tensor slice_channels(const Tensor& x, int64_t start, int64_t count) {
  if (x.rank() != 4 || start < 0 || count < 0 || start + count > x.dim(1)) {
    throw ShapeMismatch("slice_channels [" + std::to_string(start) + ", +" + std::to_string(count) +
                        ") of " + shape_str(x.shape()));
  }
  const int64_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<size_t>(batch * count * hw));
  const auto& d = x.values();
  for (int64_t b = 0; b < batch; ++b) {
    std::copy_n(d.begin() + (b * channels + start) * hw, count * hw, out.begin() + b * count * hw);
  }
  ImplPtr xi = x.impl();
  return detail::make_result(Shape{batch, count, x.dim(2), x.dim(3)}, std::move(out), {xi},
                             [xi, batch, channels, start, count, hw](TensorImpl& o) {
                               auto& g = xi->grad_buffer();
                               for (int64_t b = 0; b < batch; ++b) {
                                 const double* src = o.grad.data() + b * count * hw;
                                 double* dst = g.data() + (b * channels + start) * hw;
                                 for (int64_t i = 0; i < count * hw; ++i) dst[i] += src[i];
                               }
                             });
}

Tensor gather(const Tensor& x, Shape out_shape, std::vector<int64_t> index) {
  if (shape_numel(out_shape) != static_cast<int64_t>(index.size())) {
    throw ShapeMismatch("gather index length does not match " + shape_str(out_shape));
  }
  const auto& d = x.values();
  std::vector<double> out(index.size());
  for (size_t i = 0; i < index.size(); ++i) {
    const int64_t j = index[i];
    if (j < 0 || j >= x.numel()) throw ShapeMismatch("gather index out of range");
    out[i] = d[static_cast<size_t>(j)];
  }
  ImplPtr xi = x.impl();
  auto idx = std::make_shared<std::vector<int64_t>>(std::move(index));
  return detail::make_result(std::move(out_shape), std::move(out), {xi}, [xi, idx](TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (size_t i = 0; i < idx->size(); ++i) g[static_cast<size_t>((*idx)[i])] += o.grad[i];
  });
}

}  // namespace multicos
