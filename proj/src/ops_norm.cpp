#include <cmath>

#include "multicos/ops.hpp"

namespace multicos {

using detail::ImplPtr;
using detail::TensorImpl;

namespace {

// Views any tensor as (outer, channels, inner) around the normalized axis.
struct AxisView {
  int64_t outer, channels, inner;
};

AxisView channel_view(const Shape& s) {
  if (s.empty()) throw ShapeMismatch("layer_norm of a scalar");
  if (s.size() == 1) return {1, s[0], 1};
  int64_t inner = 1;
  for (size_t k = 2; k < s.size(); ++k) inner *= s[k];
  return {s[0], s[1], inner};
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const AxisView v = channel_view(x.shape());
  if (gamma.numel() != v.channels || beta.numel() != v.channels) {
    throw ShapeMismatch("layer_norm affine of length " + std::to_string(gamma.numel()) + " for " +
                        std::to_string(v.channels) + " channels");
  }
  const auto& xd = x.values();
  const auto& gd = gamma.values();
  const auto& bd = beta.values();
  std::vector<double> out(xd.size());
  // Normalized values and reciprocal deviations are kept for the reverse pass.
  auto xhat = std::make_shared<std::vector<double>>(xd.size());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(v.outer * v.inner));
  const double inv_c = 1.0 / static_cast<double>(v.channels);
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t i = 0; i < v.inner; ++i) {
      const int64_t base = o * v.channels * v.inner + i;
      double mu = 0.0;
      for (int64_t c = 0; c < v.channels; ++c) mu += xd[static_cast<size_t>(base + c * v.inner)];
      mu *= inv_c;
      double var = 0.0;
      for (int64_t c = 0; c < v.channels; ++c) {
        const double d = xd[static_cast<size_t>(base + c * v.inner)] - mu;
        var += d * d;
      }
      var *= inv_c;
      const double r = 1.0 / std::sqrt(var + eps);
      (*rstd)[static_cast<size_t>(o * v.inner + i)] = r;
      for (int64_t c = 0; c < v.channels; ++c) {
        const size_t idx = static_cast<size_t>(base + c * v.inner);
        const double h = (xd[idx] - mu) * r;
        (*xhat)[idx] = h;
        out[idx] = h * gd[static_cast<size_t>(c)] + bd[static_cast<size_t>(c)];
      }
    }
  }
  ImplPtr xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return detail::make_result(x.shape(), std::move(out), {xi, gi, bi}, [xi, gi, bi, xhat, rstd, v](TensorImpl& o) {
    const auto& dy = o.grad;
    if (gi->requires_grad || bi->requires_grad) {
      auto& gg = gi->grad_buffer();
      auto& gb = bi->grad_buffer();
      for (size_t idx = 0; idx < dy.size(); ++idx) {
        const size_t c = (idx / static_cast<size_t>(v.inner)) % static_cast<size_t>(v.channels);
        gg[c] += dy[idx] * (*xhat)[idx];
        gb[c] += dy[idx];
      }
    }
    if (!xi->requires_grad) return;
    auto& gx = xi->grad_buffer();
    const auto& gd = gi->data;
    const double inv_c = 1.0 / static_cast<double>(v.channels);
    for (int64_t oo = 0; oo < v.outer; ++oo) {
      for (int64_t i = 0; i < v.inner; ++i) {
        const int64_t base = oo * v.channels * v.inner + i;
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (int64_t c = 0; c < v.channels; ++c) {
          const size_t idx = static_cast<size_t>(base + c * v.inner);
          const double dh = dy[idx] * gd[static_cast<size_t>(c)];
          mean_dh += dh;
          mean_dh_h += dh * (*xhat)[idx];
        }
        mean_dh *= inv_c;
        mean_dh_h *= inv_c;
        const double r = (*rstd)[static_cast<size_t>(oo * v.inner + i)];
        for (int64_t c = 0; c < v.channels; ++c) {
          const size_t idx = static_cast<size_t>(base + c * v.inner);
          const double dh = dy[idx] * gd[static_cast<size_t>(c)];
          gx[idx] += r * (dh - mean_dh - (*xhat)[idx] * mean_dh_h);
        }
      }
    }
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps) {
  if (x.rank() != 4) throw ShapeMismatch("batch_norm expects rank-4 input, got " + shape_str(x.shape()));
  const int64_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != channels || beta.numel() != channels || running_mean.numel() != channels ||
      running_var.numel() != channels) {
    throw ShapeMismatch("batch_norm parameters do not match " + std::to_string(channels) + " channels");
  }
  const auto& xd = x.values();
  const int64_t count = batch * hw;
  std::vector<double> mu(static_cast<size_t>(channels)), rstd(static_cast<size_t>(channels));
  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (int64_t c = 0; c < channels; ++c) {
      double m = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        const double* p = xd.data() + (b * channels + c) * hw;
        for (int64_t i = 0; i < hw; ++i) m += p[i];
      }
      m /= static_cast<double>(count);
      double var = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        const double* p = xd.data() + (b * channels + c) * hw;
        for (int64_t i = 0; i < hw; ++i) var += (p[i] - m) * (p[i] - m);
      }
      var /= static_cast<double>(count);
      mu[static_cast<size_t>(c)] = m;
      rstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      rm[static_cast<size_t>(c)] = (1.0 - momentum) * rm[static_cast<size_t>(c)] + momentum * m;
      rv[static_cast<size_t>(c)] = (1.0 - momentum) * rv[static_cast<size_t>(c)] + momentum * unbiased;
    }
  } else {
    for (int64_t c = 0; c < channels; ++c) {
      mu[static_cast<size_t>(c)] = running_mean.values()[static_cast<size_t>(c)];
      rstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(running_var.values()[static_cast<size_t>(c)] + eps);
    }
  }
  const auto& gd = gamma.values();
  const auto& bd = beta.values();
  std::vector<double> out(xd.size());
  auto xhat = std::make_shared<std::vector<double>>(xd.size());
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < channels; ++c) {
      const size_t off = static_cast<size_t>((b * channels + c) * hw);
      for (int64_t i = 0; i < hw; ++i) {
        const double h = (xd[off + static_cast<size_t>(i)] - mu[static_cast<size_t>(c)]) * rstd[static_cast<size_t>(c)];
        (*xhat)[off + static_cast<size_t>(i)] = h;
        out[off + static_cast<size_t>(i)] = h * gd[static_cast<size_t>(c)] + bd[static_cast<size_t>(c)];
      }
    }
  }
  ImplPtr xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return detail::make_result(
      x.shape(), std::move(out), {xi, gi, bi},
      [xi, gi, bi, xhat, rstd = std::move(rstd), training, batch, channels, hw](TensorImpl& o) {
        const auto& dy = o.grad;
        const double n = static_cast<double>(batch * hw);
        std::vector<double> sum_dy(static_cast<size_t>(channels), 0.0), sum_dy_h(static_cast<size_t>(channels), 0.0);
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t c = 0; c < channels; ++c) {
            const size_t off = static_cast<size_t>((b * channels + c) * hw);
            for (int64_t i = 0; i < hw; ++i) {
              sum_dy[static_cast<size_t>(c)] += dy[off + static_cast<size_t>(i)];
              sum_dy_h[static_cast<size_t>(c)] += dy[off + static_cast<size_t>(i)] * (*xhat)[off + static_cast<size_t>(i)];
            }
          }
        }
        if (gi->requires_grad || bi->requires_grad) {
          auto& gg = gi->grad_buffer();
          auto& gb = bi->grad_buffer();
          for (int64_t c = 0; c < channels; ++c) {
            gg[static_cast<size_t>(c)] += sum_dy_h[static_cast<size_t>(c)];
            gb[static_cast<size_t>(c)] += sum_dy[static_cast<size_t>(c)];
          }
        }
        if (!xi->requires_grad) return;
        auto& gx = xi->grad_buffer();
        const auto& gd = gi->data;
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t c = 0; c < channels; ++c) {
            const size_t cc = static_cast<size_t>(c);
            const double scale = gd[cc] * rstd[cc];
            const size_t off = static_cast<size_t>((b * channels + c) * hw);
            for (int64_t i = 0; i < hw; ++i) {
              const size_t idx = off + static_cast<size_t>(i);
              if (training) {
                gx[idx] += scale * (dy[idx] - sum_dy[cc] / n - (*xhat)[idx] * sum_dy_h[cc] / n);
              } else {
                gx[idx] += scale * dy[idx];
              }
            }
          }
        }
      });
}

namespace {

struct AxisSample {
  int64_t i0, i1;
  double frac;  // weight of i1
};

std::vector<AxisSample> axis_samples(int64_t in, int64_t out, InterpMode mode) {
  std::vector<AxisSample> s(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    if (mode == InterpMode::kNearest) {
      const int64_t i = std::min<int64_t>(static_cast<int64_t>(std::floor(static_cast<double>(o) * scale)), in - 1);
      s[static_cast<size_t>(o)] = {i, i, 0.0};
    } else {
      const double src = std::max(0.0, (static_cast<double>(o) + 0.5) * scale - 0.5);
      const int64_t i0 = std::min<int64_t>(static_cast<int64_t>(std::floor(src)), in - 1);
      const int64_t i1 = std::min<int64_t>(i0 + 1, in - 1);
      s[static_cast<size_t>(o)] = {i0, i1, i1 == i0 ? 0.0 : src - static_cast<double>(i0)};
    }
  }
  return s;
}

}  // namespace

Tensor interpolate(const Tensor& x, int64_t out_h, int64_t out_w, InterpMode mode) {
  if (x.rank() != 4) throw ShapeMismatch("interpolate expects rank-4 input, got " + shape_str(x.shape()));
  if (out_h < 1 || out_w < 1) throw ShapeMismatch("interpolate target extents must be >= 1");
  const int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto ys = std::make_shared<std::vector<AxisSample>>(axis_samples(h, out_h, mode));
  auto xs = std::make_shared<std::vector<AxisSample>>(axis_samples(w, out_w, mode));
  const auto& xd = x.values();
  std::vector<double> out(static_cast<size_t>(planes * out_h * out_w));
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = xd.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const AxisSample& sy = (*ys)[static_cast<size_t>(oy)];
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const AxisSample& sx = (*xs)[static_cast<size_t>(ox)];
        const double top = src[sy.i0 * w + sx.i0] * (1.0 - sx.frac) + src[sy.i0 * w + sx.i1] * sx.frac;
        const double bot = src[sy.i1 * w + sx.i0] * (1.0 - sx.frac) + src[sy.i1 * w + sx.i1] * sx.frac;
        dst[oy * out_w + ox] = top * (1.0 - sy.frac) + bot * sy.frac;
      }
    }
  }
  ImplPtr xi = x.impl();
  return detail::make_result(Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {xi},
                             [xi, ys, xs, planes, h, w, out_h, out_w](TensorImpl& o) {
                               auto& g = xi->grad_buffer();
                               for (int64_t p = 0; p < planes; ++p) {
                                 const double* go = o.grad.data() + p * out_h * out_w;
                                 double* gi = g.data() + p * h * w;
                                 for (int64_t oy = 0; oy < out_h; ++oy) {
                                   const AxisSample& sy = (*ys)[static_cast<size_t>(oy)];
                                   for (int64_t ox = 0; ox < out_w; ++ox) {
                                     const AxisSample& sx = (*xs)[static_cast<size_t>(ox)];
                                     const double v = go[oy * out_w + ox];
                                     gi[sy.i0 * w + sx.i0] += v * (1.0 - sy.frac) * (1.0 - sx.frac);
                                     gi[sy.i0 * w + sx.i1] += v * (1.0 - sy.frac) * sx.frac;
                                     gi[sy.i1 * w + sx.i0] += v * sy.frac * (1.0 - sx.frac);
                                     gi[sy.i1 * w + sx.i1] += v * sy.frac * sx.frac;
                                   }
                                 }
                               }
                             });
}

}  // namespace multicos
