#include <Eigen/Dense>

#include "multicos/ops.hpp"

namespace multicos {

using detail::ImplPtr;
using detail::TensorImpl;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  int64_t batch, in_c, h, w;
  int64_t out_c, kh, kw;
  int64_t out_h, out_w;
  int64_t groups, in_per_group, out_per_group;
  // Source pixel (flat y*w+x) of every (kernel tap, output pixel) pair, or -1
  // for a zero-padded tap.
  std::vector<int64_t> taps;

  int64_t patch() const { return in_per_group * kh * kw; }
  int64_t pixels() const { return out_h * out_w; }
};

ConvGeometry make_geometry(const Shape& xs, const Shape& ws, const Conv2dOptions& opt) {
  if (xs.size() != 4) throw ShapeMismatch("conv2d input must be rank-4, got " + shape_str(xs));
  if (ws.size() != 4) throw ShapeMismatch("conv2d weight must be rank-4, got " + shape_str(ws));
  if (opt.groups < 1 || xs[1] % opt.groups != 0 || ws[0] % opt.groups != 0) {
    throw InvalidGroups("channels " + std::to_string(xs[1]) + " -> " + std::to_string(ws[0]) +
                        " not divisible by groups " + std::to_string(opt.groups));
  }
  if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0) {
    throw ShapeMismatch("conv2d stride/dilation must be >= 1 and padding >= 0");
  }
  ConvGeometry g{};
  g.batch = xs[0];
  g.in_c = xs[1];
  g.h = xs[2];
  g.w = xs[3];
  g.out_c = ws[0];
  g.kh = ws[2];
  g.kw = ws[3];
  g.groups = opt.groups;
  g.in_per_group = xs[1] / opt.groups;
  g.out_per_group = ws[0] / opt.groups;
  if (ws[1] != g.in_per_group) {
    throw ShapeMismatch("conv2d weight " + shape_str(ws) + " does not match input " + shape_str(xs));
  }
  const int64_t span_h = opt.dilation * (g.kh - 1) + 1;
  const int64_t span_w = opt.dilation * (g.kw - 1) + 1;
  if (g.h + 2 * opt.padding < span_h || g.w + 2 * opt.padding < span_w) {
    throw ShapeMismatch("conv2d kernel " + shape_str(ws) + " does not fit padded input " + shape_str(xs));
  }
  g.out_h = (g.h + 2 * opt.padding - span_h) / opt.stride + 1;
  g.out_w = (g.w + 2 * opt.padding - span_w) / opt.stride + 1;

  const int64_t p = g.pixels();
  g.taps.resize(static_cast<size_t>(g.kh * g.kw * p));
  for (int64_t ky = 0; ky < g.kh; ++ky) {
    for (int64_t kx = 0; kx < g.kw; ++kx) {
      int64_t* row = g.taps.data() + (ky * g.kw + kx) * p;
      for (int64_t oy = 0; oy < g.out_h; ++oy) {
        for (int64_t ox = 0; ox < g.out_w; ++ox) {
          int64_t iy = oy * opt.stride - opt.padding + ky * opt.dilation;
          int64_t ix = ox * opt.stride - opt.padding + kx * opt.dilation;
          int64_t src = -1;
          if (opt.padding_mode == PaddingMode::kReplicate) {
            iy = std::clamp<int64_t>(iy, 0, g.h - 1);
            ix = std::clamp<int64_t>(ix, 0, g.w - 1);
            src = iy * g.w + ix;
          } else if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) {
            src = iy * g.w + ix;
          }
          row[oy * g.out_w + ox] = src;
        }
      }
    }
  }
  return g;
}

// col is (in_per_group * kh * kw) x pixels, row-major.
void im2col(const ConvGeometry& g, const double* x_group, double* col) {
  const int64_t p = g.pixels();
  const int64_t taps = g.kh * g.kw;
  const int64_t hw = g.h * g.w;
  for (int64_t c = 0; c < g.in_per_group; ++c) {
    const double* xc = x_group + c * hw;
    for (int64_t t = 0; t < taps; ++t) {
      const int64_t* src = g.taps.data() + t * p;
      double* dst = col + (c * taps + t) * p;
      for (int64_t i = 0; i < p; ++i) dst[i] = src[i] >= 0 ? xc[src[i]] : 0.0;
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, double* dx_group) {
  const int64_t p = g.pixels();
  const int64_t taps = g.kh * g.kw;
  const int64_t hw = g.h * g.w;
  for (int64_t c = 0; c < g.in_per_group; ++c) {
    double* dxc = dx_group + c * hw;
    for (int64_t t = 0; t < taps; ++t) {
      const int64_t* src = g.taps.data() + t * p;
      const double* s = col + (c * taps + t) * p;
      for (int64_t i = 0; i < p; ++i) {
        if (src[i] >= 0) dxc[src[i]] += s[i];
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeMismatch("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  MapMat(out.data(), m, n).noalias() = ConstMapMat(a.values().data(), m, k) * ConstMapMat(b.values().data(), k, n);
  ImplPtr ai = a.impl(), bi = b.impl();
  return detail::make_result(Shape{m, n}, std::move(out), {ai, bi}, [ai, bi, m, k, n](TensorImpl& o) {
    ConstMapMat g(o.grad.data(), m, n);
    if (ai->requires_grad) {
      MapMat(ai->grad_buffer().data(), m, k).noalias() += g * ConstMapMat(bi->data.data(), k, n).transpose();
    }
    if (bi->requires_grad) {
      MapMat(bi->grad_buffer().data(), k, n).noalias() += ConstMapMat(ai->data.data(), m, k).transpose() * g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  const Shape& ws = weight.shape();
  const bool pointwise = ws.size() == 4 && ws[2] == 1 && ws[3] == 1;
  if (x.rank() != 2 || !(ws.size() == 2 || pointwise) || ws[1] != x.dim(1)) {
    throw ShapeMismatch("linear " + shape_str(x.shape()) + " with weight " + shape_str(ws));
  }
  const int64_t m = x.dim(0), in = x.dim(1), out_dim = ws[0];
  if (bias && bias->numel() != out_dim) throw ShapeMismatch("linear bias " + shape_str(bias->shape()));
  std::vector<double> out(static_cast<size_t>(m * out_dim));
  MapMat y(out.data(), m, out_dim);
  y.noalias() = ConstMapMat(x.values().data(), m, in) * ConstMapMat(weight.values().data(), out_dim, in).transpose();
  if (bias) {
    const Eigen::Map<const Eigen::RowVectorXd> bv(bias->values().data(), out_dim);
    y.rowwise() += bv;
  }
  ImplPtr xi = x.impl(), wi = weight.impl();
  ImplPtr bi = bias ? bias->impl() : nullptr;
  std::vector<ImplPtr> inputs{xi, wi};
  if (bi) inputs.push_back(bi);
  return detail::make_result(Shape{m, out_dim}, std::move(out), inputs, [xi, wi, bi, m, in, out_dim](TensorImpl& o) {
    ConstMapMat g(o.grad.data(), m, out_dim);
    if (xi->requires_grad) {
      MapMat(xi->grad_buffer().data(), m, in).noalias() += g * ConstMapMat(wi->data.data(), out_dim, in);
    }
    if (wi->requires_grad) {
      MapMat(wi->grad_buffer().data(), out_dim, in).noalias() += g.transpose() * ConstMapMat(xi->data.data(), m, in);
    }
    if (bi && bi->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd>(bi->grad_buffer().data(), out_dim) += g.colwise().sum();
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias, const Conv2dOptions& opt) {
  auto geo = std::make_shared<ConvGeometry>(make_geometry(x.shape(), weight.shape(), opt));
  const ConvGeometry& g = *geo;
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.out_c)) {
    throw ShapeMismatch("conv2d bias " + shape_str(bias->shape()) + " for " + std::to_string(g.out_c) + " filters");
  }
  const int64_t p = g.pixels();
  const int64_t k = g.patch();
  const int64_t hw = g.h * g.w;
  std::vector<double> out(static_cast<size_t>(g.batch * g.out_c * p), 0.0);
  const double* xd = x.values().data();
  const double* wd = weight.values().data();
  const bool depthwise = g.in_per_group == 1 && g.out_per_group == 1;

  std::vector<double> col;
  if (!depthwise) col.resize(static_cast<size_t>(k * p));
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t grp = 0; grp < g.groups; ++grp) {
      const double* xg = xd + (b * g.in_c + grp * g.in_per_group) * hw;
      double* og = out.data() + (b * g.out_c + grp * g.out_per_group) * p;
      const double* wg = wd + grp * g.out_per_group * k;
      if (depthwise) {
        for (int64_t t = 0; t < g.kh * g.kw; ++t) {
          const int64_t* src = g.taps.data() + t * p;
          const double wt = wg[t];
          for (int64_t i = 0; i < p; ++i) {
            if (src[i] >= 0) og[i] += wt * xg[src[i]];
          }
        }
      } else {
        im2col(g, xg, col.data());
        MapMat(og, g.out_per_group, p).noalias() = ConstMapMat(wg, g.out_per_group, k) * ConstMapMat(col.data(), k, p);
      }
    }
    if (bias) {
      const auto& bd = bias->values();
      for (int64_t c = 0; c < g.out_c; ++c) {
        double* oc = out.data() + (b * g.out_c + c) * p;
        for (int64_t i = 0; i < p; ++i) oc[i] += bd[static_cast<size_t>(c)];
      }
    }
  }

  ImplPtr xi = x.impl(), wi = weight.impl();
  ImplPtr bi = bias ? bias->impl() : nullptr;
  std::vector<ImplPtr> inputs{xi, wi};
  if (bi) inputs.push_back(bi);
  return detail::make_result(
      Shape{g.batch, g.out_c, g.out_h, g.out_w}, std::move(out), inputs, [xi, wi, bi, geo, depthwise](TensorImpl& o) {
        const ConvGeometry& g = *geo;
        const int64_t p = g.pixels();
        const int64_t k = g.patch();
        const int64_t hw = g.h * g.w;
        const double* gout = o.grad.data();
        if (bi && bi->requires_grad) {
          auto& gb = bi->grad_buffer();
          for (int64_t b = 0; b < g.batch; ++b) {
            for (int64_t c = 0; c < g.out_c; ++c) {
              const double* gc = gout + (b * g.out_c + c) * p;
              double s = 0.0;
              for (int64_t i = 0; i < p; ++i) s += gc[i];
              gb[static_cast<size_t>(c)] += s;
            }
          }
        }
        const bool need_x = xi->requires_grad;
        const bool need_w = wi->requires_grad;
        if (!need_x && !need_w) return;
        double* gx = need_x ? xi->grad_buffer().data() : nullptr;
        double* gw = need_w ? wi->grad_buffer().data() : nullptr;
        const double* xd = xi->data.data();
        const double* wd = wi->data.data();
        std::vector<double> col, dcol;
        if (!depthwise) {
          col.resize(static_cast<size_t>(k * p));
          dcol.resize(static_cast<size_t>(k * p));
        }
        for (int64_t b = 0; b < g.batch; ++b) {
          for (int64_t grp = 0; grp < g.groups; ++grp) {
            const double* xg = xd + (b * g.in_c + grp * g.in_per_group) * hw;
            const double* gog = gout + (b * g.out_c + grp * g.out_per_group) * p;
            const double* wg = wd + grp * g.out_per_group * k;
            if (depthwise) {
              for (int64_t t = 0; t < g.kh * g.kw; ++t) {
                const int64_t* src = g.taps.data() + t * p;
                double acc = 0.0;
                for (int64_t i = 0; i < p; ++i) {
                  if (src[i] < 0) continue;
                  acc += gog[i] * xg[src[i]];
                  if (gx) gx[(b * g.in_c + grp) * hw + src[i]] += gog[i] * wg[t];
                }
                if (gw) gw[grp * k + t] += acc;
              }
              continue;
            }
            ConstMapMat go(gog, g.out_per_group, p);
            if (gw) {
              im2col(g, xg, col.data());
              MapMat(gw + grp * g.out_per_group * k, g.out_per_group, k).noalias() +=
                  go * ConstMapMat(col.data(), k, p).transpose();
            }
            if (gx) {
              MapMat(dcol.data(), k, p).noalias() = ConstMapMat(wg, g.out_per_group, k).transpose() * go;
              col2im(g, dcol.data(), gx + (b * g.in_c + grp * g.in_per_group) * hw);
            }
          }
        }
      });
}

}  // namespace multicos
