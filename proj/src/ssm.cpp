#include "multicos/ssm.hpp"

#include <cmath>
#include <memory>

#include <Eigen/Core>

namespace multicos {

using detail::ImplPtr;
using detail::TensorImpl;

double expm1_over_x(double x) {
  if (std::abs(x) < 1e-5) return 1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0;
  return std::expm1(x) / x;
}

double expm1_over_x_derivative(double x) {
  if (std::abs(x) < 1e-3) {
    // Taylor series of (x e^x - e^x + 1) / x^2.
    return 0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0 + x * x * x * x / 144.0;
  }
  return (x * std::exp(x) - std::expm1(x)) / (x * x);
}

namespace {

void check_timescale(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw NonPositiveDelta("timescale must be a positive finite number, got " + std::to_string(delta));
  }
}

void check_params(const SSMParams& p) {
  check_timescale(p.timescale);
  if (p.input_gain.size() != p.transition.size()) {
    throw ShapeMismatch("input gain has " + std::to_string(p.input_gain.size()) + " entries for a state of size " +
                        std::to_string(p.transition.size()));
  }
}

}  // namespace

DiscreteSSM zoh_discretize(const SSMParams& p) {
  check_params(p);
  DiscreteSSM d;
  const size_t n = p.transition.size();
  d.transition.resize(n);
  d.input_gain.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double x = p.timescale * p.transition[i];
    d.transition[i] = std::exp(x);
    if (std::abs(x) < kZohSingularThreshold) {
      d.input_gain[i] = p.timescale * p.input_gain[i];
    } else {
      d.input_gain[i] = std::expm1(x) / p.transition[i] * p.input_gain[i];
    }
  }
  return d;
}

DiscreteSSM taylor_discretize(const SSMParams& p) {
  check_params(p);
  DiscreteSSM d;
  for (size_t i = 0; i < p.transition.size(); ++i) {
    d.transition.push_back(std::exp(p.timescale * p.transition[i]));
    d.input_gain.push_back(p.timescale * p.input_gain[i]);
  }
  return d;
}

DiscreteSSM discretize(const SSMParams& p, Discretization kind) {
  return kind == Discretization::kZoh ? zoh_discretize(p) : taylor_discretize(p);
}

std::vector<double> ssm_scan(const DiscreteSSM& d, const std::vector<double>& readout, const std::vector<double>& x) {
  const size_t n = d.transition.size();
  if (readout.size() != n || d.input_gain.size() != n) throw ShapeMismatch("ssm_scan state sizes differ");
  std::vector<double> h(n, 0.0), y(x.size(), 0.0);
  for (size_t k = 0; k < x.size(); ++k) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      h[i] = d.transition[i] * h[i] + d.input_gain[i] * x[k];
      acc += readout[i] * h[i];
    }
    y[k] = acc;
  }
  return y;
}

int64_t delta_rank(int64_t channels) { return (channels + 15) / 16; }

SelectiveProjections::SelectiveProjections(ParamBuilder pb, int64_t d, int64_t n) {
  const int64_t r = delta_rank(d);
  to_input_gain = pb.uniform("input_gain.weight", {n, d}, d);
  to_readout = pb.uniform("readout.weight", {n, d}, d);
  delta_down = pb.uniform("delta_down.weight", {r, d}, d);
  delta_up = pb.uniform("delta_up.weight", {d, r}, r);
  // Bias such that softplus(bias) is log-uniform in [1e-3, 1e-1].
  std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
  std::vector<double> bias(static_cast<size_t>(d));
  for (double& b : bias) {
    const double dt = std::exp(u(pb.rng()));
    b = dt + std::log(-std::expm1(-dt));
  }
  delta_bias = pb.values("delta_bias", {d}, std::move(bias));
}

SelectiveParams selective_params(const Tensor& x, const SelectiveProjections& p) {
  if (x.rank() != 2 || x.dim(1) != p.channels()) {
    throw ShapeMismatch("selective_params expects (M, " + std::to_string(p.channels()) + "), got " +
                        shape_str(x.shape()));
  }
  SelectiveParams out;
  out.input_gain = linear(x, p.to_input_gain);
  out.readout = linear(x, p.to_readout);
  out.timescale = softplus(linear(linear(x, p.delta_down), p.delta_up, p.delta_bias));
  return out;
}

Tensor init_transition_log(ParamBuilder pb, int64_t channels, int64_t state_dim) {
  std::vector<double> v(static_cast<size_t>(channels * state_dim));
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t n = 0; n < state_dim; ++n) v[static_cast<size_t>(c * state_dim + n)] = std::log(static_cast<double>(n + 1));
  }
  return pb.values("transition_log", {channels, state_dim}, std::move(v));
}

Tensor transition_from_log(const Tensor& log_magnitude) { return neg(exp(log_magnitude)); }

namespace {

struct ScanDims {
  int64_t batch, length, channels, state;
};

ScanDims check_scan_shapes(const Tensor& u, const Tensor& timescale, const Tensor& transition,
                           const Tensor& input_gain, const Tensor& readout) {
  if (u.rank() != 3) throw ShapeMismatch("selective_scan input must be (B, L, d), got " + shape_str(u.shape()));
  ScanDims s{u.dim(0), u.dim(1), u.dim(2), transition.rank() == 2 ? transition.dim(1) : -1};
  if (transition.shape() != Shape{s.channels, s.state}) {
    throw ShapeMismatch("transition must be (d, N), got " + shape_str(transition.shape()));
  }
  if (timescale.shape() != u.shape()) throw ShapeMismatch("timescale shape " + shape_str(timescale.shape()));
  const Shape sel{s.batch, s.length, s.state};
  if (input_gain.shape() != sel || readout.shape() != sel) {
    throw ShapeMismatch("input gain/readout must be " + shape_str(sel) + ", got " + shape_str(input_gain.shape()) +
                        " and " + shape_str(readout.shape()));
  }
  for (double v : timescale.values()) check_timescale(v);
  return s;
}

// Per-entry discretization: a-bar = exp(x), b-bar = delta * g(x) * B where
// x = delta * A and g is 1 (first order) or phi (exact).
inline double gain_factor(double x, Discretization kind) {
  return kind == Discretization::kZoh ? expm1_over_x(x) : 1.0;
}

}  // namespace

Tensor selective_scan(const Tensor& u, const Tensor& timescale, const Tensor& transition, const Tensor& input_gain,
                      const Tensor& readout, Discretization kind) {
  const ScanDims s = check_scan_shapes(u, timescale, transition, input_gain, readout);
  const int64_t B = s.batch, L = s.length, D = s.channels, N = s.state;
  const double* ud = u.values().data();
  const double* dt = timescale.values().data();
  const double* A = transition.values().data();
  const double* Bs = input_gain.values().data();
  const double* Cs = readout.values().data();

  const bool needs_grad = grad_enabled() && (u.requires_grad() || timescale.requires_grad() ||
                                             transition.requires_grad() || input_gain.requires_grad() ||
                                             readout.requires_grad());
  // States and decay factors of every step are kept for the reverse pass.
  auto states = std::make_shared<std::vector<double>>(needs_grad ? static_cast<size_t>(B * L * D * N) : 0);
  auto decays = std::make_shared<std::vector<double>>(needs_grad ? static_cast<size_t>(B * L * D * N) : 0);
  std::vector<double> y(static_cast<size_t>(B * L * D), 0.0);
  std::vector<double> h(static_cast<size_t>(D * N));
  Eigen::ArrayXd x(D * N), row_decay(D * N);
  for (int64_t b = 0; b < B; ++b) {
    std::fill(h.begin(), h.end(), 0.0);
    for (int64_t l = 0; l < L; ++l) {
      const int64_t row = b * L + l;
      const double* bl = Bs + row * N;
      const double* cl = Cs + row * N;
      // All decay factors of a step at once, so the exponential vectorizes.
      for (int64_t c = 0; c < D; ++c)
        for (int64_t n = 0; n < N; ++n) x[c * N + n] = dt[row * D + c] * A[c * N + n];
      double* ab = needs_grad ? decays->data() + row * D * N : row_decay.data();
      Eigen::Map<Eigen::ArrayXd>(ab, D * N) = x.exp();
      for (int64_t c = 0; c < D; ++c) {
        const double delta = dt[row * D + c];
        const double uv = ud[row * D + c];
        double* hc = h.data() + c * N;
        const double* xc = x.data() + c * N;
        const double* abc = ab + c * N;
        double acc = 0.0;
        for (int64_t n = 0; n < N; ++n) {
          hc[n] = abc[n] * hc[n] + delta * gain_factor(xc[n], kind) * bl[n] * uv;
          acc += cl[n] * hc[n];
        }
        y[static_cast<size_t>(row * D + c)] = acc;
        if (needs_grad) std::copy(hc, hc + N, states->data() + (row * D + c) * N);
      }
    }
  }
  if (!needs_grad) return Tensor(u.shape(), std::move(y));

  ImplPtr ui = u.impl(), ti = timescale.impl(), ai = transition.impl(), bi = input_gain.impl(), ci = readout.impl();
  return detail::make_result(u.shape(), std::move(y), {ui, ti, ai, bi, ci},
                             [=](TensorImpl& out) {
    const double* dy = out.grad.data();
    const double* ud = ui->data.data();
    const double* dt = ti->data.data();
    const double* A = ai->data.data();
    const double* Bs = bi->data.data();
    const double* Cs = ci->data.data();
    std::vector<double> gu(ui->data.size(), 0.0), gt(ti->data.size(), 0.0), ga(ai->data.size(), 0.0),
        gb(bi->data.size(), 0.0), gc(ci->data.size(), 0.0);
    std::vector<double> dh(static_cast<size_t>(D * N));
    const double* H = states->data();
    const double* AB = decays->data();
    for (int64_t b = 0; b < B; ++b) {
      std::fill(dh.begin(), dh.end(), 0.0);
      for (int64_t l = L - 1; l >= 0; --l) {
        const int64_t row = b * L + l;
        const double* bl = Bs + row * N;
        const double* cl = Cs + row * N;
        for (int64_t c = 0; c < D; ++c) {
          const double delta = dt[row * D + c];
          const double uv = ud[row * D + c];
          const double g = dy[row * D + c];
          const double* hcur = H + (row * D + c) * N;
          const double* hprev = l > 0 ? H + ((row - 1) * D + c) * N : nullptr;
          const double* ac = A + c * N;
          const double* ab = AB + (row * D + c) * N;
          double* dhc = dh.data() + c * N;
          double du = 0.0, ddelta = 0.0;
          for (int64_t n = 0; n < N; ++n) {
            const double x = delta * ac[n];
            const double abar = ab[n];
            const double f = gain_factor(x, kind);
            gc[static_cast<size_t>(row * N + n)] += g * hcur[n];
            const double dhn = dhc[n] + cl[n] * g;
            const double d_abar = hprev ? dhn * hprev[n] : 0.0;
            const double d_bbar = dhn * uv;
            du += dhn * delta * f * bl[n];
            gb[static_cast<size_t>(row * N + n)] += d_bbar * delta * f;
            // b-bar = delta * f(x) * B with x = delta * A.
            double dx = d_abar * abar;
            ddelta += d_bbar * f * bl[n];
            if (kind == Discretization::kZoh) dx += d_bbar * delta * bl[n] * expm1_over_x_derivative(x);
            ddelta += dx * ac[n];
            ga[static_cast<size_t>(c * N + n)] += dx * delta;
            dhc[n] = abar * dhn;
          }
          gu[static_cast<size_t>(row * D + c)] += du;
          gt[static_cast<size_t>(row * D + c)] += ddelta;
        }
      }
    }
    auto accumulate = [](const ImplPtr& t, const std::vector<double>& g) {
      if (!t->requires_grad) return;
      auto& buf = t->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
    };
    accumulate(ui, gu);
    accumulate(ti, gt);
    accumulate(ai, ga);
    accumulate(bi, gb);
    accumulate(ci, gc);
  });
}

Tensor selective_scan_chunked(const Tensor& u, const Tensor& timescale, const Tensor& transition,
                              const Tensor& input_gain, const Tensor& readout, int64_t chunk, Discretization kind) {
  if (chunk < 1) throw DomainError("chunk length must be positive");
  const ScanDims s = check_scan_shapes(u, timescale, transition, input_gain, readout);
  const int64_t B = s.batch, L = s.length, D = s.channels, N = s.state;
  const auto& ud = u.values();
  const auto& dt = timescale.values();
  const auto& A = transition.values();
  const auto& Bs = input_gain.values();
  const auto& Cs = readout.values();
  std::vector<double> y(static_cast<size_t>(B * L * D), 0.0);

  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < D; ++c) {
      for (int64_t n = 0; n < N; ++n) {
        // Each chunk is scanned from a zero state while tracking the product
        // of its transitions; the incoming state is folded in afterwards.
        double carry = 0.0;
        for (int64_t start = 0; start < L; start += chunk) {
          const int64_t stop = std::min(L, start + chunk);
          double local = 0.0, decay = 1.0;
          for (int64_t l = start; l < stop; ++l) {
            const size_t row = static_cast<size_t>(b * L + l);
            const double delta = dt[row * D + c];
            const double x = delta * A[static_cast<size_t>(c * N + n)];
            const double abar = std::exp(x);
            local = abar * local + delta * gain_factor(x, kind) * Bs[row * N + n] * ud[row * D + c];
            decay *= abar;
            y[row * D + c] += Cs[row * N + n] * (local + decay * carry);
          }
          carry = local + decay * carry;
        }
      }
    }
  }
  return Tensor(u.shape(), std::move(y));
}

SelectiveSSM::SelectiveSSM(ParamBuilder pb, int64_t channels, int64_t state_dim, Discretization k)
    : proj(pb.scope("select"), channels, state_dim),
      transition_log(init_transition_log(pb, channels, state_dim)),
      kind(k) {}

Tensor SelectiveSSM::operator()(const Tensor& source, const Tensor& stream) const {
  if (source.shape() != stream.shape() || source.rank() != 3) {
    throw ShapeMismatch("selection source " + shape_str(source.shape()) + " and stream " + shape_str(stream.shape()));
  }
  const int64_t B = source.dim(0), L = source.dim(1), D = source.dim(2), N = proj.state_dim();
  SelectiveParams p = selective_params(reshape(source, {B * L, D}), proj);
  return selective_scan(stream, reshape(p.timescale, {B, L, D}), transition_from_log(transition_log),
                        reshape(p.input_gain, {B, L, N}), reshape(p.readout, {B, L, N}), kind);
}

}  // namespace multicos
