#include <gtest/gtest.h>

#include <random>

#include "multicos/grad_check.hpp"
#include "multicos/ops.hpp"
#include "multicos/scan2d.hpp"
#include "multicos/ssm.hpp"
#include "rand.hpp"
#include "ssm_ref.hpp"

using namespace multicos;

namespace {

// a=1, b=2, c=3, d=4 laid out as [[a, b], [c, d]].
Tensor symbolic_grid() { return Tensor({1, 1, 2, 2}, {1, 2, 3, 4}); }

Tensor rotate180(const Tensor& x) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<double> out(x.values().size());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j)
          out[static_cast<size_t>(((b * C + c) * H + i) * W + j)] = x.at({b, c, H - 1 - i, W - 1 - j});
  return Tensor(x.shape(), out);
}

}  // namespace

TEST(Scan2d, FlattenDefinitions) {
  EXPECT_EQ(flatten_directional(symbolic_grid(), ScanDirection::kTopLeft).values(), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(flatten_directional(symbolic_grid(), ScanDirection::kBottomRight).values(),
            (std::vector<double>{4, 3, 2, 1}));
  EXPECT_EQ(flatten_directional(symbolic_grid(), ScanDirection::kTopRight).values(),
            (std::vector<double>{2, 1, 4, 3}));
  EXPECT_EQ(flatten_directional(symbolic_grid(), ScanDirection::kBottomLeft).values(),
            (std::vector<double>{3, 4, 1, 2}));
}

TEST(Scan2d, ChannelsBecomeFeatureAxis) {
  Tensor x({1, 2, 1, 2}, {1, 2, 10, 20});
  Tensor s = flatten_directional(x, ScanDirection::kTopLeft);
  EXPECT_EQ(s.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(s.values(), (std::vector<double>{1, 10, 2, 20}));
}

TEST(Scan2d, RoundTrips) {
  Tensor one({1, 1, 1, 1}, 5.0);
  for (ScanDirection d : kAllDirections) {
    EXPECT_EQ(unflatten_directional(flatten_directional(one, d), d, 1, 1).values(), one.values());
    EXPECT_EQ(unflatten_directional(flatten_directional(symbolic_grid(), d), d, 2, 2).values(),
              symbolic_grid().values());
  }
  std::mt19937_64 rng(51);
  Tensor x = oracle::random_tensor(rng, {2, 3, 7, 5});
  for (ScanDirection d : kAllDirections) {
    Tensor s = flatten_directional(x, d);
    EXPECT_EQ(unflatten_directional(s, d, 7, 5).values(), x.values());
    EXPECT_EQ(flatten_directional(unflatten_directional(s, d, 7, 5), d).values(), s.values());
  }
}

TEST(Scan2d, LengthMismatch) {
  Tensor s({1, 6, 2}, 0.0);
  EXPECT_THROW(unflatten_directional(s, ScanDirection::kTopLeft, 2, 2), LengthMismatch);
  EXPECT_THROW(unflatten_directional(s, ScanDirection::kTopLeft, 0, 6), LengthMismatch);
}

TEST(Scan2d, IdentitySystemReturnsInput) {
  std::mt19937_64 rng(52);
  Tensor x = oracle::random_tensor(rng, {2, 3, 4, 5});
  Tensor y = multi_direction_ssm(x, [](const Tensor& seq, ScanDirection) {
    // A-bar = 0, B-bar = 1, C = 1 applied per channel.
    std::vector<double> out(seq.values().size());
    const auto& v = seq.values();
    for (size_t i = 0; i < v.size(); ++i) {
      auto y = ssm_scan(DiscreteSSM{{0.0}, {1.0}}, {1.0}, {v[i]});
      out[i] = y[0];
    }
    return Tensor(seq.shape(), out);
  });
  EXPECT_LT(oracle::max_abs_diff(y.values(), x.values()), 1e-15);
}

TEST(Scan2d, ConstantInputGivesDirectScanAverage) {
  // Time-invariant stable system on a constant map: every pixel's output is
  // the mean of the scalar step response at its four step indices.
  const int64_t H = 3, W = 4, L = H * W;
  DiscreteSSM sys = zoh_discretize({{-0.7, -2.0}, {1.0, 0.5}, {1.0, -0.3}, 0.4});
  const std::vector<double> readout{1.0, -0.3};
  auto step = ssm_scan(sys, readout, std::vector<double>(static_cast<size_t>(L), 0.8));
  Tensor x({1, 1, H, W}, 0.8);
  Tensor y = multi_direction_ssm(x, [&](const Tensor& seq, ScanDirection) {
    return Tensor(seq.shape(), ssm_scan(sys, readout, seq.values()));
  });
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      const int64_t tl = i * W + j, tr = i * W + (W - 1 - j);
      const double expect = (step[tl] + step[L - 1 - tl] + step[tr] + step[L - 1 - tr]) / 4.0;
      EXPECT_NEAR(y.at({0, 0, i, j}), expect, 1e-14);
    }
  // With a fast-forgetting system the transient vanishes and the output is
  // spatially constant.
  DiscreteSSM fast = zoh_discretize({{-60.0}, {1.0}, {1.0}, 1.0});
  Tensor yf = multi_direction_ssm(x, [&](const Tensor& seq, ScanDirection) {
    return Tensor(seq.shape(), ssm_scan(fast, {1.0}, seq.values()));
  });
  for (double v : yf.values()) EXPECT_NEAR(v, yf.values()[0], 1e-14);
}

TEST(Scan2d, MatchesFourLoopOracle) {
  std::mt19937_64 rng(53);
  const int64_t C = 2, H = 3, W = 3, N = 3, L = H * W;
  Tensor x = oracle::random_tensor(rng, {1, C, H, W});
  Tensor A = oracle::random_tensor(rng, {C, N}, -1.5, -0.2);
  Tensor dt = oracle::random_tensor(rng, {1, L, C}, 0.1, 0.6);
  Tensor Bs = oracle::random_tensor(rng, {1, L, N}), Cs = oracle::random_tensor(rng, {1, L, N});
  Tensor y = multi_direction_ssm(x, [&](const Tensor& seq, ScanDirection) {
    return selective_scan(seq, dt, A, Bs, Cs);
  });
  // Explicit coordinate lists per direction.
  std::vector<std::vector<std::pair<int64_t, int64_t>>> paths(4);
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      paths[0].push_back({i, j});
      paths[2].push_back({i, W - 1 - j});
    }
  paths[1].assign(paths[0].rbegin(), paths[0].rend());
  paths[3].assign(paths[2].rbegin(), paths[2].rend());
  std::vector<double> expect(static_cast<size_t>(C * H * W), 0.0);
  for (const auto& path : paths) {
    std::vector<double> seq(static_cast<size_t>(L * C));
    for (int64_t l = 0; l < L; ++l)
      for (int64_t c = 0; c < C; ++c) seq[static_cast<size_t>(l * C + c)] = x.at({0, c, path[l].first, path[l].second});
    auto out = oracle::selective_scan_loop(seq, dt.values(), A.values(), Bs.values(), Cs.values(), 1, L, C, N, false);
    for (int64_t l = 0; l < L; ++l)
      for (int64_t c = 0; c < C; ++c)
        expect[static_cast<size_t>((c * H + path[l].first) * W + path[l].second)] += out[static_cast<size_t>(l * C + c)] / 4;
  }
  EXPECT_LT(oracle::max_abs_diff(y.values(), expect), 1e-12);
}

TEST(Scan2d, RotationEquivariance) {
  std::mt19937_64 rng(54);
  ParamStore store;
  ParamBuilder pb(store, rng);
  SelectiveSSM head(pb, 3, 4, Discretization::kTaylor);
  auto run = [&](const Tensor& m) {
    return multi_direction_ssm(m, [&](const Tensor& seq, ScanDirection) { return head(seq, seq); });
  };
  for (auto [h, w] : {std::pair<int64_t, int64_t>{4, 5}, {3, 3}, {1, 6}}) {
    Tensor x = oracle::random_tensor(rng, {2, 3, h, w});
    Tensor y = run(x);
    Tensor y_rot = rotate180(run(rotate180(x)));
    EXPECT_LT(oracle::max_abs_diff(y.values(), y_rot.values()), 1e-10);
  }
}

TEST(Scan2d, FlattenGradient) {
  std::mt19937_64 rng(55);
  Tensor x = oracle::random_tensor(rng, {1, 2, 3, 2});
  x.set_requires_grad(true);
  Tensor probe = oracle::random_tensor(rng, {1, 6, 2});
  for (ScanDirection d : kAllDirections) {
    GradCheckReport r = grad_check([&] { return sum(flatten_directional(x, d) * probe); }, {x});
    EXPECT_TRUE(r.passed);
  }
}
