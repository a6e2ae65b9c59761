#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using LMat = std::vector<std::vector<long double>>;

inline LMat identity(size_t n) {
  LMat m(n, std::vector<long double>(n, 0.0L));
  for (size_t i = 0; i < n; ++i) m[i][i] = 1.0L;
  return m;
}

inline LMat mat_mul(const LMat& a, const LMat& b) {
  const size_t n = a.size();
  LMat c(n, std::vector<long double>(n, 0.0L));
  for (size_t i = 0; i < n; ++i)
    for (size_t k = 0; k < n; ++k)
      for (size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

/// Dense matrix exponential by scaling and squaring with a degree-13 Taylor
/// polynomial, in extended precision.
inline LMat expm(const LMat& a) {
  const size_t n = a.size();
  long double norm = 0.0L;
  for (const auto& row : a) {
    long double s = 0.0L;
    for (long double v : row) s += std::fabs(v);
    norm = std::max(norm, s);
  }
  int squarings = 0;
  while (norm > 0.125L) {
    norm /= 2.0L;
    ++squarings;
  }
  const long double scale = std::ldexp(1.0L, -squarings);
  LMat as = a;
  for (auto& row : as)
    for (auto& v : row) v *= scale;
  LMat result = identity(n), term = identity(n);
  for (int k = 1; k <= 13; ++k) {
    term = mat_mul(term, as);
    for (auto& row : term)
      for (auto& v : row) v /= static_cast<long double>(k);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j) result[i][j] += term[i][j];
  }
  for (int s = 0; s < squarings; ++s) result = mat_mul(result, result);
  return result;
}

/// Solves m x = rhs by Gaussian elimination with partial pivoting.
inline std::vector<long double> solve(LMat m, std::vector<long double> rhs) {
  const size_t n = m.size();
  for (size_t col = 0; col < n; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < n; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[piv][col])) piv = r;
    std::swap(m[col], m[piv]);
    std::swap(rhs[col], rhs[piv]);
    for (size_t r = col + 1; r < n; ++r) {
      const long double f = m[r][col] / m[col][col];
      for (size_t j = col; j < n; ++j) m[r][j] -= f * m[col][j];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<long double> x(n);
  for (size_t i = n; i-- > 0;) {
    long double s = rhs[i];
    for (size_t j = i + 1; j < n; ++j) s -= m[i][j] * x[j];
    x[i] = s / m[i][i];
  }
  return x;
}

struct DenseZoh {
  LMat abar;
  std::vector<long double> bbar;
};

/// A-bar = exp(delta A), B-bar = (delta A)^{-1} (exp(delta A) - I) delta B for
/// a dense nonsingular A.
inline DenseZoh dense_zoh(const LMat& a, const std::vector<long double>& b, long double delta) {
  const size_t n = a.size();
  LMat da = a;
  for (auto& row : da)
    for (auto& v : row) v *= delta;
  DenseZoh out;
  out.abar = expm(da);
  std::vector<long double> rhs(n, 0.0L);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) rhs[i] += (out.abar[i][j] - (i == j ? 1.0L : 0.0L)) * delta * b[j];
  out.bbar = solve(da, rhs);
  return out;
}

/// Naive selective scan over flat (B, L, d) / (B, L, N) buffers, recomputing
/// the discretization from scratch at every step and state index.
inline std::vector<double> selective_scan_loop(const std::vector<double>& u, const std::vector<double>& dt,
                                               const std::vector<double>& A, const std::vector<double>& Bs,
                                               const std::vector<double>& Cs, int64_t B, int64_t L, int64_t D,
                                               int64_t N, bool exact_gain) {
  std::vector<double> y(static_cast<size_t>(B * L * D), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < D; ++c)
      for (int64_t n = 0; n < N; ++n) {
        double h = 0.0;
        for (int64_t l = 0; l < L; ++l) {
          const size_t r = static_cast<size_t>(b * L + l);
          const double delta = dt[r * D + c];
          const double a = A[static_cast<size_t>(c * N + n)];
          const double abar = std::exp(delta * a);
          double bbar = delta * Bs[r * N + n];
          if (exact_gain && std::abs(delta * a) > 1e-8) bbar = (abar - 1.0) / a * Bs[r * N + n];
          h = abar * h + bbar * u[r * D + c];
          y[r * D + c] += Cs[r * N + n] * h;
        }
      }
  return y;
}

}  // namespace oracle
