#pragma once

// Independent reference computations for the test suites. Nothing here
// calls into the library's numerical routines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

/// Closed-form eigenpairs of a symmetric 2×2 [[a,b],[b,d]], descending,
/// from the characteristic polynomial.
struct Eig2 {
  double l1, l2;
  std::vector<double> v1;  // unit, largest component nonnegative
};

inline Eig2 eig2(double a, double b, double d) {
  const double mean = 0.5 * (a + d);
  const double r = std::sqrt(0.25 * (a - d) * (a - d) + b * b);
  Eig2 e{mean + r, mean - r, {}};
  // (A − l1 I) v = 0 → v ∝ (b, l1 − a), or (l1 − d, b)
  std::vector<double> v = std::abs(b) > 0 ? std::vector<double>{b, e.l1 - a}
                                          : (a >= d ? std::vector<double>{1, 0}
                                                    : std::vector<double>{0, 1});
  const double n = std::hypot(v[0], v[1]);
  v[0] /= n;
  v[1] /= n;
  const std::size_t big = std::abs(v[1]) > std::abs(v[0]) * (1 + 1e-12) ? 1 : 0;
  if (v[big] < 0) {
    v[0] = -v[0];
    v[1] = -v[1];
  }
  e.v1 = v;
  return e;
}

/// Similarity by explicit rotation: build every circular shift of b and
/// take the largest |⟨a, shift⟩|.
inline double lag_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double best = 0.0;
  std::vector<double> shifted(b);
  for (std::size_t l = 0; l < n; ++l) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += a[k] * shifted[k];
    best = std::max(best, std::abs(s));
    std::rotate(shifted.begin(), shifted.begin() + 1, shifted.end());
  }
  return best;
}

/// Row-major n×n random symmetric PSD matrix B Bᵀ / k + ridge·I.
inline std::vector<double> random_psd(std::size_t n, std::mt19937_64& rng, double ridge = 1e-3) {
  std::normal_distribution<double> g;
  const std::size_t k = n + 2;
  std::vector<double> b(n * k);
  for (double& x : b) x = g(rng);
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += b[i * k + c] * b[j * k + c];
      m[i * n + j] = s / static_cast<double>(k);
      m[j * n + i] = m[i * n + j];
    }
    m[i * n + i] += ridge;
  }
  return m;
}

/// Random orthogonal matrix (row-major) by Gram–Schmidt on Gaussian columns.
inline std::vector<double> random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> cols;
  while (cols.size() < n) {
    std::vector<double> v(n);
    for (double& x : v) x = g(rng);
    for (const auto& c : cols) {
      double d = 0.0;
      for (std::size_t i = 0; i < n; ++i) d += c[i] * v[i];
      for (std::size_t i = 0; i < n; ++i) v[i] -= d * c[i];
    }
    double nrm = 0.0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm < 1e-8) continue;
    for (double& x : v) x /= nrm;
    cols.push_back(std::move(v));
  }
  std::vector<double> q(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) q[i * n + j] = cols[j][i];
  }
  return q;
}

/// Q diag(values) Qᵀ, row-major.
inline std::vector<double> with_spectrum(const std::vector<double>& q,
                                         const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += q[i * n + k] * values[k] * q[j * n + k];
      m[i * n + j] = s;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) m[i * n + j] = m[j * n + i];
  }
  return m;
}

/// Two-sided binomial 3σ half-width for a proportion p over `trials`.
inline double three_sigma(double p, std::size_t trials) {
  return 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

}  // namespace oracle
