#pragma once

// Dense symmetric linear algebra for sensing segments: covariance
// accumulation, cyclic Jacobi eigendecomposition and power iteration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "specsense/error.hpp"

namespace specsense {

/// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data size " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Matrix& operator*=(double a) noexcept {
    for (double& v : data_) v *= a;
    return *this;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

/// y = A x for square A.
inline void multiply(const Matrix& a, std::span<const double> x, std::span<double> y) noexcept {
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
}

/// xᵀ A x.
inline double quadratic_form(const Matrix& a, std::span<const double> x) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) s += x[i] * dot(a.row(i), x);
  return s;
}

inline double trace(const Matrix& a) noexcept {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
  return t;
}

/// Flip `v` so that its first component of largest magnitude is nonnegative.
/// Magnitudes within 1e-12 relative of the maximum count as ties, and the
/// lowest such index decides.
inline void sign_normalize(std::span<double> v) noexcept {
  double largest = 0.0;
  for (double x : v) largest = std::max(largest, std::abs(x));
  if (largest == 0.0) return;
  const double cutoff = largest * (1.0 - 1e-12);
  for (double x : v) {
    if (std::abs(x) >= cutoff) {
      if (x < 0.0) {
        for (double& y : v) y = -y;
      }
      return;
    }
  }
}

inline bool is_sign_normalized(std::span<const double> v) noexcept {
  std::vector<double> copy(v.begin(), v.end());
  sign_normalize(copy);
  return std::equal(copy.begin(), copy.end(), v.begin());
}

/// Ns length-N sensing vectors, one per row.
class SensingSegment {
 public:
  SensingSegment(std::size_t order_n, std::size_t count_ns, Matrix vectors)
      : vectors_(std::move(vectors)) {
    if (order_n < 2) throw InvariantError("sensing segment order N must be >= 2");
    if (count_ns < 1) throw InvariantError("sensing segment needs at least one vector");
    if (vectors_.rows() != count_ns || vectors_.cols() != order_n) {
      throw DimensionError("sensing segment matrix is " + std::to_string(vectors_.rows()) +
                           "x" + std::to_string(vectors_.cols()) + ", expected " +
                           std::to_string(count_ns) + "x" + std::to_string(order_n));
    }
    for (double v : vectors_.data()) {
      if (!std::isfinite(v)) throw InvariantError("sensing segment contains a non-finite sample");
    }
  }

  std::size_t order_n() const noexcept { return vectors_.cols(); }
  std::size_t count_ns() const noexcept { return vectors_.rows(); }
  const Matrix& vectors() const noexcept { return vectors_; }
  std::span<const double> vector(std::size_t j) const noexcept { return vectors_.row(j); }

 private:
  Matrix vectors_;
};

/// Stride-1 overlapping windows: vector j is stream[j .. j+N-1].
/// Consumes Ns + N - 1 samples.
inline SensingSegment build_sensing_vectors(std::span<const double> stream, std::size_t order_n,
                                            std::size_t count_ns) {
  if (order_n < 2) throw InvariantError("sensing segment order N must be >= 2");
  if (count_ns < 1) throw InvariantError("sensing segment needs at least one vector");
  const std::size_t required = count_ns + order_n - 1;
  if (stream.size() < required) {
    throw LengthError("stream of " + std::to_string(stream.size()) + " samples is too short",
                      required);
  }
  Matrix m(count_ns, order_n);
  for (std::size_t j = 0; j < count_ns; ++j) {
    std::copy_n(stream.begin() + static_cast<std::ptrdiff_t>(j), order_n, m.row(j).begin());
  }
  return SensingSegment(order_n, count_ns, std::move(m));
}

/// N×N symmetric sample covariance. `sample_count` records the Ns it was
/// averaged over (0 when built from explicit entries).
class CovarianceEstimate {
 public:
  explicit CovarianceEstimate(Matrix entries, std::size_t sample_count = 0)
      : entries_(std::move(entries)), sample_count_(sample_count) {
    if (entries_.rows() != entries_.cols() || entries_.rows() == 0) {
      throw DimensionError("covariance must be a nonempty square matrix");
    }
    const std::size_t n = entries_.rows();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double a = entries_(i, j);
        if (!std::isfinite(a)) throw InvariantError("covariance has a non-finite entry");
        if (std::abs(a - entries_(j, i)) > 1e-12 * std::max(1.0, std::abs(a))) {
          throw InvariantError("covariance is not symmetric at (" + std::to_string(i) + "," +
                               std::to_string(j) + ")");
        }
      }
    }
  }

  std::size_t order_n() const noexcept { return entries_.rows(); }
  std::size_t sample_count() const noexcept { return sample_count_; }
  const Matrix& entries() const noexcept { return entries_; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return entries_(i, j); }
  double trace() const noexcept { return specsense::trace(entries_); }

  CovarianceEstimate scaled(double a) const {
    Matrix m = entries_;
    m *= a;
    return CovarianceEstimate(std::move(m), sample_count_);
  }

 private:
  Matrix entries_;
  std::size_t sample_count_ = 0;
};

/// (1/Ns) Σ r_i r_iᵀ, accumulated on the upper triangle and mirrored.
inline CovarianceEstimate sample_covariance(const SensingSegment& segment) {
  const std::size_t n = segment.order_n();
  const std::size_t ns = segment.count_ns();
  std::vector<double> acc(n * n, 0.0);
  for (std::size_t s = 0; s < ns; ++s) {
    const double* r = segment.vector(s).data();
    for (std::size_t i = 0; i < n; ++i) {
      const double ri = r[i];
      double* a = acc.data() + i * n;
      for (std::size_t j = i; j < n; ++j) a[j] += ri * r[j];
    }
  }
  Matrix m(n, n);
  const double inv = 1.0 / static_cast<double>(ns);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      m(i, j) = acc[i * n + j] * inv;
      m(j, i) = m(i, j);
    }
  }
  return CovarianceEstimate(std::move(m), ns);
}

/// Eigenvalues in descending order, eigenvectors as unit-norm,
/// sign-normalized columns.
class SpectralDecomposition {
 public:
  SpectralDecomposition(std::vector<double> eigenvalues, Matrix eigenvectors)
      : eigenvalues_(std::move(eigenvalues)), by_column_(eigenvectors.cols(), eigenvectors.rows()) {
    if (eigenvectors.rows() != eigenvectors.cols() ||
        eigenvectors.cols() != eigenvalues_.size()) {
      throw DimensionError("spectral decomposition dimensions disagree");
    }
    for (std::size_t k = 0; k < eigenvectors.cols(); ++k) {
      for (std::size_t i = 0; i < eigenvectors.rows(); ++i) by_column_(k, i) = eigenvectors(i, k);
    }
  }

  std::size_t order_n() const noexcept { return eigenvalues_.size(); }
  const std::vector<double>& eigenvalues() const noexcept { return eigenvalues_; }
  double eigenvalue(std::size_t k) const noexcept { return eigenvalues_[k]; }
  std::span<const double> eigenvector(std::size_t k) const noexcept { return by_column_.row(k); }

  /// V with eigenvectors as columns.
  Matrix eigenvectors() const {
    const std::size_t n = order_n();
    Matrix v(n, n);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < n; ++i) v(i, k) = by_column_(k, i);
    }
    return v;
  }

 private:
  std::vector<double> eigenvalues_;
  Matrix by_column_;  // row k holds eigenvector k
};

struct JacobiOptions {
  int max_sweeps = 100;
  double relative_tolerance = 1e-12;  // off-diagonal Frobenius norm, relative to trace
  double clip_tolerance = 1e-9;       // negative eigenvalues within this * trace become 0
};

/// Full eigendecomposition by cyclic Jacobi rotations.
inline SpectralDecomposition eigendecompose(const CovarianceEstimate& cov,
                                            const JacobiOptions& opts = {}) {
  const std::size_t n = cov.order_n();
  Matrix a = cov.entries();
  Matrix v = Matrix::identity(n);

  double frob = 0.0;
  for (double x : a.data()) frob += x * x;
  frob = std::sqrt(frob);
  const double tr = cov.trace();
  // The trace bounds the Frobenius norm for PSD input; the max keeps the
  // tolerance meaningful for indefinite input, which is rejected below.
  const double scale = std::max(std::abs(tr), frob);
  const double tol = opts.relative_tolerance * scale;

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) s += 2.0 * a(p, q) * a(p, q);
    }
    return std::sqrt(s);
  };

  double off = off_norm();
  int sweep = 0;
  while (off > tol) {
    if (sweep++ >= opts.max_sweeps) {
      throw ConvergenceError("Jacobi eigendecomposition did not converge", off);
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::hypot(theta, 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t r = 0; r < n; ++r) {
          const double arp = a(r, p);
          const double arq = a(r, q);
          a(r, p) = c * arp - s * arq;
          a(r, q) = s * arp + c * arq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double apr = a(p, r);
          const double aqr = a(q, r);
          a(p, r) = c * apr - s * aqr;
          a(q, r) = s * apr + c * aqr;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = c * vrp - s * vrq;
          v(r, q) = s * vrp + c * vrq;
        }
      }
    }
    off = off_norm();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  std::vector<double> values(n);
  Matrix vectors(n, n);
  std::vector<double> column(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    double lambda = a(src, src);
    if (lambda < 0.0) {
      if (lambda >= -opts.clip_tolerance * std::abs(tr)) {
        lambda = 0.0;
      } else {
        throw NumericalError("covariance is not positive semidefinite (eigenvalue " +
                             std::to_string(lambda) + ")");
      }
    }
    values[k] = lambda;
    for (std::size_t i = 0; i < n; ++i) column[i] = v(i, src);
    const double nrm = norm2(column);
    for (double& x : column) x /= nrm;
    sign_normalize(column);
    for (std::size_t i = 0; i < n; ++i) vectors(i, k) = column[i];
  }
  return SpectralDecomposition(std::move(values), std::move(vectors));
}

/// Unit-norm, sign-normalized length-N vector.
class Feature {
 public:
  /// Validates unit norm (1e-9) and applies the sign rule.
  explicit Feature(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw InvariantError("feature must not be empty");
    for (double x : values_) {
      if (!std::isfinite(x)) throw InvariantError("feature has a non-finite entry");
    }
    const double nrm = norm2(values_);
    if (std::abs(nrm - 1.0) > 1e-9) {
      throw InvariantError("feature is not unit norm (norm " + std::to_string(nrm) + ")");
    }
    sign_normalize(values_);
  }

  /// Scales an arbitrary nonzero vector to unit norm.
  static Feature normalized(std::vector<double> values) {
    const double nrm = norm2(values);
    if (!(nrm > 0.0) || !std::isfinite(nrm)) {
      throw InvariantError("cannot normalize a zero or non-finite vector");
    }
    for (double& x : values) x /= nrm;
    return Feature(std::move(values));
  }

  std::size_t order_n() const noexcept { return values_.size(); }
  const std::vector<double>& values() const noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  friend bool operator==(const Feature&, const Feature&) = default;

 private:
  std::vector<double> values_;
};

struct LeadingEigenpair {
  double eigenvalue;
  Feature feature;
  int iterations;
};

namespace detail {

struct PowerRun {
  bool converged = false;
  double rayleigh = 0.0;
  double residual = 0.0;
  int iterations = 0;
  std::vector<double> x;
};

inline PowerRun power_run(const Matrix& a, std::vector<double> x, double tol, int budget) {
  const std::size_t n = a.rows();
  std::vector<double> y(n);
  PowerRun run;
  for (int it = 0; it < budget; ++it) {
    multiply(a, x, y);
    const double nrm = norm2(y);
    run.iterations = it + 1;
    if (nrm == 0.0) {
      // x lies in the null space; the matrix is zero on this start.
      run.converged = true;
      run.rayleigh = 0.0;
      run.x = std::move(x);
      return run;
    }
    double diff = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] /= nrm;
      diff = std::max(diff, std::abs(y[i] - x[i]));
    }
    std::swap(x, y);
    run.residual = diff;
    if (diff < tol) {
      run.converged = true;
      break;
    }
  }
  run.rayleigh = quadratic_form(a, x);
  run.x = std::move(x);
  return run;
}

}  // namespace detail

/// Leading eigenpair by power iteration, O(N²) per step.
///
/// Starts from the normalized all-ones vector and stops once successive
/// iterates differ by less than `tol` in max-norm. A converged result whose
/// Rayleigh quotient is below the largest diagonal entry cannot be dominant,
/// which means the start was orthogonal to the dominant eigenspace; the
/// iteration then restarts from e₁ with the remaining budget (and from the
/// basis vector of the largest diagonal entry if e₁ is orthogonal too).
/// When λ₁ ≈ λ₂ the returned vector is an arbitrary member of the dominant
/// eigenspace.
inline LeadingEigenpair leading_eigenpair(const CovarianceEstimate& cov, double tol = 1e-10,
                                          int max_iters = 100000) {
  if (!(tol > 0.0)) throw InvariantError("power iteration tolerance must be positive");
  const Matrix& a = cov.entries();
  const std::size_t n = cov.order_n();

  double max_diag = 0.0;
  std::size_t max_diag_index = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (a(i, i) > max_diag) {
      max_diag = a(i, i);
      max_diag_index = i;
    }
  }
  const double slack = 1e-9 * std::max(max_diag, std::abs(cov.trace()));

  std::vector<std::vector<double>> starts;
  starts.emplace_back(n, 1.0 / std::sqrt(static_cast<double>(n)));
  starts.emplace_back(n, 0.0);
  starts.back()[0] = 1.0;
  if (max_diag_index != 0) {
    starts.emplace_back(n, 0.0);
    starts.back()[max_diag_index] = 1.0;
  }

  int used = 0;
  detail::PowerRun run;
  for (auto& start : starts) {
    run = detail::power_run(a, std::move(start), tol, max_iters - used);
    used += run.iterations;
    if (!run.converged) {
      throw ConvergenceError("power iteration exceeded " + std::to_string(max_iters) +
                                 " iterations",
                             run.residual);
    }
    if (run.rayleigh >= max_diag - slack) break;
  }
  sign_normalize(run.x);
  const double nrm = norm2(run.x);
  for (double& x : run.x) x /= nrm;
  return LeadingEigenpair{run.rayleigh, Feature(std::move(run.x)), used};
}

}  // namespace specsense
