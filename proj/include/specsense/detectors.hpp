#pragma once

// Test statistics over a sample covariance: the estimator-correlator, the
// five rank-1 GLRT cases, and the MME / CAV / FTM / AGM covariance
// detectors. Each statistic is a pure function of the covariance (and its
// cached spectrum) plus the prior knowledge it declares.

#include <array>
#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "specsense/error.hpp"
#include "specsense/feature_learning.hpp"
#include "specsense/linalg.hpp"

namespace specsense {

enum class DetectorKind { Ec, Case1, Case2, Case3, Case4, Case5, Mme, Cav, Ftm, Agm };

inline constexpr std::array<DetectorKind, 10> kAllDetectors = {
    DetectorKind::Ec,    DetectorKind::Case1, DetectorKind::Case2, DetectorKind::Case3,
    DetectorKind::Case4, DetectorKind::Case5, DetectorKind::Mme,   DetectorKind::Cav,
    DetectorKind::Ftm,   DetectorKind::Agm};

inline constexpr std::string_view detector_name(DetectorKind d) noexcept {
  switch (d) {
    case DetectorKind::Ec: return "ec";
    case DetectorKind::Case1: return "case1";
    case DetectorKind::Case2: return "case2";
    case DetectorKind::Case3: return "case3";
    case DetectorKind::Case4: return "case4";
    case DetectorKind::Case5: return "case5";
    case DetectorKind::Mme: return "mme";
    case DetectorKind::Cav: return "cav";
    case DetectorKind::Ftm: return "ftm";
    case DetectorKind::Agm: return "agm";
  }
  return "?";
}

/// Case-insensitive lookup by name.
inline std::optional<DetectorKind> parse_detector(std::string_view name) {
  std::string lower(name);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (DetectorKind d : kAllDetectors) {
    if (detector_name(d) == lower) return d;
  }
  return std::nullopt;
}

/// Statistics whose value is unchanged by a uniform scaling of the
/// covariance; these never need the noise variance.
inline constexpr bool is_scale_invariant(DetectorKind d) noexcept {
  switch (d) {
    case DetectorKind::Case3:
    case DetectorKind::Case5:
    case DetectorKind::Mme:
    case DetectorKind::Cav:
    case DetectorKind::Ftm:
    case DetectorKind::Agm: return true;
    default: return false;
  }
}

/// Full signal covariance with its decomposition, computed once.
class SignalCovariance {
 public:
  explicit SignalCovariance(CovarianceEstimate matrix)
      : matrix_(std::move(matrix)), spectrum_(eigendecompose(matrix_)) {}

  /// λ φ φᵀ.
  static SignalCovariance rank1(double lambda, const Feature& phi) {
    const std::size_t n = phi.order_n();
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) m(i, j) = lambda * phi[i] * phi[j];
    }
    return SignalCovariance(CovarianceEstimate(std::move(m)));
  }

  const CovarianceEstimate& matrix() const noexcept { return matrix_; }
  const SpectralDecomposition& spectrum() const noexcept { return spectrum_; }

 private:
  CovarianceEstimate matrix_;
  SpectralDecomposition spectrum_;
};

struct PriorKnowledge {
  std::optional<double> lambda_s1;  // leading eigenvalue of R_s
  std::optional<double> sigma2;     // noise variance
  std::optional<Feature> phi_s1;    // signal feature
  std::optional<SignalCovariance> r_s;
};

enum class PriorField { LambdaS1, Sigma2, PhiS1, SignalCov };

inline constexpr std::string_view prior_field_name(PriorField f) noexcept {
  switch (f) {
    case PriorField::LambdaS1: return "lambda_s1";
    case PriorField::Sigma2: return "sigma2";
    case PriorField::PhiS1: return "phi_s1";
    case PriorField::SignalCov: return "r_s";
  }
  return "?";
}

/// Prior knowledge each detector declares.
inline std::vector<PriorField> required_priors(DetectorKind d) {
  switch (d) {
    case DetectorKind::Ec: return {PriorField::SignalCov, PriorField::Sigma2};
    case DetectorKind::Case1: return {PriorField::LambdaS1, PriorField::Sigma2, PriorField::PhiS1};
    case DetectorKind::Case2: return {PriorField::Sigma2, PriorField::PhiS1};
    case DetectorKind::Case3: return {PriorField::PhiS1};
    case DetectorKind::Case4: return {PriorField::Sigma2};
    case DetectorKind::Ftm: return {PriorField::PhiS1};
    default: return {};
  }
}

inline bool has_prior(const PriorKnowledge& p, PriorField f) noexcept {
  switch (f) {
    case PriorField::LambdaS1: return p.lambda_s1.has_value();
    case PriorField::Sigma2: return p.sigma2.has_value();
    case PriorField::PhiS1: return p.phi_s1.has_value();
    case PriorField::SignalCov: return p.r_s.has_value();
  }
  return false;
}

/// Throws MissingPriorError naming the first absent field.
inline void require_priors(DetectorKind d, const PriorKnowledge& p) {
  for (PriorField f : required_priors(d)) {
    if (!has_prior(p, f)) throw MissingPriorError(std::string(prior_field_name(f)));
  }
}

struct Statistic {
  DetectorKind detector;
  double value;
};

/// A covariance estimate with its full spectrum, shared by every detector
/// evaluated on the same segment.
class Observation {
 public:
  Observation(CovarianceEstimate cov)  // NOLINT(google-explicit-constructor)
      : cov_(std::move(cov)), spectrum_(eigendecompose(cov_)) {}
  Observation(CovarianceEstimate cov, SpectralDecomposition spectrum)
      : cov_(std::move(cov)), spectrum_(std::move(spectrum)) {}

  const CovarianceEstimate& covariance() const noexcept { return cov_; }
  const SpectralDecomposition& spectrum() const noexcept { return spectrum_; }
  std::size_t order_n() const noexcept { return cov_.order_n(); }

 private:
  CovarianceEstimate cov_;
  SpectralDecomposition spectrum_;
};

namespace detail {

inline Statistic finite(DetectorKind d, double v) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string(detector_name(d)) + " statistic is not finite");
  }
  return Statistic{d, v};
}

inline void check_order(std::size_t expected, std::size_t got, std::string_view what) {
  if (expected != got) {
    throw DimensionError(std::string(what) + " has order " + std::to_string(got) +
                         ", covariance has order " + std::to_string(expected));
  }
}

inline double positive_sigma2(double s) {
  if (!(s > 0.0)) throw InvariantError("noise variance must be positive");
  return s;
}

}  // namespace detail

/// Estimator-correlator: (Ns/N) Σ_i λ_{s,i}/(λ_{s,i}+σ²) · φ_{s,i}ᵀ R φ_{s,i}.
inline Statistic stat_ec(const CovarianceEstimate& cov, const SignalCovariance& r_s,
                         double sigma2, std::size_t count_ns) {
  const std::size_t n = cov.order_n();
  detail::check_order(n, r_s.matrix().order_n(), "signal covariance");
  detail::positive_sigma2(sigma2);
  const auto& spec = r_s.spectrum();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lam = spec.eigenvalue(i);
    if (lam == 0.0) continue;
    sum += lam / (lam + sigma2) * quadratic_form(cov.entries(), spec.eigenvector(i));
  }
  return detail::finite(DetectorKind::Ec,
                        static_cast<double>(count_ns) / static_cast<double>(n) * sum);
}

inline Statistic stat_ec(const CovarianceEstimate& cov, const PriorKnowledge& prior,
                         std::size_t count_ns) {
  if (!prior.r_s) throw MissingPriorError("r_s");
  if (!prior.sigma2) throw MissingPriorError("sigma2");
  return stat_ec(cov, *prior.r_s, *prior.sigma2, count_ns);
}

/// λ/(λ+σ²) · φᵀ R φ.
inline Statistic stat_case1(const CovarianceEstimate& cov, const PriorKnowledge& prior) {
  if (!prior.lambda_s1) throw MissingPriorError("lambda_s1");
  if (!prior.sigma2) throw MissingPriorError("sigma2");
  if (!prior.phi_s1) throw MissingPriorError("phi_s1");
  const double lam = *prior.lambda_s1;
  if (!(lam >= 0.0)) throw InvariantError("lambda_s1 must be nonnegative");
  const double s2 = detail::positive_sigma2(*prior.sigma2);
  detail::check_order(cov.order_n(), prior.phi_s1->order_n(), "feature");
  return detail::finite(DetectorKind::Case1,
                        lam / (lam + s2) * quadratic_form(cov.entries(), prior.phi_s1->span()));
}

/// φᵀ R φ; the threshold carries the noise variance.
inline Statistic stat_case2(const CovarianceEstimate& cov, const PriorKnowledge& prior) {
  if (!prior.phi_s1) throw MissingPriorError("phi_s1");
  detail::check_order(cov.order_n(), prior.phi_s1->order_n(), "feature");
  return detail::finite(DetectorKind::Case2, quadratic_form(cov.entries(), prior.phi_s1->span()));
}

/// ln(σ̂₀²/φᵀRφ) + (N−1) ln(σ̂₀²/σ̂₁²) with σ̂₀² = tr R / N and
/// σ̂₁² = (tr R − φᵀRφ)/(N−1), the energy left outside the feature.
inline Statistic stat_case3(const CovarianceEstimate& cov, const PriorKnowledge& prior) {
  if (!prior.phi_s1) throw MissingPriorError("phi_s1");
  const std::size_t n = cov.order_n();
  if (n < 2) throw InvariantError("case3 needs N >= 2");
  detail::check_order(n, prior.phi_s1->order_n(), "feature");
  const double projected = quadratic_form(cov.entries(), prior.phi_s1->span());
  const double total = cov.trace();
  const double s0 = total / static_cast<double>(n);
  const double s1 = (total - projected) / static_cast<double>(n - 1);
  if (!(projected > 0.0)) throw DegenerateInputError("case3: no energy along the feature");
  if (!(s1 > 0.0)) throw DegenerateInputError("case3: feature captures all of the energy");
  const double log_s0 = std::log(s0);
  const double t = (log_s0 - std::log(projected)) +
                   static_cast<double>(n - 1) * (log_s0 - std::log(s1));
  return detail::finite(DetectorKind::Case3, t);
}

/// λ_{r,1}. Any monotone map of it (the full GLRT λ/σ² − ln(λ/σ²) − 1, or
/// the rank-1 signal-subspace-eigenvalue test) gives the same decisions.
inline Statistic stat_case4(const SpectralDecomposition& spectrum) {
  return detail::finite(DetectorKind::Case4, spectrum.eigenvalue(0));
}

/// ln(σ̂₀²/λ₁) + (N−1) ln(σ̂₀²/σ̂₁²) with σ̂₀² = Σλ/N, σ̂₁² = Σ_{i≥2}λ/(N−1).
inline Statistic stat_case5(const SpectralDecomposition& spectrum) {
  const auto& lam = spectrum.eigenvalues();
  const std::size_t n = lam.size();
  if (n < 2) throw InvariantError("case5 needs N >= 2");
  double tail = 0.0;
  for (std::size_t i = n; i-- > 1;) tail += lam[i];
  const double lead = lam[0];
  if (!(lead > 0.0)) throw DegenerateInputError("case5: zero covariance");
  if (!(tail > 0.0)) throw DegenerateInputError("case5: covariance has rank one");
  const double s0 = (lead + tail) / static_cast<double>(n);
  const double s1 = tail / static_cast<double>(n - 1);
  const double log_s0 = std::log(s0);
  const double t =
      (log_s0 - std::log(lead)) + static_cast<double>(n - 1) * (log_s0 - std::log(s1));
  return detail::finite(DetectorKind::Case5, t);
}

/// λ_max / λ_min.
inline Statistic stat_mme(const SpectralDecomposition& spectrum) {
  const double smallest = spectrum.eigenvalues().back();
  if (!(smallest > 0.0)) throw DegenerateInputError("mme: smallest eigenvalue is zero");
  return detail::finite(DetectorKind::Mme, spectrum.eigenvalue(0) / smallest);
}

/// Σ|r_ij| / Σ|r_ii|.
inline Statistic stat_cav(const CovarianceEstimate& cov) {
  const std::size_t n = cov.order_n();
  double all = 0.0;
  double diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) all += std::abs(cov(i, j));
    diag += std::abs(cov(i, i));
  }
  if (!(diag > 0.0)) throw DegenerateInputError("cav: zero diagonal");
  return detail::finite(DetectorKind::Cav, all / diag);
}

/// Similarity between the stored feature and the leading eigenvector of R,
/// extracted by power iteration.
inline Statistic stat_ftm(const CovarianceEstimate& cov, const PriorKnowledge& prior,
                          double tol = 1e-10, int max_iters = 100000) {
  if (!prior.phi_s1) throw MissingPriorError("phi_s1");
  detail::check_order(cov.order_n(), prior.phi_s1->order_n(), "feature");
  const LeadingEigenpair lead = leading_eigenpair(cov, tol, max_iters);
  return detail::finite(DetectorKind::Ftm, feature_similarity(*prior.phi_s1, lead.feature).value);
}

/// As above, reusing the leading eigenvector of an existing decomposition.
inline Statistic stat_ftm(const Observation& obs, const PriorKnowledge& prior) {
  if (!prior.phi_s1) throw MissingPriorError("phi_s1");
  detail::check_order(obs.order_n(), prior.phi_s1->order_n(), "feature");
  const auto v = obs.spectrum().eigenvector(0);
  const Feature lead{std::vector<double>(v.begin(), v.end())};
  return detail::finite(DetectorKind::Ftm, feature_similarity(*prior.phi_s1, lead).value);
}

/// Arithmetic over geometric mean of the eigenvalues; the geometric mean is
/// taken as exp(mean of logs).
inline Statistic stat_agm(const SpectralDecomposition& spectrum) {
  const auto& lam = spectrum.eigenvalues();
  double sum = 0.0;
  double log_sum = 0.0;
  for (double l : lam) {
    if (!(l > 0.0)) throw DegenerateInputError("agm: nonpositive eigenvalue");
    sum += l;
    log_sum += std::log(l);
  }
  const double n = static_cast<double>(lam.size());
  const double log_ratio = std::log(sum / n) - log_sum / n;
  return detail::finite(DetectorKind::Agm, std::exp(log_ratio));
}

inline Statistic stat_case4(const CovarianceEstimate& cov) { return stat_case4(eigendecompose(cov)); }
inline Statistic stat_case5(const CovarianceEstimate& cov) { return stat_case5(eigendecompose(cov)); }
inline Statistic stat_mme(const CovarianceEstimate& cov) { return stat_mme(eigendecompose(cov)); }
inline Statistic stat_agm(const CovarianceEstimate& cov) { return stat_agm(eigendecompose(cov)); }

/// Evaluates one detector on an observation after validating its priors.
inline Statistic evaluate(DetectorKind d, const Observation& obs, const PriorKnowledge& prior) {
  require_priors(d, prior);
  const auto& cov = obs.covariance();
  switch (d) {
    case DetectorKind::Ec: return stat_ec(cov, prior, cov.sample_count());
    case DetectorKind::Case1: return stat_case1(cov, prior);
    case DetectorKind::Case2: return stat_case2(cov, prior);
    case DetectorKind::Case3: return stat_case3(cov, prior);
    case DetectorKind::Case4: return stat_case4(obs.spectrum());
    case DetectorKind::Case5: return stat_case5(obs.spectrum());
    case DetectorKind::Mme: return stat_mme(obs.spectrum());
    case DetectorKind::Cav: return stat_cav(cov);
    case DetectorKind::Ftm: return stat_ftm(obs, prior);
    case DetectorKind::Agm: return stat_agm(obs.spectrum());
  }
  throw InvariantError("unknown detector");
}

enum class Decision { H0, H1 };

inline constexpr std::string_view decision_name(Decision d) noexcept {
  return d == Decision::H1 ? "H1" : "H0";
}

/// H1 iff the statistic strictly exceeds the threshold.
inline constexpr Decision decide(double value, double threshold) noexcept {
  return value > threshold ? Decision::H1 : Decision::H0;
}

inline constexpr Decision decide(const Statistic& s, double threshold) noexcept {
  return decide(s.value, threshold);
}

}  // namespace specsense
