#pragma once

// Seeded synthetic signals (rank-1 vectors, AR(1) and white streams),
// noise at a controlled SNR, and raw sample-file I/O.

#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "specsense/error.hpp"
#include "specsense/linalg.hpp"

namespace specsense {

// ---------------------------------------------------------------------------
// Seeds

inline constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed for stream `index` under `master`; avalanche-mixed so that nearby
/// masters and indices give unrelated seeds.
inline constexpr std::uint64_t mix64(std::uint64_t master, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Models

enum class SignalKind { Rank1Vector, Ar1Stream, WhiteStream };

/// How sensing vectors are formed: drawn independently, or as stride-1
/// windows over one sample stream.
enum class SegmentLayout { Vectors, Stream };

struct Rank1Model {
  double lambda_s1 = 0.0;
  Feature phi;
};

struct Ar1Model {
  double coefficient = 0.0;  // a, |a| < 1
  double variance = 1.0;     // stationary process variance
};

struct WhiteModel {
  double variance = 1.0;
};

struct SnrSpec {
  double snr_db = 0.0;
  double sigma2 = 1.0;
};

inline void check_variance(double v, std::string_view what) {
  if (!(v >= 0.0) || !std::isfinite(v)) {
    throw InvariantError(std::string(what) + " must be a finite nonnegative variance");
  }
}

/// Adds i.i.d. N(0, σ²) draws from `seed` to every entry, in order.
inline void add_gaussian_noise(std::span<double> out, double sigma2, std::uint64_t seed) {
  if (sigma2 == 0.0) return;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(sigma2));
  for (double& x : out) x += normal(rng);
}

/// Ns independent vectors with i.i.d. N(0, σ²) entries.
inline SensingSegment gen_noise_segment(std::size_t n, std::size_t ns, double sigma2,
                                        std::uint64_t seed) {
  check_variance(sigma2, "noise variance");
  Matrix m(ns, n);
  add_gaussian_noise(m.data(), sigma2, seed);
  return SensingSegment(n, ns, std::move(m));
}

/// s_j = g_j √λ φ with g_j i.i.d. standard normal; population covariance λφφᵀ.
inline SensingSegment gen_rank1_segment(const Rank1Model& model, std::size_t ns,
                                        std::uint64_t seed) {
  check_variance(model.lambda_s1, "lambda_s1");
  const std::size_t n = model.phi.order_n();
  Matrix m(ns, n);
  if (model.lambda_s1 > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> normal;
    const double amp = std::sqrt(model.lambda_s1);
    for (std::size_t j = 0; j < ns; ++j) {
      const double g = amp * normal(rng);
      auto row = m.row(j);
      for (std::size_t i = 0; i < n; ++i) row[i] = g * model.phi[i];
    }
  }
  return SensingSegment(n, ns, std::move(m));
}

/// x[t] = a x[t−1] + e[t], e ~ N(0, var·(1−a²)), x[0] ~ N(0, var).
inline std::vector<double> gen_ar1_stream(const Ar1Model& model, std::size_t length,
                                          std::uint64_t seed) {
  if (!(std::abs(model.coefficient) < 1.0)) {
    throw InvariantError("AR(1) coefficient must satisfy |a| < 1");
  }
  check_variance(model.variance, "AR(1) variance");
  std::vector<double> x(length, 0.0);
  if (length == 0 || model.variance == 0.0) return x;
  Rng rng(seed);
  std::normal_distribution<double> normal;
  const double a = model.coefficient;
  const double innovation = std::sqrt(model.variance * (1.0 - a * a));
  x[0] = std::sqrt(model.variance) * normal(rng);
  for (std::size_t t = 1; t < length; ++t) x[t] = a * x[t - 1] + innovation * normal(rng);
  return x;
}

inline std::vector<double> gen_white_stream(const WhiteModel& model, std::size_t length,
                                            std::uint64_t seed) {
  check_variance(model.variance, "white variance");
  std::vector<double> x(length, 0.0);
  if (model.variance == 0.0) return x;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(model.variance));
  for (double& v : x) v = normal(rng);
  return x;
}

/// Population covariance of an AR(1) process: var · a^|i−j|.
inline CovarianceEstimate ar1_population_covariance(const Ar1Model& model, std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto lag = static_cast<double>(i > j ? i - j : j - i);
      m(i, j) = model.variance * std::pow(model.coefficient, lag);
    }
  }
  return CovarianceEstimate(std::move(m));
}

/// A signal source of order N: rank-1 vectors, or an AR(1) / white stream
/// windowed into stride-1 sensing vectors.
struct SignalModel {
  std::size_t order_n = 0;
  std::variant<WhiteModel, Rank1Model, Ar1Model> params;

  static SignalModel rank1(double lambda_s1, Feature phi) {
    const std::size_t n = phi.order_n();
    return SignalModel{n, Rank1Model{lambda_s1, std::move(phi)}};
  }
  static SignalModel ar1(std::size_t n, double coefficient, double variance = 1.0) {
    return SignalModel{n, Ar1Model{coefficient, variance}};
  }
  static SignalModel white(std::size_t n, double variance = 1.0) {
    return SignalModel{n, WhiteModel{variance}};
  }

  SignalKind kind() const noexcept {
    if (std::holds_alternative<Rank1Model>(params)) return SignalKind::Rank1Vector;
    if (std::holds_alternative<Ar1Model>(params)) return SignalKind::Ar1Stream;
    return SignalKind::WhiteStream;
  }

  SegmentLayout layout() const noexcept {
    return kind() == SignalKind::Rank1Vector ? SegmentLayout::Vectors : SegmentLayout::Stream;
  }

  /// Per-entry population power tr(R_s)/N.
  double power() const {
    if (const auto* r = std::get_if<Rank1Model>(&params)) {
      return r->lambda_s1 / static_cast<double>(order_n);
    }
    if (const auto* a = std::get_if<Ar1Model>(&params)) return a->variance;
    return std::get<WhiteModel>(params).variance;
  }

  CovarianceEstimate population_covariance() const {
    if (const auto* r = std::get_if<Rank1Model>(&params)) {
      Matrix m(order_n, order_n);
      for (std::size_t i = 0; i < order_n; ++i) {
        for (std::size_t j = 0; j < order_n; ++j) m(i, j) = r->lambda_s1 * r->phi[i] * r->phi[j];
      }
      return CovarianceEstimate(std::move(m));
    }
    if (const auto* a = std::get_if<Ar1Model>(&params)) {
      return ar1_population_covariance(*a, order_n);
    }
    Matrix m = Matrix::identity(order_n);
    m *= std::get<WhiteModel>(params).variance;
    return CovarianceEstimate(std::move(m));
  }

  /// Noise-free samples: Ns vectors, or a stream of Ns + N − 1 samples.
  std::vector<double> generate_stream(std::size_t length, std::uint64_t seed) const {
    if (const auto* a = std::get_if<Ar1Model>(&params)) return gen_ar1_stream(*a, length, seed);
    return gen_white_stream(std::get<WhiteModel>(params), length, seed);
  }
};

/// Noise-only segment in the given layout.
inline SensingSegment gen_h0_segment(SegmentLayout layout, std::size_t n, std::size_t ns,
                                     double sigma2, std::uint64_t seed) {
  if (layout == SegmentLayout::Vectors) return gen_noise_segment(n, ns, sigma2, seed);
  const auto stream = gen_white_stream(WhiteModel{sigma2}, ns + n - 1, seed);
  return build_sensing_vectors(stream, n, ns);
}

/// Signal gain that puts a source of per-entry population power
/// `signal_power` at the requested SNR, with SNR = tr(R_s) / (N σ²).
inline double snr_gain(double signal_power, const SnrSpec& snr) {
  if (!(snr.sigma2 > 0.0)) throw InvariantError("noise variance must be positive");
  if (!(signal_power > 0.0) || !std::isfinite(signal_power)) {
    throw InvariantError("signal power must be declared and positive to mix at an SNR");
  }
  return std::sqrt(std::pow(10.0, snr.snr_db / 10.0) * snr.sigma2 / signal_power);
}

/// g·signal + noise, noise ~ N(0, σ²) per entry drawn from `seed` exactly as
/// gen_noise_segment would. `signal_power` is the per-entry population power
/// tr(R_s)/N of the source (λ/N for rank-1, the process variance for streams).
inline SensingSegment mix_at_snr(const SensingSegment& signal, double signal_power,
                                 const SnrSpec& snr, std::uint64_t seed) {
  const double gain = snr_gain(signal_power, snr);
  check_variance(snr.sigma2, "noise variance");
  Matrix m(signal.count_ns(), signal.order_n());
  add_gaussian_noise(m.data(), snr.sigma2, seed);
  auto out = m.data();
  auto in = signal.vectors().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += gain * in[i];
  return SensingSegment(signal.order_n(), signal.count_ns(), std::move(m));
}

/// Stream counterpart of mix_at_snr.
inline std::vector<double> mix_stream_at_snr(std::span<const double> signal, double signal_power,
                                             const SnrSpec& snr, std::uint64_t seed) {
  const double gain = snr_gain(signal_power, snr);
  std::vector<double> out = gen_white_stream(WhiteModel{snr.sigma2}, signal.size(), seed);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += gain * signal[i];
  return out;
}

/// Clean signal at unit gain, laid out as the model's sensing vectors.
inline SensingSegment gen_signal_segment(const SignalModel& model, std::size_t ns, std::uint64_t seed) {
  if (const auto* r = std::get_if<Rank1Model>(&model.params)) return gen_rank1_segment(*r, ns, seed);
  return build_sensing_vectors(model.generate_stream(ns + model.order_n - 1, seed), model.order_n, ns);
}

/// Signal plus noise at `snr`. The noise drawn from `noise_seed` is the
/// same noise gen_h0_segment draws from that seed.
inline SensingSegment gen_h1_segment(const SignalModel& model, std::size_t ns, const SnrSpec& snr,
                                     std::uint64_t signal_seed, std::uint64_t noise_seed) {
  const std::size_t n = model.order_n;
  if (const auto* r = std::get_if<Rank1Model>(&model.params)) {
    return mix_at_snr(gen_rank1_segment(*r, ns, signal_seed), model.power(), snr, noise_seed);
  }
  const auto clean = model.generate_stream(ns + n - 1, signal_seed);
  const auto noisy = mix_stream_at_snr(clean, model.power(), snr, noise_seed);
  return build_sensing_vectors(noisy, n, ns);
}

// ---------------------------------------------------------------------------
// Raw sample files

enum class SampleFormat { F64Le, F32Le, DecimalText };

inline std::string_view format_name(SampleFormat f) noexcept {
  switch (f) {
    case SampleFormat::F64Le: return "f64le-raw";
    case SampleFormat::F32Le: return "f32le-raw";
    case SampleFormat::DecimalText: return "decimal-text";
  }
  return "?";
}

inline SampleFormat parse_format(std::string_view name) {
  if (name == "f64le-raw" || name == "f64") return SampleFormat::F64Le;
  if (name == "f32le-raw" || name == "f32") return SampleFormat::F32Le;
  if (name == "decimal-text" || name == "text") return SampleFormat::DecimalText;
  throw ParseError("unknown sample format '" + std::string(name) + "'");
}

namespace detail {

template <typename U>
U byteswap(U v) noexcept {
  U out = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out = static_cast<U>((out << 8) | (v & 0xFF));
    v >>= 8;
  }
  return out;
}

template <typename T, typename U>
T load_le(const unsigned char* p) noexcept {
  U bits;
  std::memcpy(&bits, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) bits = byteswap(bits);
  return std::bit_cast<T>(bits);
}

template <typename T, typename U>
void store_le(T value, unsigned char* p) noexcept {
  U bits = std::bit_cast<U>(value);
  if constexpr (std::endian::native == std::endian::big) bits = byteswap(bits);
  std::memcpy(p, &bits, sizeof(U));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open sample file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("failed reading sample file: " + path);
  return buf.str();
}

inline std::vector<double> parse_decimal_text(std::string text) {
  // Accept the typographic minus sign (U+2212) as '-'.
  for (std::size_t pos; (pos = text.find("\xE2\x88\x92")) != std::string::npos;) {
    text.replace(pos, 3, "-");
  }
  std::vector<double> out;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    while (p < end && (std::isspace(static_cast<unsigned char>(*p)) || *p == ',')) ++p;
    if (p == end) break;
    double v = 0.0;
    const char* start = (*p == '+') ? p + 1 : p;
    auto [next, ec] = std::from_chars(start, end, v);
    if (ec != std::errc()) {
      throw ParseError("malformed number at byte " + std::to_string(p - text.data()));
    }
    out.push_back(v);
    p = next;
  }
  return out;
}

}  // namespace detail

/// Reads a sample stream; rejects empty files and non-finite samples.
inline std::vector<double> load_stream(const std::string& path, SampleFormat format) {
  const std::string bytes = detail::read_file(path);
  std::vector<double> out;
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  switch (format) {
    case SampleFormat::F64Le:
      if (bytes.size() % 8 != 0) throw ParseError("f64le-raw file size is not a multiple of 8");
      out.reserve(bytes.size() / 8);
      for (std::size_t i = 0; i < bytes.size(); i += 8) {
        out.push_back(detail::load_le<double, std::uint64_t>(raw + i));
      }
      break;
    case SampleFormat::F32Le:
      if (bytes.size() % 4 != 0) throw ParseError("f32le-raw file size is not a multiple of 4");
      out.reserve(bytes.size() / 4);
      for (std::size_t i = 0; i < bytes.size(); i += 4) {
        out.push_back(detail::load_le<float, std::uint32_t>(raw + i));
      }
      break;
    case SampleFormat::DecimalText:
      out = detail::parse_decimal_text(bytes);
      break;
  }
  if (out.empty()) throw ParseError("sample file is empty: " + path);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) {
      throw InvariantError("sample " + std::to_string(i) + " is not finite");
    }
  }
  return out;
}

inline void save_stream(const std::string& path, std::span<const double> samples,
                        SampleFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open sample file for writing: " + path);
  switch (format) {
    case SampleFormat::F64Le: {
      std::vector<unsigned char> buf(samples.size() * 8);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        detail::store_le<double, std::uint64_t>(samples[i], buf.data() + 8 * i);
      }
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
      break;
    }
    case SampleFormat::F32Le: {
      std::vector<unsigned char> buf(samples.size() * 4);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        detail::store_le<float, std::uint32_t>(static_cast<float>(samples[i]), buf.data() + 4 * i);
      }
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
      break;
    }
    case SampleFormat::DecimalText: {
      char num[32];
      for (double v : samples) {
        auto [end, ec] = std::to_chars(num, num + sizeof(num), v);
        out.write(num, end - num);
        out.put('\n');
      }
      break;
    }
  }
  if (!out) throw IoError("failed writing sample file: " + path);
}

}  // namespace specsense
