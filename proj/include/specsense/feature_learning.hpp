#pragma once

// Blind feature learning: the leading eigenvector of consecutive sensing
// segments is compared by lag-aligned template matching, and a stable
// eigenvector is kept as the learned signal feature.

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specsense/error.hpp"
#include "specsense/linalg.hpp"

namespace specsense {

/// Lag-aligned similarity in [0, 1] (up to round-off) for unit-norm inputs.
struct SimilarityScore {
  double value;
};

/// Maximum over circular lags l of |Σ_k a[k]·b[(k+l) mod N]|.
inline SimilarityScore feature_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("feature similarity needs equal lengths (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  }
  const std::size_t n = a.size();
  double best = 0.0;
  for (std::size_t lag = 0; lag < n; ++lag) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t m = k + lag < n ? k + lag : k + lag - n;
      s += a[k] * b[m];
    }
    best = std::max(best, std::abs(s));
  }
  return SimilarityScore{best};
}

// The circular correlation above is not exactly symmetric in floating
// point (the two argument orders sum in different sequences). Scores are
// therefore computed on a canonical ordering of the arguments.
inline SimilarityScore feature_similarity(const Feature& a, const Feature& b) {
  const bool swap = std::lexicographical_compare(b.values().begin(), b.values().end(),
                                                 a.values().begin(), a.values().end());
  return swap ? feature_similarity(b.span(), a.span()) : feature_similarity(a.span(), b.span());
}

struct LearnedFeature {
  Feature feature;
  double similarity_at_learning = 0.0;
  std::size_t segment_n = 0;
  std::size_t segment_ns = 0;
  std::string provenance;
  std::string created_at;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Default learning threshold T_e.
inline constexpr double kDefaultLearningThreshold = 0.8;

/// Leading eigenvector of a segment's sample covariance.
inline Feature extract_feature(const SensingSegment& segment) {
  const SpectralDecomposition spec = eigendecompose(sample_covariance(segment));
  const auto v = spec.eigenvector(0);
  return Feature(std::vector<double>(v.begin(), v.end()));
}

/// Similarities of each consecutive pair of segment features.
inline std::vector<double> consecutive_similarities(std::span<const Feature> features) {
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < features.size(); ++i) {
    out.push_back(feature_similarity(features[i], features[i + 1]).value);
  }
  return out;
}

/// Scans consecutive segment pairs in order; the first pair whose
/// similarity exceeds `threshold_te` yields the later segment's feature.
inline std::optional<LearnedFeature> fla_learn(std::span<const SensingSegment> segments,
                                               double threshold_te = kDefaultLearningThreshold,
                                               std::string provenance = {}) {
  if (segments.size() < 2) throw InvariantError("feature learning needs at least two segments");
  if (!(threshold_te > 0.0 && threshold_te < 1.0)) {
    throw InvariantError("learning threshold must lie in (0, 1)");
  }
  const std::size_t n = segments.front().order_n();
  const std::size_t ns = segments.front().count_ns();
  for (const auto& s : segments) {
    if (s.order_n() != n || s.count_ns() != ns) {
      throw DimensionError("all learning segments must share (N, Ns)");
    }
  }
  Feature previous = extract_feature(segments[0]);
  for (std::size_t i = 1; i < segments.size(); ++i) {
    Feature current = extract_feature(segments[i]);
    const double rho = feature_similarity(previous, current).value;
    if (rho > threshold_te) {
      return LearnedFeature{std::move(current), rho, n, ns, std::move(provenance), utc_timestamp()};
    }
    previous = std::move(current);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Feature files: a JSON document
//   {version, n, values[], similarity, provenance, created_at, segment_n, segment_ns}
// Doubles are written in shortest round-trip form, so load(save(f)) is exact.

inline constexpr int kFeatureFileVersion = 1;

inline std::string feature_to_json(const LearnedFeature& f) {
  nlohmann::ordered_json j;
  j["version"] = kFeatureFileVersion;
  j["n"] = f.feature.order_n();
  j["values"] = f.feature.values();
  j["similarity"] = f.similarity_at_learning;
  j["provenance"] = f.provenance;
  j["created_at"] = f.created_at;
  j["segment_n"] = f.segment_n;
  j["segment_ns"] = f.segment_ns;
  return j.dump(2) + "\n";
}

namespace detail {

inline const std::vector<std::string>& feature_fields() {
  static const std::vector<std::string> fields = {"version",    "n",          "values",
                                                  "similarity", "provenance", "created_at",
                                                  "segment_n",  "segment_ns"};
  return fields;
}

inline std::string first_missing_key(const std::string& text) {
  for (const auto& key : feature_fields()) {
    const std::regex pattern("\"" + key + "\"\\s*:\\s*[^\\s]");
    if (!std::regex_search(text, pattern)) return key;
  }
  return {};
}

}  // namespace detail

inline LearnedFeature feature_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::string missing = detail::first_missing_key(text);
    if (!missing.empty()) {
      throw ParseError("feature file is truncated: missing field '" + missing + "'");
    }
    throw ParseError(std::string("feature file is malformed: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("feature file must be a JSON object");
  for (const auto& key : detail::feature_fields()) {
    if (!j.contains(key)) throw ParseError("feature file is missing field '" + key + "'");
  }
  try {
    if (j["version"].get<int>() != kFeatureFileVersion) {
      throw ParseError("unsupported feature file version " + j["version"].dump());
    }
    const auto n = j["n"].get<std::size_t>();
    auto values = j["values"].get<std::vector<double>>();
    if (values.size() != n) {
      throw ParseError("feature file declares n=" + std::to_string(n) + " but holds " +
                       std::to_string(values.size()) + " values");
    }
    return LearnedFeature{Feature(std::move(values)), j["similarity"].get<double>(),
                          j["segment_n"].get<std::size_t>(), j["segment_ns"].get<std::size_t>(),
                          j["provenance"].get<std::string>(), j["created_at"].get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("feature file has a field of the wrong type: ") + e.what());
  }
}

inline void save_feature(const LearnedFeature& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open feature file for writing: " + path);
  out << feature_to_json(f);
  if (!out) throw IoError("failed writing feature file: " + path);
}

inline LearnedFeature load_feature(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return feature_from_json(buf.str());
}

}  // namespace specsense
