// specsense: generate sample streams, learn features, run detectors,
// calibrate thresholds and sweep detection curves.
//
// Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or
// validation error.

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "specsense/detectors.hpp"
#include "specsense/feature_learning.hpp"
#include "specsense/harness.hpp"
#include "specsense/linalg.hpp"
#include "specsense/signal_lab.hpp"
#include "svg_plot.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace specsense;

namespace {

constexpr const char* kVersion = "0.1.0";

/// Usage or validation problem detected by the front end itself.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Ran to completion but the requested result does not exist.
struct NotFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Small helpers

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

std::string crc32_hex(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

double parse_real(const std::string& s, const std::string& what) {
  std::string lower;
  for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "inf" || lower == "+inf" || lower == "infinity") return INFINITY;
  if (lower == "-inf" || lower == "-infinity") return -INFINITY;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw UsageError(what + ": '" + s + "' is not a number");
  }
  if (used != s.size() || std::isnan(v)) throw UsageError(what + ": '" + s + "' is not a number");
  return v;
}

std::vector<DetectorKind> parse_detector_list(const std::string& s) {
  std::vector<DetectorKind> out;
  for (const auto& name : split_list(s)) {
    if (name == "all") {
      out.insert(out.end(), kAllDetectors.begin(), kAllDetectors.end());
      continue;
    }
    const auto d = parse_detector(name);
    if (!d) throw UsageError("unknown detector '" + name + "'");
    out.push_back(*d);
  }
  if (out.empty()) throw UsageError("no detector given");
  return out;
}

/// Resolved master seed: the given one, or a fresh one that is announced so
/// the run can be repeated.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed) {
  if (seed) return *seed;
  std::random_device rd;
  const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::cerr << "seed=" << s << "\n";
  return s;
}

unsigned resolve_jobs(unsigned jobs) { return jobs == 0 ? default_jobs() : jobs; }

/// Leading eigenvector of the AR(1) a=0.9 population covariance; the default
/// rank-1 source shape.
Feature default_rank1_feature(std::size_t n) {
  const auto spec = eigendecompose(ar1_population_covariance(Ar1Model{0.9, 1.0}, n));
  const auto v = spec.eigenvector(0);
  return Feature(std::vector<double>(v.begin(), v.end()));
}

// ---------------------------------------------------------------------------
// Sample files and sidecars

std::string sidecar_path(const std::string& data_path) { return data_path + ".json"; }

std::optional<json> read_sidecar(const std::string& data_path) {
  const std::string p = sidecar_path(data_path);
  if (!fs::exists(p)) return std::nullopt;
  try {
    return json::parse(read_text(p));
  } catch (const json::exception&) {
    std::cerr << "warning: ignoring unreadable sidecar " << p << "\n";
    return std::nullopt;
  }
}

SampleFormat format_from_extension(const std::string& path) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".f32") return SampleFormat::F32Le;
  if (ext == ".txt" || ext == ".csv" || ext == ".dat") return SampleFormat::DecimalText;
  return SampleFormat::F64Le;
}

SampleFormat resolve_format(const std::string& flag, const std::string& path,
                            const std::optional<json>& sidecar) {
  if (!flag.empty()) return parse_format(flag);
  if (sidecar && sidecar->contains("format")) return parse_format((*sidecar)["format"].get<std::string>());
  return format_from_extension(path);
}

SegmentLayout resolve_layout(const std::string& flag, const std::optional<json>& sidecar) {
  std::string name = flag;
  if (name.empty() && sidecar && sidecar->contains("layout")) name = (*sidecar)["layout"];
  if (name.empty() || name == "stream") return SegmentLayout::Stream;
  if (name == "vectors") return SegmentLayout::Vectors;
  throw UsageError("layout must be 'stream' or 'vectors', got '" + name + "'");
}

std::string layout_name(SegmentLayout l) { return l == SegmentLayout::Vectors ? "vectors" : "stream"; }

std::size_t samples_per_segment(SegmentLayout layout, std::size_t n, std::size_t ns) {
  return layout == SegmentLayout::Vectors ? n * ns : ns + n - 1;
}

/// Segment `index` of a sample stream: stride-1 windows over Ns+N−1
/// samples, or Ns back-to-back vectors of N samples.
SensingSegment segment_at(std::span<const double> samples, SegmentLayout layout, std::size_t n,
                          std::size_t ns, std::size_t offset) {
  const std::size_t need = samples_per_segment(layout, n, ns);
  if (offset > samples.size() || samples.size() - offset < need) {
    throw LengthError("input holds " + std::to_string(samples.size()) + " samples; segment needs " +
                          std::to_string(offset + need),
                      offset + need);
  }
  const auto part = samples.subspan(offset, need);
  if (layout == SegmentLayout::Stream) return build_sensing_vectors(part, n, ns);
  Matrix m(ns, n, std::vector<double>(part.begin(), part.end()));
  return SensingSegment(n, ns, std::move(m));
}

// ---------------------------------------------------------------------------
// Priors from flags

struct PriorFlags {
  std::string feature;     // feature file
  std::string sigma2;      // noise variance
  std::string lambda;      // leading signal eigenvalue
  std::string signal_cov;  // decimal text, N×N row-major
};

std::string flag_for(PriorField f) {
  switch (f) {
    case PriorField::LambdaS1: return "--lambda";
    case PriorField::Sigma2: return "--sigma2";
    case PriorField::PhiS1: return "--feature";
    case PriorField::SignalCov: return "--signal-cov (or --lambda with --feature)";
  }
  return "?";
}

PriorKnowledge build_priors(const PriorFlags& f, std::size_t n) {
  PriorKnowledge p;
  if (!f.feature.empty()) {
    LearnedFeature lf = load_feature(f.feature);
    if (lf.feature.order_n() != n) {
      throw UsageError("feature file has N=" + std::to_string(lf.feature.order_n()) +
                       " but --n is " + std::to_string(n));
    }
    p.phi_s1 = lf.feature;
  }
  if (!f.sigma2.empty()) {
    const double s = parse_real(f.sigma2, "--sigma2");
    if (!(s > 0.0) || !std::isfinite(s)) throw UsageError("--sigma2 must be positive");
    p.sigma2 = s;
  }
  if (!f.lambda.empty()) {
    const double l = parse_real(f.lambda, "--lambda");
    if (!(l >= 0.0) || !std::isfinite(l)) throw UsageError("--lambda must be nonnegative");
    p.lambda_s1 = l;
  }
  if (!f.signal_cov.empty()) {
    const auto v = load_stream(f.signal_cov, SampleFormat::DecimalText);
    if (v.size() != n * n) {
      throw UsageError("--signal-cov needs " + std::to_string(n * n) + " entries, found " +
                       std::to_string(v.size()));
    }
    p.r_s.emplace(CovarianceEstimate(Matrix(n, n, v)));
  } else if (p.lambda_s1 && p.phi_s1) {
    p.r_s.emplace(SignalCovariance::rank1(*p.lambda_s1, *p.phi_s1));
  }
  return p;
}

void check_priors(DetectorKind d, const PriorKnowledge& p) {
  std::string missing;
  for (PriorField f : required_priors(d)) {
    if (has_prior(p, f)) continue;
    if (!missing.empty()) missing += ", ";
    missing += std::string(prior_field_name(f)) + " (" + flag_for(f) + ")";
  }
  if (!missing.empty()) {
    throw MissingPriorError("detector " + std::string(detector_name(d)) +
                            " is missing prior knowledge: " + missing);
  }
}

json calibration_json(const CalibrationResult& c) {
  json j;
  j["detector"] = std::string(detector_name(c.detector));
  if (c.snr_db) j["snr_db"] = *c.snr_db;
  j["threshold"] = c.threshold;
  j["target_pf"] = c.target_pf;
  j["trials"] = c.trials;
  j["validation_trials"] = c.validation_trials;
  j["empirical_pf"] = c.empirical_pf;
  j["master_seed"] = c.master_seed;
  j["below_recommended_trials"] = c.below_recommended_trials;
  return j;
}

// ---------------------------------------------------------------------------
// Sweep configuration <-> manifest

json model_json(const SignalModel& m) {
  json j;
  j["n"] = m.order_n;
  if (const auto* r = std::get_if<Rank1Model>(&m.params)) {
    j["kind"] = "rank1";
    j["lambda_s1"] = r->lambda_s1;
    j["phi"] = r->phi.values();
  } else if (const auto* a = std::get_if<Ar1Model>(&m.params)) {
    j["kind"] = "ar1";
    j["coefficient"] = a->coefficient;
    j["variance"] = a->variance;
  } else {
    j["kind"] = "white";
    j["variance"] = std::get<WhiteModel>(m.params).variance;
  }
  return j;
}

SignalModel model_from_json(const json& j) {
  const std::string kind = j.at("kind");
  const std::size_t n = j.at("n");
  if (kind == "rank1") {
    return SignalModel::rank1(j.at("lambda_s1"), Feature(j.at("phi").get<std::vector<double>>()));
  }
  if (kind == "ar1") return SignalModel::ar1(n, j.at("coefficient"), j.at("variance"));
  if (kind == "white") return SignalModel::white(n, j.at("variance"));
  throw ParseError("unknown model kind '" + kind + "'");
}

json sweep_config_json(const SweepConfig& c) {
  json j;
  json dets = json::array();
  for (DetectorKind d : c.detectors) dets.push_back(std::string(detector_name(d)));
  j["detectors"] = dets;
  j["model"] = model_json(c.model);
  j["n"] = c.model.order_n;
  j["ns"] = c.count_ns;
  j["sigma2"] = c.sigma2;
  j["snr_grid_db"] = c.snr_grid;
  j["target_pf"] = c.target_pf;
  j["trials_per_point"] = c.trials_per_point;
  j["calibration_trials"] = c.calibration_trials;
  j["noise_uncertainty"] = c.noise_uncertainty;
  j["prior_feature"] = c.feature ? json(c.feature->values()) : json(nullptr);
  j["feature_source"] = c.feature_source;
  j["master_seed"] = c.master_seed;
  return j;
}

SweepConfig sweep_config_from_json(const json& j) {
  SweepConfig c;
  for (const auto& name : j.at("detectors")) {
    const auto d = parse_detector(name.get<std::string>());
    if (!d) throw ParseError("manifest names unknown detector " + name.dump());
    c.detectors.push_back(*d);
  }
  c.model = model_from_json(j.at("model"));
  c.count_ns = j.at("ns");
  c.sigma2 = j.at("sigma2");
  c.snr_grid = j.at("snr_grid_db").get<std::vector<double>>();
  c.target_pf = j.at("target_pf");
  c.trials_per_point = j.at("trials_per_point");
  c.calibration_trials = j.at("calibration_trials");
  c.noise_uncertainty = j.at("noise_uncertainty");
  if (!j.at("prior_feature").is_null()) {
    c.feature = Feature(j.at("prior_feature").get<std::vector<double>>());
  }
  c.feature_source = j.at("feature_source");
  c.master_seed = j.at("master_seed");
  return c;
}

std::string sweep_plot(const SweepResult& r, const SweepConfig& cfg) {
  std::vector<plot::Series> series;
  for (const auto& row : r.rows) {
    auto it = std::find_if(series.begin(), series.end(),
                           [&](const plot::Series& s) { return s.label == row.detector; });
    if (it == series.end()) {
      series.push_back({row.detector, {}});
      it = series.end() - 1;
    }
    it->points.emplace_back(row.snr_db, row.pd);
  }
  plot::ChartOptions opt;
  opt.title = "Pd vs SNR (N=" + std::to_string(cfg.model.order_n) +
              ", Ns=" + std::to_string(cfg.count_ns) + ", Pf=" + format_double(cfg.target_pf) + ")";
  opt.x_label = "SNR (dB)";
  opt.y_label = "probability of detection";
  return plot::line_chart(series, opt);
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenArgs {
  std::string model = "ar1";
  double a = 0.9;
  double var = 1.0;
  std::size_t len = 0;
  std::size_t n = 32;
  std::size_t ns = 100000;
  double lambda = 0.0;
  std::string feature;
  std::optional<double> snr;
  double sigma2 = 1.0;
  std::string format;
  std::string out;
  std::string description;
};

int cmd_gen(const GenArgs& g, std::uint64_t seed) {
  std::vector<double> samples;
  json meta;
  SegmentLayout layout = SegmentLayout::Stream;
  const std::uint64_t signal_seed = seed;
  const std::uint64_t noise_seed = mix64(seed, 1);
  if (g.snr && !(g.sigma2 > 0.0)) throw UsageError("--sigma2 must be positive");
  if (g.model == "ar1" || g.model == "white") {
    if (g.len == 0) throw UsageError("--len is required for stream models");
    const SignalModel m = g.model == "ar1" ? SignalModel::ar1(1, g.a, g.var) : SignalModel::white(1, g.var);
    if (const auto* a = std::get_if<Ar1Model>(&m.params); a && !(std::abs(a->coefficient) < 1.0)) {
      throw UsageError("--a must satisfy |a| < 1");
    }
    if (!(g.var >= 0.0)) throw UsageError("--var must be nonnegative");
    samples = m.generate_stream(g.len, signal_seed);
    if (g.snr) samples = mix_stream_at_snr(samples, m.power(), SnrSpec{*g.snr, g.sigma2}, noise_seed);
    meta["model"] = g.model;
    if (g.model == "ar1") meta["coefficient"] = g.a;
    meta["variance"] = g.var;
  } else if (g.model == "rank1") {
    if (g.n < 2 || g.ns < 1) throw UsageError("--n must be >= 2 and --ns >= 1");
    if (!(g.lambda >= 0.0)) throw UsageError("--lambda must be nonnegative");
    Feature phi = g.feature.empty() ? default_rank1_feature(g.n) : load_feature(g.feature).feature;
    if (phi.order_n() != g.n) throw UsageError("feature order does not match --n");
    double lambda = g.lambda;
    if (lambda == 0.0 && g.snr) lambda = static_cast<double>(g.n);  // shape only; SNR sets the gain
    const Rank1Model model{lambda, phi};
    SensingSegment seg = gen_rank1_segment(model, g.ns, signal_seed);
    if (g.snr) {
      seg = mix_at_snr(seg, lambda / static_cast<double>(g.n), SnrSpec{*g.snr, g.sigma2}, noise_seed);
    }
    const auto d = seg.vectors().data();
    samples.assign(d.begin(), d.end());
    layout = SegmentLayout::Vectors;
    meta["model"] = "rank1";
    meta["lambda_s1"] = lambda;
    meta["phi"] = phi.values();
    meta["n"] = g.n;
    meta["ns"] = g.ns;
  } else {
    throw UsageError("--model must be ar1, white or rank1");
  }
  if (g.snr) {
    meta["snr_db"] = *g.snr;
    meta["sigma2"] = g.sigma2;
  }
  meta["seed"] = seed;

  const SampleFormat fmt = g.format.empty() ? format_from_extension(g.out) : parse_format(g.format);
  save_stream(g.out, samples, fmt);

  json side;
  side["format"] = std::string(format_name(fmt));
  side["sample_count"] = samples.size();
  side["description"] = g.description.empty() ? g.model + " samples from specsense gen" : g.description;
  side["layout"] = layout_name(layout);
  if (layout == SegmentLayout::Vectors) {
    side["n"] = g.n;
    side["ns"] = g.ns;
  }
  side["generator"] = meta;
  write_text(sidecar_path(g.out), side.dump(2) + "\n");
  std::cout << "wrote " << samples.size() << " samples to " << g.out << " (" << format_name(fmt)
            << ", seed " << seed << ")\n";
  return 0;
}

struct LearnArgs {
  std::string in;
  std::string format;
  std::string layout;
  std::size_t n = 32;
  std::size_t ns = 10000;
  double te = kDefaultLearningThreshold;
  std::size_t max_segments = 0;
  std::string out;
  std::string provenance;
};

int cmd_learn(const LearnArgs& a) {
  if (!(a.te > 0.0 && a.te < 1.0)) throw UsageError("--te must lie in (0, 1)");
  if (a.n < 2 || a.ns < 1) throw UsageError("--n must be >= 2 and --ns >= 1");
  const auto side = read_sidecar(a.in);
  const auto samples = load_stream(a.in, resolve_format(a.format, a.in, side));
  const SegmentLayout layout = resolve_layout(a.layout, side);
  const std::size_t per = samples_per_segment(layout, a.n, a.ns);
  std::size_t count = samples.size() / per;
  if (a.max_segments > 0) count = std::min(count, a.max_segments);
  if (count < 2) {
    throw UsageError("input holds " + std::to_string(samples.size()) + " samples; two segments of (N=" +
                     std::to_string(a.n) + ", Ns=" + std::to_string(a.ns) + ") need " +
                     std::to_string(2 * per));
  }
  std::vector<SensingSegment> segments;
  segments.reserve(count);
  for (std::size_t k = 0; k < count; ++k) segments.push_back(segment_at(samples, layout, a.n, a.ns, k * per));
  const std::string provenance = a.provenance.empty() ? "learned from " + a.in : a.provenance;
  const auto learned = fla_learn(segments, a.te, provenance);
  if (!learned) {
    throw NotFound("feature not learned: no consecutive pair of " + std::to_string(count) +
                   " segments exceeded similarity " + format_double(a.te));
  }
  save_feature(*learned, a.out);
  std::cout << "learned feature N=" << a.n << " similarity=" << format_double(learned->similarity_at_learning)
            << " -> " << a.out << "\n";
  return 0;
}

struct SenseArgs {
  std::string detector;
  std::string in;
  std::string format;
  std::string layout;
  std::size_t n = 32;
  std::size_t ns = 100000;
  std::size_t offset = 0;
  std::string threshold;
  bool calibrate = false;
  double pf = 0.1;
  std::size_t trials = 1000;
  PriorFlags priors;
};

int cmd_sense(const SenseArgs& a, const std::optional<std::uint64_t>& seed_flag, unsigned jobs) {
  const auto kind = parse_detector(a.detector);
  if (!kind) throw UsageError("unknown detector '" + a.detector + "'");
  if (a.n < 2 || a.ns < 1) throw UsageError("--n must be >= 2 and --ns >= 1");
  if (a.threshold.empty() == !a.calibrate) {
    throw UsageError("give exactly one of --threshold or --calibrate");
  }
  const PriorKnowledge prior = build_priors(a.priors, a.n);
  check_priors(*kind, prior);

  const auto side = read_sidecar(a.in);
  const auto samples = load_stream(a.in, resolve_format(a.format, a.in, side));
  const SegmentLayout layout = resolve_layout(a.layout, side);
  const Observation obs(sample_covariance(segment_at(samples, layout, a.n, a.ns, a.offset)));

  double threshold = 0.0;
  std::string extra;
  if (a.calibrate) {
    const std::uint64_t seed = resolve_seed(seed_flag);
    const NoiseModel noise{a.n, a.ns, prior.sigma2.value_or(1.0), layout};
    const auto c = calibrate_threshold(DetectorSpec{*kind, prior}, noise, a.pf, a.trials, seed, jobs);
    threshold = c.threshold;
    extra = " calibrated_pf=" + format_double(c.empirical_pf) + " trials=" + std::to_string(c.trials) +
            " seed=" + std::to_string(seed);
  } else {
    threshold = parse_real(a.threshold, "--threshold");
  }
  const Statistic s = evaluate(*kind, obs, prior);
  std::cout << "detector=" << detector_name(*kind) << " statistic=" << format_double(s.value)
            << " threshold=" << format_double(threshold)
            << " decision=" << decision_name(decide(s, threshold)) << extra << "\n";
  return 0;
}

struct CalibrateArgs {
  std::string detectors = "all";
  std::size_t n = 32;
  std::size_t ns = 100000;
  double pf = 0.1;
  std::size_t trials = 1000;
  std::optional<std::size_t> validation_trials;
  std::string layout;
  std::string out;
  PriorFlags priors;
};

int cmd_calibrate(CalibrateArgs a, const std::optional<std::uint64_t>& seed_flag, unsigned jobs) {
  if (!(a.pf > 0.0 && a.pf < 1.0)) throw UsageError("--pf must lie in (0, 1)");
  if (a.n < 2 || a.ns < 1 || a.trials < 1) throw UsageError("--n >= 2, --ns >= 1 and --trials >= 1 required");
  const auto dets = parse_detector_list(a.detectors);
  if (a.priors.sigma2.empty()) a.priors.sigma2 = "1";  // the noise model's own variance
  const PriorKnowledge prior = build_priors(a.priors, a.n);
  for (DetectorKind d : dets) check_priors(d, prior);
  const std::uint64_t seed = resolve_seed(seed_flag);
  const NoiseModel noise{a.n, a.ns, *prior.sigma2, resolve_layout(a.layout, std::nullopt)};

  json results = json::array();
  for (DetectorKind d : dets) {
    const auto c = calibrate_threshold(DetectorSpec{d, prior}, noise, a.pf, a.trials, seed, jobs,
                                       a.validation_trials);
    std::cout << "detector=" << detector_name(d) << " threshold=" << format_double(c.threshold)
              << " target_pf=" << format_double(c.target_pf)
              << " empirical_pf=" << format_double(c.empirical_pf) << " trials=" << c.trials
              << " validation_trials=" << c.validation_trials << "\n";
    if (c.below_recommended_trials) {
      std::cerr << "warning: " << c.trials << " trials is below the recommended 10/Pf\n";
    }
    results.push_back(calibration_json(c));
  }
  if (!a.out.empty()) {
    json doc;
    doc["tool"] = "specsense";
    doc["version"] = kVersion;
    doc["command"] = "calibrate";
    doc["n"] = a.n;
    doc["ns"] = a.ns;
    doc["sigma2"] = *prior.sigma2;
    doc["layout"] = layout_name(noise.layout);
    doc["master_seed"] = seed;
    doc["calibrations"] = results;
    doc["created_at"] = utc_timestamp();
    write_text(a.out, doc.dump(2) + "\n");
  }
  return 0;
}

struct SweepArgs {
  std::string detectors = "all";
  std::string model = "rank1";
  double a = 0.9;
  double var = 1.0;
  std::string signal_feature;
  std::string feature;
  std::size_t n = 32;
  std::size_t ns = 100000;
  double pf = 0.1;
  std::size_t trials = 1000;
  std::size_t cal_trials = 0;
  std::string snr;
  double snr_min = -36.0;
  double snr_max = -24.0;
  double snr_step = 1.0;
  double sigma2 = 1.0;
  double noise_uncertainty = 1.0;
  std::string out = "sweep.csv";
  std::string manifest;
  std::string plot;
  std::string from_manifest;
};

SweepConfig sweep_config_from_args(const SweepArgs& a, const std::optional<std::uint64_t>& seed) {
  SweepConfig c;
  c.detectors = parse_detector_list(a.detectors);
  if (a.n < 2 || a.ns < 1) throw UsageError("--n must be >= 2 and --ns >= 1");
  if (a.model == "rank1") {
    Feature phi = a.signal_feature.empty() ? default_rank1_feature(a.n)
                                           : load_feature(a.signal_feature).feature;
    if (phi.order_n() != a.n) throw UsageError("--signal-feature order does not match --n");
    c.model = SignalModel::rank1(static_cast<double>(a.n), std::move(phi));
  } else if (a.model == "ar1") {
    if (!(std::abs(a.a) < 1.0)) throw UsageError("--a must satisfy |a| < 1");
    c.model = SignalModel::ar1(a.n, a.a, a.var);
  } else if (a.model == "white") {
    c.model = SignalModel::white(a.n, a.var);
  } else {
    throw UsageError("--model must be rank1, ar1 or white");
  }
  if (!(c.model.power() > 0.0)) throw UsageError("signal model must have positive power");
  c.count_ns = a.ns;
  c.sigma2 = a.sigma2;
  if (!(a.sigma2 > 0.0)) throw UsageError("--sigma2 must be positive");
  if (!a.snr.empty()) {
    for (const auto& s : split_list(a.snr)) c.snr_grid.push_back(parse_real(s, "--snr"));
  } else {
    if (!(a.snr_step > 0.0) || a.snr_max < a.snr_min) throw UsageError("bad SNR range");
    for (int k = 0;; ++k) {
      const double v = a.snr_min + a.snr_step * k;
      if (v > a.snr_max + 1e-9 * a.snr_step) break;
      c.snr_grid.push_back(v);
    }
  }
  for (double v : c.snr_grid) {
    if (!std::isfinite(v)) throw UsageError("SNR grid values must be finite");
  }
  if (!(a.pf > 0.0 && a.pf < 1.0)) throw UsageError("--pf must lie in (0, 1)");
  c.target_pf = a.pf;
  if (a.trials < 1) throw UsageError("--trials must be >= 1");
  c.trials_per_point = a.trials;
  c.calibration_trials = a.cal_trials == 0 ? a.trials : a.cal_trials;
  c.noise_uncertainty = a.noise_uncertainty;
  if (!a.feature.empty()) {
    LearnedFeature lf = load_feature(a.feature);
    if (lf.feature.order_n() != a.n) throw UsageError("--feature order does not match --n");
    c.feature = lf.feature;
    c.feature_source = "file:" + fs::path(a.feature).filename().string();
  } else {
    c.feature_source = "model";
  }
  c.master_seed = resolve_seed(seed);
  return c;
}

std::string default_manifest_path(const std::string& csv) {
  fs::path p(csv);
  p.replace_extension(".manifest.json");
  return p.string();
}

int cmd_sweep(const SweepArgs& a, const std::optional<std::uint64_t>& seed_flag, unsigned jobs) {
  SweepConfig cfg;
  if (!a.from_manifest.empty()) {
    const json m = json::parse(read_text(a.from_manifest));
    cfg = sweep_config_from_json(m.at("config"));
    if (seed_flag) cfg.master_seed = *seed_flag;
  } else {
    cfg = sweep_config_from_args(a, seed_flag);
  }

  const SweepResult r = snr_sweep(cfg, jobs);
  const std::string csv = export_rows(r);
  write_text(a.out, csv);

  json manifest;
  manifest["tool"] = "specsense";
  manifest["version"] = kVersion;
  manifest["command"] = "sweep";
  manifest["config"] = sweep_config_json(cfg);
  manifest["seed_derivation"] =
      "trial seed = mix64(mix64(master_seed, stream), trial); streams: calibration=1, "
      "validation=2, signal=3, noise=4";
  manifest["threshold_rule"] = "k-th order statistic of H0 statistics, k = ceil((1 - pf) * M)";
  json cals = json::array();
  for (const auto& c : r.calibrations) cals.push_back(calibration_json(c));
  manifest["calibrations"] = cals;
  json errs = json::object();
  for (const auto& [d, e] : r.errors) errs[d] = e;
  manifest["errors"] = errs;
  manifest["warnings"] = r.warnings;
  json artifacts;
  artifacts["csv"] = {{"file", fs::path(a.out).filename().string()},
                      {"bytes", csv.size()},
                      {"crc32", crc32_hex(csv)}};
  if (!a.plot.empty()) {
    const std::string svg = sweep_plot(r, cfg);
    write_text(a.plot, svg);
    artifacts["plot"] = {{"file", fs::path(a.plot).filename().string()},
                         {"bytes", svg.size()},
                         {"crc32", crc32_hex(svg)}};
  }
  manifest["artifacts"] = artifacts;
  manifest["created_at"] = utc_timestamp();
  const std::string manifest_path = a.manifest.empty() ? default_manifest_path(a.out) : a.manifest;
  write_text(manifest_path, manifest.dump(2) + "\n");

  for (const auto& [d, e] : r.errors) std::cerr << "error: detector " << d << ": " << e << "\n";
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << r.rows.size() << " rows to " << a.out << ", manifest " << manifest_path
            << "\n";
  return r.errors.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Config files: key=value lines become --key=value arguments placed before
// the command-line flags, which therefore take precedence.

std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::istringstream in(read_text(path));
  std::vector<std::string> extra;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (eq == std::string::npos) {
      if (!trim(line).empty()) throw UsageError("config line is not key=value: " + line);
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty() || key == "config") throw UsageError("bad config key in line: " + line);
    extra.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
  }
  // Insert after the subcommand name (the first argument).
  if (!args.empty()) args.insert(args.begin() + 1, extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"specsense: blind feature learning and covariance detectors for spectrum sensing"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::optional<std::uint64_t> seed;
  unsigned jobs = 0;
  std::string config;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "master seed (generated and printed when absent)");
    sub->add_option("--jobs", jobs, "worker threads (default: available cores)");
    sub->add_option("--config", config, "key=value file; flags override its entries");
  };

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a sample stream and its metadata sidecar");
  g->add_option("--model", gen.model, "ar1 | white | rank1")->capture_default_str();
  g->add_option("--a", gen.a, "AR(1) coefficient")->capture_default_str();
  g->add_option("--var", gen.var, "process variance")->capture_default_str();
  g->add_option("--len", gen.len, "stream length in samples (ar1, white)");
  g->add_option("--n", gen.n, "vector length (rank1)")->capture_default_str();
  g->add_option("--ns", gen.ns, "vector count (rank1)")->capture_default_str();
  g->add_option("--lambda", gen.lambda, "rank-1 signal power λ");
  g->add_option("--signal-feature", gen.feature, "feature file shaping the rank-1 source");
  g->add_option("--snr", gen.snr, "add white noise at this SNR (dB)");
  g->add_option("--sigma2", gen.sigma2, "noise variance used with --snr")->capture_default_str();
  g->add_option("--format", gen.format, "f64le-raw | f32le-raw | decimal-text (default from extension)");
  g->add_option("--description", gen.description, "free text stored in the sidecar");
  g->add_option("--out", gen.out, "output path")->required();
  common(g);

  LearnArgs learn;
  auto* l = app.add_subcommand("learn", "learn a signal feature from consecutive segments");
  l->add_option("--in", learn.in, "input sample file")->required()->check(CLI::ExistingFile);
  l->add_option("--format", learn.format, "sample format (default: sidecar, then extension)");
  l->add_option("--layout", learn.layout, "stream | vectors (default: sidecar, then stream)");
  l->add_option("--n", learn.n, "vector length N")->capture_default_str();
  l->add_option("--ns", learn.ns, "vectors per segment Ns")->capture_default_str();
  l->add_option("--te", learn.te, "similarity threshold T_e")->capture_default_str();
  l->add_option("--segments", learn.max_segments, "use at most this many segments (0 = all)");
  l->add_option("--provenance", learn.provenance, "label stored with the feature");
  l->add_option("--out", learn.out, "feature file to write")->required();
  common(l);

  SenseArgs sense;
  auto* s = app.add_subcommand("sense", "run one detector on one segment");
  s->add_option("--detector", sense.detector, "ec case1..case5 mme cav ftm agm")->required();
  s->add_option("--in", sense.in, "input sample file")->required()->check(CLI::ExistingFile);
  s->add_option("--format", sense.format, "sample format (default: sidecar, then extension)");
  s->add_option("--layout", sense.layout, "stream | vectors (default: sidecar, then stream)");
  s->add_option("--n", sense.n, "vector length N")->capture_default_str();
  s->add_option("--ns", sense.ns, "vectors per segment Ns")->capture_default_str();
  s->add_option("--offset", sense.offset, "first sample of the segment")->capture_default_str();
  s->add_option("--threshold", sense.threshold, "decision threshold (inf and -inf accepted)");
  s->add_flag("--calibrate", sense.calibrate, "calibrate the threshold on simulated noise");
  s->add_option("--pf", sense.pf, "target false-alarm rate for --calibrate")->capture_default_str();
  s->add_option("--trials", sense.trials, "calibration trials for --calibrate")->capture_default_str();
  s->add_option("--feature", sense.priors.feature, "feature file (φ prior)");
  s->add_option("--sigma2", sense.priors.sigma2, "noise variance prior");
  s->add_option("--lambda", sense.priors.lambda, "leading signal eigenvalue prior");
  s->add_option("--signal-cov", sense.priors.signal_cov, "signal covariance, N×N decimal text");
  common(s);

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "calibrate thresholds on noise-only trials");
  c->add_option("--detectors,--detector", cal.detectors, "comma-separated list or 'all'")->capture_default_str();
  c->add_option("--n", cal.n, "vector length N")->capture_default_str();
  c->add_option("--ns", cal.ns, "vectors per segment Ns")->capture_default_str();
  c->add_option("--pf", cal.pf, "target false-alarm rate")->capture_default_str();
  c->add_option("--trials", cal.trials, "calibration trials")->capture_default_str();
  c->add_option("--validation-trials", cal.validation_trials, "held-out trials (default: --trials)");
  c->add_option("--layout", cal.layout, "stream | vectors noise segments");
  c->add_option("--out", cal.out, "JSON file for the results");
  c->add_option("--feature", cal.priors.feature, "feature file (φ prior)");
  c->add_option("--sigma2", cal.priors.sigma2, "noise variance (default 1)");
  c->add_option("--lambda", cal.priors.lambda, "leading signal eigenvalue prior");
  c->add_option("--signal-cov", cal.priors.signal_cov, "signal covariance, N×N decimal text");
  common(c);

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "Pd-vs-SNR sweep with shared noise realizations");
  w->add_option("--detectors", sw.detectors, "comma-separated list or 'all'")->capture_default_str();
  w->add_option("--model", sw.model, "rank1 | ar1 | white")->capture_default_str();
  w->add_option("--a", sw.a, "AR(1) coefficient")->capture_default_str();
  w->add_option("--var", sw.var, "stream variance")->capture_default_str();
  w->add_option("--signal-feature", sw.signal_feature, "feature file shaping the rank-1 source");
  w->add_option("--feature", sw.feature, "feature file used as the φ prior");
  w->add_option("--n", sw.n, "vector length N")->capture_default_str();
  w->add_option("--ns", sw.ns, "vectors per segment Ns")->capture_default_str();
  w->add_option("--pf", sw.pf, "target false-alarm rate")->capture_default_str();
  w->add_option("--trials", sw.trials, "H1 trials per SNR point")->capture_default_str();
  w->add_option("--cal-trials", sw.cal_trials, "H0 calibration trials (default: --trials)");
  w->add_option("--snr", sw.snr, "comma-separated SNR grid in dB (overrides the range)");
  w->add_option("--snr-min", sw.snr_min, "grid start (dB)")->capture_default_str();
  w->add_option("--snr-max", sw.snr_max, "grid end (dB)")->capture_default_str();
  w->add_option("--snr-step", sw.snr_step, "grid step (dB)")->capture_default_str();
  w->add_option("--sigma2", sw.sigma2, "true noise variance")->capture_default_str();
  w->add_option("--noise-uncertainty", sw.noise_uncertainty,
                "assumed/true noise variance ratio for σ²-dependent thresholds")
      ->capture_default_str();
  w->add_option("--out", sw.out, "CSV output")->capture_default_str();
  w->add_option("--manifest", sw.manifest, "manifest path (default: <out>.manifest.json)");
  w->add_option("--plot", sw.plot, "also write an SVG chart here");
  w->add_option("--from-manifest", sw.from_manifest, "re-run the configuration of a manifest")
      ->check(CLI::ExistingFile);
  common(w);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes vectors back to front
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const unsigned j = resolve_jobs(jobs);
    if (g->parsed()) return cmd_gen(gen, resolve_seed(seed));
    if (l->parsed()) return cmd_learn(learn);
    if (s->parsed()) return cmd_sense(sense, seed, j);
    if (c->parsed()) return cmd_calibrate(cal, seed, j);
    if (w->parsed()) return cmd_sweep(sw, seed, j);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const MissingPriorError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NotFound& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const LengthError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvariantError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
