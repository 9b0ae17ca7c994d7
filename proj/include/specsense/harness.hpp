#pragma once

// Monte-Carlo threshold calibration and detection-probability sweeps.
//
// Every trial owns a seed derived from the master seed, so results do not
// depend on how many worker threads run the trials. Thresholds are the
// ceil((1 − Pf)·M)-th order statistic of M noise-only statistics, and
// decisions use a strict inequality.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "specsense/detectors.hpp"
#include "specsense/error.hpp"
#include "specsense/linalg.hpp"
#include "specsense/signal_lab.hpp"

namespace specsense {

// Independent seed streams under one master seed.
enum class SeedStream : std::uint64_t {
  Calibration = 1,
  Validation = 2,
  Signal = 3,
  Noise = 4,
};

inline std::uint64_t trial_seed(std::uint64_t master, SeedStream stream, std::uint64_t trial) {
  return mix64(mix64(master, static_cast<std::uint64_t>(stream)), trial);
}

inline unsigned default_jobs() noexcept {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs body(i) for i in [0, count) on up to `jobs` threads. The first
/// exception (by index) is rethrown after all workers finish.
template <typename Body>
void parallel_for(std::size_t count, unsigned jobs, Body&& body) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::size_t error_index = std::numeric_limits<std::size_t>::max();
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(jobs);
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Order-statistic calibration

/// k-th smallest sample with k = ceil((1 − pf)·M), 1-indexed. A relative
/// guard of 1e-9 keeps products such as 0.9·10 from rounding up a rank.
inline double threshold_from_samples(std::vector<double> samples, double target_pf) {
  if (samples.empty()) throw InvariantError("cannot calibrate on zero trials");
  if (!(target_pf > 0.0 && target_pf < 1.0)) throw InvariantError("target Pf must lie in (0, 1)");
  const double m = static_cast<double>(samples.size());
  const double rank = std::ceil((1.0 - target_pf) * m * (1.0 - 1e-12) - 1e-9);
  const auto k = static_cast<std::size_t>(std::clamp(rank, 1.0, m));
  std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   samples.end());
  return samples[k - 1];
}

/// Fraction of samples strictly above the threshold.
inline double exceedance(const std::vector<double>& samples, double threshold) {
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (double s : samples) hits += s > threshold ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

/// Noise-only segments of shape (N, Ns) with variance σ².
struct NoiseModel {
  std::size_t order_n = 32;
  std::size_t count_ns = 100000;
  double sigma2 = 1.0;
  SegmentLayout layout = SegmentLayout::Vectors;
};

struct DetectorSpec {
  DetectorKind detector;
  PriorKnowledge prior;
};

struct CalibrationResult {
  DetectorKind detector;
  double threshold = 0.0;
  double target_pf = 0.0;
  std::size_t trials = 0;
  double empirical_pf = 0.0;
  std::size_t validation_trials = 0;
  std::uint64_t master_seed = 0;
  bool below_recommended_trials = false;  // trials < 10 / target_pf
  std::optional<double> snr_db;           // set when the priors depend on the SNR point
};

inline Observation observe(const SensingSegment& segment) {
  return Observation(sample_covariance(segment));
}

/// Calibrates γ on `trials` noise-only segments and measures the false-alarm
/// rate on `validation_trials` fresh segments (defaults to `trials`).
inline CalibrationResult calibrate_threshold(const DetectorSpec& spec, const NoiseModel& noise,
                                             double target_pf, std::size_t trials,
                                             std::uint64_t master_seed,
                                             unsigned jobs = default_jobs(),
                                             std::optional<std::size_t> validation_trials = {}) {
  if (!(target_pf > 0.0 && target_pf < 1.0)) throw InvariantError("target Pf must lie in (0, 1)");
  if (trials == 0) throw InvariantError("calibration needs at least one trial");
  require_priors(spec.detector, spec.prior);
  const std::size_t held_out = validation_trials.value_or(trials);

  auto run = [&](SeedStream stream, std::size_t count) {
    std::vector<double> stats(count);
    parallel_for(count, jobs, [&](std::size_t t) {
      const auto seg = gen_h0_segment(noise.layout, noise.order_n, noise.count_ns, noise.sigma2,
                                      trial_seed(master_seed, stream, t));
      stats[t] = evaluate(spec.detector, observe(seg), spec.prior).value;
    });
    return stats;
  };

  CalibrationResult out;
  out.detector = spec.detector;
  out.target_pf = target_pf;
  out.trials = trials;
  out.validation_trials = held_out;
  out.master_seed = master_seed;
  out.below_recommended_trials = static_cast<double>(trials) < 10.0 / target_pf;
  out.threshold = threshold_from_samples(run(SeedStream::Calibration, trials), target_pf);
  if (held_out > 0) out.empirical_pf = exceedance(run(SeedStream::Validation, held_out), out.threshold);
  return out;
}

/// Fraction of H1 trials whose statistic exceeds the threshold.
inline double estimate_pd(const DetectorSpec& spec, double threshold, const SignalModel& model,
                          std::size_t count_ns, const SnrSpec& snr, std::size_t trials,
                          std::uint64_t master_seed, unsigned jobs = default_jobs()) {
  if (trials == 0) throw InvariantError("Pd estimation needs at least one trial");
  require_priors(spec.detector, spec.prior);
  std::vector<char> hit(trials, 0);
  parallel_for(trials, jobs, [&](std::size_t t) {
    const auto seg = gen_h1_segment(model, count_ns, snr, trial_seed(master_seed, SeedStream::Signal, t),
                                    trial_seed(master_seed, SeedStream::Noise, t));
    hit[t] = decide(evaluate(spec.detector, observe(seg), spec.prior), threshold) == Decision::H1;
  });
  const auto hits = static_cast<double>(std::count(hit.begin(), hit.end(), 1));
  return hits / static_cast<double>(trials);
}

// ---------------------------------------------------------------------------
// SNR sweeps

/// Priors a detector would hold if it knew the source exactly at this SNR:
/// R_s and its leading eigenpair scaled to the SNR, and the declared noise
/// variance (possibly mis-stated by the noise-uncertainty factor).
inline PriorKnowledge oracle_priors(const SignalModel& model, const SnrSpec& snr,
                                    double sigma2_assumed) {
  const double gain = snr_gain(model.power(), snr);
  SignalCovariance r_s(model.population_covariance().scaled(gain * gain));
  PriorKnowledge p;
  p.lambda_s1 = r_s.spectrum().eigenvalue(0);
  if (const auto* r = std::get_if<Rank1Model>(&model.params)) {
    p.phi_s1 = r->phi;
  } else {
    const auto v = r_s.spectrum().eigenvector(0);
    p.phi_s1 = Feature(std::vector<double>(v.begin(), v.end()));
  }
  p.sigma2 = sigma2_assumed;
  p.r_s = std::move(r_s);
  return p;
}

/// Detectors whose priors change with the SNR point and therefore need a
/// threshold per point.
inline bool prior_depends_on_snr(DetectorKind d) noexcept {
  return d == DetectorKind::Ec || d == DetectorKind::Case1;
}

struct SweepConfig {
  std::vector<DetectorKind> detectors;
  SignalModel model;
  std::size_t count_ns = 100000;
  double sigma2 = 1.0;
  std::vector<double> snr_grid;
  double target_pf = 0.1;
  std::size_t trials_per_point = 1000;
  std::size_t calibration_trials = 1000;
  std::uint64_t master_seed = 0;
  double noise_uncertainty = 1.0;     // σ²_assumed = u · σ²_true
  std::optional<Feature> feature;     // overrides the model's own feature as φ_s1
  std::string feature_source = "model";
};

struct SweepRow {
  double snr_db = 0.0;
  std::string detector;
  double pd = 0.0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // sorted by snr_db, then detector name
  std::vector<CalibrationResult> calibrations;
  std::map<std::string, std::string> errors;  // detector → first failure
  std::vector<std::string> warnings;
  SweepConfig config;
};

namespace detail {

struct BatchStats {
  // stats[d][t]; failure[d] holds the message of the lowest failing trial
  std::vector<std::vector<double>> stats;
  std::vector<std::optional<std::pair<std::size_t, std::string>>> failure;
};

inline void record_failure(BatchStats& b, std::mutex& m, std::size_t d, std::size_t t,
                           const std::string& what) {
  std::lock_guard lock(m);
  if (!b.failure[d] || t < b.failure[d]->first) b.failure[d] = std::make_pair(t, what);
}

// R(g) = W + g·C + g²·S for the segment g·s + w, so one pass over the
// samples serves every SNR point of a trial.
struct CovarianceParts {
  std::size_t n = 0;
  std::size_t ns = 0;
  std::vector<double> w, c, s;  // upper triangles, row-major n×n
};

inline CovarianceParts covariance_parts(const SensingSegment& signal, const SensingSegment& noise) {
  CovarianceParts p;
  p.n = signal.order_n();
  p.ns = signal.count_ns();
  const std::size_t n = p.n;
  p.w.assign(n * n, 0.0);
  p.c.assign(n * n, 0.0);
  p.s.assign(n * n, 0.0);
  for (std::size_t k = 0; k < p.ns; ++k) {
    const double* x = signal.vector(k).data();
    const double* e = noise.vector(k).data();
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = x[i], ei = e[i];
      double* w = p.w.data() + i * n;
      double* c = p.c.data() + i * n;
      double* s = p.s.data() + i * n;
      for (std::size_t j = i; j < n; ++j) {
        w[j] += ei * e[j];
        c[j] += xi * e[j] + ei * x[j];
        s[j] += xi * x[j];
      }
    }
  }
  return p;
}

inline CovarianceEstimate combine(const CovarianceParts& p, double gain) {
  Matrix m(p.n, p.n);
  const double inv = 1.0 / static_cast<double>(p.ns);
  const double g2 = gain * gain;
  for (std::size_t i = 0; i < p.n; ++i) {
    for (std::size_t j = i; j < p.n; ++j) {
      const std::size_t k = i * p.n + j;
      m(i, j) = (p.w[k] + gain * p.c[k] + g2 * p.s[k]) * inv;
      m(j, i) = m(i, j);
    }
  }
  return CovarianceEstimate(std::move(m), p.ns);
}

}  // namespace detail

/// Calibrates every detector on one shared noise-only batch, then evaluates
/// all detectors on one shared batch of H1 segments per SNR point. Signal
/// and noise draws are common across SNR points (only the gain changes).
/// A detector that fails is reported in `errors` and dropped; the others
/// continue.
inline SweepResult snr_sweep(const SweepConfig& cfg, unsigned jobs = default_jobs()) {
  if (cfg.detectors.empty()) throw InvariantError("sweep needs at least one detector");
  if (cfg.snr_grid.empty()) throw InvariantError("sweep needs at least one SNR point");
  if (!(cfg.target_pf > 0.0 && cfg.target_pf < 1.0)) {
    throw InvariantError("target Pf must lie in (0, 1)");
  }
  if (cfg.trials_per_point == 0 || cfg.calibration_trials == 0) {
    throw InvariantError("sweep needs at least one trial per batch");
  }
  if (!(cfg.noise_uncertainty > 0.0)) throw InvariantError("noise uncertainty factor must be > 0");
  if (cfg.feature && cfg.feature->order_n() != cfg.model.order_n) {
    throw DimensionError("prior feature order does not match the signal model");
  }

  SweepResult result;
  result.config = cfg;
  std::vector<DetectorKind> dets = cfg.detectors;
  std::sort(dets.begin(), dets.end(),
            [](DetectorKind a, DetectorKind b) { return detector_name(a) < detector_name(b); });
  dets.erase(std::unique(dets.begin(), dets.end()), dets.end());
  const std::size_t nd = dets.size();

  std::vector<double> grid = cfg.snr_grid;
  std::sort(grid.begin(), grid.end());

  const std::size_t n = cfg.model.order_n;
  const double sigma2_assumed = cfg.noise_uncertainty * cfg.sigma2;
  const NoiseModel h0{n, cfg.count_ns, sigma2_assumed, cfg.model.layout()};

  if (static_cast<double>(cfg.calibration_trials) < 10.0 / cfg.target_pf) {
    result.warnings.push_back("calibration trials below the recommended 10/Pf");
  }

  auto priors_at = [&](double snr_db) {
    PriorKnowledge p = oracle_priors(cfg.model, SnrSpec{snr_db, cfg.sigma2}, sigma2_assumed);
    if (cfg.feature) p.phi_s1 = *cfg.feature;
    return p;
  };
  // Priors for detectors whose knowledge is fixed across the sweep.
  const PriorKnowledge fixed = priors_at(grid.front());

  std::vector<bool> alive(nd, true);
  auto fail = [&](std::size_t d, const std::string& what) {
    if (alive[d]) {
      alive[d] = false;
      result.errors.emplace(std::string(detector_name(dets[d])), what);
    }
  };

  const bool keep_h0 = std::any_of(dets.begin(), dets.end(), prior_depends_on_snr);

  // Noise-only batches: statistics for fixed-prior detectors, and the
  // observations themselves when some detector must be re-calibrated per point.
  auto h0_batch = [&](SeedStream stream, std::size_t count, std::vector<Observation>* keep) {
    detail::BatchStats b;
    b.stats.assign(nd, std::vector<double>(count, 0.0));
    b.failure.assign(nd, std::nullopt);
    std::mutex m;
    std::vector<std::optional<Observation>> kept(keep ? count : 0);
    parallel_for(count, jobs, [&](std::size_t t) {
      const auto seg = gen_h0_segment(h0.layout, n, h0.count_ns, h0.sigma2,
                                      trial_seed(cfg.master_seed, stream, t));
      Observation obs = observe(seg);
      for (std::size_t d = 0; d < nd; ++d) {
        if (prior_depends_on_snr(dets[d])) continue;
        try {
          b.stats[d][t] = evaluate(dets[d], obs, fixed).value;
        } catch (const std::exception& e) {
          detail::record_failure(b, m, d, t, e.what());
        }
      }
      if (keep) kept[t].emplace(std::move(obs));
    });
    if (keep) {
      keep->reserve(count);
      for (auto& o : kept) keep->push_back(std::move(*o));
    }
    return b;
  };

  std::vector<Observation> cal_obs;
  std::vector<Observation> val_obs;
  const auto cal = h0_batch(SeedStream::Calibration, cfg.calibration_trials, keep_h0 ? &cal_obs : nullptr);
  const auto val = h0_batch(SeedStream::Validation, cfg.calibration_trials, keep_h0 ? &val_obs : nullptr);

  // threshold[d][point]
  std::vector<std::vector<double>> threshold(nd, std::vector<double>(grid.size(), 0.0));
  for (std::size_t d = 0; d < nd; ++d) {
    if (prior_depends_on_snr(dets[d])) continue;
    if (cal.failure[d]) { fail(d, cal.failure[d]->second); continue; }
    if (val.failure[d]) { fail(d, val.failure[d]->second); continue; }
    CalibrationResult c;
    c.detector = dets[d];
    c.target_pf = cfg.target_pf;
    c.trials = cfg.calibration_trials;
    c.validation_trials = cfg.calibration_trials;
    c.master_seed = cfg.master_seed;
    c.below_recommended_trials = static_cast<double>(c.trials) < 10.0 / cfg.target_pf;
    c.threshold = threshold_from_samples(cal.stats[d], cfg.target_pf);
    c.empirical_pf = exceedance(val.stats[d], c.threshold);
    std::fill(threshold[d].begin(), threshold[d].end(), c.threshold);
    result.calibrations.push_back(c);
  }

  std::vector<PriorKnowledge> point_priors;
  point_priors.reserve(grid.size());
  for (double snr : grid) point_priors.push_back(priors_at(snr));

  for (std::size_t d = 0; d < nd; ++d) {
    if (!prior_depends_on_snr(dets[d])) continue;
    try {
      for (std::size_t p = 0; p < grid.size(); ++p) {
        std::vector<double> cs(cal_obs.size());
        std::vector<double> vs(val_obs.size());
        parallel_for(cs.size(), jobs, [&](std::size_t t) {
          cs[t] = evaluate(dets[d], cal_obs[t], point_priors[p]).value;
        });
        parallel_for(vs.size(), jobs, [&](std::size_t t) {
          vs[t] = evaluate(dets[d], val_obs[t], point_priors[p]).value;
        });
        CalibrationResult c;
        c.detector = dets[d];
        c.target_pf = cfg.target_pf;
        c.trials = cs.size();
        c.validation_trials = vs.size();
        c.master_seed = cfg.master_seed;
        c.below_recommended_trials = static_cast<double>(c.trials) < 10.0 / cfg.target_pf;
        c.threshold = threshold_from_samples(cs, cfg.target_pf);
        c.empirical_pf = exceedance(vs, c.threshold);
        c.snr_db = grid[p];
        threshold[d][p] = c.threshold;
        result.calibrations.push_back(c);
      }
    } catch (const std::exception& e) {
      fail(d, e.what());
    }
  }
  cal_obs.clear();
  val_obs.clear();

  // H1 trials: each trial's signal and noise draws are shared by every SNR
  // point; only the gain changes.
  std::vector<double> gains(grid.size());
  for (std::size_t p = 0; p < grid.size(); ++p) {
    gains[p] = snr_gain(cfg.model.power(), SnrSpec{grid[p], cfg.sigma2});
  }
  // hit[d][p][t]
  std::vector<std::vector<std::vector<char>>> hit(
      nd, std::vector<std::vector<char>>(grid.size(), std::vector<char>(cfg.trials_per_point, 0)));
  detail::BatchStats b;
  b.failure.assign(nd, std::nullopt);
  std::mutex m;
  if (std::any_of(alive.begin(), alive.end(), [](bool a) { return a; })) {
    parallel_for(cfg.trials_per_point, jobs, [&](std::size_t t) {
      const auto sig = gen_signal_segment(cfg.model, cfg.count_ns,
                                          trial_seed(cfg.master_seed, SeedStream::Signal, t));
      const auto noise = gen_h0_segment(cfg.model.layout(), n, cfg.count_ns, cfg.sigma2,
                                        trial_seed(cfg.master_seed, SeedStream::Noise, t));
      const auto parts = detail::covariance_parts(sig, noise);
      for (std::size_t p = 0; p < grid.size(); ++p) {
        std::optional<Observation> obs;
        try {
          obs.emplace(detail::combine(parts, gains[p]));
        } catch (const std::exception& e) {
          for (std::size_t d = 0; d < nd; ++d) detail::record_failure(b, m, d, t, e.what());
          continue;
        }
        for (std::size_t d = 0; d < nd; ++d) {
          if (!alive[d]) continue;
          try {
            const auto& prior = prior_depends_on_snr(dets[d]) ? point_priors[p] : fixed;
            hit[d][p][t] = decide(evaluate(dets[d], *obs, prior), threshold[d][p]) == Decision::H1;
          } catch (const std::exception& e) {
            detail::record_failure(b, m, d, t, e.what());
          }
        }
      }
    });
  }
  for (std::size_t d = 0; d < nd; ++d) {
    if (b.failure[d]) fail(d, b.failure[d]->second);
  }
  for (std::size_t p = 0; p < grid.size(); ++p) {
    for (std::size_t d = 0; d < nd; ++d) {
      if (!alive[d]) continue;
      const auto hits = static_cast<double>(std::count(hit[d][p].begin(), hit[d][p].end(), 1));
      result.rows.push_back(SweepRow{grid[p], std::string(detector_name(dets[d])),
                                     hits / static_cast<double>(cfg.trials_per_point),
                                     cfg.trials_per_point, cfg.master_seed});
    }
  }

  // A detector that failed at a later point loses its earlier rows too.
  std::erase_if(result.rows, [&](const SweepRow& r) { return result.errors.count(r.detector) > 0; });
  std::erase_if(result.calibrations, [&](const CalibrationResult& c) {
    return result.errors.count(std::string(detector_name(c.detector))) > 0;
  });
  return result;
}

/// Lowest grid SNR at which the detector reaches `pd_target`, if any.
inline std::optional<double> snr_at_pd(const SweepResult& r, std::string_view detector,
                                       double pd_target = 0.9) {
  for (const auto& row : r.rows) {
    if (row.detector == detector && row.pd >= pd_target) return row.snr_db;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// CSV rows

inline constexpr std::string_view kCsvHeader = "snr_db,detector,pd,trials,seed";

inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, end);
}

inline std::string export_rows(const SweepResult& r) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& row : r.rows) {
    out += format_double(row.snr_db);
    out += ',';
    out += row.detector;
    out += ',';
    out += format_double(row.pd);
    out += ',';
    out += std::to_string(row.trials);
    out += ',';
    out += std::to_string(row.seed);
    out += '\n';
  }
  return out;
}

inline std::vector<SweepRow> parse_rows(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw ParseError("CSV header must be '" + std::string(kCsvHeader) + "'");
  }
  std::vector<SweepRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw ParseError("CSV line " + std::to_string(lineno) + " needs 5 fields");
    SweepRow row;
    auto num = [&](const std::string& s, auto& v) {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) {
        throw ParseError("CSV line " + std::to_string(lineno) + ": bad number '" + s + "'");
      }
    };
    num(f[0], row.snr_db);
    row.detector = f[1];
    num(f[2], row.pd);
    num(f[3], row.trials);
    num(f[4], row.seed);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace specsense
