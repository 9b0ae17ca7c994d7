#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "oracles.hpp"
#include "specsense/harness.hpp"

using namespace specsense;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Feature ramp(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::cos(0.4 * static_cast<double>(i)) + 0.1;
  return Feature::normalized(v);
}

SweepConfig small_sweep(std::vector<DetectorKind> dets, std::vector<double> grid) {
  SweepConfig cfg;
  cfg.detectors = std::move(dets);
  cfg.model = SignalModel::rank1(1.0, ramp(8));
  cfg.count_ns = 400;
  cfg.snr_grid = std::move(grid);
  cfg.target_pf = 0.1;
  cfg.trials_per_point = 300;
  cfg.calibration_trials = 300;
  cfg.master_seed = 20240611;
  return cfg;
}

std::vector<DetectorKind> all_detectors() {
  return std::vector<DetectorKind>(kAllDetectors.begin(), kAllDetectors.end());
}

}  // namespace

TEST(OrderStatistic, Examples) {
  const std::vector<double> ten{3, 1, 4, 10, 5, 9, 2, 6, 8, 7};
  EXPECT_EQ(threshold_from_samples(ten, 0.1), 9.0);
  EXPECT_EQ(exceedance(ten, 9.0), 0.1);
  const std::vector<double> same(50, 2.5);
  EXPECT_EQ(threshold_from_samples(same, 0.1), 2.5);
  EXPECT_EQ(exceedance(same, 2.5), 0.0);
  const std::vector<double> four{4, 2, 1, 3};
  EXPECT_EQ(threshold_from_samples(four, 0.5), 2.0);
  EXPECT_EQ(exceedance(four, 2.0), 0.5);
}

TEST(OrderStatistic, RankMatchesCeiling) {
  // Brute-force rank over sizes where (1 − pf)·M is an exact integer in
  // decimal but not in binary.
  for (std::size_t m : {10u, 20u, 100u, 1000u, 10000u}) {
    for (double pf : {0.1, 0.05, 0.01, 0.3, 0.7}) {
      std::vector<double> s(m);
      for (std::size_t i = 0; i < m; ++i) s[i] = static_cast<double>(i + 1);
      const double exact = (1.0 - pf) * static_cast<double>(m);
      const auto k = static_cast<std::size_t>(std::llround(exact));
      const std::size_t expect = std::abs(exact - static_cast<double>(k)) < 1e-6
                                     ? k
                                     : static_cast<std::size_t>(std::ceil(exact));
      EXPECT_EQ(threshold_from_samples(s, pf), static_cast<double>(expect)) << m << " " << pf;
    }
  }
}

TEST(OrderStatistic, Validation) {
  EXPECT_THROW(threshold_from_samples({}, 0.1), InvariantError);
  EXPECT_THROW(threshold_from_samples({1.0}, 0.0), InvariantError);
  EXPECT_THROW(threshold_from_samples({1.0}, 1.0), InvariantError);
}

TEST(ParallelFor, CoversEveryIndexAndRethrowsLowest) {
  std::vector<int> seen(1000, 0);
  parallel_for(seen.size(), 4, [&](std::size_t i) { seen[i] += 1; });
  for (int s : seen) EXPECT_EQ(s, 1);
  try {
    parallel_for(100, 3, [](std::size_t i) {
      if (i % 10 == 7) throw std::runtime_error(std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "7");
  }
}

TEST(Calibration, HeldOutFalseAlarmWithinBinomialBand) {
  const NoiseModel noise{8, 200, 1.0, SegmentLayout::Vectors};
  const std::size_t trials = 10000;
  for (DetectorKind d : {DetectorKind::Mme, DetectorKind::Case4, DetectorKind::Cav}) {
    DetectorSpec spec{d, {}};
    spec.prior.sigma2 = 1.0;
    const auto c = calibrate_threshold(spec, noise, 0.1, trials, 5);
    EXPECT_LE(std::abs(c.empirical_pf - 0.1), oracle::three_sigma(0.1, trials))
        << detector_name(d) << " pf=" << c.empirical_pf;
    EXPECT_FALSE(c.below_recommended_trials);
    EXPECT_EQ(c.validation_trials, trials);
  }
}

TEST(Calibration, MissingPriorAndWarning) {
  const NoiseModel noise{4, 50, 1.0, SegmentLayout::Vectors};
  EXPECT_THROW(calibrate_threshold(DetectorSpec{DetectorKind::Case3, {}}, noise, 0.1, 10, 1),
               MissingPriorError);
  const auto c = calibrate_threshold(DetectorSpec{DetectorKind::Agm, {}}, noise, 0.1, 20, 1);
  EXPECT_TRUE(c.below_recommended_trials);
}

TEST(Calibration, IndependentOfJobs) {
  const NoiseModel noise{6, 100, 1.0, SegmentLayout::Stream};
  const DetectorSpec spec{DetectorKind::Case5, {}};
  const auto a = calibrate_threshold(spec, noise, 0.1, 200, 9, 1);
  const auto b = calibrate_threshold(spec, noise, 0.1, 200, 9, 3);
  EXPECT_EQ(a.threshold, b.threshold);
  EXPECT_EQ(a.empirical_pf, b.empirical_pf);
}

TEST(EstimatePd, InfiniteThresholds) {
  const auto model = SignalModel::rank1(2.0, ramp(8));
  const DetectorSpec spec{DetectorKind::Mme, {}};
  EXPECT_EQ(estimate_pd(spec, kInf, model, 100, SnrSpec{0, 1}, 50, 1), 0.0);
  EXPECT_EQ(estimate_pd(spec, -kInf, model, 100, SnrSpec{0, 1}, 50, 1), 1.0);
}

TEST(EstimatePd, HighSnrSaturates) {
  const auto model = SignalModel::rank1(1.0, ramp(32));
  const NoiseModel noise{32, 500, 1.0, SegmentLayout::Vectors};
  for (DetectorKind d : kAllDetectors) {
    if (!is_scale_invariant(d)) continue;
    DetectorSpec spec{d, {}};
    spec.prior.phi_s1 = ramp(32);
    const auto c = calibrate_threshold(spec, noise, 0.1, 100, 3);
    EXPECT_EQ(estimate_pd(spec, c.threshold, model, 500, SnrSpec{20.0, 1.0}, 1000, 4), 1.0)
        << detector_name(d);
  }
}

TEST(Sweep, HighSnrAllDetectorsDetect) {
  const auto r = snr_sweep(small_sweep(all_detectors(), {20.0}));
  EXPECT_TRUE(r.errors.empty());
  ASSERT_EQ(r.rows.size(), 10u);
  for (const auto& row : r.rows) EXPECT_EQ(row.pd, 1.0) << row.detector;
}

TEST(Sweep, InvisibleSignalCollapsesToPf) {
  auto cfg = small_sweep({DetectorKind::Mme}, {-100.0});
  cfg.trials_per_point = 2000;
  cfg.calibration_trials = 2000;
  const auto r = snr_sweep(cfg);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_LE(std::abs(r.rows[0].pd - 0.1), oracle::three_sigma(0.1, 2000));
}

TEST(Sweep, PdNonDecreasingInSnr) {
  auto cfg = small_sweep(all_detectors(), {-12, -9, -6, -3, 0});
  const auto r = snr_sweep(cfg);
  for (DetectorKind d : kAllDetectors) {
    double prev = -1.0;
    for (const auto& row : r.rows) {
      if (row.detector != detector_name(d)) continue;
      if (prev >= 0.0) {
        const double se = std::sqrt((prev * (1 - prev) + row.pd * (1 - row.pd)) / row.trials);
        EXPECT_GE(row.pd, prev - 3 * se - 1e-12) << row.detector << " at " << row.snr_db;
      }
      prev = row.pd;
    }
  }
}

TEST(Sweep, RowsSortedAndShaped) {
  const auto r = snr_sweep(small_sweep({DetectorKind::Mme, DetectorKind::Cav, DetectorKind::Agm},
                                       {3.0, -3.0}));
  ASSERT_EQ(r.rows.size(), 6u);
  EXPECT_EQ(r.rows[0].snr_db, -3.0);
  EXPECT_EQ(r.rows[0].detector, "agm");
  EXPECT_EQ(r.rows[1].detector, "cav");
  EXPECT_EQ(r.rows[2].detector, "mme");
  EXPECT_EQ(r.rows[3].snr_db, 3.0);
  for (const auto& row : r.rows) {
    EXPECT_GE(row.pd, 0.0);
    EXPECT_LE(row.pd, 1.0);
  }
}

TEST(Sweep, SingleDetectorSinglePointCsv) {
  const auto r = snr_sweep(small_sweep({DetectorKind::Case5}, {0.0}));
  const std::string csv = export_rows(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "snr_db,detector,pd,trials,seed");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(Sweep, CsvRoundTripExact) {
  const auto r = snr_sweep(small_sweep(all_detectors(), {-4.0, -1.5}));
  EXPECT_EQ(parse_rows(export_rows(r)), r.rows);
  SweepResult odd;
  odd.rows.push_back(SweepRow{-0.1 - 0.2, "mme", 1.0 / 3.0, 3, 18446744073709551615ULL});
  EXPECT_EQ(parse_rows(export_rows(odd)), odd.rows);
}

TEST(Sweep, DeterministicAcrossJobCounts) {
  const auto cfg = small_sweep(all_detectors(), {-6.0, 0.0});
  const auto a = snr_sweep(cfg, 1);
  const auto b = snr_sweep(cfg, 4);
  EXPECT_EQ(export_rows(a), export_rows(b));
  ASSERT_EQ(a.calibrations.size(), b.calibrations.size());
  for (std::size_t i = 0; i < a.calibrations.size(); ++i) {
    EXPECT_EQ(a.calibrations[i].threshold, b.calibrations[i].threshold);
    EXPECT_EQ(a.calibrations[i].empirical_pf, b.calibrations[i].empirical_pf);
  }
}

TEST(Sweep, SnrDependentPriorsCalibratedPerPoint) {
  const auto r = snr_sweep(small_sweep({DetectorKind::Ec, DetectorKind::Case1}, {-6.0, 0.0}));
  ASSERT_EQ(r.calibrations.size(), 4u);
  for (const auto& c : r.calibrations) EXPECT_TRUE(c.snr_db.has_value());
}

TEST(Sweep, FailingDetectorIsIsolated) {
  // One vector per segment gives a rank-one covariance: AGM and MME see a
  // zero eigenvalue, CAV is unaffected.
  auto cfg = small_sweep({DetectorKind::Agm, DetectorKind::Cav, DetectorKind::Mme}, {0.0});
  cfg.count_ns = 1;
  const auto r = snr_sweep(cfg);
  EXPECT_EQ(r.errors.count("agm"), 1u);
  EXPECT_EQ(r.errors.count("mme"), 1u);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].detector, "cav");
  ASSERT_EQ(r.calibrations.size(), 1u);
}

TEST(Sweep, SnrAtPd) {
  SweepResult r;
  r.rows = {{-3, "mme", 0.5, 10, 1}, {-2, "mme", 0.95, 10, 1}, {-1, "mme", 0.89, 10, 1}};
  EXPECT_EQ(snr_at_pd(r, "mme"), -2.0);
  EXPECT_FALSE(snr_at_pd(r, "cav").has_value());
}

TEST(Sweep, CovarianceExpansionMatchesDirect) {
  for (const auto& model : {SignalModel::rank1(3.0, ramp(8)), SignalModel::ar1(8, 0.7)}) {
    const auto sig = gen_signal_segment(model, 300, 5);
    const auto noise = gen_h0_segment(model.layout(), 8, 300, 1.0, 6);
    const auto parts = detail::covariance_parts(sig, noise);
    for (double snr : {-20.0, 0.0, 10.0}) {
      const SnrSpec spec{snr, 1.0};
      const auto direct = sample_covariance(gen_h1_segment(model, 300, spec, 5, 6));
      const auto expanded = detail::combine(parts, snr_gain(model.power(), spec));
      const double scale = std::max(1.0, direct.trace());
      for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
          EXPECT_NEAR(expanded(i, j), direct(i, j), 1e-12 * scale);
        }
      }
    }
  }
}
