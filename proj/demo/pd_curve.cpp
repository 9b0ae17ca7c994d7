// Small Pd-vs-SNR sweep printed as a table; the CLI's `sweep` runs the
// same harness at full scale.

#include <cstdio>

#include "specsense/harness.hpp"

using namespace specsense;

int main() {
  const std::size_t n = 16;
  std::vector<double> shape(n);
  for (std::size_t i = 0; i < n; ++i) shape[i] = 1.0 + 0.5 * std::cos(0.3 * static_cast<double>(i));

  SweepConfig cfg;
  cfg.detectors = {DetectorKind::Case3, DetectorKind::Case5, DetectorKind::Mme, DetectorKind::Cav};
  cfg.model = SignalModel::rank1(static_cast<double>(n), Feature::normalized(shape));
  cfg.count_ns = 2000;
  cfg.snr_grid = {-24, -22, -20, -18, -16, -14};
  cfg.trials_per_point = 400;
  cfg.calibration_trials = 400;
  cfg.master_seed = 42;

  const SweepResult r = snr_sweep(cfg);
  for (const auto& c : r.calibrations) {
    std::printf("%-6s threshold %.6g  held-out Pf %.3f\n", std::string(detector_name(c.detector)).c_str(),
                c.threshold, c.empirical_pf);
  }
  std::printf("\n%8s", "SNR dB");
  for (DetectorKind d : cfg.detectors) std::printf("%8s", std::string(detector_name(d)).c_str());
  std::printf("\n");
  for (double snr : cfg.snr_grid) {
    std::printf("%8.1f", snr);
    for (DetectorKind d : cfg.detectors) {
      for (const auto& row : r.rows) {
        if (row.snr_db == snr && row.detector == detector_name(d)) std::printf("%8.3f", row.pd);
      }
    }
    std::printf("\n");
  }
  return 0;
}
