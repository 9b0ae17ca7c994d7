// Learn a feature blindly from a correlated source, then use it as prior
// knowledge to sense a weak copy of that source buried in noise.

#include <iostream>

#include "specsense/detectors.hpp"
#include "specsense/feature_learning.hpp"
#include "specsense/harness.hpp"
#include "specsense/signal_lab.hpp"

using namespace specsense;

int main() {
  const std::size_t n = 32, ns = 10000;
  const Ar1Model source{0.9, 1.0};

  // Two clean segments of the source are enough when they agree.
  std::vector<SensingSegment> clean;
  for (std::uint64_t seed : {1, 2}) {
    clean.push_back(build_sensing_vectors(gen_ar1_stream(source, ns + n - 1, seed), n, ns));
  }
  const auto learned = fla_learn(clean, 0.8, "demo AR(1) source");
  if (!learned) {
    std::cerr << "feature not learned\n";
    return 1;
  }
  std::cout << "learned feature, similarity " << learned->similarity_at_learning << "\n";

  PriorKnowledge prior;
  prior.phi_s1 = learned->feature;

  // Thresholds from noise alone; Case 3 and FTM need no noise variance.
  const NoiseModel noise{n, ns, 1.0, SegmentLayout::Stream};
  const auto model = SignalModel::ar1(n, source.coefficient, source.variance);
  for (DetectorKind d : {DetectorKind::Case3, DetectorKind::Ftm, DetectorKind::Case5}) {
    const DetectorSpec spec{d, prior};
    const auto cal = calibrate_threshold(spec, noise, 0.1, 1000, 7);
    const auto seg = gen_h1_segment(model, ns, SnrSpec{-15.0, 1.0}, 100, 200);
    const auto stat = evaluate(d, observe(seg), prior);
    std::cout << detector_name(d) << ": statistic " << stat.value << " threshold " << cal.threshold
              << " -> " << decision_name(decide(stat, cal.threshold)) << "\n";
  }
  return 0;
}
