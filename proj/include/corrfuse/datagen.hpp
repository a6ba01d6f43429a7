#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "corrfuse/calibration.hpp"
#include "corrfuse/errors.hpp"
#include "corrfuse/rng.hpp"
#include "corrfuse/sampling.hpp"
#include "corrfuse/types.hpp"

namespace corrfuse {

/// Recipe for a batch of synthetic two-classifier test sets: the per-class
/// Dirichlet shapes of both classifiers, the target output correlation, and
/// the balanced design (every set holds examples_per_class examples of each
/// class, in class order).
struct SimSpec {
  Cube alpha;  // [classifier][class][dimension], K = 2
  double r = 0.0;
  int n_test_sets = 1;
  int examples_per_class = 1;
  std::uint64_t seed = 0;
};

/// The two shape matrices used throughout the simulation studies: weakly
/// concentrated outputs (one observation per classifier) and the same design
/// at four observations, where the outputs concentrate around the truth.
inline SimSpec sim1_spec(double r, std::uint64_t seed) {
  SimSpec spec;
  spec.alpha = {Mat{{3, 2, 2}, {2, 3, 2}, {2, 2, 3}}, Mat{{3, 2, 2}, {2, 3, 2}, {2, 2, 3}}};
  spec.r = r;
  spec.n_test_sets = 25;
  spec.examples_per_class = 20;
  spec.seed = seed;
  return spec;
}

inline SimSpec sim2_spec(double r, std::uint64_t seed) {
  SimSpec spec;
  spec.alpha = {Mat{{12, 8, 8}, {8, 12, 8}, {8, 8, 12}},
                Mat{{12, 8, 8}, {8, 12, 8}, {8, 8, 12}}};
  spec.r = r;
  spec.n_test_sets = 25;
  spec.examples_per_class = 20;
  spec.seed = seed;
  return spec;
}

namespace detail {

inline void validate_spec(const SimSpec& spec) {
  if (spec.alpha.size() != 2)
    throw validation_error("dataset generation needs exactly 2 classifiers");
  const std::size_t J = spec.alpha[0].size();
  if (J < 2) throw validation_error("dataset generation needs >= 2 classes");
  for (const Mat& a : spec.alpha) {
    if (a.size() != J) throw validation_error("classifier shape matrices disagree on classes");
    for (const Vec& row : a)
      if (row.size() != J)
        throw validation_error("shape rows must match the number of classes");
  }
  if (!(spec.r >= 0.0 && spec.r <= 1.0))
    throw validation_error("target correlation must lie in [0, 1]");
  if (spec.n_test_sets < 1) throw validation_error("need at least one test set");
  if (spec.examples_per_class < 1)
    throw validation_error("need at least one example per class");
}

}  // namespace detail

/// The per-class coupling a spec's generator actually uses: each class row is
/// calibrated to the spec's correlation level on the spec's own calibration
/// stream, so this reproduces the generating parameters exactly.
inline Mat calibrate_spec_delta(const SimSpec& spec) {
  detail::validate_spec(spec);
  const std::size_t J = spec.alpha[0].size();
  Mat delta(J);
  RngState cal_rng = RngState(spec.seed).derive(0);
  for (std::size_t j = 0; j < J; ++j)
    delta[j] = calibrate_delta(spec.alpha[0][j], spec.alpha[1][j], spec.r, cal_rng);
  return delta;
}

/// Draws the test sets described by a spec from the shared-component model,
/// one dataset per test set.  The coupling is calibrated per class row to the
/// spec's correlation level; calibration failures propagate.  Each test set
/// uses its own derived RNG stream, so sets are individually reproducible and
/// unaffected by how many sets are requested.
inline std::vector<LabeledDataset> generate_dataset(const SimSpec& spec) {
  detail::validate_spec(spec);
  const std::size_t J = spec.alpha[0].size();

  RngState root(spec.seed);

  // Stream 0 calibrates; stream s + 1 draws test set s.
  const Mat delta = calibrate_spec_delta(spec);

  std::vector<LabeledDataset> sets;
  sets.reserve(static_cast<std::size_t>(spec.n_test_sets));
  for (int s = 0; s < spec.n_test_sets; ++s) {
    RngState rng = root.derive(static_cast<std::uint64_t>(s) + 1);
    std::vector<LabeledExample> examples;
    examples.reserve(J * static_cast<std::size_t>(spec.examples_per_class));
    for (std::size_t j = 0; j < J; ++j)
      for (int i = 0; i < spec.examples_per_class; ++i) {
        CorrelatedPair pair =
            sample_correlated_dirichlet(rng, spec.alpha[0][j], spec.alpha[1][j], delta[j]);
        examples.push_back(LabeledExample{{std::move(pair.x1), std::move(pair.x2)},
                                          make_class_label(static_cast<int>(j) + 1,
                                                           static_cast<int>(J))});
      }
    sets.push_back(make_dataset(std::move(examples)));
  }
  return sets;
}

}  // namespace corrfuse
