#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "corrfuse/calibration.hpp"
#include "corrfuse/datagen.hpp"
#include "corrfuse/inference.hpp"
#include "corrfuse/rng.hpp"
#include "corrfuse/sampling.hpp"
#include "corrfuse/types.hpp"

using namespace corrfuse;

namespace {

// Balanced two-classifier draws from the shared-component model.
LabeledDataset paired_dataset(RngState& rng, const Cube& alpha, const Mat& delta,
                              int per_class) {
  const int J = static_cast<int>(alpha[0].size());
  std::vector<LabeledExample> examples;
  for (int j = 0; j < J; ++j)
    for (int i = 0; i < per_class; ++i) {
      auto pair = sample_correlated_dirichlet(rng, alpha[0][static_cast<std::size_t>(j)],
                                              alpha[1][static_cast<std::size_t>(j)],
                                              delta[static_cast<std::size_t>(j)]);
      examples.push_back(LabeledExample{{std::move(pair.x1), std::move(pair.x2)},
                                        make_class_label(j + 1, J)});
    }
  return make_dataset(std::move(examples));
}

const Cube kSymShapes{Mat{{3, 2, 2}, {2, 3, 2}, {2, 2, 3}},
                      Mat{{3, 2, 2}, {2, 3, 2}, {2, 2, 3}}};

}  // namespace

TEST_CASE("identical outputs have correlation one everywhere") {
  RngState rng(11);
  std::vector<LabeledExample> examples;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 20; ++i) {
      Simplex x = sample_dirichlet(rng, kSymShapes[0][static_cast<std::size_t>(j)]);
      examples.push_back(LabeledExample{{x, x}, make_class_label(j + 1, 3)});
    }
  const CorrelationProfile prof = measure_correlation(make_dataset(std::move(examples)));
  for (const Vec& row : prof.corr)
    for (double r : row) CHECK(r == Catch::Approx(1.0).margin(1e-12));
  CHECK(prof.mean_correlation == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("independent outputs have correlation near zero") {
  RngState rng(12);
  const Mat delta(3, Vec(3, 0.0));
  const LabeledDataset data = paired_dataset(rng, kSymShapes, delta, 100000);
  const CorrelationProfile prof = measure_correlation(data);
  for (const Vec& row : prof.corr)
    for (double r : row) CHECK(std::abs(r) < 0.02);
  CHECK(std::abs(prof.mean_correlation) < 0.02);
}

TEST_CASE("constant slices are flagged undefined, not folded into the mean") {
  std::vector<LabeledExample> examples;
  RngState rng(13);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 5; ++i) {
      // Classifier 1 is frozen; classifier 2 varies.
      const Simplex fixed = make_simplex({0.5, 0.5});
      examples.push_back(LabeledExample{{fixed, sample_dirichlet(rng, {2.0, 2.0})},
                                        make_class_label(j + 1, 2)});
    }
  const CorrelationProfile prof = measure_correlation(make_dataset(std::move(examples)));
  for (const Vec& row : prof.corr)
    for (double r : row) CHECK(std::isnan(r));
  CHECK(std::isnan(prof.mean_correlation));
}

TEST_CASE("correlation measurement validates its inputs") {
  RngState rng(14);
  // Three classifiers.
  std::vector<LabeledExample> wide;
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 3; ++i) {
      Simplex x = sample_dirichlet(rng, {2.0, 2.0});
      wide.push_back(LabeledExample{{x, x, x}, make_class_label(j + 1, 2)});
    }
  CHECK_THROWS_AS(measure_correlation(make_dataset(std::move(wide))), validation_error);

  // A single example in class 2.
  std::vector<LabeledExample> thin;
  for (int i = 0; i < 4; ++i) {
    Simplex x = sample_dirichlet(rng, {2.0, 2.0});
    thin.push_back(LabeledExample{{x, x}, make_class_label(1, 2)});
  }
  Simplex lone = sample_dirichlet(rng, {2.0, 2.0});
  thin.push_back(LabeledExample{{lone, lone}, make_class_label(2, 2)});
  CHECK_THROWS_AS(measure_correlation(make_dataset(std::move(thin))), validation_error);
}

TEST_CASE("calibration endpoints are exact") {
  RngState rng(15);
  const Vec a{3.0, 2.0, 2.0};
  CHECK(calibrate_delta(a, a, 0.0, rng) == Vec{0.0, 0.0, 0.0});
  CHECK(calibrate_delta(a, a, 1.0, rng) == a);

  const Vec b{4.0, 2.0, 3.0};
  CHECK(calibrate_delta(a, b, 0.0, rng) == Vec{0.0, 0.0, 0.0});
  CHECK_THROWS_AS(calibrate_delta(a, b, 1.0, rng), validation_error);
}

TEST_CASE("simulated correlation grows monotonically with the coupling fraction") {
  RngState rng(16);
  const Vec a{3.0, 2.0, 2.0};
  double prev = -1.0;
  for (double c : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double r = detail::simulated_mean_correlation(rng, a, a, c, 100000);
    CHECK(r > prev - 0.01);  // Monte Carlo slack
    prev = r;
  }
  CHECK(prev == Catch::Approx(1.0).margin(1e-9));  // equal marginals, full coupling
}

TEST_CASE("calibrated coupling reproduces the requested correlation") {
  RngState rng(17);
  const Vec a{3.0, 2.0, 2.0};
  const Vec delta = calibrate_delta(a, a, 0.5, rng);
  REQUIRE(delta.size() == 3);
  // The family keeps delta proportional to the elementwise minimum.
  CHECK(delta[1] == Catch::Approx(delta[2]).epsilon(1e-12));
  CHECK(delta[0] / 3.0 == Catch::Approx(delta[1] / 2.0).epsilon(1e-12));
  CHECK(delta[0] > 0.0);
  CHECK(delta[0] < 3.0);

  RngState check_rng(18);
  const double r_check = detail::simulated_mean_correlation(check_rng, a, a, delta[0] / 3.0, 200000);
  CHECK(r_check == Catch::Approx(0.5).margin(0.02));
}

TEST_CASE("out-of-reach targets report the achievable ceiling") {
  RngState rng(19);
  const Vec a{6.0, 2.0, 2.0};
  const Vec b{1.0, 8.0, 2.0};
  try {
    calibrate_delta(a, b, 0.95, rng);
    FAIL("expected a numeric_error");
  } catch (const numeric_error& e) {
    CHECK(std::string(e.what()).find("top out") != std::string::npos);
  }
}

TEST_CASE("generated test sets follow the balanced design") {
  SimSpec spec = sim1_spec(0.0, 99);
  spec.n_test_sets = 4;
  spec.examples_per_class = 7;
  const std::vector<LabeledDataset> sets = generate_dataset(spec);
  REQUIRE(sets.size() == 4);
  for (const LabeledDataset& set : sets) {
    CHECK(set.n_classes == 3);
    CHECK(set.n_classifiers == 2);
    REQUIRE(set.examples.size() == 21);
    std::vector<int> counts(3, 0);
    for (const LabeledExample& ex : set.examples)
      ++counts[static_cast<std::size_t>(ex.label.value - 1)];
    for (int c : counts) CHECK(c == 7);
  }
}

TEST_CASE("test sets are reproducible per set and independent of the batch size") {
  SimSpec small = sim2_spec(1.0, 7);
  small.n_test_sets = 2;
  small.examples_per_class = 5;
  SimSpec large = small;
  large.n_test_sets = 5;

  const auto a = generate_dataset(small);
  const auto b = generate_dataset(large);
  REQUIRE(b.size() == 5);
  for (std::size_t s = 0; s < a.size(); ++s)
    for (std::size_t i = 0; i < a[s].examples.size(); ++i)
      for (int k = 0; k < 2; ++k)
        for (std::size_t l = 0; l < 3; ++l)
          CHECK(a[s].examples[i].outputs[static_cast<std::size_t>(k)][l] ==
                b[s].examples[i].outputs[static_cast<std::size_t>(k)][l]);

  // Different seeds give different draws.
  SimSpec other = small;
  other.seed = 8;
  const auto c = generate_dataset(other);
  CHECK(c[0].examples[0].outputs[0][0] != a[0].examples[0].outputs[0][0]);
}

TEST_CASE("full coupling with equal shapes duplicates the outputs") {
  SimSpec spec = sim1_spec(1.0, 5);
  spec.n_test_sets = 1;
  spec.examples_per_class = 50;
  const auto sets = generate_dataset(spec);
  for (const LabeledExample& ex : sets[0].examples)
    for (std::size_t l = 0; l < 3; ++l)
      CHECK(ex.outputs[0][l] == Catch::Approx(ex.outputs[1][l]).margin(1e-12));
}

TEST_CASE("generation and shape fitting close the loop at zero coupling") {
  SimSpec spec = sim1_spec(0.0, 31);
  spec.n_test_sets = 1;
  spec.examples_per_class = 4000;
  const auto sets = generate_dataset(spec);

  McmcConfig cfg = McmcConfig::fit_defaults();
  cfg.n_iter = 2500;
  cfg.n_burnin = 600;
  cfg.seed = 3;
  const IfmPosterior post = fit_ifm(sets[0], GammaPrior{}, cfg);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t l = 0; l < 3; ++l) {
        const double truth = spec.alpha[k][j][l];
        CHECK(std::abs(post.point.alpha[k][j][l] - truth) / truth < 0.1);
      }
}

TEST_CASE("generated marginals match the Dirichlet moments") {
  SimSpec spec = sim2_spec(0.5, 77);
  spec.n_test_sets = 1;
  spec.examples_per_class = 20000;
  const auto sets = generate_dataset(spec);

  // Pooled per-class means: E[x_l] = alpha_l / alpha_0 regardless of coupling.
  for (int j = 0; j < 3; ++j) {
    Vec mean1(3, 0.0), mean2(3, 0.0);
    int n = 0;
    for (const LabeledExample& ex : sets[0].examples) {
      if (ex.label.value != j + 1) continue;
      for (std::size_t l = 0; l < 3; ++l) {
        mean1[l] += ex.outputs[0][l];
        mean2[l] += ex.outputs[1][l];
      }
      ++n;
    }
    const Vec& row = spec.alpha[0][static_cast<std::size_t>(j)];
    const double a0 = row[0] + row[1] + row[2];
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(mean1[l] / n == Catch::Approx(row[l] / a0).margin(0.01));
      CHECK(mean2[l] / n == Catch::Approx(row[l] / a0).margin(0.01));
    }
  }
}

TEST_CASE("round trip: measured correlation matches the calibration target") {
  SimSpec spec = sim1_spec(0.5, 41);
  spec.n_test_sets = 1;
  spec.examples_per_class = 2500;
  const auto sets = generate_dataset(spec);
  const CorrelationProfile prof = measure_correlation(sets[0]);
  CHECK(prof.mean_correlation == Catch::Approx(0.5).margin(0.04));
}

TEST_CASE("dataset generation validates its spec") {
  SimSpec spec = sim1_spec(0.5, 1);
  spec.alpha.pop_back();
  CHECK_THROWS_AS(generate_dataset(spec), validation_error);

  SimSpec bad_r = sim1_spec(0.5, 1);
  bad_r.r = 1.5;
  CHECK_THROWS_AS(generate_dataset(bad_r), validation_error);

  SimSpec empty = sim1_spec(0.5, 1);
  empty.examples_per_class = 0;
  CHECK_THROWS_AS(generate_dataset(empty), validation_error);

  SimSpec none = sim1_spec(0.5, 1);
  none.n_test_sets = 0;
  CHECK_THROWS_AS(generate_dataset(none), validation_error);
}
