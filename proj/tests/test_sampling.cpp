#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "corrfuse/rng.hpp"
#include "corrfuse/sampling.hpp"

using namespace corrfuse;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

template <typename Draw>
Moments sample_moments(int n, Draw draw) {
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = draw();
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n;
  return Moments{mean, sum_sq / n - mean * mean};
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Mean and variance of the l-th coordinate of Dirichlet(alpha).
Moments dirichlet_marginal(const Vec& alpha, std::size_t l) {
  double a0 = 0.0;
  for (double a : alpha) a0 += a;
  const double m = alpha[l] / a0;
  return Moments{m, alpha[l] * (a0 - alpha[l]) / (a0 * a0 * (a0 + 1.0))};
}

}  // namespace

TEST_CASE("rng streams are deterministic and derivation ignores consumption") {
  RngState a(42), b(42);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

  RngState parent1(7), parent2(7);
  parent2.uniform();  // consuming the parent must not change derived children
  RngState child1 = parent1.derive(3), child2 = parent2.derive(3);
  for (int i = 0; i < 100; ++i) REQUIRE(child1.next_u64() == child2.next_u64());

  RngState other = parent1.derive(4);
  REQUIRE(other.next_u64() != parent1.derive(3).next_u64());
}

TEST_CASE("uniform draws live strictly inside (0,1)") {
  RngState rng(1);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  REQUIRE(lo > 0.0);
  REQUIRE(hi < 1.0);
  REQUIRE(sum / n == Catch::Approx(0.5).margin(0.002));
}

TEST_CASE("normal draws match standard moments") {
  RngState rng(2);
  const Moments m = sample_moments(400000, [&] { return rng.normal(); });
  REQUIRE(m.mean == Catch::Approx(0.0).margin(0.01));
  REQUIRE(m.var == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("gamma sampler matches moments across shape regimes") {
  // Central fourth moment of Gamma(a, 1) is 3a^2 + 6a; the variance of the
  // sample variance is (mu4 - var^2) / n, which sets the tolerance below.
  const int n = 400000;
  int shape_idx = 0;
  for (double shape : {0.05, 0.5, 3.0}) {
    RngState rng(100 + shape_idx++);
    const Moments m = sample_moments(n, [&] { return sample_gamma(rng, shape); });
    const double se_mean = std::sqrt(shape / n);
    const double mu4 = 3.0 * shape * shape + 6.0 * shape;
    const double se_var = std::sqrt((mu4 - shape * shape) / n);
    INFO("shape = " << shape);
    REQUIRE(m.mean == Catch::Approx(shape).margin(5.0 * se_mean));
    REQUIRE(m.var == Catch::Approx(shape).margin(5.0 * se_var));
  }
}

TEST_CASE("gamma sampler honours the scale parameter") {
  RngState rng(11);
  const Moments m = sample_moments(200000, [&] { return sample_gamma(rng, 2.0, 3.0); });
  REQUIRE(m.mean == Catch::Approx(6.0).margin(0.05));
  REQUIRE(m.var == Catch::Approx(18.0).margin(0.6));
}

TEST_CASE("gamma shape zero is a point mass at zero") {
  RngState rng(12);
  for (int i = 0; i < 100; ++i) REQUIRE(sample_gamma(rng, 0.0) == 0.0);
}

TEST_CASE("gamma sampler rejects invalid parameters") {
  RngState rng(13);
  REQUIRE_THROWS_AS(sample_gamma(rng, -1.0), validation_error);
  REQUIRE_THROWS_AS(sample_gamma(rng, 1.0, 0.0), validation_error);
  REQUIRE_THROWS_AS(sample_gamma(rng, 1.0, -2.0), validation_error);
  REQUIRE_THROWS_AS(sample_gamma(rng, std::nan("")), validation_error);
}

TEST_CASE("dirichlet marginal moments") {
  const Vec alpha{3.0, 2.0, 2.0};
  RngState rng(20);
  const int n = 400000;
  Vec sum(3, 0.0), sum_sq(3, 0.0);
  for (int i = 0; i < n; ++i) {
    const Simplex x = sample_dirichlet(rng, alpha);
    for (std::size_t l = 0; l < 3; ++l) {
      sum[l] += x[l];
      sum_sq[l] += x[l] * x[l];
    }
  }
  for (std::size_t l = 0; l < 3; ++l) {
    const Moments want = dirichlet_marginal(alpha, l);
    const double mean = sum[l] / n;
    const double var = sum_sq[l] / n - mean * mean;
    REQUIRE(mean == Catch::Approx(want.mean).margin(5.0 * std::sqrt(want.var / n)));
    // Var(x_1) = 3*4 / (49*8) for alpha = (3,2,2).
    REQUIRE(var == Catch::Approx(want.var).epsilon(0.03));
  }
  REQUIRE(dirichlet_marginal(alpha, 0).var == Catch::Approx(12.0 / 392.0).epsilon(1e-12));
}

TEST_CASE("dirichlet sampler rejects invalid shapes") {
  RngState rng(21);
  REQUIRE_THROWS_AS(sample_dirichlet(rng, Vec{1.0}), validation_error);
  REQUIRE_THROWS_AS(sample_dirichlet(rng, Vec{1.0, 0.0, 1.0}), validation_error);
  REQUIRE_THROWS_AS(sample_dirichlet(rng, Vec{1.0, -1.0, 1.0}), validation_error);
}

TEST_CASE("correlated dirichlet preserves both marginals") {
  const Vec a1{3.0, 2.0, 2.0};
  const Vec a2{2.0, 5.0, 1.0};
  Vec delta(3);
  for (std::size_t l = 0; l < 3; ++l) delta[l] = 0.7 * std::min(a1[l], a2[l]);
  RngState rng(30);
  const int n = 400000;
  Vec sum1(3, 0.0), sum2(3, 0.0);
  for (int i = 0; i < n; ++i) {
    const CorrelatedPair pair = sample_correlated_dirichlet(rng, a1, a2, delta);
    for (std::size_t l = 0; l < 3; ++l) {
      sum1[l] += pair.x1[l];
      sum2[l] += pair.x2[l];
    }
  }
  for (std::size_t l = 0; l < 3; ++l) {
    const Moments w1 = dirichlet_marginal(a1, l);
    const Moments w2 = dirichlet_marginal(a2, l);
    REQUIRE(sum1[l] / n == Catch::Approx(w1.mean).margin(5.0 * std::sqrt(w1.var / n)));
    REQUIRE(sum2[l] / n == Catch::Approx(w2.mean).margin(5.0 * std::sqrt(w2.var / n)));
  }
}

TEST_CASE("correlated dirichlet endpoints: independence and equality") {
  const Vec alpha{3.0, 2.0, 2.0};
  const int n = 200000;

  RngState rng(31);
  std::vector<double> u(n), v(n);
  for (int i = 0; i < n; ++i) {
    const CorrelatedPair pair =
        sample_correlated_dirichlet(rng, alpha, alpha, Vec{0.0, 0.0, 0.0});
    u[i] = pair.x1[0];
    v[i] = pair.x2[0];
  }
  REQUIRE(std::abs(pearson(u, v)) < 0.012);  // 5 standard errors at n = 2e5

  RngState rng2(32);
  for (int i = 0; i < 10000; ++i) {
    const CorrelatedPair pair = sample_correlated_dirichlet(rng2, alpha, alpha, alpha);
    REQUIRE(pair.x1.probs() == pair.x2.probs());
  }
}

TEST_CASE("correlation grows monotonically with the shared shapes") {
  const Vec alpha{3.0, 2.0, 2.0};
  const int n = 200000;
  std::vector<double> measured;
  for (double c : {0.0, 0.5, 1.0}) {
    Vec delta(3);
    for (std::size_t l = 0; l < 3; ++l) delta[l] = c * alpha[l];
    RngState rng(33);
    std::vector<double> u(n), v(n);
    for (int i = 0; i < n; ++i) {
      const CorrelatedPair pair = sample_correlated_dirichlet(rng, alpha, alpha, delta);
      u[i] = pair.x1[0];
      v[i] = pair.x2[0];
    }
    measured.push_back(pearson(u, v));
  }
  REQUIRE(measured[1] > measured[0] + 0.05);
  REQUIRE(measured[2] > measured[1] + 0.05);
  REQUIRE(measured[2] == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("correlated dirichlet validates delta against the marginals") {
  RngState rng(34);
  const Vec alpha{3.0, 2.0, 2.0};
  REQUIRE_THROWS_AS(
      sample_correlated_dirichlet(rng, alpha, alpha, Vec{3.1, 0.0, 0.0}),
      validation_error);
  REQUIRE_THROWS_AS(
      sample_correlated_dirichlet(rng, alpha, alpha, Vec{-0.1, 0.0, 0.0}),
      validation_error);
  REQUIRE_THROWS_AS(
      sample_correlated_dirichlet(rng, alpha, Vec{2.0, 2.0}, Vec{0.0, 0.0, 0.0}),
      validation_error);
}

TEST_CASE("multi-classifier shared components preserve marginals") {
  const Mat alphas{{3.0, 2.0, 2.0}, {2.0, 5.0, 1.0}, {4.0, 4.0, 4.0}};
  // Pairs (1,2), (1,3), (2,3), then the global component.
  const Mat deltas{{0.5, 0.5, 0.2},
                   {0.5, 0.5, 0.2},
                   {0.5, 0.5, 0.2},
                   {0.3, 0.3, 0.3}};
  RngState rng(35);
  const int n = 200000;
  Mat sums(3, Vec(3, 0.0));
  for (int i = 0; i < n; ++i) {
    const std::vector<Simplex> xs = sample_correlated_dirichlet_multi(rng, alphas, deltas);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t l = 0; l < 3; ++l) sums[k][l] += xs[k][l];
  }
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t l = 0; l < 3; ++l) {
      const Moments want = dirichlet_marginal(alphas[k], l);
      REQUIRE(sums[k][l] / n ==
              Catch::Approx(want.mean).margin(5.0 * std::sqrt(want.var / n)));
    }

  REQUIRE_THROWS_AS(
      sample_correlated_dirichlet_multi(rng, alphas,
                                        Mat{{3.0, 0.0, 0.0},
                                            {3.0, 0.0, 0.0},
                                            {0.0, 0.0, 0.0},
                                            {0.5, 0.0, 0.0}}),
      validation_error);
}

TEST_CASE("class sampling matches the given frequencies") {
  const Simplex uniform = make_simplex({1.0 / 3, 1.0 / 3, 1.0 / 3});
  RngState rng(40);
  const int n = 1000000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_class(rng, uniform).index())];
  for (int c : counts)
    REQUIRE(static_cast<double>(c) / n == Catch::Approx(1.0 / 3).margin(0.002));

  const Simplex skew = make_simplex({0.2, 0.5, 0.3});
  std::vector<int> counts2(3, 0);
  for (int i = 0; i < n; ++i) ++counts2[static_cast<std::size_t>(sample_class(rng, skew).index())];
  REQUIRE(static_cast<double>(counts2[0]) / n == Catch::Approx(0.2).margin(0.002));
  REQUIRE(static_cast<double>(counts2[1]) / n == Catch::Approx(0.5).margin(0.002));
  REQUIRE(static_cast<double>(counts2[2]) / n == Catch::Approx(0.3).margin(0.002));
}
