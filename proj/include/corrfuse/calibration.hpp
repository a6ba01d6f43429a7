#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <vector>

#include "corrfuse/errors.hpp"
#include "corrfuse/rng.hpp"
#include "corrfuse/sampling.hpp"
#include "corrfuse/types.hpp"

namespace corrfuse {

/// Pearson correlations between the two classifiers' outputs, one entry per
/// (class, dimension) slice of a dataset.  Entries whose slice has zero
/// variance on either side are undefined and stored as NaN; the summary mean
/// averages the defined entries only.
struct CorrelationProfile {
  Mat corr;  // [class][dimension], NaN where undefined
  double mean_correlation = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

/// Pearson correlation of two equally sized samples; NaN if either side has
/// zero variance.
inline double pearson(const Vec& a, const Vec& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

/// Mean per-dimension Pearson correlation of pairs drawn from the shared-
/// component model at delta = c * min(alpha1, alpha2).
inline double simulated_mean_correlation(RngState& rng, const Vec& alpha1, const Vec& alpha2,
                                         double c, int n_sim) {
  const std::size_t J = alpha1.size();
  Vec delta(J);
  for (std::size_t l = 0; l < J; ++l) delta[l] = c * std::min(alpha1[l], alpha2[l]);
  Mat a(J, Vec(static_cast<std::size_t>(n_sim)));
  Mat b(J, Vec(static_cast<std::size_t>(n_sim)));
  for (int i = 0; i < n_sim; ++i) {
    const CorrelatedPair pair = sample_correlated_dirichlet(rng, alpha1, alpha2, delta);
    for (std::size_t l = 0; l < J; ++l) {
      a[l][static_cast<std::size_t>(i)] = pair.x1[l];
      b[l][static_cast<std::size_t>(i)] = pair.x2[l];
    }
  }
  double sum = 0.0;
  for (std::size_t l = 0; l < J; ++l) sum += pearson(a[l], b[l]);
  return sum / static_cast<double>(J);
}

}  // namespace detail

/// Per-(class, dimension) Pearson correlation between the two classifiers'
/// outputs.  Requires K = 2 and at least two examples in every class.
inline CorrelationProfile measure_correlation(const LabeledDataset& data) {
  validate_dataset(data);
  if (data.n_classifiers != 2)
    throw validation_error("correlation profile needs exactly 2 classifiers");
  const std::size_t J = static_cast<std::size_t>(data.n_classes);

  CorrelationProfile out;
  out.corr.assign(J, Vec(J, std::numeric_limits<double>::quiet_NaN()));
  double sum = 0.0;
  int defined = 0;
  for (std::size_t j = 0; j < J; ++j) {
    Mat a(J), b(J);
    for (const LabeledExample& ex : data.examples) {
      if (ex.label.value != static_cast<int>(j) + 1) continue;
      for (std::size_t l = 0; l < J; ++l) {
        a[l].push_back(ex.outputs[0][l]);
        b[l].push_back(ex.outputs[1][l]);
      }
    }
    if (a[0].size() < 2) {
      std::ostringstream msg;
      msg << "class " << j + 1 << " has " << a[0].size()
          << " examples; correlation needs >= 2";
      throw validation_error(msg.str());
    }
    for (std::size_t l = 0; l < J; ++l) {
      const double r = detail::pearson(a[l], b[l]);
      out.corr[j][l] = r;
      if (!std::isnan(r)) {
        sum += r;
        ++defined;
      }
    }
  }
  if (defined > 0) out.mean_correlation = sum / defined;
  return out;
}

/// Finds the coupling vector delta that makes two classifiers' outputs hit a
/// target mean Pearson correlation.
///
/// delta is restricted to the one-parameter family c * min(alpha1, alpha2)
/// with c in [0, 1]; the simulated mean correlation is monotone in c, so c is
/// located by bisection on Monte Carlo estimates (n_sim draws each) until the
/// estimate is within 0.01 of the target.  The endpoints are exact: target 0
/// returns the zero vector and target 1 (which requires equal marginals, as
/// unequal ones cap the correlation below 1) returns the elementwise minimum.
inline Vec calibrate_delta(const Vec& alpha1, const Vec& alpha2, double target_r,
                           RngState& rng, int n_sim = 200000) {
  if (alpha1.size() != alpha2.size() || alpha1.size() < 2)
    throw validation_error("calibration needs two shape vectors of equal dimension >= 2");
  for (std::size_t l = 0; l < alpha1.size(); ++l)
    if (!(alpha1[l] > 0.0) || !(alpha2[l] > 0.0))
      throw validation_error("calibration shapes must be positive");
  if (!(target_r >= 0.0 && target_r <= 1.0))
    throw validation_error("target correlation must lie in [0, 1]");
  if (n_sim < 1000) throw validation_error("calibration needs n_sim >= 1000");

  const std::size_t J = alpha1.size();
  Vec floor_alpha(J);
  for (std::size_t l = 0; l < J; ++l) floor_alpha[l] = std::min(alpha1[l], alpha2[l]);

  if (target_r == 0.0) return Vec(J, 0.0);
  const bool equal_marginals = alpha1 == alpha2;
  if (target_r == 1.0) {
    if (!equal_marginals)
      throw validation_error(
          "correlation 1 is only reachable when both classifiers share the same shapes");
    return floor_alpha;
  }

  constexpr double kTol = 0.01;
  constexpr int kMaxIter = 40;

  // With unequal marginals the family tops out below 1; report the ceiling
  // when the target lies beyond it.
  if (!equal_marginals) {
    const double ceiling = detail::simulated_mean_correlation(rng, alpha1, alpha2, 1.0, n_sim);
    if (target_r > ceiling + kTol) {
      std::ostringstream msg;
      msg << "target correlation " << target_r << " is out of reach; these shapes top out near "
          << ceiling;
      throw numeric_error(msg.str());
    }
  }

  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < kMaxIter; ++it) {
    const double c = 0.5 * (lo + hi);
    const double r_hat = detail::simulated_mean_correlation(rng, alpha1, alpha2, c, n_sim);
    if (std::abs(r_hat - target_r) <= kTol) {
      Vec delta(J);
      for (std::size_t l = 0; l < J; ++l) delta[l] = c * floor_alpha[l];
      return delta;
    }
    (r_hat < target_r ? lo : hi) = c;
  }
  throw convergence_error("correlation calibration did not converge in 40 bisection steps");
}

}  // namespace corrfuse
