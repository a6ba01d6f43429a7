#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "corrfuse/errors.hpp"
#include "corrfuse/rng.hpp"
#include "corrfuse/simplex.hpp"
#include "corrfuse/types.hpp"

namespace corrfuse {

/// Gamma(shape, scale) variate.
///
/// shape >= 1 uses the Marsaglia-Tsang (2000) squeeze; shape in (0, 1) is
/// boosted through Gamma(shape + 1) * U^(1/shape); shape == 0 is the
/// degenerate point mass at zero (the value a shared component takes when a
/// dimension's coupling is switched off).
inline double sample_gamma(RngState& rng, double shape, double scale = 1.0) {
  if (!std::isfinite(shape) || shape < 0.0)
    throw validation_error("gamma shape must be finite and >= 0");
  if (!std::isfinite(scale) || scale <= 0.0)
    throw validation_error("gamma scale must be finite and > 0");
  if (shape == 0.0) return 0.0;
  if (shape < 1.0) {
    const double u = rng.uniform();
    return sample_gamma(rng, shape + 1.0, scale) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
  }
}

/// Dirichlet(alpha) variate: normalized independent gammas.
inline Simplex sample_dirichlet(RngState& rng, const Vec& alpha) {
  if (alpha.size() < 2) throw validation_error("dirichlet needs dimension >= 2");
  for (double a : alpha)
    if (!std::isfinite(a) || a <= 0.0)
      throw validation_error("dirichlet shapes must be finite and > 0");
  Vec y(alpha.size());
  // With very small shapes every gamma can underflow to zero; redraw.
  for (int attempt = 0; attempt < 100; ++attempt) {
    bool any_positive = false;
    for (std::size_t l = 0; l < alpha.size(); ++l) {
      y[l] = sample_gamma(rng, alpha[l]);
      any_positive = any_positive || y[l] > 0.0;
    }
    if (any_positive) return make_simplex(y);
  }
  throw numeric_error("dirichlet sampling underflowed to zero 100 times");
}

/// A pair of categorical distributions drawn from the correlated Dirichlet
/// construction.
struct CorrelatedPair {
  Simplex x1;
  Simplex x2;
};

/// Correlated Dirichlet pair: per dimension l draw a shared component
/// D_l ~ Gamma(delta_l) and private components A_l^k ~ Gamma(alpha_l^k -
/// delta_l), then normalize A^k + D per classifier.  The marginals are
/// Dirichlet(alpha1) and Dirichlet(alpha2) for any valid delta; delta == 0
/// gives independence, and delta == alpha1 == alpha2 makes the pair equal
/// with probability one.
inline CorrelatedPair sample_correlated_dirichlet(RngState& rng, const Vec& alpha1,
                                                  const Vec& alpha2, const Vec& delta) {
  const std::size_t J = delta.size();
  if (J < 2) throw validation_error("correlated dirichlet needs dimension >= 2");
  if (alpha1.size() != J || alpha2.size() != J)
    throw validation_error("correlated dirichlet: shape vectors must share one dimension");
  for (std::size_t l = 0; l < J; ++l) {
    if (!std::isfinite(alpha1[l]) || alpha1[l] <= 0.0 ||
        !std::isfinite(alpha2[l]) || alpha2[l] <= 0.0)
      throw validation_error("correlated dirichlet: alpha entries must be > 0");
    if (!std::isfinite(delta[l]) || delta[l] < 0.0 ||
        delta[l] > std::min(alpha1[l], alpha2[l]))
      throw validation_error("correlated dirichlet: delta[" + std::to_string(l + 1) +
                             "] outside [0, min(alpha1, alpha2)]");
  }
  Vec y1(J), y2(J);
  for (int attempt = 0; attempt < 100; ++attempt) {
    bool pos1 = false, pos2 = false;
    for (std::size_t l = 0; l < J; ++l) {
      const double shared = sample_gamma(rng, delta[l]);
      y1[l] = sample_gamma(rng, alpha1[l] - delta[l]) + shared;
      y2[l] = sample_gamma(rng, alpha2[l] - delta[l]) + shared;
      pos1 = pos1 || y1[l] > 0.0;
      pos2 = pos2 || y2[l] > 0.0;
    }
    if (pos1 && pos2) return CorrelatedPair{make_simplex(y1), make_simplex(y2)};
  }
  throw numeric_error("correlated dirichlet sampling underflowed to zero 100 times");
}

/// Extension of the shared-component construction to K > 2 classifiers: one
/// component per unordered classifier pair plus one global component shared
/// by all K.  deltas is indexed pair-first in lexicographic order
/// ((1,2), (1,3), ..., (K-1,K)) with the global vector last, and each
/// classifier's total shared mass per dimension must stay <= alpha_l^k so
/// the Dirichlet(alpha^k) marginals are preserved.  The two-classifier
/// model above is the special case K = 2 with no global component.
inline std::vector<Simplex> sample_correlated_dirichlet_multi(RngState& rng,
                                                              const Mat& alphas,
                                                              const Mat& deltas) {
  const std::size_t K = alphas.size();
  if (K < 2) throw validation_error("multi correlated dirichlet needs >= 2 classifiers");
  const std::size_t J = alphas.front().size() ? alphas.front().size() : 0;
  for (const auto& a : alphas)
    if (a.size() != J || J < 2)
      throw validation_error("multi correlated dirichlet: ragged alpha");
  const std::size_t n_pairs = K * (K - 1) / 2;
  if (deltas.size() != n_pairs + 1)
    throw validation_error("multi correlated dirichlet: need one delta vector per pair plus a global one");
  for (const Vec& d : deltas)
    if (d.size() != J)
      throw validation_error("multi correlated dirichlet: delta vector has wrong dimension");

  // Residual private shape per classifier and dimension.
  Mat private_shape(K, Vec(J));
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t l = 0; l < J; ++l) {
      double shared = deltas[n_pairs][l];
      std::size_t p = 0;
      for (std::size_t k1 = 0; k1 + 1 < K; ++k1)
        for (std::size_t k2 = k1 + 1; k2 < K; ++k2, ++p)
          if (k1 == k || k2 == k) shared += deltas[p][l];
      const double a = alphas[k][l] - shared;
      if (!(a >= 0.0))
        throw validation_error("multi correlated dirichlet: shared shapes exceed alpha");
      private_shape[k][l] = a;
    }

  Mat y(K, Vec(J, 0.0));
  for (std::size_t l = 0; l < J; ++l) {
    const double global = sample_gamma(rng, deltas[n_pairs][l]);
    for (std::size_t k = 0; k < K; ++k) y[k][l] = global;
    std::size_t p = 0;
    for (std::size_t k1 = 0; k1 + 1 < K; ++k1)
      for (std::size_t k2 = k1 + 1; k2 < K; ++k2, ++p) {
        const double shared = sample_gamma(rng, deltas[p][l]);
        y[k1][l] += shared;
        y[k2][l] += shared;
      }
    for (std::size_t k = 0; k < K; ++k)
      y[k][l] += sample_gamma(rng, private_shape[k][l]);
  }
  std::vector<Simplex> out;
  out.reserve(K);
  for (std::size_t k = 0; k < K; ++k) out.push_back(make_simplex(y[k]));
  return out;
}

/// Categorical draw from a Simplex; returns a 1-based label.
inline ClassLabel sample_class(RngState& rng, const Simplex& p) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  for (std::size_t l = 0; l + 1 < p.dim(); ++l) {
    cumulative += p[l];
    if (u < cumulative) return ClassLabel{static_cast<int>(l) + 1};
  }
  return ClassLabel{static_cast<int>(p.dim())};
}

}  // namespace corrfuse
