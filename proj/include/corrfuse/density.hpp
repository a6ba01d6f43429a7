#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "corrfuse/errors.hpp"
#include "corrfuse/logspace.hpp"
#include "corrfuse/rng.hpp"
#include "corrfuse/sampling.hpp"
#include "corrfuse/simplex.hpp"
#include "corrfuse/types.hpp"

namespace corrfuse {

/// log density of Gamma(shape, scale) at y.  Off-support y gives -inf.
/// shape == 0 denotes the point mass at zero: 0 at y == 0, -inf elsewhere
/// (the convention used for switched-off shared components).
inline double log_gamma_pdf(double y, double shape, double scale = 1.0) {
  if (!std::isfinite(shape) || shape < 0.0)
    throw validation_error("log_gamma_pdf: shape must be finite and >= 0");
  if (!std::isfinite(scale) || scale <= 0.0)
    throw validation_error("log_gamma_pdf: scale must be finite and > 0");
  if (std::isnan(y)) throw validation_error("log_gamma_pdf: y is NaN");
  if (shape == 0.0) return y == 0.0 ? 0.0 : kNegInf;
  if (!(y > 0.0) || !std::isfinite(y)) return kNegInf;
  return -std::lgamma(shape) - shape * std::log(scale) +
         (shape - 1.0) * std::log(y) - y / scale;
}

/// log density of Dirichlet(alpha) at x.
inline double log_dirichlet_pdf(const Simplex& x, const Vec& alpha) {
  if (x.dim() != alpha.size())
    throw validation_error("log_dirichlet_pdf: dimension mismatch");
  double a0 = 0.0, s = 0.0;
  for (std::size_t l = 0; l < alpha.size(); ++l) {
    const double a = alpha[l];
    if (!std::isfinite(a) || a <= 0.0)
      throw validation_error("log_dirichlet_pdf: shapes must be finite and > 0");
    a0 += a;
    s += (a - 1.0) * std::log(x[l]) - std::lgamma(a);
  }
  return s + std::lgamma(a0);
}

/// Latent variables that augment a correlated pair: the shared gamma
/// components d[l] and the two normalization totals of the underlying gamma
/// vectors.  Conditioned on them, the pair's joint density is tractable.
struct AugmentedLatents {
  Vec d;       // size J, d[l] >= 0
  Vec totals;  // size K (= 2), totals[k] > 0
};

/// log joint density of (x1, x2, latents) under the correlated model with
/// per-dimension shapes (alpha1, alpha2) and shared shapes delta:
///
///   sum_l log Gamma(d_l; delta_l)
///   + sum_k [ sum_l log Gamma(x_l^k T^k - d_l; alpha_l^k - delta_l)
///             + (J-1) log T^k ]
///
/// The (T^k)^(J-1) factors are the Jacobian of mapping the gamma vector to
/// (simplex, total).  Support violations (negative private components,
/// nonpositive totals) yield -inf rather than an error.
inline double log_augmented_joint(const CorrelatedPair& x, const AugmentedLatents& lat,
                                  const Vec& alpha1, const Vec& alpha2,
                                  const Vec& delta) {
  const std::size_t J = delta.size();
  if (x.x1.dim() != J || x.x2.dim() != J || alpha1.size() != J || alpha2.size() != J)
    throw validation_error("log_augmented_joint: dimension mismatch");
  if (lat.d.size() != J || lat.totals.size() != 2)
    throw validation_error("log_augmented_joint: latent dimension mismatch");
  for (std::size_t l = 0; l < J; ++l)
    if (delta[l] < 0.0 || delta[l] > std::min(alpha1[l], alpha2[l]))
      throw validation_error("log_augmented_joint: delta outside [0, min(alpha1, alpha2)]");

  double s = 0.0;
  for (std::size_t l = 0; l < J; ++l) {
    s += log_gamma_pdf(lat.d[l], delta[l]);
    if (s == kNegInf) return kNegInf;
  }
  for (int k = 0; k < 2; ++k) {
    const Simplex& xk = k == 0 ? x.x1 : x.x2;
    const Vec& ak = k == 0 ? alpha1 : alpha2;
    const double total = lat.totals[static_cast<std::size_t>(k)];
    if (!(total > 0.0) || !std::isfinite(total)) return kNegInf;
    for (std::size_t l = 0; l < J; ++l) {
      s += log_gamma_pdf(xk[l] * total - lat.d[l], ak[l] - delta[l]);
      if (s == kNegInf) return kNegInf;
    }
    s += (static_cast<double>(J) - 1.0) * std::log(total);
  }
  return s;
}

namespace detail {

/// log of integral_0^inf  prod_l Gamma_pdf(x_l*T - d_l; a_l) * T^(J-1) dT.
///
/// This marginalizes the total T out of one classifier's gamma
/// representation given the shared components d.  With d == 0 it equals the
/// Dirichlet(a) log density at x exactly, which the tests exploit as an
/// independent oracle.  Integration runs on the log axis v = log(T - T_min)
/// to flatten the endpoint singularity, with Gauss-Kronrod refinement.
inline double log_total_integral(const Simplex& x, const Vec& d, const Vec& a) {
  namespace quad = boost::math::quadrature;
  const std::size_t J = x.dim();
  if (d.size() != J || a.size() != J)
    throw validation_error("log_total_integral: dimension mismatch");

  double t_min = 0.0;
  double sum_a = 0.0, sum_d = 0.0, const_term = 0.0;
  for (std::size_t l = 0; l < J; ++l) {
    if (!(a[l] > 0.0)) throw validation_error("log_total_integral: shapes must be > 0");
    if (d[l] < 0.0) throw validation_error("log_total_integral: d must be >= 0");
    if (d[l] > 0.0) t_min = std::max(t_min, d[l] / x[l]);
    sum_a += a[l];
    sum_d += d[l];
    const_term -= std::lgamma(a[l]);
  }
  const_term += sum_d;  // from sum_l -(x_l*T - d_l) = -T + sum_d

  // log integrand over T > t_min, excluding the -T + sum_d constant split.
  const auto log_f = [&](double t) {
    double s = const_term - t + (static_cast<double>(J) - 1.0) * std::log(t);
    for (std::size_t l = 0; l < J; ++l) {
      const double private_part = x[l] * t - d[l];
      if (!(private_part > 0.0)) return kNegInf;
      s += (a[l] - 1.0) * std::log(private_part);
    }
    return s;
  };

  // Slope of the log integrand (in v) at the lower support edge; if it is
  // not positive the integral diverges there.
  double eps_low;
  if (t_min == 0.0) {
    eps_low = sum_a;
  } else {
    eps_low = 1.0;
    for (std::size_t l = 0; l < J; ++l)
      if (d[l] > 0.0 && d[l] / x[l] >= t_min * (1.0 - 1e-12)) eps_low += a[l] - 1.0;
  }
  if (!(eps_low > 0.0))
    throw numeric_error("total integral diverges at the lower support edge");

  const auto g = [&](double v) { return log_f(t_min + std::exp(v)) + v; };

  // Coarse scan for the mode in v, then golden-section refinement.
  const double v_center = std::log(std::max(sum_a + static_cast<double>(J), 2.0));
  double v_best = v_center, g_best = kNegInf;
  for (double v = std::min(v_center, 0.0) - 40.0; v <= std::max(v_center, 0.0) + 8.0;
       v += 0.5) {
    const double gv = g(v);
    if (gv > g_best) {
      g_best = gv;
      v_best = v;
    }
  }
  {
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double lo = v_best - 0.5, hi = v_best + 0.5;
    double m1 = hi - phi * (hi - lo), m2 = lo + phi * (hi - lo);
    double g1 = g(m1), g2 = g(m2);
    for (int it = 0; it < 40; ++it) {
      if (g1 < g2) {
        lo = m1;
        m1 = m2;
        g1 = g2;
        m2 = lo + phi * (hi - lo);
        g2 = g(m2);
      } else {
        hi = m2;
        m2 = m1;
        g2 = g1;
        m1 = hi - phi * (hi - lo);
        g1 = g(m1);
      }
    }
    v_best = 0.5 * (lo + hi);
    g_best = std::max(g_best, g(v_best));
  }

  // Expand until the tails are negligible.  The lower tail decays like
  // exp(eps_low * v), so the step is scaled by 1/eps_low when that is small.
  const double drop_needed = 60.0 + std::max(0.0, -std::log(eps_low));
  const double step_lo = std::max(0.5, 0.5 / std::min(eps_low, 1.0));
  double v_lo = v_best;
  for (int i = 0; i < 2000 && g(v_lo) > g_best - drop_needed; ++i) v_lo -= step_lo;
  double v_hi = v_best;
  for (int i = 0; i < 2000 && g(v_hi) > g_best - 80.0; ++i) v_hi += 0.5;

  const auto f = [&](double v) { return std::exp(g(v) - g_best); };
  double error = 0.0;
  const double integral = quad::gauss_kronrod<double, 31>::integrate(
      f, v_lo, v_hi, 12, 1e-7, &error);
  // A relative integral error of eps costs about eps nats on this draw's log
  // density, and consumers of the averaged estimate tolerate ~1e-2 nats, so
  // only refuse when the adaptive scheme is off by more than 1e-3.  Wide
  // integration windows (tiny eps_low) occasionally stop near 1e-4.
  if (!(integral > 0.0) || !std::isfinite(integral) || error > 1e-3 * integral)
    throw numeric_error("total integral quadrature did not converge (estimate " +
                        std::to_string(integral) + ", error bound " +
                        std::to_string(error) + ")");
  return g_best + std::log(integral);
}

}  // namespace detail

/// Monte Carlo estimate of the log joint density of a correlated pair under
/// per-class shapes (alpha1, alpha2) and shared shapes delta: the shared
/// components are sampled from their gamma laws and, for each draw, the two
/// classifier totals are integrated out by adaptive quadrature; the draws
/// are averaged in log space.
///
/// The fully degenerate model delta == alpha1 == alpha2 concentrates on
/// x1 == x2; the estimate is +inf there and -inf for x1 != x2.  A delta that
/// reaches alpha on only some coordinates leaves no continuous joint density
/// to estimate and is rejected.
inline double estimate_log_likelihood(const CorrelatedPair& x, const Vec& alpha1,
                                      const Vec& alpha2, const Vec& delta, int n_mc,
                                      RngState& rng) {
  const std::size_t J = delta.size();
  if (x.x1.dim() != J || x.x2.dim() != J || alpha1.size() != J || alpha2.size() != J)
    throw validation_error("estimate_log_likelihood: dimension mismatch");
  if (n_mc < 1) throw validation_error("estimate_log_likelihood: n_mc must be >= 1");
  int n_pinned = 0;
  for (std::size_t l = 0; l < J; ++l) {
    if (delta[l] < 0.0 || delta[l] > std::min(alpha1[l], alpha2[l]))
      throw validation_error("estimate_log_likelihood: delta outside [0, min(alpha1, alpha2)]");
    n_pinned += (alpha1[l] - delta[l] == 0.0) + (alpha2[l] - delta[l] == 0.0);
  }
  if (n_pinned == static_cast<int>(2 * J)) {
    for (std::size_t l = 0; l < J; ++l)
      if (std::abs(x.x1[l] - x.x2[l]) > 1e-12) return kNegInf;
    return kPosInf;  // density concentrated on the diagonal x1 == x2
  }
  if (n_pinned > 0)
    throw validation_error(
        "estimate_log_likelihood: delta reaches alpha on some coordinates only; "
        "no continuous joint density exists");

  Vec a1(J), a2(J);
  bool all_zero = true;
  for (std::size_t l = 0; l < J; ++l) {
    a1[l] = alpha1[l] - delta[l];
    a2[l] = alpha2[l] - delta[l];
    all_zero = all_zero && delta[l] == 0.0;
  }
  // With delta == 0 the shared components are identically zero and every
  // draw evaluates the same integrals.
  const int n_draws = all_zero ? 1 : n_mc;

  Vec d(J, 0.0), values(static_cast<std::size_t>(n_draws));
  for (int m = 0; m < n_draws; ++m) {
    for (std::size_t l = 0; l < J; ++l) d[l] = sample_gamma(rng, delta[l]);
    values[static_cast<std::size_t>(m)] = detail::log_total_integral(x.x1, d, a1) +
                                          detail::log_total_integral(x.x2, d, a2);
  }
  return log_sum_exp(values) - std::log(static_cast<double>(n_draws));
}

}  // namespace corrfuse
