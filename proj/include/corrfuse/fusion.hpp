#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "corrfuse/density.hpp"
#include "corrfuse/logspace.hpp"
#include "corrfuse/mcmc.hpp"
#include "corrfuse/rng.hpp"
#include "corrfuse/simplex.hpp"
#include "corrfuse/types.hpp"

namespace corrfuse {

/// Convergence evidence from the correlated-model sampler.
struct CfmDiagnostics {
  double accept_shared = 0.0;  // acceptance rate of shared-component moves
  double accept_total = 0.0;   // acceptance rate of total moves
  double min_ess = 0.0;        // smallest effective sample size over class indicators
  double max_chain_tv = 0.0;   // worst TV between a single chain and the pooled posterior
  int n_kept = 0;              // retained draws across chains
  bool reduced_chain = false;  // true when the maximally correlated reduced sampler ran
};

struct FusionResult {
  Simplex posterior;
  std::optional<CfmDiagnostics> diagnostics;
};

/// Maximum-probability label; ties resolve to the lowest class index.
inline ClassLabel map_label(const Simplex& p) {
  std::size_t best = 0;
  for (std::size_t l = 1; l < p.dim(); ++l)
    if (p[l] > p[best]) best = l;
  return ClassLabel{static_cast<int>(best) + 1};
}

/// Independent opinion pool: renormalized elementwise product of the
/// classifier outputs.  A single output is returned unchanged.
inline FusionResult fuse_iop(const std::vector<Simplex>& outputs) {
  if (outputs.empty()) throw validation_error("fuse_iop: need >= 1 classifier output");
  const std::size_t J = outputs.front().dim();
  for (const Simplex& x : outputs)
    if (x.dim() != J) throw validation_error("fuse_iop: outputs have mismatched dimensions");
  if (outputs.size() == 1) return FusionResult{outputs.front(), std::nullopt};
  Vec score(J, 0.0);
  for (const Simplex& x : outputs)
    for (std::size_t l = 0; l < J; ++l) score[l] += std::log(x[l]);
  return FusionResult{simplex_from_log_scores(score), std::nullopt};
}

/// Independent fusion model: treats each classifier's output as a Dirichlet
/// observation whose shapes depend on the true class, and returns the class
/// posterior  p_j * prod_k Dirichlet(x^k; alpha_j^k), renormalized.
inline FusionResult fuse_ifm(const std::vector<Simplex>& outputs, const IfmParams& params) {
  validate_ifm_params(params);
  const int K = params.n_classifiers();
  const int J = params.n_classes();
  if (static_cast<int>(outputs.size()) != K)
    throw validation_error("fuse_ifm: expected " + std::to_string(K) + " classifier outputs");
  for (const Simplex& x : outputs)
    if (static_cast<int>(x.dim()) != J)
      throw validation_error("fuse_ifm: output dimension does not match the model");
  Vec score(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    double s = std::log(params.prior_p[static_cast<std::size_t>(j)]);
    for (int k = 0; k < K; ++k)
      s += log_dirichlet_pdf(outputs[static_cast<std::size_t>(k)],
                             params.alpha[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]);
    score[static_cast<std::size_t>(j)] = s;
  }
  return FusionResult{simplex_from_log_scores(score), std::nullopt};
}

/// Recalibrates a single classifier: the independent fusion model with K = 1.
inline FusionResult meta_classify(const Simplex& output, const IfmParams& params) {
  if (params.n_classifiers() != 1)
    throw validation_error("meta_classify: params must be restricted to one classifier");
  return fuse_ifm({output}, params);
}

inline FusionResult meta_classify(const Simplex& output, const IfmParams& params,
                                  int classifier_index) {
  return meta_classify(output, slice_classifier(params, classifier_index));
}

namespace detail {

/// How the correlated model's delta pattern partitions the sampler's latent
/// space.
enum class CfmRegime {
  standard,   // every coordinate either switched off for all classes or interior
  degenerate  // delta == alpha for every class, classifier and coordinate
};

inline CfmRegime classify_cfm_regime(const CfmParams& params) {
  const int J = params.ifm.n_classes();
  const int K = params.ifm.n_classifiers();
  int n_pinned = 0;
  for (int j = 0; j < J; ++j)
    for (int l = 0; l < J; ++l)
      for (int k = 0; k < K; ++k)
        n_pinned += (params.ifm.alpha[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]
                                     [static_cast<std::size_t>(l)] -
                         params.delta[static_cast<std::size_t>(j)][static_cast<std::size_t>(l)] ==
                     0.0);
  if (n_pinned == J * J * K) return CfmRegime::degenerate;
  if (n_pinned > 0)
    throw validation_error(
        "fuse_cfm: delta reaches alpha on some coordinates only; the sampler "
        "cannot move between a singular and a continuous class model");
  for (int l = 0; l < J; ++l) {
    const bool zero = params.delta[0][static_cast<std::size_t>(l)] == 0.0;
    for (int j = 1; j < J; ++j)
      if ((params.delta[static_cast<std::size_t>(j)][static_cast<std::size_t>(l)] == 0.0) != zero)
        throw validation_error(
            "fuse_cfm: delta's zero pattern differs across classes on coordinate " +
            std::to_string(l + 1) +
            "; the shared component cannot be both pinned at zero and free");
  }
  return CfmRegime::standard;
}

/// Per-chain record of retained class draws.
struct ClassDraws {
  std::vector<std::vector<std::int8_t>> per_chain;  // [chain][kept draw]
};

inline FusionResult summarize_class_draws(const ClassDraws& draws, int J,
                                          double accept_shared, double accept_total,
                                          bool reduced) {
  Vec counts(static_cast<std::size_t>(J), 0.0);
  int total = 0;
  for (const auto& chain : draws.per_chain) {
    for (std::int8_t t : chain) counts[static_cast<std::size_t>(t)] += 1.0;
    total += static_cast<int>(chain.size());
  }
  Vec freq(counts);
  for (double& c : freq) c /= static_cast<double>(total);

  CfmDiagnostics diag;
  diag.accept_shared = accept_shared;
  diag.accept_total = accept_total;
  diag.n_kept = total;
  diag.reduced_chain = reduced;

  std::size_t shortest = SIZE_MAX;
  for (const auto& chain : draws.per_chain) shortest = std::min(shortest, chain.size());
  if (shortest >= 4) {
    double min_ess = kPosInf;
    for (int j = 0; j < J; ++j) {
      std::vector<Vec> indicator_chains;
      indicator_chains.reserve(draws.per_chain.size());
      for (const auto& chain : draws.per_chain) {
        Vec ind(chain.size());
        for (std::size_t i = 0; i < chain.size(); ++i)
          ind[i] = chain[i] == j ? 1.0 : 0.0;
        indicator_chains.push_back(std::move(ind));
      }
      min_ess = std::min(min_ess, effective_sample_size(indicator_chains));
    }
    diag.min_ess = min_ess;
  } else {
    diag.min_ess = static_cast<double>(total);
  }

  const Simplex pooled = make_simplex(freq);
  double max_tv = 0.0;
  for (const auto& chain : draws.per_chain) {
    Vec cf(static_cast<std::size_t>(J), 0.0);
    for (std::int8_t t : chain) cf[static_cast<std::size_t>(t)] += 1.0;
    for (double& c : cf) c /= static_cast<double>(chain.size());
    max_tv = std::max(max_tv, total_variation(pooled, make_simplex(cf)));
  }
  diag.max_chain_tv = max_tv;
  return FusionResult{pooled, diag};
}

}  // namespace detail

/// Class posterior under the correlated fusion model, by Metropolis-within-
/// Gibbs over the augmented latents (shared components D, totals T) and the
/// class label.  Latents move by adaptive log-scale random walks (adaptation
/// frozen after burn-in); the label is drawn from its exact conditional.
///
/// delta == alpha everywhere concentrates both outputs on a common
/// distribution; that case runs a reduced chain over (class, total) on the
/// shared manifold and requires x1 == x2 (within 1e-12 per coordinate).
/// A delta with a class-dependent zero pattern, or one that reaches alpha on
/// only some coordinates, leaves no single connected latent space and is
/// rejected.
inline FusionResult fuse_cfm(const CorrelatedPair& x, const CfmParams& params,
                             const McmcConfig& cfg = McmcConfig::fusion_defaults()) {
  validate_cfm_params(params);
  validate_mcmc(cfg);
  if (params.ifm.n_classifiers() != 2)
    throw validation_error("fuse_cfm: the correlated model covers exactly 2 classifiers");
  const int J = params.ifm.n_classes();
  if (static_cast<int>(x.x1.dim()) != J || static_cast<int>(x.x2.dim()) != J)
    throw validation_error("fuse_cfm: output dimension does not match the model");

  const detail::CfmRegime regime = detail::classify_cfm_regime(params);
  const std::size_t Ju = static_cast<std::size_t>(J);
  const int n_chains = cfg.n_chains;

  if (regime == detail::CfmRegime::degenerate) {
    for (int l = 0; l < J; ++l)
      if (std::abs(x.x1[static_cast<std::size_t>(l)] - x.x2[static_cast<std::size_t>(l)]) > 1e-12)
        throw numeric_error(
            "fuse_cfm: maximally correlated model has no feasible latent "
            "initialization for distinct classifier outputs");

    // On the shared manifold both gamma vectors coincide, so the state is
    // just (class, total): the likelihood of class j given the total T is
    // prod_l Gamma(x_l*T; delta_j_l) * T^(J-1).
    Vec log_x(Ju);
    for (std::size_t l = 0; l < Ju; ++l) log_x[l] = std::log(x.x1[l]);

    Vec class_const(Ju), sum_delta(Ju), dot_dm1_logx(Ju);
    for (std::size_t j = 0; j < Ju; ++j) {
      double c = std::log(params.ifm.prior_p[j]);
      double sd = 0.0, dot = 0.0;
      for (std::size_t l = 0; l < Ju; ++l) {
        const double dl = params.delta[j][l];
        c -= std::lgamma(dl);
        sd += dl;
        dot += (dl - 1.0) * log_x[l];
      }
      class_const[j] = c + dot;
      sum_delta[j] = sd;
      dot_dm1_logx[j] = dot;
    }
    // Initial class: mode of the exact posterior (Dirichlet scores).
    std::size_t j0 = 0;
    {
      Vec score(Ju);
      for (std::size_t j = 0; j < Ju; ++j)
        score[j] = class_const[j] + std::lgamma(sum_delta[j]);
      for (std::size_t j = 1; j < Ju; ++j)
        if (score[j] > score[j0]) j0 = j;
    }

    detail::ClassDraws draws;
    draws.per_chain.resize(static_cast<std::size_t>(n_chains));
    double accept_total_sum = 0.0;
    for (int c = 0; c < n_chains; ++c) {
      RngState rng = RngState(cfg.seed).derive(static_cast<std::uint64_t>(c));
      StepTuner tuner(0.5, 0.35, cfg.adapt_window);
      std::size_t t = j0;
      double total = sum_delta[j0];
      double log_total = std::log(total);
      auto& kept = draws.per_chain[static_cast<std::size_t>(c)];
      kept.reserve(static_cast<std::size_t>((cfg.n_iter - cfg.n_burnin) / cfg.thin + 1));
      Vec w(Ju);
      for (int it = 0; it < cfg.n_iter; ++it) {
        if (it == cfg.n_burnin) tuner.freeze();
        // Total move: log-scale random walk with Jacobian correction.
        {
          const double z = tuner.step() * rng.normal();
          const double log_tp = log_total + z;
          const double tp = std::exp(log_tp);
          // -T + (sum_delta - J) log T + (J-1) log T, plus proposal Jacobian.
          const double diff = -(tp - total) + (sum_delta[t] - 1.0) * z + z;
          if (std::log(rng.uniform()) < diff) {
            total = tp;
            log_total = log_tp;
            tuner.record(true);
          } else {
            tuner.record(false);
          }
        }
        // Exact class draw given the total.
        {
          for (std::size_t j = 0; j < Ju; ++j)
            w[j] = class_const[j] + (sum_delta[j] - static_cast<double>(J)) * log_total;
          const double m = *std::max_element(w.begin(), w.end());
          double sum = 0.0;
          for (std::size_t j = 0; j < Ju; ++j) {
            w[j] = std::exp(w[j] - m);
            sum += w[j];
          }
          const double u = rng.uniform() * sum;
          double cum = 0.0;
          t = Ju - 1;
          for (std::size_t j = 0; j < Ju; ++j) {
            cum += w[j];
            if (u < cum) {
              t = j;
              break;
            }
          }
        }
        if (it >= cfg.n_burnin && (it - cfg.n_burnin) % cfg.thin == 0)
          kept.push_back(static_cast<std::int8_t>(t));
      }
      accept_total_sum += tuner.acceptance_rate();
    }
    return detail::summarize_class_draws(draws, J, 0.0,
                                         accept_total_sum / n_chains, true);
  }

  // Standard regime: shared components are sampled on the coordinates where
  // delta > 0 and pinned at zero elsewhere.
  std::vector<std::size_t> active;
  for (std::size_t l = 0; l < Ju; ++l)
    if (params.delta[0][l] > 0.0) active.push_back(l);

  // Flattened per-class constants: prior, lgamma normalizers, shape-minus-one
  // coefficients for the shared and private components.
  Vec class_const(Ju), dm1(Ju * Ju), am1_1(Ju * Ju), am1_2(Ju * Ju);
  for (std::size_t j = 0; j < Ju; ++j) {
    double c = std::log(params.ifm.prior_p[j]);
    for (std::size_t l = 0; l < Ju; ++l) {
      const double dl = params.delta[j][l];
      const double a1 = params.ifm.alpha[0][j][l] - dl;
      const double a2 = params.ifm.alpha[1][j][l] - dl;
      dm1[j * Ju + l] = dl - 1.0;
      am1_1[j * Ju + l] = a1 - 1.0;
      am1_2[j * Ju + l] = a2 - 1.0;
      c -= std::lgamma(a1) + std::lgamma(a2);
      if (dl > 0.0) c -= std::lgamma(dl);
    }
    class_const[j] = c;
  }

  // Initial class: mode of the independent-model posterior.
  std::size_t j0 = 0;
  {
    const FusionResult ifm = fuse_ifm({x.x1, x.x2}, params.ifm);
    j0 = static_cast<std::size_t>(map_label(ifm.posterior).index());
  }
  Vec total_init(2);
  for (int k = 0; k < 2; ++k) {
    double s = 0.0;
    for (std::size_t l = 0; l < Ju; ++l) s += params.ifm.alpha[static_cast<std::size_t>(k)][j0][l];
    total_init[static_cast<std::size_t>(k)] = s;
  }

  detail::ClassDraws draws;
  draws.per_chain.resize(static_cast<std::size_t>(n_chains));
  double accept_shared_sum = 0.0, accept_total_sum = 0.0;
  int shared_tuners = 0;

  Vec x1(Ju), x2(Ju);
  for (std::size_t l = 0; l < Ju; ++l) {
    x1[l] = x.x1[l];
    x2[l] = x.x2[l];
  }

  for (int c = 0; c < n_chains; ++c) {
    RngState rng = RngState(cfg.seed).derive(static_cast<std::uint64_t>(c));
    std::size_t t = j0;
    Vec d(Ju, 0.0), log_d(Ju, kNegInf);
    Vec total(total_init), log_total(2);
    for (int k = 0; k < 2; ++k)
      log_total[static_cast<std::size_t>(k)] = std::log(total[static_cast<std::size_t>(k)]);
    for (std::size_t l : active) {
      d[l] = 0.5 * std::min(x1[l] * total[0], x2[l] * total[1]);
      log_d[l] = std::log(d[l]);
    }

    std::vector<StepTuner> tune_d(active.size(), StepTuner(0.5, 0.35, cfg.adapt_window));
    std::vector<StepTuner> tune_t(2, StepTuner(0.5, 0.35, cfg.adapt_window));
    auto& kept = draws.per_chain[static_cast<std::size_t>(c)];
    kept.reserve(static_cast<std::size_t>((cfg.n_iter - cfg.n_burnin) / cfg.thin + 1));
    Vec w(Ju);

    for (int it = 0; it < cfg.n_iter; ++it) {
      if (it == cfg.n_burnin) {
        for (auto& tn : tune_d) tn.freeze();
        for (auto& tn : tune_t) tn.freeze();
      }

      // Shared-component moves.  Local target in D_l:
      //   (delta_tl - 1) log D + D + sum_k (a_tlk - 1) log(x_l^k T^k - D).
      for (std::size_t ai = 0; ai < active.size(); ++ai) {
        const std::size_t l = active[ai];
        StepTuner& tn = tune_d[ai];
        const double z = tn.step() * rng.normal();
        const double log_dp = log_d[l] + z;
        const double dp = std::exp(log_dp);
        const double a1_cur = x1[l] * total[0] - d[l];
        const double a2_cur = x2[l] * total[1] - d[l];
        const double a1_new = x1[l] * total[0] - dp;
        const double a2_new = x2[l] * total[1] - dp;
        bool ok = a1_new > 0.0 && a2_new > 0.0;
        if (ok) {
          const double diff = (dm1[t * Ju + l] + 1.0) * z + (dp - d[l]) +
                              am1_1[t * Ju + l] * std::log(a1_new / a1_cur) +
                              am1_2[t * Ju + l] * std::log(a2_new / a2_cur);
          ok = std::log(rng.uniform()) < diff;
        }
        if (ok) {
          d[l] = dp;
          log_d[l] = log_dp;
        }
        tn.record(ok);
      }

      // Total moves.  Local target in T^k:
      //   -T + sum_l (a_tlk - 1) log(x_l^k T - d_l) + (J - 1) log T.
      for (int k = 0; k < 2; ++k) {
        const Vec& xk = k == 0 ? x1 : x2;
        const Vec& am1 = k == 0 ? am1_1 : am1_2;
        StepTuner& tn = tune_t[static_cast<std::size_t>(k)];
        const double z = tn.step() * rng.normal();
        const double log_tp = log_total[static_cast<std::size_t>(k)] + z;
        const double tp = std::exp(log_tp);
        const double t_cur = total[static_cast<std::size_t>(k)];
        double diff = -(tp - t_cur) + (static_cast<double>(J) - 1.0) * z + z;
        bool ok = true;
        for (std::size_t l = 0; l < Ju && ok; ++l) {
          const double a_new = xk[l] * tp - d[l];
          if (a_new <= 0.0) {
            ok = false;
            break;
          }
          diff += am1[t * Ju + l] * std::log(a_new / (xk[l] * t_cur - d[l]));
        }
        ok = ok && std::log(rng.uniform()) < diff;
        if (ok) {
          total[static_cast<std::size_t>(k)] = tp;
          log_total[static_cast<std::size_t>(k)] = log_tp;
        }
        tn.record(ok);
      }

      // Exact class draw given the latents.
      {
        for (std::size_t j = 0; j < Ju; ++j) w[j] = class_const[j];
        for (std::size_t l : active)
          for (std::size_t j = 0; j < Ju; ++j) w[j] += dm1[j * Ju + l] * log_d[l];
        for (std::size_t l = 0; l < Ju; ++l) {
          const double la1 = std::log(x1[l] * total[0] - d[l]);
          const double la2 = std::log(x2[l] * total[1] - d[l]);
          for (std::size_t j = 0; j < Ju; ++j)
            w[j] += am1_1[j * Ju + l] * la1 + am1_2[j * Ju + l] * la2;
        }
        double m = kNegInf;
        for (double v : w) m = std::max(m, v);
        if (m == kNegInf)
          throw numeric_error("fuse_cfm: every class has zero density at the current latents");
        double sum = 0.0;
        for (std::size_t j = 0; j < Ju; ++j) {
          w[j] = std::exp(w[j] - m);
          sum += w[j];
        }
        const double u = rng.uniform() * sum;
        double cum = 0.0;
        t = Ju - 1;
        for (std::size_t j = 0; j < Ju; ++j) {
          cum += w[j];
          if (u < cum) {
            t = j;
            break;
          }
        }
      }

      if (it >= cfg.n_burnin && (it - cfg.n_burnin) % cfg.thin == 0)
        kept.push_back(static_cast<std::int8_t>(t));
    }

    for (const StepTuner& tn : tune_d) {
      accept_shared_sum += tn.acceptance_rate();
      ++shared_tuners;
    }
    for (const StepTuner& tn : tune_t) accept_total_sum += tn.acceptance_rate();
  }

  const double accept_shared =
      shared_tuners == 0 ? 0.0 : accept_shared_sum / static_cast<double>(shared_tuners);
  return detail::summarize_class_draws(draws, J, accept_shared,
                                       accept_total_sum / (2.0 * n_chains), false);
}

}  // namespace corrfuse
