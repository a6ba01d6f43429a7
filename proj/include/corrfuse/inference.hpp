#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "corrfuse/errors.hpp"
#include "corrfuse/mcmc.hpp"
#include "corrfuse/rng.hpp"
#include "corrfuse/sampling.hpp"
#include "corrfuse/simplex.hpp"
#include "corrfuse/types.hpp"

namespace corrfuse {

/// Posterior summary of an independent-model fit.
struct IfmPosterior {
  IfmParams point;  // posterior means; prior_p from empirical class frequencies
  std::vector<std::vector<std::vector<ParamStat>>> alpha_stats;  // [k][j][l]
  double accept_rate = 0.0;
  double max_rhat = 1.0;
  std::vector<std::string> warnings;
};

/// Posterior summary of a correlated-model fit.  alpha_stats is empty when
/// the shapes were held fixed (stepwise fitting).
struct CfmPosterior {
  CfmParams point;
  std::vector<std::vector<std::vector<ParamStat>>> alpha_stats;  // [k][j][l]
  std::vector<std::vector<ParamStat>> delta_stats;               // [j][l]
  double accept_rate = 0.0;
  double max_rhat = 1.0;
  std::vector<std::string> warnings;
};

namespace detail {

/// Examples in canonical order (label, then outputs lexicographically), so
/// that results are invariant to the order data arrived in.
inline std::vector<LabeledExample> sorted_examples(const LabeledDataset& data) {
  std::vector<LabeledExample> out = data.examples;
  std::sort(out.begin(), out.end(), [](const LabeledExample& a, const LabeledExample& b) {
    if (a.label.value != b.label.value) return a.label.value < b.label.value;
    for (std::size_t k = 0; k < a.outputs.size(); ++k) {
      const Vec& pa = a.outputs[k].probs();
      const Vec& pb = b.outputs[k].probs();
      if (pa != pb) return pa < pb;
    }
    return false;
  });
  return out;
}

inline std::vector<std::vector<std::size_t>> indices_by_class(
    const std::vector<LabeledExample>& examples, int J) {
  std::vector<std::vector<std::size_t>> idx(static_cast<std::size_t>(J));
  for (std::size_t i = 0; i < examples.size(); ++i)
    idx[static_cast<std::size_t>(examples[i].label.index())].push_back(i);
  return idx;
}

/// Method-of-moments Dirichlet shapes, clamped to a sane range, used only to
/// start the chains near the data.
inline Vec moment_init_alpha(const std::vector<LabeledExample>& examples,
                             const std::vector<std::size_t>& idx, std::size_t k, int J) {
  const std::size_t Ju = static_cast<std::size_t>(J);
  const double n = static_cast<double>(idx.size());
  Vec mean(Ju, 0.0), var(Ju, 0.0);
  for (std::size_t i : idx)
    for (std::size_t l = 0; l < Ju; ++l) mean[l] += examples[i].outputs[k][l];
  for (double& m : mean) m /= n;
  for (std::size_t i : idx)
    for (std::size_t l = 0; l < Ju; ++l) {
      const double d = examples[i].outputs[k][l] - mean[l];
      var[l] += d * d;
    }
  double precision = static_cast<double>(J);
  if (idx.size() >= 2) {
    double acc = 0.0;
    int used = 0;
    for (std::size_t l = 0; l < Ju; ++l) {
      const double v = var[l] / (n - 1.0);
      if (v > 1e-12) {
        acc += mean[l] * (1.0 - mean[l]) / v - 1.0;
        ++used;
      }
    }
    if (used > 0) precision = acc / used;
  }
  precision = std::clamp(precision, 0.5, 1e4);
  Vec alpha(Ju);
  for (std::size_t l = 0; l < Ju; ++l)
    alpha[l] = std::max(mean[l] * precision, 0.05);
  return alpha;
}

struct BlockResult {
  std::vector<ParamStat> stats;  // one per coordinate
  Vec point;                     // posterior means
  double accept_sum = 0.0;       // summed acceptance rates
  int accept_count = 0;
};

/// Posterior draws for one (classifier, class) block of Dirichlet shapes:
/// per-coordinate log-scale random-walk Metropolis on
///   prod_i Dirichlet(x_i; alpha) * prod_l GammaPrior(alpha_l),
/// driven by the sufficient statistics S_l = sum_i log x_il.
inline BlockResult fit_dirichlet_block(const Vec& suff_log, double n_examples,
                                       const Vec& init, const GammaPrior& prior,
                                       const McmcConfig& cfg, const RngState& block_rng) {
  const std::size_t J = init.size();
  std::vector<std::vector<Vec>> draws(J);  // [coordinate][chain]
  BlockResult out;

  for (int c = 0; c < cfg.n_chains; ++c) {
    RngState rng = block_rng.derive(static_cast<std::uint64_t>(c));
    Vec alpha(J), log_alpha(J);
    for (std::size_t l = 0; l < J; ++l) {
      alpha[l] = init[l] * std::exp(0.5 * rng.normal());  // overdispersed starts
      log_alpha[l] = std::log(alpha[l]);
    }
    double alpha0 = 0.0;
    for (double a : alpha) alpha0 += a;

    std::vector<StepTuner> tuners(J, StepTuner(0.5, 0.35, cfg.adapt_window));
    std::vector<Vec> kept(J);
    for (int it = 0; it < cfg.n_iter; ++it) {
      if (it == cfg.n_burnin)
        for (auto& tn : tuners) tn.freeze();
      for (std::size_t l = 0; l < J; ++l) {
        StepTuner& tn = tuners[l];
        const double z = tn.step() * rng.normal();
        const double log_new = log_alpha[l] + z;
        const double a_new = std::exp(log_new);
        const double alpha0_new = alpha0 + (a_new - alpha[l]);
        const double diff =
            n_examples * (std::lgamma(alpha0_new) - std::lgamma(alpha0) -
                          std::lgamma(a_new) + std::lgamma(alpha[l])) +
            (a_new - alpha[l]) * (suff_log[l] - prior.rate) + prior.shape * z;
        const bool ok = std::log(rng.uniform()) < diff;
        if (ok) {
          alpha0 = alpha0_new;
          alpha[l] = a_new;
          log_alpha[l] = log_new;
        }
        tn.record(ok);
      }
      if (it >= cfg.n_burnin && (it - cfg.n_burnin) % cfg.thin == 0)
        for (std::size_t l = 0; l < J; ++l) kept[l].push_back(alpha[l]);
    }
    for (std::size_t l = 0; l < J; ++l) draws[l].push_back(std::move(kept[l]));
    for (const auto& tn : tuners) {
      out.accept_sum += tn.acceptance_rate();
      ++out.accept_count;
    }
  }

  out.point.resize(J);
  for (std::size_t l = 0; l < J; ++l) {
    out.stats.push_back(summarize_chains(draws[l]));
    out.point[l] = out.stats.back().mean;
  }
  return out;
}

/// Prior-only draws for one block (used by the diagnostic I = 0 mode).
inline BlockResult sample_prior_block(std::size_t J, const GammaPrior& prior,
                                      const McmcConfig& cfg, const RngState& block_rng) {
  BlockResult out;
  std::vector<std::vector<Vec>> draws(J);
  const int n_keep = (cfg.n_iter - cfg.n_burnin - 1) / cfg.thin + 1;
  for (int c = 0; c < cfg.n_chains; ++c) {
    RngState rng = block_rng.derive(static_cast<std::uint64_t>(c));
    std::vector<Vec> kept(J, Vec(static_cast<std::size_t>(n_keep)));
    for (int i = 0; i < n_keep; ++i)
      for (std::size_t l = 0; l < J; ++l)
        kept[l][static_cast<std::size_t>(i)] = sample_gamma(rng, prior.shape, 1.0 / prior.rate);
    for (std::size_t l = 0; l < J; ++l) draws[l].push_back(std::move(kept[l]));
  }
  out.accept_sum = 1.0;
  out.accept_count = 1;
  out.point.resize(J);
  for (std::size_t l = 0; l < J; ++l) {
    out.stats.push_back(summarize_chains(draws[l]));
    out.point[l] = out.stats.back().mean;
  }
  return out;
}

inline void collect_rhat(const std::vector<ParamStat>& stats, const std::string& what,
                         double* max_rhat, std::vector<std::string>* warnings) {
  for (std::size_t l = 0; l < stats.size(); ++l) {
    *max_rhat = std::max(*max_rhat, stats[l].rhat);
    if (stats[l].rhat > 1.2)
      warnings->push_back(what + "[" + std::to_string(l + 1) + "] split-Rhat " +
                          std::to_string(stats[l].rhat) + " exceeds 1.2");
  }
}

}  // namespace detail

/// Fits the independent fusion model: for every (classifier, class) block an
/// independent adaptive Metropolis chain samples the Dirichlet shapes under
/// a vague gamma prior; the returned point estimate takes posterior means
/// and the empirical class frequencies as prior_p.
///
/// Blocks derive their random streams from (seed, block index, chain index)
/// only, so each block's result is unchanged by edits to other classes'
/// data.  An empty dataset (J and K set, no examples) is allowed as a
/// prior-only diagnostic mode; an empty class in a nonempty dataset is an
/// error.
inline IfmPosterior fit_ifm(const LabeledDataset& data, const GammaPrior& prior = {},
                            const McmcConfig& cfg = McmcConfig::fit_defaults()) {
  validate_dataset(data, /*allow_empty=*/true);
  validate_gamma_prior(prior);
  validate_mcmc(cfg);
  const int J = data.n_classes;
  const int K = data.n_classifiers;
  const std::size_t Ju = static_cast<std::size_t>(J);
  const bool prior_only = data.examples.empty();

  const std::vector<LabeledExample> examples = detail::sorted_examples(data);
  const auto by_class = detail::indices_by_class(examples, J);
  if (!prior_only)
    for (int j = 0; j < J; ++j)
      if (by_class[static_cast<std::size_t>(j)].empty())
        throw validation_error("fit_ifm: class " + std::to_string(j + 1) + " has no examples");

  std::vector<std::vector<std::vector<ParamStat>>> alpha_stats(
      static_cast<std::size_t>(K), std::vector<std::vector<ParamStat>>(Ju));
  Cube alpha_point(static_cast<std::size_t>(K), Mat(Ju));
  double max_rhat = 1.0;
  std::vector<std::string> warnings;
  const RngState root(cfg.seed);
  double accept_sum = 0.0;
  int accept_count = 0;

  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < J; ++j) {
      const RngState block_rng = root.derive(static_cast<std::uint64_t>(k * J + j));
      detail::BlockResult block;
      if (prior_only) {
        block = detail::sample_prior_block(Ju, prior, cfg, block_rng);
      } else {
        const auto& idx = by_class[static_cast<std::size_t>(j)];
        Vec suff(Ju, 0.0);
        for (std::size_t i : idx)
          for (std::size_t l = 0; l < Ju; ++l)
            suff[l] += std::log(examples[i].outputs[static_cast<std::size_t>(k)][l]);
        const Vec init =
            detail::moment_init_alpha(examples, idx, static_cast<std::size_t>(k), J);
        block = detail::fit_dirichlet_block(suff, static_cast<double>(idx.size()), init,
                                            prior, cfg, block_rng);
      }
      detail::collect_rhat(block.stats,
                           "alpha[k=" + std::to_string(k + 1) + ",j=" + std::to_string(j + 1) + "]",
                           &max_rhat, &warnings);
      alpha_stats[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] = block.stats;
      alpha_point[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] = block.point;
      accept_sum += block.accept_sum;
      accept_count += block.accept_count;
    }
  }

  Vec prior_freq(Ju, 1.0 / static_cast<double>(J));
  if (!prior_only) {
    for (std::size_t j = 0; j < Ju; ++j)
      prior_freq[j] = static_cast<double>(by_class[j].size()) /
                      static_cast<double>(examples.size());
  }
  return IfmPosterior{make_ifm_params(std::move(alpha_point), make_simplex(prior_freq)),
                      std::move(alpha_stats), accept_sum / static_cast<double>(accept_count),
                      max_rhat, std::move(warnings)};
}

namespace detail {

struct CfmFitOptions {
  bool sample_alpha = false;
};

/// One class's correlated-model chain: per-example latents (shared
/// components and totals) move by adaptive log-scale random walks; the
/// class-level delta (and, when requested, alpha) coordinates use the
/// running sums of log latents as sufficient statistics.  Running sums are
/// rebuilt periodically to shed floating-point drift.
struct CfmClassBlock {
  std::vector<ParamStat> delta_stats;            // [l]
  std::vector<std::vector<ParamStat>> alpha_stats;  // [k][l], empty unless sampled
  Vec delta_point;
  Mat alpha_point;  // [k][l]
  double accept_sum = 0.0;
  int accept_count = 0;
};

inline CfmClassBlock fit_cfm_class(const std::vector<LabeledExample>& examples,
                                   const std::vector<std::size_t>& idx,
                                   const Mat& alpha_init,  // [k][l]
                                   const GammaPrior& prior, const McmcConfig& cfg,
                                   const CfmFitOptions& opt, const RngState& block_rng) {
  const std::size_t J = alpha_init[0].size();
  const std::size_t I = idx.size();
  const double n = static_cast<double>(I);

  // Flattened classifier outputs for the block.
  Vec x1(I * J), x2(I * J);
  for (std::size_t i = 0; i < I; ++i)
    for (std::size_t l = 0; l < J; ++l) {
      x1[i * J + l] = examples[idx[i]].outputs[0][l];
      x2[i * J + l] = examples[idx[i]].outputs[1][l];
    }

  std::vector<std::vector<Vec>> delta_draws(J);
  std::vector<std::vector<std::vector<Vec>>> alpha_draws(
      2, std::vector<std::vector<Vec>>(J));
  CfmClassBlock out;

  for (int c = 0; c < cfg.n_chains; ++c) {
    RngState rng = block_rng.derive(static_cast<std::uint64_t>(c));

    Mat alpha(alpha_init);  // current shapes, [k][l]
    Vec delta(J);
    for (std::size_t l = 0; l < J; ++l) {
      const double bound = std::min(alpha[0][l], alpha[1][l]);
      delta[l] = std::min(0.25 * bound * std::exp(0.5 * rng.normal()), 0.8 * bound);
    }

    // Latent state: shared components and totals per example.
    Vec d(I * J), log_d(I * J), t1(I), t2(I), log_t1(I), log_t2(I);
    double sum_a1 = 0.0, sum_a2 = 0.0;
    for (std::size_t l = 0; l < J; ++l) {
      sum_a1 += alpha[0][l];
      sum_a2 += alpha[1][l];
    }
    for (std::size_t i = 0; i < I; ++i) {
      t1[i] = sum_a1;
      t2[i] = sum_a2;
      log_t1[i] = std::log(t1[i]);
      log_t2[i] = std::log(t2[i]);
      for (std::size_t l = 0; l < J; ++l) {
        d[i * J + l] = 0.5 * std::min(x1[i * J + l] * t1[i], x2[i * J + l] * t2[i]);
        log_d[i * J + l] = std::log(d[i * J + l]);
      }
    }

    // Running sums of the latents and their logs per coordinate.
    Vec sln_d(J), sln_a1(J), sln_a2(J), sd(J), sa1(J), sa2(J);
    const auto rebuild_sums = [&] {
      std::fill(sln_d.begin(), sln_d.end(), 0.0);
      std::fill(sln_a1.begin(), sln_a1.end(), 0.0);
      std::fill(sln_a2.begin(), sln_a2.end(), 0.0);
      std::fill(sd.begin(), sd.end(), 0.0);
      std::fill(sa1.begin(), sa1.end(), 0.0);
      std::fill(sa2.begin(), sa2.end(), 0.0);
      for (std::size_t i = 0; i < I; ++i)
        for (std::size_t l = 0; l < J; ++l) {
          const double a1v = x1[i * J + l] * t1[i] - d[i * J + l];
          const double a2v = x2[i * J + l] * t2[i] - d[i * J + l];
          sln_d[l] += log_d[i * J + l];
          sln_a1[l] += std::log(a1v);
          sln_a2[l] += std::log(a2v);
          sd[l] += d[i * J + l];
          sa1[l] += a1v;
          sa2[l] += a2v;
        }
    };
    rebuild_sums();

    std::vector<StepTuner> tune_d(I * J, StepTuner(0.5, 0.35, cfg.adapt_window));
    std::vector<StepTuner> tune_t(I * 2, StepTuner(0.5, 0.35, cfg.adapt_window));
    std::vector<StepTuner> tune_ex(I, StepTuner(0.3, 0.35, cfg.adapt_window));
    std::vector<StepTuner> tune_delta(J, StepTuner(0.2, 0.35, cfg.adapt_window));
    std::vector<StepTuner> tune_scale(J, StepTuner(0.3, 0.35, cfg.adapt_window));
    std::vector<StepTuner> tune_alpha(2 * J, StepTuner(0.2, 0.35, cfg.adapt_window));
    std::vector<StepTuner> tune_coord(J, StepTuner(0.2, 0.35, cfg.adapt_window));
    StepTuner tune_prec(0.3, 0.35, cfg.adapt_window);
    // The class-level coordinates see the latents only through ensemble
    // sums, so their conditionals are much tighter than their marginals;
    // several cheap rounds per sweep let them keep up with the latents.
    constexpr int kLevelRounds = 8;

    std::vector<Vec> kept_delta(J);
    std::vector<std::vector<Vec>> kept_alpha(2, std::vector<Vec>(J));
    Vec t_ratio(J), t_diff(J);  // scratch for total moves

    for (int it = 0; it < cfg.n_iter; ++it) {
      if (it == cfg.n_burnin) {
        for (auto& tn : tune_d) tn.freeze();
        for (auto& tn : tune_t) tn.freeze();
        for (auto& tn : tune_ex) tn.freeze();
        for (auto& tn : tune_delta) tn.freeze();
        for (auto& tn : tune_scale) tn.freeze();
        for (auto& tn : tune_alpha) tn.freeze();
        for (auto& tn : tune_coord) tn.freeze();
        tune_prec.freeze();
      }
      if (it % 500 == 499) rebuild_sums();

      for (std::size_t i = 0; i < I; ++i) {
        // Shared-component moves.
        for (std::size_t l = 0; l < J; ++l) {
          StepTuner& tn = tune_d[i * J + l];
          const double z = tn.step() * rng.normal();
          const double log_dp = log_d[i * J + l] + z;
          const double dp = std::exp(log_dp);
          const double a1_cur = x1[i * J + l] * t1[i] - d[i * J + l];
          const double a2_cur = x2[i * J + l] * t2[i] - d[i * J + l];
          const double a1_new = x1[i * J + l] * t1[i] - dp;
          const double a2_new = x2[i * J + l] * t2[i] - dp;
          bool ok = a1_new > 0.0 && a2_new > 0.0;
          if (ok) {
            const double r1 = std::log(a1_new / a1_cur);
            const double r2 = std::log(a2_new / a2_cur);
            const double diff = delta[l] * z + (dp - d[i * J + l]) +
                                (alpha[0][l] - delta[l] - 1.0) * r1 +
                                (alpha[1][l] - delta[l] - 1.0) * r2;
            ok = std::log(rng.uniform()) < diff;
            if (ok) {
              const double step_d = dp - d[i * J + l];
              sln_d[l] += z;
              sln_a1[l] += r1;
              sln_a2[l] += r2;
              sd[l] += step_d;
              sa1[l] -= step_d;
              sa2[l] -= step_d;
              d[i * J + l] = dp;
              log_d[i * J + l] = log_dp;
            }
          }
          tn.record(ok);
        }
        // Independence refresh of each shared component: propose from a
        // scaled Beta matched to the binding classifier's factor, so only
        // the other classifier's term and the exponential tilt remain in
        // the ratio.  This decorrelates the component ensemble far faster
        // than the random walk alone.
        for (std::size_t l = 0; l < J; ++l) {
          const double m1 = x1[i * J + l] * t1[i];
          const double m2 = x2[i * J + l] * t2[i];
          const bool first_binds = m1 <= m2;
          const double m = first_binds ? m1 : m2;
          const double b_bind = (first_binds ? alpha[0][l] : alpha[1][l]) - delta[l];
          const double g1 = sample_gamma(rng, delta[l]);
          const double g2 = sample_gamma(rng, b_bind);
          if (g1 <= 0.0 || g2 <= 0.0) continue;
          const double dp = m * (g1 / (g1 + g2));
          const double a1_new = m1 - dp;
          const double a2_new = m2 - dp;
          if (dp <= 0.0 || a1_new <= 0.0 || a2_new <= 0.0) continue;
          const double d_cur = d[i * J + l];
          const double b_other = (first_binds ? alpha[1][l] : alpha[0][l]) - delta[l];
          const double a_other_cur = (first_binds ? m2 : m1) - d_cur;
          const double a_other_new = first_binds ? a2_new : a1_new;
          const double diff =
              (b_other - 1.0) * std::log(a_other_new / a_other_cur) + (dp - d_cur);
          if (std::log(rng.uniform()) < diff) {
            const double log_dp = std::log(dp);
            sln_d[l] += log_dp - log_d[i * J + l];
            sln_a1[l] += std::log(a1_new / (m1 - d_cur));
            sln_a2[l] += std::log(a2_new / (m2 - d_cur));
            sd[l] += dp - d_cur;
            sa1[l] -= dp - d_cur;
            sa2[l] -= dp - d_cur;
            d[i * J + l] = dp;
            log_d[i * J + l] = log_dp;
          }
        }
        // Total moves, one per classifier.
        for (int k = 0; k < 2; ++k) {
          const Vec& xk = k == 0 ? x1 : x2;
          Vec& tk = k == 0 ? t1 : t2;
          Vec& log_tk = k == 0 ? log_t1 : log_t2;
          Vec& sln_ak = k == 0 ? sln_a1 : sln_a2;
          Vec& sa_k = k == 0 ? sa1 : sa2;
          const Vec& ak = alpha[static_cast<std::size_t>(k)];
          StepTuner& tn = tune_t[i * 2 + static_cast<std::size_t>(k)];
          const double z = tn.step() * rng.normal();
          const double log_tp = log_tk[i] + z;
          const double tp = std::exp(log_tp);
          double diff = -(tp - tk[i]) + static_cast<double>(J) * z;  // (J-1) log T + Jacobian
          bool ok = true;
          for (std::size_t l = 0; l < J; ++l) {
            const double a_cur = xk[i * J + l] * tk[i] - d[i * J + l];
            const double a_new = xk[i * J + l] * tp - d[i * J + l];
            if (a_new <= 0.0) {
              ok = false;
              break;
            }
            t_ratio[l] = std::log(a_new / a_cur);
            t_diff[l] = a_new - a_cur;
            diff += (ak[l] - delta[l] - 1.0) * t_ratio[l];
          }
          ok = ok && std::log(rng.uniform()) < diff;
          if (ok) {
            for (std::size_t l = 0; l < J; ++l) {
              sln_ak[l] += t_ratio[l];
              sa_k[l] += t_diff[l];
            }
            tk[i] = tp;
            log_tk[i] = log_tp;
          }
          tn.record(ok);
        }
        // Example scale move: components and both totals share a factor,
        // traversing the example's overall latent scale in one step.
        {
          StepTuner& tn = tune_ex[i];
          const double z = tn.step() * rng.normal();
          const double g = std::exp(z);
          double diff = 0.0;
          for (std::size_t l = 0; l < J; ++l) {
            const double dd = d[i * J + l];
            const double a1v = x1[i * J + l] * t1[i] - dd;
            const double a2v = x2[i * J + l] * t2[i] - dd;
            diff += (delta[l] - 1.0) * z - (g - 1.0) * dd;
            diff += (alpha[0][l] - delta[l] - 1.0) * z - (g - 1.0) * a1v;
            diff += (alpha[1][l] - delta[l] - 1.0) * z - (g - 1.0) * a2v;
          }
          diff += 2.0 * (static_cast<double>(J) - 1.0) * z;  // the totals' power factors
          diff += (static_cast<double>(J) + 2.0) * z;        // proposal Jacobian
          const bool ok = std::log(rng.uniform()) < diff;
          if (ok) {
            for (std::size_t l = 0; l < J; ++l) {
              const double dd = d[i * J + l];
              const double a1v = x1[i * J + l] * t1[i] - dd;
              const double a2v = x2[i * J + l] * t2[i] - dd;
              sln_d[l] += z;
              sln_a1[l] += z;
              sln_a2[l] += z;
              sd[l] += (g - 1.0) * dd;
              sa1[l] += (g - 1.0) * a1v;
              sa2[l] += (g - 1.0) * a2v;
              d[i * J + l] *= g;
              log_d[i * J + l] += z;
            }
            t1[i] *= g;
            t2[i] *= g;
            log_t1[i] += z;
            log_t2[i] += z;
          }
          tn.record(ok);
        }
      }

      // Class-level delta moves.
      for (int round = 0; round < kLevelRounds; ++round)
      for (std::size_t l = 0; l < J; ++l) {
        StepTuner& tn = tune_delta[l];
        const double z = tn.step() * rng.normal();
        const double dp = delta[l] * std::exp(z);
        const double bound = std::min(alpha[0][l], alpha[1][l]);
        bool ok = dp < bound;
        if (ok) {
          const double diff =
              (dp - delta[l]) * (sln_d[l] - sln_a1[l] - sln_a2[l] - prior.rate) -
              n * (std::lgamma(dp) - std::lgamma(delta[l]) +
                   std::lgamma(alpha[0][l] - dp) - std::lgamma(alpha[0][l] - delta[l]) +
                   std::lgamma(alpha[1][l] - dp) - std::lgamma(alpha[1][l] - delta[l])) +
              prior.shape * z;
          ok = std::log(rng.uniform()) < diff;
          if (ok) delta[l] = dp;
        }
        tn.record(ok);
      }

      // Scale moves: rescale delta[l] together with every example's shared
      // component.  Conditional on the latents, delta is pinned far more
      // tightly than its marginal posterior allows, so a pure coordinate
      // walk crawls; carrying the components along removes that drag.
      for (std::size_t l = 0; l < J; ++l) {
        StepTuner& tn = tune_scale[l];
        const double z = tn.step() * rng.normal();
        const double g = std::exp(z);
        const double dp = delta[l] * g;
        const double bound = std::min(alpha[0][l], alpha[1][l]);
        bool ok = dp > 0.0 && dp < bound;
        if (ok) {
          const double shrink = g - 1.0;  // A' = A - shrink * D
          double sum_r1 = 0.0, sum_r2 = 0.0;
          for (std::size_t i = 0; i < I; ++i) {
            const double dd = d[i * J + l];
            const double a1_cur = x1[i * J + l] * t1[i] - dd;
            const double a2_cur = x2[i * J + l] * t2[i] - dd;
            const double a1_new = a1_cur - shrink * dd;
            const double a2_new = a2_cur - shrink * dd;
            if (a1_new <= 0.0 || a2_new <= 0.0) {
              ok = false;
              break;
            }
            sum_r1 += std::log(a1_new / a1_cur);
            sum_r2 += std::log(a2_new / a2_cur);
          }
          if (ok) {
            const double diff =
                (dp - delta[l]) * (sln_d[l] - sln_a1[l] - sln_a2[l] - prior.rate) -
                n * (std::lgamma(dp) - std::lgamma(delta[l]) +
                     std::lgamma(alpha[0][l] - dp) - std::lgamma(alpha[0][l] - delta[l]) +
                     std::lgamma(alpha[1][l] - dp) - std::lgamma(alpha[1][l] - delta[l])) +
                (alpha[0][l] - dp - 1.0) * sum_r1 + (alpha[1][l] - dp - 1.0) * sum_r2 +
                shrink * sd[l] + (n * dp + prior.shape) * z;
            ok = std::log(rng.uniform()) < diff;
            if (ok) {
              delta[l] = dp;
              for (std::size_t i = 0; i < I; ++i) {
                d[i * J + l] *= g;
                log_d[i * J + l] += z;
              }
              sln_d[l] += n * z;
              sln_a1[l] += sum_r1;
              sln_a2[l] += sum_r2;
              sa1[l] -= shrink * sd[l];
              sa2[l] -= shrink * sd[l];
              sd[l] *= g;
            }
          }
        }
        tn.record(ok);
      }

      // Shape moves (joint fitting only).
      if (opt.sample_alpha) {
        for (int round = 0; round < kLevelRounds; ++round)
        for (int k = 0; k < 2; ++k) {
          Vec& ak = alpha[static_cast<std::size_t>(k)];
          const Vec& sln_ak = k == 0 ? sln_a1 : sln_a2;
          for (std::size_t l = 0; l < J; ++l) {
            StepTuner& tn = tune_alpha[static_cast<std::size_t>(k) * J + l];
            const double z = tn.step() * rng.normal();
            const double ap = ak[l] * std::exp(z);
            bool ok = ap > delta[l];
            if (ok) {
              const double diff =
                  (ap - ak[l]) * (sln_ak[l] - prior.rate) -
                  n * (std::lgamma(ap - delta[l]) - std::lgamma(ak[l] - delta[l])) +
                  prior.shape * z;
              ok = std::log(rng.uniform()) < diff;
              if (ok) ak[l] = ap;
            }
            tn.record(ok);
          }
        }

        // Coordinate scale moves: rescale delta[l], both shapes at l, and
        // every example's shared component as one unit.  The data pin the
        // correlated fraction delta/alpha far better than either factor, so
        // the free-shape posterior has a ridge along their common scale;
        // walking it directly is what keeps the diagonal coordinates moving.
        for (std::size_t l = 0; l < J; ++l) {
          StepTuner& tn = tune_coord[l];
          const double z = tn.step() * rng.normal();
          const double g = std::exp(z);
          const double dp = delta[l] * g;
          const double shrink = g - 1.0;  // A' = A - shrink * D
          bool ok = true;
          double sum_r1 = 0.0, sum_r2 = 0.0;
          for (std::size_t i = 0; i < I; ++i) {
            const double dd = d[i * J + l];
            const double a1_cur = x1[i * J + l] * t1[i] - dd;
            const double a2_cur = x2[i * J + l] * t2[i] - dd;
            const double a1_new = a1_cur - shrink * dd;
            const double a2_new = a2_cur - shrink * dd;
            if (a1_new <= 0.0 || a2_new <= 0.0) {
              ok = false;
              break;
            }
            sum_r1 += std::log(a1_new / a1_cur);
            sum_r2 += std::log(a2_new / a2_cur);
          }
          if (ok) {
            const double b1 = alpha[0][l] - delta[l];
            const double b2 = alpha[1][l] - delta[l];
            const double diff =
                (dp - delta[l]) * sln_d[l] +
                (g - 1.0) * (b1 * sln_a1[l] + b2 * sln_a2[l]) +
                (g * b1 - 1.0) * sum_r1 + (g * b2 - 1.0) * sum_r2 -
                n * (std::lgamma(dp) - std::lgamma(delta[l]) +
                     std::lgamma(g * b1) - std::lgamma(b1) +
                     std::lgamma(g * b2) - std::lgamma(b2)) +
                shrink * sd[l] -
                prior.rate * shrink * (delta[l] + alpha[0][l] + alpha[1][l]) +
                (n * dp + 3.0 * prior.shape) * z;
            ok = std::log(rng.uniform()) < diff;
            if (ok) {
              delta[l] = dp;
              alpha[0][l] *= g;
              alpha[1][l] *= g;
              for (std::size_t i = 0; i < I; ++i) {
                d[i * J + l] *= g;
                log_d[i * J + l] += z;
              }
              sln_d[l] += n * z;
              sln_a1[l] += sum_r1;
              sln_a2[l] += sum_r2;
              sa1[l] -= shrink * sd[l];
              sa2[l] -= shrink * sd[l];
              sd[l] *= g;
            }
          }
          tn.record(ok);
        }

        // Precision move: rescale every shape, shared shape, component and
        // total by a common factor.  The block's overall concentration is
        // the slowest direction when the shapes are free; this traverses it
        // in one step while keeping all constraints intact.
        {
          const double z = tune_prec.step() * rng.normal();
          const double g = std::exp(z);
          const double Jd = static_cast<double>(J);
          double diff = 0.0, hyper_sum = 0.0;
          for (std::size_t l = 0; l < J; ++l) {
            const double b1 = alpha[0][l] - delta[l];
            const double b2 = alpha[1][l] - delta[l];
            diff += (g - 1.0) * (delta[l] * sln_d[l] + b1 * sln_a1[l] + b2 * sln_a2[l]) -
                    (g - 1.0) * (sd[l] + sa1[l] + sa2[l]) +
                    n * z * ((delta[l] + b1 + b2) * g - 3.0) -
                    n * (std::lgamma(delta[l] * g) - std::lgamma(delta[l]) +
                         std::lgamma(b1 * g) - std::lgamma(b1) +
                         std::lgamma(b2 * g) - std::lgamma(b2));
            hyper_sum += delta[l] + alpha[0][l] + alpha[1][l];
          }
          diff += 2.0 * n * (Jd - 1.0) * z;  // the totals' power factors
          diff += (prior.shape - 1.0) * 3.0 * Jd * z - prior.rate * (g - 1.0) * hyper_sum;
          diff += (3.0 * Jd + n * (Jd + 2.0)) * z;  // proposal Jacobian
          const bool ok = std::log(rng.uniform()) < diff;
          if (ok) {
            for (std::size_t l = 0; l < J; ++l) {
              delta[l] *= g;
              alpha[0][l] *= g;
              alpha[1][l] *= g;
              sln_d[l] += n * z;
              sln_a1[l] += n * z;
              sln_a2[l] += n * z;
              sd[l] *= g;
              sa1[l] *= g;
              sa2[l] *= g;
            }
            for (std::size_t i = 0; i < I; ++i) {
              t1[i] *= g;
              t2[i] *= g;
              log_t1[i] += z;
              log_t2[i] += z;
              for (std::size_t l = 0; l < J; ++l) {
                d[i * J + l] *= g;
                log_d[i * J + l] += z;
              }
            }
          }
          tune_prec.record(ok);
        }
      }

      if (it >= cfg.n_burnin && (it - cfg.n_burnin) % cfg.thin == 0) {
        for (std::size_t l = 0; l < J; ++l) kept_delta[l].push_back(delta[l]);
        if (opt.sample_alpha)
          for (int k = 0; k < 2; ++k)
            for (std::size_t l = 0; l < J; ++l)
              kept_alpha[static_cast<std::size_t>(k)][l].push_back(
                  alpha[static_cast<std::size_t>(k)][l]);
      }
    }

    for (std::size_t l = 0; l < J; ++l) delta_draws[l].push_back(std::move(kept_delta[l]));
    if (opt.sample_alpha)
      for (int k = 0; k < 2; ++k)
        for (std::size_t l = 0; l < J; ++l)
          alpha_draws[static_cast<std::size_t>(k)][l].push_back(
              std::move(kept_alpha[static_cast<std::size_t>(k)][l]));

    for (const auto& tn : tune_delta) {
      out.accept_sum += tn.acceptance_rate();
      ++out.accept_count;
    }
    for (const auto& tn : tune_scale) {
      out.accept_sum += tn.acceptance_rate();
      ++out.accept_count;
    }
    if (opt.sample_alpha) {
      for (const auto& tn : tune_alpha) {
        out.accept_sum += tn.acceptance_rate();
        ++out.accept_count;
      }
      for (const auto& tn : tune_coord) {
        out.accept_sum += tn.acceptance_rate();
        ++out.accept_count;
      }
      out.accept_sum += tune_prec.acceptance_rate();
      ++out.accept_count;
    }
    // Latent tuners are numerous; fold them in as a single averaged entry.
    double latent_acc = 0.0;
    for (const auto& tn : tune_d) latent_acc += tn.acceptance_rate();
    for (const auto& tn : tune_t) latent_acc += tn.acceptance_rate();
    for (const auto& tn : tune_ex) latent_acc += tn.acceptance_rate();
    out.accept_sum +=
        latent_acc / static_cast<double>(tune_d.size() + tune_t.size() + tune_ex.size());
    ++out.accept_count;
  }

  out.delta_point.resize(J);
  for (std::size_t l = 0; l < J; ++l) {
    out.delta_stats.push_back(summarize_chains(delta_draws[l]));
    out.delta_point[l] = out.delta_stats.back().mean;
  }
  if (opt.sample_alpha) {
    out.alpha_stats.resize(2);
    out.alpha_point.assign(2, Vec(J));
    for (int k = 0; k < 2; ++k)
      for (std::size_t l = 0; l < J; ++l) {
        out.alpha_stats[static_cast<std::size_t>(k)].push_back(
            summarize_chains(alpha_draws[static_cast<std::size_t>(k)][l]));
        out.alpha_point[static_cast<std::size_t>(k)][l] =
            out.alpha_stats[static_cast<std::size_t>(k)].back().mean;
      }
  }
  return out;
}

inline CfmPosterior fit_cfm_impl(const LabeledDataset& data, const Cube* fixed_alpha,
                                 const GammaPrior& prior, const McmcConfig& cfg) {
  validate_dataset(data);
  validate_gamma_prior(prior);
  validate_mcmc(cfg);
  if (data.n_classifiers != 2)
    throw validation_error("correlated-model fitting covers exactly 2 classifiers");
  const int J = data.n_classes;
  const std::size_t Ju = static_cast<std::size_t>(J);

  const std::vector<LabeledExample> examples = sorted_examples(data);
  const auto by_class = indices_by_class(examples, J);
  for (int j = 0; j < J; ++j)
    if (by_class[static_cast<std::size_t>(j)].empty())
      throw validation_error("correlated-model fit: class " + std::to_string(j + 1) +
                             " has no examples");

  CfmFitOptions opt;
  opt.sample_alpha = fixed_alpha == nullptr;

  std::vector<std::vector<std::vector<ParamStat>>> alpha_stats;
  if (opt.sample_alpha)
    alpha_stats.assign(2, std::vector<std::vector<ParamStat>>(Ju));
  std::vector<std::vector<ParamStat>> delta_stats(Ju);
  Cube alpha_point(2, Mat(Ju));
  Mat delta_point(Ju);
  double max_rhat = 1.0;
  std::vector<std::string> warnings;
  const RngState root(cfg.seed);
  double accept_sum = 0.0;
  int accept_count = 0;

  for (int j = 0; j < J; ++j) {
    const auto& idx = by_class[static_cast<std::size_t>(j)];
    Mat alpha_init(2);
    if (fixed_alpha != nullptr) {
      alpha_init[0] = (*fixed_alpha)[0][static_cast<std::size_t>(j)];
      alpha_init[1] = (*fixed_alpha)[1][static_cast<std::size_t>(j)];
    } else {
      alpha_init[0] = moment_init_alpha(examples, idx, 0, J);
      alpha_init[1] = moment_init_alpha(examples, idx, 1, J);
    }
    const RngState block_rng = root.derive(static_cast<std::uint64_t>(j));
    CfmClassBlock block = fit_cfm_class(examples, idx, alpha_init, prior, cfg, opt, block_rng);

    collect_rhat(block.delta_stats, "delta[j=" + std::to_string(j + 1) + "]",
                 &max_rhat, &warnings);
    delta_stats[static_cast<std::size_t>(j)] = block.delta_stats;
    delta_point[static_cast<std::size_t>(j)] = block.delta_point;
    if (opt.sample_alpha) {
      for (int k = 0; k < 2; ++k) {
        collect_rhat(block.alpha_stats[static_cast<std::size_t>(k)],
                     "alpha[k=" + std::to_string(k + 1) + ",j=" + std::to_string(j + 1) + "]",
                     &max_rhat, &warnings);
        alpha_stats[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] =
            block.alpha_stats[static_cast<std::size_t>(k)];
        alpha_point[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] =
            block.alpha_point[static_cast<std::size_t>(k)];
      }
    } else {
      alpha_point[0][static_cast<std::size_t>(j)] = (*fixed_alpha)[0][static_cast<std::size_t>(j)];
      alpha_point[1][static_cast<std::size_t>(j)] = (*fixed_alpha)[1][static_cast<std::size_t>(j)];
    }
    accept_sum += block.accept_sum;
    accept_count += block.accept_count;
  }

  Vec prior_freq(Ju);
  for (std::size_t j = 0; j < Ju; ++j)
    prior_freq[j] =
        static_cast<double>(by_class[j].size()) / static_cast<double>(examples.size());

  // Posterior means can brush the box edge; nudge delta inside it so the
  // point estimate always validates.
  for (std::size_t j = 0; j < Ju; ++j)
    for (std::size_t l = 0; l < Ju; ++l) {
      const double bound = std::min(alpha_point[0][j][l], alpha_point[1][j][l]);
      if (delta_point[j][l] > bound) {
        warnings.push_back("delta[" + std::to_string(j + 1) + "][" +
                           std::to_string(l + 1) + "] clamped to the shape bound");
        delta_point[j][l] = bound;
      }
    }
  return CfmPosterior{
      make_cfm_params(make_ifm_params(std::move(alpha_point), make_simplex(prior_freq)),
                      std::move(delta_point)),
      std::move(alpha_stats), std::move(delta_stats),
      accept_sum / static_cast<double>(accept_count), max_rhat, std::move(warnings)};
}

}  // namespace detail

/// Fits the correlated model's shared shapes delta with the Dirichlet shapes
/// held fixed at a previous independent fit (stepwise inference): per class,
/// a Metropolis-within-Gibbs chain over the per-example latents and delta,
/// with the vague gamma prior on delta truncated to [0, min_k alpha].
inline CfmPosterior fit_cfm_stepwise(const LabeledDataset& data, const IfmParams& alpha_hat,
                                     const GammaPrior& prior = {},
                                     const McmcConfig& cfg = McmcConfig::fit_defaults()) {
  validate_ifm_params(alpha_hat);
  if (alpha_hat.n_classifiers() != 2 || alpha_hat.n_classes() != data.n_classes)
    throw validation_error("fit_cfm_stepwise: alpha_hat shape does not match the data");
  return detail::fit_cfm_impl(data, &alpha_hat.alpha, prior, cfg);
}

/// Fits shapes and shared shapes together (joint inference).  Slower than
/// the stepwise route but free of the plug-in approximation.
inline CfmPosterior fit_cfm_joint(const LabeledDataset& data, const GammaPrior& prior = {},
                                  const McmcConfig& cfg = McmcConfig::fit_defaults()) {
  return detail::fit_cfm_impl(data, nullptr, prior, cfg);
}

}  // namespace corrfuse
