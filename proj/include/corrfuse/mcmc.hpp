#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "corrfuse/errors.hpp"
#include "corrfuse/types.hpp"

namespace corrfuse {

/// Common knobs for every sampler in the library.  Step sizes adapt only
/// during burn-in; retained draws always come from fixed-kernel chains.
struct McmcConfig {
  int n_chains = 4;
  int n_iter = 20000;  // total iterations per chain, including burn-in
  int n_burnin = 5000;
  int thin = 1;
  int adapt_window = 50;  // iterations per step-size adaptation batch
  std::uint64_t seed = 0;

  /// Budget used when fusing a single example.
  static McmcConfig fusion_defaults() { return McmcConfig{4, 5000, 1000, 1, 50, 0}; }

  /// Budget used when fitting model parameters to a dataset.
  static McmcConfig fit_defaults() { return McmcConfig{4, 20000, 5000, 1, 50, 0}; }
};

inline void validate_mcmc(const McmcConfig& cfg) {
  if (cfg.n_chains < 1) throw validation_error("mcmc: need >= 1 chain");
  if (cfg.n_burnin < 0 || cfg.n_iter <= cfg.n_burnin)
    throw validation_error("mcmc: need n_iter > n_burnin >= 0");
  if (cfg.thin < 1) throw validation_error("mcmc: thin must be >= 1");
  if (cfg.adapt_window < 1) throw validation_error("mcmc: adapt_window must be >= 1");
}

/// Robbins-Monro step-size tuner for random-walk proposals: after each batch
/// of `window` proposals the log step moves toward the target acceptance
/// rate with a 1/k gain, so adaptation diminishes and the kernel is frozen
/// once burn-in ends.
class StepTuner {
 public:
  explicit StepTuner(double initial_step = 0.5, double target_rate = 0.35,
                     int window = 50)
      : log_step_(std::log(initial_step)), target_(target_rate), window_(window) {}

  double step() const { return std::exp(log_step_); }

  double acceptance_rate() const {
    return n_total_ == 0 ? 0.0 : static_cast<double>(n_accepted_) / n_total_;
  }

  void record(bool accepted) {
    ++n_total_;
    n_accepted_ += accepted ? 1 : 0;
    if (frozen_) return;
    ++in_window_;
    window_accepted_ += accepted ? 1 : 0;
    if (in_window_ == window_) {
      ++batches_;
      const double rate = static_cast<double>(window_accepted_) / window_;
      log_step_ += (rate - target_) / batches_;
      log_step_ = std::clamp(log_step_, std::log(1e-6), std::log(1e3));
      in_window_ = 0;
      window_accepted_ = 0;
    }
  }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

 private:
  double log_step_;
  double target_;
  int window_;
  int in_window_ = 0;
  int window_accepted_ = 0;
  int batches_ = 0;
  bool frozen_ = false;
  long n_total_ = 0;
  long n_accepted_ = 0;
};

/// Split-Rhat of Gelman et al.: each chain is halved, and the ratio of
/// pooled to within-half variance is returned.  Values near 1 indicate the
/// chains agree; constant chains (e.g. a parameter pinned by the model)
/// return exactly 1.
inline double split_rhat(const std::vector<Vec>& chains) {
  std::vector<const double*> halves;
  std::vector<std::size_t> lengths;
  std::size_t half_len = SIZE_MAX;
  for (const Vec& chain : chains) half_len = std::min(half_len, chain.size() / 2);
  if (chains.empty() || half_len < 2)
    throw validation_error("split_rhat: need chains with >= 4 draws");

  const std::size_t m = 2 * chains.size();
  const double n = static_cast<double>(half_len);
  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (int half = 0; half < 2; ++half) {
      const double* begin = chains[c].data() + (half == 0 ? 0 : chains[c].size() - half_len);
      double mean = 0.0;
      for (std::size_t i = 0; i < half_len; ++i) mean += begin[i];
      mean /= n;
      double var = 0.0;
      for (std::size_t i = 0; i < half_len; ++i)
        var += (begin[i] - mean) * (begin[i] - mean);
      var /= (n - 1.0);
      means[2 * c + half] = mean;
      vars[2 * c + half] = var;
    }
  }
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= static_cast<double>(m);
  double b = 0.0;  // between-half variance of means, times n
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= n / static_cast<double>(m - 1);
  double w = 0.0;  // mean within-half variance
  for (double v : vars) w += v;
  w /= static_cast<double>(m);
  if (w == 0.0) return 1.0;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

/// Effective sample size for the mean of the pooled draws, using per-chain
/// autocovariances combined as in Stan, with Geyer's initial-positive-
/// sequence truncation.  Constant chains report the nominal draw count.
inline double effective_sample_size(const std::vector<Vec>& chains) {
  std::size_t len = SIZE_MAX;
  for (const Vec& chain : chains) len = std::min(len, chain.size());
  if (chains.empty() || len < 4)
    throw validation_error("effective_sample_size: need chains with >= 4 draws");
  const std::size_t m = chains.size();
  const double n = static_cast<double>(len);
  const double total = static_cast<double>(m) * n;

  std::vector<double> means(m), vars(m);
  double grand = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < len; ++i) mean += chains[c][i];
    mean /= n;
    means[c] = mean;
    double var = 0.0;
    for (std::size_t i = 0; i < len; ++i)
      var += (chains[c][i] - mean) * (chains[c][i] - mean);
    vars[c] = var / (n - 1.0);
    grand += mean;
  }
  grand /= static_cast<double>(m);

  double w = 0.0;
  for (double v : vars) w += v;
  w /= static_cast<double>(m);
  double var_plus = (n - 1.0) / n * w;
  if (m > 1) {
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    var_plus += b / static_cast<double>(m - 1);
  }
  if (var_plus == 0.0) return total;

  const auto acov_at = [&](std::size_t c, std::size_t t) {
    double s = 0.0;
    for (std::size_t i = 0; i + t < len; ++i)
      s += (chains[c][i] - means[c]) * (chains[c][i + t] - means[c]);
    return s / n;
  };

  // rho_t = 1 - (W - mean_c acov_c,t) / var_plus, summed over lag pairs
  // while the pair sums stay positive.
  double rho_sum = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t t = 1; t + 1 < len && t < 4000; t += 2) {
    double acov_t = 0.0, acov_t1 = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      acov_t += acov_at(c, t);
      acov_t1 += acov_at(c, t + 1);
    }
    acov_t /= static_cast<double>(m);
    acov_t1 /= static_cast<double>(m);
    const double rho_t = 1.0 - (w - acov_t) / var_plus;
    const double rho_t1 = 1.0 - (w - acov_t1) / var_plus;
    double pair = rho_t + rho_t1;
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);  // enforce monotone decline
    prev_pair = pair;
    rho_sum += pair;
  }
  const double tau = 1.0 + 2.0 * rho_sum;
  return std::min(total / tau, total * std::log10(total + 1.0));
}

/// Mean, standard deviation, split-Rhat and effective sample size of one
/// scalar parameter across chains.
struct ParamStat {
  double mean = 0.0;
  double sd = 0.0;
  double rhat = 1.0;
  double ess = 0.0;
};

inline ParamStat summarize_chains(const std::vector<Vec>& chains) {
  double sum = 0.0, count = 0.0;
  for (const Vec& chain : chains)
    for (double v : chain) {
      sum += v;
      count += 1.0;
    }
  if (count < 2.0) throw validation_error("summarize_chains: need >= 2 draws");
  const double mean = sum / count;
  double ss = 0.0;
  for (const Vec& chain : chains)
    for (double v : chain) ss += (v - mean) * (v - mean);
  ParamStat stat;
  stat.mean = mean;
  stat.sd = std::sqrt(ss / (count - 1.0));
  stat.rhat = split_rhat(chains);
  stat.ess = effective_sample_size(chains);
  return stat;
}

}  // namespace corrfuse
