#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "corrfuse/errors.hpp"
#include "corrfuse/simplex.hpp"
#include "corrfuse/types.hpp"

namespace corrfuse {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

/// log(sum_i exp(v_i)), stable against overflow.  All -inf gives -inf.
inline double log_sum_exp(const Vec& v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Normalizes a vector of log scores into a Simplex.  Scores of -inf map to
/// (floored) zero probability; at least one score must be finite.
inline Simplex simplex_from_log_scores(const Vec& scores) {
  double m = kNegInf;
  for (double s : scores) {
    if (std::isnan(s) || s == kPosInf)
      throw numeric_error("log score is NaN or +inf");
    m = std::max(m, s);
  }
  if (m == kNegInf) throw numeric_error("all log scores are -inf");
  Vec w(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) w[i] = std::exp(scores[i] - m);
  return make_simplex(w);
}

}  // namespace corrfuse
