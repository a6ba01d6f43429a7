#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "corrfuse/errors.hpp"

namespace corrfuse {

/// Smallest probability a Simplex entry may take.  Classifier outputs are
/// clamped up to this floor so that logs and density evaluations stay finite.
inline constexpr double kProbFloor = 1e-9;

/// 1-based class label in {1, ..., J}.
struct ClassLabel {
  int value = 1;

  /// 0-based index for array access.
  int index() const { return value - 1; }

  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

inline ClassLabel make_class_label(int value, int n_classes) {
  if (value < 1 || value > n_classes)
    throw validation_error("class label " + std::to_string(value) +
                           " outside {1, ..., " + std::to_string(n_classes) + "}");
  return ClassLabel{value};
}

/// A strictly positive probability vector over J >= 2 classes.  Instances can
/// only be built through make_simplex, so every Simplex in the program sums
/// to one (up to rounding) with all entries in [kProbFloor, 1].
class Simplex {
 public:
  const std::vector<double>& probs() const { return p_; }
  std::size_t dim() const { return p_.size(); }
  double operator[](std::size_t l) const { return p_[l]; }

  friend bool operator==(const Simplex&, const Simplex&) = default;

 private:
  friend Simplex make_simplex(std::vector<double> values);
  explicit Simplex(std::vector<double> p) : p_(std::move(p)) {}

  std::vector<double> p_;
};

/// Builds a Simplex from raw nonnegative values: clamps entries up to
/// kProbFloor and renormalizes.  Inputs that already satisfy the invariants
/// are returned bit-identically, which makes the construction idempotent and
/// keeps file round trips exact.
inline Simplex make_simplex(std::vector<double> values) {
  if (values.size() < 2)
    throw validation_error("simplex needs dimension >= 2, got " +
                           std::to_string(values.size()));
  double sum = 0.0;
  bool any_positive = false;
  for (double v : values) {
    if (!std::isfinite(v)) throw validation_error("non-finite probability entry");
    if (v < 0.0) throw validation_error("negative probability entry");
    any_positive = any_positive || v > 0.0;
    sum += v;
  }
  if (!any_positive) throw validation_error("probability entries are all zero");

  bool valid = std::abs(sum - 1.0) <= 1e-12;
  if (valid)
    for (double v : values) valid = valid && v >= kProbFloor && v <= 1.0;
  if (valid) return Simplex(std::move(values));

  // Two clamp/renormalize rounds: the first normalization can push a tiny
  // entry back below the floor, the second perturbs the sum by at most
  // ~J * kProbFloor^2, far below the floor itself.
  for (int round = 0; round < 2; ++round) {
    double s = 0.0;
    for (double& v : values) {
      if (v < kProbFloor) v = kProbFloor;
      s += v;
    }
    for (double& v : values) v /= s;
  }
  for (double& v : values) {
    if (v < kProbFloor) v = kProbFloor;
    if (v > 1.0) v = 1.0;
  }
  return Simplex(std::move(values));
}

/// Shannon entropy in nats.
inline double entropy(const Simplex& p) {
  double h = 0.0;
  for (double v : p.probs()) h -= v * std::log(v);
  return h;
}

/// Negative log probability assigned to the true label, in nats.
inline double log_loss(const Simplex& p, ClassLabel truth) {
  if (truth.value < 1 || truth.value > static_cast<int>(p.dim()))
    throw validation_error("log_loss: label " + std::to_string(truth.value) +
                           " outside simplex of dimension " + std::to_string(p.dim()));
  return -std::log(p[static_cast<std::size_t>(truth.index())]);
}

/// Total variation distance, 0.5 * sum |a_l - b_l|.
inline double total_variation(const Simplex& a, const Simplex& b) {
  if (a.dim() != b.dim())
    throw validation_error("total_variation: dimension mismatch");
  double s = 0.0;
  for (std::size_t l = 0; l < a.dim(); ++l) s += std::abs(a[l] - b[l]);
  return 0.5 * s;
}

}  // namespace corrfuse
