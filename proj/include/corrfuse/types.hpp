#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "corrfuse/errors.hpp"
#include "corrfuse/simplex.hpp"

namespace corrfuse {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;
using Cube = std::vector<Mat>;

/// One example: the categorical output of each of the K classifiers plus the
/// ground-truth label.
struct LabeledExample {
  std::vector<Simplex> outputs;  // size K, each of dimension J
  ClassLabel label;
};

/// A set of labeled examples sharing the same J and K.  `ids` optionally
/// carries the per-example identifiers from a dataset file (parallel to
/// `examples`; empty when the data never touched disk).
struct LabeledDataset {
  std::vector<LabeledExample> examples;
  int n_classes = 0;      // J
  int n_classifiers = 0;  // K
  std::vector<std::string> ids;
};

inline void validate_dataset(const LabeledDataset& data, bool allow_empty = false) {
  if (data.n_classes < 2) throw validation_error("dataset needs >= 2 classes");
  if (data.n_classifiers < 1) throw validation_error("dataset needs >= 1 classifier");
  if (data.examples.empty() && !allow_empty)
    throw validation_error("dataset has no examples");
  if (!data.ids.empty() && data.ids.size() != data.examples.size())
    throw validation_error("dataset ids do not match example count");
  for (const LabeledExample& ex : data.examples) {
    if (static_cast<int>(ex.outputs.size()) != data.n_classifiers)
      throw validation_error("example has wrong number of classifier outputs");
    for (const Simplex& x : ex.outputs)
      if (static_cast<int>(x.dim()) != data.n_classes)
        throw validation_error("classifier output has wrong dimension");
    if (ex.label.value < 1 || ex.label.value > data.n_classes)
      throw validation_error("example label outside {1, ..., J}");
  }
}

/// Builds a dataset from examples, deducing J and K from the first one.
inline LabeledDataset make_dataset(std::vector<LabeledExample> examples,
                                   std::vector<std::string> ids = {}) {
  if (examples.empty()) throw validation_error("dataset has no examples");
  LabeledDataset data;
  data.n_classifiers = static_cast<int>(examples.front().outputs.size());
  if (data.n_classifiers < 1) throw validation_error("dataset needs >= 1 classifier");
  data.n_classes = static_cast<int>(examples.front().outputs.front().dim());
  data.examples = std::move(examples);
  data.ids = std::move(ids);
  validate_dataset(data);
  return data;
}

/// Parameters of the independent fusion model: one Dirichlet shape vector per
/// (classifier k, true class j) plus the class prior.
///
/// alpha[k][j][l] > 0 is the l-th shape of classifier k's output distribution
/// when the true class is j.
struct IfmParams {
  Cube alpha;       // [K][J][J]
  Simplex prior_p;  // dimension J

  int n_classifiers() const { return static_cast<int>(alpha.size()); }
  int n_classes() const { return static_cast<int>(prior_p.dim()); }
};

inline void validate_ifm_params(const IfmParams& params) {
  const int J = params.n_classes();
  if (J < 2) throw validation_error("model needs >= 2 classes");
  if (params.alpha.empty()) throw validation_error("model needs >= 1 classifier");
  for (const Mat& per_class : params.alpha) {
    if (static_cast<int>(per_class.size()) != J)
      throw validation_error("alpha must have one shape vector per class");
    for (const Vec& a : per_class) {
      if (static_cast<int>(a.size()) != J)
        throw validation_error("alpha shape vector has wrong dimension");
      for (double v : a)
        if (!std::isfinite(v) || v <= 0.0)
          throw validation_error("alpha entries must be finite and > 0");
    }
  }
}

inline IfmParams make_ifm_params(Cube alpha, Simplex prior_p) {
  IfmParams params{std::move(alpha), std::move(prior_p)};
  validate_ifm_params(params);
  return params;
}

/// Restriction of IfmParams to a single classifier (0-based k), used by the
/// meta-classifier and by per-classifier calibration.
inline IfmParams slice_classifier(const IfmParams& params, int k) {
  if (k < 0 || k >= params.n_classifiers())
    throw validation_error("classifier index out of range");
  return IfmParams{Cube{params.alpha[static_cast<std::size_t>(k)]}, params.prior_p};
}

/// Parameters of the correlated fusion model: the IFM shapes plus, per true
/// class j, the shared-component shape vector delta[j].
///
/// Each delta[j][l] lies in the closed interval [0, min_k alpha[k][j][l]]:
/// 0 switches dimension l off (independence), the upper bound makes the
/// classifiers' l-th coordinates maximally coupled.
struct CfmParams {
  IfmParams ifm;
  Mat delta;  // [J][J]
};

inline void validate_cfm_params(const CfmParams& params) {
  validate_ifm_params(params.ifm);
  const int J = params.ifm.n_classes();
  const int K = params.ifm.n_classifiers();
  if (static_cast<int>(params.delta.size()) != J)
    throw validation_error("delta must have one vector per class");
  for (int j = 0; j < J; ++j) {
    const Vec& d = params.delta[static_cast<std::size_t>(j)];
    if (static_cast<int>(d.size()) != J)
      throw validation_error("delta vector has wrong dimension");
    for (int l = 0; l < J; ++l) {
      double bound = params.ifm.alpha[0][static_cast<std::size_t>(j)][static_cast<std::size_t>(l)];
      for (int k = 1; k < K; ++k)
        bound = std::min(bound, params.ifm.alpha[static_cast<std::size_t>(k)]
                                                [static_cast<std::size_t>(j)]
                                                [static_cast<std::size_t>(l)]);
      const double v = d[static_cast<std::size_t>(l)];
      if (!std::isfinite(v) || v < 0.0 || v > bound)
        throw validation_error("delta[" + std::to_string(j + 1) + "][" +
                               std::to_string(l + 1) + "] outside [0, min_k alpha]");
    }
  }
}

inline CfmParams make_cfm_params(IfmParams ifm, Mat delta) {
  CfmParams params{std::move(ifm), std::move(delta)};
  validate_cfm_params(params);
  return params;
}

/// Uniform class prior over J classes.
inline Simplex uniform_prior(int n_classes) {
  if (n_classes < 2) throw validation_error("prior needs >= 2 classes");
  return make_simplex(Vec(static_cast<std::size_t>(n_classes),
                          1.0 / static_cast<double>(n_classes)));
}

/// Gamma prior on positive shape parameters, in shape/rate form.  The default
/// (1e-3, 1e-3) is the conventional vague choice: mean 1, variance 1000.
struct GammaPrior {
  double shape = 1e-3;
  double rate = 1e-3;
};

inline void validate_gamma_prior(const GammaPrior& prior) {
  if (!(prior.shape > 0.0) || !(prior.rate > 0.0))
    throw validation_error("gamma prior needs shape > 0 and rate > 0");
}

}  // namespace corrfuse
