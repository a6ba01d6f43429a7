#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "corrfuse/errors.hpp"
#include "corrfuse/rng.hpp"
#include "corrfuse/simplex.hpp"
#include "corrfuse/types.hpp"

namespace corrfuse {

namespace detail {

/// Shortest exact decimal form of a double: 17 significant digits round-trip
/// bit-exactly through strtod/from_chars.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& tok, const std::string& context) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw validation_error(context + ": cannot parse '" + tok + "' as a number");
  return v;
}

inline int parse_int(const std::string& tok, const std::string& context) {
  int v = 0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw validation_error(context + ": cannot parse '" + tok + "' as an integer");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string::size_type start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string dataset_header(int J, int K) {
  std::string h = "example_id,true_label";
  for (int k = 1; k <= K; ++k)
    for (int l = 1; l <= J; ++l)
      h += ",p_" + std::to_string(k) + "_" + std::to_string(l);
  return h;
}

/// Writes via a sibling temp file and renames into place, so readers never
/// observe a half-written file.
inline void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw validation_error("cannot open '" + tmp + "' for writing");
    out << content;
    out.flush();
    if (!out) throw validation_error("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw validation_error("cannot move '" + tmp + "' into place at '" + path + "'");
}

}  // namespace detail

/// Writes a dataset as CSV: header `example_id,true_label,p_1_1,...,p_K_J`,
/// one row per example, probabilities with 17 significant digits so the file
/// reparses bit-exactly.  Missing ids are synthesized as e1, e2, ...
inline void write_dataset(const std::string& path, const LabeledDataset& data) {
  validate_dataset(data);
  const std::size_t n = data.examples.size();
  if (!data.ids.empty() && data.ids.size() != n)
    throw validation_error("ids and examples disagree in length");

  std::string out = detail::dataset_header(data.n_classes, data.n_classifiers);
  out += '\n';
  for (std::size_t i = 0; i < n; ++i) {
    std::string id = data.ids.empty() ? "e" + std::to_string(i + 1) : data.ids[i];
    if (id.empty() || id.find_first_of(",\r\n") != std::string::npos)
      throw validation_error("example id '" + id + "' is empty or contains a delimiter");
    out += id;
    out += ',';
    out += std::to_string(data.examples[i].label.value);
    for (const Simplex& x : data.examples[i].outputs)
      for (std::size_t l = 0; l < x.dim(); ++l) {
        out += ',';
        out += detail::format_double(x[l]);
      }
    out += '\n';
  }
  detail::atomic_write(path, out);
}

/// Reads a dataset CSV with the exact header for the given dimensions.  Each
/// classifier's probability slice must sum to within [0.98, 1.02] before
/// normalization — anything further off is treated as column misalignment —
/// and is then passed through make_simplex.  Row order is preserved.
inline LabeledDataset read_dataset(const std::string& path, int J, int K) {
  if (J < 2 || K < 1) throw validation_error("dataset needs J >= 2 and K >= 1");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open '" + path + "'");

  auto next_line = [&](std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  std::string line;
  if (!next_line(line)) throw validation_error(path + ": empty file");
  const std::string expected = detail::dataset_header(J, K);
  if (line != expected)
    throw validation_error(path + ": header mismatch; expected '" + expected + "', got '" +
                           line + "'");

  LabeledDataset data;
  data.n_classes = J;
  data.n_classifiers = K;
  const std::size_t fields = 2 + static_cast<std::size_t>(J) * static_cast<std::size_t>(K);
  int lineno = 1;
  while (next_line(line)) {
    ++lineno;
    if (line.empty()) continue;  // tolerate a trailing newline
    const std::string context = path + ":" + std::to_string(lineno);
    const std::vector<std::string> tok = detail::split_csv_line(line);
    if (tok.size() != fields)
      throw validation_error(context + ": expected " + std::to_string(fields) +
                             " fields, got " + std::to_string(tok.size()));
    if (tok[0].empty()) throw validation_error(context + ": empty example id");

    const int label = detail::parse_int(tok[1], context);
    if (label < 1 || label > J)
      throw validation_error(context + ": label " + std::to_string(label) +
                             " outside 1.." + std::to_string(J));

    LabeledExample ex;
    ex.label = make_class_label(label, J);
    for (int k = 0; k < K; ++k) {
      Vec probs(static_cast<std::size_t>(J));
      double sum = 0.0;
      for (int l = 0; l < J; ++l) {
        probs[static_cast<std::size_t>(l)] = detail::parse_double(
            tok[2 + static_cast<std::size_t>(k) * static_cast<std::size_t>(J) +
                static_cast<std::size_t>(l)],
            context);
        sum += probs[static_cast<std::size_t>(l)];
      }
      if (sum < 0.98 || sum > 1.02) {
        std::ostringstream msg;
        msg << context << ": classifier " << k + 1 << " probabilities sum to " << sum
            << ", outside [0.98, 1.02]; columns misaligned?";
        throw validation_error(msg.str());
      }
      try {
        ex.outputs.push_back(make_simplex(std::move(probs)));
      } catch (const validation_error& e) {
        throw validation_error(context + ": " + e.what());
      }
    }
    data.examples.push_back(std::move(ex));
    data.ids.push_back(tok[0]);
  }
  validate_dataset(data);
  return data;
}

/// Reads a dataset CSV, inferring the number of classes and classifiers from
/// the header's trailing `p_K_J` column, then validating as usual.
inline LabeledDataset read_dataset(const std::string& path) {
  std::string header;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("cannot open '" + path + "'");
    if (!std::getline(in, header)) throw validation_error(path + ": empty file");
    if (!header.empty() && header.back() == '\r') header.pop_back();
  }
  const std::vector<std::string> cols = detail::split_csv_line(header);
  const std::string& last = cols.back();
  int J = 0;
  int K = 0;
  if (cols.size() >= 3 && last.size() > 2 && last[0] == 'p' && last[1] == '_') {
    const std::size_t sep = last.find('_', 2);
    if (sep != std::string::npos) {
      try {
        K = detail::parse_int(last.substr(2, sep - 2), path);
        J = detail::parse_int(last.substr(sep + 1), path);
      } catch (const validation_error&) {
        J = K = 0;
      }
    }
  }
  if (J < 2 || K < 1 || header != detail::dataset_header(J, K))
    throw validation_error(path + ": header does not look like '" +
                           detail::dataset_header(2, 1) + ", ...'");
  return read_dataset(path, J, K);
}

/// Converts decimal bookmaker odds (one block of J per bookmaker) into
/// probability vectors by normalizing the reciprocals.
inline std::vector<Simplex> odds_to_simplex(const Vec& odds, int J, int K) {
  if (J < 2 || K < 1) throw validation_error("odds conversion needs J >= 2 and K >= 1");
  if (odds.size() != static_cast<std::size_t>(J) * static_cast<std::size_t>(K))
    throw validation_error("expected " + std::to_string(J * K) + " odds, got " +
                           std::to_string(odds.size()));
  for (double o : odds)
    if (!std::isfinite(o) || o <= 1.0)
      throw validation_error("decimal odds must be finite and > 1");

  std::vector<Simplex> out;
  out.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    Vec p(static_cast<std::size_t>(J));
    double sum = 0.0;
    for (int l = 0; l < J; ++l) {
      p[static_cast<std::size_t>(l)] =
          1.0 / odds[static_cast<std::size_t>(k) * static_cast<std::size_t>(J) +
                     static_cast<std::size_t>(l)];
      sum += p[static_cast<std::size_t>(l)];
    }
    for (double& v : p) v /= sum;
    out.push_back(make_simplex(std::move(p)));
  }
  return out;
}

/// How to carve train/test splits out of a labeled dataset.
struct SplitSpec {
  int test_per_class = 1;
  int n_repeats = 1;
  std::uint64_t seed = 0;
};

/// Repeatedly samples test_per_class examples per class (uniformly, without
/// replacement) into a test set, leaving the remainder as training data.
/// Each repeat draws from its own derived RNG stream, so split r is stable
/// no matter how many repeats are requested.
inline std::vector<std::pair<LabeledDataset, LabeledDataset>> split_dataset(
    const LabeledDataset& data, const SplitSpec& spec) {
  validate_dataset(data);
  if (spec.test_per_class < 1) throw validation_error("test_per_class must be >= 1");
  if (spec.n_repeats < 1) throw validation_error("n_repeats must be >= 1");

  const std::size_t J = static_cast<std::size_t>(data.n_classes);
  std::vector<std::vector<std::size_t>> by_class(J);
  for (std::size_t i = 0; i < data.examples.size(); ++i)
    by_class[static_cast<std::size_t>(data.examples[i].label.value - 1)].push_back(i);
  for (std::size_t j = 0; j < J; ++j)
    if (by_class[j].size() <= static_cast<std::size_t>(spec.test_per_class))
      throw validation_error("class " + std::to_string(j + 1) + " has " +
                             std::to_string(by_class[j].size()) +
                             " examples; need more than " +
                             std::to_string(spec.test_per_class) + " to split");

  RngState root(spec.seed);
  std::vector<std::pair<LabeledDataset, LabeledDataset>> out;
  out.reserve(static_cast<std::size_t>(spec.n_repeats));
  for (int rep = 0; rep < spec.n_repeats; ++rep) {
    RngState rng = root.derive(static_cast<std::uint64_t>(rep));
    std::vector<bool> in_test(data.examples.size(), false);
    for (std::size_t j = 0; j < J; ++j) {
      std::vector<std::size_t> pool = by_class[j];
      // Partial Fisher-Yates: the first test_per_class slots become the draw.
      for (int t = 0; t < spec.test_per_class; ++t) {
        const std::size_t remaining = pool.size() - static_cast<std::size_t>(t);
        const std::size_t pick =
            static_cast<std::size_t>(t) +
            std::min(remaining - 1, static_cast<std::size_t>(rng.uniform() *
                                                             static_cast<double>(remaining)));
        std::swap(pool[static_cast<std::size_t>(t)], pool[pick]);
        in_test[pool[static_cast<std::size_t>(t)]] = true;
      }
    }

    LabeledDataset train, test;
    train.n_classes = test.n_classes = data.n_classes;
    train.n_classifiers = test.n_classifiers = data.n_classifiers;
    const bool has_ids = !data.ids.empty();
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
      LabeledDataset& dst = in_test[i] ? test : train;
      dst.examples.push_back(data.examples[i]);
      if (has_ids) dst.ids.push_back(data.ids[i]);
    }
    out.emplace_back(std::move(train), std::move(test));
  }
  return out;
}

/// On-disk parameter document: model tag, the shape arrays, and enough
/// provenance (seed, config hash) to replay the run that produced it.
struct ParamsFile {
  std::string model;  // "ifm" or "cfm"
  Cube alpha;         // [K][J][J]
  Vec prior_p;        // [J]
  Mat delta;          // [J][J], cfm only
  std::uint64_t seed = 0;
  std::string config_hash;

  IfmParams as_ifm() const { return make_ifm_params(alpha, make_simplex(prior_p)); }
  CfmParams as_cfm() const { return make_cfm_params(as_ifm(), delta); }
};

inline ParamsFile params_file(const IfmParams& params, std::uint64_t seed = 0,
                              std::string config_hash = {}) {
  return ParamsFile{"ifm", params.alpha, params.prior_p.probs(), Mat{}, seed,
                    std::move(config_hash)};
}

inline ParamsFile params_file(const CfmParams& params, std::uint64_t seed = 0,
                              std::string config_hash = {}) {
  return ParamsFile{"cfm",           params.ifm.alpha, params.ifm.prior_p.probs(),
                    params.delta,    seed,             std::move(config_hash)};
}

/// Serializes a parameter document as versioned JSON.  The arrays are checked
/// against the model invariants before anything touches disk.  An optional
/// diagnostics object (convergence summaries and the like) rides along; the
/// reader ignores it, so it is purely for humans and plots.
inline void write_params(const std::string& path, const ParamsFile& params,
                         const nlohmann::json& diagnostics = {}) {
  if (params.model == "ifm") {
    if (!params.delta.empty())
      throw validation_error("model 'ifm' must not carry delta");
    params.as_ifm();
  } else if (params.model == "cfm") {
    params.as_cfm();
  } else {
    throw validation_error("unknown model tag '" + params.model + "'");
  }

  nlohmann::json j;
  j["format_version"] = 1;
  j["model"] = params.model;
  j["n_classifiers"] = params.alpha.size();
  j["n_classes"] = params.prior_p.size();
  j["alpha"] = params.alpha;
  j["prior_p"] = params.prior_p;
  if (params.model == "cfm") j["delta"] = params.delta;
  j["provenance"] = {{"seed", params.seed}, {"config_hash", params.config_hash}};
  if (!diagnostics.is_null() && !diagnostics.empty()) j["diagnostics"] = diagnostics;
  detail::atomic_write(path, j.dump(2) + "\n");
}

/// Reads a parameter document, enforcing the schema, the format version, and
/// the model invariants (shape positivity, delta within its bounds, ...).
inline ParamsFile read_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path + ": " + e.what());
  }

  try {
    if (!j.contains("format_version"))
      throw validation_error("missing field 'format_version'");
    const int version = j.at("format_version").get<int>();
    if (version != 1)
      throw validation_error("unsupported format_version " + std::to_string(version) +
                             "; this build reads version 1");
    if (!j.contains("model")) throw validation_error("missing field 'model'");

    ParamsFile out;
    out.model = j.at("model").get<std::string>();
    out.alpha = j.at("alpha").get<Cube>();
    out.prior_p = j.at("prior_p").get<Vec>();
    if (out.model == "cfm") {
      out.delta = j.at("delta").get<Mat>();
    } else if (out.model == "ifm") {
      if (j.contains("delta")) throw validation_error("model 'ifm' must not carry delta");
    } else {
      throw validation_error("unknown model tag '" + out.model + "'");
    }
    if (j.contains("provenance")) {
      const auto& prov = j.at("provenance");
      out.seed = prov.value("seed", std::uint64_t{0});
      out.config_hash = prov.value("config_hash", std::string{});
    }

    const std::size_t K = out.alpha.size();
    const std::size_t J = out.prior_p.size();
    if (j.at("n_classifiers").get<std::size_t>() != K ||
        j.at("n_classes").get<std::size_t>() != J)
      throw validation_error("declared dimensions disagree with the arrays");

    // Reconstructing the typed parameters runs the full invariant checks.
    if (out.model == "ifm")
      out.as_ifm();
    else
      out.as_cfm();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path + ": " + e.what());
  } catch (const validation_error& e) {
    throw validation_error(path + ": " + e.what());
  }
}

}  // namespace corrfuse
