#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "corrfuse/data_io.hpp"
#include "corrfuse/errors.hpp"
#include "corrfuse/fusion.hpp"
#include "corrfuse/simplex.hpp"
#include "corrfuse/types.hpp"

namespace corrfuse {

/// One fused run: a method tag plus the per-example posteriors, parallel to
/// the dataset the run was computed from.
struct FusedRun {
  std::string method;
  std::vector<std::string> ids;
  std::vector<Simplex> posteriors;
  std::uint64_t seed = 0;
};

/// Per-run summary: the mean entropy and mean log-loss over the examples of
/// one test set (or split).
struct RunScore {
  std::string method;
  double mean_entropy = 0.0;
  double mean_log_loss = 0.0;
  int n_examples = 0;
};

/// Across-run statistics for one method: means of the per-run means and
/// their standard deviation (ddof 1; zero for a single run).
struct MethodStats {
  std::string method;
  int n_runs = 0;
  double mean_entropy = 0.0;
  double sd_entropy = 0.0;
  double mean_log_loss = 0.0;
  double sd_log_loss = 0.0;
};

/// The full evaluation: per-method statistics plus the configuration echo
/// that makes the run reproducible.
struct ExperimentReport {
  std::vector<MethodStats> methods;
  nlohmann::json config;
};

/// Scores one run against the ground truth carried by its dataset.  The ids
/// must match pairwise — a mismatch means the fused file and the dataset do
/// not describe the same examples.
inline RunScore score_run(const FusedRun& run, const LabeledDataset& data) {
  validate_dataset(data);
  if (run.posteriors.size() != data.examples.size() ||
      run.ids.size() != run.posteriors.size())
    throw validation_error("fused run and dataset disagree on the number of examples");
  const std::vector<std::string>& truth_ids = data.ids;
  RunScore score;
  score.method = run.method;
  score.n_examples = static_cast<int>(run.posteriors.size());
  for (std::size_t i = 0; i < run.posteriors.size(); ++i) {
    if (!truth_ids.empty() && run.ids[i] != truth_ids[i])
      throw validation_error("example id mismatch at row " + std::to_string(i + 1) + ": '" +
                             run.ids[i] + "' vs '" + truth_ids[i] + "'");
    score.mean_entropy += entropy(run.posteriors[i]);
    score.mean_log_loss += log_loss(run.posteriors[i], data.examples[i].label);
  }
  score.mean_entropy /= score.n_examples;
  score.mean_log_loss /= score.n_examples;
  return score;
}

/// Groups per-run scores by method (first-appearance order) and reduces them
/// to across-run means and standard deviations.
inline ExperimentReport compute_report(const std::vector<RunScore>& runs,
                                       nlohmann::json config = {}) {
  if (runs.empty()) throw validation_error("report needs at least one scored run");
  ExperimentReport report;
  report.config = std::move(config);
  for (const RunScore& run : runs) {
    MethodStats* stats = nullptr;
    for (MethodStats& m : report.methods)
      if (m.method == run.method) stats = &m;
    if (stats == nullptr) {
      report.methods.push_back(MethodStats{run.method, 0, 0.0, 0.0, 0.0, 0.0});
      stats = &report.methods.back();
    }
    ++stats->n_runs;
    stats->mean_entropy += run.mean_entropy;
    stats->mean_log_loss += run.mean_log_loss;
  }
  for (MethodStats& m : report.methods) {
    m.mean_entropy /= m.n_runs;
    m.mean_log_loss /= m.n_runs;
  }
  for (const RunScore& run : runs)
    for (MethodStats& m : report.methods)
      if (m.method == run.method) {
        m.sd_entropy += (run.mean_entropy - m.mean_entropy) * (run.mean_entropy - m.mean_entropy);
        m.sd_log_loss +=
            (run.mean_log_loss - m.mean_log_loss) * (run.mean_log_loss - m.mean_log_loss);
      }
  for (MethodStats& m : report.methods) {
    if (m.n_runs > 1) {
      m.sd_entropy = std::sqrt(m.sd_entropy / (m.n_runs - 1));
      m.sd_log_loss = std::sqrt(m.sd_log_loss / (m.n_runs - 1));
    } else {
      m.sd_entropy = 0.0;
      m.sd_log_loss = 0.0;
    }
  }
  return report;
}

/// Plain-text table, aligned for reading at the terminal.
inline std::string render_table(const ExperimentReport& report) {
  std::ostringstream out;
  out << std::left << std::setw(8) << "method" << std::right << std::setw(6) << "runs"
      << std::setw(12) << "entropy" << std::setw(10) << "sd" << std::setw(12) << "log-loss"
      << std::setw(10) << "sd" << '\n';
  out << std::string(58, '-') << '\n';
  out << std::fixed << std::setprecision(4);
  for (const MethodStats& m : report.methods)
    out << std::left << std::setw(8) << m.method << std::right << std::setw(6) << m.n_runs
        << std::setw(12) << m.mean_entropy << std::setw(10) << m.sd_entropy << std::setw(12)
        << m.mean_log_loss << std::setw(10) << m.sd_log_loss << '\n';
  return out.str();
}

/// Plot-ready JSON: series with symmetric error bars, plus the config echo.
inline nlohmann::json report_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["format_version"] = 1;
  nlohmann::json methods = nlohmann::json::array();
  for (const MethodStats& m : report.methods)
    methods.push_back({{"method", m.method},
                       {"n_runs", m.n_runs},
                       {"mean_entropy", m.mean_entropy},
                       {"sd_entropy", m.sd_entropy},
                       {"mean_log_loss", m.mean_log_loss},
                       {"sd_log_loss", m.sd_log_loss}});
  j["methods"] = methods;
  j["config"] = report.config;
  return j;
}

/// Gnuplot-friendly TSV: one row per method, tab-separated columns.
inline std::string report_tsv(const ExperimentReport& report) {
  std::string out = "method\tn_runs\tmean_entropy\tsd_entropy\tmean_log_loss\tsd_log_loss\n";
  for (const MethodStats& m : report.methods) {
    out += m.method;
    out += '\t';
    out += std::to_string(m.n_runs);
    out += '\t';
    out += detail::format_double(m.mean_entropy);
    out += '\t';
    out += detail::format_double(m.sd_entropy);
    out += '\t';
    out += detail::format_double(m.mean_log_loss);
    out += '\t';
    out += detail::format_double(m.sd_log_loss);
    out += '\n';
  }
  return out;
}

/// Serializes a fused run as versioned JSON, one record per example.
inline void write_fused(const std::string& path, const FusedRun& run) {
  if (run.ids.size() != run.posteriors.size())
    throw validation_error("fused run ids and posteriors disagree in length");
  if (run.posteriors.empty()) throw validation_error("fused run has no examples");
  nlohmann::json j;
  j["format_version"] = 1;
  j["method"] = run.method;
  j["n_classes"] = run.posteriors.front().dim();
  nlohmann::json examples = nlohmann::json::array();
  for (std::size_t i = 0; i < run.posteriors.size(); ++i) {
    const Simplex& p = run.posteriors[i];
    examples.push_back({{"id", run.ids[i]},
                        {"p", p.probs()},
                        {"map", map_label(p).value}});
  }
  j["examples"] = examples;
  j["provenance"] = {{"seed", run.seed}};
  detail::atomic_write(path, j.dump(2) + "\n");
}

/// Reads a fused run back, enforcing the schema and rebuilding the
/// posteriors through the usual simplex validation.
inline FusedRun read_fused(const std::string& path) {
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
    if (j.at("format_version").get<int>() != 1)
      throw validation_error("unsupported fused format_version");
    FusedRun run;
    run.method = j.at("method").get<std::string>();
    const std::size_t J = j.at("n_classes").get<std::size_t>();
    for (const auto& ex : j.at("examples")) {
      run.ids.push_back(ex.at("id").get<std::string>());
      Vec p = ex.at("p").get<Vec>();
      if (p.size() != J)
        throw validation_error("posterior dimension disagrees with n_classes");
      run.posteriors.push_back(make_simplex(std::move(p)));
    }
    if (run.posteriors.empty()) throw validation_error("fused file has no examples");
    if (j.contains("provenance"))
      run.seed = j.at("provenance").value("seed", std::uint64_t{0});
    return run;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path + ": " + e.what());
  } catch (const validation_error& e) {
    throw validation_error(path + ": " + e.what());
  }
}

}  // namespace corrfuse
