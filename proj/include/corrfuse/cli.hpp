#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "corrfuse/calibration.hpp"
#include "corrfuse/data_io.hpp"
#include "corrfuse/datagen.hpp"
#include "corrfuse/errors.hpp"
#include "corrfuse/fusion.hpp"
#include "corrfuse/inference.hpp"
#include "corrfuse/parallel.hpp"
#include "corrfuse/report.hpp"
#include "corrfuse/rng.hpp"
#include "corrfuse/types.hpp"

namespace corrfuse {
namespace cli {

/// FNV-1a over the canonical JSON dump of a command's configuration.  The hex
/// digest rides along in output provenance so a result can be traced back to
/// the exact invocation that produced it.
inline std::string config_hash(const nlohmann::json& desc) {
  const std::string s = desc.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Seed used when a command got no --seed: CORRFUSE_SEED from the
/// environment, else zero.
inline std::uint64_t env_default_seed() {
  const char* env = std::getenv("CORRFUSE_SEED");
  if (env == nullptr || *env == '\0') return 0;
  std::uint64_t v = 0;
  const char* end = env + std::string_view(env).size();
  auto [p, ec] = std::from_chars(env, end, v);
  if (ec != std::errc() || p != end)
    throw validation_error(std::string("CORRFUSE_SEED is not an unsigned integer: '") + env +
                           "'");
  return v;
}

/// Overlay of an MCMC config JSON onto a default budget.  Key names are
/// checked strictly so a typo cannot silently fall back to the default.
inline McmcConfig load_mcmc_config(const std::string& path, McmcConfig cfg, bool& has_seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path + ": " + e.what());
  }
  if (!j.is_object()) throw validation_error(path + ": expected a JSON object");
  for (const auto& item : j.items()) {
    const std::string& key = item.key();
    if (key != "n_chains" && key != "n_iter" && key != "n_burnin" && key != "thin" &&
        key != "adapt_window" && key != "seed")
      throw validation_error(path + ": unknown key '" + key + "'");
  }
  try {
    cfg.n_chains = j.value("n_chains", cfg.n_chains);
    cfg.n_iter = j.value("n_iter", cfg.n_iter);
    cfg.n_burnin = j.value("n_burnin", cfg.n_burnin);
    cfg.thin = j.value("thin", cfg.thin);
    cfg.adapt_window = j.value("adapt_window", cfg.adapt_window);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path + ": " + e.what());
  }
  if (cfg.n_chains < 1 || cfg.n_iter < 1 || cfg.n_burnin < 0 || cfg.n_burnin >= cfg.n_iter ||
      cfg.thin < 1 || cfg.adapt_window < 1)
    throw validation_error(path + ": need n_chains/n_iter/thin/adapt_window >= 1 and 0 <= n_burnin < n_iter");
  has_seed = j.contains("seed");
  return cfg;
}

inline nlohmann::json mcmc_json(const McmcConfig& cfg) {
  return {{"n_chains", cfg.n_chains}, {"n_iter", cfg.n_iter},
          {"n_burnin", cfg.n_burnin}, {"thin", cfg.thin},
          {"adapt_window", cfg.adapt_window}, {"seed", cfg.seed}};
}

/// Ids carried by the dataset, or the same e1, e2, ... sequence the CSV
/// writer synthesizes, so fused files always cross-reference cleanly.
inline std::vector<std::string> example_ids(const LabeledDataset& data) {
  if (!data.ids.empty()) return data.ids;
  std::vector<std::string> ids;
  ids.reserve(data.examples.size());
  for (std::size_t i = 0; i < data.examples.size(); ++i)
    ids.push_back("e" + std::to_string(i + 1));
  return ids;
}

inline std::string tsv_sibling(std::string path) {
  const std::string suffix = ".json";
  if (path.size() >= suffix.size() &&
      path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0)
    path.resize(path.size() - suffix.size());
  return path + ".tsv";
}

inline std::string set_filename(int index, int n_sets) {
  int width = 2;
  for (int n = n_sets; n >= 100; n /= 10) ++width;
  std::ostringstream name;
  name << "set_" << std::setfill('0') << std::setw(width) << index + 1 << ".csv";
  return name.str();
}

/// The shape parameters behind a params file, whichever model tag it carries;
/// the correlated model embeds the independent one.
inline IfmParams ifm_part(const ParamsFile& pf) {
  return pf.model == "cfm" ? pf.as_cfm().ifm : pf.as_ifm();
}

inline int cmd_calibrate(const std::string& alpha_path, double r, std::uint64_t seed,
                         const std::string& out_path) {
  const IfmParams ifm = ifm_part(read_params(alpha_path));
  if (ifm.n_classifiers() != 2)
    throw validation_error("coupling calibration covers exactly 2 classifiers, got " +
                           std::to_string(ifm.n_classifiers()));
  const std::size_t J = static_cast<std::size_t>(ifm.n_classes());

  Mat delta(J);
  RngState rng = RngState(seed).derive(0);
  for (std::size_t j = 0; j < J; ++j)
    delta[j] = calibrate_delta(ifm.alpha[0][j], ifm.alpha[1][j], r, rng);

  const nlohmann::json desc{
      {"cmd", "calibrate"}, {"alpha", alpha_path}, {"r", r}, {"seed", seed}};
  write_params(out_path, params_file(make_cfm_params(ifm, delta), seed, config_hash(desc)));

  std::cout << "calibrated coupling for " << J << " classes at r = " << r << "\n";
  for (std::size_t j = 0; j < J; ++j) {
    std::cout << "  class " << j + 1 << ": delta =";
    for (double d : delta[j]) {
      char buf[32];
      std::snprintf(buf, sizeof buf, " %.4g", d);
      std::cout << buf;
    }
    std::cout << "\n";
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

/// Spec JSON for `simulate`: either {"experiment": "sim1"|"sim2", "r": ...}
/// or the explicit form with an "alpha" cube; n_test_sets,
/// examples_per_class and seed may override in both forms.
inline SimSpec load_sim_spec(const std::string& path, bool& has_seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path + ": " + e.what());
  }
  if (!j.is_object()) throw validation_error(path + ": expected a JSON object");

  SimSpec spec;
  try {
    const double r = j.value("r", 0.0);
    if (j.contains("experiment")) {
      const std::string name = j.at("experiment").get<std::string>();
      if (name == "sim1")
        spec = sim1_spec(r, 0);
      else if (name == "sim2")
        spec = sim2_spec(r, 0);
      else
        throw validation_error(path + ": unknown experiment '" + name + "'");
      if (j.contains("alpha"))
        throw validation_error(path + ": give either 'experiment' or 'alpha', not both");
    } else {
      if (!j.contains("alpha"))
        throw validation_error(path + ": need 'experiment' or an 'alpha' cube");
      spec.alpha = j.at("alpha").get<Cube>();
      spec.r = r;
    }
    spec.n_test_sets = j.value("n_test_sets", spec.n_test_sets);
    spec.examples_per_class = j.value("examples_per_class", spec.examples_per_class);
    spec.seed = j.value("seed", spec.seed);
    has_seed = j.contains("seed");
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path + ": " + e.what());
  }
  return spec;
}

inline int cmd_simulate(const std::string& spec_path, const std::string& out_dir,
                        std::uint64_t seed, bool seed_given, int jobs) {
  bool spec_has_seed = false;
  SimSpec spec = load_sim_spec(spec_path, spec_has_seed);
  if (seed_given)
    spec.seed = seed;
  else if (!spec_has_seed)
    spec.seed = env_default_seed();

  std::filesystem::create_directories(out_dir);
  const std::vector<LabeledDataset> sets = generate_dataset(spec);

  std::vector<std::string> files(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s)
    files[s] = set_filename(static_cast<int>(s), spec.n_test_sets);
  parallel_for(sets.size(), jobs,
               [&](std::size_t s) { write_dataset(out_dir + "/" + files[s], sets[s]); });

  const nlohmann::json desc{{"cmd", "simulate"},
                            {"alpha", spec.alpha},
                            {"r", spec.r},
                            {"n_test_sets", spec.n_test_sets},
                            {"examples_per_class", spec.examples_per_class},
                            {"seed", spec.seed}};
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["r"] = spec.r;
  manifest["n_test_sets"] = spec.n_test_sets;
  manifest["examples_per_class"] = spec.examples_per_class;
  manifest["n_classes"] = sets.front().n_classes;
  manifest["n_classifiers"] = sets.front().n_classifiers;
  manifest["files"] = files;
  manifest["provenance"] = {{"seed", spec.seed}, {"config_hash", config_hash(desc)}};
  detail::atomic_write(out_dir + "/manifest.json", manifest.dump(2) + "\n");

  std::cout << "wrote " << sets.size() << " test sets ("
            << sets.front().examples.size() << " rows each) to " << out_dir << "\n";
  return 0;
}

inline int cmd_fit(const std::string& model, const std::string& train_path,
                   const std::string& mcmc_path, const std::string& out_path,
                   std::uint64_t seed, bool seed_given, bool allow_unconverged) {
  McmcConfig cfg = McmcConfig::fit_defaults();
  bool cfg_has_seed = false;
  if (!mcmc_path.empty()) cfg = load_mcmc_config(mcmc_path, cfg, cfg_has_seed);
  if (seed_given)
    cfg.seed = seed;
  else if (!cfg_has_seed)
    cfg.seed = env_default_seed();

  const LabeledDataset data = read_dataset(train_path);
  const nlohmann::json desc{
      {"cmd", "fit"}, {"model", model}, {"train", train_path}, {"mcmc", mcmc_json(cfg)}};

  ParamsFile out_params;
  nlohmann::json diag;
  double max_rhat = 1.0;
  if (model == "ifm") {
    const IfmPosterior post = fit_ifm(data, {}, cfg);
    max_rhat = post.max_rhat;
    out_params = params_file(post.point, cfg.seed, config_hash(desc));
    diag = {{"max_rhat", post.max_rhat},
            {"accept_rate", post.accept_rate},
            {"warnings", post.warnings}};
  } else if (model == "cfm-stepwise") {
    const IfmPosterior stage1 = fit_ifm(data, {}, cfg);
    // The coupling stage gets its own seed stream so its chains cannot
    // overlap the shape stage's.
    McmcConfig cfg2 = cfg;
    cfg2.seed = detail::mix(cfg.seed, 1);
    const CfmPosterior stage2 = fit_cfm_stepwise(data, stage1.point, {}, cfg2);
    max_rhat = std::max(stage1.max_rhat, stage2.max_rhat);
    out_params = params_file(stage2.point, cfg.seed, config_hash(desc));
    std::vector<std::string> warnings = stage1.warnings;
    warnings.insert(warnings.end(), stage2.warnings.begin(), stage2.warnings.end());
    diag = {{"max_rhat", max_rhat},
            {"accept_rate_alpha", stage1.accept_rate},
            {"accept_rate_delta", stage2.accept_rate},
            {"warnings", warnings}};
  } else if (model == "cfm-joint") {
    const CfmPosterior post = fit_cfm_joint(data, {}, cfg);
    max_rhat = post.max_rhat;
    out_params = params_file(post.point, cfg.seed, config_hash(desc));
    diag = {{"max_rhat", post.max_rhat},
            {"accept_rate", post.accept_rate},
            {"warnings", post.warnings}};
  } else {
    throw validation_error("unknown model '" + model + "'");
  }

  if (max_rhat > 1.2) {
    if (!allow_unconverged) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3f", max_rhat);
      throw convergence_error(std::string("fit did not converge: max split-Rhat = ") + buf +
                              " > 1.2; raise the budget or pass --allow-unconverged");
    }
    std::cerr << "warning: max split-Rhat = " << max_rhat
              << " > 1.2; writing the summary anyway\n";
  }

  write_params(out_path, out_params, diag);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", max_rhat);
  std::cout << "fit " << model << " on " << data.examples.size() << " examples; max split-Rhat "
            << buf << "\n";
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

inline int cmd_fuse(const std::string& method, const std::string& params_path,
                    const std::string& data_path, const std::string& out_path,
                    const std::string& mcmc_path, std::uint64_t seed, bool seed_given,
                    int jobs) {
  const LabeledDataset data = read_dataset(data_path);
  const std::size_t n = data.examples.size();
  const std::uint64_t base_seed = seed_given ? seed : env_default_seed();

  std::optional<ParamsFile> pf;
  if (!params_path.empty()) pf = read_params(params_path);
  if (method != "iop" && !pf)
    throw validation_error("method '" + method + "' needs --params");

  std::vector<std::optional<Simplex>> post(n);
  if (method == "iop") {
    for (std::size_t i = 0; i < n; ++i) post[i] = fuse_iop(data.examples[i].outputs).posterior;
  } else if (method == "ifm") {
    const IfmParams params = ifm_part(*pf);
    for (std::size_t i = 0; i < n; ++i)
      post[i] = fuse_ifm(data.examples[i].outputs, params).posterior;
  } else if (method == "meta1" || method == "meta2") {
    const IfmParams params = ifm_part(*pf);
    const int k = method == "meta1" ? 0 : 1;
    if (data.n_classifiers <= k)
      throw validation_error("method '" + method + "' needs classifier " + std::to_string(k + 1) +
                             " columns, but the data has " + std::to_string(data.n_classifiers));
    for (std::size_t i = 0; i < n; ++i)
      post[i] =
          meta_classify(data.examples[i].outputs[static_cast<std::size_t>(k)], params, k).posterior;
  } else if (method == "cfm") {
    if (pf->model != "cfm")
      throw validation_error("method 'cfm' needs a params file with model \"cfm\" "
                             "(coupling deltas); '" + params_path + "' has model '" +
                             pf->model + "'");
    const CfmParams params = pf->as_cfm();
    if (data.n_classifiers != 2)
      throw validation_error("method 'cfm' covers exactly 2 classifiers, but the data has " +
                             std::to_string(data.n_classifiers));
    McmcConfig cfg = McmcConfig::fusion_defaults();
    bool ignored = false;
    if (!mcmc_path.empty()) cfg = load_mcmc_config(mcmc_path, cfg, ignored);
    parallel_for(n, jobs, [&](std::size_t i) {
      McmcConfig c = cfg;
      c.seed = detail::mix(base_seed, i);
      const CorrelatedPair pair{data.examples[i].outputs[0], data.examples[i].outputs[1]};
      post[i] = fuse_cfm(pair, params, c).posterior;
    });
  } else {
    throw validation_error("unknown method '" + method + "'");
  }

  FusedRun run;
  run.method = method;
  run.seed = base_seed;
  run.ids = example_ids(data);
  run.posteriors.reserve(n);
  double mean_entropy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_entropy += entropy(*post[i]);
    run.posteriors.push_back(std::move(*post[i]));
  }
  mean_entropy /= static_cast<double>(n);
  write_fused(out_path, run);

  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", mean_entropy);
  std::cout << "fused " << n << " examples with " << method << "; mean entropy " << buf << "\n";
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

inline int cmd_eval(const std::vector<std::string>& fused_paths,
                    const std::vector<std::string>& data_paths, const std::string& out_path) {
  if (fused_paths.empty() || fused_paths.size() != data_paths.size())
    throw validation_error("--fused and --data need the same, nonzero number of files");

  std::vector<RunScore> scores;
  scores.reserve(fused_paths.size());
  for (std::size_t i = 0; i < fused_paths.size(); ++i) {
    const FusedRun run = read_fused(fused_paths[i]);
    const LabeledDataset data = read_dataset(data_paths[i]);
    scores.push_back(score_run(run, data));
  }

  const nlohmann::json cfg{{"cmd", "eval"}, {"fused", fused_paths}, {"data", data_paths}};
  const ExperimentReport report = compute_report(scores, cfg);
  detail::atomic_write(out_path, report_json(report).dump(2) + "\n");
  detail::atomic_write(tsv_sibling(out_path), report_tsv(report));
  std::cout << render_table(report);
  std::cout << "wrote " << out_path << " and " << tsv_sibling(out_path) << "\n";
  return 0;
}

inline int cmd_replicate(const std::string& experiment, double r, std::uint64_t seed,
                         const std::string& out_dir, int n_sets, int examples_per_class,
                         const std::string& mcmc_path, int jobs) {
  SimSpec spec = experiment == "sim1" ? sim1_spec(r, seed) : sim2_spec(r, seed);
  if (n_sets > 0) spec.n_test_sets = n_sets;
  if (examples_per_class > 0) spec.examples_per_class = examples_per_class;

  McmcConfig cfg = McmcConfig::fusion_defaults();
  bool ignored = false;
  if (!mcmc_path.empty()) cfg = load_mcmc_config(mcmc_path, cfg, ignored);

  const nlohmann::json desc{{"cmd", "replicate"},
                            {"experiment", experiment},
                            {"r", r},
                            {"seed", seed},
                            {"n_test_sets", spec.n_test_sets},
                            {"examples_per_class", spec.examples_per_class},
                            {"fusion_mcmc", mcmc_json(cfg)}};
  const std::string hash = config_hash(desc);

  // The test sets come with known generating parameters, so fusion uses the
  // truth directly; nothing is trained.
  const std::size_t J = spec.alpha[0].size();
  const IfmParams ifm = make_ifm_params(spec.alpha, uniform_prior(static_cast<int>(J)));
  const CfmParams cfm = make_cfm_params(ifm, calibrate_spec_delta(spec));

  std::filesystem::create_directories(out_dir + "/sets");
  write_params(out_dir + "/params.json", params_file(cfm, seed, hash));

  const std::vector<LabeledDataset> sets = generate_dataset(spec);

  std::vector<RunScore> scores;
  scores.reserve(sets.size() * 7);
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const LabeledDataset& set = sets[s];
    const std::size_t n = set.examples.size();
    write_dataset(out_dir + "/sets/" + set_filename(static_cast<int>(s), spec.n_test_sets), set);

    const std::vector<std::string> ids = example_ids(set);
    auto score = [&](const std::string& tag, std::vector<Simplex> posteriors) {
      scores.push_back(score_run(FusedRun{tag, ids, std::move(posteriors), seed}, set));
    };

    std::vector<Simplex> c1, c2, iop, ifm_post, m1, m2;
    for (const LabeledExample& ex : set.examples) {
      c1.push_back(ex.outputs[0]);
      c2.push_back(ex.outputs[1]);
      iop.push_back(fuse_iop(ex.outputs).posterior);
      ifm_post.push_back(fuse_ifm(ex.outputs, ifm).posterior);
      m1.push_back(meta_classify(ex.outputs[0], ifm, 0).posterior);
      m2.push_back(meta_classify(ex.outputs[1], ifm, 1).posterior);
    }

    std::vector<std::optional<Simplex>> cfm_post(n);
    const std::uint64_t set_seed = detail::mix(seed, s);
    parallel_for(n, jobs, [&](std::size_t i) {
      McmcConfig c = cfg;
      c.seed = detail::mix(set_seed, i);
      const CorrelatedPair pair{set.examples[i].outputs[0], set.examples[i].outputs[1]};
      cfm_post[i] = fuse_cfm(pair, cfm, c).posterior;
    });
    std::vector<Simplex> cfm_vec;
    cfm_vec.reserve(n);
    for (std::size_t i = 0; i < n; ++i) cfm_vec.push_back(std::move(*cfm_post[i]));

    score("C1", std::move(c1));
    score("C2", std::move(c2));
    score("IOP", std::move(iop));
    score("IFM", std::move(ifm_post));
    score("CFM", std::move(cfm_vec));
    score("M1", std::move(m1));
    score("M2", std::move(m2));
    std::clog << "fused set " << s + 1 << "/" << sets.size() << "\n";
  }

  nlohmann::json cfg_echo = desc;
  cfg_echo["config_hash"] = hash;
  const ExperimentReport report = compute_report(scores, cfg_echo);
  detail::atomic_write(out_dir + "/report.json", report_json(report).dump(2) + "\n");
  detail::atomic_write(out_dir + "/report.tsv", report_tsv(report));
  std::cout << render_table(report);
  std::cout << "wrote " << out_dir << "/report.json\n";
  return 0;
}

/// Entry point for the tool: args as on the command line, program name
/// excluded.  Maps library failures onto stable exit codes: 1 for bad input
/// or usage, 2 for numerical trouble, 3 for failed convergence.
inline int run(std::vector<std::string> args) {
  CLI::App app{"Fusion of correlated probabilistic classifiers", "corrfuse"};
  app.require_subcommand(1);

  std::string alpha_path, spec_path, model, train_path, mcmc_path, method, params_path;
  std::string data_path, out_path, out_dir, experiment;
  std::vector<std::string> fused_paths, data_paths;
  double r = 0.0;
  std::uint64_t seed = 0;
  bool allow_unconverged = false;
  int jobs = 1;
  int n_sets = 0;
  int examples_per_class = 0;

  CLI::App* calibrate = app.add_subcommand(
      "calibrate", "Find the coupling that hits a target output correlation");
  calibrate->add_option("--alpha", alpha_path, "params JSON with the Dirichlet shapes")
      ->required();
  calibrate->add_option("--r", r, "target correlation in [0, 1]")->required();
  calibrate->add_option("--seed", seed, "RNG seed");
  calibrate->add_option("--out", out_path, "output params JSON (model cfm)")->required();

  CLI::App* simulate =
      app.add_subcommand("simulate", "Draw labeled test sets from the generative model");
  simulate->add_option("--spec", spec_path, "simulation spec JSON")->required();
  simulate->add_option("--out-dir", out_dir, "output directory")->required();
  simulate->add_option("--seed", seed, "RNG seed (overrides the spec file)");
  simulate->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  CLI::App* fit = app.add_subcommand("fit", "Fit model parameters to labeled outputs");
  fit->add_option("--model", model, "ifm, cfm-stepwise or cfm-joint")
      ->required()
      ->check(CLI::IsMember({"ifm", "cfm-stepwise", "cfm-joint"}));
  fit->add_option("--train", train_path, "training CSV")->required();
  fit->add_option("--mcmc", mcmc_path, "MCMC config JSON (defaults to the fit budget)");
  fit->add_option("--out", out_path, "output params JSON")->required();
  fit->add_option("--seed", seed, "RNG seed (overrides the config file)");
  fit->add_flag("--allow-unconverged", allow_unconverged,
                "write the summary even when split-Rhat exceeds 1.2");

  CLI::App* fuse = app.add_subcommand("fuse", "Fuse per-example classifier outputs");
  fuse->add_option("--method", method, "iop, ifm, cfm, meta1 or meta2")
      ->required()
      ->check(CLI::IsMember({"iop", "ifm", "cfm", "meta1", "meta2"}));
  fuse->add_option("--params", params_path, "params JSON (not needed for iop)");
  fuse->add_option("--data", data_path, "dataset CSV")->required();
  fuse->add_option("--out", out_path, "output fused JSON")->required();
  fuse->add_option("--mcmc", mcmc_path, "MCMC config JSON for cfm (defaults to the fusion budget)");
  fuse->add_option("--seed", seed, "RNG seed");
  fuse->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  CLI::App* eval = app.add_subcommand("eval", "Score fused runs against their ground truth");
  eval->add_option("--fused", fused_paths, "fused JSON files")->required();
  eval->add_option("--data", data_paths, "dataset CSVs, one per fused file")->required();
  eval->add_option("--out", out_path, "output report JSON (TSV written alongside)")->required();

  CLI::App* replicate = app.add_subcommand(
      "replicate", "End-to-end simulation study: calibrate, simulate, fuse, evaluate");
  replicate->add_option("--experiment", experiment, "sim1 or sim2")
      ->required()
      ->check(CLI::IsMember({"sim1", "sim2"}));
  replicate->add_option("--r", r, "correlation level in [0, 1]")->required();
  replicate->add_option("--seed", seed, "RNG seed");
  replicate->add_option("--out-dir", out_dir, "output directory")->required();
  replicate->add_option("--sets", n_sets, "override the number of test sets")
      ->check(CLI::PositiveNumber);
  replicate
      ->add_option("--examples-per-class", examples_per_class,
                   "override the per-class example count")
      ->check(CLI::PositiveNumber);
  replicate->add_option("--mcmc", mcmc_path, "MCMC config JSON for the cfm fusions");
  replicate->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(calibrate)) {
      if (calibrate->count("--seed") == 0) seed = env_default_seed();
      return cmd_calibrate(alpha_path, r, seed, out_path);
    }
    if (app.got_subcommand(simulate))
      return cmd_simulate(spec_path, out_dir, seed, simulate->count("--seed") > 0, jobs);
    if (app.got_subcommand(fit))
      return cmd_fit(model, train_path, mcmc_path, out_path, seed, fit->count("--seed") > 0,
                     allow_unconverged);
    if (app.got_subcommand(fuse))
      return cmd_fuse(method, params_path, data_path, out_path, mcmc_path, seed,
                      fuse->count("--seed") > 0, jobs);
    if (app.got_subcommand(eval)) return cmd_eval(fused_paths, data_paths, out_path);
    if (app.got_subcommand(replicate)) {
      if (replicate->count("--seed") == 0) seed = env_default_seed();
      return cmd_replicate(experiment, r, seed, out_dir, n_sets, examples_per_class, mcmc_path,
                           jobs);
    }
  } catch (const validation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const convergence_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace cli
}  // namespace corrfuse
