// itrnma command-line entry point.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 data error,
// 4 numerical or identifiability failure, 5 fit finished but did not pass the
// convergence checks.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "itrnma/demo.hpp"
#include "itrnma/itrnma.hpp"
#include "itrnma/pipeline.hpp"
#include "itrnma/serve.hpp"

namespace fs = std::filesystem;
using namespace itrnma;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitNotConverged = 5;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
    case ErrorKind::profile:
      return kExitConfig;
    case ErrorKind::data:
      return kExitData;
    case ErrorKind::numerical:
    case ErrorKind::identifiability:
      return kExitNumerical;
  }
  return kExitNumerical;
}

void emit(const json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (out.empty() || out == "-") std::cout << text;
  else write_text_file(out, text);
}

std::vector<double> parse_vector(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto d = parse_double(detail::trim(cell));
    if (!d) throw ProfileError("profile value '" + cell + "' is not a number");
    v.push_back(*d);
  }
  return v;
}

std::optional<json> run_config_echo(const json& artifact) {
  if (artifact.contains("run_config")) return json(artifact["run_config"]);
  return std::nullopt;
}

// ---------------------------------------------------------------- fit-study

struct FitStudyArgs {
  std::string config, study, out, method = "bbdwols";
  std::optional<std::uint64_t> seed;
  std::optional<double> trim_quantile;
  std::optional<int> iterations;
  std::optional<unsigned> threads;
  bool negate_outcome = false, with_draws = false;
};

int fit_study_cmd(const FitStudyArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (a.negate_outcome) cfg.negate_outcome = true;
  const auto method = stage_one_from_string(a.method);
  std::vector<std::string> ids;
  if (a.study.empty())
    for (const auto& s : cfg.studies) ids.push_back(s.id);
  else
    ids.push_back(a.study);
  for (auto& s : cfg.studies) {
    if (a.seed) s.stage_one.seed = *a.seed;
    if (a.trim_quantile) s.stage_one.trim_quantile = *a.trim_quantile;
    if (a.iterations) s.stage_one.iterations = *a.iterations;
    if (a.threads) s.stage_one.threads = *a.threads;
    s.stage_one.validate();
  }
  for (const auto& id : ids) {
    const StudyFit fit = fit_study(cfg, id, method);
    for (const auto& [name, n] : fit.imputed) std::cerr << id << ": imputed " << n << " value(s) of " << name << "\n";
    if (fit.posterior.degraded)
      std::cerr << id << ": warning: " << fit.posterior.redraws << " singular resamples were redrawn\n";
    std::string out = a.out;
    if (ids.size() > 1 || out.empty()) {
      const fs::path dir = out.empty() ? cfg.output_dir : fs::path(out);
      fs::create_directories(dir);
      out = (dir / (id + ".blip.json")).string();
    }
    emit(study_artifact(fit, cfg, a.with_draws), out);
    std::cerr << id << ": wrote " << out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- fit-nma

struct FitNmaArgs {
  std::string config, out, forest_csv, effects, covariance, sampler;
  std::vector<std::string> posteriors;
  std::optional<std::uint64_t> seed;
  std::optional<int> chains, iters, warmup;
  std::optional<unsigned> threads;
  std::optional<double> sigma_tau;
};

int fit_nma_cmd(const FitNmaArgs& a) {
  std::vector<BlipPosterior> posts;
  std::optional<json> echo;
  for (const auto& p : a.posteriors) {
    const json j = read_json_file(p);
    posts.push_back(blip_posterior_from_json(j));
    if (!echo) echo = run_config_echo(j);
  }
  std::vector<std::string> registry = registry_from_posteriors(posts);
  std::optional<std::string> reference;
  NmaConfig nc;
  if (!a.config.empty()) {
    const RunConfig cfg = load_run_config(a.config, false);
    registry = cfg.treatments;
    reference = cfg.reference;
    nc = cfg.nma;
    echo = to_json(cfg);
  } else if (echo) {
    const RunConfig cfg = run_config_from_json(*echo, {}, false);
    registry = cfg.treatments;
    reference = cfg.reference;
    nc = cfg.nma;
  }
  if (!a.effects.empty()) nc.effects = effects_from_string(a.effects);
  if (!a.covariance.empty()) nc.covariance = covariance_from_string(a.covariance);
  if (!a.sampler.empty()) nc.sampler = sampler_from_string(a.sampler);
  if (a.seed) nc.seed = *a.seed;
  if (a.chains) nc.chains = *a.chains;
  if (a.iters) nc.iters = *a.iters;
  if (a.warmup) nc.warmup = *a.warmup;
  if (a.threads) nc.threads = *a.threads;
  if (a.sigma_tau) nc.prior_tau_scale = *a.sigma_tau;
  nc.validate();

  const NmaPosterior post = fit_network(posts, registry, reference, nc);
  emit(to_json(post, echo), a.out);
  if (!a.forest_csv.empty()) {
    std::ostringstream csv;
    write_forest_csv(csv, post);
    write_text_file(a.forest_csv, csv.str());
  }
  for (const auto& s : psi_summaries(post))
    std::cerr << s.name << "  mean " << s.mean << "  95% CrI [" << s.q025 << ", " << s.q975 << "]  rhat " << s.rhat
              << "  ess " << s.ess << "\n";
  if (!post.converged) {
    std::cerr << "warning: convergence checks failed (rhat >= " << nc.rhat_threshold << " or ess < " << nc.min_ess
              << ")\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string config, out, csv;
  std::optional<std::uint64_t> seed;
  std::optional<int> reps;
  std::optional<unsigned> threads;
};

int simulate_cmd(const SimulateArgs& a) {
  json j = read_json_file(a.config);
  if (a.seed) j["seed"] = *a.seed;
  if (a.reps) {
    j["reps"] = *a.reps;
    for (auto& s : j.at("scenarios")) s.erase("reps");
  }
  if (a.threads) j["threads"] = *a.threads;
  const ScenarioFile file = scenarios_from_json(j);
  const auto reports = run_scenarios(file.scenarios);
  json arr = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) arr.push_back(to_json(reports[i], file.scenarios[i]));
  emit({{"schema_version", kSchemaVersion}, {"kind", "perf_report"}, {"config", file.echo}, {"reports", arr}}, a.out);
  if (!a.csv.empty()) {
    std::ostringstream csv;
    write_perf_csv(csv, reports, file.scenarios);
    write_text_file(a.csv, csv.str());
  }
  return kExitOk;
}

// ---------------------------------------------------------------- profile

struct ProfileArgs {
  std::string posterior, x, covariates, out;
};

int profile_cmd(const ProfileArgs& a) {
  const NmaPosterior post = nma_posterior_from_json(read_json_file(a.posterior));
  Eigen::VectorXd x;
  if (!a.covariates.empty()) {
    json body;
    try {
      body = json::parse(a.covariates);
    } catch (const json::exception&) {
      throw ProfileError("--covariates is not valid JSON");
    }
    x = detail::profile_from_json(json{{"covariates", body}}, post.modifiers);
  } else {
    const auto v = parse_vector(a.x);
    x = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  emit(profile_answer(post, x), a.out);
  return kExitOk;
}

// ---------------------------------------------------------------- serve

httplib::Server* g_server = nullptr;

int serve_cmd(const std::string& posterior, const std::string& host, int port) {
  ModelStore store;
  const json j = read_json_file(posterior);
  store.load(nma_posterior_from_json(j), run_config_echo(j));
  httplib::Server server;
  install_routes(server, store);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "serving " << posterior << " on http://" << host << ":" << port << "\n";
  if (!server.listen(host, port)) {
    std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- synth

int synth_cmd(const std::string& out_dir, std::uint64_t seed) {
  fs::create_directories(out_dir);
  json studies = json::array();
  for (const auto& d : demo_network(seed)) {
    const std::string file = d.study_id + ".csv";
    std::ostringstream csv;
    write_csv(csv, d);
    write_text_file(fs::path(out_dir) / file, csv.str());
    studies.push_back({{"id", d.study_id}, {"path", file}});
  }
  json covs = json::array();
  for (const auto& c : demo_covariates()) covs.push_back(to_json(c));
  BbConfig bb;
  bb.seed = seed;
  bb.trim_quantile = 0.99;
  NmaConfig nc;
  nc.effects = Effects::common;
  nc.seed = seed;
  const json cfg{{"schema_version", kSchemaVersion},
                 {"treatments", demo_treatments()},
                 {"reference", demo_treatments().front()},
                 {"covariates", covs},
                 {"roles", to_json(demo_roles())},
                 {"studies", studies},
                 {"impute", true},
                 {"negate_outcome", true},
                 {"stage_one", to_json(bb)},
                 {"nma", to_json(nc)},
                 {"output_dir", "out"}};
  write_text_file(fs::path(out_dir) / "demo_config.json", cfg.dump(2) + "\n");
  std::cerr << "wrote " << studies.size() << " studies and demo_config.json to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Individualized treatment rules from multi-study data: stage-one blip posteriors and network pooling"};
  app.require_subcommand(1);

  FitStudyArgs fs_args;
  auto* fit_study = app.add_subcommand("fit-study", "Fit stage-one blip posteriors for studies of a run config");
  fit_study->add_option("--config", fs_args.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  fit_study->add_option("--study", fs_args.study, "Study id (default: every study in the config)");
  fit_study->add_option("--out", fs_args.out, "Output file for one study, or directory for several");
  fit_study->add_option("--method", fs_args.method, "bbdwols or qlearning")->check(CLI::IsMember({"bbdwols", "qlearning"}));
  fit_study->add_option("--seed", fs_args.seed, "Bootstrap seed");
  fit_study->add_option("--trim-quantile", fs_args.trim_quantile, "Trim weights above this quantile");
  fit_study->add_option("--iterations", fs_args.iterations, "Bootstrap iterations");
  fit_study->add_option("--threads", fs_args.threads, "Worker threads (0 = all cores)");
  fit_study->add_flag("--negate-outcome", fs_args.negate_outcome, "Multiply outcomes by -1 (smaller raw outcome is better)");
  fit_study->add_flag("--with-draws", fs_args.with_draws, "Include the bootstrap draws in the output");

  FitNmaArgs fn_args;
  auto* fit_nma = app.add_subcommand("fit-nma", "Pool stage-one posteriors in a network meta-analysis");
  fit_nma->add_option("--posteriors", fn_args.posteriors, "Blip posterior JSON files")->required()->check(CLI::ExistingFile);
  fit_nma->add_option("--config", fn_args.config, "Run config for registry, reference and NMA settings")
      ->check(CLI::ExistingFile);
  fit_nma->add_option("--out", fn_args.out, "Output JSON (default stdout)");
  fit_nma->add_option("--forest-csv", fn_args.forest_csv, "Forest-plot table");
  fit_nma->add_option("--effects", fn_args.effects, "common or random")->check(CLI::IsMember({"common", "random"}));
  fit_nma->add_option("--covariance", fn_args.covariance, "full or sparse")->check(CLI::IsMember({"full", "sparse"}));
  fit_nma->add_option("--sampler", fn_args.sampler, "collapsed or centered")
      ->check(CLI::IsMember({"collapsed", "centered"}));
  fit_nma->add_option("--seed", fn_args.seed, "Sampler seed");
  fit_nma->add_option("--chains", fn_args.chains, "Chains");
  fit_nma->add_option("--iters", fn_args.iters, "Iterations per chain including warmup");
  fit_nma->add_option("--warmup", fn_args.warmup, "Warmup iterations per chain");
  fit_nma->add_option("--threads", fn_args.threads, "Worker threads (0 = all cores)");
  fit_nma->add_option("--sigma-tau", fn_args.sigma_tau, "Half-normal prior scale of tau");

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "Run a simulation scenario grid and report performance");
  simulate->add_option("--config", sim_args.config, "Scenario JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim_args.out, "Output JSON (default stdout)");
  simulate->add_option("--csv", sim_args.csv, "Long-format performance table");
  simulate->add_option("--seed", sim_args.seed, "Master seed");
  simulate->add_option("--reps", sim_args.reps, "Replicates per scenario");
  simulate->add_option("--threads", sim_args.threads, "Worker threads (0 = all cores)");

  ProfileArgs pr_args;
  auto* profile = app.add_subcommand("profile", "Relative effects for one covariate profile");
  profile->add_option("--posterior", pr_args.posterior, "NMA posterior JSON")->required()->check(CLI::ExistingFile);
  auto* xopt = profile->add_option("--x", pr_args.x, "Comma-separated effect-modifier values in model order");
  auto* copt = profile->add_option("--covariates", pr_args.covariates, "JSON object keyed by effect-modifier name");
  xopt->excludes(copt);
  profile->add_option("--out", pr_args.out, "Output JSON (default stdout)");

  std::string serve_posterior, host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve an NMA posterior over HTTP");
  serve->add_option("--posterior", serve_posterior, "NMA posterior JSON")->required()->check(CLI::ExistingFile);
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port")->check(CLI::Range(1, 65535));

  std::string synth_dir = "data";
  std::uint64_t synth_seed = 20240501;
  auto* synth = app.add_subcommand("synth", "Write the synthetic three-study demo network");
  synth->add_option("--out-dir", synth_dir, "Output directory");
  synth->add_option("--seed", synth_seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*fit_study) return fit_study_cmd(fs_args);
    if (*fit_nma) return fit_nma_cmd(fn_args);
    if (*simulate) return simulate_cmd(sim_args);
    if (*profile) {
      if (pr_args.x.empty() && pr_args.covariates.empty()) {
        std::cerr << "error: profile needs --x or --covariates\n";
        return kExitConfig;
      }
      return profile_cmd(pr_args);
    }
    if (*serve) return serve_cmd(serve_posterior, host, port);
    if (*synth) return synth_cmd(synth_dir, synth_seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitConfig;
}
