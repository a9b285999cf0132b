// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <unistd.h>

#include "support.hpp"
#include "itrnma/demo.hpp"
#include "itrnma/pipeline.hpp"

using namespace itrnma;
using itrnma::testing::toy_study;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %-34s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

/// Runs one criterion; an exception counts as a failure.
void criterion(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto [ok, detail] = body();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, " (%.0fs)", secs);
    report(ok, name, detail + buf);
  } catch (const std::exception& e) {
    report(false, name, std::string("threw: ") + e.what());
  }
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------- oracles

Eigen::VectorXd normal_equations(const DesignMatrices& dm, const Eigen::VectorXd& w) {
  const Eigen::MatrixXd x = dm.regression();
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    if (dm.m(j) != 0.0) continue;
    a += w(j) * x.row(j).transpose() * x.row(j);
    b += w(j) * dm.y(j) * x.row(j).transpose();
  }
  return a.fullPivLu().solve(b);
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> gls_oracle(const std::vector<BlipPosterior>& posts,
                                                       const TreatmentNetwork& net, double prior_sd) {
  Eigen::Index rows = 0;
  for (const auto& p : posts) rows += p.point.size();
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(rows, net.psi_size()), s = Eigen::MatrixXd::Zero(rows, rows);
  Eigen::VectorXd y(rows);
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < posts.size(); ++i) {
    const Eigen::Index d = posts[i].point.size();
    x.middleRows(at, d) = net.V(i);
    s.block(at, at, d, d) = posts[i].cov;
    y.segment(at, d) = posts[i].point;
    at += d;
  }
  const Eigen::MatrixXd si = s.fullPivLu().inverse();
  Eigen::MatrixXd prec = x.transpose() * si * x;
  prec.diagonal().array() += 1.0 / (prior_sd * prior_sd);
  const Eigen::MatrixXd cov = prec.fullPivLu().inverse();
  return {cov * x.transpose() * si * y, cov};
}

/// Synthetic stage-one summaries on the simulation network.
std::vector<BlipPosterior> synthetic_inputs(int q, std::uint64_t seed, double cov_scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> stdn;
  const auto net = simulation_network(q);
  std::vector<BlipPosterior> out;
  for (std::size_t i = 0; i < net.studies().size(); ++i) {
    BlipPosterior p;
    p.study_id = net.studies()[i].study_id;
    p.arm_treatments = simulation_study_arms()[i];
    for (int m = 1; m <= q; ++m) p.modifiers.push_back({"x" + std::to_string(m), "continuous", 0.0, 4.0});
    const Eigen::Index d = q + 1;
    p.point.resize(d);
    for (auto& v : p.point) v = 2.0 + stdn(rng);
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = stdn(rng);
    p.cov = cov_scale * 0.02 * (a * a.transpose() / static_cast<double>(d) + 0.5 * Eigen::MatrixXd::Identity(d, d));
    out.push_back(std::move(p));
  }
  return out;
}

double half_normal_density(double x, double s) { return 2.0 / (s * std::sqrt(2.0 * M_PI)) * std::exp(-0.5 * x * x / (s * s)); }

// ---------------------------------------------------------------- criteria

std::pair<bool, std::string> u_golden() {
  Eigen::MatrixXd three(2, 4), two(1, 4);
  three << -1, 1, 0, 0, -1, 0, 1, 0;
  two << 1, 0, 0, 0;
  const bool ok = build_U({1, 2, 3}, 5) == three && build_U({0, 1}, 5) == two;
  return {ok, "3-arm {2,3,4} of 5 and 2-arm {1,2} of 5, exact"};
}

std::pair<bool, std::string> wls_oracle() {
  Rng rng(17);
  std::exponential_distribution<double> expo(1.0);
  double worst = 0.0;
  int done = 0;
  for (std::uint64_t seed = 0; done < 25; ++seed) {
    const auto d = toy_study(15 + static_cast<int>(seed % 16), 500 + seed, 2 + static_cast<int>(seed % 2), true);
    const auto dm = build_design(d);
    Eigen::VectorXd w(dm.rows());
    for (auto& v : w) v = expo(rng);
    WlsFit fit;
    try {
      fit = weighted_wls(dm, w);
    } catch (const SingularDesignError&) {
      continue;
    }
    Eigen::VectorXd theta(fit.beta.size() + fit.delta.size());
    theta << fit.beta, fit.delta;
    const Eigen::VectorXd ref = normal_equations(dm, w);
    worst = std::max(worst, (theta - ref).norm() / ref.norm());
    ++done;
  }
  return {worst < 1e-8, fmt("25 datasets n<=30, max relative error %.2e (tol 1e-8)", worst)};
}

std::pair<bool, std::string> glm_oracle() {
  double worst_coef = 0.0, worst_score = 0.0;
  for (int f = 0; f < 10; ++f) {
    const int k = f < 5 ? 2 : 3;
    Rng rng(900 + static_cast<std::uint64_t>(f));
    std::normal_distribution<double> stdn;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    const int n = 24 + 2 * f;
    Eigen::MatrixXd x(n, 3);
    std::vector<int> y(static_cast<std::size_t>(n));
    Eigen::VectorXd w(n);
    for (int j = 0; j < n; ++j) {
      x(j, 0) = 1.0, x(j, 1) = stdn(rng), x(j, 2) = stdn(rng);
      Eigen::VectorXd p(k);
      for (int c = 0; c < k; ++c) p(c) = std::exp(c * (0.2 - 0.7 * x(j, 1) + 0.3 * x(j, 2)));
      p /= p.sum();
      double u = unif(rng), acc = 0.0;
      int cat = k - 1;
      for (int c = 0; c < k; ++c)
        if (u < (acc += p(c))) {
          cat = c;
          break;
        }
      y[static_cast<std::size_t>(j)] = cat;
      w(j) = expo(rng);
    }
    for (int c = 0; c < k; ++c) y[static_cast<std::size_t>(c)] = c, y[static_cast<std::size_t>(k + c)] = c;
    const auto fit = fit_weighted_multinomial(x, y, k, w);
    if (!fit.converged) return {false, "fixture " + std::to_string(f) + " did not converge"};
    const Eigen::VectorXd wn = w / w.sum();
    const Eigen::VectorXd nm = itrnma::testing::nelder_mead_minimize(
        [&](const Eigen::VectorXd& b) { return itrnma::testing::neg_multinomial_loglik(x, y, k, wn, b); },
        Eigen::VectorXd::Zero((k - 1) * 3));
    worst_coef = std::max(worst_coef, (fit.coefficients - nm).cwiseAbs().maxCoeff());
    const Eigen::MatrixXd p = predict_category_probabilities(fit, x);
    for (int c = 1; c < k; ++c) {
      Eigen::VectorXd r(n);
      for (int j = 0; j < n; ++j) r(j) = w(j) * ((y[static_cast<std::size_t>(j)] == c ? 1.0 : 0.0) - p(j, c));
      worst_score = std::max(worst_score, (x.transpose() * r).cwiseAbs().maxCoeff());
    }
  }
  return {worst_coef < 1e-5 && worst_score < 1e-6,
          fmt("10 fixtures, max |coef diff| %.2e (tol 1e-5), max |score| %.2e (tol 1e-6)", worst_coef, worst_score)};
}

std::pair<bool, std::string> common_effects_exactness() {
  const int q = 1;
  const auto posts = synthetic_inputs(q, 31);
  const auto net = simulation_network(q);
  NmaConfig cfg;
  cfg.seed = 7;
  const auto ce = fit_common_effects(posts, net, cfg);
  const auto [m, c] = gls_oracle(posts, net, cfg.prior_psi_sd);
  const double gls_err = std::max((ce.analytic_mean - m).cwiseAbs().maxCoeff(), (ce.analytic_cov - c).cwiseAbs().maxCoeff());

  NmaConfig re_cfg = cfg;
  re_cfg.effects = Effects::random;
  re_cfg.prior_tau_scale = 1e-8;
  re_cfg.chains = 4;
  re_cfg.warmup = 500;
  re_cfg.iters = 10500;  // 40000 kept draws
  const auto re = fit_random_effects(posts, net, re_cfg);
  const Eigen::VectorXd sd = ce.analytic_cov.diagonal().cwiseSqrt();
  const double mean_gap = (column_means(re.psi_draws) - ce.analytic_mean).cwiseQuotient(sd).cwiseAbs().maxCoeff();
  const double sd_gap =
      (sample_covariance(re.psi_draws).diagonal().cwiseSqrt() - sd).cwiseQuotient(sd).cwiseAbs().maxCoeff();
  const bool ok = gls_err < 1e-8 && mean_gap < 0.02 && sd_gap < 0.02 && re.draws() >= 20000;
  return {ok, fmt("GLS max err %.2e (tol 1e-8); sigma_tau=1e-8 at S=%.0f: mean gap %.4f SD, sd gap %.4f (tol 0.02)",
                  gls_err, static_cast<double>(re.draws()), mean_gap, sd_gap)};
}

std::pair<bool, std::string> prior_recovery() {
  const auto posts = synthetic_inputs(1, 41, 1e6);
  NmaConfig cfg;
  cfg.effects = Effects::random;
  cfg.seed = 11;
  cfg.iters = 6000;
  cfg.warmup = 1000;
  const auto post = fit_random_effects(posts, simulation_network(1), cfg);
  const double ess = post.tau_diagnostics->ess;
  std::vector<double> tau(post.tau_draws.data(), post.tau_draws.data() + post.tau_draws.size());
  std::string detail;
  bool ok = true;
  for (double p : {0.5, 0.95}) {
    const double truth = half_normal_quantile(0.51, p);
    const double est = quantile(tau, p);
    const double mcse = std::sqrt(p * (1.0 - p) / ess) / half_normal_density(truth, 0.51);
    ok = ok && std::abs(est - truth) < 3.0 * mcse;
    detail += fmt("q%.0f %.4f vs %.4f (3 MCSE %.4f); ", 100 * p, est, truth, 3 * mcse);
  }
  return {ok, detail + fmt("ESS %.0f", ess)};
}

std::pair<bool, std::string> consistency_closure() {
  const auto posts = synthetic_inputs(1, 51);
  const auto net = simulation_network(1);
  NmaConfig cfg;
  cfg.iters = 1500;
  cfg.warmup = 500;
  double worst = 0.0;
  for (Effects e : {Effects::common, Effects::random}) {
    cfg.effects = e;
    const auto post = fit_nma(posts, net, cfg);
    for (int q = 0; q <= 1; ++q) {
      const Eigen::VectorXd lhs = consistency_contrast(post.psi_draws, 2, 1, q, 1);
      const Eigen::VectorXd rhs = post.psi_draws.col(psi_index(2, q, 1)) - post.psi_draws.col(psi_index(1, q, 1));
      worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
    }
  }
  return {worst == 0.0, fmt("psi_32 = psi_31 - psi_21 per draw, common and random, max |diff| %.1e", worst)};
}

/// Writes the demo network, fits both stages and returns every artifact's bytes.
std::vector<std::string> pipeline_bytes(const std::filesystem::path& dir, unsigned threads) {
  std::filesystem::create_directories(dir);
  RunConfig cfg;
  cfg.treatments = demo_treatments();
  cfg.reference = "SER";
  cfg.covariates = demo_covariates();
  cfg.roles = demo_roles();
  cfg.negate_outcome = true;
  cfg.stage_one.iterations = 200;
  cfg.stage_one.seed = 5;
  cfg.stage_one.trim_quantile = 0.99;
  cfg.stage_one.threads = threads;
  cfg.nma.effects = Effects::random;
  cfg.nma.iters = 800;
  cfg.nma.warmup = 300;
  cfg.nma.threads = threads;
  std::vector<std::string> out;
  for (const auto& d : demo_network(20240501)) {
    const auto path = dir / (d.study_id + ".csv");
    std::ofstream f(path, std::ios::binary);
    write_csv(f, d, true);
    f.close();
    cfg.studies.push_back({d.study_id, path, cfg.stage_one});
  }
  std::vector<BlipPosterior> posts;
  for (const auto& s : cfg.studies) {
    const auto fit = fit_study(cfg, s.id, StageOne::bbdwols);
    out.push_back(study_artifact(fit, cfg, true).dump());
    posts.push_back(fit.posterior);
  }
  const auto nma = fit_network(posts, cfg.treatments, cfg.reference, cfg.nma);
  out.push_back(to_json(nma).dump());
  std::ostringstream forest;
  write_forest_csv(forest, nma);
  out.push_back(forest.str());
  return out;
}

std::pair<bool, std::string> determinism() {
  // same directory every run: artifacts echo the input paths
  const auto dir = std::filesystem::temp_directory_path() / ("itrnma_accept_" + std::to_string(::getpid()));
  auto run = [&](unsigned threads) {
    std::filesystem::remove_all(dir);
    auto out = pipeline_bytes(dir, threads);
    std::filesystem::remove_all(dir);
    return out;
  };
  const auto a = run(1), b = run(1), c = run(3);
  std::size_t bytes = 0;
  for (const auto& s : a) bytes += s.size();
  return {a == b && a == c,
          fmt("%.0f artifacts, %.0f bytes identical across runs and thread counts", static_cast<double>(a.size()),
              static_cast<double>(bytes))};
}

// ---------------------------------------------------------------- simulation criteria

const ParameterPerformance& param(const PerfReport& r, std::size_t c) { return r.parameters.at(c); }

}  // namespace

int main() {
  std::printf("itrnma acceptance\n");
  criterion("U golden cases", u_golden);
  criterion("WLS oracle", wls_oracle);
  criterion("GLM oracle", glm_oracle);
  criterion("Common-effects exactness", common_effects_exactness);
  criterion("Prior recovery", prior_recovery);
  criterion("Consistency closure", consistency_closure);
  criterion("Determinism", determinism);

  // Simulation grid, run once; scenarios sharing stage-one inputs reuse them.
  std::vector<Scenario> grid;
  auto add = [&](const std::string& label, DgmSpec dgm, StageOne m, Effects e, CovarianceMode cov) {
    Scenario s;
    s.label = label;
    s.dgm = std::move(dgm);
    s.method = m;
    s.reps = 200;
    s.seed = 20240501;
    s.bb_iterations = BbConfig::default_iterations(2 * (s.dgm.q + 1));
    s.nma.effects = e;
    s.nma.covariance = cov;
    s.nma.prior_tau_scale = 0.51;
    s.threads = 0;
    grid.push_back(std::move(s));
  };
  DgmSpec b_wrong = DgmSpec::B();
  b_wrong.omit_quadratic = true;
  add("bb", b_wrong, StageOne::bbdwols, Effects::common, CovarianceMode::full);
  add("ql", b_wrong, StageOne::qlearning, Effects::common, CovarianceMode::full);
  add("tau", DgmSpec::A(), StageOne::bbdwols, Effects::random, CovarianceMode::full);
  add("full", DgmSpec::C(), StageOne::bbdwols, Effects::common, CovarianceMode::full);
  add("sparse", DgmSpec::C(), StageOne::bbdwols, Effects::common, CovarianceMode::sparse);

  std::vector<PerfReport> reports;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    reports = run_scenarios(grid);
  } catch (const std::exception& e) {
    for (const char* n : {"Double robustness", "Covariance-mode efficiency", "Tau upward bias"})
      report(false, n, std::string("simulation threw: ") + e.what());
    return 1;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("      simulation grid: %zu scenarios x 200 reps in %.0fs\n", grid.size(), secs);

  {
    const auto& bb = reports[0];
    const auto& ql = reports[1];
    bool ok = true;
    std::string detail = "BB %bias/cover:";
    for (std::size_t c = 0; c < bb.parameters.size(); ++c) {
      const auto& p = param(bb, c);
      ok = ok && std::abs(p.pct_bias.value) < 2.0 && p.coverage.value >= 0.90 && p.coverage.value <= 0.98;
      detail += fmt(" %.2f/%.3f", p.pct_bias.value, p.coverage.value);
    }
    detail += "; QL main effects:";
    for (std::size_t c : {0u, 2u}) {
      const auto& q = param(ql, c);
      ok = ok && std::abs(q.pct_bias.value) >= std::abs(param(bb, c).pct_bias.value) + 4.0 && q.coverage.value < 0.90;
      detail += fmt(" %.2f/%.3f", q.pct_bias.value, q.coverage.value);
    }
    report(ok, "Double robustness", detail + fmt(" (converged %.0f/%.0f)", bb.converged, ql.converged));
  }
  {
    auto mean_interaction_se = [](const PerfReport& r) {
      double s = 0.0;
      int n = 0;
      for (std::size_t c = 0; c < r.parameters.size(); ++c)
        if (c % 11 != 0) s += r.parameters[c].emp_se.value, ++n;
      return s / n;
    };
    const double full = mean_interaction_se(reports[3]), sparse = mean_interaction_se(reports[4]);
    report(full <= sparse, "Covariance-mode efficiency",
           fmt("Q=10 tau=0, mean empirical SE over interactions: full %.5f, sparse %.5f", full, sparse));
  }
  {
    const auto& t = *reports[2].tau;
    report(t.pct_bias.value >= 5.0 && t.pct_bias.value <= 45.0, "Tau upward bias",
           fmt("tau=0.3, sigma_tau=0.51: %%bias %.1f (MCSE %.1f), required [+5, +45]", t.pct_bias.value,
               t.pct_bias.mcse));
  }

  std::printf("%s: %d failing criteria\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
