#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "itrnma/bbdwols.hpp"
#include "itrnma/core.hpp"
#include "itrnma/error.hpp"
#include "itrnma/netmap.hpp"
#include "itrnma/nma.hpp"
#include "itrnma/stats.hpp"

namespace itrnma {

/// Data-generating mechanism on the four-study, three-treatment network:
/// studies 1-2 compare T1 with T2, studies 3-4 compare T1 with T3, and every
/// study uses T1 as its reference arm.
///
/// Covariates x_1..x_P (P = max(2, Q)) have mean shift_i and unit variance in study i.
///   reference:   intercept, x_1..x_P, x_1^2      (coefficients `reference_coef`)
///   blip:        intercept, x_1..x_Q             (delta_i ~ MVN(V_i psi, tau^2 R))
///   treatment:   logit Pr(arm 2) = intercept + x_1 + x_2 terms
///   missingness: logit Pr(M = 1) = intercept + x_1 + arm terms
struct DgmSpec {
  std::string name = "B";
  int n_per_study = 500;
  int q = 1;
  double tau = 0.0;
  std::vector<double> study_shift{0.0, 0.0, 0.0, 0.0};
  /// intercept, x_1..x_P, x_1^2
  Eigen::VectorXd reference_coef;
  /// (Q+1)(G-1) true meta-population blip parameters in psi order.
  Eigen::VectorXd psi;
  /// intercept, x_1, x_2
  Eigen::VectorXd treatment_coef;
  /// intercept, x_1, arm. An intercept of -inf switches missingness off.
  Eigen::VectorXd missing_coef;
  double noise_sd = 1.0;
  /// Covariates are shift_i + U(-sqrt 3, sqrt 3) instead of shift_i + N(0, 1).
  bool uniform_covariates = false;
  /// Analysis-side toggles: drop x_1^2 from the fitted reference model, and
  /// fit weight models that omit x_1.
  bool omit_quadratic = false;
  bool misspecify_weights = false;

  int covariate_count() const { return std::max(2, q); }

  void validate() const {
    if (n_per_study < 10) throw SchemaError("n_per_study must be >= 10");
    if (q < 1) throw SchemaError("DGM needs at least one effect modifier");
    if (tau < 0.0) throw SchemaError("tau must be >= 0");
    if (study_shift.size() != 4) throw SchemaError("study_shift needs 4 entries");
    if (reference_coef.size() != covariate_count() + 2) throw SchemaError("reference_coef has the wrong length");
    if (psi.size() != 2 * (q + 1)) throw SchemaError("psi has the wrong length");
    if (treatment_coef.size() != 3) throw SchemaError("treatment_coef needs 3 entries");
    if (missing_coef.size() != 3) throw SchemaError("missing_coef needs 3 entries");
  }

  /// Q = 1 with between-study heterogeneity tau = 0.3.
  static DgmSpec A() {
    DgmSpec s = B();
    s.name = "A";
    s.tau = 0.3;
    return s;
  }

  /// Q = 1, no heterogeneity.
  static DgmSpec B() {
    DgmSpec s;
    s.name = "B";
    s.q = 1;
    s.study_shift = {2.0, 2.3, 2.0, 2.3};
    s.uniform_covariates = true;
    s.reference_coef = (Eigen::VectorXd(4) << 1.0, 1.0, -0.5, 0.3).finished();
    s.psi = (Eigen::VectorXd(4) << 3.0, 2.0, 3.5, -2.0).finished();
    s.treatment_coef = (Eigen::VectorXd(3) << -0.3, 0.7, -0.5).finished();
    s.missing_coef = (Eigen::VectorXd(3) << -2.3, 0.5, 0.5).finished();
    s.noise_sd = 0.7;
    return s;
  }

  /// Q = 10, no heterogeneity.
  static DgmSpec C() {
    DgmSpec s = B();
    s.name = "C";
    s.q = 10;
    s.study_shift = {1.0, 3.0, 1.0, 3.0};
    s.reference_coef.resize(12);
    s.reference_coef << 1.0, 1.0, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.3;
    s.missing_coef << -1.9, 0.3, 0.5;
    s.psi.resize(22);
    s.psi << 3.0, 1.0, -1.0, 0.5, -0.5, 1.0, -1.0, 0.5, -0.5, 1.0, -1.0,  //
        3.5, -1.0, 1.0, -0.5, 0.5, -1.0, 1.0, -0.5, 0.5, -1.0, 1.0;
    return s;
  }

  static DgmSpec named(const std::string& letter) {
    if (letter == "A") return A();
    if (letter == "B") return B();
    if (letter == "C") return C();
    throw SchemaError("unknown DGM '" + letter + "'");
  }
};

inline const std::vector<std::string>& simulation_treatments() {
  static const std::vector<std::string> t{"T1", "T2", "T3"};
  return t;
}

inline const std::vector<std::vector<std::string>>& simulation_study_arms() {
  static const std::vector<std::vector<std::string>> arms{{"T1", "T2"}, {"T1", "T2"}, {"T1", "T3"}, {"T1", "T3"}};
  return arms;
}

inline TreatmentNetwork simulation_network(int q) {
  std::vector<std::pair<std::string, std::vector<std::string>>> studies;
  for (std::size_t i = 0; i < simulation_study_arms().size(); ++i)
    studies.emplace_back("study" + std::to_string(i + 1), simulation_study_arms()[i]);
  return TreatmentNetwork::build(simulation_treatments(), studies, q, std::string("T1"));
}

/// Analysis roles implied by a DGM and its misspecification toggles.
inline FormulaRoles simulation_roles(const DgmSpec& spec) {
  std::vector<std::string> ref, blip;
  for (int p = 1; p <= spec.covariate_count(); ++p) ref.push_back("x" + std::to_string(p));
  if (!spec.omit_quadratic) ref.push_back("x1^2");
  for (int p = 1; p <= spec.q; ++p) blip.push_back("x" + std::to_string(p));
  std::vector<std::string> trt = spec.misspecify_weights ? std::vector<std::string>{"x2"} : std::vector<std::string>{"x1", "x2"};
  std::vector<std::string> miss = spec.misspecify_weights ? std::vector<std::string>{"arm"} : std::vector<std::string>{"x1", "arm"};
  return FormulaRoles::parse(ref, blip, trt, miss);
}

struct SimulatedNetwork {
  std::vector<StudyDataset> studies;
  Eigen::VectorXd psi;
  std::vector<Eigen::VectorXd> delta;
};

/// One replicate of the network. Study i draws from the stream (rep_seed, i).
inline SimulatedNetwork simulate_network(const DgmSpec& spec, std::uint64_t rep_seed) {
  spec.validate();
  const TreatmentNetwork net = simulation_network(spec.q);
  const int n_cov = spec.covariate_count();
  const FormulaRoles roles = simulation_roles(spec);
  std::vector<CovariateSpec> covs;
  for (int p = 1; p <= n_cov; ++p) covs.push_back(CovariateSpec::continuous("x" + std::to_string(p)));

  SimulatedNetwork out;
  out.psi = spec.psi;
  for (std::size_t i = 0; i < net.studies().size(); ++i) {
    Rng rng = stream_rng(rep_seed, {static_cast<std::uint64_t>(i)});
    std::normal_distribution<double> stdn;
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    const Eigen::VectorXd mu = net.V(i) * spec.psi;
    Eigen::VectorXd delta = mu;
    if (spec.tau > 0.0) {
      Eigen::LLT<Eigen::MatrixXd> llt(heterogeneity_correlation(mu.size()));
      Eigen::VectorXd z(mu.size());
      for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = stdn(rng);
      delta += spec.tau * Eigen::VectorXd(llt.matrixL() * z);
    }
    out.delta.push_back(delta);

    StudyDataset d;
    d.study_id = net.studies()[i].study_id;
    d.covariates = covs;
    d.roles = roles;
    d.arm_treatments = simulation_study_arms()[i];
    const int n = spec.n_per_study;
    d.x.resize(n, n_cov);
    d.outcome.resize(n);
    d.arm.resize(static_cast<std::size_t>(n));
    d.subject_ids.resize(static_cast<std::size_t>(n));
    const bool missing_off = std::isinf(spec.missing_coef(0)) && spec.missing_coef(0) < 0;
    for (int j = 0; j < n; ++j) {
      for (int p = 0; p < n_cov; ++p)
        d.x(j, p) = spec.study_shift[i] + (spec.uniform_covariates ? std::sqrt(3.0) * (2.0 * unif(rng) - 1.0) : stdn(rng));
      const double x1 = d.x(j, 0), x2 = d.x(j, 1);
      const double p_trt = logistic(spec.treatment_coef(0) + spec.treatment_coef(1) * x1 + spec.treatment_coef(2) * x2);
      const int a = unif(rng) < p_trt ? 1 : 0;
      d.arm[static_cast<std::size_t>(j)] = a;
      double y = spec.reference_coef(0) + spec.reference_coef(n_cov + 1) * x1 * x1;
      for (int p = 0; p < n_cov; ++p) y += spec.reference_coef(p + 1) * d.x(j, p);
      if (a == 1) {
        y += delta(0);
        for (int q = 1; q <= spec.q; ++q) y += delta(q) * d.x(j, q - 1);
      }
      y += spec.noise_sd * stdn(rng);
      const double u = unif(rng);
      bool missing = false;
      if (!missing_off) {
        const double p_miss = logistic(spec.missing_coef(0) + spec.missing_coef(1) * x1 + spec.missing_coef(2) * a);
        missing = u < p_miss;
      }
      d.outcome(j) = missing ? std::numeric_limits<double>::quiet_NaN() : y;
      d.subject_ids[static_cast<std::size_t>(j)] = std::to_string(j + 1);
    }
    out.studies.push_back(std::move(d));
  }
  return out;
}

enum class StageOne { bbdwols, qlearning };

inline std::string to_string(StageOne s) { return s == StageOne::bbdwols ? "bbdwols" : "qlearning"; }

/// One row of the scenario grid.
struct Scenario {
  std::string label;
  DgmSpec dgm = DgmSpec::B();
  StageOne method = StageOne::bbdwols;
  int reps = 200;
  std::uint64_t seed = 20240501;
  int bb_iterations = 1999;
  NmaConfig nma;
  unsigned threads = 0;
};

/// A performance measure with its Monte Carlo standard error.
struct Measure {
  double value = std::numeric_limits<double>::quiet_NaN();
  double mcse = std::numeric_limits<double>::quiet_NaN();
};

struct ParameterPerformance {
  std::string name;
  double truth = 0.0;
  Measure bias;
  /// 100 (mean - truth) / |truth|; NaN when truth is zero.
  Measure pct_bias;
  Measure emp_se;
  Measure coverage;
};

struct PerfReport {
  std::string label;
  std::vector<ParameterPerformance> parameters;
  std::optional<ParameterPerformance> tau;
  int reps = 0;
  int converged = 0;
  int non_converged = 0;
};

/// Estimates from one replicate.
struct RepEstimate {
  Eigen::VectorXd mean;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double tau_mean = std::numeric_limits<double>::quiet_NaN();
  bool converged = true;
};

inline ParameterPerformance score_parameter(const std::string& name, double truth, const std::vector<double>& est,
                                            const std::vector<std::pair<double, double>>* intervals) {
  ParameterPerformance p;
  p.name = name;
  p.truth = truth;
  const auto n = static_cast<double>(est.size());
  const double m = mean(est);
  const double sd = std::sqrt(variance(est));
  p.bias = {m - truth, sd / std::sqrt(n)};
  if (truth != 0.0) p.pct_bias = {100.0 * (m - truth) / std::abs(truth), 100.0 * sd / std::sqrt(n) / std::abs(truth)};
  p.emp_se = {sd, sd / std::sqrt(2.0 * (n - 1.0))};
  if (intervals) {
    double hits = 0.0;
    for (const auto& [lo, hi] : *intervals) hits += (lo <= truth && truth <= hi) ? 1.0 : 0.0;
    const double c = hits / n;
    p.coverage = {c, std::sqrt(c * (1.0 - c) / n)};
  }
  return p;
}

/// Aggregates converged replicates into bias, empirical SE and 95% CrI coverage.
inline PerfReport score(const std::vector<RepEstimate>& reps, const Eigen::VectorXd& truth,
                        const std::vector<std::string>& names, std::optional<double> tau_truth = std::nullopt) {
  std::vector<const RepEstimate*> ok;
  for (const auto& r : reps)
    if (r.converged) ok.push_back(&r);
  if (ok.size() < 2) throw DataError("scoring needs at least 2 converged replicates, got " + std::to_string(ok.size()));
  PerfReport rep;
  rep.reps = static_cast<int>(reps.size());
  rep.converged = static_cast<int>(ok.size());
  rep.non_converged = rep.reps - rep.converged;
  for (Eigen::Index c = 0; c < truth.size(); ++c) {
    std::vector<double> est;
    std::vector<std::pair<double, double>> ci;
    for (const auto* r : ok) {
      est.push_back(r->mean(c));
      ci.emplace_back(r->lower(c), r->upper(c));
    }
    rep.parameters.push_back(
        score_parameter(c < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(c)] : std::to_string(c),
                        truth(c), est, &ci));
  }
  if (tau_truth) {
    std::vector<double> est;
    for (const auto* r : ok) est.push_back(r->tau_mean);
    rep.tau = score_parameter("tau", *tau_truth, est, nullptr);
  }
  return rep;
}

inline RepEstimate summarize_fit(const NmaPosterior& post) {
  RepEstimate e;
  const Eigen::Index dim = post.psi_draws.cols();
  e.mean = column_means(post.psi_draws);
  e.lower.resize(dim);
  e.upper.resize(dim);
  for (Eigen::Index c = 0; c < dim; ++c) {
    std::vector<double> col(post.psi_draws.col(c).data(), post.psi_draws.col(c).data() + post.psi_draws.rows());
    std::sort(col.begin(), col.end());
    e.lower(c) = quantile_sorted(col, 0.025);
    e.upper(c) = quantile_sorted(col, 0.975);
  }
  if (post.tau_draws.size()) e.tau_mean = post.tau_draws.mean();
  e.converged = post.converged;
  return e;
}

/// Stage one for every study of one replicate.
inline std::vector<BlipPosterior> stage_one(const SimulatedNetwork& sim, StageOne method, int bb_iterations,
                                            std::uint64_t seed) {
  std::vector<BlipPosterior> out;
  for (std::size_t i = 0; i < sim.studies.size(); ++i) {
    BbConfig cfg;
    cfg.iterations = bb_iterations;
    cfg.seed = splitmix64(seed ^ (0x5354ULL + i));
    cfg.threads = 1;
    out.push_back(method == StageOne::bbdwols ? run_bbdwols(sim.studies[i], cfg) : run_qlearning(sim.studies[i], cfg));
  }
  return out;
}

inline std::vector<std::string> simulation_psi_names(int q) {
  std::vector<std::string> mods{"0"};
  for (int p = 1; p <= q; ++p) mods.push_back(std::to_string(p));
  std::vector<std::string> out;
  for (int g = 2; g <= 3; ++g)
    for (const auto& m : mods) out.push_back("psi[" + std::to_string(g) + "1," + m + "]");
  return out;
}

/// Runs several scenarios. Scenarios that share the DGM, stage-one method,
/// replicate count, seed and bootstrap size reuse the same simulated data and
/// stage-one fits, so stage-two variants are compared on identical inputs.
inline std::vector<PerfReport> run_scenarios(const std::vector<Scenario>& scenarios) {
  std::vector<PerfReport> reports(scenarios.size());
  std::vector<bool> done(scenarios.size(), false);
  auto same_stage_one = [](const Scenario& a, const Scenario& b) {
    return a.dgm.name == b.dgm.name && a.dgm.n_per_study == b.dgm.n_per_study && a.dgm.q == b.dgm.q &&
           a.dgm.tau == b.dgm.tau && a.dgm.study_shift == b.dgm.study_shift &&
           a.dgm.reference_coef == b.dgm.reference_coef && a.dgm.psi == b.dgm.psi &&
           a.dgm.treatment_coef == b.dgm.treatment_coef && a.dgm.missing_coef == b.dgm.missing_coef &&
           a.dgm.noise_sd == b.dgm.noise_sd && a.dgm.uniform_covariates == b.dgm.uniform_covariates && a.dgm.omit_quadratic == b.dgm.omit_quadratic &&
           a.dgm.misspecify_weights == b.dgm.misspecify_weights && a.method == b.method && a.reps == b.reps &&
           a.seed == b.seed && a.bb_iterations == b.bb_iterations;
  };
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    if (done[s]) continue;
    std::vector<std::size_t> group;
    for (std::size_t t = s; t < scenarios.size(); ++t)
      if (!done[t] && same_stage_one(scenarios[s], scenarios[t])) group.push_back(t), done[t] = true;
    const Scenario& base = scenarios[s];
    base.dgm.validate();
    const TreatmentNetwork net = simulation_network(base.dgm.q);
    std::vector<std::vector<RepEstimate>> est(group.size(), std::vector<RepEstimate>(static_cast<std::size_t>(base.reps)));
    detail::parallel_for(base.reps, base.threads, [&](int r) {
      const std::uint64_t rep_seed = splitmix64(base.seed + 0x9e37ULL * static_cast<std::uint64_t>(r + 1));
      const SimulatedNetwork sim = simulate_network(base.dgm, rep_seed);
      const auto posts = stage_one(sim, base.method, base.bb_iterations, rep_seed);
      for (std::size_t g = 0; g < group.size(); ++g) {
        NmaConfig cfg = scenarios[group[g]].nma;
        cfg.seed = splitmix64(rep_seed ^ 0x4e4d41ULL);
        cfg.threads = 1;
        est[g][static_cast<std::size_t>(r)] = summarize_fit(fit_nma(posts, net, cfg));
      }
    });
    for (std::size_t g = 0; g < group.size(); ++g) {
      const Scenario& sc = scenarios[group[g]];
      std::optional<double> tau_truth;
      if (sc.nma.effects == Effects::random) tau_truth = sc.dgm.tau;
      reports[group[g]] = score(est[g], sc.dgm.psi, simulation_psi_names(sc.dgm.q), tau_truth);
      reports[group[g]].label = sc.label;
    }
  }
  return reports;
}

inline PerfReport run_scenario(const Scenario& scenario) { return run_scenarios({scenario}).front(); }

}  // namespace itrnma
