#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "itrnma/core.hpp"
#include "itrnma/error.hpp"
#include "itrnma/glm.hpp"
#include "itrnma/stats.hpp"

namespace itrnma {

/// Which inverse probabilities enter the dWOLS weights.
enum class WeightMode {
  none,            // unit probabilities: Bayesian-bootstrap Q-learning
  treatment_only,  // 1 / pi_t
  treatment_mar,   // 1 / (pi_t * pi_m)
};

/// Outcome-model probability used in the MAR weight for observed rows.
/// `observed` uses Pr(M = 0 | x, a), the inverse probability of being
/// observed. `missing` plugs in Pr(M = 1 | x, a) literally.
enum class MarProbability { observed, missing };

enum class PointEstimate { mean, median };

/// Whether the trimming threshold is the quantile of one iteration's weights
/// or of all iterations' weights pooled.
enum class TrimScope { per_iteration, pooled };

struct BbConfig {
  int iterations = 1999;
  std::uint64_t seed = 1;
  WeightMode weight_mode = WeightMode::treatment_mar;
  MarProbability mar_probability = MarProbability::observed;
  std::optional<double> trim_quantile;
  TrimScope trim_scope = TrimScope::per_iteration;
  PointEstimate point = PointEstimate::mean;
  /// Singular resamples are redrawn at most this many times per iteration.
  int max_redraws_per_iteration = 50;
  /// 0 picks std::thread::hardware_concurrency().
  unsigned threads = 1;
  GlmOptions glm;

  /// 1999 draws for small blip vectors, 2999 for large ones.
  static int default_iterations(Eigen::Index blip_parameters) { return blip_parameters > 10 ? 2999 : 1999; }

  void validate() const {
    if (iterations < 1) throw SchemaError("bootstrap iterations must be >= 1");
    if (trim_quantile && !(*trim_quantile > 0.0 && *trim_quantile <= 1.0))
      throw SchemaError("trim quantile must lie in (0, 1]");
  }
};

/// Stage-one product for one study.
struct BlipPosterior {
  std::string study_id;
  std::string method = "bbdwols";
  /// Global treatment labels of the study arms, reference first.
  std::vector<std::string> arm_treatments;
  /// Q effect modifiers (intercept excluded) with observed ranges.
  std::vector<EffectModifier> modifiers;
  /// L x (Q+1)(G_i-1) posterior draws of delta_i.
  Eigen::MatrixXd draws;
  Eigen::VectorXd point;
  Eigen::MatrixXd cov;
  int redraws = 0;
  int separation_events = 0;
  bool degraded = false;
  Eigen::Index rows = 0;
  Eigen::Index complete_cases = 0;
  BbConfig config;

  int q() const { return static_cast<int>(modifiers.size()); }
  Eigen::Index dim() const { return point.size(); }
};

/// Dirichlet(1, ..., 1) draw via normalized unit exponentials.
inline Eigen::VectorXd draw_dirichlet(Eigen::Index n, Rng& rng) {
  if (n < 1) throw DataError("Dirichlet dimension must be >= 1");
  std::exponential_distribution<double> expo(1.0);
  Eigen::VectorXd w(n);
  for (Eigen::Index j = 0; j < n; ++j) w(j) = expo(rng);
  return w / w.sum();
}

/// Caps every weight above the q-quantile (type 7) of `w` at that quantile.
inline void trim_weights(Eigen::VectorXd& w, double q) {
  const double cap = quantile(w, q);
  w = w.cwiseMin(cap);
}

/// w_j = omega_j / (pi_t_j * pi_m_j) per weight mode, trimmed per iteration when configured.
inline Eigen::VectorXd compute_weights(const Eigen::VectorXd& omega, const Eigen::VectorXd& pi_t,
                                       const Eigen::VectorXd& pi_m, const BbConfig& cfg) {
  Eigen::VectorXd w = omega;
  switch (cfg.weight_mode) {
    case WeightMode::none: break;
    case WeightMode::treatment_only: w = w.cwiseQuotient(pi_t); break;
    case WeightMode::treatment_mar: w = w.cwiseQuotient(pi_t.cwiseProduct(pi_m)); break;
  }
  if (cfg.trim_quantile && cfg.trim_scope == TrimScope::per_iteration) trim_weights(w, *cfg.trim_quantile);
  return w;
}

struct WlsFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd delta;
};

/// Minimizes sum_j w_j (1 - m_j) (y_j - [ref | blip]_j theta)^2 by a
/// column-pivoted QR of the row-scaled complete-case design.
inline WlsFit weighted_wls(const DesignMatrices& dm, const Eigen::VectorXd& w) {
  const Eigen::Index n = dm.rows();
  if (w.size() != n) throw DataError("weighted_wls: weight length mismatch");
  const Eigen::Index pr = dm.ref.cols();
  const Eigen::Index pb = dm.blip.cols();
  Eigen::Index used = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    if (dm.m(j) == 0.0 && w(j) > 0.0) ++used;
  Eigen::MatrixXd a(used, pr + pb);
  Eigen::VectorXd b(used);
  for (Eigen::Index j = 0, r = 0; j < n; ++j) {
    if (dm.m(j) != 0.0 || !(w(j) > 0.0)) continue;
    const double s = std::sqrt(w(j));
    a.row(r).head(pr) = s * dm.ref.row(j);
    a.row(r).tail(pb) = s * dm.blip.row(j);
    b(r) = s * dm.y(j);
    ++r;
  }
  if (used < pr + pb) throw SingularDesignError("fewer weighted complete cases than regression parameters");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < pr + pb) throw SingularDesignError("weighted complete-case design is rank deficient");
  const Eigen::VectorXd theta = qr.solve(b);
  return {theta.head(pr), theta.tail(pb)};
}

namespace detail {

struct IterationResult {
  Eigen::VectorXd delta;
  int redraws = 0;
  int separations = 0;
};

/// Inverse-probability terms for one resample.
struct WeightTerms {
  Eigen::VectorXd pi_t;
  Eigen::VectorXd pi_m;
  int separations = 0;
};

inline WeightTerms weight_terms(const DesignMatrices& dm, const Eigen::VectorXd& omega, const BbConfig& cfg,
                                bool any_missing) {
  const Eigen::Index n = dm.rows();
  WeightTerms t{Eigen::VectorXd::Ones(n), Eigen::VectorXd::Ones(n), 0};
  if (cfg.weight_mode == WeightMode::none) return t;
  if (cfg.weight_mode == WeightMode::treatment_mar && any_missing) {
    const WeightedGlmFit miss = fit_weighted_logistic(dm.miss, dm.m, omega, cfg.glm);
    t.separations += miss.separation;
    const std::vector<int> target(static_cast<std::size_t>(n), cfg.mar_probability == MarProbability::observed ? 0 : 1);
    t.pi_m = predict_prob(miss, dm.miss, target);
  }
  const WeightedGlmFit trt = fit_weighted_multinomial(dm.trt, dm.arm, dm.n_arms, omega, cfg.glm);
  t.separations += trt.separation;
  t.pi_t = predict_prob(trt, dm.trt, dm.arm);
  return t;
}

template <class Body>
void parallel_for(int count, unsigned threads, const Body& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max(count, 1)));
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

inline Eigen::VectorXd coordinatewise_median(const Eigen::MatrixXd& draws) {
  Eigen::VectorXd out(draws.cols());
  for (Eigen::Index c = 0; c < draws.cols(); ++c) out(c) = quantile(Eigen::VectorXd(draws.col(c)), 0.5);
  return out;
}

}  // namespace detail

/// Bayesian-bootstrap dWOLS. Each iteration draws Dirichlet weights, refits
/// the missingness and treatment models under them, forms the composite
/// weights and solves the weighted least squares; the blip coefficients of
/// every iteration form the posterior sample. Iteration l uses the RNG stream
/// (seed, l, attempt), so results do not depend on the thread count.
inline BlipPosterior run_bbdwols(const StudyDataset& data, const BbConfig& cfg) {
  cfg.validate();
  const ValidationReport report = validate_dataset(data);
  if (!report.ok) {
    std::string msg = "study '" + data.study_id + "' failed validation:";
    for (const auto& issue : report.issues) msg += " " + issue + ";";
    throw DataError(msg);
  }
  const DesignMatrices dm = build_design(data);
  const Eigen::Index n = dm.rows();
  const bool any_missing = dm.m.sum() > 0.0;
  const int iters = cfg.iterations;

  BlipPosterior post;
  post.study_id = data.study_id;
  post.method = cfg.weight_mode == WeightMode::none ? "qlearning" : "bbdwols";
  post.arm_treatments = data.arm_treatments;
  post.modifiers = effect_modifiers(data);
  post.rows = n;
  post.complete_cases = n - static_cast<Eigen::Index>(dm.m.sum());
  post.config = cfg;
  post.draws.resize(iters, dm.blip_width());

  std::vector<detail::IterationResult> results(static_cast<std::size_t>(iters));

  // Pooled trimming needs every iteration's weights before any solve.
  std::optional<double> pooled_cap;
  std::vector<Eigen::VectorXd> omegas, weights;
  const bool pooled = cfg.trim_quantile && cfg.trim_scope == TrimScope::pooled;
  auto draw_weights = [&](int l, int attempt, Eigen::VectorXd& omega, Eigen::VectorXd& w, int& separations) {
    Rng rng = stream_rng(cfg.seed, {static_cast<std::uint64_t>(l), static_cast<std::uint64_t>(attempt)});
    omega = draw_dirichlet(n, rng);
    const auto terms = detail::weight_terms(dm, omega, cfg, any_missing);
    separations += terms.separations;
    w = compute_weights(omega, terms.pi_t, terms.pi_m, cfg);
  };

  if (pooled) {
    omegas.resize(static_cast<std::size_t>(iters));
    weights.resize(static_cast<std::size_t>(iters));
    std::vector<int> first_attempt(static_cast<std::size_t>(iters), 0);
    detail::parallel_for(iters, cfg.threads, [&](int l) {
      auto& res = results[static_cast<std::size_t>(l)];
      for (int attempt = 0;; ++attempt) {
        if (attempt > cfg.max_redraws_per_iteration)
          throw SingularDesignError("bootstrap iteration " + std::to_string(l) + " stayed singular after redraws");
        try {
          draw_weights(l, attempt, omegas[static_cast<std::size_t>(l)], weights[static_cast<std::size_t>(l)],
                       res.separations);
          first_attempt[static_cast<std::size_t>(l)] = attempt;
          res.redraws = attempt;
          break;
        } catch (const SingularDesignError&) {
        }
      }
    });
    std::vector<double> all;
    all.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(iters));
    for (const auto& w : weights) all.insert(all.end(), w.data(), w.data() + w.size());
    pooled_cap = quantile(all, *cfg.trim_quantile);
  }

  detail::parallel_for(iters, cfg.threads, [&](int l) {
    auto& res = results[static_cast<std::size_t>(l)];
    for (int attempt = res.redraws;; ++attempt) {
      if (attempt > cfg.max_redraws_per_iteration)
        throw SingularDesignError("bootstrap iteration " + std::to_string(l) + " stayed singular after " +
                                  std::to_string(cfg.max_redraws_per_iteration) + " redraws");
      try {
        Eigen::VectorXd omega, w;
        if (pooled && attempt == res.redraws) {
          w = weights[static_cast<std::size_t>(l)];
        } else {
          draw_weights(l, attempt, omega, w, res.separations);
        }
        if (pooled_cap) w = w.cwiseMin(*pooled_cap);
        res.delta = weighted_wls(dm, w).delta;
        res.redraws = attempt;
        return;
      } catch (const SingularDesignError&) {
      }
    }
  });

  for (int l = 0; l < iters; ++l) {
    const auto& res = results[static_cast<std::size_t>(l)];
    post.draws.row(l) = res.delta.transpose();
    post.redraws += res.redraws;
    post.separation_events += res.separations;
  }
  post.degraded = post.redraws > 0.05 * iters;
  post.point = cfg.point == PointEstimate::mean ? column_means(post.draws) : detail::coordinatewise_median(post.draws);
  post.cov = sample_covariance(post.draws);
  return post;
}

/// Unweighted least squares on the complete cases (unit weights).
inline WlsFit fit_ols(const DesignMatrices& dm) { return weighted_wls(dm, Eigen::VectorXd::Ones(dm.rows())); }

/// Non-Bayesian dWOLS: weight models fitted once with equal weights.
inline WlsFit fit_dwols(const StudyDataset& data, const BbConfig& cfg) {
  const DesignMatrices dm = build_design(data);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(dm.rows());
  const auto terms = detail::weight_terms(dm, ones, cfg, dm.m.sum() > 0.0);
  return weighted_wls(dm, compute_weights(ones, terms.pi_t, terms.pi_m, cfg));
}

/// Q-learning: OLS point estimate on complete cases, with posterior draws
/// and covariance from the Bayesian bootstrap under unit probabilities.
/// Without `complete_cases_only` any missing outcome is an error.
inline BlipPosterior run_qlearning(const StudyDataset& data, BbConfig cfg, bool complete_cases_only = true) {
  if (!complete_cases_only)
    for (Eigen::Index j = 0; j < data.rows(); ++j)
      if (data.outcome_missing(j)) throw DataError("Q-learning without complete-case restriction needs full outcomes");
  cfg.weight_mode = WeightMode::none;
  cfg.trim_quantile.reset();
  BlipPosterior post = run_bbdwols(data, cfg);
  post.point = fit_ols(build_design(data)).delta;
  return post;
}

}  // namespace itrnma
