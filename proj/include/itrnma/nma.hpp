#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "itrnma/bbdwols.hpp"
#include "itrnma/diagnostics.hpp"
#include "itrnma/error.hpp"
#include "itrnma/netmap.hpp"
#include "itrnma/stats.hpp"

namespace itrnma {

enum class Effects { common, random };
enum class CovarianceMode { full, sparse };

/// Random-effects sampling scheme.
///   collapsed: tau | data with blips and psi integrated out (slice step),
///              then psi | tau and delta_i | psi, tau exactly. Mixes well for
///              any tau, including ~0.
///   centered:  the plain three-block Gibbs delta | psi, tau; psi | delta, tau;
///              tau | delta, psi. Freezes when tau is near zero.
enum class Sampler { collapsed, centered };

struct NmaConfig {
  Effects effects = Effects::common;
  CovarianceMode covariance = CovarianceMode::full;
  double prior_psi_sd = 10.0;
  /// Half-normal scale of tau (random effects only).
  double prior_tau_scale = 0.51;
  int chains = 4;
  /// Iterations per chain including warmup.
  int iters = 2000;
  int warmup = 1000;
  std::uint64_t seed = 1;
  Sampler sampler = Sampler::collapsed;
  double rhat_threshold = 1.01;
  double min_ess = 400.0;
  unsigned threads = 1;

  void validate() const {
    if (!(prior_psi_sd > 0.0)) throw SchemaError("prior_psi_sd must be > 0");
    if (!(prior_tau_scale > 0.0)) throw SchemaError("prior_tau_scale must be > 0");
    if (chains < 1) throw SchemaError("chains must be >= 1");
    if (warmup < 0 || warmup >= iters) throw SchemaError("warmup must satisfy 0 <= warmup < iters");
  }
};

/// Common-variance heterogeneity correlation: 1 on the diagonal, 1/2 elsewhere.
/// Sigma_i(tau) = tau^2 * R_d, with eigenvalues tau^2/2 and tau^2 (d+1)/2.
inline Eigen::MatrixXd heterogeneity_correlation(Eigen::Index d) {
  Eigen::MatrixXd r = Eigen::MatrixXd::Constant(d, d, 0.5);
  r.diagonal().setOnes();
  return r;
}

inline Eigen::MatrixXd heterogeneity_covariance(double tau, Eigen::Index d) {
  return tau * tau * heterogeneity_correlation(d);
}

/// Symmetrizes and, if not positive definite, clips eigenvalues at 1e-10 and
/// adds 1e-8 to the diagonal.
inline Eigen::MatrixXd repair_covariance(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() == Eigen::Success) return sym;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-10);
  Eigen::MatrixXd out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  out = 0.5 * (out + out.transpose());
  out.diagonal().array() += 1e-8;
  return out;
}

/// Zeroes covariances between coefficients of different covariate types
/// (q != q'); covariances of the same coefficient across arms are kept.
inline Eigen::MatrixXd sparsify_cov(const Eigen::MatrixXd& sigma, int n_modifiers, int n_arms) {
  const Eigen::Index b = n_modifiers + 1;
  if (sigma.rows() != b * (n_arms - 1) || sigma.cols() != sigma.rows())
    throw SchemaError("sparsify_cov: covariance has the wrong dimension");
  Eigen::MatrixXd out = sigma;
  for (Eigen::Index r = 0; r < out.rows(); ++r)
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      if (r % b != c % b) out(r, c) = 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out);
  if (es.eigenvalues().minCoeff() < 0.0) {
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-10);
    out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    out = 0.5 * (out + out.transpose());
  }
  return out;
}

struct NmaPosterior {
  NmaConfig config;
  TreatmentNetwork network;
  /// Effect modifiers shared by all studies, ranges pooled across studies.
  std::vector<EffectModifier> modifiers;
  std::vector<std::string> study_ids;
  /// S x (Q+1)(G-1), chains stacked one after another.
  Eigen::MatrixXd psi_draws;
  /// S draws of tau (random effects only).
  Eigen::VectorXd tau_draws;
  /// Per study S x (Q+1)(G_i-1) draws of delta_i (random effects only).
  std::vector<Eigen::MatrixXd> delta_draws;
  std::vector<ParameterDiagnostics> psi_diagnostics;
  std::optional<ParameterDiagnostics> tau_diagnostics;
  bool converged = true;
  /// Exact Gaussian posterior (common effects only).
  Eigen::VectorXd analytic_mean;
  Eigen::MatrixXd analytic_cov;

  int q() const { return network.n_modifiers(); }
  Eigen::Index draws() const { return psi_draws.rows(); }
  int draws_per_chain() const { return static_cast<int>(psi_draws.rows() / std::max(config.chains, 1)); }
};

namespace detail {

struct StudyBlock {
  Eigen::VectorXd delta_hat;
  Eigen::MatrixXd sigma_hat;
  Eigen::MatrixXd v;
  Eigen::MatrixXd corr;  // R_d
};

inline std::vector<StudyBlock> prepare_blocks(const std::vector<BlipPosterior>& posts, const TreatmentNetwork& net,
                                              const NmaConfig& cfg) {
  if (posts.empty()) throw DataError("no study posteriors supplied");
  if (net.studies().size() != posts.size()) throw SchemaError("network does not match the supplied posteriors");
  std::vector<StudyBlock> out;
  for (std::size_t i = 0; i < posts.size(); ++i) {
    const auto& p = posts[i];
    const auto& arms = net.studies()[i].arms;
    if (arms.size() != p.arm_treatments.size()) throw SchemaError("arm mismatch for study '" + p.study_id + "'");
    for (std::size_t k = 0; k < arms.size(); ++k)
      if (net.treatments()[static_cast<std::size_t>(arms[k])] != p.arm_treatments[k])
        throw SchemaError("arm mismatch for study '" + p.study_id + "'");
    if (p.q() != net.n_modifiers()) throw SchemaError("study '" + p.study_id + "' has a different effect-modifier count");
    const Eigen::Index d = static_cast<Eigen::Index>(net.n_modifiers() + 1) * (static_cast<Eigen::Index>(arms.size()) - 1);
    if (p.point.size() != d || p.cov.rows() != d || p.cov.cols() != d)
      throw SchemaError("study '" + p.study_id + "' has blip estimates of the wrong dimension");
    if (!p.point.allFinite() || !p.cov.allFinite()) throw DataError("study '" + p.study_id + "' has non-finite estimates");
    StudyBlock b;
    b.delta_hat = p.point;
    Eigen::MatrixXd s = p.cov;
    if (cfg.covariance == CovarianceMode::sparse) s = sparsify_cov(s, net.n_modifiers(), static_cast<int>(arms.size()));
    b.sigma_hat = repair_covariance(s);
    b.v = net.V(i);
    b.corr = heterogeneity_correlation(d);
    out.push_back(std::move(b));
  }
  return out;
}

inline void check_modifiers(const std::vector<BlipPosterior>& posts) {
  for (const auto& p : posts) {
    if (p.modifiers.size() != posts.front().modifiers.size())
      throw SchemaError("studies disagree on the effect modifiers");
    for (std::size_t m = 0; m < p.modifiers.size(); ++m)
      if (p.modifiers[m].name != posts.front().modifiers[m].name)
        throw SchemaError("studies disagree on effect modifier " + std::to_string(m + 1) + " ('" +
                          p.modifiers[m].name + "' vs '" + posts.front().modifiers[m].name + "')");
  }
}

inline std::vector<EffectModifier> pooled_modifiers(const std::vector<BlipPosterior>& posts) {
  std::vector<EffectModifier> out = posts.front().modifiers;
  for (const auto& p : posts)
    for (std::size_t m = 0; m < out.size(); ++m) {
      out[m].min = std::min(out[m].min, p.modifiers[m].min);
      out[m].max = std::max(out[m].max, p.modifiers[m].max);
      if (p.modifiers[m].kind == "continuous") out[m].kind = "continuous";
    }
  return out;
}

inline NmaPosterior skeleton(const std::vector<BlipPosterior>& posts, const TreatmentNetwork& net, const NmaConfig& cfg) {
  NmaPosterior post;
  post.config = cfg;
  post.network = net;
  post.modifiers = pooled_modifiers(posts);
  for (const auto& p : posts) post.study_ids.push_back(p.study_id);
  return post;
}

inline void finish_diagnostics(NmaPosterior& post) {
  const int chains = post.config.chains;
  post.psi_diagnostics = diagnose_stacked(post.psi_draws, chains);
  if (post.tau_draws.size()) post.tau_diagnostics = diagnose_stacked(post.tau_draws, chains).front();
  post.converged = true;
  auto check = [&](const ParameterDiagnostics& d) {
    if (d.zero_variance) return;
    if (!(d.rhat < post.config.rhat_threshold) || !(d.ess >= post.config.min_ess)) post.converged = false;
  };
  if (chains < 2) post.converged = false;
  for (const auto& d : post.psi_diagnostics) check(d);
  if (post.tau_diagnostics) check(*post.tau_diagnostics);
}

/// Stepping-out and shrinkage slice sampler on (lower, inf).
template <class LogDensity>
double slice_sample(double x0, const LogDensity& logf, double width, Rng& rng, double lower = 0.0, int max_steps = 50) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  const double level = logf(x0) - expo(rng);
  double left = x0 - width * unif(rng);
  double right = left + width;
  int j = static_cast<int>(std::floor(max_steps * unif(rng)));
  int k = max_steps - 1 - j;
  while (j-- > 0 && left > lower && logf(left) > level) left -= width;
  while (k-- > 0 && logf(right) > level) right += width;
  left = std::max(left, lower);
  for (int guard = 0; guard < 200; ++guard) {
    const double x1 = left + unif(rng) * (right - left);
    if (x1 > lower && logf(x1) >= level) return x1;
    if (x1 < x0) left = x1;
    else right = x1;
  }
  return x0;
}

inline Eigen::VectorXd standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> stdn;
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = stdn(rng);
  return z;
}

/// delta | psi, tau, delta_hat via Matheron's rule; stable for tau -> 0.
inline Eigen::VectorXd draw_delta(const StudyBlock& b, const Eigen::VectorXd& psi, double tau, Rng& rng) {
  const Eigen::Index d = b.delta_hat.size();
  const Eigen::MatrixXd a = tau * tau * b.corr;
  const Eigen::VectorXd mu = b.v * psi;
  Eigen::LLT<Eigen::MatrixXd> a_llt(b.corr);
  const Eigen::VectorXd prior_draw = mu + tau * Eigen::VectorXd(a_llt.matrixL() * standard_normal(d, rng));
  Eigen::LLT<Eigen::MatrixXd> s_llt(b.sigma_hat);
  const Eigen::VectorXd noise = s_llt.matrixL() * standard_normal(d, rng);
  Eigen::LLT<Eigen::MatrixXd> m_llt(b.sigma_hat + a);
  return prior_draw + a * m_llt.solve(b.delta_hat - prior_draw - noise);
}

inline double log_half_normal(double tau, double scale) { return -0.5 * tau * tau / (scale * scale); }

struct ChainOutput {
  Eigen::MatrixXd psi;
  Eigen::VectorXd tau;
  std::vector<Eigen::MatrixXd> delta;
};

inline ChainOutput run_chain(const std::vector<StudyBlock>& blocks, Eigen::Index psi_dim, const NmaConfig& cfg,
                             int chain) {
  Rng rng = stream_rng(cfg.seed, {0x6e6d61ULL, static_cast<std::uint64_t>(chain)});
  const int keep = cfg.iters - cfg.warmup;
  ChainOutput out;
  out.psi.resize(keep, psi_dim);
  out.tau.resize(keep);
  for (const auto& b : blocks) out.delta.emplace_back(keep, b.delta_hat.size());

  const double prior_prec = 1.0 / (cfg.prior_psi_sd * cfg.prior_psi_sd);
  const double sigma_tau = cfg.prior_tau_scale;
  std::normal_distribution<double> stdn;
  double tau = std::abs(stdn(rng)) * sigma_tau;  // dispersed start from the prior
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(psi_dim);
  std::vector<Eigen::VectorXd> delta;
  for (const auto& b : blocks) delta.push_back(b.delta_hat);

  // psi | tau with the study blips integrated out
  auto draw_psi_marginal = [&](double t) {
    Eigen::MatrixXd prec = prior_prec * Eigen::MatrixXd::Identity(psi_dim, psi_dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(psi_dim);
    for (const auto& b : blocks) {
      Eigen::LLT<Eigen::MatrixXd> llt(b.sigma_hat + t * t * b.corr);
      const Eigen::MatrixXd mv = llt.solve(b.v);
      prec.noalias() += b.v.transpose() * mv;
      rhs.noalias() += mv.transpose() * b.delta_hat;
    }
    Eigen::LLT<Eigen::MatrixXd> pl(prec);
    return draw_gaussian_from_precision(pl, pl.solve(rhs), rng);
  };
  // log p(tau | data) up to a constant, with blips and psi both integrated out
  auto log_tau_collapsed = [&](double t) {
    if (!(t > 0.0)) return -std::numeric_limits<double>::infinity();
    double lp = log_half_normal(t, sigma_tau);
    Eigen::MatrixXd prec = prior_prec * Eigen::MatrixXd::Identity(psi_dim, psi_dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(psi_dim);
    for (const auto& b : blocks) {
      Eigen::LLT<Eigen::MatrixXd> llt(b.sigma_hat + t * t * b.corr);
      const Eigen::MatrixXd mv = llt.solve(b.v);
      prec.noalias() += b.v.transpose() * mv;
      rhs.noalias() += mv.transpose() * b.delta_hat;
      lp += -0.5 * b.delta_hat.dot(llt.solve(b.delta_hat)) - llt.matrixLLT().diagonal().array().log().sum();
    }
    Eigen::LLT<Eigen::MatrixXd> pl(prec);
    return lp + 0.5 * rhs.dot(pl.solve(rhs)) - pl.matrixLLT().diagonal().array().log().sum();
  };
  // psi | delta, tau (centered scheme)
  auto draw_psi_centered = [&](double t) {
    Eigen::MatrixXd prec = prior_prec * Eigen::MatrixXd::Identity(psi_dim, psi_dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(psi_dim);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      Eigen::LLT<Eigen::MatrixXd> llt(t * t * b.corr);
      const Eigen::MatrixXd mv = llt.solve(b.v);
      prec.noalias() += b.v.transpose() * mv;
      rhs.noalias() += mv.transpose() * delta[i];
    }
    Eigen::LLT<Eigen::MatrixXd> pl(prec);
    return draw_gaussian_from_precision(pl, pl.solve(rhs), rng);
  };
  std::vector<Eigen::LLT<Eigen::MatrixXd>> corr_llt;
  for (const auto& b : blocks) corr_llt.emplace_back(b.corr);
  auto log_tau_centered = [&](double t) {
    if (!(t > 0.0)) return -std::numeric_limits<double>::infinity();
    double quad = 0.0, dims = 0.0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const Eigen::VectorXd r = delta[i] - blocks[i].v * psi;
      quad += r.dot(corr_llt[i].solve(r));
      dims += static_cast<double>(r.size());
    }
    return log_half_normal(t, sigma_tau) - dims * std::log(t) - 0.5 * quad / (t * t);
  };

  const double width = sigma_tau;
  for (int it = 0; it < cfg.iters; ++it) {
    if (cfg.sampler == Sampler::collapsed) {
      tau = slice_sample(tau, log_tau_collapsed, width, rng);
      psi = draw_psi_marginal(tau);
      for (std::size_t i = 0; i < blocks.size(); ++i) delta[i] = draw_delta(blocks[i], psi, tau, rng);
    } else {
      for (std::size_t i = 0; i < blocks.size(); ++i) delta[i] = draw_delta(blocks[i], psi, tau, rng);
      psi = draw_psi_centered(tau);
      tau = slice_sample(tau, log_tau_centered, width, rng);
    }
    if (it >= cfg.warmup) {
      const int row = it - cfg.warmup;
      out.psi.row(row) = psi.transpose();
      out.tau(row) = tau;
      for (std::size_t i = 0; i < blocks.size(); ++i) out.delta[i].row(row) = delta[i].transpose();
    }
  }
  return out;
}

}  // namespace detail

/// Builds the network for a set of posteriors from the treatment registry.
inline TreatmentNetwork network_for(const std::vector<BlipPosterior>& posts, const std::vector<std::string>& registry,
                                    std::optional<std::string> reference = std::nullopt) {
  if (posts.empty()) throw DataError("no study posteriors supplied");
  detail::check_modifiers(posts);
  std::vector<std::pair<std::string, std::vector<std::string>>> studies;
  for (const auto& p : posts) studies.emplace_back(p.study_id, p.arm_treatments);
  return TreatmentNetwork::build(registry, studies, posts.front().q(), std::move(reference));
}

/// Common-effects pooling: delta_i = V_i psi. The posterior of psi is Gaussian
/// with precision sum V' S^-1 V + I / sd^2; draws are i.i.d. from it.
inline NmaPosterior fit_common_effects(const std::vector<BlipPosterior>& posts, const TreatmentNetwork& net,
                                       NmaConfig cfg) {
  cfg.effects = Effects::common;
  cfg.validate();
  detail::check_modifiers(posts);
  net.require_connected();
  const auto blocks = detail::prepare_blocks(posts, net, cfg);
  const Eigen::Index dim = net.psi_size();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
  for (const auto& b : blocks) {
    Eigen::LLT<Eigen::MatrixXd> llt(b.sigma_hat);
    const Eigen::MatrixXd sv = llt.solve(b.v);
    info.noalias() += b.v.transpose() * sv;
    rhs.noalias() += sv.transpose() * b.delta_hat;
  }
  std::vector<std::string> names;
  {
    std::vector<std::string> mod{"(intercept)"};
    for (const auto& m : posts.front().modifiers) mod.push_back(m.name);
    names = net.psi_names(mod);
  }
  std::string unestimable;
  for (Eigen::Index c = 0; c < dim; ++c)
    if (!(info(c, c) > 0.0)) unestimable += (unestimable.empty() ? "" : ", ") + names[static_cast<std::size_t>(c)];
  if (!unestimable.empty()) throw IdentifiabilityError("no study informs: " + unestimable);

  Eigen::MatrixXd prec = info;
  prec.diagonal().array() += 1.0 / (cfg.prior_psi_sd * cfg.prior_psi_sd);
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) throw IdentifiabilityError("posterior precision of psi is singular");

  NmaPosterior post = detail::skeleton(posts, net, cfg);
  post.analytic_mean = llt.solve(rhs);
  post.analytic_cov = llt.solve(Eigen::MatrixXd::Identity(dim, dim));
  const int keep = cfg.iters - cfg.warmup;
  post.psi_draws.resize(static_cast<Eigen::Index>(keep) * cfg.chains, dim);
  for (int c = 0; c < cfg.chains; ++c) {
    Rng rng = stream_rng(cfg.seed, {0x636f6dULL, static_cast<std::uint64_t>(c)});
    for (int s = 0; s < keep; ++s)
      post.psi_draws.row(static_cast<Eigen::Index>(c) * keep + s) =
          draw_gaussian_from_precision(llt, post.analytic_mean, rng).transpose();
  }
  detail::finish_diagnostics(post);
  return post;
}

/// Random-effects pooling: delta_i ~ MVN(V_i psi, tau^2 R), half-normal prior on tau.
inline NmaPosterior fit_random_effects(const std::vector<BlipPosterior>& posts, const TreatmentNetwork& net,
                                       NmaConfig cfg) {
  cfg.effects = Effects::random;
  cfg.validate();
  detail::check_modifiers(posts);
  net.require_connected();
  const auto blocks = detail::prepare_blocks(posts, net, cfg);
  const Eigen::Index dim = net.psi_size();
  std::vector<detail::ChainOutput> outs(static_cast<std::size_t>(cfg.chains));
  detail::parallel_for(cfg.chains, cfg.threads,
                       [&](int c) { outs[static_cast<std::size_t>(c)] = detail::run_chain(blocks, dim, cfg, c); });

  NmaPosterior post = detail::skeleton(posts, net, cfg);
  const Eigen::Index keep = cfg.iters - cfg.warmup;
  post.psi_draws.resize(keep * cfg.chains, dim);
  post.tau_draws.resize(keep * cfg.chains);
  for (const auto& b : blocks) post.delta_draws.emplace_back(keep * cfg.chains, b.delta_hat.size());
  for (int c = 0; c < cfg.chains; ++c) {
    const auto& o = outs[static_cast<std::size_t>(c)];
    post.psi_draws.middleRows(c * keep, keep) = o.psi;
    post.tau_draws.segment(c * keep, keep) = o.tau;
    for (std::size_t i = 0; i < blocks.size(); ++i) post.delta_draws[i].middleRows(c * keep, keep) = o.delta[i];
  }
  detail::finish_diagnostics(post);
  return post;
}

inline NmaPosterior fit_nma(const std::vector<BlipPosterior>& posts, const TreatmentNetwork& net, const NmaConfig& cfg) {
  return cfg.effects == Effects::common ? fit_common_effects(posts, net, cfg) : fit_random_effects(posts, net, cfg);
}

/// Per-draw relative effects psi_g' x for every treatment (reference = 0)
/// and the implied optimal treatment.
struct ProfileEffects {
  /// S x G; column 0 is the reference and identically zero.
  Eigen::MatrixXd effects;
  /// Per-draw argmax; ties go to the lowest treatment index.
  std::vector<int> optimal;
  std::vector<bool> tie;
};

inline ProfileEffects profile_effects(const Eigen::MatrixXd& psi_draws, int n_treatments, int n_modifiers,
                                      const Eigen::VectorXd& x) {
  if (x.size() != n_modifiers)
    throw ProfileError("profile has " + std::to_string(x.size()) + " values, expected " + std::to_string(n_modifiers));
  if (!x.allFinite()) throw ProfileError("profile values must be finite");
  Eigen::VectorXd xf(n_modifiers + 1);
  xf(0) = 1.0;
  xf.tail(n_modifiers) = x;
  ProfileEffects out;
  const Eigen::Index s = psi_draws.rows();
  out.effects = Eigen::MatrixXd::Zero(s, n_treatments);
  for (int g = 1; g < n_treatments; ++g)
    out.effects.col(g) = psi_draws.middleCols(psi_index(g, 0, n_modifiers), n_modifiers + 1) * xf;
  out.optimal.resize(static_cast<std::size_t>(s));
  out.tie.resize(static_cast<std::size_t>(s));
  for (Eigen::Index r = 0; r < s; ++r) {
    int best = 0;
    bool tie = false;
    for (int g = 1; g < n_treatments; ++g) {
      if (out.effects(r, g) > out.effects(r, best)) best = g, tie = false;
      else if (out.effects(r, g) == out.effects(r, best)) tie = true;
    }
    out.optimal[static_cast<std::size_t>(r)] = best;
    out.tie[static_cast<std::size_t>(r)] = tie;
  }
  return out;
}

inline ProfileEffects profile_effects(const NmaPosterior& post, const Eigen::VectorXd& x) {
  return profile_effects(post.psi_draws, post.network.size(), post.q(), x);
}

}  // namespace itrnma
