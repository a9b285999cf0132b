#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "itrnma/error.hpp"
#include "itrnma/stats.hpp"

namespace itrnma {

struct GlmOptions {
  /// Stop once the score of the weight-normalized likelihood is this small.
  double tolerance = 1e-8;
  int max_iterations = 100;
  /// Coefficients beyond this magnitude (logit scale) signal separation.
  double coefficient_cap = 30.0;
};

/// Weighted maximum-likelihood fit of a logit or multinomial-logit model.
struct WeightedGlmFit {
  /// Logistic: p coefficients. Multinomial: (K-1) blocks of p, category 1 first.
  Eigen::VectorXd coefficients;
  bool converged = false;
  bool separation = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  /// 2 for logistic, K for multinomial.
  int categories = 2;

  Eigen::Index features() const { return coefficients.size() / (categories - 1); }
};

/// Probabilities are clipped to [floor, 1 - floor] before entering weights.
inline constexpr double kProbabilityFloor = 1e-6;

inline double clip_probability(double p, double floor = kProbabilityFloor) {
  return std::min(std::max(p, floor), 1.0 - floor);
}

namespace detail {

inline Eigen::VectorXd normalized_weights(const Eigen::VectorXd& w) {
  if (w.minCoeff() < 0.0) throw DataError("observation weights must be nonnegative");
  const double total = w.sum();
  if (!(total > 0.0)) throw DataError("observation weights are all zero");
  return w / total;
}

/// Throws if X is rank deficient on the rows with positive weight.
inline void require_full_rank(const Eigen::MatrixXd& x, const Eigen::VectorXd& w) {
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd gram = x.transpose() * w.asDiagonal() * x;
  Eigen::VectorXd scale = gram.diagonal().cwiseSqrt();
  for (Eigen::Index i = 0; i < p; ++i)
    if (!(scale(i) > 0.0)) throw SingularDesignError("design column " + std::to_string(i) + " is zero on the weighted support");
  gram = scale.cwiseInverse().asDiagonal() * gram * scale.cwiseInverse().asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff()))
    throw SingularDesignError("design is rank deficient on the weighted support");
}

/// Shared Newton driver. `eval` fills loglik, gradient and (optionally) Hessian.
template <class Eval>
WeightedGlmFit newton_maximize(Eigen::VectorXd beta, const Eval& eval, const GlmOptions& opt, int categories) {
  WeightedGlmFit fit;
  fit.categories = categories;
  const Eigen::Index dim = beta.size();
  Eigen::VectorXd grad(dim);
  Eigen::MatrixXd hess(dim, dim);
  double ll = eval(beta, grad, &hess);
  auto capped = [&](const Eigen::VectorXd& b) { return b.cwiseAbs().maxCoeff() > opt.coefficient_cap; };
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (grad.lpNorm<Eigen::Infinity>() <= opt.tolerance) {
      // one polishing step is nearly free at quadratic convergence
      Eigen::LLT<Eigen::MatrixXd> llt(hess);
      if (llt.info() == Eigen::Success) {
        Eigen::VectorXd cand = beta + llt.solve(grad);
        Eigen::VectorXd g2(dim);
        Eigen::MatrixXd h2(dim, dim);
        const double ll2 = eval(cand, g2, &h2);
        if (ll2 >= ll && g2.lpNorm<Eigen::Infinity>() <= grad.lpNorm<Eigen::Infinity>())
          beta = cand, grad = g2, hess = h2, ll = ll2;
      }
      fit.converged = true;
      break;
    }
    Eigen::VectorXd step;
    Eigen::LLT<Eigen::MatrixXd> llt(hess);
    if (llt.info() == Eigen::Success) step = llt.solve(grad);
    bool improved = false;
    Eigen::VectorXd cand(dim), g2(dim);
    Eigen::MatrixXd h2(dim, dim);
    if (step.size() == dim && step.allFinite()) {
      double t = 1.0;
      for (int halving = 0; halving < 30; ++halving, t *= 0.5) {
        cand = beta + t * step;
        const double ll2 = eval(cand, g2, &h2);
        if (std::isfinite(ll2) && ll2 >= ll - 1e-15 * std::abs(ll)) {
          improved = true;
          beta = cand, grad = g2, hess = h2, ll = ll2;
          break;
        }
      }
    }
    if (!improved) {
      // gradient ascent fallback with backtracking
      double t = 1.0;
      for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
        cand = beta + t * grad;
        const double ll2 = eval(cand, g2, &h2);
        if (std::isfinite(ll2) && ll2 > ll) {
          improved = true;
          beta = cand, grad = g2, hess = h2, ll = ll2;
          break;
        }
      }
    }
    if (capped(beta)) {
      fit.separation = true;
      beta = beta.cwiseMax(-opt.coefficient_cap).cwiseMin(opt.coefficient_cap);
      ll = eval(beta, grad, &hess);
      ++it;
      break;
    }
    if (!improved) {
      ++it;
      fit.converged = grad.lpNorm<Eigen::Infinity>() <= opt.tolerance;
      break;
    }
  }
  fit.iterations = it;
  fit.gradient_norm = grad.lpNorm<Eigen::Infinity>();
  if (fit.separation) fit.converged = false;
  fit.coefficients = std::move(beta);
  return fit;
}

}  // namespace detail

/// Maximizes sum_j w_j [y_j log p_j + (1 - y_j) log(1 - p_j)] under a logit link.
/// Weights are normalized internally, so any positive rescaling gives the same fit.
inline WeightedGlmFit fit_weighted_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                            const Eigen::VectorXd& obs_weights, const GlmOptions& opt = {}) {
  if (x.rows() != y.size() || x.rows() != obs_weights.size()) throw DataError("logistic fit: length mismatch");
  const Eigen::VectorXd w = detail::normalized_weights(obs_weights);
  detail::require_full_rank(x, w);
  const Eigen::Index n = x.rows();
  Eigen::VectorXd eta(n), resid(n), curv(n);
  auto eval = [&](const Eigen::VectorXd& beta, Eigen::VectorXd& grad, Eigen::MatrixXd* hess) {
    eta.noalias() = x * beta;
    double ll = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double e = eta(j);
      // log(1 + exp(e)) without overflow
      const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      ll += w(j) * (y(j) * e - softplus);
      const double p = logistic(e);
      resid(j) = w(j) * (y(j) - p);
      curv(j) = w(j) * p * (1.0 - p);
    }
    grad.noalias() = x.transpose() * resid;
    if (hess) hess->noalias() = x.transpose() * curv.asDiagonal() * x;
    return ll;
  };
  return detail::newton_maximize(Eigen::VectorXd::Zero(x.cols()), eval, opt, 2);
}

namespace detail {

/// Row-wise softmax with category 0 pinned at logit zero.
inline Eigen::MatrixXd multinomial_probabilities(const Eigen::MatrixXd& x, const Eigen::VectorXd& coef,
                                                 int categories) {
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd eta(x.rows(), categories);
  eta.col(0).setZero();
  for (int k = 1; k < categories; ++k) eta.col(k).noalias() = x * coef.segment((k - 1) * p, p);
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    const double mx = eta.row(j).maxCoeff();
    eta.row(j) = (eta.row(j).array() - mx).exp();
    eta.row(j) /= eta.row(j).sum();
  }
  return eta;
}

}  // namespace detail

/// Multinomial-logit analogue of fit_weighted_logistic; `category` is 0-based
/// and category 0 is the reference. With two categories this is exactly the
/// logistic fit of the indicator of category 1.
inline WeightedGlmFit fit_weighted_multinomial(const Eigen::MatrixXd& x, const std::vector<int>& category,
                                               int categories, const Eigen::VectorXd& obs_weights,
                                               const GlmOptions& opt = {}) {
  const Eigen::Index n = x.rows();
  if (static_cast<Eigen::Index>(category.size()) != n || obs_weights.size() != n)
    throw DataError("multinomial fit: length mismatch");
  if (categories < 2) throw DataError("multinomial fit needs at least 2 categories");
  for (int c : category)
    if (c < 0 || c >= categories) throw DataError("multinomial fit: category out of range");
  if (categories == 2) {
    Eigen::VectorXd y(n);
    for (Eigen::Index j = 0; j < n; ++j) y(j) = category[static_cast<std::size_t>(j)] == 1 ? 1.0 : 0.0;
    return fit_weighted_logistic(x, y, obs_weights, opt);
  }
  const Eigen::VectorXd w = detail::normalized_weights(obs_weights);
  detail::require_full_rank(x, w);
  const Eigen::Index p = x.cols();
  const int km1 = categories - 1;
  auto eval = [&](const Eigen::VectorXd& beta, Eigen::VectorXd& grad, Eigen::MatrixXd* hess) {
    const Eigen::MatrixXd prob = detail::multinomial_probabilities(x, beta, categories);
    double ll = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) ll += w(j) * std::log(std::max(prob(j, category[static_cast<std::size_t>(j)]), 1e-300));
    Eigen::VectorXd r(n);
    for (int k = 1; k < categories; ++k) {
      for (Eigen::Index j = 0; j < n; ++j)
        r(j) = w(j) * ((category[static_cast<std::size_t>(j)] == k ? 1.0 : 0.0) - prob(j, k));
      grad.segment((k - 1) * p, p).noalias() = x.transpose() * r;
    }
    if (hess) {
      hess->resize(km1 * p, km1 * p);
      for (int k = 1; k < categories; ++k)
        for (int l = k; l < categories; ++l) {
          for (Eigen::Index j = 0; j < n; ++j) r(j) = w(j) * prob(j, k) * ((k == l ? 1.0 : 0.0) - prob(j, l));
          const Eigen::MatrixXd blk = x.transpose() * r.asDiagonal() * x;
          hess->block((k - 1) * p, (l - 1) * p, p, p) = blk;
          if (l != k) hess->block((l - 1) * p, (k - 1) * p, p, p) = blk.transpose();
        }
    }
    return ll;
  };
  return detail::newton_maximize(Eigen::VectorXd::Zero(km1 * p), eval, opt, categories);
}

/// N x K matrix of fitted category probabilities (unclipped); rows sum to 1.
inline Eigen::MatrixXd predict_category_probabilities(const WeightedGlmFit& fit, const Eigen::MatrixXd& x) {
  if (fit.categories == 2) {
    Eigen::MatrixXd out(x.rows(), 2);
    const Eigen::VectorXd eta = x * fit.coefficients;
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      out(j, 1) = logistic(eta(j));
      out(j, 0) = logistic(-eta(j));
    }
    return out;
  }
  return detail::multinomial_probabilities(x, fit.coefficients, fit.categories);
}

/// Probability of the outcome each row actually has, clipped to the floor.
/// For the treatment model pass the received arms to get Pr(A = a | x); for
/// the missingness model pass zeros to get Pr(M = 0 | x, a).
inline Eigen::VectorXd predict_prob(const WeightedGlmFit& fit, const Eigen::MatrixXd& x, std::span<const int> outcome,
                                    double floor = kProbabilityFloor) {
  if (static_cast<Eigen::Index>(outcome.size()) != x.rows()) throw DataError("predict_prob: length mismatch");
  Eigen::VectorXd out(x.rows());
  if (fit.categories == 2) {
    const Eigen::VectorXd eta = x * fit.coefficients;
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      const double e = outcome[static_cast<std::size_t>(j)] == 1 ? eta(j) : -eta(j);
      out(j) = clip_probability(logistic(e), floor);
    }
    return out;
  }
  const Eigen::MatrixXd prob = predict_category_probabilities(fit, x);
  for (Eigen::Index j = 0; j < x.rows(); ++j)
    out(j) = clip_probability(prob(j, outcome[static_cast<std::size_t>(j)]), floor);
  return out;
}

}  // namespace itrnma
