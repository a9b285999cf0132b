#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "itrnma/stats.hpp"

namespace itrnma {

/// Convergence summary of one scalar parameter.
struct ParameterDiagnostics {
  /// Rank-normalized split R-hat, max of the bulk and folded versions.
  double rhat = 1.0;
  /// Bulk effective sample size.
  double ess = 0.0;
  /// All draws identical; R-hat reported as 1 and ESS as the draw count.
  bool zero_variance = false;
};

namespace detail {

/// Columns are chains.
using ChainMatrix = Eigen::MatrixXd;

inline ChainMatrix split_chains(const ChainMatrix& x) {
  const Eigen::Index n = x.rows();
  if (n < 2) return x;
  const Eigen::Index half = n / 2;
  ChainMatrix out(half, 2 * x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    out.col(2 * c) = x.col(c).head(half);
    out.col(2 * c + 1) = x.col(c).tail(half);  // drops the middle draw for odd n
  }
  return out;
}

/// Replaces every draw by the normal score of its pooled average rank.
inline ChainMatrix z_scale(const ChainMatrix& x) {
  const Eigen::Index total = x.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  const double* v = x.data();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
  ChainMatrix z(x.rows(), x.cols());
  double* zd = z.data();
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
    const double score = normal_quantile((rank - 0.375) / (static_cast<double>(total) + 0.25));
    for (std::size_t k = i; k <= j; ++k) zd[order[k]] = score;
    i = j + 1;
  }
  return z;
}

inline double rhat_basic(const ChainMatrix& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index m = x.cols();
  if (n < 2 || m < 2) return std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd means(m), vars(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    means(c) = x.col(c).mean();
    vars(c) = (x.col(c).array() - means(c)).square().sum() / static_cast<double>(n - 1);
  }
  const double grand = means.mean();
  const double between = static_cast<double>(n) * (means.array() - grand).square().sum() / static_cast<double>(m - 1);
  const double within = vars.mean();
  if (within <= 0.0) return between > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  return std::sqrt((between / within + static_cast<double>(n) - 1.0) / static_cast<double>(n));
}

/// Multi-chain ESS with Geyer's initial monotone sequence.
inline double ess_basic(const ChainMatrix& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index m = x.cols();
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd means(m);
  for (Eigen::Index c = 0; c < m; ++c) means(c) = x.col(c).mean();
  ChainMatrix centered = x.rowwise() - means.transpose();
  auto mean_acov = [&](Eigen::Index lag) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < m; ++c)
      s += centered.col(c).head(n - lag).dot(centered.col(c).tail(n - lag)) / static_cast<double>(n);
    return s / static_cast<double>(m);
  };
  const double acov0 = mean_acov(0);
  const double mean_var = acov0 * static_cast<double>(n) / static_cast<double>(n - 1);
  double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
  if (m > 1) {
    const double gm = means.mean();
    var_plus += (means.array() - gm).square().sum() / static_cast<double>(m - 1);
  }
  if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  auto rho = [&](Eigen::Index lag) { return 1.0 - (mean_var - mean_acov(lag)) / var_plus; };

  std::vector<double> rho_t(static_cast<std::size_t>(n), 0.0);
  Eigen::Index t = 0;
  double even = 1.0;
  double odd = rho(1);
  rho_t[0] = even;
  rho_t[1] = odd;
  while (t < n - 5 && std::isfinite(even + odd) && even + odd > 0.0) {
    t += 2;
    even = rho(t);
    odd = rho(t + 1);
    if (even + odd >= 0.0) {
      rho_t[static_cast<std::size_t>(t)] = even;
      rho_t[static_cast<std::size_t>(t + 1)] = odd;
    }
  }
  const Eigen::Index max_t = t;
  if (even > 0.0) rho_t[static_cast<std::size_t>(max_t)] = even;

  // initial monotone sequence
  for (Eigen::Index s = 0; s <= max_t - 4;) {
    s += 2;
    const auto u = static_cast<std::size_t>(s);
    if (rho_t[u] + rho_t[u + 1] > rho_t[u - 2] + rho_t[u - 1]) {
      rho_t[u] = 0.5 * (rho_t[u - 2] + rho_t[u - 1]);
      rho_t[u + 1] = rho_t[u];
    }
  }
  double sum = 0.0;
  for (Eigen::Index k = 0; k < max_t; ++k) sum += rho_t[static_cast<std::size_t>(k)];
  const double draws = static_cast<double>(n * m);
  double tau = -1.0 + 2.0 * sum + rho_t[static_cast<std::size_t>(max_t)];
  tau = std::max(tau, 1.0 / std::log10(draws));
  return draws / tau;
}

}  // namespace detail

/// Diagnostics for one parameter; columns of `chains` are chains (>= 2) and
/// rows are post-warmup draws (>= 4).
inline ParameterDiagnostics diagnose(const Eigen::MatrixXd& chains) {
  ParameterDiagnostics d;
  if (chains.size() == 0) return d;
  if (chains.maxCoeff() == chains.minCoeff()) {
    d.zero_variance = true;
    d.rhat = 1.0;
    d.ess = static_cast<double>(chains.size());
    return d;
  }
  const auto split = detail::split_chains(chains);
  const auto z = detail::z_scale(split);
  const double bulk = detail::rhat_basic(z);
  std::vector<double> all(chains.data(), chains.data() + chains.size());
  const double med = quantile(all, 0.5);
  const Eigen::MatrixXd folded = (split.array() - med).abs().matrix();
  const double tail = detail::rhat_basic(detail::z_scale(folded));
  d.rhat = std::max(bulk, tail);
  d.ess = detail::ess_basic(z);
  return d;
}

/// Draws stacked chain after chain (each chain `per_chain` rows) to per-parameter diagnostics.
inline std::vector<ParameterDiagnostics> diagnose_stacked(const Eigen::MatrixXd& draws, int chains) {
  std::vector<ParameterDiagnostics> out;
  if (chains < 1) return out;
  const Eigen::Index per_chain = draws.rows() / chains;
  for (Eigen::Index p = 0; p < draws.cols(); ++p) {
    Eigen::MatrixXd c(per_chain, chains);
    for (int k = 0; k < chains; ++k) c.col(k) = draws.col(p).segment(k * per_chain, per_chain);
    out.push_back(diagnose(c));
  }
  return out;
}

}  // namespace itrnma
