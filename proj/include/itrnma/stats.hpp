#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

namespace itrnma {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream for a (seed, id...) tuple. Identical tuples give
/// identical streams regardless of which thread asks.
inline Rng stream_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t h = splitmix64(seed);
  for (auto id : ids) h = splitmix64(h ^ splitmix64(id + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

inline double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

/// Sample variance with n-1 denominator; zero for fewer than two values.
inline double variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// Empirical quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7, the R default).
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) return std::nan("");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::span<const double> x, double p) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, p);
}

inline double quantile(const Eigen::VectorXd& x, double p) {
  return quantile(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), p);
}

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double normal_cdf(double z) {
  return boost::math::cdf(boost::math::normal_distribution<double>(), z);
}

/// Quantile of the half-normal distribution with scale sigma.
inline double half_normal_quantile(double sigma, double p) {
  return sigma * normal_quantile(0.5 + 0.5 * p);
}

/// Column means of a draws matrix (rows = draws).
inline Eigen::VectorXd column_means(const Eigen::MatrixXd& draws) {
  return draws.colwise().mean().transpose();
}

/// Sample covariance of the rows of `draws`; zero matrix for a single draw.
inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& draws) {
  const auto n = draws.rows();
  if (n < 2) return Eigen::MatrixXd::Zero(draws.cols(), draws.cols());
  const Eigen::MatrixXd centered = draws.rowwise() - draws.colwise().mean();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return 0.5 * (cov + cov.transpose());
}

inline double logistic(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Draw from N(mean, precision^{-1}) given the Cholesky factor of the precision.
inline Eigen::VectorXd draw_gaussian_from_precision(const Eigen::LLT<Eigen::MatrixXd>& prec_llt,
                                                    const Eigen::VectorXd& mean, Rng& rng) {
  std::normal_distribution<double> stdn;
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = stdn(rng);
  // prec = L L'; x = mean + L'^{-1} z has covariance prec^{-1}
  return mean + prec_llt.matrixU().solve(z);
}

}  // namespace itrnma
