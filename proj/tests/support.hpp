#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "itrnma/itrnma.hpp"

namespace itrnma::testing {

/// Two- or three-arm study with continuous x1, x2; the outcome follows
/// 1 + x1 - 0.5 x2 + blip(arm) + noise, assignment is confounded by x1 and
/// outcomes go missing with probability depending on x1 and arm.
inline StudyDataset toy_study(int n, std::uint64_t seed, int arms = 2, bool with_missing = true,
                              double blip0 = 1.0, double blip1 = 0.5) {
  Rng rng(seed);
  std::normal_distribution<double> stdn;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  StudyDataset d;
  d.study_id = "toy" + std::to_string(seed);
  d.covariates = {CovariateSpec::continuous("x1"), CovariateSpec::continuous("x2")};
  d.roles = FormulaRoles::parse({"x1", "x2"}, {"x1"}, {"x1", "x2"}, {"x1", "arm"});
  d.arm_treatments.clear();
  for (int a = 0; a < arms; ++a) d.arm_treatments.push_back(std::string(1, static_cast<char>('A' + a)));
  d.x.resize(n, 2);
  d.outcome.resize(n);
  for (int j = 0; j < n; ++j) {
    const double x1 = stdn(rng), x2 = stdn(rng);
    d.x(j, 0) = x1;
    d.x(j, 1) = x2;
    Eigen::VectorXd eta(arms);
    for (int a = 0; a < arms; ++a) eta(a) = a * (0.4 * x1 - 0.2 * x2);
    Eigen::VectorXd p = eta.array().exp();
    p /= p.sum();
    double u = unif(rng), acc = 0.0;
    int arm = arms - 1;
    for (int a = 0; a < arms; ++a) {
      acc += p(a);
      if (u < acc) {
        arm = a;
        break;
      }
    }
    d.arm.push_back(arm);
    double y = 1.0 + x1 - 0.5 * x2 + stdn(rng);
    if (arm > 0) y += arm * blip0 + blip1 * x1;
    const bool miss = with_missing && unif(rng) < logistic(-1.5 + 0.5 * x1 + 0.3 * arm);
    d.outcome(j) = miss ? std::numeric_limits<double>::quiet_NaN() : y;
    d.subject_ids.push_back(std::to_string(j));
  }
  return d;
}

/// Nelder-Mead with restarts around the incumbent; used as a gradient-free
/// oracle for smooth concave likelihoods.
inline Eigen::VectorXd nelder_mead_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                                            Eigen::VectorXd x0, double step = 1.0, int restarts = 60,
                                            int iters = 4000) {
  const Eigen::Index n = x0.size();
  Eigen::VectorXd best = x0;
  for (int r = 0; r < restarts; ++r) {
    std::vector<Eigen::VectorXd> s(static_cast<std::size_t>(n + 1), best);
    for (Eigen::Index i = 0; i < n; ++i) s[static_cast<std::size_t>(i + 1)](i) += step;
    std::vector<double> fv(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) fv[i] = f(s[i]);
    for (int it = 0; it < iters; ++it) {
      std::vector<std::size_t> idx(s.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
      std::vector<Eigen::VectorXd> s2;
      std::vector<double> f2;
      for (auto i : idx) s2.push_back(s[i]), f2.push_back(fv[i]);
      s = s2;
      fv = f2;
      if (std::abs(fv.back() - fv.front()) < 1e-18 && (s.back() - s.front()).norm() < 1e-12) break;
      Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) c += s[static_cast<std::size_t>(i)];
      c /= static_cast<double>(n);
      const Eigen::VectorXd xr = c + (c - s.back());
      const double fr = f(xr);
      if (fr < fv.front()) {
        const Eigen::VectorXd xe = c + 2.0 * (c - s.back());
        const double fe = f(xe);
        if (fe < fr) s.back() = xe, fv.back() = fe;
        else s.back() = xr, fv.back() = fr;
      } else if (fr < fv[fv.size() - 2]) {
        s.back() = xr, fv.back() = fr;
      } else {
        const Eigen::VectorXd xc = c + 0.5 * (s.back() - c);
        const double fc = f(xc);
        if (fc < fv.back()) {
          s.back() = xc, fv.back() = fc;
        } else {
          for (std::size_t i = 1; i < s.size(); ++i) s[i] = s[0] + 0.5 * (s[i] - s[0]), fv[i] = f(s[i]);
        }
      }
    }
    std::size_t ib = 0;
    for (std::size_t i = 1; i < s.size(); ++i)
      if (fv[i] < fv[ib]) ib = i;
    best = s[ib];
    step = std::max(step * 0.5, 1e-4);
  }
  return best;
}

/// Negative weighted multinomial log-likelihood written out directly;
/// category 0 is the reference, coefficients are (K-1) blocks of p.
inline double neg_multinomial_loglik(const Eigen::MatrixXd& x, const std::vector<int>& y, int k,
                                     const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  const Eigen::Index p = x.cols();
  double ll = 0.0;
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    std::vector<double> eta(static_cast<std::size_t>(k), 0.0);
    for (int c = 1; c < k; ++c) eta[static_cast<std::size_t>(c)] = x.row(j).dot(beta.segment((c - 1) * p, p));
    double mx = *std::max_element(eta.begin(), eta.end());
    double denom = 0.0;
    for (double e : eta) denom += std::exp(e - mx);
    ll += w(j) * (eta[static_cast<std::size_t>(y[static_cast<std::size_t>(j)])] - mx - std::log(denom));
  }
  return -ll;
}

}  // namespace itrnma::testing
