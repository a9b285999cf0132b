#include <gtest/gtest.h>

#include "support.hpp"

using namespace itrnma;
using itrnma::testing::nelder_mead_minimize;
using itrnma::testing::neg_multinomial_loglik;

namespace {

struct Fixture {
  Eigen::MatrixXd x;
  std::vector<int> y;
  Eigen::VectorXd w;
  int k;
};

Fixture make_fixture(int n, int k, int covs, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> stdn;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  Fixture f;
  f.k = k;
  f.x.resize(n, covs + 1);
  f.w.resize(n);
  for (int j = 0; j < n; ++j) {
    f.x(j, 0) = 1.0;
    for (int c = 1; c <= covs; ++c) f.x(j, c) = stdn(rng);
    Eigen::VectorXd eta(k);
    eta(0) = 0.0;
    for (int c = 1; c < k; ++c) eta(c) = 0.3 * c - 0.6 * f.x(j, 1) * c + (covs > 1 ? 0.4 * f.x(j, 2) : 0.0);
    Eigen::VectorXd p = eta.array().exp();
    p /= p.sum();
    double u = unif(rng), acc = 0.0;
    int cat = k - 1;
    for (int c = 0; c < k; ++c)
      if (u < (acc += p(c))) {
        cat = c;
        break;
      }
    f.y.push_back(cat);
    f.w(j) = expo(rng);
  }
  // every category must appear at least twice on both sides of the covariate
  for (int c = 0; c < k; ++c) f.y[static_cast<std::size_t>(c)] = c, f.y[static_cast<std::size_t>(k + c)] = c;
  return f;
}

Eigen::VectorXd oracle(const Fixture& f) {
  const Eigen::VectorXd wn = f.w / f.w.sum();
  auto obj = [&](const Eigen::VectorXd& b) { return neg_multinomial_loglik(f.x, f.y, f.k, wn, b); };
  return nelder_mead_minimize(obj, Eigen::VectorXd::Zero((f.k - 1) * f.x.cols()));
}

Eigen::VectorXd binary(const std::vector<int>& y) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(y.size()));
  for (std::size_t j = 0; j < y.size(); ++j) v(static_cast<Eigen::Index>(j)) = y[j];
  return v;
}

}  // namespace

TEST(Logistic, InterceptOnlyClosedForm) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(20, 1);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(20);
  y.head(5).setOnes();
  const auto fit = fit_weighted_logistic(x, y, Eigen::VectorXd::Ones(20));
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.coefficients(0), std::log(0.25 / 0.75), 1e-10);
  EXPECT_NEAR(fit.coefficients(0), -1.0986, 1e-4);
}

TEST(Logistic, SubsampleWeightsEqualSubsampleFit) {
  const auto f = make_fixture(60, 2, 2, 7);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(60);
  w.head(40).setOnes();
  const auto a = fit_weighted_logistic(f.x, binary(f.y), w);
  const auto b = fit_weighted_logistic(f.x.topRows(40), binary(f.y).head(40), Eigen::VectorXd::Ones(40));
  EXPECT_LT((a.coefficients - b.coefficients).norm(), 1e-9);
}

TEST(Logistic, ScaleInvariance) {
  const auto f = make_fixture(50, 2, 2, 8);
  const auto a = fit_weighted_logistic(f.x, binary(f.y), f.w);
  const auto b = fit_weighted_logistic(f.x, binary(f.y), 37.5 * f.w);
  EXPECT_LT((a.coefficients - b.coefficients).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Logistic, MatchesNelderMeadAndScoreEquations) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto f = make_fixture(20 + 2 * static_cast<int>(seed), 2, 2, seed);
    const Eigen::VectorXd y = binary(f.y);
    const auto fit = fit_weighted_logistic(f.x, y, f.w);
    ASSERT_TRUE(fit.converged);
    EXPECT_LT((fit.coefficients - oracle(f)).cwiseAbs().maxCoeff(), 1e-5) << "seed " << seed;
    Eigen::VectorXd p(f.x.rows());
    for (Eigen::Index j = 0; j < p.size(); ++j) p(j) = logistic(f.x.row(j).dot(fit.coefficients));
    const Eigen::VectorXd score = f.x.transpose() * f.w.cwiseProduct(y - p);
    EXPECT_LT(score.cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Multinomial, TwoCategoriesIsLogistic) {
  const auto f = make_fixture(40, 2, 1, 3);
  const auto a = fit_weighted_multinomial(f.x, f.y, 2, f.w);
  const auto b = fit_weighted_logistic(f.x, binary(f.y), f.w);
  EXPECT_EQ(a.coefficients, b.coefficients);
}

TEST(Multinomial, InterceptOnlySharesRecovered) {
  // weighted shares 0.5, 0.3, 0.2
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 1);
  const std::vector<int> y{0, 1, 2};
  const Eigen::VectorXd w = (Eigen::VectorXd(3) << 5.0, 3.0, 2.0).finished();
  const auto fit = fit_weighted_multinomial(x, y, 3, w);
  const Eigen::MatrixXd p = predict_category_probabilities(fit, x);
  EXPECT_NEAR(p(0, 0), 0.5, 1e-9);
  EXPECT_NEAR(p(0, 1), 0.3, 1e-9);
  EXPECT_NEAR(p(0, 2), 0.2, 1e-9);
}

TEST(Multinomial, MatchesNelderMeadAndScoreEquations) {
  for (std::uint64_t seed = 11; seed <= 15; ++seed) {
    const auto f = make_fixture(30, 3, 2, seed);
    const auto fit = fit_weighted_multinomial(f.x, f.y, 3, f.w);
    ASSERT_TRUE(fit.converged);
    EXPECT_LT((fit.coefficients - oracle(f)).cwiseAbs().maxCoeff(), 1e-5) << "seed " << seed;
    const Eigen::MatrixXd p = predict_category_probabilities(fit, f.x);
    for (int c = 1; c < 3; ++c) {
      Eigen::VectorXd r(f.x.rows());
      for (Eigen::Index j = 0; j < r.size(); ++j)
        r(j) = f.w(j) * ((f.y[static_cast<std::size_t>(j)] == c ? 1.0 : 0.0) - p(j, c));
      EXPECT_LT((f.x.transpose() * r).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(Multinomial, RowsSumToOne) {
  const auto f = make_fixture(80, 4, 2, 21);
  const auto fit = fit_weighted_multinomial(f.x, f.y, 4, f.w);
  const Eigen::MatrixXd p = predict_category_probabilities(fit, f.x);
  for (Eigen::Index j = 0; j < p.rows(); ++j) EXPECT_NEAR(p.row(j).sum(), 1.0, 1e-12);
}

TEST(PredictProb, ReceivedArmAndObservation) {
  WeightedGlmFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(2);
  fit.categories = 2;
  Eigen::MatrixXd x(2, 2);
  x << 1, 3, 1, -2;
  const std::vector<int> zeros{0, 0}, ones{1, 1};
  EXPECT_EQ(predict_prob(fit, x, zeros)(0), 0.5);
  fit.coefficients << 0.5, 1.0;
  const Eigen::VectorXd p1 = predict_prob(fit, x, ones), p0 = predict_prob(fit, x, zeros);
  for (Eigen::Index j = 0; j < 2; ++j) EXPECT_NEAR(p1(j) + p0(j), 1.0, 1e-15);
  // floor
  fit.coefficients << 100.0, 0.0;
  EXPECT_EQ(predict_prob(fit, x, zeros)(0), kProbabilityFloor);
  EXPECT_EQ(predict_prob(fit, x, ones)(0), 1.0 - kProbabilityFloor);
}

TEST(Logistic, SeparationIsFlaggedNotFatal) {
  Eigen::MatrixXd x(10, 2);
  Eigen::VectorXd y(10);
  for (int j = 0; j < 10; ++j) x(j, 0) = 1.0, x(j, 1) = j - 4.5, y(j) = j >= 5 ? 1.0 : 0.0;
  const auto fit = fit_weighted_logistic(x, y, Eigen::VectorXd::Ones(10));
  EXPECT_TRUE(fit.separation);
  EXPECT_LE(fit.coefficients.cwiseAbs().maxCoeff(), GlmOptions{}.coefficient_cap + 1e-12);
}

TEST(Glm, Errors) {
  Eigen::MatrixXd x(4, 2);
  x << 1, 1, 1, 1, 1, 1, 1, 1;  // collinear
  const Eigen::VectorXd y = (Eigen::VectorXd(4) << 0, 1, 0, 1).finished();
  EXPECT_THROW(fit_weighted_logistic(x, y, Eigen::VectorXd::Ones(4)), SingularDesignError);
  x.col(1) << 0, 1, 2, 3;
  EXPECT_THROW(fit_weighted_logistic(x, y, -Eigen::VectorXd::Ones(4)), DataError);
  EXPECT_THROW(fit_weighted_logistic(x, y, Eigen::VectorXd::Zero(4)), DataError);
  EXPECT_THROW(fit_weighted_multinomial(x, {0, 1, 5, 0}, 3, Eigen::VectorXd::Ones(4)), DataError);
}
