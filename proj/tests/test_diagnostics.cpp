#include <gtest/gtest.h>

#include "itrnma/diagnostics.hpp"
#include "itrnma/stats.hpp"

using namespace itrnma;

namespace {

Eigen::MatrixXd normal_chains(Eigen::Index n, Eigen::Index m, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> stdn;
  Eigen::MatrixXd x(n, m);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = stdn(rng);
  return x;
}

}  // namespace

TEST(Diagnostics, IidNormal) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto d = diagnose(normal_chains(1000, 4, seed));
    EXPECT_LT(d.rhat, 1.01);
    EXPECT_GT(d.ess, 0.5 * 4000);
    EXPECT_LT(d.ess, 1.5 * 4000);
    EXPECT_FALSE(d.zero_variance);
  }
}

TEST(Diagnostics, ConstantChains) {
  const auto d = diagnose(Eigen::MatrixXd::Constant(100, 4, 2.5));
  EXPECT_TRUE(d.zero_variance);
  EXPECT_EQ(d.rhat, 1.0);
}

TEST(Diagnostics, SeparatedChains) {
  Eigen::MatrixXd x = normal_chains(500, 2, 3) * 0.01;
  x.col(1).array() += 5.0;
  EXPECT_GT(diagnose(x).rhat, 1.5);
  Eigen::MatrixXd c(100, 2);
  c.col(0).setConstant(0.0);
  c.col(1).setConstant(1.0);
  EXPECT_GT(diagnose(c).rhat, 1.01);
}

TEST(Diagnostics, AutocorrelatedChainHasSmallEss) {
  Rng rng(8);
  std::normal_distribution<double> stdn;
  Eigen::MatrixXd x(2000, 4);
  const double phi = 0.95;
  for (Eigen::Index c = 0; c < 4; ++c) {
    double v = stdn(rng);
    for (Eigen::Index i = 0; i < 2000; ++i) x(i, c) = v = phi * v + std::sqrt(1 - phi * phi) * stdn(rng);
  }
  const auto d = diagnose(x);
  // AR(1) ESS is n (1 - phi) / (1 + phi), about 205 here
  EXPECT_GT(d.ess, 100.0);
  EXPECT_LT(d.ess, 400.0);
}

TEST(Diagnostics, ScaleTailDetected) {
  // same location, different scales: the folded version flags it
  Eigen::MatrixXd x = normal_chains(2000, 4, 10);
  x.col(3) *= 4.0;
  EXPECT_GT(diagnose(x).rhat, 1.01);
}

TEST(Diagnostics, Stacked) {
  const Eigen::MatrixXd chains = normal_chains(400, 4, 12);
  Eigen::MatrixXd stacked(1600, 2);
  for (int c = 0; c < 4; ++c) stacked.col(0).segment(c * 400, 400) = chains.col(c);
  stacked.col(1).setConstant(1.0);
  const auto v = diagnose_stacked(stacked, 4);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].rhat, diagnose(chains).rhat);
  EXPECT_TRUE(v[1].zero_variance);
}
