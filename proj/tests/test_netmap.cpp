#include <gtest/gtest.h>

#include <random>

#include <unsupported/Eigen/KroneckerProduct>

#include "itrnma/netmap.hpp"

using namespace itrnma;

namespace {

Eigen::MatrixXd mat(std::initializer_list<std::initializer_list<double>> rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

}  // namespace

// Treatments 1..5 in the worked examples are indices 0..4 here.
TEST(BuildU, ThreeArmStudyWithoutGlobalReference) {
  EXPECT_EQ(build_U({1, 2, 3}, 5), mat({{-1, 1, 0, 0}, {-1, 0, 1, 0}}));
}

TEST(BuildU, TwoArmStudyWithGlobalReference) { EXPECT_EQ(build_U({0, 1}, 5), mat({{1, 0, 0, 0}})); }

TEST(BuildU, RelabeledColumn) { EXPECT_EQ(build_U({0, 2}, 3), mat({{0, 1}})); }

TEST(BuildU, RowSums) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> all{0, 1, 2, 3, 4, 5};
    std::shuffle(all.begin(), all.end(), rng);
    const int arms = 2 + static_cast<int>(rng() % 4);
    std::vector<int> a(all.begin(), all.begin() + arms);
    const Eigen::MatrixXd u = build_U(a, 6);
    ASSERT_EQ(u.rows(), arms - 1);
    ASSERT_EQ(u.cols(), 5);
    // +1 for the arm minus -1 for the study reference, dropping the global reference column
    for (Eigen::Index r = 0; r < u.rows(); ++r) {
      const double expected = a.front() == 0 ? 1.0 : (a[static_cast<std::size_t>(r) + 1] == 0 ? -1.0 : 0.0);
      EXPECT_EQ(u.row(r).sum(), expected);
    }
  }
}

TEST(BuildU, Errors) {
  EXPECT_THROW(build_U({0}, 3), SchemaError);
  EXPECT_THROW(build_U({0, 3}, 3), SchemaError);
  EXPECT_THROW(build_U({1, 1}, 3), SchemaError);
}

TEST(BuildV, QZeroIsU) {
  const auto u = build_U({1, 2, 3}, 5);
  EXPECT_EQ(build_V(u, 0), u);
}

TEST(BuildV, KroneckerDefinition) {
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(2, 8);
  expected(0, 0) = expected(1, 1) = 1.0;
  EXPECT_EQ(build_V(mat({{1, 0, 0, 0}}), 1), expected);
}

TEST(BuildV, MatchesBruteForceKronecker) {
  const auto u = build_U({1, 2, 3}, 5);
  for (int q = 0; q <= 4; ++q) {
    const Eigen::Index b = q + 1;
    const Eigen::MatrixXd v = build_V(u, q);
    ASSERT_EQ(v.rows(), u.rows() * b);
    ASSERT_EQ(v.cols(), u.cols() * b);
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      for (Eigen::Index c = 0; c < v.cols(); ++c)
        EXPECT_EQ(v(r, c), (r % b == c % b) ? u(r / b, c / b) : 0.0) << r << "," << c;
    const Eigen::MatrixXd eig = Eigen::kroneckerProduct(u, Eigen::MatrixXd::Identity(b, b));
    EXPECT_EQ(v, eig);
  }
}

TEST(BuildV, MixedProductBlockwise) {
  // V psi equals U applied to each coordinate slice psi_{.,q}.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> stdn;
  const auto u = build_U({2, 0, 4, 1}, 6);
  const int q = 3;
  Eigen::VectorXd psi(5 * (q + 1));
  for (auto& v : psi) v = stdn(rng);
  const Eigen::VectorXd lhs = build_V(u, q) * psi;
  for (int k = 0; k <= q; ++k) {
    Eigen::VectorXd slice(5);
    for (int g = 0; g < 5; ++g) slice(g) = psi(g * (q + 1) + k);
    const Eigen::VectorXd mapped = u * slice;
    for (Eigen::Index r = 0; r < u.rows(); ++r) EXPECT_NEAR(lhs(r * (q + 1) + k), mapped(r), 1e-14);
  }
}

TEST(ConsistencyContrast, IdentitiesPerDraw) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> stdn;
  const int q = 2, g = 4;
  Eigen::MatrixXd draws(500, (g - 1) * (q + 1));
  for (Eigen::Index i = 0; i < draws.size(); ++i) draws.data()[i] = stdn(rng);
  for (int k = 0; k <= q; ++k) {
    EXPECT_TRUE(consistency_contrast(draws, 2, 2, k, q).isZero(0.0));
    EXPECT_EQ(consistency_contrast(draws, 2, 0, k, q), draws.col(psi_index(2, k, q)));
    const Eigen::VectorXd c32 = consistency_contrast(draws, 3, 2, k, q);
    const Eigen::VectorXd c21 = consistency_contrast(draws, 2, 1, k, q);
    const Eigen::VectorXd c31 = consistency_contrast(draws, 3, 1, k, q);
    for (Eigen::Index r = 0; r < draws.rows(); ++r) EXPECT_NEAR(c32(r) + c21(r), c31(r), 1e-14);
    EXPECT_EQ(consistency_contrast(draws, 0, 3, k, q), -draws.col(psi_index(3, k, q)));
  }
  EXPECT_THROW(consistency_contrast(draws, 4, 0, 0, q), ProfileError);
  EXPECT_THROW(consistency_contrast(draws, 1, 0, 3, q), ProfileError);
}

TEST(TreatmentNetwork, DefaultReferenceIsMostCommon) {
  const auto net = TreatmentNetwork::build({"A", "B", "C"}, {{"s1", {"B", "A"}}, {"s2", {"B", "C"}}}, 1);
  EXPECT_EQ(net.reference(), "B");
  EXPECT_EQ(net.treatments(), (std::vector<std::string>{"B", "A", "C"}));
  EXPECT_EQ(net.studies()[0].arms, (std::vector<int>{0, 1}));
  EXPECT_EQ(net.psi_size(), 4);
  EXPECT_EQ(net.psi_names({"(intercept)", "x"}),
            (std::vector<std::string>{"A:(intercept)", "A:x", "C:(intercept)", "C:x"}));
}

TEST(TreatmentNetwork, ExplicitReferenceAndEdges) {
  const auto net = TreatmentNetwork::build(
      {"T1", "T2", "T3"}, {{"a", {"T1", "T2"}}, {"b", {"T1", "T2"}}, {"c", {"T1", "T3"}}, {"d", {"T1", "T3"}}}, 1, "T1");
  const auto e = net.edges();
  EXPECT_EQ(e.size(), 2u);
  EXPECT_EQ(e.at({0, 1}), 2);
  EXPECT_EQ(e.at({0, 2}), 2);
  EXPECT_TRUE(net.connected());
  EXPECT_EQ(net.U(0), mat({{1, 0}}));
}

TEST(TreatmentNetwork, DisconnectedIsRejected) {
  const auto net = TreatmentNetwork::build({"A", "B", "C", "D"}, {{"s1", {"A", "B"}}, {"s2", {"C", "D"}}}, 0, "A");
  EXPECT_FALSE(net.connected());
  EXPECT_EQ(net.unreachable(), (std::vector<std::string>{"C", "D"}));
  EXPECT_THROW(net.require_connected(), IdentifiabilityError);
}

TEST(TreatmentNetwork, UnknownLabels) {
  EXPECT_THROW(TreatmentNetwork::build({"A", "B"}, {{"s", {"A", "Z"}}}, 0), SchemaError);
  EXPECT_THROW(TreatmentNetwork::build({"A", "B"}, {{"s", {"A", "B"}}}, 0, "Z"), SchemaError);
  EXPECT_THROW(TreatmentNetwork::build({"A", "A"}, {}, 0), SchemaError);
}
