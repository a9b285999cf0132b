#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "itrnma/core.hpp"
#include "itrnma/stats.hpp"

namespace itrnma {

/// Synthetic three-study depression-style network used for the bundled data.
/// Outcome is an end-of-study severity score (lower is better); the true
/// benefit of treatment g over the reference for profile x is
/// demo_psi()[g] . (1, age, female, baseline).
struct DemoStudyDesign {
  std::string id;
  std::vector<std::string> arms;
  int n = 0;
};

inline const std::vector<std::string>& demo_treatments() {
  static const std::vector<std::string> t{"SER", "BUP", "CIT+BUP", "CIT+BUS", "ESCIT", "VEN"};
  return t;
}

inline const std::vector<DemoStudyDesign>& demo_designs() {
  static const std::vector<DemoStudyDesign> d{
      {"trialA", {"SER", "BUP", "VEN"}, 420},
      {"trialB", {"SER", "BUP", "CIT+BUP", "CIT+BUS"}, 560},
      {"trialC", {"SER", "BUP", "ESCIT"}, 400},
  };
  return d;
}

/// Rows follow demo_treatments()[1..]; columns are intercept, age, female, baseline.
inline Eigen::MatrixXd demo_psi() {
  Eigen::MatrixXd p(5, 4);
  p << 1.0, 0.02, 0.5, -0.10,  //
      2.5, -0.03, 0.0, 0.05,   //
      0.5, 0.01, -0.8, 0.10,   //
      -1.5, 0.12, 0.4, -0.05,  //
      3.0, -0.08, 0.0, 0.00;
  return p;
}

inline std::vector<CovariateSpec> demo_covariates() {
  return {CovariateSpec::continuous("age"), CovariateSpec::binary("female"), CovariateSpec::continuous("baseline"),
          CovariateSpec::binary("employed"), CovariateSpec::categorical("site", {"clinic", "hospital", "online"})};
}

inline FormulaRoles demo_roles() {
  return FormulaRoles::parse({"age", "female", "baseline", "employed", "site"}, {"age", "female", "baseline"},
                             {"age", "baseline"}, {"age", "baseline", "arm"});
}

inline std::vector<StudyDataset> demo_network(std::uint64_t seed) {
  const Eigen::MatrixXd psi = demo_psi();
  const auto& names = demo_treatments();
  std::vector<StudyDataset> out;
  for (std::size_t i = 0; i < demo_designs().size(); ++i) {
    const auto& design = demo_designs()[i];
    Rng rng = stream_rng(seed, {static_cast<std::uint64_t>(i)});
    std::normal_distribution<double> stdn;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    StudyDataset d;
    d.study_id = design.id;
    d.covariates = demo_covariates();
    d.roles = demo_roles();
    d.arm_treatments = design.arms;
    const int n = design.n;
    const int g = static_cast<int>(design.arms.size());
    d.x.resize(n, 5);
    d.outcome.resize(n);
    d.arm.resize(static_cast<std::size_t>(n));
    const double age_shift = 4.0 * static_cast<double>(i);
    for (int j = 0; j < n; ++j) {
      const double age = std::round(std::clamp(42.0 + age_shift + 12.0 * stdn(rng), 18.0, 75.0));
      const double female = unif(rng) < 0.62 ? 1.0 : 0.0;
      const double baseline = std::round(std::clamp(21.0 + 3.5 * stdn(rng), 14.0, 34.0));
      const double employed = unif(rng) < 0.55 ? 1.0 : 0.0;
      const double site = std::floor(3.0 * unif(rng));
      // mildly unbalanced allocation: older and more severe patients lean to later arms
      Eigen::VectorXd logits(g);
      for (int k = 0; k < g; ++k) logits(k) = 0.015 * k * (age - 45.0) + 0.04 * k * (baseline - 21.0);
      logits.array() -= logits.maxCoeff();
      Eigen::VectorXd pr = logits.array().exp();
      pr /= pr.sum();
      const double u = unif(rng);
      int a = 0;
      for (double acc = pr(0); a < g - 1 && u > acc; acc += pr(++a)) {
      }
      d.arm[static_cast<std::size_t>(j)] = a;
      double severity = 16.0 + 0.05 * (age - 45.0) + 0.55 * (baseline - 21.0) - 1.2 * employed + 0.8 * (site == 2.0) -
                        0.6 * female + 4.0 * stdn(rng);
      if (a > 0) {
        const auto gi = static_cast<Eigen::Index>(
            std::find(names.begin(), names.end(), design.arms[static_cast<std::size_t>(a)]) - names.begin());
        const Eigen::Vector4d x(1.0, age, female, baseline);
        severity -= psi.row(gi - 1).dot(x);
      }
      const double p_miss = logistic(-1.6 + 0.02 * (age - 45.0) + 0.08 * (baseline - 21.0) + 0.25 * a);
      d.outcome(j) = unif(rng) < p_miss ? std::numeric_limits<double>::quiet_NaN() : std::round(severity * 10.0) / 10.0;
      d.x(j, 0) = age;
      d.x(j, 1) = female;
      d.x(j, 2) = baseline;
      d.x(j, 3) = unif(rng) < 0.03 ? std::numeric_limits<double>::quiet_NaN() : employed;
      d.x(j, 4) = unif(rng) < 0.02 ? std::numeric_limits<double>::quiet_NaN() : site;
      d.subject_ids.push_back(design.id.substr(5) + "-" + std::to_string(1000 + j));
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace itrnma
