#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "itrnma/error.hpp"

namespace itrnma {

enum class CovariateKind { continuous, binary, categorical };

inline std::string to_string(CovariateKind k) {
  switch (k) {
    case CovariateKind::continuous: return "continuous";
    case CovariateKind::binary: return "binary";
    case CovariateKind::categorical: return "categorical";
  }
  return "continuous";
}

inline CovariateKind covariate_kind_from_string(std::string_view s) {
  if (s == "continuous") return CovariateKind::continuous;
  if (s == "binary") return CovariateKind::binary;
  if (s == "categorical") return CovariateKind::categorical;
  throw SchemaError("unknown covariate kind '" + std::string(s) + "'");
}

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::continuous;
  /// Categorical levels, kept sorted; the first one is the dropped reference level.
  std::vector<std::string> levels;

  static CovariateSpec continuous(std::string name) { return {std::move(name), CovariateKind::continuous, {}}; }
  static CovariateSpec binary(std::string name) { return {std::move(name), CovariateKind::binary, {}}; }
  static CovariateSpec categorical(std::string name, std::vector<std::string> levels) {
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    return {std::move(name), CovariateKind::categorical, std::move(levels)};
  }
};

/// Reserved term name that expands to indicators of the non-reference arms.
inline constexpr std::string_view kArmTerm = "arm";

struct TermFactor {
  std::string covariate;
  int power = 1;
  bool operator==(const TermFactor&) const = default;
};

/// One model term: a single covariate raised to a power, or a product of two.
struct Term {
  std::vector<TermFactor> factors;

  bool is_arm() const { return factors.size() == 1 && factors[0].covariate == kArmTerm; }

  std::string label() const {
    std::string out;
    for (std::size_t i = 0; i < factors.size(); ++i) {
      if (i) out += ':';
      out += factors[i].covariate;
      if (factors[i].power != 1) out += "^" + std::to_string(factors[i].power);
    }
    return out;
  }

  bool operator==(const Term&) const = default;
};

namespace detail {
inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}
}  // namespace detail

/// Parses "x1", "x1^2", "x1*x2" or "x1:x2".
inline Term parse_term(std::string_view text) {
  Term term;
  std::string s = detail::trim(text);
  if (s.empty()) throw SchemaError("empty term");
  std::size_t start = 0;
  while (start <= s.size()) {
    auto sep = s.find_first_of("*:", start);
    std::string part = detail::trim(std::string_view(s).substr(start, sep == std::string::npos ? std::string::npos : sep - start));
    if (part.empty()) throw SchemaError("malformed term '" + s + "'");
    TermFactor f;
    if (auto caret = part.find('^'); caret != std::string::npos) {
      f.covariate = detail::trim(std::string_view(part).substr(0, caret));
      const std::string pw = detail::trim(std::string_view(part).substr(caret + 1));
      try {
        std::size_t used = 0;
        f.power = std::stoi(pw, &used);
        if (used != pw.size()) throw std::invalid_argument(pw);
      } catch (const std::exception&) {
        throw SchemaError("bad power in term '" + s + "'");
      }
      if (f.power < 1 || f.power > 4) throw SchemaError("power out of range [1,4] in term '" + s + "'");
    } else {
      f.covariate = part;
    }
    term.factors.push_back(f);
    if (sep == std::string::npos) break;
    start = sep + 1;
  }
  if (term.factors.size() > 2) throw SchemaError("only pairwise products are supported: '" + s + "'");
  return term;
}

inline std::vector<Term> parse_terms(const std::vector<std::string>& texts) {
  std::vector<Term> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(parse_term(t));
  return out;
}

/// Model roles. Intercepts are implicit everywhere; the blip always gets a
/// leading column of ones.
struct FormulaRoles {
  std::vector<Term> reference_terms;
  std::vector<Term> blip_terms;
  std::vector<Term> treatment_terms;
  std::vector<Term> missingness_terms;

  static FormulaRoles parse(const std::vector<std::string>& reference, const std::vector<std::string>& blip,
                            const std::vector<std::string>& treatment,
                            const std::vector<std::string>& missingness) {
    return {parse_terms(reference), parse_terms(blip), parse_terms(treatment), parse_terms(missingness)};
  }

  bool operator==(const FormulaRoles&) const = default;
};

inline const CovariateSpec* find_covariate(const std::vector<CovariateSpec>& specs, std::string_view name) {
  for (const auto& s : specs)
    if (s.name == name) return &s;
  return nullptr;
}

/// Checks names exist and the blip covariates are a subset of the reference covariates.
inline void validate_roles(const FormulaRoles& roles, const std::vector<CovariateSpec>& specs) {
  std::set<std::string> names;
  for (const auto& s : specs) {
    if (s.name.empty()) throw SchemaError("covariate with empty name");
    if (s.name == kArmTerm) throw SchemaError("'arm' is a reserved term name");
    if (!names.insert(s.name).second) throw SchemaError("duplicate covariate '" + s.name + "'");
    if (s.kind == CovariateKind::categorical && s.levels.empty())
      throw SchemaError("categorical covariate '" + s.name + "' has no levels");
  }
  auto check = [&](const std::vector<Term>& terms, const char* role, bool allow_arm) {
    for (const auto& t : terms) {
      for (const auto& f : t.factors) {
        if (f.covariate == kArmTerm) {
          if (!allow_arm || t.factors.size() != 1 || f.power != 1)
            throw SchemaError(std::string("'arm' term not allowed in ") + role + " terms");
          continue;
        }
        const auto* spec = find_covariate(specs, f.covariate);
        if (!spec) throw SchemaError("unknown covariate '" + f.covariate + "' in " + role + " terms");
        if (spec->kind == CovariateKind::categorical && (t.factors.size() != 1 || f.power != 1))
          throw SchemaError("categorical covariate '" + f.covariate + "' only enters as a main term");
      }
    }
  };
  check(roles.reference_terms, "reference", false);
  check(roles.blip_terms, "blip", false);
  check(roles.treatment_terms, "treatment", false);
  check(roles.missingness_terms, "missingness", true);

  std::set<std::string> ref_covs;
  for (const auto& t : roles.reference_terms)
    for (const auto& f : t.factors) ref_covs.insert(f.covariate);
  for (const auto& t : roles.blip_terms)
    for (const auto& f : t.factors)
      if (!ref_covs.count(f.covariate))
        throw SchemaError("blip covariate '" + f.covariate + "' is not in the reference model");
}

/// Individual-level data for one study, stored column-wise.
struct StudyDataset {
  std::string study_id;
  std::vector<CovariateSpec> covariates;
  std::vector<std::string> subject_ids;
  /// NaN marks a missing outcome.
  Eigen::VectorXd outcome;
  /// 0-based arm index; arm 0 is the study reference.
  std::vector<int> arm;
  /// N x P covariate values in `covariates` order. Categorical cells hold the
  /// level index; NaN marks a missing cell.
  Eigen::MatrixXd x;
  /// Global treatment labels t_1..t_G for the arms, reference first.
  std::vector<std::string> arm_treatments;
  FormulaRoles roles;

  Eigen::Index rows() const { return outcome.size(); }
  int n_arms() const { return static_cast<int>(arm_treatments.size()); }
  bool outcome_missing(Eigen::Index j) const { return std::isnan(outcome(j)); }

  Eigen::Index covariate_index(std::string_view name) const {
    for (std::size_t p = 0; p < covariates.size(); ++p)
      if (covariates[p].name == name) return static_cast<Eigen::Index>(p);
    throw SchemaError("unknown covariate '" + std::string(name) + "'");
  }
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> issues;
  std::vector<std::pair<Eigen::Index, std::string>> missing_cells;
  std::vector<Eigen::Index> arm_counts;
  std::vector<Eigen::Index> complete_case_counts;
  Eigen::Index missing_outcomes = 0;

  void fail(std::string msg) {
    ok = false;
    issues.push_back(std::move(msg));
  }
};

/// Report-only check of an ingested dataset; never throws.
inline ValidationReport validate_dataset(const StudyDataset& data) {
  ValidationReport rep;
  const Eigen::Index n = data.rows();
  const int g = data.n_arms();
  if (n == 0) rep.fail("dataset is empty");
  if (g < 2) rep.fail("study has fewer than 2 arms");
  if (static_cast<Eigen::Index>(data.arm.size()) != n || static_cast<Eigen::Index>(data.x.rows()) != n ||
      static_cast<std::size_t>(data.x.cols()) != data.covariates.size()) {
    rep.fail("column lengths are inconsistent");
    return rep;
  }
  rep.arm_counts.assign(static_cast<std::size_t>(std::max(g, 0)), 0);
  rep.complete_case_counts.assign(static_cast<std::size_t>(std::max(g, 0)), 0);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int a = data.arm[static_cast<std::size_t>(j)];
    if (a < 0 || a >= g) {
      rep.fail("row " + std::to_string(j) + ": arm index out of range");
      continue;
    }
    ++rep.arm_counts[static_cast<std::size_t>(a)];
    if (data.outcome_missing(j))
      ++rep.missing_outcomes;
    else
      ++rep.complete_case_counts[static_cast<std::size_t>(a)];
    for (Eigen::Index p = 0; p < data.x.cols(); ++p)
      if (std::isnan(data.x(j, p))) rep.missing_cells.emplace_back(j, data.covariates[static_cast<std::size_t>(p)].name);
  }
  if (!rep.missing_cells.empty())
    rep.fail(std::to_string(rep.missing_cells.size()) + " missing covariate cell(s); impute before fitting");
  for (int a = 0; a < g; ++a) {
    if (rep.arm_counts[static_cast<std::size_t>(a)] == 0) rep.fail("arm " + std::to_string(a + 1) + " has no rows");
    else if (rep.complete_case_counts[static_cast<std::size_t>(a)] == 0)
      rep.fail("arm " + std::to_string(a + 1) + " has no complete-case rows");
  }
  try {
    validate_roles(data.roles, data.covariates);
  } catch (const SchemaError& e) {
    rep.fail(e.what());
  }
  return rep;
}

/// Regression, treatment and missingness designs for one study.
///
/// Column layout of the outcome regression is [ref | blip], where blip holds
/// one block of Q+1 columns per non-reference arm k = 2..G_i, in arm order.
/// Inside a block the first column is the blip intercept.
struct DesignMatrices {
  Eigen::MatrixXd ref;
  Eigen::MatrixXd blip;
  Eigen::MatrixXd trt;
  Eigen::MatrixXd miss;
  /// Outcomes with missing entries replaced by 0; see `m`.
  Eigen::VectorXd y;
  Eigen::VectorXd m;
  std::vector<int> arm;
  int n_arms = 0;
  int q = 0;
  std::vector<std::string> ref_names;
  std::vector<std::string> blip_names;  // Q+1 names, "(intercept)" first
  std::vector<std::string> trt_names;
  std::vector<std::string> miss_names;

  Eigen::Index rows() const { return y.size(); }
  Eigen::Index blip_width() const { return static_cast<Eigen::Index>(q + 1) * (n_arms - 1); }

  Eigen::MatrixXd regression() const {
    Eigen::MatrixXd x(ref.rows(), ref.cols() + blip.cols());
    x << ref, blip;
    return x;
  }

  /// Columns of the blip block for non-reference arm k (1-based arm number, k >= 2).
  auto blip_block(int k) const { return blip.middleCols(static_cast<Eigen::Index>(k - 2) * (q + 1), q + 1); }
};

namespace detail {

inline double term_value(const StudyDataset& d, Eigen::Index j, const Term& t) {
  double v = 1.0;
  for (const auto& f : t.factors) v *= std::pow(d.x(j, d.covariate_index(f.covariate)), f.power);
  return v;
}

/// Expands terms into columns (without intercept). Categorical covariates
/// become indicators for every level but the first; "arm" becomes indicators
/// for arms 2..G.
inline void expand_terms(const StudyDataset& d, const std::vector<Term>& terms, std::vector<Eigen::VectorXd>& cols,
                         std::vector<std::string>& names) {
  const Eigen::Index n = d.rows();
  for (const auto& t : terms) {
    if (t.is_arm()) {
      for (int k = 1; k < d.n_arms(); ++k) {
        Eigen::VectorXd c(n);
        for (Eigen::Index j = 0; j < n; ++j) c(j) = d.arm[static_cast<std::size_t>(j)] == k ? 1.0 : 0.0;
        cols.push_back(std::move(c));
        names.push_back("arm=" + std::to_string(k + 1));
      }
      continue;
    }
    const auto* spec = find_covariate(d.covariates, t.factors[0].covariate);
    if (spec && spec->kind == CovariateKind::categorical) {
      const Eigen::Index p = d.covariate_index(spec->name);
      for (std::size_t l = 1; l < spec->levels.size(); ++l) {
        Eigen::VectorXd c(n);
        for (Eigen::Index j = 0; j < n; ++j) c(j) = d.x(j, p) == static_cast<double>(l) ? 1.0 : 0.0;
        cols.push_back(std::move(c));
        names.push_back(spec->name + "=" + spec->levels[l]);
      }
      continue;
    }
    Eigen::VectorXd c(n);
    for (Eigen::Index j = 0; j < n; ++j) c(j) = term_value(d, j, t);
    cols.push_back(std::move(c));
    names.push_back(t.label());
  }
}

inline Eigen::MatrixXd with_intercept(const std::vector<Eigen::VectorXd>& cols, Eigen::Index n) {
  Eigen::MatrixXd m(n, static_cast<Eigen::Index>(cols.size()) + 1);
  m.col(0).setOnes();
  for (std::size_t c = 0; c < cols.size(); ++c) m.col(static_cast<Eigen::Index>(c) + 1) = cols[c];
  return m;
}

}  // namespace detail

/// Builds every design matrix a study fit needs. Deterministic: identical
/// datasets produce bit-identical matrices.
inline DesignMatrices build_design(const StudyDataset& data) {
  validate_roles(data.roles, data.covariates);
  const Eigen::Index n = data.rows();
  const int g = data.n_arms();
  if (g < 2) throw DataError("study '" + data.study_id + "' needs at least 2 arms");
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(g), 0);
  for (int a : data.arm) {
    if (a < 0 || a >= g) throw DataError("arm index out of range in study '" + data.study_id + "'");
    ++counts[static_cast<std::size_t>(a)];
  }
  for (int a = 0; a < g; ++a)
    if (counts[static_cast<std::size_t>(a)] == 0)
      throw DegenerateArmError("arm " + std::to_string(a + 1) + " of study '" + data.study_id + "' has no rows");
  if (data.x.hasNaN()) throw DataError("study '" + data.study_id + "' has missing covariates; impute first");

  DesignMatrices dm;
  dm.n_arms = g;
  dm.arm = data.arm;

  std::vector<Eigen::VectorXd> cols;
  detail::expand_terms(data, data.roles.reference_terms, cols, dm.ref_names);
  dm.ref = detail::with_intercept(cols, n);
  dm.ref_names.insert(dm.ref_names.begin(), "(intercept)");

  cols.clear();
  std::vector<std::string> modifier_names;
  detail::expand_terms(data, data.roles.blip_terms, cols, modifier_names);
  const Eigen::MatrixXd xdelta = detail::with_intercept(cols, n);
  dm.q = static_cast<int>(modifier_names.size());
  dm.blip_names = modifier_names;
  dm.blip_names.insert(dm.blip_names.begin(), "(intercept)");
  dm.blip = Eigen::MatrixXd::Zero(n, dm.blip_width());
  for (Eigen::Index j = 0; j < n; ++j) {
    const int a = data.arm[static_cast<std::size_t>(j)];
    if (a == 0) continue;
    dm.blip.block(j, static_cast<Eigen::Index>(a - 1) * (dm.q + 1), 1, dm.q + 1) = xdelta.row(j);
  }

  cols.clear();
  detail::expand_terms(data, data.roles.treatment_terms, cols, dm.trt_names);
  dm.trt = detail::with_intercept(cols, n);
  dm.trt_names.insert(dm.trt_names.begin(), "(intercept)");

  cols.clear();
  detail::expand_terms(data, data.roles.missingness_terms, cols, dm.miss_names);
  dm.miss = detail::with_intercept(cols, n);
  dm.miss_names.insert(dm.miss_names.begin(), "(intercept)");

  dm.y.resize(n);
  dm.m.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const bool missing = data.outcome_missing(j);
    dm.m(j) = missing ? 1.0 : 0.0;
    dm.y(j) = missing ? 0.0 : data.outcome(j);
  }
  return dm;
}

/// An effect modifier column of the blip (categoricals already expanded).
struct EffectModifier {
  std::string name;
  /// "continuous" or "binary"; indicator columns report "binary".
  std::string kind;
  double min = 0.0;
  double max = 0.0;
};

/// Effect modifiers with their observed ranges in this study.
inline std::vector<EffectModifier> effect_modifiers(const StudyDataset& data) {
  std::vector<EffectModifier> out;
  std::vector<Eigen::VectorXd> cols;
  std::vector<std::string> names;
  detail::expand_terms(data, data.roles.blip_terms, cols, names);
  std::size_t c = 0;
  for (const auto& t : data.roles.blip_terms) {
    const auto* spec = find_covariate(data.covariates, t.factors[0].covariate);
    const bool indicator = spec && spec->kind != CovariateKind::continuous && t.factors.size() == 1;
    const std::size_t width = (spec && spec->kind == CovariateKind::categorical) ? spec->levels.size() - 1 : 1;
    for (std::size_t w = 0; w < width; ++w, ++c) {
      EffectModifier em;
      em.name = names[c];
      em.kind = indicator ? "binary" : "continuous";
      em.min = cols[c].size() ? cols[c].minCoeff() : 0.0;
      em.max = cols[c].size() ? cols[c].maxCoeff() : 0.0;
      out.push_back(std::move(em));
    }
  }
  return out;
}

}  // namespace itrnma
