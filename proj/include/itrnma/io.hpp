#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "itrnma/bbdwols.hpp"
#include "itrnma/core.hpp"
#include "itrnma/diagnostics.hpp"
#include "itrnma/error.hpp"
#include "itrnma/netmap.hpp"
#include "itrnma/nma.hpp"
#include "itrnma/simlab.hpp"
#include "itrnma/stats.hpp"

namespace itrnma {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------- numbers

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// ---------------------------------------------------------------- CSV

namespace detail {

/// Splits one CSV record. Handles double-quoted fields with "" escapes.
/// Returns false at end of input.
inline bool read_csv_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string line;
  if (!std::getline(in, line)) return false;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0;; ++i) {
    if (i == line.size()) {
      if (quoted) {
        std::string next;
        if (!std::getline(in, next)) throw DataError("unterminated quoted CSV field");
        cur += '\n';
        line = std::move(next);
        i = static_cast<std::size_t>(-1);
        continue;
      }
      break;
    }
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
        else quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return true;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += (c == '"') ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline bool is_missing_cell(const std::string& s) {
  const std::string t = trim(s);
  return t.empty() || t == "NA";
}

}  // namespace detail

/// What to read from a study CSV and how to type it.
struct IngestSpec {
  std::vector<CovariateSpec> covariates;
  FormulaRoles roles;
  /// Every admissible treatment label.
  std::vector<std::string> registry;
  /// Network reference. When the study contains it, it becomes arm 0;
  /// remaining arms follow registry order.
  std::optional<std::string> reference;
  /// Keep only rows of this study; required when the file holds several.
  std::optional<std::string> study_id;
  /// Multiply outcomes by -1 so that larger is better.
  bool negate_outcome = false;
};

inline StudyDataset ingest_csv(std::istream& in, const IngestSpec& spec, const std::string& source = "<csv>") {
  std::vector<std::string> header;
  if (!detail::read_csv_record(in, header)) throw DataError(source + ": empty file");
  for (auto& h : header) h = detail::trim(h);
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);
  const std::vector<std::string> fixed{"study_id", "subject_id", "treatment", "outcome"};
  for (std::size_t k = 0; k < fixed.size(); ++k)
    if (header.size() <= k || header[k] != fixed[k])
      throw DataError(source + ": header must start with study_id,subject_id,treatment,outcome");
  std::vector<std::size_t> cov_col;
  for (const auto& c : spec.covariates) {
    auto it = std::find(header.begin() + 4, header.end(), c.name);
    if (it == header.end()) throw DataError(source + ": covariate column '" + c.name + "' not found");
    cov_col.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  validate_roles(spec.roles, spec.covariates);
  const std::set<std::string> registry(spec.registry.begin(), spec.registry.end());

  struct Row {
    std::size_t line;
    std::string subject, treatment;
    double outcome;
    std::vector<std::string> cells;
  };
  std::vector<Row> rows;
  std::set<std::string> seen_studies;
  std::vector<std::string> fields;
  std::size_t line = 1;
  while (detail::read_csv_record(in, fields)) {
    ++line;
    if (fields.size() == 1 && detail::trim(fields[0]).empty()) continue;
    if (fields.size() != header.size())
      throw DataError(source + " row " + std::to_string(line) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    const std::string sid = detail::trim(fields[0]);
    seen_studies.insert(sid);
    if (spec.study_id && sid != *spec.study_id) continue;
    Row r;
    r.line = line;
    r.subject = detail::trim(fields[1]);
    r.treatment = detail::trim(fields[2]);
    if (!registry.count(r.treatment))
      throw DataError(source + " row " + std::to_string(line) + ": unknown treatment '" + r.treatment + "'");
    if (detail::is_missing_cell(fields[3])) {
      r.outcome = std::numeric_limits<double>::quiet_NaN();
    } else {
      const auto v = parse_double(fields[3]);
      if (!v) throw DataError(source + " row " + std::to_string(line) + ": non-numeric outcome '" + fields[3] + "'");
      r.outcome = spec.negate_outcome ? -*v : *v;
    }
    for (std::size_t c : cov_col) r.cells.push_back(fields[c]);
    rows.push_back(std::move(r));
  }
  if (!spec.study_id && seen_studies.size() > 1)
    throw DataError(source + ": file holds several studies; choose one with a study id");
  if (rows.empty()) throw DataError(source + ": no rows" + (spec.study_id ? " for study '" + *spec.study_id + "'" : ""));

  StudyDataset d;
  d.study_id = spec.study_id ? *spec.study_id : *seen_studies.begin();
  d.covariates = spec.covariates;
  d.roles = spec.roles;

  std::set<std::string> present;
  for (const auto& r : rows) present.insert(r.treatment);
  if (spec.reference && present.count(*spec.reference)) d.arm_treatments.push_back(*spec.reference);
  for (const auto& t : spec.registry)
    if (present.count(t) && (d.arm_treatments.empty() || d.arm_treatments.front() != t)) d.arm_treatments.push_back(t);

  // categorical levels not fixed by the config come from the data
  for (std::size_t p = 0; p < d.covariates.size(); ++p) {
    auto& c = d.covariates[p];
    if (c.kind != CovariateKind::categorical || !c.levels.empty()) continue;
    std::vector<std::string> levels;
    for (const auto& r : rows)
      if (!detail::is_missing_cell(r.cells[p])) levels.push_back(detail::trim(r.cells[p]));
    c = CovariateSpec::categorical(c.name, levels);
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  d.outcome.resize(n);
  d.x.resize(n, static_cast<Eigen::Index>(d.covariates.size()));
  std::set<std::string> subjects;
  for (Eigen::Index j = 0; j < n; ++j) {
    const Row& r = rows[static_cast<std::size_t>(j)];
    const std::string where = source + " row " + std::to_string(r.line);
    if (!subjects.insert(r.subject).second) throw DataError(where + ": duplicate subject_id '" + r.subject + "'");
    d.subject_ids.push_back(r.subject);
    d.outcome(j) = r.outcome;
    d.arm.push_back(static_cast<int>(std::find(d.arm_treatments.begin(), d.arm_treatments.end(), r.treatment) -
                                     d.arm_treatments.begin()));
    for (std::size_t p = 0; p < d.covariates.size(); ++p) {
      const auto& c = d.covariates[p];
      const std::string cell = detail::trim(r.cells[p]);
      double v = std::numeric_limits<double>::quiet_NaN();
      if (!detail::is_missing_cell(cell)) {
        if (c.kind == CovariateKind::categorical) {
          auto it = std::find(c.levels.begin(), c.levels.end(), cell);
          if (it == c.levels.end()) throw DataError(where + ": unknown level '" + cell + "' of '" + c.name + "'");
          v = static_cast<double>(it - c.levels.begin());
        } else {
          const auto parsed = parse_double(cell);
          if (!parsed) throw DataError(where + ": non-numeric value '" + cell + "' in column '" + c.name + "'");
          v = *parsed;
          if (c.kind == CovariateKind::binary && v != 0.0 && v != 1.0)
            throw DataError(where + ": binary column '" + c.name + "' holds " + cell);
        }
      }
      d.x(j, static_cast<Eigen::Index>(p)) = v;
    }
  }
  return d;
}

inline StudyDataset ingest_csv(const std::filesystem::path& path, const IngestSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return ingest_csv(in, spec, path.string());
}

/// Writes the dataset in the ingest layout; numbers use the shortest
/// round-trip form, missing cells are empty.
inline void write_csv(std::ostream& out, const StudyDataset& d, bool negate_outcome = false) {
  out << "study_id,subject_id,treatment,outcome";
  for (const auto& c : d.covariates) out << ',' << detail::csv_escape(c.name);
  out << '\n';
  for (Eigen::Index j = 0; j < d.rows(); ++j) {
    out << detail::csv_escape(d.study_id) << ',' << detail::csv_escape(d.subject_ids[static_cast<std::size_t>(j)])
        << ',' << detail::csv_escape(d.arm_treatments[static_cast<std::size_t>(d.arm[static_cast<std::size_t>(j)])])
        << ',';
    if (!d.outcome_missing(j)) out << format_double(negate_outcome ? -d.outcome(j) : d.outcome(j));
    for (std::size_t p = 0; p < d.covariates.size(); ++p) {
      out << ',';
      const double v = d.x(j, static_cast<Eigen::Index>(p));
      if (std::isnan(v)) continue;
      if (d.covariates[p].kind == CovariateKind::categorical)
        out << detail::csv_escape(d.covariates[p].levels[static_cast<std::size_t>(v)]);
      else
        out << format_double(v);
    }
    out << '\n';
  }
}

struct ImputationResult {
  StudyDataset data;
  /// Imputed cell count per covariate name (only covariates with imputations).
  std::map<std::string, Eigen::Index> counts;
};

/// Mean for continuous covariates, mode for binary and categorical ones
/// (ties go to the smallest value / first sorted level). Outcomes untouched.
inline ImputationResult impute_simple(const StudyDataset& data) {
  ImputationResult res{data, {}};
  auto& d = res.data;
  for (Eigen::Index p = 0; p < d.x.cols(); ++p) {
    const auto& c = d.covariates[static_cast<std::size_t>(p)];
    std::vector<double> observed;
    Eigen::Index missing = 0;
    for (Eigen::Index j = 0; j < d.rows(); ++j)
      if (std::isnan(d.x(j, p))) ++missing;
      else observed.push_back(d.x(j, p));
    if (missing == 0) continue;
    if (observed.empty())
      throw DataError("covariate '" + c.name + "' is entirely missing in study '" + d.study_id + "'");
    double fill = 0.0;
    if (c.kind == CovariateKind::continuous) {
      fill = mean(observed);
    } else {
      std::map<double, Eigen::Index> freq;
      for (double v : observed) ++freq[v];
      Eigen::Index best = -1;
      for (const auto& [v, k] : freq)
        if (k > best) best = k, fill = v;
    }
    for (Eigen::Index j = 0; j < d.rows(); ++j)
      if (std::isnan(d.x(j, p))) d.x(j, p) = fill;
    res.counts[c.name] = missing;
  }
  return res;
}

// ---------------------------------------------------------------- JSON basics

inline json to_json_value(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(to_json_value(v(i)));
  return a;
}

inline json matrix_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(to_json_value(m(r, c)));
    a.push_back(std::move(row));
  }
  return a;
}

inline double number_from_json(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw SchemaError("expected a number, found " + j.dump());
  return j.get<double>();
}

inline Eigen::VectorXd vector_from_json(const json& j) {
  if (!j.is_array()) throw SchemaError("expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number_from_json(j[i]);
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array()) throw SchemaError("expected an array of rows");
  if (j.empty()) return {};
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw SchemaError("ragged matrix in JSON");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number_from_json(j[r][c]);
  }
  return m;
}

inline void require_kind(const json& j, const std::string& kind) {
  if (!j.is_object()) throw SchemaError("expected a JSON object");
  if (j.value("schema_version", 0) != kSchemaVersion)
    throw SchemaError("unsupported schema_version " + j.value("schema_version", json(nullptr)).dump());
  if (j.value("kind", std::string()) != kind)
    throw SchemaError("expected a '" + kind + "' document, found '" + j.value("kind", std::string()) + "'");
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) && !j[key].is_null() ? j[key].get<T>() : fallback;
}

// ---------------------------------------------------------------- enums

inline std::string to_string(WeightMode m) {
  switch (m) {
    case WeightMode::none: return "none";
    case WeightMode::treatment_only: return "treatment";
    case WeightMode::treatment_mar: return "treatment_mar";
  }
  return "treatment_mar";
}
inline WeightMode weight_mode_from_string(const std::string& s) {
  if (s == "none") return WeightMode::none;
  if (s == "treatment") return WeightMode::treatment_only;
  if (s == "treatment_mar") return WeightMode::treatment_mar;
  throw SchemaError("unknown weight_mode '" + s + "'");
}
inline std::string to_string(MarProbability m) { return m == MarProbability::observed ? "observed" : "missing"; }
inline MarProbability mar_probability_from_string(const std::string& s) {
  if (s == "observed") return MarProbability::observed;
  if (s == "missing") return MarProbability::missing;
  throw SchemaError("unknown mar_probability '" + s + "'");
}
inline std::string to_string(PointEstimate p) { return p == PointEstimate::mean ? "mean" : "median"; }
inline PointEstimate point_estimate_from_string(const std::string& s) {
  if (s == "mean") return PointEstimate::mean;
  if (s == "median") return PointEstimate::median;
  throw SchemaError("unknown point estimate '" + s + "'");
}
inline std::string to_string(TrimScope t) { return t == TrimScope::per_iteration ? "per_iteration" : "pooled"; }
inline TrimScope trim_scope_from_string(const std::string& s) {
  if (s == "per_iteration") return TrimScope::per_iteration;
  if (s == "pooled") return TrimScope::pooled;
  throw SchemaError("unknown trim_scope '" + s + "'");
}
inline std::string to_string(Effects e) { return e == Effects::common ? "common" : "random"; }
inline Effects effects_from_string(const std::string& s) {
  if (s == "common") return Effects::common;
  if (s == "random") return Effects::random;
  throw SchemaError("unknown effects '" + s + "' (common|random)");
}
inline std::string to_string(CovarianceMode c) { return c == CovarianceMode::full ? "full" : "sparse"; }
inline CovarianceMode covariance_from_string(const std::string& s) {
  if (s == "full") return CovarianceMode::full;
  if (s == "sparse") return CovarianceMode::sparse;
  throw SchemaError("unknown covariance '" + s + "' (full|sparse)");
}
inline std::string to_string(Sampler s) { return s == Sampler::collapsed ? "collapsed" : "centered"; }
inline Sampler sampler_from_string(const std::string& s) {
  if (s == "collapsed") return Sampler::collapsed;
  if (s == "centered") return Sampler::centered;
  throw SchemaError("unknown sampler '" + s + "'");
}
inline StageOne stage_one_from_string(const std::string& s) {
  if (s == "bbdwols") return StageOne::bbdwols;
  if (s == "qlearning") return StageOne::qlearning;
  throw SchemaError("unknown stage-one method '" + s + "'");
}

// ---------------------------------------------------------------- configs

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw SchemaError("unknown key '" + k + "' in " + where);
}

inline json to_json(const BbConfig& c) {
  json j;
  j["iterations"] = c.iterations;
  j["seed"] = c.seed;
  j["weight_mode"] = to_string(c.weight_mode);
  j["mar_probability"] = to_string(c.mar_probability);
  j["trim_quantile"] = c.trim_quantile ? json(*c.trim_quantile) : json(nullptr);
  j["trim_scope"] = to_string(c.trim_scope);
  j["point"] = to_string(c.point);
  j["max_redraws_per_iteration"] = c.max_redraws_per_iteration;
  j["glm"] = {{"tolerance", c.glm.tolerance},
              {"max_iterations", c.glm.max_iterations},
              {"coefficient_cap", c.glm.coefficient_cap}};
  return j;
}

/// Overlays the keys present in `j` on `base`.
inline BbConfig bb_config_from_json(const json& j, BbConfig c = {}) {
  check_keys(j, {"iterations", "seed", "weight_mode", "mar_probability", "trim_quantile", "trim_scope", "point",
                 "max_redraws_per_iteration", "threads", "glm"},
             "stage_one");
  c.iterations = get_or(j, "iterations", c.iterations);
  c.seed = get_or(j, "seed", c.seed);
  if (j.contains("weight_mode")) c.weight_mode = weight_mode_from_string(j["weight_mode"]);
  if (j.contains("mar_probability")) c.mar_probability = mar_probability_from_string(j["mar_probability"]);
  if (j.contains("trim_quantile"))
    c.trim_quantile = j["trim_quantile"].is_null() ? std::nullopt : std::optional<double>(j["trim_quantile"].get<double>());
  if (j.contains("trim_scope")) c.trim_scope = trim_scope_from_string(j["trim_scope"]);
  if (j.contains("point")) c.point = point_estimate_from_string(j["point"]);
  c.max_redraws_per_iteration = get_or(j, "max_redraws_per_iteration", c.max_redraws_per_iteration);
  c.threads = get_or(j, "threads", c.threads);
  if (j.contains("glm")) {
    const auto& g = j["glm"];
    c.glm.tolerance = get_or(g, "tolerance", c.glm.tolerance);
    c.glm.max_iterations = get_or(g, "max_iterations", c.glm.max_iterations);
    c.glm.coefficient_cap = get_or(g, "coefficient_cap", c.glm.coefficient_cap);
  }
  c.validate();
  return c;
}

inline json to_json(const NmaConfig& c) {
  return {{"effects", to_string(c.effects)},
          {"covariance", to_string(c.covariance)},
          {"prior_psi_sd", c.prior_psi_sd},
          {"prior_tau_scale", c.prior_tau_scale},
          {"chains", c.chains},
          {"iters", c.iters},
          {"warmup", c.warmup},
          {"seed", c.seed},
          {"sampler", to_string(c.sampler)},
          {"rhat_threshold", c.rhat_threshold},
          {"min_ess", c.min_ess}};
}

inline NmaConfig nma_config_from_json(const json& j, NmaConfig c = {}) {
  check_keys(j, {"effects", "covariance", "prior_psi_sd", "prior_tau_scale", "chains", "iters", "warmup", "seed",
                 "sampler", "rhat_threshold", "min_ess", "threads"},
             "nma");
  if (j.contains("effects")) c.effects = effects_from_string(j["effects"]);
  if (j.contains("covariance")) c.covariance = covariance_from_string(j["covariance"]);
  c.prior_psi_sd = get_or(j, "prior_psi_sd", c.prior_psi_sd);
  c.prior_tau_scale = get_or(j, "prior_tau_scale", c.prior_tau_scale);
  c.chains = get_or(j, "chains", c.chains);
  c.iters = get_or(j, "iters", c.iters);
  c.warmup = get_or(j, "warmup", c.warmup);
  c.seed = get_or(j, "seed", c.seed);
  if (j.contains("sampler")) c.sampler = sampler_from_string(j["sampler"]);
  c.rhat_threshold = get_or(j, "rhat_threshold", c.rhat_threshold);
  c.min_ess = get_or(j, "min_ess", c.min_ess);
  c.threads = get_or(j, "threads", c.threads);
  c.validate();
  return c;
}

inline json to_json(const CovariateSpec& c) {
  json j{{"name", c.name}, {"kind", to_string(c.kind)}};
  if (c.kind == CovariateKind::categorical) j["levels"] = c.levels;
  return j;
}

inline CovariateSpec covariate_from_json(const json& j) {
  check_keys(j, {"name", "kind", "levels"}, "covariate");
  const auto name = j.at("name").get<std::string>();
  const auto kind = covariate_kind_from_string(j.value("kind", std::string("continuous")));
  if (kind == CovariateKind::categorical)
    return CovariateSpec::categorical(name, j.value("levels", std::vector<std::string>{}));
  return {name, kind, {}};
}

inline std::vector<std::string> term_labels(const std::vector<Term>& terms) {
  std::vector<std::string> out;
  for (const auto& t : terms) out.push_back(t.label());
  return out;
}

inline json to_json(const FormulaRoles& r) {
  return {{"reference", term_labels(r.reference_terms)},
          {"blip", term_labels(r.blip_terms)},
          {"treatment", term_labels(r.treatment_terms)},
          {"missingness", term_labels(r.missingness_terms)}};
}

inline FormulaRoles roles_from_json(const json& j) {
  check_keys(j, {"reference", "blip", "treatment", "missingness"}, "roles");
  auto list = [&](const char* k) { return j.value(k, std::vector<std::string>{}); };
  return FormulaRoles::parse(list("reference"), list("blip"), list("treatment"), list("missingness"));
}

struct StudySource {
  std::string id;
  std::filesystem::path path;
  /// Stage-one settings for this study (global settings with overrides applied).
  BbConfig stage_one;
};

/// Everything needed to run the two stages on a set of study files.
struct RunConfig {
  std::vector<std::string> treatments;
  std::optional<std::string> reference;
  std::vector<CovariateSpec> covariates;
  FormulaRoles roles;
  std::vector<StudySource> studies;
  bool impute = true;
  bool negate_outcome = false;
  BbConfig stage_one;
  NmaConfig nma;
  std::filesystem::path output_dir = "out";

  IngestSpec ingest_spec(const std::string& study_id) const {
    return {covariates, roles, treatments, reference, study_id, negate_outcome};
  }

  const StudySource& study(const std::string& id) const {
    for (const auto& s : studies)
      if (s.id == id) return s;
    throw SchemaError("study '" + id + "' is not in the config");
  }
};

/// Relative paths resolve against `base_dir` (the config file's directory).
inline RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir = {},
                                      bool check_files = true) {
  check_keys(j, {"schema_version", "kind", "treatments", "reference", "covariates", "roles", "studies", "impute",
                 "negate_outcome", "stage_one", "nma", "output_dir"},
             "config");
  if (j.contains("schema_version") && j["schema_version"] != kSchemaVersion)
    throw SchemaError("unsupported config schema_version " + j["schema_version"].dump());
  RunConfig c;
  c.treatments = j.at("treatments").get<std::vector<std::string>>();
  if (j.contains("reference") && !j["reference"].is_null()) c.reference = j["reference"].get<std::string>();
  for (const auto& cj : j.at("covariates")) c.covariates.push_back(covariate_from_json(cj));
  c.roles = roles_from_json(j.at("roles"));
  validate_roles(c.roles, c.covariates);
  c.impute = get_or(j, "impute", c.impute);
  c.negate_outcome = get_or(j, "negate_outcome", c.negate_outcome);
  if (j.contains("stage_one")) c.stage_one = bb_config_from_json(j["stage_one"]);
  if (j.contains("nma")) c.nma = nma_config_from_json(j["nma"]);
  if (j.contains("output_dir")) c.output_dir = base_dir / j["output_dir"].get<std::string>();
  std::set<std::string> ids;
  for (const auto& sj : j.at("studies")) {
    check_keys(sj, {"id", "path", "stage_one"}, "studies[]");
    StudySource s;
    s.id = sj.at("id").get<std::string>();
    if (!ids.insert(s.id).second) throw SchemaError("duplicate study id '" + s.id + "'");
    s.path = base_dir / sj.at("path").get<std::string>();
    if (check_files && !std::filesystem::exists(s.path))
      throw SchemaError("study file '" + s.path.string() + "' does not exist");
    s.stage_one = sj.contains("stage_one") ? bb_config_from_json(sj["stage_one"], c.stage_one) : c.stage_one;
    c.studies.push_back(std::move(s));
  }
  if (c.studies.empty()) throw SchemaError("config lists no studies");
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, path.parent_path(), check_files);
}

inline json to_json(const RunConfig& c) {
  json studies = json::array();
  for (const auto& s : c.studies)
    studies.push_back({{"id", s.id}, {"path", s.path.generic_string()}, {"stage_one", to_json(s.stage_one)}});
  json covs = json::array();
  for (const auto& cv : c.covariates) covs.push_back(to_json(cv));
  return {{"schema_version", kSchemaVersion},
          {"treatments", c.treatments},
          {"reference", c.reference ? json(*c.reference) : json(nullptr)},
          {"covariates", covs},
          {"roles", to_json(c.roles)},
          {"studies", studies},
          {"impute", c.impute},
          {"negate_outcome", c.negate_outcome},
          {"stage_one", to_json(c.stage_one)},
          {"nma", to_json(c.nma)},
          {"output_dir", c.output_dir.generic_string()}};
}

// ---------------------------------------------------------------- posteriors

inline json to_json(const EffectModifier& m) {
  return {{"name", m.name}, {"kind", m.kind}, {"min", to_json_value(m.min)}, {"max", to_json_value(m.max)}};
}

inline EffectModifier effect_modifier_from_json(const json& j) {
  return {j.at("name").get<std::string>(), j.value("kind", std::string("continuous")), number_from_json(j.at("min")),
          number_from_json(j.at("max"))};
}

/// Stage-one artifact. Draws are written only on request; `point` and `cov`
/// are all stage two needs.
inline json to_json(const BlipPosterior& p, bool include_draws = false) {
  json mods = json::array();
  for (const auto& m : p.modifiers) mods.push_back(to_json(m));
  json j{{"schema_version", kSchemaVersion},
         {"kind", "blip_posterior"},
         {"study_id", p.study_id},
         {"method", p.method},
         {"arm_treatments", p.arm_treatments},
         {"modifiers", mods},
         {"point", vector_json(p.point)},
         {"cov", matrix_json(p.cov)},
         {"iterations", p.draws.rows()},
         {"redraws", p.redraws},
         {"separation_events", p.separation_events},
         {"degraded", p.degraded},
         {"rows", p.rows},
         {"complete_cases", p.complete_cases},
         {"config", to_json(p.config)}};
  if (include_draws) j["draws"] = matrix_json(p.draws);
  return j;
}

inline BlipPosterior blip_posterior_from_json(const json& j) {
  require_kind(j, "blip_posterior");
  BlipPosterior p;
  p.study_id = j.at("study_id").get<std::string>();
  p.method = j.value("method", std::string("bbdwols"));
  p.arm_treatments = j.at("arm_treatments").get<std::vector<std::string>>();
  for (const auto& m : j.at("modifiers")) p.modifiers.push_back(effect_modifier_from_json(m));
  p.point = vector_from_json(j.at("point"));
  p.cov = matrix_from_json(j.at("cov"));
  if (j.contains("draws")) p.draws = matrix_from_json(j["draws"]);
  p.redraws = j.value("redraws", 0);
  p.separation_events = j.value("separation_events", 0);
  p.degraded = j.value("degraded", false);
  p.rows = j.value("rows", Eigen::Index{0});
  p.complete_cases = j.value("complete_cases", Eigen::Index{0});
  if (j.contains("config")) p.config = bb_config_from_json(j["config"]);
  const Eigen::Index d = static_cast<Eigen::Index>(p.q() + 1) * (static_cast<Eigen::Index>(p.arm_treatments.size()) - 1);
  if (p.point.size() != d || p.cov.rows() != d || p.cov.cols() != d)
    throw SchemaError("blip posterior '" + p.study_id + "' has inconsistent dimensions");
  return p;
}

/// Column summary of a draw matrix.
struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
  double rhat = std::numeric_limits<double>::quiet_NaN();
  double ess = std::numeric_limits<double>::quiet_NaN();
};

inline ParameterSummary summarize_draws(const std::string& name, const Eigen::VectorXd& draws,
                                        const std::optional<ParameterDiagnostics>& diag = std::nullopt) {
  ParameterSummary s;
  s.name = name;
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  if (v.empty()) return s;
  s.mean = mean(v);
  s.sd = v.size() > 1 ? std::sqrt(variance(v)) : 0.0;
  std::sort(v.begin(), v.end());
  s.q025 = quantile_sorted(v, 0.025);
  s.q50 = quantile_sorted(v, 0.5);
  s.q975 = quantile_sorted(v, 0.975);
  if (diag) s.rhat = diag->rhat, s.ess = diag->ess;
  return s;
}

inline json to_json(const ParameterSummary& s) {
  return {{"name", s.name},
          {"mean", to_json_value(s.mean)},
          {"sd", to_json_value(s.sd)},
          {"q025", to_json_value(s.q025)},
          {"q50", to_json_value(s.q50)},
          {"q975", to_json_value(s.q975)},
          {"rhat", to_json_value(s.rhat)},
          {"ess", to_json_value(s.ess)}};
}

inline std::vector<std::string> modifier_names(const std::vector<EffectModifier>& mods) {
  std::vector<std::string> out{"(intercept)"};
  for (const auto& m : mods) out.push_back(m.name);
  return out;
}

inline std::vector<ParameterSummary> psi_summaries(const NmaPosterior& post) {
  const auto names = post.network.psi_names(modifier_names(post.modifiers));
  std::vector<ParameterSummary> out;
  for (Eigen::Index c = 0; c < post.psi_draws.cols(); ++c)
    out.push_back(summarize_draws(names[static_cast<std::size_t>(c)], post.psi_draws.col(c),
                                  c < static_cast<Eigen::Index>(post.psi_diagnostics.size())
                                      ? std::optional(post.psi_diagnostics[static_cast<std::size_t>(c)])
                                      : std::nullopt));
  return out;
}

inline json network_json(const TreatmentNetwork& net) {
  json studies = json::array();
  for (const auto& s : net.studies()) {
    std::vector<std::string> labels;
    for (int a : s.arms) labels.push_back(net.treatments()[static_cast<std::size_t>(a)]);
    studies.push_back({{"id", s.study_id}, {"arms", labels}});
  }
  json edges = json::array();
  for (const auto& [e, k] : net.edges())
    edges.push_back({{"from", net.treatments()[static_cast<std::size_t>(e.first)]},
                     {"to", net.treatments()[static_cast<std::size_t>(e.second)]},
                     {"studies", k}});
  return {{"treatments", net.treatments()},
          {"reference", net.reference()},
          {"n_modifiers", net.n_modifiers()},
          {"studies", studies},
          {"edges", edges}};
}

inline TreatmentNetwork network_from_json(const json& j) {
  std::vector<std::pair<std::string, std::vector<std::string>>> studies;
  for (const auto& s : j.at("studies"))
    studies.emplace_back(s.at("id").get<std::string>(), s.at("arms").get<std::vector<std::string>>());
  return TreatmentNetwork::build(j.at("treatments").get<std::vector<std::string>>(), studies,
                                 j.at("n_modifiers").get<int>(), j.at("reference").get<std::string>());
}

inline json diagnostics_json(const ParameterDiagnostics& d) {
  return {{"rhat", to_json_value(d.rhat)}, {"ess", to_json_value(d.ess)}, {"zero_variance", d.zero_variance}};
}

inline ParameterDiagnostics diagnostics_from_json(const json& j) {
  ParameterDiagnostics d;
  d.rhat = number_from_json(j.at("rhat"));
  d.ess = number_from_json(j.at("ess"));
  d.zero_variance = j.value("zero_variance", false);
  return d;
}

/// Stage-two artifact with all psi (and tau) draws, so profiles can be
/// evaluated later without refitting.
inline json to_json(const NmaPosterior& p, const std::optional<json>& run_config = std::nullopt) {
  json mods = json::array();
  for (const auto& m : p.modifiers) mods.push_back(to_json(m));
  json summary = json::array();
  for (const auto& s : psi_summaries(p)) summary.push_back(to_json(s));
  json diags = json::array();
  for (const auto& d : p.psi_diagnostics) diags.push_back(diagnostics_json(d));
  json j{{"schema_version", kSchemaVersion},
         {"kind", "nma_posterior"},
         {"config", to_json(p.config)},
         {"network", network_json(p.network)},
         {"modifiers", mods},
         {"study_ids", p.study_ids},
         {"psi_names", p.network.psi_names(modifier_names(p.modifiers))},
         {"summary", summary},
         {"psi_diagnostics", diags},
         {"converged", p.converged},
         {"psi_draws", matrix_json(p.psi_draws)}};
  if (p.tau_draws.size()) {
    j["tau_summary"] = to_json(summarize_draws("tau", p.tau_draws, p.tau_diagnostics));
    j["tau_draws"] = vector_json(p.tau_draws);
    if (p.tau_diagnostics) j["tau_diagnostics"] = diagnostics_json(*p.tau_diagnostics);
  }
  if (p.analytic_mean.size()) {
    j["analytic_mean"] = vector_json(p.analytic_mean);
    j["analytic_cov"] = matrix_json(p.analytic_cov);
  }
  if (run_config) j["run_config"] = *run_config;
  return j;
}

inline NmaPosterior nma_posterior_from_json(const json& j) {
  require_kind(j, "nma_posterior");
  NmaPosterior p;
  p.config = nma_config_from_json(j.at("config"));
  p.network = network_from_json(j.at("network"));
  for (const auto& m : j.at("modifiers")) p.modifiers.push_back(effect_modifier_from_json(m));
  p.study_ids = j.value("study_ids", std::vector<std::string>{});
  p.psi_draws = matrix_from_json(j.at("psi_draws"));
  if (p.psi_draws.cols() != p.network.psi_size())
    throw SchemaError("psi_draws has " + std::to_string(p.psi_draws.cols()) + " columns, network implies " +
                      std::to_string(p.network.psi_size()));
  if (static_cast<int>(p.modifiers.size()) != p.network.n_modifiers())
    throw SchemaError("modifier list does not match the network's modifier count");
  if (j.contains("psi_diagnostics"))
    for (const auto& d : j["psi_diagnostics"]) p.psi_diagnostics.push_back(diagnostics_from_json(d));
  p.converged = j.value("converged", true);
  if (j.contains("tau_draws")) p.tau_draws = vector_from_json(j["tau_draws"]);
  if (j.contains("tau_diagnostics")) p.tau_diagnostics = diagnostics_from_json(j["tau_diagnostics"]);
  if (j.contains("analytic_mean")) {
    p.analytic_mean = vector_from_json(j["analytic_mean"]);
    p.analytic_cov = matrix_from_json(j.at("analytic_cov"));
  }
  return p;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

/// Forest-plot table: one row per psi coordinate (and tau when present).
inline void write_forest_csv(std::ostream& out, const NmaPosterior& p) {
  out << "parameter,mean,sd,q025,q50,q975,rhat,ess\n";
  auto row = [&](const ParameterSummary& s) {
    out << detail::csv_escape(s.name) << ',' << format_double(s.mean) << ',' << format_double(s.sd) << ','
        << format_double(s.q025) << ',' << format_double(s.q50) << ',' << format_double(s.q975) << ','
        << format_double(s.rhat) << ',' << format_double(s.ess) << '\n';
  };
  for (const auto& s : psi_summaries(p)) row(s);
  if (p.tau_draws.size()) row(summarize_draws("tau", p.tau_draws, p.tau_diagnostics));
}

// ---------------------------------------------------------------- simulation

inline json to_json(const DgmSpec& s) {
  return {{"name", s.name},
          {"n_per_study", s.n_per_study},
          {"q", s.q},
          {"tau", s.tau},
          {"study_shift", s.study_shift},
          {"reference_coef", vector_json(s.reference_coef)},
          {"psi", vector_json(s.psi)},
          {"treatment_coef", vector_json(s.treatment_coef)},
          {"missing_coef", vector_json(s.missing_coef)},
          {"noise_sd", s.noise_sd},
          {"uniform_covariates", s.uniform_covariates},
          {"omit_quadratic", s.omit_quadratic},
          {"misspecify_weights", s.misspecify_weights}};
}

/// A missingness intercept of null (or "-inf") switches missingness off.
inline DgmSpec dgm_from_json(const json& j, DgmSpec s) {
  check_keys(j, {"name", "n_per_study", "q", "tau", "study_shift", "reference_coef", "psi", "treatment_coef",
                 "missing_coef", "noise_sd", "uniform_covariates", "omit_quadratic", "misspecify_weights"},
             "dgm");
  s.name = get_or(j, "name", s.name);
  s.n_per_study = get_or(j, "n_per_study", s.n_per_study);
  s.q = get_or(j, "q", s.q);
  s.tau = get_or(j, "tau", s.tau);
  if (j.contains("study_shift")) s.study_shift = j["study_shift"].get<std::vector<double>>();
  if (j.contains("reference_coef")) s.reference_coef = vector_from_json(j["reference_coef"]);
  if (j.contains("psi")) s.psi = vector_from_json(j["psi"]);
  if (j.contains("treatment_coef")) s.treatment_coef = vector_from_json(j["treatment_coef"]);
  if (j.contains("missing_coef")) {
    json m = j["missing_coef"];
    if (m.is_array() && !m.empty() && (m[0].is_null() || (m[0].is_string() && m[0] == "-inf"))) {
      m[0] = 0.0;
      s.missing_coef = vector_from_json(m);
      s.missing_coef(0) = -std::numeric_limits<double>::infinity();
    } else {
      s.missing_coef = vector_from_json(m);
    }
  }
  s.noise_sd = get_or(j, "noise_sd", s.noise_sd);
  s.uniform_covariates = get_or(j, "uniform_covariates", s.uniform_covariates);
  s.omit_quadratic = get_or(j, "omit_quadratic", s.omit_quadratic);
  s.misspecify_weights = get_or(j, "misspecify_weights", s.misspecify_weights);
  s.validate();
  return s;
}

struct ScenarioFile {
  std::vector<Scenario> scenarios;
  json echo;
};

/// Scenario grid:
///   { "schema_version": 1, "seed": 1, "reps": 200, "threads": 0,
///     "dgms": { "B": { ...overrides of the built-in preset... } },
///     "scenarios": [ { "label": "...", "dgm": "B", "method": "bbdwols",
///                      "reference_model": "correct" | "incorrect",
///                      "weight_models": "correct" | "incorrect",
///                      "covariance": "full", "effects": "common",
///                      "sigma_tau": 0.51, "bb_iterations": 1999, "reps": 200,
///                      "nma": { ... } } ] }
inline ScenarioFile scenarios_from_json(const json& j) {
  check_keys(j, {"schema_version", "kind", "seed", "reps", "threads", "dgms", "scenarios"}, "scenario file");
  if (j.contains("schema_version") && j["schema_version"] != kSchemaVersion)
    throw SchemaError("unsupported scenario schema_version " + j["schema_version"].dump());
  const std::uint64_t seed = get_or<std::uint64_t>(j, "seed", 20240501);
  const int reps = get_or(j, "reps", 200);
  const unsigned threads = get_or(j, "threads", 0u);
  std::map<std::string, DgmSpec> dgms{{"A", DgmSpec::A()}, {"B", DgmSpec::B()}, {"C", DgmSpec::C()}};
  if (j.contains("dgms"))
    for (const auto& [name, dj] : j["dgms"].items()) {
      DgmSpec base = dgms.count(name) ? dgms[name] : DgmSpec::B();
      base.name = name;
      dgms[name] = dgm_from_json(dj, base);
    }
  ScenarioFile out;
  for (const auto& sj : j.at("scenarios")) {
    check_keys(sj, {"label", "dgm", "method", "reference_model", "weight_models", "covariance", "effects", "sigma_tau",
                    "bb_iterations", "reps", "seed", "nma"},
               "scenarios[]");
    Scenario s;
    const std::string dgm = sj.at("dgm").get<std::string>();
    if (!dgms.count(dgm)) throw SchemaError("scenario references unknown DGM '" + dgm + "'");
    s.dgm = dgms[dgm];
    s.method = stage_one_from_string(sj.value("method", std::string("bbdwols")));
    const std::string ref = sj.value("reference_model", std::string("correct"));
    if (ref != "correct" && ref != "incorrect") throw SchemaError("reference_model must be correct|incorrect");
    s.dgm.omit_quadratic = ref == "incorrect";
    const std::string wm = sj.value("weight_models", std::string("correct"));
    if (wm != "correct" && wm != "incorrect") throw SchemaError("weight_models must be correct|incorrect");
    s.dgm.misspecify_weights = wm == "incorrect";
    s.reps = sj.value("reps", reps);
    s.seed = sj.value("seed", seed);
    s.threads = threads;
    s.bb_iterations = sj.value("bb_iterations", BbConfig::default_iterations(2 * (s.dgm.q + 1)));
    if (sj.contains("nma")) s.nma = nma_config_from_json(sj["nma"]);
    if (sj.contains("covariance")) s.nma.covariance = covariance_from_string(sj["covariance"]);
    if (sj.contains("effects")) s.nma.effects = effects_from_string(sj["effects"]);
    if (sj.contains("sigma_tau")) s.nma.prior_tau_scale = sj["sigma_tau"].get<double>();
    s.label = sj.value("label", dgm + "/" + to_string(s.method) + "/" + ref + "/" + to_string(s.nma.covariance) + "/" +
                                    to_string(s.nma.effects));
    if (s.reps < 2) throw SchemaError("scenario '" + s.label + "' needs at least 2 replicates");
    out.scenarios.push_back(std::move(s));
  }
  out.echo = j;
  return out;
}

inline json measure_json(const Measure& m) { return {{"value", to_json_value(m.value)}, {"mcse", to_json_value(m.mcse)}}; }

inline json to_json(const ParameterPerformance& p) {
  return {{"name", p.name},
          {"truth", p.truth},
          {"bias", measure_json(p.bias)},
          {"pct_bias", measure_json(p.pct_bias)},
          {"emp_se", measure_json(p.emp_se)},
          {"coverage", measure_json(p.coverage)}};
}

inline json to_json(const PerfReport& r, const Scenario& s) {
  json params = json::array();
  for (const auto& p : r.parameters) params.push_back(to_json(p));
  json j{{"label", r.label},
         {"dgm", to_json(s.dgm)},
         {"method", to_string(s.method)},
         {"reps", r.reps},
         {"converged", r.converged},
         {"non_converged", r.non_converged},
         {"bb_iterations", s.bb_iterations},
         {"seed", s.seed},
         {"nma", to_json(s.nma)},
         {"parameters", params}};
  if (r.tau) j["tau"] = to_json(*r.tau);
  return j;
}

/// Long table: one row per scenario and parameter.
inline void write_perf_csv(std::ostream& out, const std::vector<PerfReport>& reports,
                           const std::vector<Scenario>& scenarios) {
  out << "scenario,dgm,stage_one,reference_model,covariance,effects,sigma_tau,parameter,truth,pct_bias,pct_bias_mcse,"
         "bias,bias_mcse,emp_se,emp_se_mcse,coverage,coverage_mcse,converged,non_converged\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const auto& s = scenarios[i];
    auto row = [&](const ParameterPerformance& p) {
      out << detail::csv_escape(r.label) << ',' << s.dgm.name << ',' << to_string(s.method) << ','
          << (s.dgm.omit_quadratic ? "incorrect" : "correct") << ',' << to_string(s.nma.covariance) << ','
          << to_string(s.nma.effects) << ','
          << (s.nma.effects == Effects::random ? format_double(s.nma.prior_tau_scale) : std::string()) << ','
          << detail::csv_escape(p.name) << ',' << format_double(p.truth) << ',' << format_double(p.pct_bias.value)
          << ',' << format_double(p.pct_bias.mcse) << ',' << format_double(p.bias.value) << ','
          << format_double(p.bias.mcse) << ',' << format_double(p.emp_se.value) << ','
          << format_double(p.emp_se.mcse) << ',' << format_double(p.coverage.value) << ','
          << format_double(p.coverage.mcse) << ',' << r.converged << ',' << r.non_converged << '\n';
    };
    for (const auto& p : r.parameters) row(p);
    if (r.tau) row(*r.tau);
  }
}

}  // namespace itrnma
