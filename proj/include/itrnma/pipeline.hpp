#pragma once

#include <optional>
#include <string>
#include <vector>

#include "itrnma/bbdwols.hpp"
#include "itrnma/io.hpp"
#include "itrnma/nma.hpp"
#include "itrnma/simlab.hpp"

namespace itrnma {

/// Result of running stage one on one study of a RunConfig.
struct StudyFit {
  BlipPosterior posterior;
  std::map<std::string, Eigen::Index> imputed;
};

inline StudyFit fit_study(const RunConfig& cfg, const std::string& study_id,
                          std::optional<StageOne> method = std::nullopt) {
  const StudySource& src = cfg.study(study_id);
  StudyDataset data = ingest_csv(src.path, cfg.ingest_spec(study_id));
  StudyFit out;
  if (cfg.impute) {
    auto imp = impute_simple(data);
    data = std::move(imp.data);
    out.imputed = std::move(imp.counts);
  }
  out.posterior = method.value_or(StageOne::bbdwols) == StageOne::qlearning ? run_qlearning(data, src.stage_one)
                                                                             : run_bbdwols(data, src.stage_one);
  return out;
}

/// Stage-one artifact: the posterior plus the resolved run config and
/// imputation counts.
inline json study_artifact(const StudyFit& fit, const RunConfig& cfg, bool include_draws = false) {
  json j = to_json(fit.posterior, include_draws);
  json imputed = json::object();
  for (const auto& [name, n] : fit.imputed) imputed[name] = n;
  j["imputed"] = imputed;
  j["run_config"] = to_json(cfg);
  return j;
}

/// Stage two on stage-one artifacts only.
inline NmaPosterior fit_network(const std::vector<BlipPosterior>& posts, const std::vector<std::string>& registry,
                                const std::optional<std::string>& reference, const NmaConfig& cfg) {
  const TreatmentNetwork net = network_for(posts, registry, reference);
  return fit_nma(posts, net, cfg);
}

/// Treatment registry implied by a set of posteriors when no config is given:
/// labels in order of first appearance.
inline std::vector<std::string> registry_from_posteriors(const std::vector<BlipPosterior>& posts) {
  std::vector<std::string> reg;
  for (const auto& p : posts)
    for (const auto& t : p.arm_treatments)
      if (std::find(reg.begin(), reg.end(), t) == reg.end()) reg.push_back(t);
  return reg;
}

}  // namespace itrnma
