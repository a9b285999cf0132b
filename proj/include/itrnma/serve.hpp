#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "itrnma/error.hpp"
#include "itrnma/io.hpp"
#include "itrnma/netmap.hpp"
#include "itrnma/nma.hpp"

// last: httplib pulls in <resolv.h>, whose _res macro breaks Eigen headers
#include <httplib.h>

namespace itrnma {

/// Density payloads carry at most this many draws.
inline constexpr Eigen::Index kMaxPayloadDraws = 2000;

/// Immutable view of a loaded posterior plus the precomputed read-only bodies.
struct ServeSnapshot {
  NmaPosterior posterior;
  json model;
  json summary;
};

inline json model_json(const NmaPosterior& p, const std::optional<json>& run_config = std::nullopt) {
  json mods = json::array();
  for (const auto& m : p.modifiers) mods.push_back(to_json(m));
  json j{{"network", network_json(p.network)},
         {"modifiers", mods},
         {"effects", to_string(p.config.effects)},
         {"covariance", to_string(p.config.covariance)},
         {"draws", p.draws()},
         {"converged", p.converged},
         {"config", to_json(p.config)}};
  if (run_config) j["run_config"] = *run_config;
  return j;
}

inline json summary_json(const NmaPosterior& p) {
  json params = json::array();
  for (const auto& s : psi_summaries(p)) params.push_back(to_json(s));
  json j{{"parameters", params}, {"converged", p.converged}};
  if (p.tau_draws.size()) j["tau"] = to_json(summarize_draws("tau", p.tau_draws, p.tau_diagnostics));
  return j;
}

inline std::shared_ptr<const ServeSnapshot> make_snapshot(NmaPosterior post,
                                                          const std::optional<json>& run_config = std::nullopt) {
  auto snap = std::make_shared<ServeSnapshot>();
  snap->model = model_json(post, run_config);
  snap->summary = summary_json(post);
  snap->posterior = std::move(post);
  return snap;
}

/// Holds the current snapshot; readers never block and a reload replaces the
/// whole snapshot at once.
class ModelStore {
 public:
  std::shared_ptr<const ServeSnapshot> get() const { return std::atomic_load(&snapshot_); }
  void set(std::shared_ptr<const ServeSnapshot> s) { std::atomic_store(&snapshot_, std::move(s)); }
  void load(NmaPosterior post, const std::optional<json>& run_config = std::nullopt) {
    set(make_snapshot(std::move(post), run_config));
  }

 private:
  std::shared_ptr<const ServeSnapshot> snapshot_;
};

struct ApiResponse {
  int status = 200;
  json body;
};

namespace detail {

inline ApiResponse api_error(int status, const std::string& msg) { return {status, {{"error", msg}}}; }

inline std::optional<json> parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

/// Deterministic thinning: every ceil(S / max)-th draw starting at 0.
inline std::vector<Eigen::Index> thin_indices(Eigen::Index s, Eigen::Index max_draws) {
  const Eigen::Index stride = std::max<Eigen::Index>(1, (s + max_draws - 1) / max_draws);
  std::vector<Eigen::Index> out;
  for (Eigen::Index r = 0; r < s; r += stride) out.push_back(r);
  return out;
}

/// Profile vector in modifier order from {"covariates": {name: value}} or
/// {"covariates": [values...]}.
inline Eigen::VectorXd profile_from_json(const json& body, const std::vector<EffectModifier>& mods) {
  if (!body.is_object() || !body.contains("covariates")) throw ProfileError("body must hold a 'covariates' field");
  const json& c = body["covariates"];
  Eigen::VectorXd x(static_cast<Eigen::Index>(mods.size()));
  if (c.is_array()) {
    if (c.size() != mods.size())
      throw ProfileError("expected " + std::to_string(mods.size()) + " covariate values, got " +
                         std::to_string(c.size()));
    for (std::size_t i = 0; i < mods.size(); ++i) {
      if (!c[i].is_number()) throw ProfileError("covariate " + std::to_string(i) + " is not a number");
      x(static_cast<Eigen::Index>(i)) = c[i].get<double>();
    }
  } else if (c.is_object()) {
    for (const auto& [k, v] : c.items())
      if (std::none_of(mods.begin(), mods.end(), [&](const EffectModifier& m) { return m.name == k; }))
        throw ProfileError("unknown covariate '" + k + "'");
    for (std::size_t i = 0; i < mods.size(); ++i) {
      if (!c.contains(mods[i].name)) throw ProfileError("missing covariate '" + mods[i].name + "'");
      const json& v = c[mods[i].name];
      if (v.is_boolean()) x(static_cast<Eigen::Index>(i)) = v.get<bool>() ? 1.0 : 0.0;
      else if (v.is_number()) x(static_cast<Eigen::Index>(i)) = v.get<double>();
      else throw ProfileError("covariate '" + mods[i].name + "' is not a number");
    }
  } else {
    throw ProfileError("'covariates' must be an object or an array");
  }
  for (std::size_t i = 0; i < mods.size(); ++i) {
    const double v = x(static_cast<Eigen::Index>(i));
    if (!std::isfinite(v)) throw ProfileError("covariate '" + mods[i].name + "' is not finite");
    if (mods[i].kind == "binary" && v != 0.0 && v != 1.0)
      throw ProfileError("binary covariate '" + mods[i].name + "' must be 0 or 1");
  }
  return x;
}

inline int treatment_from_json(const json& v, const TreatmentNetwork& net, const char* field) {
  if (v.is_string()) {
    const auto& t = net.treatments();
    auto it = std::find(t.begin(), t.end(), v.get<std::string>());
    if (it == t.end()) throw ProfileError(std::string("unknown treatment in '") + field + "'");
    return static_cast<int>(it - t.begin());
  }
  throw ProfileError(std::string("'") + field + "' must be a treatment label");
}

}  // namespace detail

/// Per-treatment effect summaries, thinned draws and optimal-treatment
/// probabilities for one covariate profile.
inline json profile_answer(const NmaPosterior& post, const Eigen::VectorXd& x) {
  const ProfileEffects pe = profile_effects(post, x);
  const Eigen::Index s = pe.effects.rows();
  const auto keep = detail::thin_indices(s, kMaxPayloadDraws);
  std::vector<double> freq(static_cast<std::size_t>(post.network.size()), 0.0);
  Eigen::Index ties = 0;
  for (Eigen::Index r = 0; r < s; ++r) {
    freq[static_cast<std::size_t>(pe.optimal[static_cast<std::size_t>(r)])] += 1.0;
    ties += pe.tie[static_cast<std::size_t>(r)] ? 1 : 0;
  }
  json treatments = json::array();
  int best = 0;
  for (int g = 0; g < post.network.size(); ++g) {
    const auto sum = summarize_draws(post.network.treatments()[static_cast<std::size_t>(g)], pe.effects.col(g));
    json samples = json::array();
    for (Eigen::Index r : keep) samples.push_back(pe.effects(r, g));
    const double prob = s ? freq[static_cast<std::size_t>(g)] / static_cast<double>(s) : 0.0;
    if (freq[static_cast<std::size_t>(g)] > freq[static_cast<std::size_t>(best)]) best = g;
    treatments.push_back({{"treatment", sum.name},
                          {"is_reference", g == 0},
                          {"mean", sum.mean},
                          {"sd", sum.sd},
                          {"q025", sum.q025},
                          {"q50", sum.q50},
                          {"q975", sum.q975},
                          {"prob_optimal", prob},
                          {"samples", samples}});
  }
  json cov = json::object();
  bool extrapolated = false;
  for (std::size_t i = 0; i < post.modifiers.size(); ++i) {
    const double v = x(static_cast<Eigen::Index>(i));
    cov[post.modifiers[i].name] = v;
    extrapolated = extrapolated || v < post.modifiers[i].min || v > post.modifiers[i].max;
  }
  return {{"covariates", cov},
          {"treatments", treatments},
          {"optimal", post.network.treatments()[static_cast<std::size_t>(best)]},
          {"tie", ties > 0},
          {"tie_draws", ties},
          {"draws", s},
          {"samples_stride", keep.size() > 1 ? keep[1] - keep[0] : 1},
          {"extrapolated", extrapolated}};
}

inline ApiResponse handle_health(const ModelStore& store) {
  return {200, {{"status", "ok"}, {"model_loaded", store.get() != nullptr}}};
}

inline ApiResponse handle_model(const ModelStore& store) {
  const auto snap = store.get();
  if (!snap) return detail::api_error(503, "no model loaded");
  return {200, snap->model};
}

inline ApiResponse handle_summary(const ModelStore& store) {
  const auto snap = store.get();
  if (!snap) return detail::api_error(503, "no model loaded");
  return {200, snap->summary};
}

inline ApiResponse handle_profile(const ModelStore& store, const std::string& body) {
  const auto snap = store.get();
  if (!snap) return detail::api_error(503, "no model loaded");
  const auto parsed = detail::parse_body(body);
  if (!parsed) return detail::api_error(422, "body is not valid JSON");
  try {
    const Eigen::VectorXd x = detail::profile_from_json(*parsed, snap->posterior.modifiers);
    return {200, profile_answer(snap->posterior, x)};
  } catch (const Error& e) {
    return detail::api_error(422, e.what());
  }
}

/// Body {"g": label, "g_prime": label, "q": index or modifier name}; returns
/// the posterior of psi_{g g', q} = psi_{g1,q} - psi_{g'1,q}.
inline ApiResponse handle_contrast(const ModelStore& store, const std::string& body) {
  const auto snap = store.get();
  if (!snap) return detail::api_error(503, "no model loaded");
  const auto parsed = detail::parse_body(body);
  if (!parsed || !parsed->is_object()) return detail::api_error(422, "body must be a JSON object");
  const auto& post = snap->posterior;
  try {
    const json& b = *parsed;
    if (!b.contains("g") || !b.contains("g_prime")) throw ProfileError("fields 'g' and 'g_prime' are required");
    const int g = detail::treatment_from_json(b["g"], post.network, "g");
    const int gp = detail::treatment_from_json(b["g_prime"], post.network, "g_prime");
    int q = 0;
    if (b.contains("q")) {
      const json& qj = b["q"];
      if (qj.is_number_integer()) {
        q = qj.get<int>();
      } else if (qj.is_string()) {
        const auto names = modifier_names(post.modifiers);
        auto it = std::find(names.begin(), names.end(), qj.get<std::string>());
        if (it == names.end()) throw ProfileError("unknown coefficient '" + qj.get<std::string>() + "'");
        q = static_cast<int>(it - names.begin());
      } else {
        throw ProfileError("'q' must be an integer or a modifier name");
      }
    }
    const Eigen::VectorXd d = consistency_contrast(post.psi_draws, g, gp, q, post.q());
    const auto sum = summarize_draws(modifier_names(post.modifiers).at(static_cast<std::size_t>(q)), d);
    const double pos = d.size() ? static_cast<double>((d.array() > 0.0).count()) / static_cast<double>(d.size()) : 0.0;
    return {200,
            {{"g", post.network.treatments()[static_cast<std::size_t>(g)]},
             {"g_prime", post.network.treatments()[static_cast<std::size_t>(gp)]},
             {"q", q},
             {"coefficient", sum.name},
             {"mean", sum.mean},
             {"sd", sum.sd},
             {"q025", sum.q025},
             {"q50", sum.q50},
             {"q975", sum.q975},
             {"prob_positive", pos},
             {"excludes_zero", sum.q025 > 0.0 || sum.q975 < 0.0}}};
  } catch (const Error& e) {
    return detail::api_error(422, e.what());
  }
}

/// Registers every endpoint on `server`. CORS is open to any origin.
inline void install_routes(httplib::Server& server, const ModelStore& store) {
  auto reply = [](httplib::Response& res, const ApiResponse& api) {
    res.status = api.status;
    res.set_content(api.body.dump(), "application/json");
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/health", [&store, reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_health(store)); });
  server.Get("/model", [&store, reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_model(store)); });
  server.Get("/summary", [&store, reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_summary(store)); });
  server.Post("/profile", [&store, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_profile(store, req.body));
  });
  server.Post("/contrast", [&store, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_contrast(store, req.body));
  });
}

}  // namespace itrnma
