#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "itrnma/error.hpp"

namespace itrnma {

/// Column of psi holding psi_{g1,q}. Treatments are 0-based with 0 the
/// meta-population reference, so g >= 1.
inline Eigen::Index psi_index(int g, int q, int n_modifiers) {
  return static_cast<Eigen::Index>(g - 1) * (n_modifiers + 1) + q;
}

/// Consistency mapping of one study. `arms` holds global treatment indices
/// (0 = meta-population reference) with the study reference first. Returns
/// the (G_i-1) x (G-1) matrix whose row k-1 expresses arm k against arm 1.
inline Eigen::MatrixXd build_U(const std::vector<int>& arms, int n_treatments) {
  if (arms.size() < 2) throw SchemaError("a study needs at least 2 arms");
  std::set<int> seen;
  for (int a : arms) {
    if (a < 0 || a >= n_treatments)
      throw SchemaError("arm maps to treatment index " + std::to_string(a) + " outside the registry");
    if (!seen.insert(a).second) throw SchemaError("duplicate treatment among study arms");
  }
  const auto rows = static_cast<Eigen::Index>(arms.size()) - 1;
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(rows, n_treatments - 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const int t = arms[static_cast<std::size_t>(r) + 1];
    if (t != 0) u(r, t - 1) = 1.0;
  }
  if (arms.front() != 0) u.col(arms.front() - 1).setConstant(-1.0);
  return u;
}

/// V = U kron I_{Q+1}.
inline Eigen::MatrixXd build_V(const Eigen::MatrixXd& u, int n_modifiers) {
  const Eigen::Index b = n_modifiers + 1;
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(u.rows() * b, u.cols() * b);
  for (Eigen::Index r = 0; r < u.rows(); ++r)
    for (Eigen::Index c = 0; c < u.cols(); ++c)
      if (u(r, c) != 0.0) v.block(r * b, c * b, b, b).diagonal().setConstant(u(r, c));
  return v;
}

/// Per-draw psi_{gg',q} = psi_{g1,q} - psi_{g'1,q}; psi_{11,q} is zero.
inline Eigen::VectorXd consistency_contrast(const Eigen::MatrixXd& psi_draws, int g, int g_prime, int q,
                                            int n_modifiers) {
  const int n_treatments = static_cast<int>(psi_draws.cols() / (n_modifiers + 1)) + 1;
  if (g < 0 || g >= n_treatments || g_prime < 0 || g_prime >= n_treatments)
    throw ProfileError("treatment index out of range");
  if (q < 0 || q > n_modifiers) throw ProfileError("coefficient index out of range");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(psi_draws.rows());
  if (g == g_prime) return out;
  if (g != 0) out += psi_draws.col(psi_index(g, q, n_modifiers));
  if (g_prime != 0) out -= psi_draws.col(psi_index(g_prime, q, n_modifiers));
  return out;
}

struct StudyArms {
  std::string study_id;
  /// Global treatment indices, study reference first.
  std::vector<int> arms;
};

/// Global treatment registry plus the per-study arm mapping.
class TreatmentNetwork {
 public:
  TreatmentNetwork() = default;

  /// `registry` lists every treatment label; `studies` gives each study's arm
  /// labels (reference arm first). The meta-population reference defaults to
  /// the treatment present in the most studies (registry order breaks ties)
  /// and is moved to index 0.
  static TreatmentNetwork build(const std::vector<std::string>& registry,
                                const std::vector<std::pair<std::string, std::vector<std::string>>>& studies,
                                int n_modifiers, std::optional<std::string> reference = std::nullopt) {
    if (registry.size() < 2) throw SchemaError("the network needs at least 2 treatments");
    std::set<std::string> uniq(registry.begin(), registry.end());
    if (uniq.size() != registry.size()) throw SchemaError("duplicate treatment label in registry");
    if (n_modifiers < 0) throw SchemaError("negative effect-modifier count");

    std::string ref;
    if (reference) {
      if (!uniq.count(*reference)) throw SchemaError("reference treatment '" + *reference + "' is not registered");
      ref = *reference;
    } else {
      std::map<std::string, int> count;
      for (const auto& [id, arms] : studies)
        for (const auto& a : arms) ++count[a];
      int best = -1;
      for (const auto& t : registry)
        if (count[t] > best) best = count[t], ref = t;
    }

    TreatmentNetwork net;
    net.q_ = n_modifiers;
    net.treatments_.push_back(ref);
    for (const auto& t : registry)
      if (t != ref) net.treatments_.push_back(t);
    for (const auto& [id, labels] : studies) {
      StudyArms sa{id, {}};
      for (const auto& l : labels) sa.arms.push_back(net.index_of(l));
      build_U(sa.arms, net.size());  // validates the mapping
      net.studies_.push_back(std::move(sa));
    }
    return net;
  }

  const std::vector<std::string>& treatments() const { return treatments_; }
  const std::vector<StudyArms>& studies() const { return studies_; }
  int size() const { return static_cast<int>(treatments_.size()); }
  int n_modifiers() const { return q_; }
  Eigen::Index psi_size() const { return static_cast<Eigen::Index>(size() - 1) * (q_ + 1); }
  const std::string& reference() const { return treatments_.front(); }

  int index_of(const std::string& label) const {
    for (std::size_t i = 0; i < treatments_.size(); ++i)
      if (treatments_[i] == label) return static_cast<int>(i);
    throw SchemaError("treatment '" + label + "' is not registered");
  }

  Eigen::MatrixXd U(std::size_t study) const { return build_U(studies_.at(study).arms, size()); }
  Eigen::MatrixXd V(std::size_t study) const { return build_V(U(study), q_); }

  /// Treatments not reachable from the reference through shared-study edges.
  std::vector<std::string> unreachable() const {
    const int g = size();
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(g));
    for (const auto& s : studies_)
      for (int a : s.arms)
        for (int b : s.arms)
          if (a != b) adj[static_cast<std::size_t>(a)].push_back(b);
    std::vector<bool> seen(static_cast<std::size_t>(g), false);
    std::queue<int> todo;
    todo.push(0);
    seen[0] = true;
    while (!todo.empty()) {
      const int cur = todo.front();
      todo.pop();
      for (int nb : adj[static_cast<std::size_t>(cur)])
        if (!seen[static_cast<std::size_t>(nb)]) seen[static_cast<std::size_t>(nb)] = true, todo.push(nb);
    }
    std::vector<std::string> out;
    for (int t = 0; t < g; ++t)
      if (!seen[static_cast<std::size_t>(t)]) out.push_back(treatments_[static_cast<std::size_t>(t)]);
    return out;
  }

  bool connected() const { return unreachable().empty(); }

  void require_connected() const {
    const auto missing = unreachable();
    if (missing.empty()) return;
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw IdentifiabilityError("network is disconnected; unreachable from '" + reference() + "': " + names);
  }

  /// Direct comparisons with the number of studies making each one.
  std::map<std::pair<int, int>, int> edges() const {
    std::map<std::pair<int, int>, int> out;
    for (const auto& s : studies_)
      for (std::size_t i = 0; i < s.arms.size(); ++i)
        for (std::size_t j = i + 1; j < s.arms.size(); ++j)
          ++out[{std::min(s.arms[i], s.arms[j]), std::max(s.arms[i], s.arms[j])}];
    return out;
  }

  /// "psi[B-A,q]" style coordinate names in psi order.
  std::vector<std::string> psi_names(const std::vector<std::string>& modifier_names) const {
    std::vector<std::string> out;
    for (int g = 1; g < size(); ++g)
      for (int q = 0; q <= q_; ++q)
        out.push_back(treatments_[static_cast<std::size_t>(g)] + ":" +
                      (q < static_cast<int>(modifier_names.size()) ? modifier_names[static_cast<std::size_t>(q)]
                                                                   : std::to_string(q)));
    return out;
  }

 private:
  std::vector<std::string> treatments_;
  std::vector<StudyArms> studies_;
  int q_ = 0;
};

}  // namespace itrnma
