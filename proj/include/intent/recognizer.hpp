#pragma once

// Intention inference over landmarks and KL-divergence K-means grouping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include <json.hpp>

#include "intent/error.hpp"
#include "intent/lbim.hpp"
#include "intent/lcs.hpp"

namespace intent {

inline constexpr double kKlSmoothing = 1e-9;
inline constexpr int kDefaultMaxIterations = 100;

struct ObservedActionSequence {
  AgentId agent = 0;
  ActionSequence actions;

  std::size_t horizon() const { return actions.size(); }
};

struct LandmarkDistribution {
  AgentId agent = 0;
  std::vector<double> probs;  // aligned with LandmarkSet order

  std::size_t dimension() const { return probs.size(); }
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
};

struct ClusterResult {
  std::vector<std::vector<AgentId>> groups;     // one per cluster, ids ascending
  std::vector<LandmarkDistribution> centroids;  // centroid j has agent = j
  std::vector<std::size_t> assignment;          // cluster index per input distribution
  int iterations = 0;
  std::vector<double> objective_trace;  // sum of D(centroid || member) after each assignment step
};

// ---------------------------------------------------------------------------
// Similarity and distributions

/// |lcs(obs, caq)| / |caq|; an empty caq scores 0.
inline double similarity(const ActionSequence& obs, const ActionSequence& caq) {
  if (caq.empty()) return 0.0;
  return static_cast<double>(lcs_length(obs, caq)) / static_cast<double>(caq.size());
}

inline double similarity(const ObservedActionSequence& obs, const ActionSequence& caq) {
  return similarity(obs.actions, caq);
}

/// Best similarity against any of several reference sequences.
inline double best_similarity(const ActionSequence& obs, const std::vector<ActionSequence>& refs) {
  double best = 0.0;
  for (const auto& r : refs) best = std::max(best, similarity(obs, r));
  return best;
}

/// Normalises non-negative likelihoods; all-zero input gives the uniform distribution.
inline LandmarkDistribution normalize_similarities(AgentId agent, std::vector<double> sims) {
  if (sims.empty()) throw Error(ErrorCode::InvalidArgument, "no landmarks");
  double total = 0.0;
  for (double s : sims) {
    if (!(s >= 0.0)) throw Error(ErrorCode::InvalidArgument, "similarities must be non-negative");
    total += s;
  }
  if (total <= 0.0) {
    std::fill(sims.begin(), sims.end(), 1.0 / static_cast<double>(sims.size()));
  } else {
    for (double& s : sims) s /= total;
  }
  return {agent, std::move(sims)};
}

/// Refined-model distribution: entry m is Sim(obs, CAQ of landmark m),
/// normalised. Landmarks without a CAQ score 0.
inline LandmarkDistribution landmark_distribution(const ObservedActionSequence& obs, const CaqMap& caq,
                                                  const LandmarkSet& landmarks) {
  std::vector<double> sims;
  sims.reserve(landmarks.size());
  for (const auto& l : landmarks.landmarks())
    sims.push_back(caq.contains(l.id) ? similarity(obs.actions, caq.at(l.id)) : 0.0);
  return normalize_similarities(obs.agent, std::move(sims));
}

/// Unrefined-model distribution: entry m is the best Sim over every raw
/// action prefix reaching landmark m.
inline LandmarkDistribution landmark_distribution(const ObservedActionSequence& obs,
                                                  const std::map<LandmarkId, std::vector<ActionSequence>>& prefixes,
                                                  const LandmarkSet& landmarks) {
  std::vector<double> sims;
  sims.reserve(landmarks.size());
  for (const auto& l : landmarks.landmarks()) {
    auto it = prefixes.find(l.id);
    sims.push_back(it == prefixes.end() ? 0.0 : best_similarity(obs.actions, it->second));
  }
  return normalize_similarities(obs.agent, std::move(sims));
}

// ---------------------------------------------------------------------------
// KL divergence

/// Natural-log D(p || q) after adding kKlSmoothing to every entry of both
/// arguments and renormalising.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw Error(ErrorCode::DimensionMismatch, "distributions differ in dimension");
  const double eps = kKlSmoothing;
  double zp = 0.0, zq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    zp += p[i] + eps;
    zq += q[i] + eps;
  }
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = (p[i] + eps) / zp;
    const double qi = (q[i] + eps) / zq;
    d += pi * std::log(pi / qi);
  }
  return std::max(d, 0.0);
}

inline double kl_divergence(const LandmarkDistribution& p, const LandmarkDistribution& q) {
  return kl_divergence(p.probs, q.probs);
}

// ---------------------------------------------------------------------------
// Clustering

namespace detail {

inline std::vector<double> mean_of(const std::vector<LandmarkDistribution>& dists, const std::vector<std::size_t>& assign,
                                   std::size_t cluster, std::size_t dim) {
  std::vector<double> m(dim, 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    if (assign[i] != cluster) continue;
    ++n;
    for (std::size_t d = 0; d < dim; ++d) m[d] += dists[i].probs[d];
  }
  if (n > 0)
    for (double& v : m) v /= static_cast<double>(n);
  return m;
}

inline std::vector<std::size_t> assign_all(const std::vector<LandmarkDistribution>& dists,
                                           const std::vector<std::vector<double>>& centroids) {
  std::vector<std::size_t> out(dists.size(), 0);
  for (std::size_t i = 0; i < dists.size(); ++i) {
    double best = kl_divergence(centroids[0], dists[i].probs);
    for (std::size_t j = 1; j < centroids.size(); ++j) {
      const double d = kl_divergence(centroids[j], dists[i].probs);
      if (d < best) {
        best = d;
        out[i] = j;
      }
    }
  }
  return out;
}

// Give every empty cluster the member farthest from its own centroid, taken
// from clusters that can spare one.
inline void repair_empty(const std::vector<LandmarkDistribution>& dists, std::vector<std::size_t>& assign,
                         std::vector<std::vector<double>>& centroids) {
  const std::size_t k = centroids.size();
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<std::size_t> sizes(k, 0);
    for (auto a : assign) ++sizes[a];
    if (sizes[j] > 0) continue;
    std::size_t pick = dists.size();
    double far = -1.0;
    for (std::size_t i = 0; i < dists.size(); ++i) {
      if (sizes[assign[i]] < 2) continue;
      const double d = kl_divergence(centroids[assign[i]], dists[i].probs);
      if (d > far) {
        far = d;
        pick = i;
      }
    }
    if (pick == dists.size()) continue;  // cannot happen while K <= N
    assign[pick] = j;
    centroids[j] = dists[pick].probs;
  }
}

inline double objective(const std::vector<LandmarkDistribution>& dists, const std::vector<std::size_t>& assign,
                        const std::vector<std::vector<double>>& centroids) {
  double total = 0.0;
  for (std::size_t i = 0; i < dists.size(); ++i) total += kl_divergence(centroids[assign[i]], dists[i].probs);
  return total;
}

}  // namespace detail

namespace detail {

inline ClusterResult cluster_once(const std::vector<LandmarkDistribution>& dists, std::size_t kk, std::uint64_t seed,
                                  int max_iters) {
  const std::size_t n = dists.size();
  const std::size_t dim = dists.front().dimension();

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> centres{std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)};
  std::vector<char> taken(n, 0);
  taken[centres[0]] = 1;
  while (centres.size() < kk) {
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double best = kl_divergence(dists[centres[0]].probs, dists[i].probs);
      for (std::size_t c = 1; c < centres.size(); ++c)
        best = std::min(best, kl_divergence(dists[centres[c]].probs, dists[i].probs));
      w[i] = best;
    }
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (total <= 0.0)
      for (std::size_t i = 0; i < n; ++i) w[i] = taken[i] ? 0.0 : 1.0;
    const std::size_t pick = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
    taken[pick] = 1;
    centres.push_back(pick);
  }

  std::vector<std::vector<double>> centroids;
  for (auto c : centres) centroids.push_back(dists[c].probs);

  ClusterResult result;
  auto assign = detail::assign_all(dists, centroids);
  detail::repair_empty(dists, assign, centroids);
  result.objective_trace.push_back(detail::objective(dists, assign, centroids));
  for (int it = 0; it < max_iters; ++it) {
    auto moved = centroids;
    for (std::size_t j = 0; j < kk; ++j) moved[j] = detail::mean_of(dists, assign, j, dim);
    auto next = detail::assign_all(dists, moved);
    detail::repair_empty(dists, next, moved);
    const double j_next = detail::objective(dists, next, moved);
    // Mean centres do not minimise the centre-first divergence, so an update
    // can make things worse; stop there instead.
    if (j_next > result.objective_trace.back()) break;
    ++result.iterations;
    result.objective_trace.push_back(j_next);
    centroids = std::move(moved);
    const bool same = next == assign;
    assign = std::move(next);
    if (same) break;
  }

  result.assignment = assign;
  result.groups.assign(kk, {});
  for (std::size_t i = 0; i < n; ++i) result.groups[assign[i]].push_back(dists[i].agent);
  for (auto& g : result.groups) std::sort(g.begin(), g.end());
  for (std::size_t j = 0; j < kk; ++j)
    result.centroids.push_back({static_cast<AgentId>(j), detail::mean_of(dists, assign, j, dim)});
  return result;
}

}  // namespace detail

inline constexpr int kClusterRestarts = 4;

/// K-means over landmark distributions with D(centroid || agent) as the
/// distance and arithmetic-mean centroids. Initial centres are K distinct
/// agents drawn at random, each next one with probability proportional to its
/// divergence from the nearest centre already chosen. Stops when assignments
/// repeat, when an update would raise the objective, or after `max_iters`
/// updates.
/// The lowest final objective over kClusterRestarts seedings is kept.
inline ClusterResult cluster(const std::vector<LandmarkDistribution>& dists, int k, std::uint64_t seed,
                             int max_iters = kDefaultMaxIterations) {
  const std::size_t n = dists.size();
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw Error(ErrorCode::InvalidK, "K=" + std::to_string(k) + " with " + std::to_string(n) + " agents");
  const std::size_t dim = dists.front().dimension();
  for (const auto& d : dists)
    if (d.dimension() != dim) throw Error(ErrorCode::DimensionMismatch, "distributions differ in dimension");
  std::mt19937_64 seeds(seed);
  ClusterResult best;
  for (int r = 0; r < kClusterRestarts; ++r) {
    auto run = detail::cluster_once(dists, static_cast<std::size_t>(k), seeds(), max_iters);
    if (r == 0 || run.objective_trace.back() < best.objective_trace.back()) best = std::move(run);
  }
  return best;
}

/// Number of distinct landmarks that are some agent's most probable one.
inline int choose_k(const std::vector<LandmarkDistribution>& dists) {
  if (dists.empty()) throw Error(ErrorCode::InvalidArgument, "no distributions");
  std::set<std::size_t> modes;
  for (const auto& d : dists) modes.insert(d.argmax());
  return static_cast<int>(modes.size());
}

/// Cluster purity against ground-truth goals.
inline double recognition_accuracy(const ClusterResult& result, const std::map<AgentId, int>& truth) {
  std::size_t total = 0, majority = 0;
  for (const auto& group : result.groups) {
    std::map<int, std::size_t> counts;
    for (AgentId a : group) {
      auto it = truth.find(a);
      if (it == truth.end()) throw Error(ErrorCode::MissingTruthLabel, "agent " + std::to_string(a));
      ++counts[it->second];
    }
    std::size_t best = 0;
    for (const auto& [g, c] : counts) best = std::max(best, c);
    majority += best;
    total += group.size();
  }
  if (total == 0) throw Error(ErrorCode::EmptyInput, "no clustered agents");
  return static_cast<double>(majority) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// JSON rows

inline nlohmann::json distribution_rows(const std::vector<LandmarkDistribution>& dists, const ClusterResult& result) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < dists.size(); ++i)
    rows.push_back({{"agent", dists[i].agent}, {"probs", dists[i].probs}, {"group", result.assignment.at(i)}});
  return rows;
}

inline void to_json(nlohmann::json& j, const ClusterResult& r) {
  nlohmann::json centroids = nlohmann::json::array();
  for (const auto& c : r.centroids) centroids.push_back(c.probs);
  j = {{"groups", r.groups}, {"centroids", centroids}, {"iterations", r.iterations},
       {"objective_trace", r.objective_trace}};
}

}  // namespace intent
