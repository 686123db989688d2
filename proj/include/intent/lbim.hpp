#pragma once

// Landmark-based intention models.
//
// build_lbim keeps only the initial state, landmark hits and terminal
// outcomes of a behaviour tree (the skeleton) plus the raw action segments
// between consecutive skeleton nodes. build_rlbim additionally condenses,
// per landmark, every action prefix that reaches it into one longest common
// action sequence (CAQ) and fills each skeleton edge with the common
// sequence of its segments.
//
// Model size: see skeleton_size. The trie over raw segments gives the Lbim
// size, the trie over the filled common sequences the RLbim size.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "intent/error.hpp"
#include "intent/lcs.hpp"
#include "intent/plan_model.hpp"
#include "intent/world.hpp"

namespace intent {

using LandmarkId = int;
using ActionSequence = std::vector<Action>;

struct Landmark {
  LandmarkId id = 0;
  Position cell;
};

/// Ordered landmarks; a state matches a landmark when the agent stands on its cell.
class LandmarkSet {
 public:
  LandmarkSet() = default;

  explicit LandmarkSet(std::vector<Landmark> landmarks) : landmarks_(std::move(landmarks)) {
    std::set<LandmarkId> ids;
    for (std::size_t i = 0; i < landmarks_.size(); ++i) {
      if (!ids.insert(landmarks_[i].id).second)
        throw Error(ErrorCode::InvalidArgument, "duplicate landmark id " + std::to_string(landmarks_[i].id));
      if (!by_cell_.emplace(landmarks_[i].cell, i).second)
        throw Error(ErrorCode::InvalidArgument, "two landmarks share a cell");
    }
  }

  static LandmarkSet from_cells(const std::vector<Position>& cells) {
    std::vector<Landmark> out;
    for (std::size_t i = 0; i < cells.size(); ++i) out.push_back({static_cast<LandmarkId>(i), cells[i]});
    return LandmarkSet(std::move(out));
  }

  std::size_t size() const { return landmarks_.size(); }
  bool empty() const { return landmarks_.empty(); }
  const Landmark& operator[](std::size_t i) const { return landmarks_[i]; }
  const std::vector<Landmark>& landmarks() const { return landmarks_; }

  std::optional<std::size_t> index_of(LandmarkId id) const {
    for (std::size_t i = 0; i < landmarks_.size(); ++i)
      if (landmarks_[i].id == id) return i;
    return std::nullopt;
  }

  std::optional<LandmarkId> match(const StateId& s) const {
    auto it = by_cell_.find(s.position());
    if (it == by_cell_.end()) return std::nullopt;
    return landmarks_[it->second].id;
  }

 private:
  std::vector<Landmark> landmarks_;
  std::map<Position, std::size_t> by_cell_;
};

// ---------------------------------------------------------------------------
// Skeleton

struct SkeletonNode {
  enum class Kind { Root, Landmark, Leaf };
  Kind kind = Kind::Root;
  std::optional<LandmarkId> landmark;  // set on Landmark nodes, and on Root/Leaf nodes that sit on one
  std::optional<GoalOutcome> outcome;  // Leaf only
  int parent = -1;
  std::vector<int> children;
};

inline std::string_view to_string(SkeletonNode::Kind k) {
  switch (k) {
    case SkeletonNode::Kind::Root: return "root";
    case SkeletonNode::Kind::Landmark: return "landmark";
    case SkeletonNode::Kind::Leaf: return "leaf";
  }
  return "?";
}

class Skeleton {
 public:
  Skeleton() { nodes_.push_back(SkeletonNode{}); }

  const std::vector<SkeletonNode>& nodes() const { return nodes_; }
  const SkeletonNode& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return nodes_.size(); }

  /// Label chains from the root to each leaf, e.g. {"s0", "L1", "L3", "g1"}.
  std::vector<std::vector<std::string>> label_paths() const {
    std::vector<std::vector<std::string>> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].kind != SkeletonNode::Kind::Leaf) continue;
      std::vector<std::string> chain;
      for (int n = static_cast<int>(i); n >= 0; n = nodes_[static_cast<std::size_t>(n)].parent) chain.push_back(label(n));
      std::reverse(chain.begin(), chain.end());
      out.push_back(std::move(chain));
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::string label(int i) const {
    const auto& n = node(i);
    switch (n.kind) {
      case SkeletonNode::Kind::Root: return "s0";
      case SkeletonNode::Kind::Landmark: return "L" + std::to_string(*n.landmark);
      case SkeletonNode::Kind::Leaf: return to_string(*n.outcome);
    }
    return "?";
  }

 private:
  int child(int parent, SkeletonNode::Kind kind, std::optional<LandmarkId> landmark, std::optional<GoalOutcome> outcome) {
    for (int c : nodes_[static_cast<std::size_t>(parent)].children) {
      const auto& n = nodes_[static_cast<std::size_t>(c)];
      if (n.kind == kind && n.landmark == landmark && n.outcome == outcome) return c;
    }
    nodes_.push_back(SkeletonNode{kind, landmark, outcome, parent, {}});
    const int id = static_cast<int>(nodes_.size()) - 1;
    nodes_[static_cast<std::size_t>(parent)].children.push_back(id);
    return id;
  }

  friend struct SkeletonBuilder;
  friend void from_json(const nlohmann::json& j, Skeleton& s);

  std::vector<SkeletonNode> nodes_;
};

struct Lbim {
  Skeleton skeleton;
  std::vector<std::vector<ActionSequence>> segments;  // indexed by edge child node; sorted, unique
  std::map<LandmarkId, std::vector<ActionSequence>> landmark_prefixes;  // every distinct s0 -> L action prefix
  int horizon = 0;

  std::size_t node_count() const;
};

/// Per-landmark longest common action sequence from s0. Landmarks the tree
/// never reaches have no entry; an empty entry marks an uninformative landmark.
struct CaqMap {
  std::map<LandmarkId, ActionSequence> entries;

  bool contains(LandmarkId id) const { return entries.count(id) > 0; }
  const ActionSequence& at(LandmarkId id) const { return entries.at(id); }
  bool uninformative(LandmarkId id) const { return contains(id) && entries.at(id).empty(); }
  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

struct RLbim {
  Skeleton skeleton;
  CaqMap caq;
  std::vector<ActionSequence> fills;  // common action sequence per edge, indexed by child node
  int horizon = 0;

  std::size_t node_count() const;
};

namespace detail {

// Root and landmark nodes count once. Below each skeleton node u the actions
// form a prefix trie over the sequences on u's outgoing edges: every proper
// prefix is a node. Leaves are outcome labels on the trie node their
// sequence ends on (u itself for an empty one), so they only add a node
// nothing else occupies. A leaf that ends on landmark L labels the sibling
// landmark node L when one exists.
template <typename PerEdge>
std::size_t skeleton_size(const Skeleton& sk, PerEdge&& sequences_of) {
  std::size_t total = 0;
  for (const auto& n : sk.nodes()) {
    if (n.kind != SkeletonNode::Kind::Leaf) ++total;
    std::set<LandmarkId> landmark_children;
    for (int c : n.children)
      if (sk.node(c).kind == SkeletonNode::Kind::Landmark) landmark_children.insert(*sk.node(c).landmark);

    std::vector<std::map<Action, std::size_t>> trie(1);
    std::vector<bool> counted(1, false);
    for (int c : n.children) {
      const auto& child = sk.node(c);
      const bool ends_here = child.kind == SkeletonNode::Kind::Leaf &&
                             !(child.landmark && landmark_children.count(*child.landmark));
      for (const ActionSequence* s : sequences_of(c)) {
        std::size_t at = 0;
        for (std::size_t k = 0; k < s->size(); ++k) {
          auto it = trie[at].find((*s)[k]);
          if (it == trie[at].end()) {
            it = trie[at].emplace((*s)[k], trie.size()).first;
            trie.emplace_back();
            counted.push_back(false);
          }
          at = it->second;
          if (k + 1 < s->size() || ends_here) counted[at] = true;
        }
      }
    }
    total += static_cast<std::size_t>(std::count(counted.begin(), counted.end(), true));
  }
  return total;
}

struct PathHits {
  ActionSequence actions;
  std::vector<std::pair<std::size_t, LandmarkId>> hits;  // (node offset along path, landmark), first hit only
  GoalOutcome outcome;
};

inline std::vector<PathHits> analyse_paths(const BehaviourTree& tree, const LandmarkSet& landmarks) {
  std::vector<PathHits> out;
  for (int t : tree.terminals()) {
    const auto path = tree.path_to(t);
    PathHits ph;
    ph.outcome = *tree.node(t).outcome;
    std::set<LandmarkId> seen;
    for (std::size_t k = 0; k < path.size(); ++k) {
      if (k > 0) ph.actions.push_back(tree.node(path[k]).via);
      if (auto l = landmarks.match(tree.node(path[k]).state); l && seen.insert(*l).second) ph.hits.emplace_back(k, *l);
    }
    out.push_back(std::move(ph));
  }
  return out;
}

inline ActionSequence fold_lcs(const std::vector<ActionSequence>& seqs) {
  if (seqs.empty()) return {};
  ActionSequence acc = seqs.front();
  for (std::size_t k = 1; k < seqs.size(); ++k) acc = lcs(acc, seqs[k]);
  return acc;
}

}  // namespace detail

struct SkeletonBuilder {
  static Lbim build(const BehaviourTree& tree, const LandmarkSet& landmarks) {
    if (tree.node_count() == 0) throw Error(ErrorCode::EmptyInput, "empty behaviour tree");
    Lbim model;
    model.horizon = tree.depth();
    Skeleton& sk = model.skeleton;
    std::vector<std::set<ActionSequence>> segs(1);
    std::map<LandmarkId, std::set<ActionSequence>> prefixes;

    for (const auto& ph : detail::analyse_paths(tree, landmarks)) {
      const std::size_t last = ph.actions.size();  // offset of the terminal node
      int cur = 0;
      std::size_t from = 0;
      std::optional<LandmarkId> leaf_mark;
      for (auto [k, l] : ph.hits) {
        prefixes[l].emplace(ph.actions.begin(), ph.actions.begin() + static_cast<std::ptrdiff_t>(k));
        if (k == 0) {
          sk.nodes_[0].landmark = l;
          continue;
        }
        if (k == last) {
          leaf_mark = l;
          continue;
        }
        int next = sk.child(cur, SkeletonNode::Kind::Landmark, l, std::nullopt);
        if (segs.size() < sk.size()) segs.resize(sk.size());
        segs[static_cast<std::size_t>(next)].emplace(ph.actions.begin() + static_cast<std::ptrdiff_t>(from),
                                                     ph.actions.begin() + static_cast<std::ptrdiff_t>(k));
        cur = next;
        from = k;
      }
      int leaf = sk.child(cur, SkeletonNode::Kind::Leaf, leaf_mark, ph.outcome);
      if (segs.size() < sk.size()) segs.resize(sk.size());
      segs[static_cast<std::size_t>(leaf)].emplace(ph.actions.begin() + static_cast<std::ptrdiff_t>(from), ph.actions.end());
    }
    model.segments.resize(sk.size());
    for (std::size_t i = 0; i < sk.size(); ++i) model.segments[i].assign(segs[i].begin(), segs[i].end());
    for (auto& [l, set] : prefixes) model.landmark_prefixes[l].assign(set.begin(), set.end());
    return model;
  }
};

inline std::size_t Lbim::node_count() const {
  return detail::skeleton_size(skeleton, [this](int c) {
    std::vector<const ActionSequence*> out;
    for (const auto& s : segments[static_cast<std::size_t>(c)]) out.push_back(&s);
    return out;
  });
}

inline std::size_t RLbim::node_count() const {
  return detail::skeleton_size(skeleton, [this](int c) {
    return std::vector<const ActionSequence*>{&fills[static_cast<std::size_t>(c)]};
  });
}

/// Skeleton of s0, landmark hits (first hit per path, in hit order) and
/// terminal outcomes, with the raw action segments between them.
inline Lbim build_lbim(const BehaviourTree& tree, const LandmarkSet& landmarks) {
  return SkeletonBuilder::build(tree, landmarks);
}

/// Every distinct action prefix from s0 to the first node matching each
/// landmark, in lexicographic order.
inline std::map<LandmarkId, std::vector<ActionSequence>> landmark_prefixes(const BehaviourTree& tree,
                                                                           const LandmarkSet& landmarks) {
  std::map<LandmarkId, std::set<ActionSequence>> sets;
  for (const auto& ph : detail::analyse_paths(tree, landmarks))
    for (auto [k, l] : ph.hits) sets[l].emplace(ph.actions.begin(), ph.actions.begin() + static_cast<std::ptrdiff_t>(k));
  std::map<LandmarkId, std::vector<ActionSequence>> out;
  for (auto& [l, s] : sets) out[l].assign(s.begin(), s.end());
  return out;
}

/// Left fold of lcs over each landmark's prefixes in lexicographic order.
inline CaqMap caq_from_prefixes(const std::map<LandmarkId, std::vector<ActionSequence>>& prefixes) {
  CaqMap out;
  for (const auto& [l, seqs] : prefixes) out.entries[l] = detail::fold_lcs(seqs);
  return out;
}

inline CaqMap extract_caq(const BehaviourTree& tree, const LandmarkSet& landmarks) {
  if (tree.node_count() == 0) throw Error(ErrorCode::EmptyInput, "empty behaviour tree");
  return caq_from_prefixes(landmark_prefixes(tree, landmarks));
}

inline RLbim refine(const Lbim& model) {
  RLbim out;
  out.skeleton = model.skeleton;
  out.horizon = model.horizon;
  out.caq = caq_from_prefixes(model.landmark_prefixes);
  out.fills.reserve(model.segments.size());
  for (const auto& segs : model.segments) out.fills.push_back(detail::fold_lcs(segs));
  return out;
}

inline RLbim build_rlbim(const BehaviourTree& tree, const LandmarkSet& landmarks) {
  return refine(build_lbim(tree, landmarks));
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json actions_json(const ActionSequence& seq) {
  nlohmann::json out = nlohmann::json::array();
  for (Action a : seq) out.push_back(to_string(a));
  return out;
}

inline ActionSequence actions_from_json(const nlohmann::json& j) {
  ActionSequence out;
  for (const auto& a : j) out.push_back(action_from_string(a.get<std::string>()));
  return out;
}

inline void to_json(nlohmann::json& j, const Skeleton& s) {
  j = nlohmann::json::array();
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& n = s.node(static_cast<int>(i));
    nlohmann::json row{{"id", i}, {"kind", to_string(n.kind)}, {"parent", n.parent}, {"label", s.label(static_cast<int>(i))}};
    if (n.landmark) row["landmark"] = *n.landmark;
    if (n.outcome) row["outcome"] = outcome_json(*n.outcome);
    j.push_back(std::move(row));
  }
}

inline void from_json(const nlohmann::json& j, Skeleton& s) {
  s.nodes_.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& row = j[i];
    SkeletonNode n;
    const auto kind = row.at("kind").get<std::string>();
    n.kind = kind == "root" ? SkeletonNode::Kind::Root
           : kind == "landmark" ? SkeletonNode::Kind::Landmark
           : kind == "leaf" ? SkeletonNode::Kind::Leaf
           : throw Error(ErrorCode::ParseError, "unknown skeleton node kind " + kind);
    n.parent = row.at("parent").get<int>();
    if (row.contains("landmark")) n.landmark = row["landmark"].get<LandmarkId>();
    if (row.contains("outcome")) n.outcome = outcome_from_json(row["outcome"]);
    if ((i == 0) != (n.parent < 0) || n.parent >= static_cast<int>(i))
      throw Error(ErrorCode::ParseError, "skeleton node " + std::to_string(i) + " has a bad parent");
    s.nodes_.push_back(n);
    if (n.parent >= 0) s.nodes_[static_cast<std::size_t>(n.parent)].children.push_back(static_cast<int>(i));
  }
  if (s.nodes_.empty()) throw Error(ErrorCode::ParseError, "empty skeleton");
}

inline nlohmann::json caq_json(const CaqMap& caq) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [l, seq] : caq.entries) out[std::to_string(l)] = actions_json(seq);
  return out;
}

inline void to_json(nlohmann::json& j, const Lbim& m) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& edge : m.segments) {
    nlohmann::json e = nlohmann::json::array();
    for (const auto& s : edge) e.push_back(actions_json(s));
    segs.push_back(std::move(e));
  }
  j = {{"horizon", m.horizon}, {"skeleton", m.skeleton}, {"segments", segs}, {"node_count", m.node_count()}};
}

inline void to_json(nlohmann::json& j, const RLbim& m) {
  nlohmann::json fills = nlohmann::json::array();
  for (const auto& f : m.fills) fills.push_back(actions_json(f));
  j = {{"horizon", m.horizon}, {"skeleton", m.skeleton}, {"fills", fills},
       {"caq", caq_json(m.caq)}, {"node_count", m.node_count()}};
}

inline void from_json(const nlohmann::json& j, RLbim& m) {
  try {
    m = RLbim{};
    m.horizon = j.at("horizon").get<int>();
    m.skeleton = j.at("skeleton").get<Skeleton>();
    for (const auto& f : j.at("fills")) m.fills.push_back(actions_from_json(f));
    if (m.fills.size() != m.skeleton.size()) throw Error(ErrorCode::ParseError, "fills must align with skeleton nodes");
    for (const auto& [k, v] : j.at("caq").items()) m.caq.entries[std::stoi(k)] = actions_from_json(v);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

}  // namespace intent
