#pragma once

// Plan learning and behaviour trees.
//
// A per-goal policy is learned with tabular Q-learning over StateIds. Rolling
// it out epsilon-greedily yields plan sequences; merging the sequences of one
// agent gives its behaviour tree.

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "intent/error.hpp"
#include "intent/world.hpp"

namespace intent {

/// Terminal label of a plan sequence: a goal (tile id) or Null.
struct GoalOutcome {
  std::optional<TileId> goal;

  static GoalOutcome null() { return {}; }
  static GoalOutcome reached(TileId g) { return {g}; }
  bool is_null() const { return !goal.has_value(); }

  auto operator<=>(const GoalOutcome&) const = default;
};

inline std::string to_string(const GoalOutcome& g) {
  return g.goal ? "g" + std::to_string(*g.goal) : std::string("Null");
}

struct PlanStep {
  StateId state;
  Action action = Action::Up;

  bool operator==(const PlanStep&) const = default;
};

struct PlanSequence {
  std::vector<PlanStep> steps;
  StateId final_state;  // state reached after the last action
  GoalOutcome terminal;

  std::size_t length() const { return steps.size(); }
  const StateId& initial_state() const { return steps.front().state; }
  std::vector<Action> actions() const {
    std::vector<Action> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.action);
    return out;
  }

  bool operator==(const PlanSequence&) const = default;
};

inline bool operator<(const PlanSequence& a, const PlanSequence& b) {
  auto step_less = [](const PlanStep& x, const PlanStep& y) {
    if (x.state == y.state) return x.action < y.action;
    return x.state < y.state;
  };
  if (a.steps != b.steps)
    return std::lexicographical_compare(a.steps.begin(), a.steps.end(), b.steps.begin(), b.steps.end(), step_less);
  if (!(a.final_state == b.final_state)) return a.final_state < b.final_state;
  return a.terminal < b.terminal;
}

// ---------------------------------------------------------------------------
// Policy

struct QLearningParams {
  int episodes = 2000;
  double alpha = 0.2;
  double gamma = 0.95;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int horizon = 0;                // 0: use the world horizon
  double exploring_starts = 0.0;  // fraction of episodes started from a random open cell
  double rollout_epsilon = 0.1;   // exploration stored on the returned policy
  double step_cost = 0.01;
  double goal_reward = static_cast<double>(kDeliveryPoints);
  int eval_starts = 0;  // extra random starts in the success-rate evaluation
};

using QRow = std::array<double, kActionCount>;

struct Policy {
  TileId goal = -1;
  double exploration = 0.0;
  std::unordered_map<StateId, QRow> q_values;
  double success_rate = 0.0;

  bool knows(const StateId& s) const { return q_values.count(s) > 0; }

  /// Greedy action; ties go to the lowest action index, unseen states to Up.
  Action greedy(const StateId& s) const {
    auto it = q_values.find(s);
    if (it == q_values.end()) return Action::Up;
    return kAllActions[static_cast<std::size_t>(
        std::max_element(it->second.begin(), it->second.end()) - it->second.begin())];
  }

  double value(const StateId& s, Action a) const {
    auto it = q_values.find(s);
    return it == q_values.end() ? 0.0 : it->second[static_cast<std::size_t>(a)];
  }
};

/// Single-agent planning copy in which the goal tile is liftable alone. The
/// tile keeps its weight so observations match the real world.
inline WorldState goal_world(const WorldState& s, AgentId agent, TileId goal) {
  WorldState w = isolate(s, agent);
  if (goal < 0 || goal >= static_cast<TileId>(w.tile_weights.size()))
    throw Error(ErrorCode::InvalidArgument, "goal " + std::to_string(goal) + " is not a tile");
  w.solo_lift = goal;
  w.tick = 0;
  return w;
}

namespace detail {

inline bool delivered_goal(const std::vector<Event>& events, TileId goal) {
  for (const auto& e : events)
    if (e.kind == EventKind::Delivery && e.tile == goal) return true;
  return false;
}

inline std::vector<Position> open_cells(const WorldState& s) {
  std::vector<Position> out;
  for (int r = 0; r < s.rows; ++r)
    for (int c = 0; c < s.cols; ++c)
      if (s.grid[r * s.cols + c].kind != CellKind::Obstacle) out.push_back({r, c});
  return out;
}

inline Action sample_action(std::mt19937_64& rng) {
  return kAllActions[std::uniform_int_distribution<std::size_t>(0, kActionCount - 1)(rng)];
}

// Greedy run from `start` (agent 0); true when the goal tile is delivered.
inline bool greedy_reaches(const Policy& p, WorldState s, int horizon) {
  std::vector<Event> events;
  s.tick = 0;
  s.horizon = horizon;
  while (!s.finished()) {
    step_in_place(s, {{0, p.greedy(observe(s, 0))}}, events);
    if (delivered_goal(events, p.goal)) return true;
  }
  return false;
}

}  // namespace detail

/// Tabular Q-learning for one goal from `start`, acting as `agent`.
inline Policy learn_policy_from(const WorldState& start, AgentId agent, TileId goal, const QLearningParams& hp,
                                std::uint64_t seed) {
  if (!(hp.alpha > 0.0 && hp.alpha <= 1.0) || !(hp.gamma > 0.0 && hp.gamma <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "alpha and gamma must lie in (0, 1]");
  if (hp.episodes < 1) throw Error(ErrorCode::InvalidArgument, "episodes must be positive");
  const WorldState base = goal_world(start, agent, goal);
  const int horizon = hp.horizon > 0 ? hp.horizon : start.horizon;
  const auto cells = detail::open_cells(base);

  Policy policy;
  policy.goal = goal;
  policy.exploration = hp.rollout_epsilon;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Event> events;

  for (int ep = 0; ep < hp.episodes; ++ep) {
    const double frac = hp.episodes > 1 ? static_cast<double>(ep) / (hp.episodes - 1) : 1.0;
    const double eps = hp.epsilon_start + (hp.epsilon_end - hp.epsilon_start) * frac;
    WorldState s = base;
    s.horizon = horizon;
    if (hp.exploring_starts > 0.0 && unit(rng) < hp.exploring_starts) {
      s.agents[0].pos = cells[std::uniform_int_distribution<std::size_t>(0, cells.size() - 1)(rng)];
      s.agents[0].facing = kAllActions[std::uniform_int_distribution<std::size_t>(0, 3)(rng)];
      // half of the exploring starts already hold the goal tile
      if (!s.agents[0].carrying && unit(rng) < 0.5)
        if (auto at = s.tile_position(goal)) {
          s.at(*at) = CellContent::empty();
          s.agents[0].carrying = goal;
        }
    }
    StateId sid = observe(s, 0);
    while (!s.finished()) {
      QRow& row = policy.q_values[sid];
      Action a = unit(rng) < eps ? detail::sample_action(rng) : policy.greedy(sid);
      step_in_place(s, {{0, a}}, events);
      const bool done = detail::delivered_goal(events, goal);
      const double reward = -hp.step_cost + (done ? hp.goal_reward : 0.0);
      StateId next = observe(s, 0);
      double future = 0.0;
      if (!done && !s.finished()) {
        auto it = policy.q_values.find(next);
        if (it != policy.q_values.end()) future = *std::max_element(it->second.begin(), it->second.end());
      }
      double& q = row[static_cast<std::size_t>(a)];
      q += hp.alpha * (reward + hp.gamma * future - q);
      if (done) break;
      sid = std::move(next);
    }
  }

  int trials = 0, wins = 0;
  ++trials;
  wins += detail::greedy_reaches(policy, base, horizon) ? 1 : 0;
  std::mt19937_64 eval_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (int k = 0; k < hp.eval_starts; ++k) {
    WorldState s = base;
    s.agents[0].pos = cells[std::uniform_int_distribution<std::size_t>(0, cells.size() - 1)(eval_rng)];
    ++trials;
    wins += detail::greedy_reaches(policy, s, horizon) ? 1 : 0;
  }
  policy.success_rate = static_cast<double>(wins) / trials;
  return policy;
}

/// Learns a policy for `goal` acting as `agent` in the scenario's start state.
inline Policy learn_policy(const WorldConfig& config, TileId goal, const QLearningParams& hp, std::uint64_t seed,
                           AgentId agent = 0) {
  const WorldConfig resolved = resolve(config, config.seed);
  if (goal < 0 || goal >= static_cast<TileId>(resolved.tiles.size()))
    throw Error(ErrorCode::InvalidArgument, "goal " + std::to_string(goal) + " is not a tile");
  return learn_policy_from(init_world(resolved, config.seed), agent, goal, hp, seed);
}

// ---------------------------------------------------------------------------
// Rollouts

/// Epsilon-greedy plan sequences from `start` acting as `agent`, using the
/// policy's own exploration rate. Sequences end with the goal when it is
/// delivered, otherwise with Null after `horizon` steps.
inline std::vector<PlanSequence> rollout_from(const Policy& policy, const WorldState& start, AgentId agent,
                                              int count, int horizon, std::uint64_t seed) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "rollout count must be at least 1");
  if (horizon < 1) throw Error(ErrorCode::InvalidArgument, "rollout horizon must be at least 1");
  const WorldState base = goal_world(start, agent, policy.goal);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<PlanSequence> out;
  out.reserve(static_cast<std::size_t>(count));
  std::vector<Event> events;
  for (int k = 0; k < count; ++k) {
    WorldState s = base;
    s.horizon = horizon;
    PlanSequence seq;
    StateId sid = observe(s, 0);
    while (!s.finished()) {
      Action a = policy.exploration > 0.0 && unit(rng) < policy.exploration ? detail::sample_action(rng)
                                                                             : policy.greedy(sid);
      seq.steps.push_back({sid, a});
      step_in_place(s, {{0, a}}, events);
      sid = observe(s, 0);
      if (detail::delivered_goal(events, policy.goal)) {
        seq.terminal = GoalOutcome::reached(policy.goal);
        break;
      }
    }
    seq.final_state = sid;
    out.push_back(std::move(seq));
  }
  return out;
}

inline std::vector<PlanSequence> rollout(const Policy& policy, const WorldConfig& config, int count, int horizon,
                                         std::uint64_t seed, AgentId agent = 0) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "rollout count must be at least 1");
  return rollout_from(policy, init_world(config, config.seed), agent, count, horizon, seed);
}

// ---------------------------------------------------------------------------
// Behaviour tree

struct TreeNode {
  StateId state;
  int parent = -1;
  Action via = Action::Up;  // action on the edge from parent; unused at the root
  int depth = 0;
  std::vector<int> children;
  std::optional<GoalOutcome> outcome;  // set on nodes where a sequence terminates
};

/// Prefix-merged union of plan sequences rooted at their shared initial state.
/// Immutable once built.
class BehaviourTree {
 public:
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  const TreeNode& root() const { return nodes_.front(); }
  std::size_t node_count() const { return nodes_.size(); }
  int depth() const { return depth_; }

  std::vector<int> terminals() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].outcome) out.push_back(static_cast<int>(i));
    return out;
  }
  std::size_t path_count() const { return terminals().size(); }

  /// Node indices from the root to `node`, inclusive.
  std::vector<int> path_to(int node) const {
    std::vector<int> out;
    for (int n = node; n >= 0; n = nodes_[static_cast<std::size_t>(n)].parent) out.push_back(n);
    std::reverse(out.begin(), out.end());
    return out;
  }

  PlanSequence sequence_to(int terminal) const {
    const auto path = path_to(terminal);
    PlanSequence seq;
    for (std::size_t k = 0; k + 1 < path.size(); ++k)
      seq.steps.push_back({node(path[k]).state, node(path[k + 1]).via});
    seq.final_state = node(terminal).state;
    seq.terminal = node(terminal).outcome.value_or(GoalOutcome::null());
    return seq;
  }

  std::vector<PlanSequence> paths() const {
    std::vector<PlanSequence> out;
    for (int t : terminals()) out.push_back(sequence_to(t));
    return out;
  }

  int find_child(int parent, Action a, const StateId& s) const {
    for (int c : node(parent).children)
      if (node(c).via == a && node(c).state == s) return c;
    return -1;
  }

  /// Follow `seq` from the root; returns the reached node or -1.
  int walk(const PlanSequence& seq) const {
    if (nodes_.empty() || seq.steps.empty() || !(seq.initial_state() == root().state)) return -1;
    int cur = 0;
    for (std::size_t k = 0; k < seq.steps.size(); ++k) {
      const StateId& next = k + 1 < seq.steps.size() ? seq.steps[k + 1].state : seq.final_state;
      cur = find_child(cur, seq.steps[k].action, next);
      if (cur < 0) return -1;
    }
    return cur;
  }

 private:
  int add_node(int parent, Action via, StateId state) {
    TreeNode n;
    n.state = std::move(state);
    n.parent = parent;
    n.via = via;
    n.depth = parent < 0 ? 0 : node(parent).depth + 1;
    depth_ = std::max(depth_, n.depth);
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    if (parent >= 0) nodes_[static_cast<std::size_t>(parent)].children.push_back(id);
    return id;
  }

  void set_outcome(int n, const GoalOutcome& g) {
    auto& slot = nodes_[static_cast<std::size_t>(n)].outcome;
    if (slot && *slot != g)
      throw Error(ErrorCode::InvalidArgument, "two sequences end at one node with different outcomes");
    slot = g;
  }

  friend BehaviourTree build_tree(std::vector<PlanSequence> sequences);
  friend void from_json(const nlohmann::json& j, BehaviourTree& t);

  std::vector<TreeNode> nodes_;
  int depth_ = 0;
};

/// Merge sequences sharing the initial state into one tree. Duplicate
/// sequences collapse to a single path.
inline BehaviourTree build_tree(std::vector<PlanSequence> sequences) {
  if (sequences.empty()) throw Error(ErrorCode::EmptyInput, "no plan sequences");
  for (const auto& s : sequences)
    if (s.steps.empty()) throw Error(ErrorCode::EmptyInput, "plan sequence without steps");
  const StateId s0 = sequences.front().initial_state();
  for (const auto& s : sequences)
    if (!(s.initial_state() == s0)) throw Error(ErrorCode::MismatchedInitialState, "sequences start in different states");
  std::sort(sequences.begin(), sequences.end());
  sequences.erase(std::unique(sequences.begin(), sequences.end()), sequences.end());

  BehaviourTree tree;
  tree.add_node(-1, Action::Up, s0);
  for (const auto& seq : sequences) {
    int cur = 0;
    for (std::size_t k = 0; k < seq.steps.size(); ++k) {
      const StateId& next = k + 1 < seq.steps.size() ? seq.steps[k + 1].state : seq.final_state;
      int child = tree.find_child(cur, seq.steps[k].action, next);
      if (child < 0) child = tree.add_node(cur, seq.steps[k].action, next);
      cur = child;
    }
    tree.set_outcome(cur, seq.terminal);
  }
  return tree;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json outcome_json(const GoalOutcome& g) {
  return g.goal ? nlohmann::json(*g.goal) : nlohmann::json(nullptr);
}

inline GoalOutcome outcome_from_json(const nlohmann::json& j) {
  return j.is_null() ? GoalOutcome::null() : GoalOutcome::reached(j.get<TileId>());
}

inline void to_json(nlohmann::json& j, const BehaviourTree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  nlohmann::json edges = nlohmann::json::array();
  nlohmann::json leaves = nlohmann::json::array();
  for (std::size_t i = 0; i < t.nodes().size(); ++i) {
    const auto& n = t.nodes()[i];
    nodes.push_back({{"id", i}, {"state", n.state.key()}});
    if (n.parent >= 0) edges.push_back({{"parent", n.parent}, {"action", to_string(n.via)}, {"child", i}});
    if (n.outcome) leaves.push_back({{"node", i}, {"outcome", outcome_json(*n.outcome)}});
  }
  j = {{"depth", t.depth()}, {"nodes", nodes}, {"edges", edges}, {"leaves", leaves}};
}

/// Nodes must be listed root first with parents before children.
inline void from_json(const nlohmann::json& j, BehaviourTree& t) {
  try {
    t = BehaviourTree{};
    const auto& nodes = j.at("nodes");
    if (nodes.empty()) throw Error(ErrorCode::EmptyInput, "tree without nodes");
    std::vector<std::pair<int, Action>> parent(nodes.size(), {-1, Action::Up});
    for (const auto& e : j.at("edges")) {
      auto child = e.at("child").get<std::size_t>();
      if (child >= nodes.size()) throw Error(ErrorCode::ParseError, "edge child out of range");
      parent[child] = {e.at("parent").get<int>(), action_from_string(e.at("action").get<std::string>())};
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].at("id").get<std::size_t>() != i) throw Error(ErrorCode::ParseError, "node ids must be 0..n-1 in order");
      auto [p, via] = parent[i];
      if ((i == 0) != (p < 0) || p >= static_cast<int>(i))
        throw Error(ErrorCode::ParseError, "node " + std::to_string(i) + " has a bad parent");
      t.add_node(p, via, StateId(nodes[i].at("state").get<std::string>()));
    }
    for (const auto& l : j.at("leaves")) t.set_outcome(l.at("node").get<int>(), outcome_from_json(l.at("outcome")));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

}  // namespace intent
