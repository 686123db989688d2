#pragma once

// Multi-agent BDI loop: agents execute goal plans, periodically reconsider,
// and team up on heavy tiles when recognition puts them in one group.
//
// Individual agents pursue the nearest light tile; once none is left they
// walk to the best-ranked heavy tile and wait there (they never try to lift
// it). Recognition clusters the agents' landmark distributions and turns
// permitted groups of individual agents into teams that rendezvous on a
// heavy tile, lift it together and carry it to a hole.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "intent/error.hpp"
#include "intent/lbim.hpp"
#include "intent/plan_model.hpp"
#include "intent/recognizer.hpp"
#include "intent/world.hpp"

namespace intent {

enum class RecognizerMode { None, LBIM, RLBIM, LBIM_G, RLBIM_G };

inline std::string_view to_string(RecognizerMode m) {
  switch (m) {
    case RecognizerMode::None: return "None";
    case RecognizerMode::LBIM: return "LBIM";
    case RecognizerMode::RLBIM: return "RLBIM";
    case RecognizerMode::LBIM_G: return "LBIM_G";
    case RecognizerMode::RLBIM_G: return "RLBIM_G";
  }
  return "?";
}

inline RecognizerMode recognizer_mode_from_string(std::string_view s) {
  for (auto m : {RecognizerMode::None, RecognizerMode::LBIM, RecognizerMode::RLBIM, RecognizerMode::LBIM_G,
                 RecognizerMode::RLBIM_G})
    if (s == to_string(m)) return m;
  throw Error(ErrorCode::ParseError, "unknown recognizer mode '" + std::string(s) + "'");
}

inline bool grouped(RecognizerMode m) { return m == RecognizerMode::LBIM_G || m == RecognizerMode::RLBIM_G; }
inline bool refined(RecognizerMode m) { return m == RecognizerMode::RLBIM || m == RecognizerMode::RLBIM_G; }

// ---------------------------------------------------------------------------
// Collaboration constraints

enum class ConstraintKind { FP, CP, FG, MG, MM };

inline std::string_view to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::FP: return "FP";
    case ConstraintKind::CP: return "CP";
    case ConstraintKind::FG: return "FG";
    case ConstraintKind::MG: return "MG";
    case ConstraintKind::MM: return "MM";
  }
  return "?";
}

inline ConstraintKind constraint_from_string(std::string_view s) {
  for (auto k : {ConstraintKind::FP, ConstraintKind::CP, ConstraintKind::FG, ConstraintKind::MG, ConstraintKind::MM})
    if (s == to_string(k)) return k;
  throw Error(ErrorCode::ParseError, "unknown scenario constraint '" + std::string(s) + "'");
}

/// Who may collaborate with whom. `allowed` lists the fixed parts: the FP
/// partner, or the other members of an agent's fixed group (FG, and the fixed
/// agents of MM). Agents without an entry are free.
struct ScenarioConstraint {
  ConstraintKind variant = ConstraintKind::MG;
  std::map<AgentId, std::set<AgentId>> allowed;

  bool fixed(AgentId a) const { return allowed.count(a) > 0; }

  bool permits(std::vector<AgentId> team) const {
    std::sort(team.begin(), team.end());
    if (team.size() < 2 || std::adjacent_find(team.begin(), team.end()) != team.end()) return false;
    auto same_fixed_group = [&] {
      for (AgentId a : team) {
        auto it = allowed.find(a);
        if (it == allowed.end()) return false;
        for (AgentId b : team)
          if (b != a && !it->second.count(b)) return false;
      }
      return true;
    };
    switch (variant) {
      case ConstraintKind::FP: return team.size() == 2 && same_fixed_group();
      case ConstraintKind::CP: return team.size() == 2;
      case ConstraintKind::FG: return same_fixed_group();
      case ConstraintKind::MG: return true;
      case ConstraintKind::MM:
        if (std::none_of(team.begin(), team.end(), [&](AgentId a) { return fixed(a); })) return true;
        return same_fixed_group();
    }
    return false;
  }

  /// FP pairs agents (0,1), (2,3), ...; with an odd count the last agent's
  /// partner does not exist. FG splits agents into consecutive groups of
  /// `group_size` (a trailing singleton joins the previous group). MM fixes
  /// the first `fixed_fraction` of the agents in FG-style groups and leaves
  /// the rest free.
  static ScenarioConstraint make(ConstraintKind v, int agents, int group_size = 3, double fixed_fraction = 0.5) {
    if (agents < 1) throw Error(ErrorCode::InvalidArgument, "agent count must be positive");
    if (group_size < 2) throw Error(ErrorCode::InvalidArgument, "fixed groups need at least two agents");
    ScenarioConstraint c;
    c.variant = v;
    auto fixed_groups = [&](int count) {
      std::vector<std::vector<AgentId>> groups;
      for (int a = 0; a < count; ++a) {
        if (a % group_size == 0) groups.emplace_back();
        groups.back().push_back(a);
      }
      if (groups.size() > 1 && groups.back().size() == 1) {
        groups[groups.size() - 2].push_back(groups.back().front());
        groups.pop_back();
      }
      for (const auto& g : groups)
        for (AgentId a : g)
          for (AgentId b : g)
            if (a != b) c.allowed[a].insert(b);
      for (const auto& g : groups)
        if (g.size() == 1) c.allowed[g.front()];
    };
    switch (v) {
      case ConstraintKind::FP:
        for (int a = 0; a < agents; ++a) c.allowed[a] = {a ^ 1};
        break;
      case ConstraintKind::FG: fixed_groups(agents); break;
      case ConstraintKind::MM:
        fixed_groups(static_cast<int>(std::floor(fixed_fraction * agents + 1e-9)));
        break;
      case ConstraintKind::CP:
      case ConstraintKind::MG: break;
    }
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ScenarioConstraint& c) {
  nlohmann::json allowed = nlohmann::json::object();
  for (const auto& [a, set] : c.allowed) allowed[std::to_string(a)] = set;
  j = {{"variant", to_string(c.variant)}, {"allowed", allowed}};
}

inline void from_json(const nlohmann::json& j, ScenarioConstraint& c) {
  try {
    c.variant = constraint_from_string(j.at("variant").get<std::string>());
    c.allowed.clear();
    for (const auto& [k, v] : j.at("allowed").items()) c.allowed[std::stoi(k)] = v.get<std::set<AgentId>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

// ---------------------------------------------------------------------------
// Stages

enum class Stage { Early, Middle, Final };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Early: return "Early";
    case Stage::Middle: return "Middle";
    case Stage::Final: return "Final";
  }
  return "?";
}

inline constexpr std::array<Stage, 3> kStages = {Stage::Early, Stage::Middle, Stage::Final};

/// [0,b1), [b1,b2), [b2,T] with b1 = T/3 and b2 = 2T/3.
struct StageClock {
  int horizon = 0;
  int b1 = 0;
  int b2 = 0;

  explicit StageClock(int t = 0) : horizon(t), b1(t / 3), b2(2 * t / 3) {}

  Stage stage_of(int tick) const {
    if (tick < b1) return Stage::Early;
    if (tick < b2) return Stage::Middle;
    return Stage::Final;
  }
  int end_of(Stage s) const {
    switch (s) {
      case Stage::Early: return b1;
      case Stage::Middle: return b2;
      case Stage::Final: return horizon;
    }
    return horizon;
  }
};

// ---------------------------------------------------------------------------
// K selection

/// auto, a fixed K, or the automatic K shifted by an offset. Fixed and
/// shifted values are clamped to [1, agents].
struct KChoice {
  enum class Kind { Auto, Fixed, Offset };
  Kind kind = Kind::Auto;
  int value = 0;

  static KChoice parse(const nlohmann::json& j) {
    if (j.is_number_integer()) {
      if (j.get<int>() < 1) throw Error(ErrorCode::InvalidConfig, "fixed K must be positive");
      return {Kind::Fixed, j.get<int>()};
    }
    if (!j.is_string()) throw Error(ErrorCode::ParseError, "K must be \"auto\", an integer or \"+d\"/\"-d\"");
    const auto s = j.get<std::string>();
    if (s == "auto") return {};
    if (s.size() >= 2 && (s[0] == '+' || s[0] == '-')) {
      try {
        std::size_t used = 0;
        int d = std::stoi(s, &used);
        if (used == s.size()) return {Kind::Offset, d};
      } catch (const std::exception&) {
      }
    }
    throw Error(ErrorCode::ParseError, "bad K value '" + s + "'");
  }

  std::string label() const {
    switch (kind) {
      case Kind::Auto: return "auto";
      case Kind::Fixed: return std::to_string(value);
      case Kind::Offset: return (value >= 0 ? "+" : "") + std::to_string(value);
    }
    return "?";
  }

  int resolve(int automatic, int agents) const {
    int k = automatic;
    if (kind == Kind::Fixed) k = value;
    if (kind == Kind::Offset) k = automatic + value;
    return std::clamp(k, 1, std::max(1, agents));
  }
};

// ---------------------------------------------------------------------------
// Agents

enum class AgentMode { Individual, Collaborative };

inline std::string_view to_string(AgentMode m) { return m == AgentMode::Individual ? "Individual" : "Collaborative"; }

using PolicyTable = std::map<TileId, Policy>;

/// Intention models of one agent, built from its state when its current
/// commitment began.
struct AgentModel {
  Lbim lbim;
  RLbim rlbim;
  std::size_t tree_nodes = 0;
  bool empty = true;  // no goal left to plan for
};

struct AgentRuntime {
  AgentId id = 0;
  TileId active_goal = -1;
  const Policy* policy = nullptr;  // for active_goal, may be null
  ObservedActionSequence obs_log;
  std::set<AgentId> collaborators;
  AgentMode mode = AgentMode::Individual;

  // current commitment
  std::size_t window_start = 0;  // obs_log offset where it began
  WorldState anchor;
  std::optional<AgentModel> model;
  int best_distance = -1;
  int last_progress = 0;
  bool policy_off = false;

  ActionSequence window() const {
    return ActionSequence(obs_log.actions.begin() + static_cast<std::ptrdiff_t>(window_start), obs_log.actions.end());
  }
};

inline std::vector<AgentRuntime> make_agents(std::size_t n) {
  std::vector<AgentRuntime> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = static_cast<AgentId>(i);
    out[i].obs_log.agent = static_cast<AgentId>(i);
  }
  return out;
}

/// One policy per tile, learned on single-agent copies of `s0` with
/// exploring starts so that it covers most of the grid.
inline PolicyTable learn_goal_policies(const WorldState& s0, QLearningParams hp, std::uint64_t seed) {
  PolicyTable out;
  if (s0.agents.empty()) return out;
  if (hp.horizon <= 0) hp.horizon = 2 * (s0.rows + s0.cols);
  std::mt19937_64 seeds(seed);
  for (TileId g = 0; g < static_cast<TileId>(s0.tile_weights.size()); ++g) {
    const auto sd = seeds();
    if (s0.tile_position(g)) out.emplace(g, learn_policy_from(s0, 0, g, hp, sd));
  }
  return out;
}

namespace detail {

inline Action wait_action(bool carrying) { return carrying ? Action::Pick : Action::Drop; }

inline std::vector<int> field_to(const WorldState& s, const std::vector<Position>& targets) {
  std::vector<int> dist(s.grid.size(), -1);
  std::deque<Position> queue;
  for (auto t : targets)
    if (s.in_bounds(t) && s.at(t).kind != CellKind::Obstacle && dist[s.index(t)] < 0) {
      dist[s.index(t)] = 0;
      queue.push_back(t);
    }
  while (!queue.empty()) {
    Position p = queue.front();
    queue.pop_front();
    for (Action dir : {Action::Up, Action::Down, Action::Left, Action::Right}) {
      Position q = offset(p, dir);
      if (!s.in_bounds(q) || s.at(q).kind == CellKind::Obstacle || dist[s.index(q)] >= 0) continue;
      dist[s.index(q)] = dist[s.index(p)] + 1;
      queue.push_back(q);
    }
  }
  return dist;
}

inline int distance(const WorldState& s, Position from, Position to) {
  return field_to(s, {to})[s.index(from)];
}

inline bool confident(const Policy* p, TileId goal, const StateId& sid, Action& out) {
  if (!p || p->goal != goal) return false;
  auto it = p->q_values.find(sid);
  if (it == p->q_values.end()) return false;
  auto best = std::max_element(it->second.begin(), it->second.end());
  if (*best <= 0.0) return false;
  out = kAllActions[static_cast<std::size_t>(best - it->second.begin())];
  return true;
}

/// Next action of `agent` towards delivering `goal`. The policy is followed
/// where it has found a rewarding route; elsewhere the agent walks a
/// shortest path. `may_pick` is false for a heavy tile the agent must not
/// try to lift.
inline Action plan_action(const WorldState& s, AgentId agent, TileId goal, const Policy* policy, bool may_pick,
                          bool use_policy = true) {
  const auto& ag = s.agents[static_cast<std::size_t>(agent)];
  Action a = Action::Up;
  if (ag.carrying) {
    if (s.at(ag.pos).kind == CellKind::Hole) return Action::Drop;
    if (use_policy && *ag.carrying == goal && confident(policy, goal, observe(s, agent), a) && a != Action::Pick)
      return a;
    auto moves = descending_moves(s, field_to(s, hole_cells(s)), ag.pos);
    return moves.empty() ? wait_action(true) : moves.front();
  }
  auto where = goal >= 0 ? s.tile_position(goal) : std::nullopt;
  if (!where) return wait_action(false);
  if (ag.pos == *where) return may_pick ? Action::Pick : wait_action(false);
  if (use_policy && confident(policy, goal, observe(s, agent), a) && a != Action::Pick && a != Action::Drop) return a;
  auto moves = descending_moves(s, field_to(s, {*where}), ag.pos);
  return moves.empty() ? wait_action(false) : moves.front();
}

inline const Policy* policy_for(const PolicyTable& policies, TileId goal) {
  auto it = policies.find(goal);
  return it == policies.end() ? nullptr : &it->second;
}

}  // namespace detail

/// Plan sequences from `anchor` for every tile still in play, rolled out with
/// the agent's own planner plus `epsilon` random actions, merged into one
/// behaviour tree and condensed into both intention models.
inline AgentModel build_agent_model(const WorldState& anchor, AgentId agent, const PolicyTable& policies,
                                    const LandmarkSet& landmarks, int horizon, int rollouts, double epsilon,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<PlanSequence> seqs;
  std::vector<Event> events;
  const auto& me = anchor.agents.at(static_cast<std::size_t>(agent));
  for (TileId g = 0; g < static_cast<TileId>(anchor.tile_weights.size()); ++g) {
    if (!anchor.tile_position(g) && me.carrying != g) continue;
    const WorldState base = goal_world(anchor, agent, g);
    const Policy* p = detail::policy_for(policies, g);
    for (int r = 0; r < rollouts; ++r) {
      WorldState s = base;
      s.horizon = horizon;
      PlanSequence seq;
      StateId sid = observe(s, 0);
      while (!s.finished()) {
        Action a = unit(rng) < epsilon ? detail::sample_action(rng) : detail::plan_action(s, 0, g, p, true);
        seq.steps.push_back({sid, a});
        step_in_place(s, {{0, a}}, events);
        sid = observe(s, 0);
        if (detail::delivered_goal(events, g)) {
          seq.terminal = GoalOutcome::reached(g);
          break;
        }
      }
      seq.final_state = sid;
      seqs.push_back(std::move(seq));
    }
  }
  AgentModel m;
  if (seqs.empty()) return m;
  auto tree = build_tree(std::move(seqs));
  m.tree_nodes = tree.node_count();
  m.lbim = build_lbim(tree, landmarks);
  m.rlbim = refine(m.lbim);
  m.empty = false;
  return m;
}

// ---------------------------------------------------------------------------
// Reconsideration

struct RecognitionOptions {
  KChoice k;
  std::uint64_t seed = 0;
};

struct ReconsiderOutcome {
  std::vector<LandmarkDistribution> distributions;  // one per agent, in agent order
  ClusterResult clusters;
  int k = 0;
  std::vector<std::vector<AgentId>> teams;
  std::vector<std::size_t> intentions;  // landmark index per team
  std::vector<AgentId> representatives;  // grouped modes: one per cluster
  long long lcs_cells = 0;
  long long kl_terms = 0;
};

namespace detail {

inline LandmarkDistribution agent_distribution(const AgentRuntime& a, RecognizerMode mode, const LandmarkSet& lms,
                                               long long& cells) {
  ObservedActionSequence obs{a.id, a.window()};
  if (!a.model || a.model->empty) return normalize_similarities(a.id, std::vector<double>(lms.size(), 0.0));
  if (refined(mode)) {
    for (const auto& [l, caq] : a.model->rlbim.caq.entries)
      cells += static_cast<long long>(obs.actions.size() * caq.size());
    return landmark_distribution(obs, a.model->rlbim.caq, lms);
  }
  for (const auto& [l, seqs] : a.model->lbim.landmark_prefixes)
    for (const auto& s : seqs) cells += static_cast<long long>(obs.actions.size() * s.size());
  return landmark_distribution(obs, a.model->lbim.landmark_prefixes, lms);
}

// Permitted teams among the individual agents of one cluster.
inline std::vector<std::vector<AgentId>> teams_in(const std::vector<AgentId>& members, const ScenarioConstraint& sc) {
  std::vector<std::vector<AgentId>> out;
  std::set<AgentId> in(members.begin(), members.end());
  auto fixed_groups = [&](bool only_fixed_agents) {
    std::set<AgentId> used;
    for (AgentId a : members) {
      if (used.count(a) || !sc.fixed(a)) continue;
      std::vector<AgentId> team{a};
      for (AgentId b : sc.allowed.at(a))
        if (in.count(b)) team.push_back(b);
      std::sort(team.begin(), team.end());
      for (AgentId b : team) used.insert(b);
      if (sc.permits(team)) out.push_back(team);
    }
    if (!only_fixed_agents) return;
    std::vector<AgentId> free;
    for (AgentId a : members)
      if (!sc.fixed(a)) free.push_back(a);
    if (sc.permits(free)) out.push_back(free);
  };
  switch (sc.variant) {
    case ConstraintKind::FP:
    case ConstraintKind::FG: fixed_groups(false); break;
    case ConstraintKind::MM: fixed_groups(true); break;
    case ConstraintKind::CP:
      for (std::size_t i = 0; i + 1 < members.size(); i += 2) out.push_back({members[i], members[i + 1]});
      break;
    case ConstraintKind::MG:
      if (members.size() >= 2) out.push_back(members);
      break;
  }
  return out;
}

}  // namespace detail

/// Distributions from every agent's observation window, K-means grouping, and
/// the teams the grouping and the scenario constraint allow. Only Individual
/// agents join new teams. Grouped modes take each group's intention from the
/// member closest to its centroid; plain modes from the members' most common
/// most-likely landmark.
inline ReconsiderOutcome reconsider(const std::vector<AgentRuntime>& agents, RecognizerMode mode,
                                    const ScenarioConstraint& scenario, const LandmarkSet& landmarks,
                                    const RecognitionOptions& opts = {}) {
  ReconsiderOutcome out;
  if (agents.empty()) throw Error(ErrorCode::EmptyInput, "no agents to reconsider");
  if (mode == RecognizerMode::None) return out;
  for (const auto& a : agents) out.distributions.push_back(detail::agent_distribution(a, mode, landmarks, out.lcs_cells));
  const int n = static_cast<int>(agents.size());
  out.k = opts.k.resolve(choose_k(out.distributions), n);
  out.clusters = cluster(out.distributions, out.k, opts.seed);
  const auto dim = static_cast<long long>(landmarks.size());
  out.kl_terms = static_cast<long long>(n) * out.k * dim * (out.clusters.iterations + 2) * kClusterRestarts;

  for (std::size_t j = 0; j < out.clusters.groups.size(); ++j) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < agents.size(); ++i)
      if (out.clusters.assignment[i] == j) idx.push_back(i);
    std::size_t rep = idx.front();
    double best = kl_divergence(out.clusters.centroids[j], out.distributions[rep]);
    for (std::size_t i : idx) {
      double d = kl_divergence(out.clusters.centroids[j], out.distributions[i]);
      if (d < best) {
        best = d;
        rep = i;
      }
    }
    if (grouped(mode)) out.representatives.push_back(agents[rep].id);

    std::vector<AgentId> individuals;
    for (std::size_t i : idx)
      if (agents[i].mode == AgentMode::Individual) individuals.push_back(agents[i].id);
    for (auto& team : detail::teams_in(individuals, scenario)) {
      std::size_t intention = out.distributions[rep].argmax();
      if (!grouped(mode)) {
        std::map<std::size_t, int> votes;
        for (AgentId a : team)
          for (std::size_t i : idx)
            if (agents[i].id == a) ++votes[out.distributions[i].argmax()];
        int top = 0;
        for (auto [l, v] : votes)
          if (v > top) {
            top = v;
            intention = l;
          }
      }
      out.teams.push_back(std::move(team));
      out.intentions.push_back(intention);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Episodes

enum class Timing { Model, Wall };

// Modeled recognition cost: nanoseconds per LCS table cell and per KL term.
inline constexpr double kNsPerLcsCell = 1.0;
inline constexpr double kNsPerKlTerm = 4.0;

struct EpisodeParams {
  RecognizerMode mode = RecognizerMode::RLBIM;
  int recon_period = 5;
  KChoice k;
  int plan_horizon = 60;  // rollout length of the plans behind the models
  int rollouts = 6;       // per goal
  double rollout_epsilon = 0.2;
  Timing timing = Timing::Model;
};

struct StageMetrics {
  Stage stage = Stage::Early;
  int end_tick = 0;
  int score = 0;
  double efficiency = 0.0;
  double accuracy = 0.0;
  double recognition_time_ms = 0.0;
  int recognition_calls = 0;
};

struct RecognitionCall {
  int tick = 0;
  int k = 0;
  double accuracy = 0.0;
  double time_ms = 0.0;
  long long lcs_cells = 0;
  int teams = 0;
};

struct ModelSize {
  AgentId agent = 0;
  int tick = 0;
  std::size_t tree = 0;
  std::size_t lbim = 0;
  std::size_t rlbim = 0;
};

struct Collaboration {
  int tick = 0;
  std::vector<AgentId> team;
  TileId target = -1;
};

struct EpisodeReport {
  std::string mode;
  std::string constraint;
  std::uint64_t seed = 0;
  int agents = 0;
  int horizon = 0;
  std::array<StageMetrics, 3> stages{};
  std::vector<int> agent_scores;
  int total_score = 0;
  int deliveries = 0;
  int joint_deliveries = 0;
  std::vector<RecognitionCall> calls;
  std::vector<ModelSize> models;
  std::vector<Collaboration> collaborations;
  int dissolutions = 0;
  bool collaborations_legal = true;
};

inline void to_json(nlohmann::json& j, const EpisodeReport& r) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : r.stages)
    stages.push_back({{"stage", to_string(s.stage)},
                      {"end_tick", s.end_tick},
                      {"score", s.score},
                      {"efficiency", s.efficiency},
                      {"accuracy", s.accuracy},
                      {"recognition_time_ms", s.recognition_time_ms},
                      {"recognition_calls", s.recognition_calls}});
  nlohmann::json calls = nlohmann::json::array();
  for (const auto& c : r.calls)
    calls.push_back({{"tick", c.tick}, {"k", c.k}, {"accuracy", c.accuracy}, {"time_ms", c.time_ms},
                     {"lcs_cells", c.lcs_cells}, {"teams", c.teams}});
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : r.models)
    models.push_back({{"agent", m.agent}, {"tick", m.tick}, {"tree", m.tree}, {"lbim", m.lbim}, {"rlbim", m.rlbim}});
  nlohmann::json collabs = nlohmann::json::array();
  for (const auto& c : r.collaborations) collabs.push_back({{"tick", c.tick}, {"team", c.team}, {"target", c.target}});
  j = {{"mode", r.mode},
       {"constraint", r.constraint},
       {"seed", r.seed},
       {"agents", r.agents},
       {"horizon", r.horizon},
       {"stages", stages},
       {"agent_scores", r.agent_scores},
       {"total_score", r.total_score},
       {"deliveries", r.deliveries},
       {"joint_deliveries", r.joint_deliveries},
       {"recognition_calls", calls},
       {"models", models},
       {"collaborations", collabs},
       {"dissolutions", r.dissolutions},
       {"collaborations_legal", r.collaborations_legal}};
}

namespace detail {

struct Team {
  std::vector<AgentId> members;  // ascending
  TileId target = -1;
  int best = -1;
  bool carrying = false;
  int last_progress = 0;
};

inline nlohmann::json header_line(const WorldConfig& c, const ScenarioConstraint& sc, RecognizerMode mode,
                                  std::uint64_t seed) {
  return {{"type", "header"}, {"config", c}, {"constraint", sc}, {"mode", to_string(mode)}, {"seed", seed}};
}

inline nlohmann::json step_line(int tick, const JointAction& ja) {
  nlohmann::json acts = nlohmann::json::array();
  for (auto [a, act] : ja) acts.push_back({a, to_string(act)});
  return {{"type", "step"}, {"tick", tick}, {"actions", acts}};
}

inline nlohmann::json world_line(int tick, const Event& e) {
  nlohmann::json j = e;
  j["type"] = "world";
  j["tick"] = tick;
  return j;
}

inline nlohmann::json end_line(const WorldState& s) {
  std::vector<int> scores;
  for (const auto& a : s.agents) scores.push_back(a.score);
  return {{"type", "end"}, {"tick", s.tick}, {"scores", scores}, {"total", s.total_score()}};
}

inline bool move_blocked(const Event& e) {
  return e.kind == EventKind::Blocked &&
         (e.reason == "obstacle" || e.reason == "out-of-bounds" || e.reason == "contested-cell");
}

}  // namespace detail

/// Runs one episode. `config` is resolved with `seed` first (a no-op for a
/// concrete layout). Landmarks default to the tile cells.
inline EpisodeReport run_episode(const WorldConfig& config, std::vector<AgentRuntime> agents,
                                 const ScenarioConstraint& scenario, const EpisodeParams& params, std::uint64_t seed,
                                 const PolicyTable& policies = {}, std::ostream* events = nullptr) {
  if (params.recon_period < 1) throw Error(ErrorCode::InvalidArgument, "recon_period must be at least 1");
  if (params.plan_horizon < 1 || params.rollouts < 1)
    throw Error(ErrorCode::InvalidArgument, "plan horizon and rollout count must be positive");
  const WorldConfig c = resolve(config, seed);
  WorldState s = init_world(c, seed);
  if (agents.size() != s.agents.size())
    throw Error(ErrorCode::InvalidConfig, "config has " + std::to_string(s.agents.size()) + " agents, runtime " +
                                              std::to_string(agents.size()));
  if (!c.agent_goals.empty() && c.agent_goals.size() != agents.size())
    throw Error(ErrorCode::InvalidConfig, "agent_goals must list one goal per agent");
  const LandmarkSet landmarks = LandmarkSet::from_cells(c.landmarks.empty() ? c.tiles : c.landmarks);
  // landmark index -> tile initially on that cell
  std::vector<TileId> landmark_tile(landmarks.size(), -1);
  for (std::size_t i = 0; i < landmarks.size(); ++i)
    for (std::size_t t = 0; t < c.tiles.size(); ++t)
      if (c.tiles[t] == landmarks[i].cell) landmark_tile[i] = static_cast<TileId>(t);

  const StageClock clock(s.horizon);
  const bool recognising = params.mode != RecognizerMode::None && !landmarks.empty();
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  auto emit = [&](const nlohmann::json& j) {
    if (events) *events << j.dump() << '\n';
  };
  emit(detail::header_line(c, scenario, params.mode, seed));

  EpisodeReport rep;
  rep.mode = std::string(to_string(params.mode));
  rep.constraint = std::string(to_string(scenario.variant));
  rep.seed = seed;
  rep.agents = static_cast<int>(agents.size());
  rep.horizon = s.horizon;
  for (std::size_t i = 0; i < 3; ++i) {
    rep.stages[i].stage = kStages[i];
    rep.stages[i].end_tick = clock.end_of(kStages[i]);
  }
  std::array<double, 3> acc_sum{}, time_sum{};

  std::vector<detail::Team> teams;
  auto team_of = [&](AgentId a) -> detail::Team* {
    for (auto& t : teams)
      if (std::find(t.members.begin(), t.members.end(), a) != t.members.end()) return &t;
    return nullptr;
  };

  auto commit = [&](AgentRuntime& a, TileId goal, bool force = false) {
    if (a.active_goal == goal && !force) return;
    a.active_goal = goal;
    a.policy = detail::policy_for(policies, goal);
    a.window_start = a.obs_log.actions.size();
    a.anchor = s;
    a.model.reset();
    a.best_distance = -1;
    a.last_progress = s.tick;
    a.policy_off = false;
  };
  // Goal for an individual agent: nearest light tile, else the heavy tile
  // closest to everyone (a shared ranking, so idle agents converge).
  auto choose_goal = [&](const AgentRuntime& a) -> TileId {
    const Position here = s.agents[static_cast<std::size_t>(a.id)].pos;
    TileId best = -1;
    int best_d = -1;
    const auto from_here = detail::field_to(s, {here});
    for (TileId t = 0; t < static_cast<TileId>(s.tile_weights.size()); ++t) {
      if (s.tile_weights[static_cast<std::size_t>(t)] != TileWeight::Light) continue;
      auto p = s.tile_position(t);
      if (!p) continue;
      int d = from_here[s.index(*p)];
      if (d >= 0 && (best_d < 0 || d < best_d)) {
        best = t;
        best_d = d;
      }
    }
    if (best >= 0) return best;
    long long best_sum = -1;
    for (TileId t = 0; t < static_cast<TileId>(s.tile_weights.size()); ++t) {
      auto p = s.tile_position(t);
      if (!p) continue;
      const auto f = detail::field_to(s, {*p});
      if (f[s.index(here)] < 0) continue;
      long long sum = 0;
      for (const auto& ag : s.agents) sum += std::max(0, f[s.index(ag.pos)]);
      for (const auto& tm : teams)
        if (tm.target == t) sum += 1000000;  // leave tiles already claimed by a team
      if (best_sum < 0 || sum < best_sum) {
        best = t;
        best_sum = sum;
      }
    }
    return best;
  };

  auto dissolve = [&](std::size_t ti, std::string_view reason) {
    auto team = teams[ti];
    teams.erase(teams.begin() + static_cast<std::ptrdiff_t>(ti));
    for (AgentId m : team.members) {
      auto& a = agents[static_cast<std::size_t>(m)];
      a.mode = AgentMode::Individual;
      a.collaborators.clear();
    }
    ++rep.dissolutions;
    emit({{"type", "dissolve"}, {"tick", s.tick}, {"team", team.members}, {"target", team.target}, {"reason", reason}});
  };

  auto recognise = [&] {
    for (auto& a : agents)
      if (!a.model) {
        a.model = build_agent_model(a.anchor, a.id, policies, landmarks, params.plan_horizon, params.rollouts,
                                    params.rollout_epsilon, rng());
        if (!a.model->empty)
          rep.models.push_back({a.id, s.tick, a.model->tree_nodes, a.model->lbim.node_count(),
                                a.model->rlbim.node_count()});
      }
    const auto started = std::chrono::steady_clock::now();
    auto out = reconsider(agents, params.mode, scenario, landmarks, {params.k, rng()});
    const auto wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    std::map<AgentId, int> truth;
    for (const auto& a : agents) truth[a.id] = a.active_goal;

    RecognitionCall call;
    call.tick = s.tick;
    call.k = out.k;
    call.accuracy = recognition_accuracy(out.clusters, truth);
    call.lcs_cells = out.lcs_cells;
    call.time_ms = params.timing == Timing::Wall
                       ? wall
                       : (static_cast<double>(out.lcs_cells) * kNsPerLcsCell +
                          static_cast<double>(out.kl_terms) * kNsPerKlTerm) * 1e-6;
    emit({{"type", "reconsider"}, {"tick", s.tick}, {"k", out.k}, {"groups", out.clusters.groups},
          {"accuracy", call.accuracy}});

    for (std::size_t ti = 0; ti < out.teams.size(); ++ti) {
      std::vector<AgentId> team;
      for (AgentId m : out.teams[ti])
        if (!s.agents[static_cast<std::size_t>(m)].carrying && !team_of(m)) team.push_back(m);
      if (!scenario.permits(team)) continue;
      // target: the recognised landmark's tile if it is a free heavy tile,
      // else the free heavy tile minimising the farthest member's walk
      std::set<TileId> claimed;
      for (const auto& tm : teams) claimed.insert(tm.target);
      auto usable = [&](TileId t) {
        return t >= 0 && s.tile_weights[static_cast<std::size_t>(t)] == TileWeight::Heavy && s.tile_position(t) &&
               !claimed.count(t);
      };
      TileId target = -1;
      const TileId wanted = landmark_tile[out.intentions[ti]];
      int worst_best = -1;
      for (TileId t = 0; t < static_cast<TileId>(s.tile_weights.size()); ++t) {
        if (!usable(t)) continue;
        const auto f = detail::field_to(s, {*s.tile_position(t)});
        int worst = 0;
        for (AgentId m : team) {
          int d = f[s.index(s.agents[static_cast<std::size_t>(m)].pos)];
          worst = d < 0 ? 1 << 29 : std::max(worst, d);
        }
        if (worst >= 1 << 29) continue;
        if (t == wanted) {
          target = t;
          break;
        }
        if (worst_best < 0 || worst < worst_best) {
          worst_best = worst;
          target = t;
        }
      }
      if (target < 0) continue;
      teams.push_back({team, target, -1, false, s.tick});
      for (AgentId m : team) {
        auto& a = agents[static_cast<std::size_t>(m)];
        a.mode = AgentMode::Collaborative;
        a.collaborators = std::set<AgentId>(team.begin(), team.end());
        a.collaborators.erase(m);
        commit(a, target);
      }
      rep.collaborations.push_back({s.tick, team, target});
      emit({{"type", "collaborate"}, {"tick", s.tick}, {"team", team}, {"target", target}});
    }
    call.teams = static_cast<int>(out.teams.size());
    const auto st = static_cast<std::size_t>(clock.stage_of(s.tick));
    acc_sum[st] += call.accuracy;
    time_sum[st] += call.time_ms;
    ++rep.stages[st].recognition_calls;
    rep.calls.push_back(call);
  };

  for (std::size_t i = 0; i < agents.size(); ++i) {
    agents[i].id = static_cast<AgentId>(i);
    agents[i].obs_log.agent = agents[i].id;
    commit(agents[i], c.agent_goals.empty() ? choose_goal(agents[i]) : c.agent_goals[i], true);
  }

  std::size_t next_stage = 0;
  auto record_stages = [&] {
    while (next_stage < 3 && rep.stages[next_stage].end_tick <= s.tick) {
      auto& m = rep.stages[next_stage];
      m.score = s.total_score();
      m.efficiency = m.end_tick > 0 ? static_cast<double>(m.score) / m.end_tick : 0.0;
      ++next_stage;
    }
  };
  record_stages();

  bool triggered = false;
  std::vector<Event> evs;
  while (!s.finished()) {
    if (recognising && s.tick > 0 && (s.tick % params.recon_period == 0 || triggered)) recognise();
    triggered = false;

    // commitments
    for (std::size_t ti = teams.size(); ti-- > 0;) {
      const auto& tm = teams[ti];
      const bool held = !s.carriers(tm.target).empty();
      if (!held && !s.tile_position(tm.target)) dissolve(ti, "target-lost");
    }
    for (auto& a : agents) {
      if (a.mode != AgentMode::Individual) continue;
      const auto& st = s.agents[static_cast<std::size_t>(a.id)];
      if (st.carrying) {
        commit(a, *st.carrying);
        continue;
      }
      if (a.active_goal < 0 || !s.tile_position(a.active_goal)) commit(a, choose_goal(a));
    }

    // actions
    JointAction ja;
    std::vector<Action> chosen(agents.size(), Action::Up);
    for (auto& a : agents) {
      const auto& st = s.agents[static_cast<std::size_t>(a.id)];
      Action act;
      if (auto* tm = team_of(a.id)) {
        if (st.carrying) {
          // carriers move as one unit, so everyone follows the lead's plan
          const auto& lead = agents[static_cast<std::size_t>(tm->members.front())];
          act = detail::plan_action(s, lead.id, tm->target, lead.policy, true, !lead.policy_off);
        } else {
          auto where = s.tile_position(tm->target);
          bool all_there = where.has_value();
          for (AgentId m : tm->members)
            if (!where || s.agents[static_cast<std::size_t>(m)].pos != *where) all_there = false;
          act = detail::plan_action(s, a.id, tm->target, a.policy, all_there, !a.policy_off);
        }
      } else {
        const bool light = a.active_goal >= 0 &&
                           s.tile_weights[static_cast<std::size_t>(a.active_goal)] == TileWeight::Light;
        act = detail::plan_action(s, a.id, a.active_goal, a.policy, light || st.carrying, !a.policy_off);
      }
      chosen[static_cast<std::size_t>(a.id)] = act;
      ja.push_back({a.id, act});
    }
    emit(detail::step_line(s.tick, ja));
    const int tick = s.tick;
    step_in_place(s, ja, evs);
    for (auto& a : agents) a.obs_log.actions.push_back(chosen[static_cast<std::size_t>(a.id)]);

    for (const auto& e : evs) {
      emit(detail::world_line(tick, e));
      if (e.kind == EventKind::Delivery) {
        ++rep.deliveries;
        if (e.agents.size() > 1) ++rep.joint_deliveries;
        triggered = true;
        for (std::size_t ti = teams.size(); ti-- > 0;)
          if (teams[ti].target == e.tile) dissolve(ti, "delivered");
      }
      if (detail::move_blocked(e)) triggered = true;
    }

    // progress: team walk / carry distance, and a stall guard on the policy
    for (std::size_t ti = teams.size(); ti-- > 0;) {
      auto& tm = teams[ti];
      const bool carrying = !s.carriers(tm.target).empty();
      int metric = 0;
      if (carrying) {
        const auto f = detail::field_to(s, hole_cells(s));
        metric = f[s.index(s.agents[static_cast<std::size_t>(tm.members.front())].pos)];
      } else if (auto where = s.tile_position(tm.target)) {
        const auto f = detail::field_to(s, {*where});
        for (AgentId m : tm.members) metric += std::max(0, f[s.index(s.agents[static_cast<std::size_t>(m)].pos)]);
      }
      if (carrying != tm.carrying || tm.best < 0 || metric < tm.best) {
        tm.carrying = carrying;
        tm.best = metric;
        tm.last_progress = s.tick;
      } else if (s.tick - tm.last_progress > 2 * params.recon_period) {
        dissolve(ti, "stalled");
      }
    }
    for (auto& a : agents) {
      const auto& st = s.agents[static_cast<std::size_t>(a.id)];
      int d = -1;
      if (st.carrying) d = detail::field_to(s, hole_cells(s))[s.index(st.pos)];
      else if (a.active_goal >= 0)
        if (auto p = s.tile_position(a.active_goal)) d = detail::distance(s, st.pos, *p);
      if (d >= 0 && (a.best_distance < 0 || d < a.best_distance)) {
        a.best_distance = d;
        a.last_progress = s.tick;
      } else if (d > 0 && s.tick - a.last_progress > s.rows + s.cols) {
        a.policy_off = true;
      }
    }
    record_stages();
  }

  for (std::size_t i = 0; i < 3; ++i) {
    const int calls = rep.stages[i].recognition_calls;
    rep.stages[i].accuracy = calls ? acc_sum[i] / calls : 0.0;
    rep.stages[i].recognition_time_ms = calls ? time_sum[i] / calls : 0.0;
  }
  for (const auto& a : s.agents) rep.agent_scores.push_back(a.score);
  rep.total_score = s.total_score();
  for (const auto& col : rep.collaborations)
    if (!scenario.permits(col.team)) rep.collaborations_legal = false;
  emit(detail::end_line(s));
  return rep;
}

// ---------------------------------------------------------------------------
// Replay

struct ReplayResult {
  bool consistent = true;
  int ticks = 0;
  int total_score = 0;
  int collaborations = 0;
  bool collaborations_legal = true;
  std::string message;
};

/// Re-executes the logged joint actions from the logged layout and checks
/// every world event, the final scores and the legality of every
/// collaboration against the logged constraint.
inline ReplayResult replay(std::istream& in) {
  ReplayResult r;
  std::string line;
  std::optional<WorldState> s;
  ScenarioConstraint sc;
  std::vector<Event> produced;
  std::size_t cursor = 0;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    if (r.consistent) r.message = "line " + std::to_string(lineno) + ": " + msg;
    r.consistent = false;
  };
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        const auto c = j.at("config").get<WorldConfig>();
        s = init_world(c, j.at("seed").get<std::uint64_t>());
        sc = j.at("constraint").get<ScenarioConstraint>();
        continue;
      }
      if (!s) throw Error(ErrorCode::ParseError, "event log does not start with a header");
      if (type == "step") {
        if (cursor != produced.size()) fail("missing world events before tick " + std::to_string(j["tick"].get<int>()));
        if (j.at("tick").get<int>() != s->tick) fail("tick out of order");
        JointAction ja;
        for (const auto& a : j.at("actions")) ja.push_back({a[0].get<AgentId>(), action_from_string(a[1].get<std::string>())});
        step_in_place(*s, ja, produced);
        cursor = 0;
        ++r.ticks;
      } else if (type == "world") {
        nlohmann::json logged = j;
        logged.erase("type");
        logged.erase("tick");
        if (cursor >= produced.size()) {
          fail("logged event has no counterpart");
          continue;
        }
        if (nlohmann::json(produced[cursor]) != logged) fail("event differs: " + logged.dump());
        ++cursor;
      } else if (type == "collaborate") {
        ++r.collaborations;
        if (!sc.permits(j.at("team").get<std::vector<AgentId>>())) r.collaborations_legal = false;
      } else if (type == "end") {
        if (cursor != produced.size()) fail("missing world events at end");
        std::vector<int> scores;
        for (const auto& a : s->agents) scores.push_back(a.score);
        if (scores != j.at("scores").get<std::vector<int>>()) fail("final scores differ");
        if (s->total_score() != j.at("total").get<int>()) fail("total score differs");
        if (s->tick != j.at("tick").get<int>()) fail("final tick differs");
        r.total_score = s->total_score();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("event log: ") + e.what());
  }
  if (!s) throw Error(ErrorCode::ParseError, "empty event log");
  return r;
}

}  // namespace intent
