#pragma once

// Tileworld: a deterministic grid MDP with tiles, holes and obstacles.
//
// Agents move in four directions, pick up tiles, drop them into holes for
// 10 points and push obstacles one cell along their facing direction.
// Heavy tiles need at least two co-located agents issuing Pick on the same
// tick; the carriers then move and drop as one unit and split the score.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <compare>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "intent/error.hpp"

namespace intent {

using AgentId = int;
using TileId = int;

inline constexpr int kDeliveryPoints = 10;

enum class Action : std::uint8_t { Up, Down, Left, Right, Pick, Drop, Push };

inline constexpr std::array<Action, 7> kAllActions = {
    Action::Up, Action::Down, Action::Left, Action::Right,
    Action::Pick, Action::Drop, Action::Push};
inline constexpr std::size_t kActionCount = kAllActions.size();

constexpr std::string_view to_string(Action a) {
  switch (a) {
    case Action::Up: return "Up";
    case Action::Down: return "Down";
    case Action::Left: return "Left";
    case Action::Right: return "Right";
    case Action::Pick: return "Pick";
    case Action::Drop: return "Drop";
    case Action::Push: return "Push";
  }
  return "?";
}

inline Action action_from_string(std::string_view s) {
  for (Action a : kAllActions)
    if (to_string(a) == s) return a;
  throw Error(ErrorCode::ParseError, "unknown action '" + std::string(s) + "'");
}

constexpr bool is_move(Action a) { return static_cast<int>(a) < 4; }

struct Position {
  int row = 0;
  int col = 0;
  auto operator<=>(const Position&) const = default;
};

inline int manhattan(Position a, Position b) {
  return std::abs(a.row - b.row) + std::abs(a.col - b.col);
}

// Facing is one of the four move actions; Push acts along it.
inline Position offset(Position p, Action dir) {
  switch (dir) {
    case Action::Up: return {p.row - 1, p.col};
    case Action::Down: return {p.row + 1, p.col};
    case Action::Left: return {p.row, p.col - 1};
    case Action::Right: return {p.row, p.col + 1};
    default: return p;
  }
}

enum class TileWeight : std::uint8_t { Light, Heavy };
enum class CellKind : std::uint8_t { Empty, Tile, Hole, Obstacle };

struct CellContent {
  CellKind kind = CellKind::Empty;
  TileWeight weight = TileWeight::Light;  // meaningful only for Tile
  TileId tile = -1;                     // meaningful only for Tile

  static CellContent empty() { return {}; }
  static CellContent make_tile(TileId id, TileWeight w) { return {CellKind::Tile, w, id}; }
  static CellContent hole() { return {CellKind::Hole, TileWeight::Light, -1}; }
  static CellContent obstacle() { return {CellKind::Obstacle, TileWeight::Light, -1}; }

  bool operator==(const CellContent&) const = default;
};

// ---------------------------------------------------------------------------
// StateId

/// Canonical encoding of what one agent observes: its position, whether it
/// carries a tile, its facing, and the cell contents in a square window.
/// Equality and hashing use the encoded string only.
class StateId {
 public:
  StateId() = default;
  explicit StateId(std::string key) : key_(std::move(key)) { parse_position(); }

  const std::string& key() const noexcept { return key_; }
  Position position() const noexcept { return pos_; }
  bool empty() const noexcept { return key_.empty(); }

  bool operator==(const StateId& o) const noexcept { return key_ == o.key_; }
  bool operator<(const StateId& o) const noexcept { return key_ < o.key_; }

 private:
  void parse_position() {
    // "row,col|..." ; malformed keys keep position (-1,-1).
    pos_ = {-1, -1};
    auto comma = key_.find(',');
    auto bar = key_.find('|');
    if (comma == std::string::npos || bar == std::string::npos || comma > bar) return;
    try {
      pos_.row = std::stoi(key_.substr(0, comma));
      pos_.col = std::stoi(key_.substr(comma + 1, bar - comma - 1));
    } catch (...) {
      pos_ = {-1, -1};
    }
  }

  std::string key_;
  Position pos_{-1, -1};
};

}  // namespace intent

template <>
struct std::hash<intent::StateId> {
  std::size_t operator()(const intent::StateId& s) const noexcept {
    return std::hash<std::string>{}(s.key());
  }
};

namespace intent {

// ---------------------------------------------------------------------------
// Configuration

struct LayoutGenerator {
  int tiles = 0;
  int heavy = 0;
  int holes = 0;
  int obstacles = 0;
  int agents = 1;
  // Agents are split round-robin into this many groups sharing a target tile.
  int planted_groups = 0;
  bool landmarks_at_tiles = true;
};

/// Scenario description. Tile ids are indices into `tiles`.
struct WorldConfig {
  int rows = 0;
  int cols = 0;
  int horizon = 0;
  std::uint64_t seed = 0;
  std::vector<Position> tiles;
  std::vector<Position> heavy;  // subset of tiles
  std::vector<Position> holes;
  std::vector<Position> obstacles;
  std::vector<Position> agents;
  std::vector<Position> landmarks;
  std::vector<TileId> agent_goals;  // optional initial goals, one per agent
  std::optional<LayoutGenerator> generate;

  bool is_heavy(TileId t) const {
    return std::find(heavy.begin(), heavy.end(), tiles.at(t)) != heavy.end();
  }
  std::size_t agent_count() const {
    return generate ? static_cast<std::size_t>(generate->agents) : agents.size();
  }
};

inline void to_json(nlohmann::json& j, const Position& p) { j = nlohmann::json::array({p.row, p.col}); }

inline void from_json(const nlohmann::json& j, Position& p) {
  if (!j.is_array() || j.size() != 2)
    throw Error(ErrorCode::ParseError, "position must be [row, col]");
  p.row = j[0].get<int>();
  p.col = j[1].get<int>();
}

inline void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = nlohmann::json{{"rows", c.rows},       {"cols", c.cols},   {"horizon", c.horizon},
                     {"seed", c.seed},       {"tiles", c.tiles}, {"heavy", c.heavy},
                     {"holes", c.holes},     {"obstacles", c.obstacles},
                     {"agents", c.agents},   {"landmarks", c.landmarks}};
  if (!c.agent_goals.empty()) j["agent_goals"] = c.agent_goals;
  if (c.generate) {
    const auto& g = *c.generate;
    j["generate"] = {{"tiles", g.tiles},         {"heavy", g.heavy},
                     {"holes", g.holes},         {"obstacles", g.obstacles},
                     {"agents", g.agents},       {"planted_groups", g.planted_groups},
                     {"landmarks", g.landmarks_at_tiles ? "tiles" : "none"}};
  }
}

inline void from_json(const nlohmann::json& j, WorldConfig& c) {
  try {
    c = WorldConfig{};
    c.rows = j.at("rows").get<int>();
    c.cols = j.at("cols").get<int>();
    if (j.contains("horizon")) c.horizon = j["horizon"].get<int>();
    else c.horizon = j.at("T").get<int>();
    c.seed = j.value("seed", std::uint64_t{0});
    auto cells = [&](const char* key) {
      return j.contains(key) ? j[key].get<std::vector<Position>>() : std::vector<Position>{};
    };
    c.tiles = cells("tiles");
    c.heavy = cells("heavy");
    c.holes = cells("holes");
    c.obstacles = cells("obstacles");
    c.agents = cells("agents");
    if (j.contains("landmarks")) {
      if (j["landmarks"].is_string()) {
        if (j["landmarks"].get<std::string>() != "tiles")
          throw Error(ErrorCode::ParseError, "landmarks must be a cell list or \"tiles\"");
        c.landmarks = c.tiles;
      } else {
        c.landmarks = cells("landmarks");
      }
    }
    if (j.contains("agent_goals")) c.agent_goals = j["agent_goals"].get<std::vector<TileId>>();
    if (j.contains("generate")) {
      const auto& g = j["generate"];
      LayoutGenerator gen;
      gen.tiles = g.value("tiles", 0);
      gen.heavy = g.value("heavy", 0);
      if (g.contains("heavy_fraction"))
        gen.heavy = static_cast<int>(std::ceil(g["heavy_fraction"].get<double>() * gen.tiles - 1e-9));
      gen.holes = g.value("holes", 0);
      gen.obstacles = g.value("obstacles", 0);
      gen.agents = g.value("agents", 1);
      gen.planted_groups = g.value("planted_groups", 0);
      gen.landmarks_at_tiles = g.value("landmarks", std::string("tiles")) == "tiles";
      c.generate = gen;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

// ---------------------------------------------------------------------------
// State

struct AgentState {
  Position pos;
  std::optional<TileId> carrying;
  int score = 0;
  Action facing = Action::Up;

  bool operator==(const AgentState&) const = default;
};

struct WorldState {
  int rows = 0;
  int cols = 0;
  int horizon = 0;
  int tick = 0;
  std::vector<CellContent> grid;  // row-major
  std::vector<AgentState> agents;
  std::vector<TileWeight> tile_weights;  // indexed by tile id
  std::vector<TileId> delivered;
  TileId solo_lift = -1;  // planning copies: this tile lifts alone whatever its weight

  bool in_bounds(Position p) const { return p.row >= 0 && p.col >= 0 && p.row < rows && p.col < cols; }
  std::size_t index(Position p) const { return static_cast<std::size_t>(p.row * cols + p.col); }
  const CellContent& at(Position p) const { return grid[index(p)]; }
  CellContent& at(Position p) { return grid[index(p)]; }
  bool finished() const { return tick >= horizon; }

  int tiles_on_grid() const {
    return static_cast<int>(std::count_if(grid.begin(), grid.end(),
                                          [](const CellContent& c) { return c.kind == CellKind::Tile; }));
  }
  int tiles_carried() const {
    std::set<TileId> ids;
    for (const auto& a : agents)
      if (a.carrying) ids.insert(*a.carrying);
    return static_cast<int>(ids.size());
  }
  int total_score() const {
    int s = 0;
    for (const auto& a : agents) s += a.score;
    return s;
  }
  std::optional<Position> tile_position(TileId t) const {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        if (grid[r * cols + c].kind == CellKind::Tile && grid[r * cols + c].tile == t) return Position{r, c};
    return std::nullopt;
  }
  std::vector<AgentId> carriers(TileId t) const {
    std::vector<AgentId> out;
    for (std::size_t i = 0; i < agents.size(); ++i)
      if (agents[i].carrying == t) out.push_back(static_cast<AgentId>(i));
    return out;
  }

  bool operator==(const WorldState&) const = default;
};

// ---------------------------------------------------------------------------
// Events

enum class EventKind : std::uint8_t { Move, Pick, JointPick, Delivery, Drop, Push, Blocked };

constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Move: return "move";
    case EventKind::Pick: return "pick";
    case EventKind::JointPick: return "joint_pick";
    case EventKind::Delivery: return "delivery";
    case EventKind::Drop: return "drop";
    case EventKind::Push: return "push";
    case EventKind::Blocked: return "blocked";
  }
  return "?";
}

struct Event {
  EventKind kind = EventKind::Move;
  std::vector<AgentId> agents;
  Action action = Action::Up;
  Position from;
  Position to;
  TileId tile = -1;
  int points = 0;
  std::string reason;

  bool operator==(const Event&) const = default;
};

inline void to_json(nlohmann::json& j, const Event& e) {
  j = nlohmann::json{{"kind", to_string(e.kind)}, {"agents", e.agents}, {"action", to_string(e.action)},
                     {"from", e.from},            {"to", e.to}};
  if (e.tile >= 0) j["tile"] = e.tile;
  if (e.points) j["points"] = e.points;
  if (!e.reason.empty()) j["reason"] = e.reason;
}

using JointAction = std::vector<std::pair<AgentId, Action>>;

// ---------------------------------------------------------------------------
// Construction

namespace detail {

inline void require_config(bool ok, const std::string& msg) {
  if (!ok) throw Error(ErrorCode::InvalidConfig, msg);
}

inline bool all_open_cells_connected(int rows, int cols, const std::vector<char>& blocked) {
  std::vector<char> seen(blocked.size(), 0);
  int open = 0;
  int start = -1;
  for (int i = 0; i < rows * cols; ++i)
    if (!blocked[i]) {
      ++open;
      if (start < 0) start = i;
    }
  if (open == 0) return false;
  std::deque<int> queue{start};
  seen[start] = 1;
  int reached = 0;
  while (!queue.empty()) {
    int i = queue.front();
    queue.pop_front();
    ++reached;
    int r = i / cols, c = i % cols;
    const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
    for (auto [nr, nc] : nbr) {
      if (nr < 0 || nc < 0 || nr >= rows || nc >= cols) continue;
      int k = nr * cols + nc;
      if (blocked[k] || seen[k]) continue;
      seen[k] = 1;
      queue.push_back(k);
    }
  }
  return reached == open;
}

}  // namespace detail

inline void validate(const WorldConfig& c) {
  using detail::require_config;
  require_config(c.rows >= 2 && c.cols >= 2, "grid must be at least 2x2");
  require_config(c.horizon >= 1, "horizon must be positive");
  std::set<Position> used;
  auto in = [&](Position p) { return p.row >= 0 && p.col >= 0 && p.row < c.rows && p.col < c.cols; };
  auto place = [&](const std::vector<Position>& cells, const char* what) {
    for (auto p : cells) {
      require_config(in(p), std::string(what) + " out of bounds");
      require_config(used.insert(p).second, std::string(what) + " overlaps another placement");
    }
  };
  place(c.tiles, "tile");
  place(c.holes, "hole");
  place(c.obstacles, "obstacle");
  std::set<Position> starts;
  for (auto p : c.agents) {
    require_config(in(p), "agent out of bounds");
    require_config(std::find(c.obstacles.begin(), c.obstacles.end(), p) == c.obstacles.end(),
                   "agent placed on obstacle");
    require_config(starts.insert(p).second, "two agents share a start cell");
  }
  for (auto p : c.heavy)
    require_config(std::find(c.tiles.begin(), c.tiles.end(), p) != c.tiles.end(), "heavy cell is not a tile");
  std::set<Position> marks;
  for (auto p : c.landmarks) {
    require_config(in(p), "landmark out of bounds");
    require_config(marks.insert(p).second, "duplicate landmark cell");
  }
  for (auto g : c.agent_goals)
    require_config(g >= 0 && g < static_cast<int>(c.tiles.size()), "agent goal is not a tile id");
  require_config(c.agent_goals.empty() || c.agent_goals.size() == c.agents.size(),
                 "agent_goals must list one goal per agent");
}

/// Expand a generated layout into explicit placements. Explicit configs are
/// returned unchanged (after validation).
inline WorldConfig resolve(const WorldConfig& config, std::uint64_t seed) {
  if (!config.generate) {
    validate(config);
    return config;
  }
  const LayoutGenerator& g = *config.generate;
  detail::require_config(config.rows >= 2 && config.cols >= 2, "grid must be at least 2x2");
  detail::require_config(g.heavy <= g.tiles && g.agents >= 1, "bad generator counts");
  const int cells = config.rows * config.cols;
  detail::require_config(g.tiles + g.holes + g.obstacles + g.agents <= cells, "generator needs more cells than the grid has");

  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 500; ++attempt) {
    std::vector<int> order(cells);
    for (int i = 0; i < cells; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> blocked(cells, 0);
    for (int i = 0; i < g.obstacles; ++i) blocked[order[i]] = 1;
    if (!detail::all_open_cells_connected(config.rows, config.cols, blocked)) continue;

    WorldConfig out = config;
    out.generate.reset();
    out.tiles.clear();
    out.heavy.clear();
    out.holes.clear();
    out.obstacles.clear();
    out.agents.clear();
    auto pos = [&](int i) { return Position{i / config.cols, i % config.cols}; };
    int k = 0;
    for (int i = 0; i < g.obstacles; ++i) out.obstacles.push_back(pos(order[k++]));
    for (int i = 0; i < g.tiles; ++i) out.tiles.push_back(pos(order[k++]));
    for (int i = 0; i < g.holes; ++i) out.holes.push_back(pos(order[k++]));
    for (int i = 0; i < g.agents; ++i) out.agents.push_back(pos(order[k++]));
    for (int i = 0; i < g.heavy; ++i) out.heavy.push_back(out.tiles[i]);
    if (g.landmarks_at_tiles) out.landmarks = out.tiles;
    if (g.planted_groups > 0) {
      detail::require_config(g.planted_groups <= g.tiles, "planted_groups exceeds tile count");
      out.agent_goals.clear();
      for (int i = 0; i < g.agents; ++i) out.agent_goals.push_back(i % g.planted_groups);
    }
    validate(out);
    return out;
  }
  throw Error(ErrorCode::InvalidConfig, "could not generate a connected layout");
}

inline WorldState init_world(const WorldConfig& config, std::uint64_t seed) {
  const WorldConfig c = resolve(config, seed);
  WorldState s;
  s.rows = c.rows;
  s.cols = c.cols;
  s.horizon = c.horizon;
  s.grid.assign(static_cast<std::size_t>(c.rows * c.cols), CellContent::empty());
  for (std::size_t t = 0; t < c.tiles.size(); ++t) {
    TileWeight w = c.is_heavy(static_cast<TileId>(t)) ? TileWeight::Heavy : TileWeight::Light;
    s.tile_weights.push_back(w);
    s.at(c.tiles[t]) = CellContent::make_tile(static_cast<TileId>(t), w);
  }
  for (auto p : c.holes) s.at(p) = CellContent::hole();
  for (auto p : c.obstacles) s.at(p) = CellContent::obstacle();
  for (auto p : c.agents) s.agents.push_back(AgentState{p, std::nullopt, 0, Action::Up});
  return s;
}

// ---------------------------------------------------------------------------
// Transition

namespace detail {

struct Unit {
  std::vector<AgentId> members;  // sorted ascending
  std::optional<Action> action;
  AgentId lead() const { return members.front(); }
};

inline Event blocked(const WorldState& s, std::vector<AgentId> agents, Action a, std::string reason) {
  Position p = s.agents[agents.front()].pos;
  return Event{EventKind::Blocked, std::move(agents), a, p, p, -1, 0, std::move(reason)};
}

inline void award(WorldState& s, const std::vector<AgentId>& carriers) {
  const int n = static_cast<int>(carriers.size());
  const int share = kDeliveryPoints / n;
  for (AgentId a : carriers) s.agents[a].score += share;
  s.agents[carriers.front()].score += kDeliveryPoints - share * n;
}

}  // namespace detail

/// Advance the world by one tick in place. Agents absent from `actions` idle.
/// Phases run in a fixed order: Push, Move, Pick, Drop.
inline void step_in_place(WorldState& s, const JointAction& actions, std::vector<Event>& events) {
  events.clear();
  if (s.finished()) throw Error(ErrorCode::EpisodeFinished, "tick " + std::to_string(s.tick) + " reached horizon");
  const int n = static_cast<int>(s.agents.size());
  std::vector<std::optional<Action>> chosen(n);
  for (auto [id, a] : actions) {
    if (id < 0 || id >= n) throw Error(ErrorCode::UnknownAgent, "agent " + std::to_string(id));
    chosen[id] = a;
  }

  using detail::Unit;
  std::vector<Unit> units;
  std::vector<char> grouped(n, 0);
  for (AgentId i = 0; i < n; ++i) {
    if (grouped[i]) continue;
    const auto& ag = s.agents[i];
    std::vector<AgentId> members{i};
    if (ag.carrying) {
      members = s.carriers(*ag.carrying);
    }
    for (AgentId m : members) grouped[m] = 1;
    if (members.size() == 1) {
      units.push_back(Unit{members, chosen[i]});
      continue;
    }
    // Joint carriers act only when every member issues the same action.
    bool any = false, all = true, same = true;
    std::optional<Action> first;
    for (AgentId m : members) {
      if (chosen[m]) {
        any = true;
        if (!first) first = chosen[m];
        else if (*first != *chosen[m]) same = false;
      } else {
        all = false;
      }
    }
    if (!any) {
      units.push_back(Unit{members, std::nullopt});
    } else if (all && same) {
      units.push_back(Unit{members, first});
    } else {
      for (AgentId m : members)
        if (chosen[m]) events.push_back(detail::blocked(s, {m}, *chosen[m], "joint-disagreement"));
      units.push_back(Unit{members, std::nullopt});
    }
  }

  // Push
  for (auto& u : units) {
    if (u.action != Action::Push) continue;
    if (u.members.size() > 1) {
      events.push_back(detail::blocked(s, u.members, Action::Push, "carrying-heavy"));
      continue;
    }
    const auto& ag = s.agents[u.lead()];
    Position front = offset(ag.pos, ag.facing);
    Position beyond = offset(front, ag.facing);
    bool ok = s.in_bounds(front) && s.at(front).kind == CellKind::Obstacle && s.in_bounds(beyond) &&
              s.at(beyond).kind == CellKind::Empty;
    if (ok)
      for (const auto& other : s.agents)
        if (other.pos == beyond) ok = false;
    if (!ok) {
      events.push_back(detail::blocked(s, u.members, Action::Push, "push-failed"));
      continue;
    }
    s.at(beyond) = CellContent::obstacle();
    s.at(front) = CellContent::empty();
    events.push_back(Event{EventKind::Push, u.members, Action::Push, front, beyond, -1, 0, {}});
  }

  // Move: lowest agent id wins a contested target cell.
  std::map<Position, std::vector<std::size_t>> claims;
  for (std::size_t k = 0; k < units.size(); ++k) {
    auto& u = units[k];
    if (!u.action || !is_move(*u.action)) continue;
    for (AgentId m : u.members) s.agents[m].facing = *u.action;
    Position target = offset(s.agents[u.lead()].pos, *u.action);
    if (!s.in_bounds(target)) {
      events.push_back(detail::blocked(s, u.members, *u.action, "out-of-bounds"));
      continue;
    }
    if (s.at(target).kind == CellKind::Obstacle) {
      events.push_back(detail::blocked(s, u.members, *u.action, "obstacle"));
      continue;
    }
    claims[target].push_back(k);
  }
  for (auto& [target, ks] : claims) {
    // units are ordered by lead id, so ks.front() has the lowest id
    for (std::size_t idx = 0; idx < ks.size(); ++idx) {
      auto& u = units[ks[idx]];
      if (idx > 0) {
        events.push_back(detail::blocked(s, u.members, *u.action, "contested-cell"));
        continue;
      }
      Position from = s.agents[u.lead()].pos;
      for (AgentId m : u.members) s.agents[m].pos = target;
      events.push_back(Event{EventKind::Move, u.members, *u.action, from, target, -1, 0, {}});
    }
  }

  // Pick: group single pickers by cell.
  std::map<Position, std::vector<AgentId>> pickers;
  for (auto& u : units) {
    if (u.action != Action::Pick) continue;
    if (u.members.size() > 1 || s.agents[u.lead()].carrying) {
      events.push_back(detail::blocked(s, u.members, Action::Pick, "already-carrying"));
      continue;
    }
    pickers[s.agents[u.lead()].pos].push_back(u.lead());
  }
  for (auto& [cell, ids] : pickers) {
    CellContent& content = s.at(cell);
    if (content.kind != CellKind::Tile) {
      for (AgentId a : ids) events.push_back(detail::blocked(s, {a}, Action::Pick, "no-tile"));
      continue;
    }
    const TileId tile = content.tile;
    if (content.weight == TileWeight::Light || tile == s.solo_lift) {
      s.agents[ids.front()].carrying = tile;
      events.push_back(Event{EventKind::Pick, {ids.front()}, Action::Pick, cell, cell, tile, 0, {}});
      for (std::size_t k = 1; k < ids.size(); ++k)
        events.push_back(detail::blocked(s, {ids[k]}, Action::Pick, "tile-taken"));
      content = CellContent::empty();
    } else if (ids.size() >= 2) {
      for (AgentId a : ids) s.agents[a].carrying = tile;
      events.push_back(Event{EventKind::JointPick, ids, Action::Pick, cell, cell, tile, 0, {}});
      content = CellContent::empty();
    } else {
      events.push_back(detail::blocked(s, ids, Action::Pick, "heavy-needs-two"));
    }
  }

  // Drop
  for (auto& u : units) {
    if (u.action != Action::Drop) continue;
    const auto& lead = s.agents[u.lead()];
    if (!lead.carrying) {
      events.push_back(detail::blocked(s, u.members, Action::Drop, "not-carrying"));
      continue;
    }
    const TileId tile = *lead.carrying;
    const Position cell = lead.pos;
    CellContent& content = s.at(cell);
    if (content.kind == CellKind::Hole) {
      for (AgentId m : u.members) s.agents[m].carrying.reset();
      detail::award(s, u.members);
      s.delivered.push_back(tile);
      events.push_back(Event{EventKind::Delivery, u.members, Action::Drop, cell, cell, tile, kDeliveryPoints, {}});
    } else if (content.kind == CellKind::Empty) {
      for (AgentId m : u.members) s.agents[m].carrying.reset();
      content = CellContent::make_tile(tile, s.tile_weights[tile]);
      events.push_back(Event{EventKind::Drop, u.members, Action::Drop, cell, cell, tile, 0, {}});
    } else {
      events.push_back(detail::blocked(s, u.members, Action::Drop, "cell-occupied"));
    }
  }

  ++s.tick;
}

inline std::pair<WorldState, std::vector<Event>> step(const WorldState& state, const JointAction& actions) {
  WorldState next = state;
  std::vector<Event> events;
  step_in_place(next, actions, events);
  return {std::move(next), std::move(events)};
}

// ---------------------------------------------------------------------------
// Observation

inline constexpr int kDefaultObservationRadius = 2;

inline char cell_glyph(const WorldState& s, Position p) {
  if (!s.in_bounds(p)) return '#';
  const auto& c = s.at(p);
  switch (c.kind) {
    case CellKind::Empty: return '.';
    case CellKind::Tile: return c.weight == TileWeight::Heavy ? 'T' : 't';
    case CellKind::Hole: return 'o';
    case CellKind::Obstacle: return 'x';
  }
  return '?';
}

/// Encoding: "row,col|carry|facing|window" with the window read row-major.
inline StateId observe(const WorldState& s, AgentId agent, int radius = kDefaultObservationRadius) {
  if (agent < 0 || agent >= static_cast<int>(s.agents.size()))
    throw Error(ErrorCode::UnknownAgent, "agent " + std::to_string(agent));
  const auto& a = s.agents[agent];
  std::string key;
  key.reserve(16 + static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)));
  key += std::to_string(a.pos.row);
  key += ',';
  key += std::to_string(a.pos.col);
  key += '|';
  key += a.carrying ? '1' : '0';
  key += '|';
  key += "UDLR"[static_cast<int>(a.facing)];
  key += '|';
  for (int dr = -radius; dr <= radius; ++dr)
    for (int dc = -radius; dc <= radius; ++dc) key += cell_glyph(s, {a.pos.row + dr, a.pos.col + dc});
  return StateId(std::move(key));
}

// ---------------------------------------------------------------------------
// Helpers shared by planners

/// BFS distances to `target` over non-obstacle cells; -1 marks unreachable.
inline std::vector<int> distance_field(const WorldState& s, Position target) {
  std::vector<int> dist(s.grid.size(), -1);
  if (!s.in_bounds(target) || s.at(target).kind == CellKind::Obstacle) return dist;
  std::deque<Position> queue{target};
  dist[s.index(target)] = 0;
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

/// Move actions from `from` that decrease the distance field, in action order.
inline std::vector<Action> descending_moves(const WorldState& s, const std::vector<int>& dist, Position from) {
  std::vector<Action> out;
  const int here = dist[s.index(from)];
  if (here <= 0) return out;
  for (Action dir : {Action::Up, Action::Down, Action::Left, Action::Right}) {
    Position q = offset(from, dir);
    if (s.in_bounds(q) && dist[s.index(q)] >= 0 && dist[s.index(q)] < here) out.push_back(dir);
  }
  return out;
}

inline std::vector<Position> hole_cells(const WorldState& s) {
  std::vector<Position> out;
  for (int r = 0; r < s.rows; ++r)
    for (int c = 0; c < s.cols; ++c)
      if (s.grid[r * s.cols + c].kind == CellKind::Hole) out.push_back({r, c});
  return out;
}

/// Copy of `s` containing only `agent` (re-indexed as agent 0).
inline WorldState isolate(const WorldState& s, AgentId agent) {
  WorldState out = s;
  out.agents = {s.agents.at(agent)};
  out.agents[0].score = 0;
  if (out.agents[0].carrying && s.carriers(*out.agents[0].carrying).size() > 1) out.agents[0].carrying.reset();
  return out;
}

}  // namespace intent
