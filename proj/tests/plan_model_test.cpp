#include <gtest/gtest.h>

#include <deque>
#include <map>
#include <random>
#include <set>

#include "intent/plan_model.hpp"

namespace intent {
namespace {

// Shortest delivering plan over (cell, carrying) without pushes, by plain BFS.
int brute_force_delivery_length(const WorldConfig& c) {
  auto blocked = [&](Position p) {
    return p.row < 0 || p.col < 0 || p.row >= c.rows || p.col >= c.cols ||
           std::find(c.obstacles.begin(), c.obstacles.end(), p) != c.obstacles.end();
  };
  const Position tile = c.tiles.at(0), hole = c.holes.at(0);
  std::map<std::pair<Position, bool>, int> dist;
  std::deque<std::pair<Position, bool>> q;
  dist[{c.agents[0], false}] = 0;
  q.push_back({c.agents[0], false});
  const Position dirs[] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  while (!q.empty()) {
    auto [p, carrying] = q.front();
    q.pop_front();
    const int d = dist[{p, carrying}];
    if (carrying && p == hole) return d + 1;
    std::vector<std::pair<Position, bool>> next;
    for (auto dir : dirs) {
      Position n{p.row + dir.row, p.col + dir.col};
      // the tile cell blocks nothing; the hole cell is walkable
      if (!blocked(n)) next.push_back({n, carrying});
    }
    if (!carrying && p == tile) next.push_back({p, true});
    for (auto s : next)
      if (!dist.count(s)) {
        dist[s] = d + 1;
        q.push_back(s);
      }
  }
  return -1;
}

WorldConfig adjacent_tile_world() {
  WorldConfig c;
  c.rows = 5;
  c.cols = 5;
  c.horizon = 20;
  c.agents = {{4, 0}};
  c.tiles = {{1, 3}};
  c.holes = {{1, 4}};
  c.obstacles = {{2, 1}, {3, 3}};
  return c;
}

int greedy_delivery_steps(const Policy& p, const WorldConfig& c) {
  auto s = init_world(c, 0);
  std::vector<Event> ev;
  for (int t = 1; !s.finished(); ++t) {
    step_in_place(s, {{0, p.greedy(observe(s, 0))}}, ev);
    for (const auto& e : ev)
      if (e.kind == EventKind::Delivery) return t;
  }
  return -1;
}

TEST(LearnPolicy, GreedyPlanIsNearShortest) {
  const auto c = adjacent_tile_world();
  const int shortest = brute_force_delivery_length(c);
  ASSERT_GT(shortest, 0);
  ASSERT_LE(shortest, 20);
  QLearningParams hp;
  hp.episodes = 2000;
  auto p = learn_policy(c, 0, hp, 7);
  EXPECT_DOUBLE_EQ(p.success_rate, 1.0);
  const int steps = greedy_delivery_steps(p, c);
  ASSERT_GT(steps, 0);
  EXPECT_LE(steps, 20);
  EXPECT_LE(std::abs(steps - shortest), 2);
}

TEST(LearnPolicy, SameSeedSameTable) {
  const auto c = adjacent_tile_world();
  QLearningParams hp;
  hp.episodes = 300;
  auto a = learn_policy(c, 0, hp, 99);
  auto b = learn_policy(c, 0, hp, 99);
  EXPECT_EQ(a.q_values, b.q_values);
  for (const auto& [s, row] : a.q_values)
    for (double q : row) ASSERT_TRUE(std::isfinite(q));
}

TEST(LearnPolicy, SealedGoalHasZeroSuccess) {
  WorldConfig c;
  c.rows = 5;
  c.cols = 5;
  c.horizon = 30;
  c.tiles = {{0, 0}};
  // pushing either wall would need the tile cell or the outside to be empty
  c.obstacles = {{0, 1}, {1, 0}};
  c.holes = {{4, 0}};
  c.agents = {{4, 4}};
  QLearningParams hp;
  hp.episodes = 300;
  auto p = learn_policy(c, 0, hp, 1);
  EXPECT_DOUBLE_EQ(p.success_rate, 0.0);
}

TEST(LearnPolicy, Preconditions) {
  const auto c = adjacent_tile_world();
  QLearningParams hp;
  EXPECT_THROW(learn_policy(c, 4, hp, 0), Error);
  hp.alpha = 0.0;
  EXPECT_THROW(learn_policy(c, 0, hp, 0), Error);
  hp.alpha = 0.5;
  hp.gamma = 1.5;
  EXPECT_THROW(learn_policy(c, 0, hp, 0), Error);
}

TEST(Rollout, GreedyGivesIdenticalSequences) {
  const auto c = adjacent_tile_world();
  QLearningParams hp;
  hp.episodes = 2000;
  hp.rollout_epsilon = 0.0;
  auto p = learn_policy(c, 0, hp, 3);
  auto seqs = rollout(p, c, 5, 20, 11);
  ASSERT_EQ(seqs.size(), 5u);
  for (const auto& s : seqs) EXPECT_EQ(s, seqs.front());
  EXPECT_EQ(seqs.front().terminal, GoalOutcome::reached(0));
  EXPECT_EQ(build_tree(seqs).path_count(), 1u);
}

TEST(Rollout, CountMustBePositive) {
  Policy p;
  p.goal = 0;
  EXPECT_THROW(rollout(p, adjacent_tile_world(), 0, 10, 0), Error);
}

// All 7^3 action strings on a 2x2 world: which of them deliver within three steps.
TEST(Rollout, RandomPlansOnTinyWorldMatchEnumeration) {
  WorldConfig c;
  c.rows = 2;
  c.cols = 2;
  c.horizon = 3;
  c.agents = {{0, 0}};
  c.tiles = {{0, 0}};
  c.holes = {{0, 1}};
  const auto s0 = init_world(c, 0);
  std::set<std::vector<Action>> delivering;
  int total = 0;
  for (auto a : kAllActions)
    for (auto b : kAllActions)
      for (auto d : kAllActions) {
        ++total;
        auto s = s0;
        std::vector<Event> ev;
        std::vector<Action> acts{a, b, d};
        for (std::size_t k = 0; k < acts.size(); ++k) {
          step_in_place(s, {{0, acts[k]}}, ev);
          if (!ev.empty() && ev[0].kind == EventKind::Delivery) {
            delivering.insert(std::vector<Action>(acts.begin(), acts.begin() + k + 1));
            break;
          }
        }
      }
  ASSERT_EQ(total, 343);
  // Pick then Right then Drop is the only way in; every other string ends Null
  EXPECT_EQ(delivering.size(), 1u);

  Policy p;
  p.goal = 0;
  p.exploration = 1.0;
  auto seqs = rollout(p, c, 400, 3, 5);
  int nulls = 0;
  for (const auto& s : seqs) {
    EXPECT_LE(s.length(), 3u);
    EXPECT_EQ(s.initial_state(), observe(s0, 0));
    if (s.terminal.is_null()) {
      ++nulls;
      EXPECT_EQ(s.length(), 3u);
    } else {
      EXPECT_TRUE(delivering.count(s.actions()));
    }
  }
  EXPECT_GT(nulls, 200);
}

PlanSequence make_seq(std::vector<std::string> states, std::vector<Action> acts, GoalOutcome g) {
  PlanSequence s;
  for (std::size_t i = 0; i < acts.size(); ++i) s.steps.push_back({StateId(states[i]), acts[i]});
  s.final_state = StateId(states.back());
  s.terminal = g;
  return s;
}

TEST(BuildTree, SingleSequenceIsAChain) {
  auto s = make_seq({"a", "b", "c", "d", "e"}, {Action::Up, Action::Up, Action::Right, Action::Pick},
                    GoalOutcome::reached(1));
  auto t = build_tree({s});
  EXPECT_EQ(t.node_count(), 5u);
  EXPECT_EQ(t.path_count(), 1u);
  EXPECT_EQ(t.depth(), 4);
  EXPECT_EQ(t.paths().front(), s);
}

TEST(BuildTree, SharedPrefixBranchesOnce) {
  auto x = make_seq({"a", "b", "c", "d", "e"}, {Action::Up, Action::Up, Action::Right, Action::Pick},
                    GoalOutcome::reached(1));
  auto y = make_seq({"a", "b", "c", "f", "g", "h"},
                    {Action::Up, Action::Up, Action::Left, Action::Down, Action::Drop}, GoalOutcome::null());
  auto t = build_tree({x, y});
  // 2 shared edges + 2 + 3 remaining
  EXPECT_EQ(t.node_count() - 1, 2u + 2u + 3u);
  EXPECT_EQ(t.path_count(), 2u);
  int branch_points = 0;
  for (const auto& n : t.nodes())
    if (n.children.size() > 1) {
      ++branch_points;
      EXPECT_EQ(n.depth, 2);
    }
  EXPECT_EQ(branch_points, 1);
}

TEST(BuildTree, DuplicatesCollapse) {
  auto x = make_seq({"a", "b", "c"}, {Action::Up, Action::Down}, GoalOutcome::null());
  auto one = build_tree({x});
  auto two = build_tree({x, x});
  EXPECT_EQ(nlohmann::json(one), nlohmann::json(two));
}

TEST(BuildTree, Errors) {
  EXPECT_THROW(build_tree({}), Error);
  auto x = make_seq({"a", "b"}, {Action::Up}, GoalOutcome::null());
  auto y = make_seq({"z", "b"}, {Action::Up}, GoalOutcome::null());
  try {
    build_tree({x, y});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MismatchedInitialState);
  }
}

TEST(BuildTree, JsonRoundTrip) {
  auto x = make_seq({"a", "b", "c"}, {Action::Up, Action::Down}, GoalOutcome::reached(2));
  auto y = make_seq({"a", "b", "d"}, {Action::Up, Action::Push}, GoalOutcome::null());
  auto t = build_tree({x, y});
  nlohmann::json j = t;
  auto back = j.get<BehaviourTree>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.paths(), t.paths());
  j["edges"][0]["child"] = 99;
  EXPECT_THROW(j.get<BehaviourTree>(), Error);
}

// Rollouts from real policies: the tree is lossless, no larger than its input,
// and no deeper than the horizon.
TEST(TreeProperties, RolloutTreesAreLossless) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    WorldConfig c;
    c.rows = 6;
    c.cols = 6;
    c.horizon = 25;
    c.generate = LayoutGenerator{3, 0, 2, 4, 1, 0, true};
    c.seed = seed;
    QLearningParams hp;
    hp.episodes = 200;
    hp.rollout_epsilon = 0.3;
    auto p = learn_policy(c, static_cast<TileId>(seed % 3), hp, seed);
    const int T = 5 + static_cast<int>(seed % 15);
    auto seqs = rollout(p, resolve(c, seed), 30, T, seed * 31);
    auto t = build_tree(seqs);
    std::size_t total = 1;
    for (const auto& s : seqs) {
      total += s.length();
      int leaf = t.walk(s);
      ASSERT_GE(leaf, 0);
      EXPECT_EQ(t.node(leaf).outcome, s.terminal);
      EXPECT_EQ(t.sequence_to(leaf), s);
    }
    EXPECT_LE(t.node_count(), total);
    EXPECT_LE(t.depth(), T);
    std::set<PlanSequence> distinct(seqs.begin(), seqs.end());
    EXPECT_EQ(t.path_count(), distinct.size());
  }
}

}  // namespace
}  // namespace intent
