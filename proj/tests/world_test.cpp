#include <gtest/gtest.h>

#include <random>

#include "intent/world.hpp"

namespace intent {
namespace {

WorldConfig small_config() {
  WorldConfig c;
  c.rows = 5;
  c.cols = 5;
  c.horizon = 50;
  return c;
}

TEST(InitWorld, MinimalGrid) {
  WorldConfig c;
  c.rows = 2;
  c.cols = 2;
  c.horizon = 5;
  c.agents = {{0, 0}};
  auto s = init_world(c, 1);
  EXPECT_EQ(s.tick, 0);
  ASSERT_EQ(s.agents.size(), 1u);
  EXPECT_EQ(s.agents[0].pos, (Position{0, 0}));
  EXPECT_FALSE(s.agents[0].carrying);
}

TEST(InitWorld, RejectsAgentOnObstacle) {
  auto c = small_config();
  c.obstacles = {{1, 1}};
  c.agents = {{1, 1}};
  try {
    init_world(c, 0);
    FAIL() << "expected invalid-config";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
  }
}

TEST(InitWorld, RejectsOverlapAndOutOfBounds) {
  auto c = small_config();
  c.agents = {{0, 0}};
  c.tiles = {{2, 2}};
  c.holes = {{2, 2}};
  EXPECT_THROW(init_world(c, 0), Error);
  c.holes = {{5, 0}};
  EXPECT_THROW(init_world(c, 0), Error);
  c.holes = {};
  c.rows = 1;
  EXPECT_THROW(init_world(c, 0), Error);
}

TEST(InitWorld, GeneratedLayoutIsSeedDeterministic) {
  WorldConfig c;
  c.rows = 20;
  c.cols = 20;
  c.horizon = 100;
  c.generate = LayoutGenerator{8, 4, 3, 40, 4, 0, true};
  auto a = init_world(c, 11);
  auto b = init_world(c, 11);
  auto d = init_world(c, 12);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, d);
  EXPECT_EQ(a.tiles_on_grid(), 8);
  auto resolved = resolve(c, 11);
  EXPECT_EQ(resolved.heavy.size(), 4u);
  EXPECT_EQ(resolved.landmarks, resolved.tiles);
  // every tile is reachable from every agent
  for (auto p : resolved.agents) {
    auto dist = distance_field(a, p);
    for (auto t : resolved.tiles) EXPECT_GE(dist[a.index(t)], 0);
  }
}

TEST(InitWorld, ParsesScenarioJson) {
  auto j = nlohmann::json::parse(R"({
    "rows": 4, "cols": 6, "T": 30, "seed": 3,
    "tiles": [[0, 1], [2, 2]], "heavy": [[2, 2]],
    "holes": [[3, 5]], "obstacles": [[1, 1]],
    "agents": [[0, 0], [3, 0]], "landmarks": "tiles"
  })");
  auto c = j.get<WorldConfig>();
  EXPECT_EQ(c.horizon, 30);
  EXPECT_EQ(c.landmarks.size(), 2u);
  EXPECT_TRUE(c.is_heavy(1));
  EXPECT_FALSE(c.is_heavy(0));
  auto back = nlohmann::json(c).get<WorldConfig>();
  EXPECT_EQ(back.tiles, c.tiles);
  EXPECT_EQ(back.heavy, c.heavy);
  EXPECT_THROW(nlohmann::json::parse(R"({"rows": 4})").get<WorldConfig>(), Error);
}

TEST(Step, UnobstructedMove) {
  auto c = small_config();
  c.agents = {{3, 3}};
  auto s = init_world(c, 0);
  auto [next, events] = step(s, {{0, Action::Right}});
  EXPECT_EQ(next.agents[0].pos, (Position{3, 4}));
  EXPECT_EQ(next.tick, 1);
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].kind, EventKind::Move);
}

TEST(Step, ObstacleAndBoundaryAreNoOps) {
  auto c = small_config();
  c.agents = {{0, 0}};
  c.obstacles = {{0, 1}};
  auto s = init_world(c, 0);
  auto [a, ea] = step(s, {{0, Action::Right}});
  EXPECT_EQ(a.agents[0].pos, (Position{0, 0}));
  EXPECT_EQ(ea[0].kind, EventKind::Blocked);
  auto [b, eb] = step(a, {{0, Action::Up}});
  EXPECT_EQ(b.agents[0].pos, (Position{0, 0}));
  EXPECT_EQ(eb[0].reason, "out-of-bounds");
}

TEST(Step, PickAndDeliverScoresTen) {
  auto c = small_config();
  c.agents = {{1, 1}};
  c.tiles = {{1, 1}};
  c.holes = {{1, 2}};
  auto s = init_world(c, 0);
  std::vector<Event> ev;
  step_in_place(s, {{0, Action::Pick}}, ev);
  EXPECT_EQ(s.agents[0].carrying, 0);
  step_in_place(s, {{0, Action::Right}}, ev);
  step_in_place(s, {{0, Action::Drop}}, ev);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].kind, EventKind::Delivery);
  EXPECT_EQ(s.agents[0].score, 10);
  EXPECT_FALSE(s.agents[0].carrying);
  EXPECT_EQ(s.at({1, 2}).kind, CellKind::Hole);  // holes stay open
}

TEST(Step, SingleAgentCannotLiftHeavyTile) {
  auto c = small_config();
  c.agents = {{2, 2}};
  c.tiles = {{2, 2}};
  c.heavy = {{2, 2}};
  auto s = init_world(c, 0);
  auto [next, events] = step(s, {{0, Action::Pick}});
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].kind, EventKind::Blocked);
  EXPECT_EQ(events[0].reason, "heavy-needs-two");
  EXPECT_FALSE(next.agents[0].carrying);
  EXPECT_EQ(next.at({2, 2}).kind, CellKind::Tile);
}

TEST(Step, JointCarrySplitsScore) {
  auto c = small_config();
  c.agents = {{2, 1}, {2, 3}, {0, 0}};
  c.tiles = {{2, 2}};
  c.heavy = {{2, 2}};
  c.holes = {{3, 2}};
  auto s = init_world(c, 0);
  std::vector<Event> ev;
  step_in_place(s, {{0, Action::Right}, {1, Action::Left}}, ev);
  // both targeted (2,2): lowest id wins, agent 1 retries
  EXPECT_EQ(s.agents[0].pos, (Position{2, 2}));
  EXPECT_EQ(s.agents[1].pos, (Position{2, 3}));
  step_in_place(s, {{1, Action::Left}}, ev);
  EXPECT_EQ(s.agents[1].pos, (Position{2, 2}));
  step_in_place(s, {{0, Action::Pick}, {1, Action::Pick}}, ev);
  ASSERT_EQ(ev[0].kind, EventKind::JointPick);
  EXPECT_EQ(s.agents[0].carrying, 0);
  EXPECT_EQ(s.agents[1].carrying, 0);
  // disagreement blocks the whole unit
  step_in_place(s, {{0, Action::Down}, {1, Action::Up}}, ev);
  EXPECT_EQ(s.agents[0].pos, (Position{2, 2}));
  step_in_place(s, {{0, Action::Down}, {1, Action::Down}}, ev);
  EXPECT_EQ(s.agents[0].pos, (Position{3, 2}));
  EXPECT_EQ(s.agents[1].pos, (Position{3, 2}));
  step_in_place(s, {{0, Action::Drop}, {1, Action::Drop}}, ev);
  ASSERT_EQ(ev[0].kind, EventKind::Delivery);
  EXPECT_EQ(s.agents[0].score, 5);
  EXPECT_EQ(s.agents[1].score, 5);
}

TEST(Step, ThreeWaySplitGivesRemainderToLowestId) {
  auto c = small_config();
  c.agents = {{2, 2}, {1, 2}, {2, 1}};
  c.tiles = {{2, 2}};
  c.heavy = {{2, 2}};
  c.holes = {{2, 3}};
  auto s = init_world(c, 0);
  std::vector<Event> ev;
  step_in_place(s, {{1, Action::Down}}, ev);
  step_in_place(s, {{2, Action::Right}}, ev);
  step_in_place(s, {{0, Action::Pick}, {1, Action::Pick}, {2, Action::Pick}}, ev);
  step_in_place(s, {{0, Action::Right}, {1, Action::Right}, {2, Action::Right}}, ev);
  step_in_place(s, {{0, Action::Drop}, {1, Action::Drop}, {2, Action::Drop}}, ev);
  EXPECT_EQ(s.agents[0].score, 4);
  EXPECT_EQ(s.agents[1].score, 3);
  EXPECT_EQ(s.agents[2].score, 3);
}

TEST(Step, PushMovesObstacleOnlyIntoEmptyCell) {
  auto c = small_config();
  c.agents = {{2, 0}};
  c.obstacles = {{2, 1}};
  c.tiles = {{2, 3}};
  auto s = init_world(c, 0);
  std::vector<Event> ev;
  step_in_place(s, {{0, Action::Right}}, ev);  // blocked, but now facing right
  EXPECT_EQ(ev[0].reason, "obstacle");
  step_in_place(s, {{0, Action::Push}}, ev);
  ASSERT_EQ(ev[0].kind, EventKind::Push);
  EXPECT_EQ(s.at({2, 2}).kind, CellKind::Obstacle);
  EXPECT_EQ(s.at({2, 1}).kind, CellKind::Empty);
  step_in_place(s, {{0, Action::Right}}, ev);
  EXPECT_EQ(s.agents[0].pos, (Position{2, 1}));
  step_in_place(s, {{0, Action::Push}}, ev);  // the tile sits beyond
  EXPECT_EQ(ev[0].kind, EventKind::Blocked);
  EXPECT_EQ(s.at({2, 2}).kind, CellKind::Obstacle);
}

TEST(Step, DropOnEmptyCellPutsTileDown) {
  auto c = small_config();
  c.agents = {{0, 0}};
  c.tiles = {{0, 0}};
  auto s = init_world(c, 0);
  std::vector<Event> ev;
  step_in_place(s, {{0, Action::Pick}}, ev);
  step_in_place(s, {{0, Action::Down}}, ev);
  step_in_place(s, {{0, Action::Drop}}, ev);
  EXPECT_EQ(ev[0].kind, EventKind::Drop);
  EXPECT_EQ(s.at({1, 0}).kind, CellKind::Tile);
  EXPECT_EQ(s.at({1, 0}).tile, 0);
}

TEST(Step, Errors) {
  auto c = small_config();
  c.horizon = 1;
  c.agents = {{0, 0}};
  auto s = init_world(c, 0);
  try {
    step(s, {{3, Action::Up}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownAgent);
  }
  auto [done, ev] = step(s, {});
  try {
    step(done, {{0, Action::Up}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EpisodeFinished);
  }
}

TEST(Observe, CanonicalAndDiscriminating) {
  auto c = small_config();
  c.agents = {{1, 1}, {3, 3}};
  c.tiles = {{1, 1}};
  auto s = init_world(c, 0);
  EXPECT_EQ(observe(s, 0), observe(s, 0));
  EXPECT_NE(observe(s, 0), observe(s, 1));
  EXPECT_EQ(observe(s, 0).position(), (Position{1, 1}));
  auto [picked, ev] = step(s, {{0, Action::Pick}});
  EXPECT_NE(observe(s, 0), observe(picked, 0));
  EXPECT_EQ(observe(s, 0).key(), "1,1|0|U|#####" "#...." "#.t.." "#...." "#....");
  EXPECT_THROW(observe(s, 2), Error);
  // equal situations in distinct state copies encode equally
  WorldState copy = s;
  EXPECT_EQ(observe(copy, 1), observe(s, 1));
}

// Random joint actions over random layouts; world invariants hold every step.
TEST(WorldProperties, FuzzedEpisodes) {
  std::mt19937_64 rng(2024);
  for (int episode = 0; episode < 200; ++episode) {
    WorldConfig c;
    c.rows = 6;
    c.cols = 6;
    c.horizon = 60;
    c.generate = LayoutGenerator{5, 3, 2, 5, 3, 0, true};
    auto s = init_world(c, episode);
    const int tiles = s.tiles_on_grid();
    std::vector<JointAction> log;
    std::vector<int> deliveries;
    int delivery_events = 0;
    std::vector<Event> ev;
    std::vector<WorldState> trace{s};
    while (!s.finished()) {
      JointAction ja;
      for (int a = 0; a < 3; ++a)
        if (rng() % 5 != 0) ja.push_back({a, kAllActions[rng() % kActionCount]});
      step_in_place(s, ja, ev);
      log.push_back(ja);
      trace.push_back(s);
      for (const auto& e : ev) delivery_events += e.kind == EventKind::Delivery;
      ASSERT_EQ(s.tiles_on_grid() + s.tiles_carried() + static_cast<int>(s.delivered.size()), tiles);
      for (const auto& a : s.agents) ASSERT_NE(s.at(a.pos).kind, CellKind::Obstacle);
    }
    EXPECT_EQ(s.total_score(), kDeliveryPoints * delivery_events);
    auto r = init_world(c, episode);
    for (std::size_t t = 0; t < log.size(); ++t) {
      step_in_place(r, log[t], ev);
      ASSERT_EQ(r, trace[t + 1]);
      for (int a = 0; a < 3; ++a) ASSERT_EQ(observe(r, a), observe(trace[t + 1], a));
    }
  }
}

}  // namespace
}  // namespace intent
