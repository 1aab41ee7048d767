#include <gtest/gtest.h>

#include <sstream>

#include "dgnav/agent.hpp"
#include "oracles.hpp"

using namespace dgnav;

TEST(Controller, StraightAhead) {
  const auto w = oracle::box_world(10.0);
  const auto mv = execute_to(w, {5.0, 5.0, 0.0}, {5.5, 5.0});
  ASSERT_EQ(mv.actions.size(), 2u);
  EXPECT_EQ(mv.actions[0], Action::kForward025);
  EXPECT_EQ(mv.actions[1], Action::kForward025);
  EXPECT_NEAR(mv.pose.x, 5.5, 1e-12);
  EXPECT_FALSE(mv.failed);
  EXPECT_EQ(mv.poses.size(), mv.actions.size());
}

TEST(Controller, TurnsAroundFirst) {
  const auto w = oracle::box_world(10.0);
  const auto mv = execute_to(w, {5.0, 5.0, 0.0}, {4.5, 5.0});
  ASSERT_EQ(mv.actions.size(), 14u);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(mv.actions[i], mv.actions[0]);
  EXPECT_NE(mv.actions[0], Action::kForward025);
  EXPECT_EQ(mv.actions[12], Action::kForward025);
  EXPECT_NEAR(mv.pose.x, 4.5, 1e-9);
}

TEST(Controller, WallCausesFailureWithoutPenetration) {
  auto w = oracle::box_world(10.0);
  oracle::block(w, 5.4, 0.0, 5.8, 10.0);
  const auto mv = execute_to(w, {5.0, 5.0, 0.0}, {7.0, 5.0});
  EXPECT_TRUE(mv.failed);
  EXPECT_EQ(static_cast<int>(mv.actions.size()), kMaxLocalActions);
  EXPECT_GT(mv.collisions, 0);
  for (const auto& p : mv.poses) EXPECT_TRUE(w.disk_free(p.position(), kAgentRadius - 1e-9));
}

TEST(Sweep, AgreesWithDenseSampling) {
  const auto w = generate_world(5, WorldStyle::kRooms, 10.0);
  Rng rng(6);
  auto clearance = [&](Vec2 p) {
    double best = 1e9;
    for (int iy = 0; iy < w.height; ++iy)
      for (int ix = 0; ix < w.width; ++ix) {
        if (!w.blocked(ix, iy)) continue;
        const double cs = w.cell_size;
        const double dx = std::max({ix * cs - p.x, 0.0, p.x - (ix + 1) * cs});
        const double dy = std::max({iy * cs - p.y, 0.0, p.y - (iy + 1) * cs});
        best = std::min(best, std::hypot(dx, dy));
      }
    return best;
  };
  for (int k = 0; k < 150; ++k) {
    const Vec2 a{rng.uniform(0.5, 9.5), rng.uniform(0.5, 9.5)};
    const double ang = rng.uniform(-kPi, kPi);
    const Vec2 b = a + Vec2{0.25 * std::cos(ang), 0.25 * std::sin(ang)};
    double sampled = 1e9;
    constexpr int kSamples = 200;
    for (int s = 0; s <= kSamples; ++s) sampled = std::min(sampled, clearance(a + (static_cast<double>(s) / kSamples) * (b - a)));
    if (sweep_clear(w, a, b, 0.15))
      EXPECT_GE(sampled, 0.15 - 1e-12);
    else
      EXPECT_LT(sampled, 0.15 + 0.25 / kSamples);
  }
}

TEST(Dtw, MatchesRecursiveReference) {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    std::vector<Vec2> a(static_cast<std::size_t>(rng.uniform_int(1, 9))), b(static_cast<std::size_t>(rng.uniform_int(1, 9)));
    for (auto& p : a) p = {rng.uniform(0, 5), rng.uniform(0, 5)};
    for (auto& p : b) p = {rng.uniform(0, 5), rng.uniform(0, 5)};
    EXPECT_NEAR(dtw_distance(a, b), oracle::dtw(a, b), 1e-12);
    EXPECT_NEAR(dtw_distance(a, b), dtw_distance(b, a), 1e-12);
  }
  EXPECT_THROW(dtw_distance(std::vector<Vec2>{}, std::vector<Vec2>{{0, 0}}), Error);
}

TEST(Metrics, PerfectFollowing) {
  std::vector<Vec2> ref;
  for (int i = 0; i <= 20; ++i) ref.push_back({0.25 * i, 0.0});
  const auto m = compute_metrics(ref, ref, ref.back(), 3.0, 5.0);
  EXPECT_EQ(m.ndtw, 1.0);
  EXPECT_TRUE(m.success);
  EXPECT_DOUBLE_EQ(m.spl, 1.0);
  EXPECT_DOUBLE_EQ(m.tl, 5.0);
  // turning in place repeats positions and does not change nDTW
  auto with_turns = ref;
  with_turns.insert(with_turns.begin() + 5, 3, ref[5]);
  EXPECT_EQ(compute_metrics(with_turns, ref, ref.back(), 3.0, 5.0).ndtw, 1.0);
}

TEST(Metrics, StationaryAgent) {
  std::vector<Vec2> ref;
  for (int i = 0; i <= 40; ++i) ref.push_back({0.25 * i, 0.0});
  const std::vector<Vec2> traj{{0.0, 0.0}};
  const auto m = compute_metrics(traj, ref, {10.0, 0.0}, 3.0, 10.0);
  EXPECT_EQ(m.tl, 0.0);
  EXPECT_DOUBLE_EQ(m.ne, 10.0);
  EXPECT_FALSE(m.success);
  EXPECT_FALSE(m.oracle_success);
  EXPECT_EQ(m.spl, 0.0);
  EXPECT_EQ(m.sdtw, 0.0);
  double dtw = 0;
  for (const auto& p : ref) dtw += p.x;
  EXPECT_NEAR(m.ndtw, std::exp(-dtw / (41 * 3.0)), 1e-12);
}

TEST(Metrics, SuccessRadiusIsStrict) {
  const std::vector<Vec2> traj{{0, 0}, {7, 0}};
  const std::vector<Vec2> ref{{0, 0}, {10, 0}};
  EXPECT_FALSE(compute_metrics(traj, ref, {10, 0}, 3.0, 10.0).success);
  EXPECT_TRUE(compute_metrics(traj, ref, {10, 0}, 3.0 + 1e-9, 10.0).success);
}

TEST(Metrics, InvariantsOnRandomTrajectories) {
  Rng rng(9);
  for (int k = 0; k < 300; ++k) {
    std::vector<Vec2> traj(static_cast<std::size_t>(rng.uniform_int(1, 30))), ref(static_cast<std::size_t>(rng.uniform_int(1, 30)));
    for (auto& p : traj) p = {rng.uniform(0, 10), rng.uniform(0, 10)};
    for (auto& p : ref) p = {rng.uniform(0, 10), rng.uniform(0, 10)};
    const Vec2 goal{rng.uniform(0, 10), rng.uniform(0, 10)};
    const double shortest = rng.uniform(0.0, 12.0);
    const auto m = compute_metrics(traj, ref, goal, 3.0, shortest);
    EXPECT_GE(m.spl, 0.0);
    EXPECT_LE(m.spl, 1.0);
    EXPECT_GT(m.ndtw, 0.0);
    EXPECT_LE(m.ndtw, 1.0);
    EXPECT_LE(m.sdtw, m.ndtw);
    if (m.success) EXPECT_TRUE(m.oracle_success);
    if (!m.success) EXPECT_EQ(m.spl, 0.0);
    EXPECT_GE(m.tl, 0.0);
  }
}

namespace {

Instruction route(const OccupancyWorld& w, int dim = kDefaultFeatureDim) {
  std::vector<int> ids;
  for (const auto& l : w.landmarks) ids.push_back(l.id);
  return encode_instruction(w, ids, dim);
}

}  // namespace

TEST(Episode, StopsImmediatelyNearGoal) {
  auto w = oracle::box_world(10.0);
  w.start = {2.5, 2.5, 0.0};
  EpisodeHooks hooks;
  hooks.driver = Driver::kOracle;
  const auto r = run_episode(w, route(w), ThresholdPolicy::fixed(0.5), PlannerModel::zeros({}), {}, hooks);
  EXPECT_TRUE(r.stopped);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.cycles, 1);
  EXPECT_EQ(r.steps, 1);
  EXPECT_EQ(r.tl, 0.0);
  EXPECT_DOUBLE_EQ(r.spl, 1.0);
}

TEST(Episode, DeterministicAndLogged) {
  const auto w = generate_world(12, WorldStyle::kMixed, 12.0);
  const auto model = PlannerModel::init({}, 3);
  EpisodeLimits lim;
  lim.max_steps = 15;
  std::ostringstream log;
  EpisodeHooks hooks;
  hooks.log = &log;
  const auto a = run_episode(w, route(w), ThresholdPolicy::fixed(0.4), model, lim, hooks);
  const auto b = run_episode(w, route(w), ThresholdPolicy::fixed(0.4), model, lim);
  EXPECT_EQ(a.positions(), b.positions());
  EXPECT_EQ(a.actions, b.actions);
  EXPECT_EQ(a.node_count, b.node_count);

  std::istringstream lines(log.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("cycle").get<int>(), n);
    EXPECT_DOUBLE_EQ(j.at("gamma").get<double>(), 0.4);
    ++n;
  }
  EXPECT_EQ(n, a.cycles);
  EXPECT_EQ(a.steps, static_cast<int>(a.actions.size()));
  EXPECT_EQ(a.sigma_trace.size(), static_cast<std::size_t>(a.cycles));
  if (a.success) {
    EXPECT_TRUE(a.stopped);
  }
}

TEST(Episode, ConditionalEqualsFixedWhenScenesStayBelowMedian) {
  const auto w = generate_world(14, WorldStyle::kCorridor, 12.0);
  const auto model = PlannerModel::init({}, 5);
  EpisodeLimits lim;
  lim.max_steps = 20;
  ThresholdPolicy cond;
  cond.kind = PolicyKind::kConditionalLinear;
  cond.sigma_med = 50.0;  // above any reachable dispersion
  cond.sigma_max = 60.0;
  const auto a = run_episode(w, route(w), cond, model, lim);
  const auto b = run_episode(w, route(w), ThresholdPolicy::fixed(0.5), model, lim);
  EXPECT_EQ(a.positions(), b.positions());
  EXPECT_EQ(a.node_count, b.node_count);
  for (double g : a.gamma_trace) EXPECT_EQ(g, 0.5);
}

TEST(Episode, OracleDriverMakesProgress) {
  int successes = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto w = generate_world(seed, WorldStyle::kOpen, 12.0);
    EpisodeHooks hooks;
    hooks.driver = Driver::kOracle;
    const auto r = run_episode(w, route(w), ThresholdPolicy::fixed(0.5), PlannerModel::zeros({}), {}, hooks);
    EXPECT_LE(r.ne_geodesic, r.shortest + 1e-9);
    successes += r.success ? 1 : 0;
  }
  EXPECT_GE(successes, 6);
}
