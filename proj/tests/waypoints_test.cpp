#include <gtest/gtest.h>

#include <set>

#include "dgnav/waypoints.hpp"
#include "oracles.hpp"

using namespace dgnav;

TEST(Dispersion, Examples) {
  EXPECT_DOUBLE_EQ(dispersion(std::vector{0.5, 0.5, 0.5}), 0.0);
  for (double a : {0.1, 1.0, 2.5}) EXPECT_NEAR(dispersion(std::vector{-a, a}), a, 1e-15);
  EXPECT_NEAR(dispersion(std::vector{0.1, 0.4, 0.7, 1.0}), std::sqrt(0.1125), 1e-15);
  EXPECT_NEAR(dispersion(std::vector{0.1, 0.4, 0.7, 1.0}), 0.33541, 1e-5);
  EXPECT_EQ(dispersion(std::vector<double>{}), 0.0);
  EXPECT_EQ(dispersion(std::vector{1.3}), 0.0);
}

TEST(Dispersion, WrapsBeforeMeasuring) {
  EXPECT_NEAR(dispersion(std::vector{0.2 + kTwoPi, 0.4 - 2 * kTwoPi}), 0.1, 1e-12);
  // linear mode treats angles across the seam as far apart; circular does not
  const std::vector seam{kPi - 0.1, -kPi + 0.1};
  EXPECT_NEAR(dispersion(seam), kPi - 0.1, 1e-12);
  EXPECT_NEAR(dispersion(seam, DispersionMode::kCircular), 0.1, 1e-12);
}

TEST(Dispersion, MatchesBruteForce) {
  Rng rng(3);
  for (int k = 0; k < 500; ++k) {
    std::vector<double> a(static_cast<std::size_t>(rng.uniform_int(1, 12)));
    for (double& x : a) x = rng.uniform(-3 * kPi, 3 * kPi);
    EXPECT_NEAR(dispersion(a), oracle::population_std(a), 1e-12);
  }
}

namespace {

DepthScan uniform_scan(double range, int rays = 120) {
  DepthScan s;
  s.ray_count = rays;
  s.max_range = 5.0;
  s.ranges.assign(rays, range);
  return s;
}

// Brute force: a ray starts a sector iff it is open and its predecessor is closed.
std::set<std::pair<int, int>> sectors_by_scan(const DepthScan& s, double thr) {
  const int n = s.ray_count;
  std::set<std::pair<int, int>> out;
  bool any_closed = false;
  for (double r : s.ranges) any_closed |= !(r > thr);
  if (!any_closed) return {{0, n}};
  for (int i = 0; i < n; ++i) {
    if (!(s.ranges[i] > thr) || s.ranges[(i + n - 1) % n] > thr) continue;
    int len = 0;
    while (s.ranges[(i + len) % n] > thr) ++len;
    out.insert({i, len});
  }
  return out;
}

}  // namespace

TEST(GapFinder, OpenFieldSpreadsOverCircle) {
  const auto w = oracle::box_world(12.0);
  const auto c = predict_waypoints(uniform_scan(5.0), {6.0, 6.0, 0.0}, w);
  ASSERT_EQ(c.candidates.size(), 8u);
  EXPECT_GT(c.sigma, 1.5);
  for (std::size_t i = 1; i < c.candidates.size(); ++i)
    EXPECT_NEAR(wrap_angle(c.candidates[i].relative_angle - c.candidates[i - 1].relative_angle), kPi / 4, 1e-12);
}

TEST(GapFinder, SingleForwardOpeningGivesOneCandidate) {
  const auto w = oracle::box_world(12.0);
  auto s = uniform_scan(0.8);
  for (int i = -3; i <= 3; ++i) s.ranges[(i + 120) % 120] = 5.0;  // +-9 degrees
  const auto c = predict_waypoints(s, {6.0, 6.0, 0.0}, w);
  ASSERT_EQ(c.candidates.size(), 1u);
  EXPECT_NEAR(c.candidates[0].relative_angle, 0.0, 1e-12);
  EXPECT_EQ(c.sigma, 0.0);
  EXPECT_NEAR(c.candidates[0].distance, 2.5, 1e-12);
  EXPECT_NEAR(c.candidates[0].position.x, 8.5, 1e-12);
}

TEST(GapFinder, ClosedScanGivesNothing) {
  const auto w = oracle::box_world(12.0);
  const auto c = predict_waypoints(uniform_scan(1.0), {6.0, 6.0, 0.0}, w);
  EXPECT_TRUE(c.candidates.empty());
  EXPECT_EQ(c.sigma, 0.0);
}

TEST(GapFinder, SectorsMatchBruteForce) {
  Rng rng(17);
  for (int k = 0; k < 200; ++k) {
    DepthScan s = uniform_scan(0.0);
    double level = rng.uniform(0.2, 4.0);
    for (auto& r : s.ranges) {
      if (rng.bernoulli(0.15)) level = rng.uniform(0.2, 4.0);
      r = level;
    }
    std::set<std::pair<int, int>> got;
    for (auto sec : open_sectors(s, 1.2)) got.insert({sec.start, sec.length});
    EXPECT_EQ(got, sectors_by_scan(s, 1.2));
  }
}

TEST(GapFinder, RealWorldCandidatesRespectConstraints) {
  for (auto style : {WorldStyle::kCorridor, WorldStyle::kRooms, WorldStyle::kOpen, WorldStyle::kMixed}) {
    const auto w = generate_world(7, style, 12.0);
    const auto scan = raycast(w, w.start);
    const auto c = predict_waypoints(scan, w.start, w);
    EXPECT_LE(c.candidates.size(), 8u);
    for (std::size_t i = 0; i < c.candidates.size(); ++i) {
      const auto& g = c.candidates[i];
      EXPECT_TRUE(w.disk_free(g.position, 0.15));
      EXPECT_GE(g.distance, 0.3);
      EXPECT_LE(g.distance, 2.5);
      EXPECT_NEAR(distance(g.position, w.start.position()), g.distance, 1e-9);
      if (i > 0) EXPECT_LE(c.candidates[i - 1].relative_angle, g.relative_angle);
    }
    EXPECT_NEAR(c.sigma, dispersion(c.angles()), 0.0);
  }
}

TEST(GapFinder, SplitCoversSectorExactly) {
  const GapFinderParams p;
  const auto pieces = split_sectors({{100, 50}}, 120, p);  // 150 degrees -> 4 pieces
  ASSERT_EQ(pieces.size(), 4u);
  int total = 0;
  int expect_start = 100;
  for (const auto& s : pieces) {
    EXPECT_EQ(s.start, expect_start % 120);
    expect_start += s.length;
    total += s.length;
  }
  EXPECT_EQ(total, 50);
  EXPECT_EQ(split_sectors({{0, 30}}, 120, p).size(), 1u);
}
