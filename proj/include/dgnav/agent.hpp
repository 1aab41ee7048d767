#pragma once
// Closed-loop execution: low-level controller with swept collision checks,
// the per-cycle episode loop, and trajectory metrics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgnav/common.hpp"
#include "dgnav/fusion.hpp"
#include "dgnav/granularity.hpp"
#include "dgnav/planner.hpp"
#include "dgnav/topomap.hpp"
#include "dgnav/waypoints.hpp"
#include "dgnav/world.hpp"

namespace dgnav {

enum class Action { kTurnLeft15, kTurnRight15, kForward025, kStop };

inline std::string_view to_string(Action a) {
  switch (a) {
    case Action::kTurnLeft15: return "turn_left_15";
    case Action::kTurnRight15: return "turn_right_15";
    case Action::kForward025: return "forward_025";
    case Action::kStop: return "stop";
  }
  return "?";
}

inline constexpr double kTurnStep = kPi / 12.0;
inline constexpr double kForwardStep = 0.25;
inline constexpr double kAgentRadius = 0.15;
inline constexpr double kArriveTolerance = 0.2;
inline constexpr double kAlignTolerance = kPi / 24.0;
inline constexpr int kMaxLocalActions = 100;

namespace detail {

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2, 0.0, 1.0);
  return distance(p, a + t * ab);
}

inline double point_rect_distance(Vec2 p, double x0, double y0, double x1, double y1) {
  const double dx = std::max({x0 - p.x, 0.0, p.x - x1});
  const double dy = std::max({y0 - p.y, 0.0, p.y - y1});
  return std::hypot(dx, dy);
}

// Liang-Barsky clip of segment ab against the closed box.
inline bool segment_hits_rect(Vec2 a, Vec2 b, double x0, double y0, double x1, double y1) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - x0, x1 - a.x, a.y - y0, y1 - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0)
      t0 = std::max(t0, r);
    else
      t1 = std::min(t1, r);
    if (t0 > t1) return false;
  }
  return true;
}

inline double segment_rect_distance(Vec2 a, Vec2 b, double x0, double y0, double x1, double y1) {
  if (segment_hits_rect(a, b, x0, y0, x1, y1)) return 0.0;
  double d = std::min(point_rect_distance(a, x0, y0, x1, y1), point_rect_distance(b, x0, y0, x1, y1));
  for (Vec2 c : {Vec2{x0, y0}, Vec2{x1, y0}, Vec2{x0, y1}, Vec2{x1, y1}}) d = std::min(d, point_segment_distance(c, a, b));
  return d;
}

}  // namespace detail

/// True when no obstacle cell lies within `radius` of the segment ab.
inline bool sweep_clear(const OccupancyWorld& world, Vec2 a, Vec2 b, double radius = kAgentRadius) {
  const double cs = world.cell_size;
  const int ix0 = static_cast<int>(std::floor((std::min(a.x, b.x) - radius) / cs)) - 1;
  const int ix1 = static_cast<int>(std::floor((std::max(a.x, b.x) + radius) / cs)) + 1;
  const int iy0 = static_cast<int>(std::floor((std::min(a.y, b.y) - radius) / cs)) - 1;
  const int iy1 = static_cast<int>(std::floor((std::max(a.y, b.y) + radius) / cs)) + 1;
  for (int iy = iy0; iy <= iy1; ++iy)
    for (int ix = ix0; ix <= ix1; ++ix)
      if (world.blocked(ix, iy) &&
          detail::segment_rect_distance(a, b, ix * cs, iy * cs, (ix + 1) * cs, (iy + 1) * cs) < radius)
        return false;
  return true;
}

struct LocalMove {
  Pose pose;
  std::vector<Pose> poses;  // one per action, after the action
  std::vector<Action> actions;
  int collisions = 0;
  bool failed = false;
};

/// Rotate-then-forward controller toward `target`.
inline LocalMove execute_to(const OccupancyWorld& world, const Pose& start, Vec2 target) {
  LocalMove m;
  m.pose = start;
  while (true) {
    if (distance(m.pose.position(), target) <= kArriveTolerance) return m;
    if (static_cast<int>(m.actions.size()) >= kMaxLocalActions) {
      m.failed = true;
      return m;
    }
    const Vec2 to = target - m.pose.position();
    const double error = wrap_angle(std::atan2(to.y, to.x) - m.pose.heading);
    if (std::abs(error) > kAlignTolerance) {
      const bool left = error > 0.0;
      m.pose.heading = wrap_angle(m.pose.heading + (left ? kTurnStep : -kTurnStep));
      m.actions.push_back(left ? Action::kTurnLeft15 : Action::kTurnRight15);
    } else {
      const Vec2 next{m.pose.x + kForwardStep * std::cos(m.pose.heading),
                      m.pose.y + kForwardStep * std::sin(m.pose.heading)};
      if (sweep_clear(world, m.pose.position(), next)) {
        m.pose.x = next.x;
        m.pose.y = next.y;
      } else {
        ++m.collisions;
      }
      m.actions.push_back(Action::kForward025);
    }
    m.poses.push_back(m.pose);
  }
}

// --- metrics ----------------------------------------------------------------

struct Metrics {
  double tl = 0.0;
  double ne = 0.0;
  bool success = false;
  bool oracle_success = false;
  double spl = 0.0;
  double ndtw = 0.0;
  double sdtw = 0.0;
};

/// Standard O(n m) DTW with Euclidean point cost.
inline double dtw_distance(std::span<const Vec2> a, std::span<const Vec2> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kInvalidArgument, "DTW of an empty sequence");
  const auto m = b.size();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, kInf), cur(m + 1, kInf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = kInf;
    for (std::size_t j = 1; j <= m; ++j)
      cur[j] = distance(a[i - 1], b[j - 1]) + std::min({prev[j], cur[j - 1], prev[j - 1]});
    std::swap(prev, cur);
  }
  return prev[m];
}

inline double path_length(std::span<const Vec2> pts) {
  double s = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) s += distance(pts[i - 1], pts[i]);
  return s;
}

/// Drops consecutive repeated points (turn-in-place actions).
inline std::vector<Vec2> dedup_consecutive(std::span<const Vec2> pts) {
  std::vector<Vec2> out;
  for (const Vec2& p : pts)
    if (out.empty() || !(out.back() == p)) out.push_back(p);
  return out;
}

/// `shortest` is the geodesic start-goal length used by SPL. Success here is
/// purely positional; callers fold in whether the agent actually stopped.
inline Metrics compute_metrics(std::span<const Vec2> trajectory, std::span<const Vec2> reference, Vec2 goal,
                               double success_radius, double shortest) {
  if (trajectory.empty() || reference.empty()) throw Error(ErrorCode::kInvalidArgument, "empty trajectory or reference");
  Metrics m;
  m.tl = path_length(trajectory);
  m.ne = distance(trajectory.back(), goal);
  m.success = m.ne < success_radius;
  m.oracle_success = std::any_of(trajectory.begin(), trajectory.end(),
                                 [&](Vec2 p) { return distance(p, goal) < success_radius; });
  const double denom = std::max(m.tl, shortest);
  m.spl = m.success ? (denom > 0.0 ? shortest / denom : 1.0) : 0.0;
  const auto traj = dedup_consecutive(trajectory);
  m.ndtw = std::exp(-dtw_distance(traj, reference) / (static_cast<double>(reference.size()) * success_radius));
  m.sdtw = m.success ? m.ndtw : 0.0;
  return m;
}

// --- episodes ---------------------------------------------------------------

struct EpisodeLimits {
  int max_steps = 200;  // planner cycles
  double success_radius = kSuccessRadius;
  int ray_count = kDefaultRayCount;
  double max_range = kDefaultMaxRange;
  double clearance = 0.15;
  GapFinderParams gap;
};

struct EpisodeResult {
  std::vector<Pose> trajectory;
  std::vector<Action> actions;
  double tl = 0.0;
  double ne = 0.0;
  double ne_geodesic = std::numeric_limits<double>::quiet_NaN();
  double shortest = 0.0;
  bool success = false;
  bool oracle_success = false;
  double spl = 0.0;
  double ndtw = 0.0;
  double sdtw = 0.0;
  int node_count = 0;
  int steps = 0;   // low-level actions including the final stop
  int cycles = 0;  // planner cycles
  int collisions = 0;
  int local_failures = 0;
  bool stopped = false;
  std::vector<double> sigma_trace;
  std::vector<double> gamma_trace;

  std::vector<Vec2> positions() const {
    std::vector<Vec2> out;
    out.reserve(trajectory.size());
    for (const auto& p : trajectory) out.push_back(p.position());
    return out;
  }
};

/// Fixed CSV column order for per-episode rows.
inline constexpr const char* kEpisodeCsvHeader =
    "episode,seed,style,success,oracle_success,spl,ndtw,sdtw,tl,ne,ne_geodesic,shortest,node_count,steps,cycles,"
    "collisions,local_failures,stopped";

/// Which component produces the per-cycle decision.
enum class Driver { kPlanner, kOracle };

/// Optional taps into the loop: `on_decision` sees the planner input and the
/// oracle target (computed only when requested), `log` receives JSON lines.
struct EpisodeHooks {
  Driver driver = Driver::kPlanner;
  BiasSource bias = BiasSource::kDynamic;
  std::function<void(const PlannerInput&, const Decision& oracle)> on_decision;
  std::ostream* log = nullptr;
};

namespace detail {

inline nlohmann::json pose_json(const Pose& p) { return {{"x", p.x}, {"y", p.y}, {"heading", p.heading}}; }

inline nlohmann::json candidates_json(const CandidateSet& c) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& g : c.candidates)
    arr.push_back({{"angle", g.relative_angle}, {"distance", g.distance}, {"x", g.position.x}, {"y", g.position.y}});
  return arr;
}

}  // namespace detail

inline EpisodeResult run_episode(const OccupancyWorld& world, const Instruction& instruction, ThresholdPolicy policy,
                                 const PlannerModel& model, const EpisodeLimits& limits = {},
                                 const EpisodeHooks& hooks = {}) {
  const int dim = model.config.dim;
  const GeodesicField goal_field(world, world.goal);
  EpisodeResult r;
  Pose pose = world.start;
  r.trajectory.push_back(pose);
  TopoGraph graph;

  for (int cycle = 0; cycle < limits.max_steps; ++cycle) {
    const DepthScan scan = raycast(world, pose, limits.ray_count, limits.max_range);
    const CandidateSet cands = predict_waypoints(scan, pose, world, limits.clearance, limits.gap);
    const double gamma = policy.gamma(cands.sigma);
    r.sigma_trace.push_back(cands.sigma);
    r.gamma_trace.push_back(gamma);

    const VectorXd agent_feature = node_visual_features(world, pose, scan, dim);
    std::vector<VectorXd> cand_features;
    cand_features.reserve(cands.candidates.size());
    for (const auto& c : cands.candidates) {
      const Vec2 d = c.position - pose.position();
      const Pose view{c.position.x, c.position.y, std::atan2(d.y, d.x)};
      cand_features.push_back(
          node_visual_features(world, view, raycast(world, view, limits.ray_count, limits.max_range), dim));
    }
    update_graph(graph, cands, gamma, pose, cand_features, agent_feature);

    const PlannerInput input = make_planner_input(graph, instruction);
    const bool want_oracle = hooks.driver == Driver::kOracle || static_cast<bool>(hooks.on_decision);
    Decision oracle;
    if (want_oracle) oracle = make_oracle_decision(graph, goal_field, limits.success_radius);
    if (hooks.on_decision) hooks.on_decision(input, oracle);
    Decision decision = oracle;
    if (hooks.driver == Driver::kPlanner) {
      ForwardOptions opt;
      opt.bias = hooks.bias;
      decision = decision_from_row(input, select_row(planner_forward(model, input, opt)));
    }
    ++r.cycles;

    std::vector<Action> cycle_actions;
    if (decision.stop) {
      cycle_actions.push_back(Action::kStop);
      r.actions.push_back(Action::kStop);
      r.stopped = true;
    } else {
      const auto path = path_to(graph, decision.node_id);
      int reached = graph.current_node;
      bool failed = false;
      for (std::size_t h = 1; h < path.nodes.size() && !failed; ++h) {
        auto mv = execute_to(world, pose, graph.node(path.nodes[h]).position);
        pose = mv.pose;
        r.trajectory.insert(r.trajectory.end(), mv.poses.begin(), mv.poses.end());
        r.actions.insert(r.actions.end(), mv.actions.begin(), mv.actions.end());
        cycle_actions.insert(cycle_actions.end(), mv.actions.begin(), mv.actions.end());
        r.collisions += mv.collisions;
        if (mv.failed) {
          failed = true;
          ++r.local_failures;
        } else {
          reached = path.nodes[h];
        }
      }
      if (!failed) {
        promote_to_visited(graph, decision.node_id);
      } else {
        // an unreachable ghost is retired so it is not chosen again
        graph.nodes.at(decision.node_id).kind = NodeKind::kVisited;
        graph.current_node = reached;
      }
    }

    if (hooks.log) {
      nlohmann::json line = {{"cycle", cycle},
                             {"pose", detail::pose_json(pose)},
                             {"actions", nlohmann::json::array()},
                             {"candidates", detail::candidates_json(cands)},
                             {"sigma", cands.sigma},
                             {"gamma", gamma},
                             {"decision", decision.stop ? nlohmann::json("stop") : nlohmann::json(decision.node_id)},
                             {"graph", graph_snapshot(graph)}};
      for (Action a : cycle_actions) line["actions"].push_back(to_string(a));
      *hooks.log << line.dump() << '\n';
    }
    if (r.stopped) break;
  }

  r.node_count = static_cast<int>(graph.size());
  r.steps = static_cast<int>(r.actions.size());
  const auto pts = r.positions();
  const auto ref = reference_path(world, goal_field, world.start.position());
  auto [sx, sy] = world.cell_of(world.start.position());
  r.shortest = goal_field.cell_distance(sx, sy).value_or(0.0);
  if (auto g = goal_field.distance_at(pose.position())) r.ne_geodesic = *g;
  const Metrics m = compute_metrics(pts, ref, world.goal, limits.success_radius, r.shortest);
  r.tl = m.tl;
  r.ne = m.ne;
  r.success = r.stopped && m.success;
  r.oracle_success = m.oracle_success;
  r.spl = r.success ? m.spl : 0.0;
  r.ndtw = m.ndtw;
  r.sdtw = r.success ? m.ndtw : 0.0;
  return r;
}

}  // namespace dgnav
