#pragma once
// Synthetic 2D occupancy worlds: procedural generation, DDA depth sensing,
// an 8-connected geodesic oracle and deterministic feature encoders.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgnav/common.hpp"

namespace dgnav {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kDefaultCellSize = 0.05;
inline constexpr int kDefaultRayCount = 120;
inline constexpr double kDefaultMaxRange = 5.0;
inline constexpr int kDefaultFeatureDim = 32;
inline constexpr double kStartClearance = 0.3;

enum class WorldStyle { kCorridor, kRooms, kOpen, kMixed };

inline std::string_view to_string(WorldStyle s) {
  switch (s) {
    case WorldStyle::kCorridor: return "corridor";
    case WorldStyle::kRooms: return "rooms";
    case WorldStyle::kOpen: return "open";
    case WorldStyle::kMixed: return "mixed";
  }
  return "?";
}

inline WorldStyle parse_world_style(std::string_view s) {
  if (s == "corridor") return WorldStyle::kCorridor;
  if (s == "rooms") return WorldStyle::kRooms;
  if (s == "open") return WorldStyle::kOpen;
  if (s == "mixed") return WorldStyle::kMixed;
  throw Error(ErrorCode::kConfig, "unknown world style '" + std::string(s) + "'");
}

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // (-pi, pi]

  Vec2 position() const { return {x, y}; }
};

struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  bool contains(Vec2 p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
  Vec2 center() const { return {(x0 + x1) / 2.0, (y0 + y1) / 2.0}; }
};

struct Landmark {
  int id = 0;
  Rect region;
};

struct DepthScan {
  int ray_count = kDefaultRayCount;
  double max_range = kDefaultMaxRange;
  std::vector<double> ranges;

  double ray_angle(int i, double heading) const { return wrap_angle(heading + kTwoPi * i / ray_count); }
};

/// Rasterized world. Cell (ix, iy) covers [ix*cs, (ix+1)*cs) x [iy*cs, (iy+1)*cs);
/// storage is row-major (iy * width + ix).
struct OccupancyWorld {
  std::uint64_t seed = 0;
  WorldStyle style = WorldStyle::kOpen;
  double size_m = 0.0;
  double cell_size = kDefaultCellSize;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> grid;  // 1 = obstacle
  std::vector<Landmark> landmarks;
  Pose start;
  Vec2 goal;

  bool in_grid(int ix, int iy) const { return ix >= 0 && iy >= 0 && ix < width && iy < height; }
  bool blocked(int ix, int iy) const { return !in_grid(ix, iy) || grid[index(ix, iy)] != 0; }
  std::size_t index(int ix, int iy) const { return static_cast<std::size_t>(iy) * width + ix; }

  std::pair<int, int> cell_of(Vec2 p) const {
    return {static_cast<int>(std::floor(p.x / cell_size)), static_cast<int>(std::floor(p.y / cell_size))};
  }
  Vec2 cell_center(int ix, int iy) const { return {(ix + 0.5) * cell_size, (iy + 0.5) * cell_size}; }

  bool is_free(Vec2 p) const {
    auto [ix, iy] = cell_of(p);
    return !blocked(ix, iy);
  }

  /// True when every cell touching the disk of `radius` around p is free.
  bool disk_free(Vec2 p, double radius) const {
    const int r = static_cast<int>(std::ceil(radius / cell_size)) + 1;
    auto [cx, cy] = cell_of(p);
    for (int iy = cy - r; iy <= cy + r; ++iy) {
      for (int ix = cx - r; ix <= cx + r; ++ix) {
        if (!blocked(ix, iy)) continue;
        // nearest point of the cell square to p
        const double nx = std::clamp(p.x, ix * cell_size, (ix + 1) * cell_size);
        const double ny = std::clamp(p.y, iy * cell_size, (iy + 1) * cell_size);
        if (std::hypot(p.x - nx, p.y - ny) < radius) return false;
      }
    }
    return true;
  }

  const Landmark* landmark_at(Vec2 p) const {
    for (const auto& lm : landmarks)
      if (lm.region.contains(p)) return &lm;
    return nullptr;
  }

  const Landmark* find_landmark(int id) const {
    for (const auto& lm : landmarks)
      if (lm.id == id) return &lm;
    return nullptr;
  }
};

// --- depth sensing ----------------------------------------------------------

/// Distance to the first obstacle cell boundary along a ray (DDA traversal),
/// clamped to max_range.
inline double cast_ray(const OccupancyWorld& world, Vec2 origin, double angle, double max_range) {
  const double cs = world.cell_size;
  const double u = origin.x / cs;
  const double v = origin.y / cs;
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  int ix = static_cast<int>(std::floor(u));
  int iy = static_cast<int>(std::floor(v));
  const int step_x = dx > 0 ? 1 : -1;
  const int step_y = dy > 0 ? 1 : -1;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  double t_max_x = dx > 0 ? (ix + 1 - u) / dx : (dx < 0 ? (u - ix) / -dx : kInf);
  double t_max_y = dy > 0 ? (iy + 1 - v) / dy : (dy < 0 ? (v - iy) / -dy : kInf);
  const double t_delta_x = dx != 0 ? 1.0 / std::abs(dx) : kInf;
  const double t_delta_y = dy != 0 ? 1.0 / std::abs(dy) : kInf;
  const double t_limit = max_range / cs;
  while (true) {
    double t;
    if (t_max_x < t_max_y) {
      t = t_max_x;
      t_max_x += t_delta_x;
      ix += step_x;
    } else {
      t = t_max_y;
      t_max_y += t_delta_y;
      iy += step_y;
    }
    if (t >= t_limit) return max_range;
    if (world.blocked(ix, iy)) return std::max(t * cs, 1e-6);
  }
}

inline DepthScan raycast(const OccupancyWorld& world, const Pose& pose, int ray_count = kDefaultRayCount,
                         double max_range = kDefaultMaxRange) {
  if (!world.is_free(pose.position()))
    throw Error(ErrorCode::kPoseInObstacle,
                "raycast from (" + std::to_string(pose.x) + ", " + std::to_string(pose.y) + ")");
  if (ray_count <= 0 || !(max_range > 0.0)) throw Error(ErrorCode::kInvalidArgument, "raycast parameters");
  DepthScan scan;
  scan.ray_count = ray_count;
  scan.max_range = max_range;
  scan.ranges.resize(ray_count);
  for (int i = 0; i < ray_count; ++i)
    scan.ranges[i] = cast_ray(world, pose.position(), scan.ray_angle(i, pose.heading), max_range);
  return scan;
}

// --- geodesic oracle --------------------------------------------------------

/// Grid path cost as (orthogonal steps, diagonal steps). The minimal cost pair
/// is unique because sqrt(2) is irrational, which makes results exact.
struct StepCount {
  std::int32_t straight = 0;
  std::int32_t diagonal = 0;

  double value() const { return straight + diagonal * std::numbers::sqrt2; }
  double meters(double cell_size) const { return value() * cell_size; }
  friend bool operator==(StepCount, StepCount) = default;
};

namespace detail {

struct Move {
  int dx, dy;
  bool diagonal;
};
inline constexpr std::array<Move, 8> kMoves{{{1, 0, false},
                                             {-1, 0, false},
                                             {0, 1, false},
                                             {0, -1, false},
                                             {1, 1, true},
                                             {1, -1, true},
                                             {-1, 1, true},
                                             {-1, -1, true}}};

// Diagonal moves may not cut obstacle corners.
inline bool move_allowed(const OccupancyWorld& w, int ix, int iy, const Move& m) {
  if (w.blocked(ix + m.dx, iy + m.dy)) return false;
  if (m.diagonal && (w.blocked(ix + m.dx, iy) || w.blocked(ix, iy + m.dy))) return false;
  return true;
}

}  // namespace detail

/// Single-source shortest grid distances (Dijkstra over 8-connected free cells).
class GeodesicField {
 public:
  GeodesicField() = default;

  /// Runs until every reachable cell is settled, or until `stop_at` is settled.
  GeodesicField(const OccupancyWorld& world, Vec2 source, std::optional<std::pair<int, int>> stop_at = std::nullopt)
      : world_(&world) {
    const auto n = static_cast<std::size_t>(world.width) * world.height;
    steps_.assign(n, StepCount{-1, -1});
    auto [sx, sy] = world.cell_of(source);
    source_ = {sx, sy};
    if (world.blocked(sx, sy)) return;
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    std::vector<std::uint8_t> settled(n, 0);
    steps_[world.index(sx, sy)] = {0, 0};
    open.push({0.0, world.index(sx, sy)});
    while (!open.empty()) {
      auto [cost, idx] = open.top();
      open.pop();
      if (settled[idx]) continue;
      settled[idx] = 1;
      const int ix = static_cast<int>(idx % world.width);
      const int iy = static_cast<int>(idx / world.width);
      if (stop_at && stop_at->first == ix && stop_at->second == iy) break;
      const StepCount here = steps_[idx];
      for (const auto& m : detail::kMoves) {
        if (!detail::move_allowed(world, ix, iy, m)) continue;
        const auto nidx = world.index(ix + m.dx, iy + m.dy);
        if (settled[nidx]) continue;
        StepCount cand = here;
        (m.diagonal ? cand.diagonal : cand.straight) += 1;
        const StepCount cur = steps_[nidx];
        if (cur.straight < 0 || cand.value() < cur.value()) {
          steps_[nidx] = cand;
          open.push({cand.value(), nidx});
        }
      }
    }
  }

  bool reachable(int ix, int iy) const {
    return world_ && world_->in_grid(ix, iy) && steps_[world_->index(ix, iy)].straight >= 0;
  }

  std::optional<StepCount> steps(int ix, int iy) const {
    if (!reachable(ix, iy)) return std::nullopt;
    return steps_[world_->index(ix, iy)];
  }

  std::optional<double> cell_distance(int ix, int iy) const {
    auto s = steps(ix, iy);
    if (!s) return std::nullopt;
    return s->meters(world_->cell_size);
  }

  /// Distance from the source to an arbitrary position. Positions that fall
  /// in an obstacle cell snap to the nearest reachable cell within `snap_m`,
  /// paying the Euclidean offset to its center.
  std::optional<double> distance_at(Vec2 p, double snap_m = 0.3) const {
    auto [ix, iy] = world_->cell_of(p);
    if (auto d = cell_distance(ix, iy)) return d;
    const int r = static_cast<int>(std::ceil(snap_m / world_->cell_size));
    std::optional<double> best;
    for (int y = iy - r; y <= iy + r; ++y) {
      for (int x = ix - r; x <= ix + r; ++x) {
        auto d = cell_distance(x, y);
        if (!d) continue;
        const double off = distance(p, world_->cell_center(x, y));
        if (off > snap_m) continue;
        if (!best || *d + off < *best) best = *d + off;
      }
    }
    return best;
  }

  /// Cell sequence from (ix, iy) back to the source following exact
  /// predecessor steps. Empty when unreachable.
  std::vector<std::pair<int, int>> path_to_source(int ix, int iy) const {
    std::vector<std::pair<int, int>> path;
    if (!reachable(ix, iy)) return path;
    path.push_back({ix, iy});
    while (std::pair{ix, iy} != source_) {
      const StepCount here = steps_[world_->index(ix, iy)];
      bool moved = false;
      for (const auto& m : detail::kMoves) {
        // move from neighbour (ix-dx, iy-dy) into (ix, iy)
        const int px = ix - m.dx, py = iy - m.dy;
        if (!reachable(px, py) || !detail::move_allowed(*world_, px, py, m)) continue;
        StepCount prev = steps_[world_->index(px, py)];
        (m.diagonal ? prev.diagonal : prev.straight) += 1;
        if (prev == here) {
          ix = px;
          iy = py;
          moved = true;
          break;
        }
      }
      if (!moved) return {};
      path.push_back({ix, iy});
    }
    return path;
  }

  std::pair<int, int> source_cell() const { return source_; }

 private:
  const OccupancyWorld* world_ = nullptr;
  std::vector<StepCount> steps_;
  std::pair<int, int> source_{0, 0};
};

/// Length of the shortest 8-connected grid path, or nullopt when unreachable.
inline std::optional<double> geodesic_distance(const OccupancyWorld& world, Vec2 from, Vec2 to) {
  if (!world.is_free(from) || !world.is_free(to))
    throw Error(ErrorCode::kInvalidArgument, "geodesic endpoints must be in free space");
  const auto target = world.cell_of(to);
  GeodesicField field(world, from, target);
  return field.cell_distance(target.first, target.second);
}

/// Shortest grid path from `from` to `to` as cell centers, resampled to
/// `spacing` meters of arc length. The last point is always the goal cell center.
inline std::vector<Vec2> reference_path(const OccupancyWorld& world, const GeodesicField& to_field, Vec2 from,
                                        double spacing = 0.25) {
  auto [ix, iy] = world.cell_of(from);
  const auto cells = to_field.path_to_source(ix, iy);
  std::vector<Vec2> out;
  if (cells.empty()) return out;
  std::vector<Vec2> poly;
  poly.reserve(cells.size());
  for (auto [cx, cy] : cells) poly.push_back(world.cell_center(cx, cy));
  out.push_back(poly.front());
  double carried = 0.0;
  for (std::size_t i = 1; i < poly.size(); ++i) {
    const Vec2 a = poly[i - 1];
    const Vec2 b = poly[i];
    const double seg = distance(a, b);
    double along = spacing - carried;
    while (along <= seg) {
      out.push_back(a + (along / seg) * (b - a));
      along += spacing;
    }
    carried = seg - (along - spacing);
  }
  if (distance(out.back(), poly.back()) > 1e-12) out.push_back(poly.back());
  return out;
}

// --- feature encoders -------------------------------------------------------

/// Unit-norm pseudo-random embedding derived from a hash of `id`.
inline VectorXd landmark_embedding(int id, int dim) {
  Rng rng(hash_combine(0x5EEDF00DULL, static_cast<std::uint64_t>(static_cast<std::int64_t>(id))));
  VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  return v / v.norm();
}

struct Instruction {
  std::vector<int> landmark_sequence;
  MatrixXd token_features;  // L x D

  /// Mean-pooled global instruction token.
  VectorXd pooled() const { return token_features.colwise().mean().transpose(); }
};

inline Instruction encode_instruction(const OccupancyWorld& world, const std::vector<int>& landmark_sequence,
                                      int dim = kDefaultFeatureDim) {
  if (landmark_sequence.empty()) throw Error(ErrorCode::kInvalidArgument, "empty landmark sequence");
  if (dim <= 0) throw Error(ErrorCode::kInvalidArgument, "feature dimension must be positive");
  Instruction ins;
  ins.landmark_sequence = landmark_sequence;
  ins.token_features.resize(static_cast<Eigen::Index>(landmark_sequence.size()), dim);
  for (std::size_t i = 0; i < landmark_sequence.size(); ++i) {
    const int id = landmark_sequence[i];
    if (!world.find_landmark(id)) throw Error(ErrorCode::kUnknownLandmark, "landmark " + std::to_string(id));
    ins.token_features.row(static_cast<Eigen::Index>(i)) = landmark_embedding(id, dim).transpose();
  }
  return ins;
}

inline constexpr int kSectorBuckets = 8;

/// Raw descriptor blocks before projection.
struct VisualBlocks {
  VectorXd landmark;  // D entries; zero when outside every landmark
  std::array<double, kSectorBuckets> sectors{};
  double sin_heading = 0.0;
  double cos_heading = 1.0;

  VectorXd concat() const {
    VectorXd raw(landmark.size() + kSectorBuckets + 2);
    raw.head(landmark.size()) = landmark;
    for (int k = 0; k < kSectorBuckets; ++k) raw[landmark.size() + k] = sectors[k];
    raw[landmark.size() + kSectorBuckets] = sin_heading;
    raw[landmark.size() + kSectorBuckets + 1] = cos_heading;
    return raw;
  }
};

/// Sector k spans heading-relative offsets [45k - 22.5, 45k + 22.5) degrees;
/// bucket 0 is the one the agent faces.
inline int sector_of_ray(int i, int ray_count) {
  const double offset = kTwoPi * i / ray_count + kPi / kSectorBuckets;
  const int k = static_cast<int>(std::floor(offset / (kTwoPi / kSectorBuckets)));
  return k % kSectorBuckets;
}

inline VisualBlocks visual_blocks(const OccupancyWorld& world, const Pose& pose, const DepthScan& scan, int dim) {
  VisualBlocks b;
  const Landmark* lm = world.landmark_at(pose.position());
  b.landmark = lm ? landmark_embedding(lm->id, dim) : VectorXd::Zero(dim);
  std::array<int, kSectorBuckets> counts{};
  for (int i = 0; i < scan.ray_count; ++i) {
    const int k = sector_of_ray(i, scan.ray_count);
    b.sectors[k] += scan.ranges[i] / scan.max_range;
    ++counts[k];
  }
  for (int k = 0; k < kSectorBuckets; ++k)
    if (counts[k] > 0) b.sectors[k] /= counts[k];
  b.sin_heading = std::sin(pose.heading);
  b.cos_heading = std::cos(pose.heading);
  return b;
}

/// Fixed seeded D x (D + 10) projection applied to the raw descriptor.
inline const MatrixXd& visual_projection(int dim) {
  thread_local std::map<int, MatrixXd> cache;
  auto it = cache.find(dim);
  if (it != cache.end()) return it->second;
  const int cols = dim + kSectorBuckets + 2;
  MatrixXd p(dim, cols);
  Rng rng(hash_combine(0xF1C7u, static_cast<std::uint64_t>(dim)));
  const double scale = std::sqrt(3.0 / cols);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < cols; ++c) p(r, c) = rng.normal() * scale;
  return cache.emplace(dim, std::move(p)).first->second;
}

inline VectorXd node_visual_features(const OccupancyWorld& world, const Pose& pose, const DepthScan& scan,
                                     int dim = kDefaultFeatureDim) {
  return visual_projection(dim) * visual_blocks(world, pose, scan, dim).concat();
}

// --- generation -------------------------------------------------------------

namespace detail {

class GridPainter {
 public:
  explicit GridPainter(OccupancyWorld& w) : w_(w) {}

  void fill(double x0, double y0, double x1, double y1, std::uint8_t value) {
    const int ix0 = std::max(1, static_cast<int>(std::floor(x0 / w_.cell_size)));
    const int iy0 = std::max(1, static_cast<int>(std::floor(y0 / w_.cell_size)));
    const int ix1 = std::min(w_.width - 2, static_cast<int>(std::ceil(x1 / w_.cell_size)) - 1);
    const int iy1 = std::min(w_.height - 2, static_cast<int>(std::ceil(y1 / w_.cell_size)) - 1);
    for (int iy = iy0; iy <= iy1; ++iy)
      for (int ix = ix0; ix <= ix1; ++ix) w_.grid[w_.index(ix, iy)] = value;
  }

  void seal_border() {
    for (int ix = 0; ix < w_.width; ++ix) {
      w_.grid[w_.index(ix, 0)] = 1;
      w_.grid[w_.index(ix, w_.height - 1)] = 1;
    }
    for (int iy = 0; iy < w_.height; ++iy) {
      w_.grid[w_.index(0, iy)] = 1;
      w_.grid[w_.index(w_.width - 1, iy)] = 1;
    }
  }

 private:
  OccupancyWorld& w_;
};

// Random spanning tree over an n x n lattice (iterative randomized DFS).
inline std::vector<std::pair<int, int>> lattice_tree(int n, Rng& rng) {
  std::vector<std::pair<int, int>> edges;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(n) * n, 0);
  std::vector<int> stack{rng.uniform_int(0, n * n - 1)};
  seen[stack.back()] = 1;
  while (!stack.empty()) {
    const int cur = stack.back();
    const int cx = cur % n, cy = cur / n;
    std::array<int, 4> nb{};
    int count = 0;
    const std::array<std::pair<int, int>, 4> dirs{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
    for (auto [dx, dy] : dirs) {
      const int nx = cx + dx, ny = cy + dy;
      if (nx < 0 || ny < 0 || nx >= n || ny >= n || seen[ny * n + nx]) continue;
      nb[count++] = ny * n + nx;
    }
    if (count == 0) {
      stack.pop_back();
      continue;
    }
    const int next = nb[rng.uniform_int(0, count - 1)];
    seen[next] = 1;
    edges.emplace_back(cur, next);
    stack.push_back(next);
  }
  return edges;
}

inline void carve_corridor_network(OccupancyWorld& w, Rng& rng, double spacing, double width, double hall_prob) {
  GridPainter paint(w);
  const int n = std::max(2, static_cast<int>(std::floor(w.size_m / spacing)));
  const double margin = (w.size_m - (n - 1) * spacing) / 2.0;
  auto node_pos = [&](int k) { return Vec2{margin + (k % n) * spacing, margin + (k / n) * spacing}; };
  const double h = width / 2.0;
  for (auto [a, b] : lattice_tree(n, rng)) {
    const Vec2 pa = node_pos(a), pb = node_pos(b);
    paint.fill(std::min(pa.x, pb.x) - h, std::min(pa.y, pb.y) - h, std::max(pa.x, pb.x) + h,
               std::max(pa.y, pb.y) + h, 0);
  }
  for (int k = 0; k < n * n; ++k) {
    if (!rng.bernoulli(hall_prob)) continue;
    const Vec2 c = node_pos(k);
    const double r = rng.uniform(0.3, 0.45) * spacing;
    paint.fill(c.x - r, c.y - r, c.x + r, c.y + r, 0);
  }
}

inline void build_rooms(OccupancyWorld& w, Rng& rng) {
  GridPainter paint(w);
  paint.fill(0, 0, w.size_m, w.size_m, 0);
  const double room = 4.0;
  const int n = std::max(2, static_cast<int>(std::round(w.size_m / room)));
  const double step = w.size_m / n;
  const double wall = 0.2;
  const double door = 1.0;
  for (int k = 1; k < n; ++k) {
    paint.fill(k * step - wall / 2, 0, k * step + wall / 2, w.size_m, 1);
    paint.fill(0, k * step - wall / 2, w.size_m, k * step + wall / 2, 1);
  }
  auto open_door = [&](int a, int b) {
    const int ax = a % n, ay = a / n, bx = b % n, by = b / n;
    const double t = rng.uniform(0.25, 0.75);
    if (ay == by) {  // vertical wall between horizontally adjacent rooms
      const double x = std::max(ax, bx) * step;
      const double y = (ay + t) * step;
      paint.fill(x - wall, y - door / 2, x + wall, y + door / 2, 0);
    } else {
      const double y = std::max(ay, by) * step;
      const double x = (ax + t) * step;
      paint.fill(x - door / 2, y - wall, x + door / 2, y + wall, 0);
    }
  };
  for (auto [a, b] : lattice_tree(n, rng)) open_door(a, b);
  // a few loops
  for (int k = 0; k < n; ++k) {
    const int a = rng.uniform_int(0, n * n - 1);
    const int ax = a % n;
    if (ax + 1 < n) open_door(a, a + 1);
  }
}

inline void scatter_pillars(OccupancyWorld& w, Rng& rng, int count) {
  GridPainter paint(w);
  for (int k = 0; k < count; ++k) {
    const double s = rng.uniform(0.3, 0.7);
    const double x = rng.uniform(1.0, w.size_m - 1.0 - s);
    const double y = rng.uniform(1.0, w.size_m - 1.0 - s);
    paint.fill(x, y, x + s, y + s, 1);
  }
}

inline bool rect_free(const OccupancyWorld& w, const Rect& r) {
  auto [ix0, iy0] = w.cell_of({r.x0, r.y0});
  auto [ix1, iy1] = w.cell_of({r.x1, r.y1});
  for (int iy = iy0; iy <= iy1; ++iy)
    for (int ix = ix0; ix <= ix1; ++ix)
      if (w.blocked(ix, iy)) return false;
  return true;
}

inline std::optional<Vec2> sample_free_point(const OccupancyWorld& w, Rng& rng, const Rect& area, double clearance,
                                             int attempts = 400) {
  for (int a = 0; a < attempts; ++a) {
    const Vec2 p{rng.uniform(area.x0, area.x1), rng.uniform(area.y0, area.y1)};
    if (w.disk_free(p, clearance)) return p;
  }
  return std::nullopt;
}

}  // namespace detail

/// Number of landmark regions placed in every generated world.
inline constexpr int kLandmarksPerWorld = 5;

inline OccupancyWorld generate_world(std::uint64_t seed, WorldStyle style, double size_m) {
  if (!(size_m >= 5.0)) throw Error(ErrorCode::kInvalidArgument, "size_m must be >= 5.0");
  constexpr int kMaxAttempts = 40;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(hash_combine(hash_combine(seed, static_cast<std::uint64_t>(style)), attempt));
    OccupancyWorld w;
    w.seed = seed;
    w.style = style;
    w.size_m = size_m;
    w.cell_size = kDefaultCellSize;
    w.width = w.height = static_cast<int>(std::lround(size_m / w.cell_size));
    w.grid.assign(static_cast<std::size_t>(w.width) * w.height, 1);
    detail::GridPainter paint(w);
    switch (style) {
      case WorldStyle::kOpen:
        paint.fill(0, 0, size_m, size_m, 0);
        detail::scatter_pillars(w, rng, static_cast<int>(std::round(size_m * size_m / 30.0)));
        break;
      case WorldStyle::kCorridor:
        detail::carve_corridor_network(w, rng, 3.0, 1.0, 0.0);
        break;
      case WorldStyle::kRooms:
        detail::build_rooms(w, rng);
        break;
      case WorldStyle::kMixed:
        detail::carve_corridor_network(w, rng, 3.5, 1.1, 0.35);
        break;
    }
    paint.seal_border();

    // landmarks: free axis-aligned rectangles
    const Rect interior{0.5, 0.5, size_m - 0.5, size_m - 0.5};
    for (int tries = 0; tries < 2000 && static_cast<int>(w.landmarks.size()) < kLandmarksPerWorld; ++tries) {
      const double sx = rng.uniform(0.6, 1.4), sy = rng.uniform(0.6, 1.4);
      const double x = rng.uniform(interior.x0, interior.x1 - sx);
      const double y = rng.uniform(interior.y0, interior.y1 - sy);
      const Rect r{x, y, x + sx, y + sy};
      if (!detail::rect_free(w, r)) continue;
      bool overlaps = false;
      for (const auto& lm : w.landmarks)
        overlaps |= !(r.x1 < lm.region.x0 || lm.region.x1 < r.x0 || r.y1 < lm.region.y0 || lm.region.y1 < r.y0);
      if (overlaps) continue;
      w.landmarks.push_back({static_cast<int>(w.landmarks.size()) + 1, r});
    }
    if (static_cast<int>(w.landmarks.size()) < 2) continue;

    // goal inside a landmark, start far enough away geodesically
    const Landmark& goal_lm = w.landmarks[rng.uniform_int(0, static_cast<int>(w.landmarks.size()) - 1)];
    auto goal = detail::sample_free_point(w, rng, goal_lm.region, kStartClearance, 100);
    if (!goal) continue;
    w.goal = *goal;
    GeodesicField field(w, w.goal);
    bool placed = false;
    for (int tries = 0; tries < 200 && !placed; ++tries) {
      auto start = detail::sample_free_point(w, rng, interior, kStartClearance, 50);
      if (!start) break;
      auto [ix, iy] = w.cell_of(*start);
      auto d = field.cell_distance(ix, iy);
      if (!d || *d < 0.35 * size_m) continue;
      w.start = {start->x, start->y, wrap_angle(rng.uniform(-kPi, kPi))};
      placed = true;
    }
    if (placed) return w;
  }
  throw Error(ErrorCode::kGenerationFailed, "no valid start/goal pair for seed " + std::to_string(seed) + " style " +
                                                std::string(to_string(style)));
}

// --- serialization ----------------------------------------------------------

/// Checks every structural invariant; throws kInvalidArgument on violation.
inline void validate_world(const OccupancyWorld& w) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidArgument, "world: " + m); };
  if (w.width <= 2 || w.height <= 2 || w.grid.size() != static_cast<std::size_t>(w.width) * w.height)
    fail("grid dimensions");
  if (!(w.cell_size > 0)) fail("cell_size");
  for (int ix = 0; ix < w.width; ++ix)
    if (!w.blocked(ix, 0) || !w.blocked(ix, w.height - 1)) fail("open boundary");
  for (int iy = 0; iy < w.height; ++iy)
    if (!w.blocked(0, iy) || !w.blocked(w.width - 1, iy)) fail("open boundary");
  if (!w.is_free(w.start.position())) fail("start in obstacle");
  if (!w.is_free(w.goal)) fail("goal in obstacle");
  if (!(w.start.heading > -kPi && w.start.heading <= kPi)) fail("start heading not normalized");
  for (const auto& lm : w.landmarks)
    if (!detail::rect_free(w, lm.region)) fail("landmark " + std::to_string(lm.id) + " overlaps obstacles");
  if (!geodesic_distance(w, w.start.position(), w.goal)) fail("goal unreachable from start");
}

inline nlohmann::json world_to_json(const OccupancyWorld& w) {
  nlohmann::json runs = nlohmann::json::array();
  std::uint8_t cur = w.grid.empty() ? 0 : w.grid[0];
  std::size_t len = 0;
  for (auto v : w.grid) {
    if (v == cur) {
      ++len;
      continue;
    }
    runs.push_back({cur, len});
    cur = v;
    len = 1;
  }
  if (len > 0) runs.push_back({cur, len});
  nlohmann::json lms = nlohmann::json::array();
  for (const auto& lm : w.landmarks)
    lms.push_back({{"id", lm.id}, {"region", {lm.region.x0, lm.region.y0, lm.region.x1, lm.region.y1}}});
  return {{"seed", w.seed},
          {"style", to_string(w.style)},
          {"size_m", w.size_m},
          {"cell_size", w.cell_size},
          {"grid", {{"width", w.width}, {"height", w.height}, {"runs", runs}}},
          {"landmarks", lms},
          {"start", {w.start.x, w.start.y, w.start.heading}},
          {"goal", {w.goal.x, w.goal.y}}};
}

inline OccupancyWorld world_from_json(const nlohmann::json& j) {
  OccupancyWorld w;
  try {
    w.seed = j.at("seed").get<std::uint64_t>();
    w.style = parse_world_style(j.at("style").get<std::string>());
    w.size_m = j.at("size_m").get<double>();
    w.cell_size = j.at("cell_size").get<double>();
    const auto& g = j.at("grid");
    w.width = g.at("width").get<int>();
    w.height = g.at("height").get<int>();
    for (const auto& run : g.at("runs")) {
      const auto v = run.at(0).get<int>();
      const auto n = run.at(1).get<std::size_t>();
      if (v != 0 && v != 1) throw Error(ErrorCode::kInvalidArgument, "world: grid values must be 0/1");
      w.grid.insert(w.grid.end(), n, static_cast<std::uint8_t>(v));
    }
    for (const auto& lm : j.at("landmarks")) {
      const auto& r = lm.at("region");
      w.landmarks.push_back({lm.at("id").get<int>(),
                             {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(),
                              r.at(3).get<double>()}});
    }
    const auto& s = j.at("start");
    w.start = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
    const auto& goal = j.at("goal");
    w.goal = {goal.at(0).get<double>(), goal.at(1).get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("world json: ") + e.what());
  }
  validate_world(w);
  return w;
}

}  // namespace dgnav
