#pragma once
// Ghost-node candidates from a depth scan and their angular dispersion.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dgnav/common.hpp"
#include "dgnav/world.hpp"

namespace dgnav {

struct GhostCandidate {
  double relative_angle = 0.0;  // w.r.t. agent heading, (-pi, pi]
  double distance = 0.0;
  Vec2 position;
};

struct CandidateSet {
  std::vector<GhostCandidate> candidates;
  double sigma = 0.0;
  double mean_angle = 0.0;

  std::vector<double> angles() const {
    std::vector<double> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) out.push_back(c.relative_angle);
    return out;
  }
};

enum class DispersionMode { kLinear, kCircular };

struct AngleStats {
  double mean = 0.0;
  double sigma = 0.0;
};

/// Population standard deviation of wrapped angles. kLinear averages the
/// wrapped values arithmetically; kCircular measures deviations around the
/// circular mean instead.
inline AngleStats angle_stats(std::span<const double> angles, DispersionMode mode = DispersionMode::kLinear) {
  AngleStats st;
  const auto n = angles.size();
  if (n == 0) return st;
  std::vector<double> wrapped(n);
  std::transform(angles.begin(), angles.end(), wrapped.begin(), wrap_angle);
  if (mode == DispersionMode::kLinear) {
    double sum = 0.0;
    for (double a : wrapped) sum += a;
    st.mean = sum / static_cast<double>(n);
  } else {
    double s = 0.0, c = 0.0;
    for (double a : wrapped) {
      s += std::sin(a);
      c += std::cos(a);
    }
    st.mean = std::atan2(s, c);
  }
  if (n <= 1) return st;
  double ss = 0.0;
  for (double a : wrapped) {
    const double d = mode == DispersionMode::kLinear ? a - st.mean : wrap_angle(a - st.mean);
    ss += d * d;
  }
  st.sigma = std::sqrt(ss / static_cast<double>(n));
  return st;
}

inline double dispersion(std::span<const double> angles, DispersionMode mode = DispersionMode::kLinear) {
  return angle_stats(angles, mode).sigma;
}

/// Constants of the deterministic gap finder.
struct GapFinderParams {
  double navigable_range = 1.2;   // every ray of a sector must exceed this
  double standoff = 0.8;          // fraction of the central ray range
  double max_distance = 2.5;
  double min_distance = 0.3;
  double split_above_deg = 90.0;  // wider sectors are split ...
  double split_width_deg = 45.0;  // ... into pieces at most this wide
  int max_candidates = 8;
  DispersionMode mode = DispersionMode::kLinear;
};

/// A contiguous run of rays [start, start + length) modulo ray_count.
struct RaySector {
  int start = 0;
  int length = 0;
};

/// Maximal runs of rays whose ranges all exceed `threshold`, in circular
/// order beginning after the first closed ray. A fully open scan yields a
/// single sector starting at ray 0.
inline std::vector<RaySector> open_sectors(const DepthScan& scan, double threshold) {
  const int n = scan.ray_count;
  std::vector<RaySector> out;
  int first_closed = -1;
  for (int i = 0; i < n; ++i) {
    if (!(scan.ranges[i] > threshold)) {
      first_closed = i;
      break;
    }
  }
  if (first_closed < 0) {
    out.push_back({0, n});
    return out;
  }
  int run_start = -1;
  for (int k = 1; k <= n; ++k) {
    const int i = (first_closed + k) % n;
    const bool open = scan.ranges[i] > threshold;
    if (open && run_start < 0) run_start = i;
    if (!open && run_start >= 0) {
      out.push_back({run_start, (i - run_start + n) % n});
      run_start = -1;
    }
  }
  return out;
}

/// Splits sectors wider than params.split_above_deg into equal pieces.
inline std::vector<RaySector> split_sectors(const std::vector<RaySector>& sectors, int ray_count,
                                            const GapFinderParams& params) {
  std::vector<RaySector> out;
  const double deg_per_ray = 360.0 / ray_count;
  for (const auto& s : sectors) {
    const double width = s.length * deg_per_ray;
    if (width <= params.split_above_deg) {
      out.push_back(s);
      continue;
    }
    const int pieces = static_cast<int>(std::ceil(width / params.split_width_deg - 1e-9));
    for (int j = 0; j < pieces; ++j) {
      const int a = j * s.length / pieces;
      const int b = (j + 1) * s.length / pieces;
      out.push_back({(s.start + a) % ray_count, b - a});
    }
  }
  return out;
}

/// Deterministic gap finder: one candidate per open sector, placed along the
/// sector's central ray. Candidates come back sorted by relative angle.
inline CandidateSet predict_waypoints(const DepthScan& scan, const Pose& pose, const OccupancyWorld& world,
                                      double clearance = 0.15, const GapFinderParams& params = {}) {
  auto sectors = split_sectors(open_sectors(scan, params.navigable_range), scan.ray_count, params);
  // widest first; ties keep circular order
  std::stable_sort(sectors.begin(), sectors.end(),
                   [](const RaySector& a, const RaySector& b) { return a.length > b.length; });
  CandidateSet out;
  for (const auto& s : sectors) {
    if (static_cast<int>(out.candidates.size()) >= params.max_candidates) break;
    const int central = (s.start + (s.length - 1) / 2) % scan.ray_count;
    const double range = scan.ranges[central];
    const double dist = std::min({params.standoff * range, params.max_distance, scan.max_range - clearance});
    if (dist < params.min_distance) continue;
    GhostCandidate c;
    c.relative_angle = wrap_angle(kTwoPi * central / scan.ray_count);
    c.distance = dist;
    const double heading = pose.heading + c.relative_angle;
    c.position = {pose.x + dist * std::cos(heading), pose.y + dist * std::sin(heading)};
    if (!world.disk_free(c.position, clearance)) continue;
    out.candidates.push_back(c);
  }
  std::stable_sort(out.candidates.begin(), out.candidates.end(),
                   [](const GhostCandidate& a, const GhostCandidate& b) { return a.relative_angle < b.relative_angle; });
  const auto angles = out.angles();
  const auto st = angle_stats(angles, params.mode);
  out.sigma = st.sigma;
  out.mean_angle = st.mean;
  return out;
}

}  // namespace dgnav
