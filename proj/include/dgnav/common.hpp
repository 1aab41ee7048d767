#pragma once
// Shared primitives: errors, planar geometry, angle wrapping and seeded
// random streams. Everything here is header-only and allocation-free.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dgnav {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum class ErrorCode {
  kGenerationFailed,
  kPoseInObstacle,
  kUnknownLandmark,
  kInvalidArgument,
  kInsufficientSamples,
  kDegenerateDistribution,
  kUnknownNode,
  kDimensionMismatch,
  kNonFinite,
  kUnreachable,
  kMissingCalibration,
  kConfig,
  kIo,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kGenerationFailed: return "generation-failed";
    case ErrorCode::kPoseInObstacle: return "pose-in-obstacle";
    case ErrorCode::kUnknownLandmark: return "unknown-landmark-id";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInsufficientSamples: return "insufficient-samples";
    case ErrorCode::kDegenerateDistribution: return "degenerate-distribution";
    case ErrorCode::kUnknownNode: return "unknown-node";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kUnreachable: return "unreachable";
    case ErrorCode::kMissingCalibration: return "missing-calibration";
    case ErrorCode::kConfig: return "config-error";
    case ErrorCode::kIo: return "io-error";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// True for errors caused by user input rather than an internal fault.
  bool is_user_error() const noexcept {
    switch (code_) {
      case ErrorCode::kInsufficientSamples:
      case ErrorCode::kMissingCalibration:
      case ErrorCode::kConfig:
      case ErrorCode::kIo:
      case ErrorCode::kInvalidArgument:
      case ErrorCode::kUnknownLandmark:
      case ErrorCode::kDegenerateDistribution:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorCode code_;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend constexpr bool operator==(Vec2 a, Vec2 b) = default;

  double norm() const { return std::hypot(x, y); }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, kTwoPi);
  if (r <= -kPi) r += kTwoPi;
  return r;
}

// --- seeded streams ---------------------------------------------------------

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (splitmix64(b) + 0x632BE59BD9B4E019ULL));
}

/// Small deterministic generator (xoshiro256**). Portable across standard
/// libraries, unlike std distributions, so seeded outputs are stable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) {
      s = splitmix64(s);
      w = s;
    }
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4]{};
};

}  // namespace dgnav
