#pragma once
// Scene complexity -> merge threshold control laws, plus the calibration
// that fixes the median / maximum dispersion from a reference corpus.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgnav/common.hpp"

namespace dgnav {

enum class PolicyKind { kFixed, kGlobalLinear, kConditionalLinear, kSigmoid, kExponential, kRandom };

inline std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::kFixed: return "fixed";
    case PolicyKind::kGlobalLinear: return "global_linear";
    case PolicyKind::kConditionalLinear: return "conditional_linear";
    case PolicyKind::kSigmoid: return "sigmoid";
    case PolicyKind::kExponential: return "exponential";
    case PolicyKind::kRandom: return "random";
  }
  return "?";
}

inline PolicyKind parse_policy_kind(std::string_view s) {
  for (auto k : {PolicyKind::kFixed, PolicyKind::kGlobalLinear, PolicyKind::kConditionalLinear, PolicyKind::kSigmoid,
                 PolicyKind::kExponential, PolicyKind::kRandom})
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::kConfig, "unknown policy kind '" + std::string(s) + "'");
}

/// True for kinds that gate on sigma_med / sigma_max.
inline bool needs_calibration(PolicyKind k) {
  return k == PolicyKind::kConditionalLinear || k == PolicyKind::kSigmoid || k == PolicyKind::kExponential;
}

inline constexpr double kExponentialCurvature = 2.0;
inline constexpr double kSigmoidScaleDivisor = 4.0;

/// Maps dispersion sigma_t to merge threshold gamma_t. Value type; the random
/// kind owns its own seeded stream, so give each episode worker its own copy.
class ThresholdPolicy {
 public:
  PolicyKind kind = PolicyKind::kFixed;
  double gamma_fix = 0.5;
  double gamma_min = 0.25;
  double gamma_max = 0.5;
  double alpha = 0.5;
  double beta = 0.0;
  double sigma_med = 0.0;
  double sigma_max = 1.0;
  std::uint64_t rng_seed = 0;

  static ThresholdPolicy fixed(double gamma) {
    ThresholdPolicy p;
    p.kind = PolicyKind::kFixed;
    p.gamma_fix = gamma;
    p.gamma_min = std::min(p.gamma_min, gamma);
    p.gamma_max = std::max(p.gamma_max, gamma);
    return p;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfig, "threshold policy: " + m); };
    if (!(gamma_min > 0 && gamma_min <= gamma_fix && gamma_fix <= gamma_max))
      fail("requires 0 < gamma_min <= gamma_fix <= gamma_max");
    if (needs_calibration(kind) && !(sigma_med < sigma_max)) fail("requires sigma_med < sigma_max");
    if (kind == PolicyKind::kGlobalLinear && !(beta >= 0)) fail("requires beta >= 0");
  }

  /// Re-seeds the random stream; no effect on other kinds.
  void reset_stream(std::uint64_t seed) {
    rng_seed = seed;
    rng_.reseed(seed);
    stream_started_ = true;
  }

  double gamma(double sigma_t) {
    if (kind == PolicyKind::kRandom) {
      if (!stream_started_) reset_stream(rng_seed);
      return rng_.uniform(gamma_min, gamma_max);
    }
    return deterministic_gamma(sigma_t);
  }

  /// gamma for every kind except random (which needs the stream).
  double deterministic_gamma(double sigma_t) const {
    switch (kind) {
      case PolicyKind::kFixed:
        return gamma_fix;
      case PolicyKind::kGlobalLinear:
        return std::clamp(alpha - beta * sigma_t, gamma_min, gamma_max);
      case PolicyKind::kConditionalLinear: {
        if (sigma_t <= sigma_med) return gamma_fix;
        const double u = (sigma_t - sigma_med) / (sigma_max - sigma_med);
        return std::clamp(gamma_fix - u * (gamma_fix - gamma_min), gamma_min, gamma_fix);
      }
      case PolicyKind::kSigmoid: {
        if (sigma_t <= sigma_med) return gamma_fix;
        const double s = (sigma_max - sigma_med) / kSigmoidScaleDivisor;
        const double logistic = 1.0 / (1.0 + std::exp(-(sigma_t - sigma_med) / s));
        return std::clamp(gamma_max - (gamma_max - gamma_min) * logistic, gamma_min, gamma_max);
      }
      case PolicyKind::kExponential: {
        if (sigma_t <= sigma_med) return gamma_fix;
        const double u = std::clamp((sigma_t - sigma_med) / (sigma_max - sigma_med), 0.0, 1.0);
        const double k = kExponentialCurvature;
        return std::clamp(gamma_fix - (gamma_fix - gamma_min) * std::expm1(k * u) / std::expm1(k), gamma_min,
                          gamma_max);
      }
      case PolicyKind::kRandom:
        break;
    }
    throw Error(ErrorCode::kInvalidArgument, "random policy requires a stream");
  }

 private:
  Rng rng_;
  bool stream_started_ = false;
};

// --- calibration ------------------------------------------------------------

inline constexpr int kHistogramBins = 30;
inline constexpr std::size_t kMinCalibrationSamples = 100;

struct CalibrationReport {
  std::vector<double> sigma_samples;
  double sigma_med = 0.0;
  double sigma_max = 0.0;
  double mean = 0.0;
  double std = 0.0;
  double p10 = 0.0;
  double p90 = 0.0;
  std::vector<std::size_t> histogram;  // kHistogramBins equal bins over [0, sigma_max]
};

/// Exact median; even-length lists average the central pair.
inline double median(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorCode::kInsufficientSamples, "median of empty list");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

/// Linear-interpolation percentile, q in [0, 1], position (n - 1) * q.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw Error(ErrorCode::kInsufficientSamples, "percentile of empty list");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline CalibrationReport calibrate(std::span<const double> samples,
                                   std::size_t min_samples = kMinCalibrationSamples) {
  if (samples.size() < min_samples)
    throw Error(ErrorCode::kInsufficientSamples, "calibration needs at least " + std::to_string(min_samples) +
                                                     " sigma samples, got " + std::to_string(samples.size()));
  CalibrationReport r;
  r.sigma_samples.assign(samples.begin(), samples.end());
  r.sigma_med = median(r.sigma_samples);
  r.sigma_max = *std::max_element(samples.begin(), samples.end());
  double sum = 0.0;
  for (double s : samples) sum += s;
  r.mean = sum / static_cast<double>(samples.size());
  double ss = 0.0;
  for (double s : samples) ss += (s - r.mean) * (s - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(samples.size()));
  r.p10 = percentile(r.sigma_samples, 0.10);
  r.p90 = percentile(r.sigma_samples, 0.90);
  r.histogram.assign(kHistogramBins, 0);
  for (double s : samples) {
    int bin = 0;
    if (r.sigma_max > 0) bin = std::min(kHistogramBins - 1, static_cast<int>(s / r.sigma_max * kHistogramBins));
    ++r.histogram[std::max(bin, 0)];
  }
  return r;
}

struct LinearFit {
  double alpha = 0.0;
  double beta = 0.0;
};

/// Line through (p_lo, gamma_max) and (p_hi, gamma_min).
inline LinearFit fit_line_through_percentiles(double p_lo, double p_hi, double gamma_min, double gamma_max) {
  if (!(p_hi > p_lo))
    throw Error(ErrorCode::kDegenerateDistribution, "10th and 90th sigma percentiles coincide");
  LinearFit f;
  f.beta = (gamma_max - gamma_min) / (p_hi - p_lo);
  f.alpha = gamma_max + f.beta * p_lo;
  return f;
}

inline LinearFit fit_global_linear(const CalibrationReport& report, double gamma_min, double gamma_max) {
  return fit_line_through_percentiles(report.p10, report.p90, gamma_min, gamma_max);
}

/// Fills the calibrated fields of `policy` for its kind.
inline void apply_calibration(ThresholdPolicy& policy, const CalibrationReport& report) {
  policy.sigma_med = report.sigma_med;
  policy.sigma_max = report.sigma_max;
  if (policy.kind == PolicyKind::kGlobalLinear) {
    const auto fit = fit_global_linear(report, policy.gamma_min, policy.gamma_max);
    policy.alpha = fit.alpha;
    policy.beta = fit.beta;
  }
}

inline nlohmann::json report_to_json(const CalibrationReport& r) {
  return {{"sigma_med", r.sigma_med}, {"sigma_max", r.sigma_max}, {"mean", r.mean},
          {"std", r.std},             {"p10", r.p10},             {"p90", r.p90},
          {"n_samples", r.sigma_samples.size()}, {"histogram", r.histogram}};
}

/// Loads the summary fields; samples are not stored in the JSON form.
inline CalibrationReport report_from_json(const nlohmann::json& j) {
  CalibrationReport r;
  try {
    r.sigma_med = j.at("sigma_med").get<double>();
    r.sigma_max = j.at("sigma_max").get<double>();
    r.mean = j.at("mean").get<double>();
    r.std = j.at("std").get<double>();
    r.p10 = j.value("p10", r.sigma_med);
    r.p90 = j.value("p90", r.sigma_max);
    r.histogram = j.at("histogram").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("calibration report: ") + e.what());
  }
  return r;
}

}  // namespace dgnav
