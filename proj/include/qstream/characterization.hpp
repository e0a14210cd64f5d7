#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qstream/errors.hpp"
#include "qstream/sensor_model.hpp"

namespace qstream {

/// One point of the SNR-vs-flux curve for a bit budget of N frames.
struct SnrCurvePoint {
  double lambda = 0.0;
  double p = 0.0;
  double lambda_minus = 0.0;
  double lambda_plus = 0.0;
  double epsilon = 0.0;
  double snr_db = 0.0;
  bool saturated = false;
};

struct DynamicRange {
  std::uint64_t n_frames = 0;
  double snr_threshold_db = 0.0;
  double lambda_lo = 0.0;
  double lambda_hi = 0.0;

  [[nodiscard]] bool contains(const DynamicRange& other) const noexcept {
    return lambda_lo <= other.lambda_lo && other.lambda_hi <= lambda_hi;
  }
};

inline constexpr double kSaturationClamp = 1e-12;

/// Flux error from a one-sigma binomial band around the response p(lambda).
/// The band edges are mapped back through the inverse response; the error is
/// the larger of the two flux offsets. When p + sigma reaches 1 the point is
/// saturated and reported with SNR = -inf.
[[nodiscard]] inline SnrCurvePoint snr_at(double lambda, std::uint64_t n_frames) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw DomainError("snr_at: flux must be finite and > 0");
  }
  if (n_frames == 0) throw std::invalid_argument("snr_at: frame count must be >= 1");

  SnrCurvePoint pt;
  pt.lambda = lambda;
  pt.p = detection_probability(lambda);
  const double sigma = std::sqrt(pt.p * (1.0 - pt.p) / static_cast<double>(n_frames));
  const double hi = pt.p + sigma;
  const double lo = pt.p - sigma;

  pt.lambda_minus = lo > 0.0 ? -std::log1p(-lo) : 0.0;
  if (hi >= 1.0 - kSaturationClamp) {
    pt.saturated = true;
    pt.lambda_plus = -std::log1p(-(1.0 - kSaturationClamp));
    pt.epsilon = std::numeric_limits<double>::infinity();
    pt.snr_db = -std::numeric_limits<double>::infinity();
    return pt;
  }
  pt.lambda_plus = -std::log1p(-hi);
  pt.epsilon = std::max(pt.lambda_plus - lambda, lambda - pt.lambda_minus);
  pt.snr_db = 20.0 * std::log10(lambda / pt.epsilon);
  return pt;
}

[[nodiscard]] inline std::vector<SnrCurvePoint> response_curve(std::span<const double> grid,
                                                               std::uint64_t n_frames) {
  std::vector<SnrCurvePoint> out;
  out.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw std::invalid_argument("response_curve: grid must be strictly increasing");
    }
    out.push_back(snr_at(grid[i], n_frames));
  }
  return out;
}

/// `count` log-spaced points covering [lo, hi] inclusive.
[[nodiscard]] inline std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0 && hi > lo) || count < 2) {
    throw std::invalid_argument("log_grid: need 0 < lo < hi and count >= 2");
  }
  std::vector<double> g(count);
  const double step = std::log(hi / lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) g[i] = lo * std::exp(step * static_cast<double>(i));
  g.back() = hi;
  return g;
}

inline void write_curve_csv(std::ostream& os, std::span<const SnrCurvePoint> curve) {
  os << "lambda,p,lambda_minus,lambda_plus,epsilon,snr_db\n";
  os.precision(10);
  for (const auto& pt : curve) {
    os << pt.lambda << ',' << pt.p << ',' << pt.lambda_minus << ',' << pt.lambda_plus << ','
       << pt.epsilon << ',' << pt.snr_db << '\n';
  }
}

struct SearchBounds {
  double lambda_min = 1e-4;
  double lambda_max = 1e2;
};

namespace detail {

// Bisects in log-flux between a point below and a point at/above threshold.
inline double bisect_crossing(double below, double above, std::uint64_t n, double threshold_db) {
  double a = std::log(below);
  double b = std::log(above);
  while (std::abs(b - a) > 1e-7) {
    const double mid = 0.5 * (a + b);
    if (snr_at(std::exp(mid), n).snr_db >= threshold_db) {
      b = mid;
    } else {
      a = mid;
    }
  }
  return std::exp(b);
}

}  // namespace detail

inline constexpr std::size_t kCoarseScanPoints = 200;

/// 20 dB-style dynamic range: a 200-point log scan locates the outermost grid
/// points meeting the threshold, then bisection refines each crossing.
/// Returns nullopt when the threshold is never reached inside the bounds.
[[nodiscard]] inline std::optional<DynamicRange> try_dynamic_range(std::uint64_t n_frames,
                                                                   double threshold_db,
                                                                   SearchBounds bounds = {}) {
  if (n_frames < 16) throw std::invalid_argument("dynamic_range: N must be >= 16");
  const auto grid = log_grid(bounds.lambda_min, bounds.lambda_max, kCoarseScanPoints);
  std::optional<std::size_t> first;
  std::size_t last = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (snr_at(grid[i], n_frames).snr_db >= threshold_db) {
      if (!first) first = i;
      last = i;
    }
  }
  if (!first) return std::nullopt;

  DynamicRange r;
  r.n_frames = n_frames;
  r.snr_threshold_db = threshold_db;
  r.lambda_lo = *first == 0 ? grid.front()
                            : detail::bisect_crossing(grid[*first - 1], grid[*first], n_frames,
                                                      threshold_db);
  r.lambda_hi = last + 1 == grid.size()
                    ? grid.back()
                    : detail::bisect_crossing(grid[last + 1], grid[last], n_frames,
                                              threshold_db);
  return r;
}

[[nodiscard]] inline DynamicRange dynamic_range(std::uint64_t n_frames, double threshold_db,
                                                SearchBounds bounds = {}) {
  auto r = try_dynamic_range(n_frames, threshold_db, bounds);
  if (!r) {
    throw EmptyRangeError("dynamic_range: SNR never reaches " + std::to_string(threshold_db) +
                          " dB for N=" + std::to_string(n_frames));
  }
  return *r;
}

}  // namespace qstream
