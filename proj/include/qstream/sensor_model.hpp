#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qstream/counter_rng.hpp"
#include "qstream/errors.hpp"
#include "qstream/image.hpp"

namespace qstream {

/// One binary readout of the sensor. `bits` holds one 0/1 byte per pixel,
/// row-major; `timestamp` is the frame index.
struct BitPlane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;
  std::uint64_t timestamp = 0;

  BitPlane() = default;
  BitPlane(std::size_t w, std::size_t h, std::uint64_t t = 0)
      : width(w), height(h), bits(w * h, 0), timestamp(t) {}

  [[nodiscard]] std::size_t pixel_count() const noexcept { return width * height; }

  [[nodiscard]] std::uint8_t operator()(std::size_t x, std::size_t y) const {
    return bits[y * width + x];
  }

  [[nodiscard]] std::size_t count_ones() const noexcept {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }

  friend bool operator==(const BitPlane&, const BitPlane&) = default;
};

using HotPixelMask = Image<std::uint8_t>;

[[nodiscard]] inline std::size_t count_flagged(const HotPixelMask& mask) {
  std::size_t n = 0;
  for (auto f : mask.pixels()) n += (f != 0);
  return n;
}

inline constexpr double kDefaultDarkRate = 7.5;      // counts/s/pixel
inline constexpr double kDefaultFrameRate = 20000.0;  // frames/s
inline constexpr double kMinFrameRate = 1e4;
inline constexpr double kMaxFrameRate = 1e5;

struct SensorConfig {
  double pdp = 1.0;                       // eta, folded into flux when 1
  double dark_rate = kDefaultDarkRate;    // counts/s/pixel
  double frame_rate = kDefaultFrameRate;  // frames/s
  std::optional<HotPixelMask> hot_pixels;
  double hot_pixel_dark_rate = 2000.0;    // counts/s for flagged pixels

  [[nodiscard]] double dark_per_frame() const noexcept { return dark_rate / frame_rate; }
  [[nodiscard]] double hot_dark_per_frame() const noexcept {
    return hot_pixel_dark_rate / frame_rate;
  }

  void validate() const {
    if (!(pdp > 0.0 && pdp <= 1.0)) throw ConfigError("must lie in (0, 1]", "sensor.pdp");
    if (!(dark_rate >= 0.0) || !std::isfinite(dark_rate)) {
      throw ConfigError("must be finite and >= 0", "sensor.dark_rate");
    }
    if (!(frame_rate >= kMinFrameRate && frame_rate <= kMaxFrameRate)) {
      throw ConfigError("must lie in [1e4, 1e5] frames/s", "sensor.frame_rate");
    }
    if (!(dark_per_frame() < 1.0)) {
      throw ConfigError("dark counts per frame must be < 1", "sensor.dark_rate");
    }
    if (!(hot_pixel_dark_rate >= 0.0) || !std::isfinite(hot_pixel_dark_rate)) {
      throw ConfigError("must be finite and >= 0", "sensor.hot_pixel_dark_rate");
    }
  }
};

/// Draws a frame rate uniformly in [1e4, 1e5] frames/s from a seed.
[[nodiscard]] inline double draw_frame_rate(std::uint64_t seed) {
  return kMinFrameRate + (kMaxFrameRate - kMinFrameRate) * counter_uniform(seed, 0x46525F52ULL);
}

/// Probability that a pixel fires within one frame: 1 - exp(-(lambda + d)).
[[nodiscard]] inline double detection_probability(double lambda, double dark_per_frame = 0.0) {
  if (!std::isfinite(lambda) || !std::isfinite(dark_per_frame) || lambda < 0.0 ||
      dark_per_frame < 0.0) {
    throw DomainError("detection_probability: rates must be finite and non-negative");
  }
  return -std::expm1(-(lambda + dark_per_frame));
}

/// Per-frame key derived from the run seed and frame index.
[[nodiscard]] constexpr std::uint64_t frame_key(std::uint64_t seed, std::uint64_t t) noexcept {
  return hash_combine(splitmix64(seed), t);
}

/// Draws one binary frame. Only "at least one arrival" is observable, so each
/// pixel is a Bernoulli draw with the Poisson zero-count complement as its
/// probability; this is distributionally identical to thresholding a Poisson
/// count.
[[nodiscard]] inline BitPlane simulate_bitplane(const FluxFrame& flux, const SensorConfig& cfg,
                                                std::uint64_t seed, std::uint64_t t) {
  if (cfg.hot_pixels && !cfg.hot_pixels->same_shape(flux)) {
    throw ShapeError("simulate_bitplane: hot pixel mask does not match flux frame");
  }
  const std::uint64_t key = frame_key(seed, t);
  const double d = cfg.dark_per_frame();
  const double d_hot = cfg.hot_dark_per_frame();
  BitPlane out(flux.width(), flux.height(), t);
  const auto lam = flux.pixels();
  for (std::size_t i = 0; i < lam.size(); ++i) {
    const bool hot = cfg.hot_pixels && (*cfg.hot_pixels)[i] != 0;
    const double rate = cfg.pdp * lam[i] + (hot ? d_hot : d);
    const double p = -std::expm1(-rate);
    out.bits[i] = counter_uniform(key, i) < p ? 1 : 0;
  }
  return out;
}

using FluxProvider = std::function<FluxFrame(std::uint64_t t)>;

/// Lazily simulates a bitplane stream from a time-varying flux. Frame t is
/// exactly `simulate_bitplane(provider(t), cfg, seed, t)`.
class BitplaneSequence {
public:
  BitplaneSequence(FluxProvider provider, SensorConfig cfg, std::uint64_t n_frames,
                   std::uint64_t seed)
      : provider_(std::move(provider)), cfg_(std::move(cfg)), n_frames_(n_frames), seed_(seed) {
    if (n_frames_ == 0) throw std::invalid_argument("simulate_sequence: n_frames must be >= 1");
    cfg_.validate();
  }

  [[nodiscard]] std::uint64_t size() const noexcept { return n_frames_; }
  [[nodiscard]] std::uint64_t position() const noexcept { return next_t_; }

  std::optional<BitPlane> next() {
    if (next_t_ >= n_frames_) return std::nullopt;
    FluxFrame flux = provider_(next_t_);
    if (!shape_) {
      shape_ = {flux.width(), flux.height()};
    } else if (shape_->first != flux.width() || shape_->second != flux.height()) {
      throw ShapeError("simulate_sequence: flux provider changed dimensions at frame " +
                       std::to_string(next_t_));
    }
    return simulate_bitplane(flux, cfg_, seed_, next_t_++);
  }

private:
  FluxProvider provider_;
  SensorConfig cfg_;
  std::uint64_t n_frames_;
  std::uint64_t seed_;
  std::uint64_t next_t_ = 0;
  std::optional<std::pair<std::size_t, std::size_t>> shape_;
};

[[nodiscard]] inline BitplaneSequence simulate_sequence(FluxProvider provider,
                                                        const SensorConfig& cfg,
                                                        std::uint64_t n_frames,
                                                        std::uint64_t seed) {
  return BitplaneSequence(std::move(provider), cfg, n_frames, seed);
}

inline constexpr std::size_t kMinDarkFrames = 256;

/// Flags pixels whose dark count exceeds mean + z * std of the per-pixel
/// count distribution.
[[nodiscard]] inline HotPixelMask calibrate_hot_pixels(std::span<const BitPlane> dark_frames,
                                                       double z_threshold) {
  if (dark_frames.empty()) throw std::invalid_argument("calibrate_hot_pixels: no dark frames");
  if (dark_frames.size() < kMinDarkFrames) {
    throw std::invalid_argument("calibrate_hot_pixels: need at least " +
                                std::to_string(kMinDarkFrames) + " dark frames, got " +
                                std::to_string(dark_frames.size()));
  }
  const std::size_t w = dark_frames.front().width;
  const std::size_t h = dark_frames.front().height;
  std::vector<std::uint64_t> counts(w * h, 0);
  for (const auto& f : dark_frames) {
    if (f.width != w || f.height != h) {
      throw ShapeError("calibrate_hot_pixels: dark frames differ in shape");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += f.bits[i];
  }

  double mean = 0.0;
  for (auto c : counts) mean += static_cast<double>(c);
  mean /= static_cast<double>(counts.size());
  double var = 0.0;
  for (auto c : counts) {
    const double dev = static_cast<double>(c) - mean;
    var += dev * dev;
  }
  var /= static_cast<double>(counts.size());
  const double limit = mean + z_threshold * std::sqrt(var);

  HotPixelMask mask(w, h, 0);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    mask[i] = static_cast<double>(counts[i]) > limit ? 1 : 0;
  }
  return mask;
}

}  // namespace qstream
