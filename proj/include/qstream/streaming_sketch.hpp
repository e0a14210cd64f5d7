#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "qstream/errors.hpp"
#include "qstream/sensor_model.hpp"

namespace qstream {

/// Effective exposure window of an aging factor, W = 1/alpha frames.
[[nodiscard]] inline double effective_window(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw DomainError("effective_window: aging factor must lie in (0, 1]");
  }
  return 1.0 / alpha;
}

/// Set of exposure windows, stored longest first.
class ExposureLadder {
public:
  explicit ExposureLadder(std::vector<double> windows) : windows_(std::move(windows)) {
    if (windows_.empty()) throw ConfigError("at least one channel required", "ladder.windows");
    for (double w : windows_) {
      if (!std::isfinite(w) || w < 1.0) {
        throw ConfigError("every window must be finite and >= 1 frame", "ladder.windows");
      }
    }
    const bool inc = std::is_sorted(windows_.begin(), windows_.end());
    const bool dec = std::is_sorted(windows_.begin(), windows_.end(), std::greater<>{});
    if (!inc && !dec) throw ConfigError("windows must be sorted", "ladder.windows");
    std::sort(windows_.begin(), windows_.end(), std::greater<>{});
    if (std::adjacent_find(windows_.begin(), windows_.end()) != windows_.end()) {
      throw ConfigError("windows must be strictly monotone", "ladder.windows");
    }
  }

  /// C windows spaced geometrically between w_min and w_max inclusive.
  static ExposureLadder geometric(std::size_t channels = 8, double w_min = 16.0,
                                  double w_max = 4096.0) {
    if (channels == 0) throw ConfigError("at least one channel required", "ladder.channels");
    if (channels == 1) return ExposureLadder({w_max});
    std::vector<double> w(channels);
    for (std::size_t k = 0; k < channels; ++k) {
      const double frac = static_cast<double>(k) / static_cast<double>(channels - 1);
      w[k] = w_min * std::pow(w_max / w_min, frac);
    }
    w.front() = w_min;
    w.back() = w_max;
    return ExposureLadder(std::move(w));
  }

  /// Powers of two 2^lo .. 2^hi with the given exponent step.
  static ExposureLadder dyadic(int lo_exp = 4, int hi_exp = 12, int step = 1) {
    if (step <= 0 || lo_exp < 0 || hi_exp < lo_exp) {
      throw ConfigError("invalid dyadic exponents", "ladder");
    }
    std::vector<double> w;
    for (int e = hi_exp; e >= lo_exp; e -= step) w.push_back(std::ldexp(1.0, e));
    return ExposureLadder(std::move(w));
  }

  static ExposureLadder default_ladder() { return geometric(); }

  [[nodiscard]] std::size_t channels() const noexcept { return windows_.size(); }
  [[nodiscard]] const std::vector<double>& windows() const noexcept { return windows_; }
  [[nodiscard]] double window(std::size_t k) const { return windows_.at(k); }
  [[nodiscard]] double alpha(std::size_t k) const { return 1.0 / windows_.at(k); }
  [[nodiscard]] double longest() const noexcept { return windows_.front(); }
  [[nodiscard]] double shortest() const noexcept { return windows_.back(); }

  friend bool operator==(const ExposureLadder&, const ExposureLadder&) = default;

private:
  std::vector<double> windows_;
};

/// Polled view of a sketch: C planar channels (longest window first), all
/// taken at the same frame index.
struct ExposureStack {
  std::size_t width = 0;
  std::size_t height = 0;
  std::uint64_t timestamp = 0;
  std::vector<double> windows;
  std::vector<std::uint8_t> quantized;  // C * width * height
  std::optional<std::vector<float>> raw;
  std::vector<std::uint64_t> channel_timestamps;

  [[nodiscard]] std::size_t channels() const noexcept { return windows.size(); }
  [[nodiscard]] std::size_t pixel_count() const noexcept { return width * height; }

  [[nodiscard]] std::span<const std::uint8_t> plane(std::size_t k) const {
    return std::span<const std::uint8_t>(quantized).subspan(k * pixel_count(), pixel_count());
  }

  /// Channel value in [0, 1]; full precision when available.
  [[nodiscard]] double value(std::size_t k, std::size_t i) const {
    const std::size_t idx = k * pixel_count() + i;
    return raw ? static_cast<double>((*raw)[idx]) : quantized[idx] / 255.0;
  }

  /// All channels share the stack timestamp.
  [[nodiscard]] bool is_consistent() const noexcept {
    if (channel_timestamps.size() != channels()) return false;
    return std::all_of(channel_timestamps.begin(), channel_timestamps.end(),
                       [&](std::uint64_t t) { return t == timestamp; });
  }

  friend bool operator==(const ExposureStack&, const ExposureStack&) = default;
};

/// 8-bit quantization with round-half-away-from-zero.
[[nodiscard]] inline std::uint8_t quantize_unit(double r) noexcept {
  const double scaled = std::round(255.0 * std::clamp(r, 0.0, 1.0));
  return static_cast<std::uint8_t>(scaled);
}

/// Online multi-exposure exponential mean. Each channel k follows
///   R_k(t) = (1 - alpha_k) R_k(t-1) + alpha_k B(t)
/// updated with one multiply when the bit is 0 and one multiply plus one add
/// when it is 1. Not thread-safe; see StreamingSketch for concurrent polling.
template <class Real>
class BasicSketch {
  static_assert(std::is_floating_point_v<Real>);

public:
  BasicSketch(ExposureLadder ladder, std::size_t width, std::size_t height, double r0 = 0.0)
      : ladder_(std::move(ladder)), width_(width), height_(height) {
    if (width_ == 0 || height_ == 0) throw ConfigError("sketch dimensions must be positive");
    if (!(r0 >= 0.0 && r0 <= 1.0)) throw ConfigError("initial value must lie in [0, 1]");
    const std::size_t c = ladder_.channels();
    alpha_.resize(c);
    decay_.resize(c);
    for (std::size_t k = 0; k < c; ++k) {
      // Snap alpha to a grid where 1 - alpha is exact in Real.
      constexpr int bits = std::numeric_limits<Real>::digits;
      const double snapped =
          std::ldexp(std::nearbyint(std::ldexp(ladder_.alpha(k), bits)), -bits);
      alpha_[k] = static_cast<Real>(std::max(snapped, std::ldexp(1.0, -bits)));
      decay_[k] = Real(1) - alpha_[k];
    }
    state_.assign(c * pixel_count(), static_cast<Real>(r0));
    channel_t_.assign(c, 0);
  }

  [[nodiscard]] const ExposureLadder& ladder() const noexcept { return ladder_; }
  [[nodiscard]] std::size_t width() const noexcept { return width_; }
  [[nodiscard]] std::size_t height() const noexcept { return height_; }
  [[nodiscard]] std::size_t channels() const noexcept { return ladder_.channels(); }
  [[nodiscard]] std::size_t pixel_count() const noexcept { return width_ * height_; }
  [[nodiscard]] std::uint64_t frames() const noexcept { return t_; }
  [[nodiscard]] std::uint64_t op_counter() const noexcept { return ops_; }

  /// Aging factor actually used by the kernel for channel k.
  [[nodiscard]] double alpha(std::size_t k) const { return static_cast<double>(alpha_.at(k)); }

  [[nodiscard]] std::span<const Real> channel(std::size_t k) const {
    return std::span<const Real>(state_).subspan(k * pixel_count(), pixel_count());
  }

  void update(const BitPlane& plane) {
    if (plane.width != width_ || plane.height != height_) {
      throw ShapeError("sketch update: bitplane is " + std::to_string(plane.width) + "x" +
                       std::to_string(plane.height) + ", sketch is " + std::to_string(width_) +
                       "x" + std::to_string(height_));
    }
    if (plane.timestamp != t_) {
      throw SequencingError("sketch update: expected frame " + std::to_string(t_) + ", got " +
                            std::to_string(plane.timestamp));
    }
    const std::size_t n = pixel_count();
    const std::uint8_t* bits = plane.bits.data();
    for (std::size_t k = 0; k < channels(); ++k) {
      Real* r = state_.data() + k * n;
      const Real a = alpha_[k];
      const Real dec = decay_[k];
      for (std::size_t i = 0; i < n; ++i) {
        Real v = r[i] * dec;
        if (bits[i]) v += a;
        r[i] = v;
      }
      channel_t_[k] = t_ + 1;
    }
    const std::uint64_t ones = plane.count_ones();
    ops_ += channels() * (n + ones);
    ++t_;
  }

  /// Snapshot at the current frame index.
  [[nodiscard]] ExposureStack poll(bool with_raw = true) const {
    ExposureStack s;
    s.width = width_;
    s.height = height_;
    s.timestamp = t_;
    s.windows = ladder_.windows();
    s.channel_timestamps = channel_t_;
    s.quantized.resize(state_.size());
    for (std::size_t i = 0; i < state_.size(); ++i) {
      s.quantized[i] = quantize_unit(static_cast<double>(state_[i]));
    }
    if (with_raw) {
      s.raw.emplace(state_.begin(), state_.end());
    }
    return s;
  }

  /// Floating-point operations per pixel per frame over the given frame count.
  [[nodiscard]] double flop_budget(std::uint64_t frames) const {
    if (frames == 0) throw std::invalid_argument("flop_budget: frames must be >= 1");
    return static_cast<double>(ops_) /
           (static_cast<double>(pixel_count()) * static_cast<double>(frames));
  }

  [[nodiscard]] double flop_budget() const { return flop_budget(t_); }

private:
  ExposureLadder ladder_;
  std::size_t width_;
  std::size_t height_;
  std::vector<Real> alpha_;
  std::vector<Real> decay_;
  std::vector<Real> state_;
  std::vector<std::uint64_t> channel_t_;
  std::uint64_t t_ = 0;
  std::uint64_t ops_ = 0;
};

using Sketch = BasicSketch<double>;
using CompactSketch = BasicSketch<float>;

/// Single-writer / multi-reader wrapper. The writer feeds frames; readers
/// call poll() from any thread and receive an immutable snapshot whose
/// channels all belong to one frame index. Snapshots are copied on poll, so
/// the writer waits at most for one snapshot copy.
template <class Real = double>
class StreamingSketch {
public:
  StreamingSketch(ExposureLadder ladder, std::size_t width, std::size_t height, double r0 = 0.0)
      : sketch_(std::move(ladder), width, height, r0) {}

  StreamingSketch(const StreamingSketch&) = delete;
  StreamingSketch& operator=(const StreamingSketch&) = delete;

  /// Writer side.
  void update(const BitPlane& plane) {
    std::lock_guard lock(mutex_);
    sketch_.update(plane);
    absorbed_.store(sketch_.frames(), std::memory_order_release);
  }

  [[nodiscard]] std::uint64_t frames_absorbed() const noexcept {
    return absorbed_.load(std::memory_order_acquire);
  }

  /// Reader side. Polls without intervening updates return the same snapshot.
  [[nodiscard]] std::shared_ptr<const ExposureStack> poll() const {
    std::lock_guard lock(mutex_);
    if (!cache_ || cache_->timestamp != sketch_.frames()) {
      cache_ = std::make_shared<const ExposureStack>(sketch_.poll(false));
    }
    return cache_;
  }

  /// Direct access for the writer thread only.
  [[nodiscard]] const BasicSketch<Real>& sketch() const noexcept { return sketch_; }

private:
  BasicSketch<Real> sketch_;
  mutable std::mutex mutex_;
  mutable std::shared_ptr<const ExposureStack> cache_;
  std::atomic<std::uint64_t> absorbed_{0};
};

}  // namespace qstream
