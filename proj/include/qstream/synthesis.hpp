#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qstream/counter_rng.hpp"
#include "qstream/errors.hpp"
#include "qstream/image.hpp"
#include "qstream/sensor_model.hpp"
#include "qstream/streaming_sketch.hpp"

namespace qstream {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

[[nodiscard]] inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Bounds2 {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  [[nodiscard]] bool valid() const noexcept {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_max >= x_min && y_max >= y_min;
  }
  [[nodiscard]] bool degenerate() const noexcept { return x_max == x_min && y_max == y_min; }
};

enum class TrajectoryKind { PiecewiseLinear, PiecewiseBezier };

/// Continuous 2-D path traversed at constant speed. Segments are straight
/// lines or quadratic Bezier curves; the path is arc-length parameterized
/// and traversed back and forth when the run outlasts its length.
class Trajectory {
public:
  Trajectory() = default;

  Trajectory(TrajectoryKind kind, std::vector<Point2> knots, std::vector<Point2> controls,
             double speed_px_per_s, double frame_rate)
      : kind_(kind), knots_(std::move(knots)), controls_(std::move(controls)),
        speed_(speed_px_per_s), frame_rate_(frame_rate) {
    if (knots_.size() < 2) throw std::invalid_argument("trajectory: need at least one segment");
    if (kind_ == TrajectoryKind::PiecewiseBezier && controls_.size() + 1 != knots_.size()) {
      throw std::invalid_argument("trajectory: one control point per Bezier segment required");
    }
    if (!(speed_ >= 0.0) || !(frame_rate_ > 0.0)) {
      throw std::invalid_argument("trajectory: speed must be >= 0 and frame rate > 0");
    }
    build_arc_table();
  }

  [[nodiscard]] TrajectoryKind kind() const noexcept { return kind_; }
  [[nodiscard]] std::size_t segments() const noexcept { return knots_.size() - 1; }
  [[nodiscard]] const std::vector<Point2>& knots() const noexcept { return knots_; }
  [[nodiscard]] double speed() const noexcept { return speed_; }
  [[nodiscard]] double frame_rate() const noexcept { return frame_rate_; }
  [[nodiscard]] double length() const noexcept { return arc_.empty() ? 0.0 : arc_.back().s; }

  /// Path distance covered per frame, in pixels.
  [[nodiscard]] double step() const noexcept { return speed_ / frame_rate_; }

  [[nodiscard]] Point2 position(double t_frames) const {
    const double total = length();
    if (total <= 0.0 || speed_ == 0.0) return knots_.front();
    double s = std::fmod(step() * t_frames, 2.0 * total);
    if (s > total) s = 2.0 * total - s;
    return at_arc_length(s);
  }

  /// Point on segment `seg` at curve parameter u in [0, 1].
  [[nodiscard]] Point2 evaluate(std::size_t seg, double u) const {
    const Point2 a = knots_[seg];
    const Point2 b = knots_[seg + 1];
    if (kind_ == TrajectoryKind::PiecewiseLinear) {
      return {a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u};
    }
    const Point2 c = controls_[seg];
    const double v = 1.0 - u;
    return {v * v * a.x + 2.0 * v * u * c.x + u * u * b.x,
            v * v * a.y + 2.0 * v * u * c.y + u * u * b.y};
  }

private:
  struct ArcSample {
    std::size_t seg;
    double u;
    double s;
  };

  static constexpr std::size_t kBezierSamples = 1024;

  void build_arc_table() {
    arc_.clear();
    arc_.push_back({0, 0.0, 0.0});
    const std::size_t per_seg = kind_ == TrajectoryKind::PiecewiseLinear ? 1 : kBezierSamples;
    double s = 0.0;
    for (std::size_t seg = 0; seg < segments(); ++seg) {
      Point2 prev = knots_[seg];
      for (std::size_t j = 1; j <= per_seg; ++j) {
        const double u = static_cast<double>(j) / static_cast<double>(per_seg);
        const Point2 cur = evaluate(seg, u);
        s += distance(prev, cur);
        arc_.push_back({seg, u, s});
        prev = cur;
      }
    }
  }

  [[nodiscard]] Point2 at_arc_length(double s) const {
    auto it = std::lower_bound(arc_.begin(), arc_.end(), s,
                               [](const ArcSample& a, double v) { return a.s < v; });
    if (it == arc_.begin()) return knots_.front();
    if (it == arc_.end()) return knots_.back();
    const ArcSample& hi = *it;
    const ArcSample& lo = *(it - 1);
    const double span = hi.s - lo.s;
    const double frac = span > 0.0 ? (s - lo.s) / span : 0.0;
    const double u_lo = lo.seg == hi.seg ? lo.u : 0.0;
    return evaluate(hi.seg, u_lo + (hi.u - u_lo) * frac);
  }

  TrajectoryKind kind_ = TrajectoryKind::PiecewiseLinear;
  std::vector<Point2> knots_{Point2{}, Point2{}};
  std::vector<Point2> controls_;
  double speed_ = 0.0;
  double frame_rate_ = kDefaultFrameRate;
  std::vector<ArcSample> arc_;
};

/// Random trajectory with endpoints and control points drawn uniformly
/// inside `bounds`. `segments` = 0 draws a count in [5, 10].
[[nodiscard]] inline Trajectory sample_trajectory(TrajectoryKind kind, std::uint64_t seed,
                                                  const Bounds2& bounds, double speed_px_per_s,
                                                  double frame_rate, std::uint64_t duration_frames,
                                                  std::size_t segments = 0) {
  if (!bounds.valid()) throw std::invalid_argument("sample_trajectory: invalid bounds");
  if (!(speed_px_per_s >= 0.0)) throw std::invalid_argument("sample_trajectory: speed must be >= 0");
  if (duration_frames < 1) throw std::invalid_argument("sample_trajectory: duration must be >= 1");
  if (speed_px_per_s > 0.0 && bounds.degenerate()) {
    throw std::invalid_argument("sample_trajectory: bounds leave no room for motion");
  }
  CounterEngine rng(hash_combine(seed, 0x5452414AULL));
  if (segments == 0) segments = 5 + static_cast<std::size_t>(rng() % 6);
  auto draw = [&] {
    return Point2{bounds.x_min + (bounds.x_max - bounds.x_min) * rng.uniform(),
                  bounds.y_min + (bounds.y_max - bounds.y_min) * rng.uniform()};
  };
  std::vector<Point2> knots{draw()};
  std::vector<Point2> controls;
  for (std::size_t i = 0; i < segments; ++i) {
    knots.push_back(draw());
    if (kind == TrajectoryKind::PiecewiseBezier) controls.push_back(draw());
  }
  return Trajectory(kind, std::move(knots), std::move(controls), speed_px_per_s, frame_rate);
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Bilinear sample with zero outside the image.
[[nodiscard]] inline double sample_bilinear(const Image<double>& img, double fx, double fy) {
  const double x0f = std::floor(fx);
  const double y0f = std::floor(fy);
  const double tx = fx - x0f;
  const double ty = fy - y0f;
  const auto x0 = static_cast<long long>(x0f);
  const auto y0 = static_cast<long long>(y0f);
  const auto w = static_cast<long long>(img.width());
  const auto h = static_cast<long long>(img.height());
  auto at = [&](long long x, long long y) {
    return (x < 0 || y < 0 || x >= w || y >= h)
               ? 0.0
               : img(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
  };
  double v = 0.0;
  if (tx < 1.0 && ty < 1.0) v += (1.0 - tx) * (1.0 - ty) * at(x0, y0);
  if (tx > 0.0) v += tx * (1.0 - ty) * at(x0 + 1, y0);
  if (ty > 0.0) v += (1.0 - tx) * ty * at(x0, y0 + 1);
  if (tx > 0.0 && ty > 0.0) v += tx * ty * at(x0 + 1, y0 + 1);
  return v;
}

struct Sprite {
  Image<double> intensity;
  Image<double> alpha;  // [0, 1]
};

enum class MotionMode { Static, Global, Local };

/// Global mode crops an output window from a (larger) background at the
/// trajectory offset; local mode composites a sprite over a static background
/// with its top-left corner at the trajectory position.
struct MotionScene {
  Image<double> background;
  std::optional<Sprite> sprite;
  Trajectory trajectory;
  std::uint64_t duration = 1;
  MotionMode mode = MotionMode::Static;
  std::size_t width = 0;   // output size; 0 = background size
  std::size_t height = 0;

  [[nodiscard]] std::size_t out_width() const { return width ? width : background.width(); }
  [[nodiscard]] std::size_t out_height() const { return height ? height : background.height(); }
};

[[nodiscard]] inline FluxFrame render_frame(const MotionScene& scene, std::uint64_t t) {
  if (t >= scene.duration) {
    throw std::out_of_range("render_frame: frame " + std::to_string(t) + " beyond duration " +
                            std::to_string(scene.duration));
  }
  const std::size_t w = scene.out_width();
  const std::size_t h = scene.out_height();
  Image<double> out(w, h);
  const Point2 pos = scene.trajectory.position(static_cast<double>(t));
  switch (scene.mode) {
    case MotionMode::Static:
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          out(x, y) = sample_bilinear(scene.background, static_cast<double>(x), static_cast<double>(y));
      break;
    case MotionMode::Global:
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          out(x, y) = sample_bilinear(scene.background, static_cast<double>(x) + pos.x,
                                      static_cast<double>(y) + pos.y);
      break;
    case MotionMode::Local: {
      if (!scene.sprite) throw std::invalid_argument("render_frame: local motion needs a sprite");
      const Sprite& sp = *scene.sprite;
      require_same_shape(sp.intensity, sp.alpha, "sprite alpha");
      // Sprite colour is sampled premultiplied by alpha.
      Image<double> premul(sp.intensity.width(), sp.intensity.height());
      for (std::size_t i = 0; i < premul.size(); ++i) premul[i] = sp.intensity[i] * sp.alpha[i];
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double bg = sample_bilinear(scene.background, static_cast<double>(x),
                                            static_cast<double>(y));
          const double sx = static_cast<double>(x) - pos.x;
          const double sy = static_cast<double>(y) - pos.y;
          const double a = std::clamp(sample_bilinear(sp.alpha, sx, sy), 0.0, 1.0);
          out(x, y) = bg * (1.0 - a) + sample_bilinear(premul, sx, sy);
        }
      }
      break;
    }
  }
  for (auto& v : out.pixels()) v = std::max(v, 0.0);
  return FluxFrame(std::move(out));
}

// ---------------------------------------------------------------------------
// Photometry
// ---------------------------------------------------------------------------

struct HdrAugmentConfig {
  double lambda_low = 0.1;
  double lambda_high = 10.0;
  double threshold = 0.8;  // fraction of the frame maximum

  void validate() const {
    if (!(lambda_low > 0.0 && lambda_low <= lambda_high) || !std::isfinite(lambda_high)) {
      throw ConfigError("need 0 < lambda_low <= lambda_high", "scene.hdr");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) {
      throw ConfigError("must lie in (0, 1)", "scene.hdr.threshold");
    }
  }
};

/// Training-time draw: low ~ U(0.01, 0.1), high ~ U(0.2, 10), threshold 0.8.
[[nodiscard]] inline HdrAugmentConfig sample_hdr_config(std::uint64_t seed) {
  CounterEngine rng(hash_combine(seed, 0x48445241ULL));
  HdrAugmentConfig cfg;
  cfg.lambda_low = 0.01 + 0.09 * rng.uniform();
  cfg.lambda_high = 0.2 + 9.8 * rng.uniform();
  cfg.threshold = 0.8;
  return cfg;
}

/// Two-segment piecewise-linear flux transfer. Below threshold * max the
/// frame is scaled to peak at lambda_low; above it an extra slope of
/// (lambda_high - lambda_low) / max is added from the knee.
[[nodiscard]] inline FluxFrame hdr_augment(const Image<double>& frame, const HdrAugmentConfig& cfg) {
  cfg.validate();
  if (frame.empty()) throw std::invalid_argument("hdr_augment: empty frame");
  const double peak = frame.max_value();
  if (!(peak > 0.0)) throw std::invalid_argument("hdr_augment: frame maximum must be > 0");
  const double knee = cfg.threshold * peak;
  Image<double> out(frame.width(), frame.height());
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const double v = frame[i];
    double o = cfg.lambda_low * v / peak;
    if (v >= knee) o += (cfg.lambda_high - cfg.lambda_low) * (v - knee) / peak;
    out[i] = o;
  }
  return FluxFrame(std::move(out));
}

[[nodiscard]] inline double photons_per_second_to_per_frame(double photons_per_s, double frame_rate) {
  if (!(frame_rate > 0.0)) throw std::invalid_argument("frame rate must be > 0");
  return photons_per_s / frame_rate;
}

/// Linear rescale so the frame maximum equals `max_photons_per_frame`.
[[nodiscard]] inline FluxFrame scale_to_photon_level(const Image<double>& frame,
                                                     double max_photons_per_frame) {
  if (!(max_photons_per_frame > 0.0)) {
    throw std::invalid_argument("scale_to_photon_level: target must be > 0");
  }
  if (frame.empty()) throw std::invalid_argument("scale_to_photon_level: empty frame");
  const double peak = frame.max_value();
  if (!(peak > 0.0)) throw std::invalid_argument("scale_to_photon_level: frame maximum must be > 0");
  if (peak == max_photons_per_frame) return FluxFrame(frame);
  const double gain = max_photons_per_frame / peak;
  Image<double> out(frame.width(), frame.height());
  for (std::size_t i = 0; i < frame.size(); ++i) out[i] = frame[i] * gain;
  return FluxFrame(std::move(out));
}

/// How rendered intensities become photons/frame.
struct Photometry {
  enum class Mode { Identity, Scale, Hdr };
  Mode mode = Mode::Scale;
  double max_flux = 1.0;  // photons/frame, Scale mode
  HdrAugmentConfig hdr;
};

[[nodiscard]] inline FluxFrame apply_photometry(const FluxFrame& frame, const Photometry& ph) {
  switch (ph.mode) {
    case Photometry::Mode::Scale: return scale_to_photon_level(frame, ph.max_flux);
    case Photometry::Mode::Hdr: return hdr_augment(frame, ph.hdr);
    case Photometry::Mode::Identity: break;
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Procedural test cards
// ---------------------------------------------------------------------------

[[nodiscard]] inline Image<double> checkerboard(std::size_t w, std::size_t h, std::size_t cell,
                                                double lo = 0.1, double hi = 1.0) {
  if (cell == 0) throw std::invalid_argument("checkerboard: cell must be >= 1");
  Image<double> img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img(x, y) = ((x / cell + y / cell) % 2) ? hi : lo;
  return img;
}

/// Concentric sinusoid in [0.05, 1] around the image centre.
[[nodiscard]] inline Image<double> radial_sinusoid(std::size_t w, std::size_t h,
                                                   double cycles_per_pixel = 0.08) {
  Image<double> img(w, h);
  const double cx = 0.5 * static_cast<double>(w - 1);
  const double cy = 0.5 * static_cast<double>(h - 1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double r = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
      img(x, y) = 0.525 + 0.475 * std::cos(2.0 * std::numbers::pi * cycles_per_pixel * r);
    }
  }
  return img;
}

/// Horizontal ramp from `lo` to `hi`.
[[nodiscard]] inline Image<double> ramp(std::size_t w, std::size_t h, double lo = 0.0, double hi = 1.0) {
  Image<double> img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      img(x, y) = w > 1 ? lo + (hi - lo) * static_cast<double>(x) / static_cast<double>(w - 1) : hi;
  return img;
}

// ---------------------------------------------------------------------------
// Training pairs
// ---------------------------------------------------------------------------

using PairSink = std::function<void(const ExposureStack& stack, const FluxFrame& ground_truth)>;

/// Streams a scene through the sensor and sketch, emitting the polled stack
/// and the flux at the latest absorbed frame every `stride` frames. Stack
/// timestamps are frame counts (stride, 2*stride, ...); the paired ground
/// truth is the flux of frame timestamp - 1.
inline void make_training_pairs(const MotionScene& scene, const Photometry& photometry,
                                const SensorConfig& sensor, const ExposureLadder& ladder,
                                std::uint64_t stride, std::uint64_t seed, const PairSink& sink) {
  if (stride < 1) throw std::invalid_argument("make_training_pairs: stride must be >= 1");
  sensor.validate();
  Sketch sketch(ladder, scene.out_width(), scene.out_height());
  for (std::uint64_t t = 0; t < scene.duration; ++t) {
    const FluxFrame flux = apply_photometry(render_frame(scene, t), photometry);
    sketch.update(simulate_bitplane(flux, sensor, seed, t));
    if (sketch.frames() % stride == 0) sink(sketch.poll(true), flux);
  }
}

}  // namespace qstream
