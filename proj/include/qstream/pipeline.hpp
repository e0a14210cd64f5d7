#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "qstream/config.hpp"
#include "qstream/counter_rng.hpp"
#include "qstream/io_formats.hpp"
#include "qstream/sensor_model.hpp"
#include "qstream/streaming_sketch.hpp"
#include "qstream/synthesis.hpp"

namespace qstream {

// ---------------------------------------------------------------------------
// Bandwidth and memory accounting
// ---------------------------------------------------------------------------

struct BandwidthReport {
  double raw_bits_per_pixel_per_s = 0.0;
  double sketch_bits_per_pixel_per_s = 0.0;
  double reduction_ratio = 0.0;
  double memory_raw_bytes_per_pixel = 0.0;
  double memory_sketch_bytes_per_pixel = 0.0;
  double memory_ratio = 0.0;
};

/// Raw stream: one bit per pixel per sensor frame. Sketch stream: C channels
/// of `bits_per_channel` per poll. Memory compares a raw window of
/// `window_frames` bits against one stored stack.
[[nodiscard]] inline BandwidthReport bandwidth_report(double sensor_fps, double poll_fps,
                                                      double channels, double bits_per_channel,
                                                      double window_frames) {
  if (!(sensor_fps > 0.0 && poll_fps > 0.0 && channels > 0.0 && bits_per_channel > 0.0 &&
        window_frames > 0.0)) {
    throw std::invalid_argument("bandwidth_report: all rates and sizes must be positive");
  }
  BandwidthReport r;
  r.raw_bits_per_pixel_per_s = sensor_fps;
  r.sketch_bits_per_pixel_per_s = poll_fps * channels * bits_per_channel;
  r.reduction_ratio = r.raw_bits_per_pixel_per_s / r.sketch_bits_per_pixel_per_s;
  r.memory_raw_bytes_per_pixel = window_frames / 8.0;
  r.memory_sketch_bytes_per_pixel = channels * bits_per_channel / 8.0;
  r.memory_ratio = r.memory_raw_bytes_per_pixel / r.memory_sketch_bytes_per_pixel;
  return r;
}

inline nlohmann::json to_json(const BandwidthReport& r) {
  return {{"raw_bits_per_pixel_per_s", r.raw_bits_per_pixel_per_s},
          {"sketch_bits_per_pixel_per_s", r.sketch_bits_per_pixel_per_s},
          {"reduction_ratio", r.reduction_ratio},
          {"memory_raw_bytes_per_pixel", r.memory_raw_bytes_per_pixel},
          {"memory_sketch_bytes_per_pixel", r.memory_sketch_bytes_per_pixel},
          {"memory_ratio", r.memory_ratio}};
}

// ---------------------------------------------------------------------------
// Update benchmark
// ---------------------------------------------------------------------------

struct BenchResult {
  std::size_t pixels = 0;
  std::uint64_t frames = 0;
  std::size_t channels = 0;
  double wall_seconds = 0.0;
  double updates_per_second = 0.0;  // channel-pixel updates per second
  double flops_per_pixel_per_frame = 0.0;
  double poll_latency_us = 0.0;      // mean
  double poll_latency_p99_us = 0.0;
};

namespace detail {

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) ;
  return v[std::min(v.size() - 1, idx == 0 ? 0 : idx - 1)];
}

}  // namespace detail

/// Drives random Bernoulli(0.5) bitplanes through a sketch. Timings are
/// machine dependent; the FLOP figure comes from the sketch's counter.
[[nodiscard]] inline BenchResult bench_update(std::size_t width, std::size_t height,
                                              std::uint64_t n_frames, const ExposureLadder& ladder,
                                              std::uint64_t seed = 0, std::size_t n_polls = 1000) {
  if (n_frames < 100) throw std::invalid_argument("bench_update: n_frames must be >= 100");
  constexpr std::size_t kPool = 16;
  std::vector<BitPlane> pool;
  const FluxFrame half(width, height, std::log(2.0));
  SensorConfig cfg;
  cfg.dark_rate = 0.0;
  for (std::size_t i = 0; i < kPool; ++i) pool.push_back(simulate_bitplane(half, cfg, seed, i));

  Sketch sketch(ladder, width, height);
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t t = 0; t < n_frames; ++t) {
    BitPlane& plane = pool[t % kPool];
    plane.timestamp = t;
    sketch.update(plane);
  }
  const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - start;

  std::vector<double> lat;
  lat.reserve(n_polls);
  for (std::size_t i = 0; i < n_polls; ++i) {
    const auto p0 = std::chrono::steady_clock::now();
    auto stack = sketch.poll(false);
    const std::chrono::duration<double, std::micro> d = std::chrono::steady_clock::now() - p0;
    lat.push_back(d.count());
    if (stack.timestamp != n_frames) throw std::logic_error("bench_update: stale poll");
  }

  BenchResult r;
  r.pixels = width * height;
  r.frames = n_frames;
  r.channels = ladder.channels();
  r.wall_seconds = wall.count();
  r.updates_per_second = static_cast<double>(r.pixels) * static_cast<double>(n_frames) *
                         static_cast<double>(r.channels) / std::max(wall.count(), 1e-12);
  r.flops_per_pixel_per_frame = sketch.flop_budget(n_frames);
  double sum = 0.0;
  for (double v : lat) sum += v;
  r.poll_latency_us = lat.empty() ? 0.0 : sum / static_cast<double>(lat.size());
  r.poll_latency_p99_us = detail::percentile(lat, 0.99);
  return r;
}

inline nlohmann::json to_json(const BenchResult& r) {
  return {{"pixels", r.pixels},
          {"frames", r.frames},
          {"channels", r.channels},
          {"wall_seconds", r.wall_seconds},
          {"updates_per_second", r.updates_per_second},
          {"flops_per_pixel_per_frame", r.flops_per_pixel_per_frame},
          {"poll_latency_us", r.poll_latency_us},
          {"poll_latency_p99_us", r.poll_latency_p99_us}};
}

// ---------------------------------------------------------------------------
// Producer / poller demonstration
// ---------------------------------------------------------------------------

struct DemoConfig {
  std::size_t width = 32;
  std::size_t height = 32;
  std::uint64_t frames = 1000000;
  double frame_rate = kDefaultFrameRate;
  std::vector<double> poll_rates{10.0, 100.0, 1000.0};
  bool realtime = true;
  ExposureLadder ladder = ExposureLadder::default_ladder();
  double max_flux = 1.0;
  std::uint64_t seed = 0;
};

struct PollerReport {
  double rate_hz = 0.0;
  std::uint64_t polls = 0;
  std::uint64_t violations = 0;
  double staleness_p50 = 0.0;  // frames
  double staleness_p99 = 0.0;
  double staleness_max = 0.0;
};

struct DemoReport {
  std::uint64_t frames = 0;
  double wall_seconds = 0.0;
  double achieved_fps = 0.0;
  std::vector<PollerReport> pollers;

  [[nodiscard]] std::uint64_t violations() const {
    std::uint64_t n = 0;
    for (const auto& p : pollers) n += p.violations;
    return n;
  }
  [[nodiscard]] double worst_p99_staleness() const {
    double w = 0.0;
    for (const auto& p : pollers) w = std::max(w, p.staleness_p99);
    return w;
  }
};

/// Snapshot check used by pollers: channels share one frame index and the
/// stack is no newer than the producer.
[[nodiscard]] inline bool snapshot_ok(const ExposureStack& s, std::uint64_t producer_frames) {
  return s.is_consistent() && s.timestamp <= producer_frames &&
         s.quantized.size() == s.channels() * s.pixel_count();
}

/// One producer thread feeds simulated bitplanes (paced at `frame_rate` when
/// `realtime`); one thread per poll rate snapshots the sketch on its own
/// clock. Staleness is the producer frame count right after a poll minus the
/// snapshot's timestamp.
[[nodiscard]] inline DemoReport run_stream_demo(const DemoConfig& cfg) {
  if (cfg.frames == 0) throw std::invalid_argument("demo: frames must be >= 1");
  for (double r : cfg.poll_rates) {
    if (!(r > 0.0)) throw std::invalid_argument("demo: poll rates must be > 0");
  }
  using clock = std::chrono::steady_clock;
  StreamingSketch<double> shared(cfg.ladder, cfg.width, cfg.height);
  const FluxFrame flux = scale_to_photon_level(
      checkerboard(cfg.width, cfg.height, std::max<std::size_t>(1, cfg.width / 8)), cfg.max_flux);
  SensorConfig sensor;
  sensor.frame_rate = cfg.frame_rate;

  std::atomic<bool> done{false};
  std::vector<PollerReport> reports(cfg.poll_rates.size());
  std::vector<std::vector<double>> staleness(cfg.poll_rates.size());
  std::vector<std::thread> pollers;
  for (std::size_t i = 0; i < cfg.poll_rates.size(); ++i) {
    pollers.emplace_back([&, i] {
      PollerReport& rep = reports[i];
      rep.rate_hz = cfg.poll_rates[i];
      const auto period = std::chrono::duration_cast<clock::duration>(
          std::chrono::duration<double>(1.0 / rep.rate_hz));
      auto next = clock::now();
      while (!done.load(std::memory_order_acquire)) {
        next += period;
        std::this_thread::sleep_until(next);
        auto stack = shared.poll();
        const std::uint64_t now_frames = shared.frames_absorbed();
        ++rep.polls;
        if (!snapshot_ok(*stack, now_frames)) ++rep.violations;
        staleness[i].push_back(static_cast<double>(now_frames - std::min(now_frames, stack->timestamp)));
      }
    });
  }

  const auto start = clock::now();
  const double frame_period = 1.0 / cfg.frame_rate;
  for (std::uint64_t t = 0; t < cfg.frames; ++t) {
    if (cfg.realtime) {
      const auto due = start + std::chrono::duration_cast<clock::duration>(
                                   std::chrono::duration<double>(frame_period * static_cast<double>(t)));
      while (clock::now() < due) std::this_thread::yield();
    }
    shared.update(simulate_bitplane(flux, sensor, cfg.seed, t));
  }
  const std::chrono::duration<double> wall = clock::now() - start;
  done.store(true, std::memory_order_release);
  for (auto& th : pollers) th.join();

  DemoReport out;
  out.frames = shared.frames_absorbed();
  out.wall_seconds = wall.count();
  out.achieved_fps = static_cast<double>(out.frames) / std::max(wall.count(), 1e-12);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    auto& s = staleness[i];
    reports[i].staleness_p50 = detail::percentile(s, 0.50);
    reports[i].staleness_p99 = detail::percentile(s, 0.99);
    reports[i].staleness_max = s.empty() ? 0.0 : *std::max_element(s.begin(), s.end());
  }
  out.pollers = std::move(reports);
  return out;
}

inline nlohmann::json to_json(const DemoReport& r) {
  nlohmann::json pollers = nlohmann::json::array();
  for (const auto& p : r.pollers) {
    pollers.push_back({{"rate_hz", p.rate_hz},
                       {"polls", p.polls},
                       {"violations", p.violations},
                       {"staleness_p50_frames", p.staleness_p50},
                       {"staleness_p99_frames", p.staleness_p99},
                       {"staleness_max_frames", p.staleness_max}});
  }
  return {{"frames", r.frames},
          {"wall_seconds", r.wall_seconds},
          {"achieved_fps", r.achieved_fps},
          {"violations", r.violations()},
          {"pollers", pollers}};
}

// ---------------------------------------------------------------------------
// Scenes from configuration
// ---------------------------------------------------------------------------

struct SceneBundle {
  MotionScene scene;
  Photometry photometry;
  SensorConfig sensor;
};

/// Random hot-pixel layout covering `fraction` of the sensor.
[[nodiscard]] inline HotPixelMask sample_hot_pixel_mask(std::size_t w, std::size_t h, double fraction,
                                                        std::uint64_t seed) {
  HotPixelMask mask(w, h, 0);
  const std::uint64_t key = hash_combine(seed, 0x484F5450ULL);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = counter_uniform(key, i) < fraction ? 1 : 0;
  return mask;
}

namespace detail {

inline Image<double> pattern_image(const SceneSection& s, std::size_t w, std::size_t h) {
  if (s.pattern == "checkerboard") return checkerboard(w, h, s.cell);
  if (s.pattern == "radial") return radial_sinusoid(w, h);
  if (s.pattern == "ramp") return ramp(w, h, 0.05, 1.0);
  return io::read_pgm(s.image);
}

}  // namespace detail

/// Builds scene `index` of a run. Per-scene randomness (trajectory, frame
/// rate, HDR levels, hot pixels) derives from (seed, index).
[[nodiscard]] inline SceneBundle build_scene(const PipelineConfig& cfg, std::uint64_t index,
                                             std::uint64_t duration) {
  const auto& s = cfg.scene;
  const std::uint64_t scene_seed = hash_combine(cfg.seed, index);
  SceneBundle b;
  b.sensor = cfg.sensor_config();
  if (cfg.sensor.randomize_frame_rate) b.sensor.frame_rate = draw_frame_rate(scene_seed);

  const std::size_t w = s.width;
  const std::size_t h = s.height;
  MotionScene& scene = b.scene;
  scene.duration = duration;
  scene.width = w;
  scene.height = h;
  const auto kind = s.trajectory == "bezier" ? TrajectoryKind::PiecewiseBezier : TrajectoryKind::PiecewiseLinear;
  const std::size_t segments = s.segments;

  if (s.motion == "static") {
    scene.mode = MotionMode::Static;
    scene.background = detail::pattern_image(s, w, h);
  } else if (s.motion == "global") {
    scene.mode = MotionMode::Global;
    Image<double> bg = s.pattern == "pgm" ? io::read_pgm(s.image) : Image<double>{};
    const std::size_t margin = std::max<std::size_t>(8, std::max(w, h) / 4);
    if (bg.empty()) bg = detail::pattern_image(s, w + margin, h + margin);
    if (bg.width() < w || bg.height() < h) {
      throw ConfigError("background image is smaller than the output frame", "scene.image");
    }
    const Bounds2 bounds{0.0, 0.0, static_cast<double>(bg.width() - w), static_cast<double>(bg.height() - h)};
    scene.background = std::move(bg);
    scene.trajectory = sample_trajectory(kind, scene_seed, bounds,
                                         bounds.degenerate() ? 0.0 : s.speed,
                                         b.sensor.frame_rate, duration, segments);
  } else {
    scene.mode = MotionMode::Local;
    scene.background = detail::pattern_image(s, w, h);
    for (auto& v : scene.background.pixels()) v *= 0.5;
    const std::size_t sp = s.sprite_size;
    Sprite sprite{radial_sinusoid(sp, sp, 0.15), Image<double>(sp, sp)};
    const double c = 0.5 * static_cast<double>(sp - 1);
    for (std::size_t y = 0; y < sp; ++y)
      for (std::size_t x = 0; x < sp; ++x)
        sprite.alpha(x, y) = std::hypot(static_cast<double>(x) - c, static_cast<double>(y) - c) <= c ? 1.0 : 0.0;
    scene.sprite = std::move(sprite);
    const Bounds2 bounds{0.0, 0.0, static_cast<double>(w - sp), static_cast<double>(h - sp)};
    scene.trajectory = sample_trajectory(kind, scene_seed, bounds, s.speed, b.sensor.frame_rate, duration, segments);
  }

  if (s.photometry == "scale") {
    b.photometry.mode = Photometry::Mode::Scale;
    b.photometry.max_flux = cfg.max_flux_per_frame(b.sensor.frame_rate);
  } else if (s.photometry == "hdr") {
    b.photometry.mode = Photometry::Mode::Hdr;
    b.photometry.hdr = s.hdr.random ? sample_hdr_config(scene_seed)
                                    : HdrAugmentConfig{s.hdr.lambda_low, s.hdr.lambda_high, s.hdr.threshold};
  } else {
    b.photometry.mode = Photometry::Mode::Identity;
  }

  if (cfg.sensor.hot_pixel_fraction > 0.0) {
    b.sensor.hot_pixels = sample_hot_pixel_mask(w, h, cfg.sensor.hot_pixel_fraction, scene_seed);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Hot-pixel handling and training-pair export
// ---------------------------------------------------------------------------

enum class HotPixelFill { Median, Zero };

/// Replaces masked pixels in every channel, either with the median of the
/// nearest unmasked neighbours (3x3, widening until one is found) or zero.
inline void fill_hot_pixels(ExposureStack& stack, const HotPixelMask& mask, HotPixelFill mode) {
  if (mask.width() != stack.width || mask.height() != stack.height) {
    throw ShapeError("fill_hot_pixels: mask does not match stack");
  }
  const std::size_t w = stack.width;
  const std::size_t h = stack.height;
  const std::size_t n = stack.pixel_count();
  std::vector<double> neigh;
  for (std::size_t k = 0; k < stack.channels(); ++k) {
    const std::vector<float> raw_copy =
        stack.raw ? std::vector<float>(stack.raw->begin() + static_cast<std::ptrdiff_t>(k * n),
                                       stack.raw->begin() + static_cast<std::ptrdiff_t>((k + 1) * n))
                  : std::vector<float>{};
    const std::vector<std::uint8_t> q_copy(stack.quantized.begin() + static_cast<std::ptrdiff_t>(k * n),
                                           stack.quantized.begin() + static_cast<std::ptrdiff_t>((k + 1) * n));
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = y * w + x;
        if (!mask[i]) continue;
        double v = 0.0;
        if (mode == HotPixelFill::Median) {
          for (std::size_t r = 1; r <= std::max(w, h); ++r) {
            neigh.clear();
            const std::size_t y0 = y >= r ? y - r : 0;
            const std::size_t x0 = x >= r ? x - r : 0;
            for (std::size_t yy = y0; yy <= std::min(h - 1, y + r); ++yy)
              for (std::size_t xx = x0; xx <= std::min(w - 1, x + r); ++xx)
                if (!mask(xx, yy))
                  neigh.push_back(stack.raw ? static_cast<double>(raw_copy[yy * w + xx]) : q_copy[yy * w + xx] / 255.0);
            if (!neigh.empty()) break;
          }
          if (!neigh.empty()) {
            std::sort(neigh.begin(), neigh.end());
            const std::size_t m = neigh.size();
            v = m % 2 ? neigh[m / 2] : 0.5 * (neigh[m / 2 - 1] + neigh[m / 2]);
          }
        }
        if (stack.raw) (*stack.raw)[k * n + i] = static_cast<float>(v);
        stack.quantized[k * n + i] = quantize_unit(v);
      }
    }
  }
}

struct PairRecord {
  std::uint64_t scene = 0;
  std::uint64_t timestamp = 0;
  std::string stack_file;
  std::string ground_truth_file;
};

struct PairExport {
  std::vector<PairRecord> pairs;
  std::filesystem::path manifest;
};

inline constexpr std::uint64_t kDarkCalibrationFrames = 1000;

/// Writes QSX1 stack / ground-truth pairs plus manifest.json into `out_dir`.
/// When the sensor has hot pixels, a dark capture is simulated, calibrated
/// into a mask and the masked stack pixels are filled before export.
inline PairExport export_pairs(const PipelineConfig& cfg, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const ExposureLadder ladder = cfg.ladder.build();
  const auto dtype = cfg.run.stack_dtype == "f32" ? io::StackDtype::F32 : io::StackDtype::U8;
  const auto fill = cfg.run.hot_pixel_fill == "zero" ? HotPixelFill::Zero : HotPixelFill::Median;

  PairExport result;
  nlohmann::json scenes = nlohmann::json::array();
  for (std::uint64_t si = 0; si < cfg.run.scenes; ++si) {
    const SceneBundle b = build_scene(cfg, si, cfg.run.frames);
    const std::uint64_t scene_seed = hash_combine(cfg.seed, si);
    std::optional<HotPixelMask> calibrated;
    if (b.sensor.hot_pixels) {
      const FluxFrame dark(b.scene.out_width(), b.scene.out_height(), 0.0);
      std::vector<BitPlane> frames;
      frames.reserve(kDarkCalibrationFrames);
      for (std::uint64_t t = 0; t < kDarkCalibrationFrames; ++t) {
        frames.push_back(simulate_bitplane(dark, b.sensor, hash_combine(scene_seed, 0x4441524BULL), t));
      }
      calibrated = calibrate_hot_pixels(frames, cfg.run.hot_pixel_z);
    }
    char dir_name[32];
    std::snprintf(dir_name, sizeof dir_name, "scene_%03llu", static_cast<unsigned long long>(si));
    fs::create_directories(out_dir / dir_name);
    make_training_pairs(b.scene, b.photometry, b.sensor, ladder, cfg.run.stride, scene_seed,
                        [&](const ExposureStack& stack, const FluxFrame& gt) {
                          char name[64];
                          std::snprintf(name, sizeof name, "pair_%08llu",
                                        static_cast<unsigned long long>(stack.timestamp));
                          PairRecord rec{si, stack.timestamp,
                                         std::string(dir_name) + "/" + name + "_stack.qsx",
                                         std::string(dir_name) + "/" + name + "_gt.qsx"};
                          ExposureStack out = stack;
                          if (calibrated) fill_hot_pixels(out, *calibrated, fill);
                          io::write_stack(out_dir / rec.stack_file, out, dtype);
                          io::write_stack(out_dir / rec.ground_truth_file, io::flux_as_stack(gt, stack.timestamp),
                                          io::StackDtype::F32);
                          result.pairs.push_back(rec);
                        });
    scenes.push_back({{"index", si},
                      {"frame_rate", b.sensor.frame_rate},
                      {"hot_pixels_masked", calibrated ? count_flagged(*calibrated) : 0}});
  }

  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : result.pairs) {
    pairs.push_back({{"scene", p.scene},
                     {"timestamp", p.timestamp},
                     {"stack", p.stack_file},
                     {"ground_truth", p.ground_truth_file}});
  }
  nlohmann::json manifest = {{"format", "qstream-pairs"},
                             {"version", 1},
                             {"width", cfg.scene.width},
                             {"height", cfg.scene.height},
                             {"windows", ladder.windows()},
                             {"stack_dtype", cfg.run.stack_dtype},
                             {"stride", cfg.run.stride},
                             {"scenes", scenes},
                             {"pairs", pairs},
                             {"config", config_to_json(cfg)}};
  result.manifest = out_dir / "manifest.json";
  std::ofstream(result.manifest) << manifest.dump(2) << '\n';
  return result;
}

}  // namespace qstream
