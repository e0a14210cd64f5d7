#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "qstream/qstream.hpp"

namespace fs = std::filesystem;
using namespace qstream;
using nlohmann::json;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kFormat = 3, kConsistency = 4 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

PipelineConfig load_config(const Globals& g) {
  PipelineConfig cfg = g.config_path.empty() ? PipelineConfig{} : parse_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  validate(cfg);
  return cfg;
}

fs::path out_dir(const Globals& g) {
  fs::path p(g.out);
  fs::create_directories(p);
  return p;
}

void emit(const json& j) { std::cout << j.dump(2) << '\n'; }

std::string numbered(const char* prefix, std::uint64_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%08llu%s", prefix, static_cast<unsigned long long>(i), ext);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Globals& g, std::optional<std::uint64_t> frames) {
  const auto cfg = load_config(g);
  const std::uint64_t n = frames.value_or(cfg.run.frames);
  const auto b = build_scene(cfg, 0, n);
  const auto path = out_dir(g) / "bitplanes.qsb";
  io::BitplaneWriter w(path, static_cast<std::uint32_t>(b.scene.out_width()),
                       static_cast<std::uint32_t>(b.scene.out_height()), b.sensor.frame_rate, 0);
  std::uint64_t ones = 0;
  for (std::uint64_t t = 0; t < n; ++t) {
    const auto plane = simulate_bitplane(apply_photometry(render_frame(b.scene, t), b.photometry),
                                         b.sensor, hash_combine(cfg.seed, 0), t);
    ones += plane.count_ones();
    w.write(plane);
  }
  w.close();
  emit({{"file", path.string()},
        {"width", b.scene.out_width()},
        {"height", b.scene.out_height()},
        {"frames", n},
        {"frame_rate", b.sensor.frame_rate},
        {"mean_firing_rate", static_cast<double>(ones) / static_cast<double>(n * b.scene.out_width() * b.scene.out_height())}});
  return kOk;
}

int cmd_sketch(const Globals& g, const std::string& input, std::optional<std::uint64_t> stride,
               const std::string& dtype_name) {
  const auto cfg = load_config(g);
  const std::uint64_t every = stride.value_or(cfg.run.stride);
  if (every == 0) throw ConfigError("must be >= 1", "--stride");
  const auto dtype = dtype_name == "f32" ? io::StackDtype::F32 : io::StackDtype::U8;
  io::BitplaneReader reader(input);
  const auto& h = reader.header();
  Sketch sketch(cfg.ladder.build(), h.width, h.height);
  const auto dir = out_dir(g);
  std::uint64_t written = 0;
  std::uint64_t frames = 0;
  while (auto plane = reader.next()) {
    // Stack timestamps count absorbed frames from the start of the file.
    plane->timestamp = frames++;
    sketch.update(*plane);
    if (sketch.frames() % every == 0) {
      const auto stack = sketch.poll(dtype == io::StackDtype::F32);
      if (!stack.is_consistent()) throw ConsistencyError("sketch: inconsistent stack at frame " + std::to_string(stack.timestamp));
      io::write_stack(dir / numbered("stack", stack.timestamp, ".qsx"), stack, dtype);
      ++written;
    }
  }
  emit({{"frames", frames},
        {"stacks_written", written},
        {"channels", sketch.channels()},
        {"flops_per_pixel_per_frame", frames ? sketch.flop_budget() : 0.0}});
  return kOk;
}

int cmd_characterize(const Globals& g, std::uint64_t frames, double threshold, double lo, double hi,
                     std::size_t points) {
  const auto start = std::chrono::steady_clock::now();
  const auto curve = response_curve(log_grid(lo, hi, points), frames);
  const auto range = try_dynamic_range(frames, threshold);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  const auto csv = out_dir(g) / ("snr_curve_N" + std::to_string(frames) + ".csv");
  std::ofstream os(csv);
  write_curve_csv(os, curve);
  json j{{"n_frames", frames},
         {"threshold_db", threshold},
         {"curve_csv", csv.string()},
         {"runtime_s", elapsed.count()}};
  if (range) {
    j["lambda_lo"] = range->lambda_lo;
    j["lambda_hi"] = range->lambda_hi;
    j["empty"] = false;
  } else {
    j["lambda_lo"] = nullptr;
    j["lambda_hi"] = nullptr;
    j["empty"] = true;
  }
  emit(j);
  return kOk;
}

int cmd_synth(const Globals& g, std::optional<std::uint64_t> frames, std::uint64_t every) {
  const auto cfg = load_config(g);
  const std::uint64_t n = frames.value_or(cfg.run.frames);
  if (every == 0) throw ConfigError("must be >= 1", "--every");
  const auto b = build_scene(cfg, 0, n);
  const auto dir = out_dir(g);
  std::uint64_t written = 0;
  double peak = 0.0;
  for (std::uint64_t t = 0; t < n; t += every) {
    const auto flux = apply_photometry(render_frame(b.scene, t), b.photometry);
    peak = std::max(peak, flux.max_value());
    io::write_stack(dir / numbered("flux", t, ".qsx"), io::flux_as_stack(flux, t), io::StackDtype::F32);
    const double m = flux.max_value();
    io::write_pgm(dir / numbered("flux", t, ".pgm"), flux, m > 0.0 ? m : 1.0);
    ++written;
  }
  emit({{"frames_rendered", written}, {"max_flux", peak}, {"frame_rate", b.sensor.frame_rate}});
  return kOk;
}

int cmd_augment(const Globals& g, const std::string& input, double low, double high, double threshold,
                bool random) {
  const auto img = io::read_pgm(input);
  HdrAugmentConfig hdr{low, high, threshold};
  if (random) hdr = sample_hdr_config(g.seed.value_or(0));
  const auto out = hdr_augment(img, hdr);
  const auto dir = out_dir(g);
  io::write_stack(dir / "augmented.qsx", io::flux_as_stack(out, 0), io::StackDtype::F32);
  io::write_pgm(dir / "augmented.pgm", out, out.max_value());
  emit({{"lambda_low", hdr.lambda_low},
        {"lambda_high", hdr.lambda_high},
        {"threshold", hdr.threshold},
        {"max_flux", out.max_value()}});
  return kOk;
}

int cmd_reconstruct(const Globals& g, const std::string& stack_path, const std::string& bits_path,
                    const std::string& gt_path, const std::string& method, std::size_t channel,
                    const std::string& domain, double dark) {
  FluxEstimate est;
  if (!bits_path.empty()) {
    const auto file = io::read_bitplanes(bits_path);
    est = naive_integration(file.frames, dark);
  } else if (!stack_path.empty()) {
    const auto stack = io::read_stack(stack_path);
    est = method == "fuse" ? fuse_longest_unsaturated(stack, kDefaultSaturationThreshold, dark)
                           : naive_integration(stack, channel, dark);
  } else {
    throw ConfigError("one of --stack or --bitplanes is required", "reconstruct");
  }
  const auto dir = out_dir(g);
  io::write_stack(dir / "reconstruction.qsx", io::flux_as_stack(est.lambda, 0), io::StackDtype::F32);

  json j{{"n_frames", est.n_frames_used}, {"domain", domain}, {"saturated", est.saturated_count()},
         {"method", bits_path.empty() ? method : "naive"}};
  if (!gt_path.empty()) {
    const auto gt_stack = io::read_stack(gt_path);
    if (!gt_stack.raw || gt_stack.channels() != 1) {
      throw FormatError("ground truth must be a one-channel f32 stack", 0);
    }
    Image<double> gt(gt_stack.width, gt_stack.height);
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = (*gt_stack.raw)[i];
    require_same_shape(est.lambda, gt, "reconstruct");
    j["loss"] = reconstruction_loss(est.lambda, gt);
    if (domain == "linear") {
      const double peak = gt.max_value() > 0.0 ? gt.max_value() : 1.0;
      j["psnr_db"] = psnr(est.lambda, gt, peak);
      SsimConfig sc;
      sc.data_range = peak;
      j["ssim"] = ssim(est.lambda, gt, sc);
    } else {
      const auto tp = mu_law(est.lambda);
      const auto tg = mu_law(gt);
      j["psnr_db"] = psnr(tp, tg, 1.0);
      j["ssim"] = ssim(tp, tg);
    }
  } else {
    j["loss"] = nullptr;
    j["psnr_db"] = nullptr;
    j["ssim"] = nullptr;
  }
  emit(j);
  return kOk;
}

int cmd_pairs(const Globals& g) {
  const auto cfg = load_config(g);
  const auto ex = export_pairs(cfg, out_dir(g));
  emit({{"pairs", ex.pairs.size()}, {"manifest", ex.manifest.string()}});
  return kOk;
}

int cmd_bench(const Globals& g, std::size_t w, std::size_t h, std::uint64_t frames) {
  const auto cfg = load_config(g);
  const auto r = bench_update(w, h, frames, cfg.ladder.build(), cfg.seed);
  emit(to_json(r));
  return r.flops_per_pixel_per_frame <= 2.0 * static_cast<double>(r.channels) ? kOk : kConsistency;
}

int cmd_bandwidth(double sensor_fps, double poll_fps, double channels, double bits, double window) {
  emit(to_json(bandwidth_report(sensor_fps, poll_fps, channels, bits, window)));
  return kOk;
}

int cmd_demo(const Globals& g, std::optional<std::uint64_t> frames, const std::vector<double>& rates,
             bool no_realtime) {
  const auto cfg = load_config(g);
  DemoConfig d;
  d.width = cfg.run.demo_width;
  d.height = cfg.run.demo_height;
  d.frames = frames.value_or(cfg.run.demo_frames);
  d.frame_rate = cfg.sensor.frame_rate;
  d.poll_rates = rates.empty() ? cfg.run.poll_rates : rates;
  d.realtime = cfg.run.realtime && !no_realtime;
  d.ladder = cfg.ladder.build();
  d.seed = cfg.seed;
  const auto rep = run_stream_demo(d);
  emit(to_json(rep));
  if (rep.violations() != 0) {
    std::cerr << "demo-stream: " << rep.violations() << " snapshot consistency violations\n";
    return kConsistency;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qstream: binary-frame simulation, streaming exposure sketches and reconstruction"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON pipeline config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.fallthrough();

  std::optional<std::uint64_t> frames;

  auto* sim = app.add_subcommand("simulate", "Render the configured scene and write a QSB1 bitplane file");
  sim->add_option("--frames", frames, "Frame count (default run.frames)");

  std::string input;
  std::optional<std::uint64_t> stride;
  std::string dtype = "u8";
  auto* sk = app.add_subcommand("sketch", "Stream a QSB1 file through the sketch and write QSX1 stacks");
  sk->add_option("--input", input, "QSB1 bitplane file")->required()->check(CLI::ExistingFile);
  sk->add_option("--stride", stride, "Poll every N frames (default run.stride)");
  sk->add_option("--dtype", dtype, "Stack payload type")->check(CLI::IsMember({"u8", "f32"}));

  std::uint64_t n_frames = 4096;
  double threshold_db = 20.0, grid_lo = 1e-3, grid_hi = 1e2;
  std::size_t grid_points = 200;
  auto* ch = app.add_subcommand("characterize", "SNR curve CSV and dynamic-range endpoints");
  ch->add_option("--frames", n_frames, "Bit budget N")->capture_default_str();
  ch->add_option("--threshold-db", threshold_db, "SNR threshold")->capture_default_str();
  ch->add_option("--grid-lo", grid_lo)->capture_default_str();
  ch->add_option("--grid-hi", grid_hi)->capture_default_str();
  ch->add_option("--grid-points", grid_points)->capture_default_str();

  std::uint64_t every = 100;
  auto* sy = app.add_subcommand("synth", "Write rendered flux frames as QSX1 and PGM");
  sy->add_option("--frames", frames, "Frame count (default run.frames)");
  sy->add_option("--every", every, "Write every N-th frame")->capture_default_str();

  double low = 0.1, high = 10.0, knee = 0.8;
  bool random_hdr = false;
  auto* au = app.add_subcommand("augment", "Apply the piecewise-linear HDR transfer to a PGM image");
  au->add_option("--input", input, "PGM image")->required()->check(CLI::ExistingFile);
  au->add_option("--low", low)->capture_default_str();
  au->add_option("--high", high)->capture_default_str();
  au->add_option("--threshold", knee)->capture_default_str();
  au->add_flag("--random", random_hdr, "Draw low/high from the training distribution using --seed");

  std::string stack_path, bits_path, gt_path, method = "naive", domain = "tonemapped";
  std::size_t channel = 0;
  double dark = 0.0;
  auto* rc = app.add_subcommand("reconstruct", "Classical flux recovery with optional metrics");
  rc->add_option("--stack", stack_path, "QSX1 exposure stack")->check(CLI::ExistingFile);
  rc->add_option("--bitplanes", bits_path, "QSB1 file for direct integration")->check(CLI::ExistingFile);
  rc->add_option("--gt", gt_path, "Ground-truth QSX1 flux")->check(CLI::ExistingFile);
  rc->add_option("--method", method)->check(CLI::IsMember({"naive", "fuse"}))->capture_default_str();
  rc->add_option("--channel", channel, "Stack channel for naive integration")->capture_default_str();
  rc->add_option("--domain", domain)->check(CLI::IsMember({"tonemapped", "linear"}))->capture_default_str();
  rc->add_option("--dark", dark, "Dark counts per frame to subtract")->capture_default_str();

  auto* pr = app.add_subcommand("pairs", "Export stack / ground-truth training pairs with a manifest");

  std::size_t bw = 256, bh = 256;
  std::uint64_t bench_frames = 10000;
  auto* be = app.add_subcommand("bench", "Sketch update throughput and FLOP count");
  be->add_option("--width", bw)->capture_default_str();
  be->add_option("--height", bh)->capture_default_str();
  be->add_option("--frames", bench_frames)->capture_default_str();

  double sensor_fps = 1e5, poll_fps = 30, channels = 8, bits = 8, window = 4096;
  auto* bwc = app.add_subcommand("bandwidth", "Raw vs sketch bandwidth and memory");
  bwc->add_option("--sensor-fps", sensor_fps)->capture_default_str();
  bwc->add_option("--poll-fps", poll_fps)->capture_default_str();
  bwc->add_option("--channels", channels)->capture_default_str();
  bwc->add_option("--bits", bits)->capture_default_str();
  bwc->add_option("--window", window)->capture_default_str();

  std::vector<double> rates;
  bool no_realtime = false;
  auto* de = app.add_subcommand("demo-stream", "One producer, several pollers, consistency and staleness report");
  de->add_option("--frames", frames, "Producer frames (default run.demo_frames)");
  de->add_option("--rates", rates, "Poll rates in Hz (default run.poll_rates)");
  de->add_flag("--no-realtime", no_realtime, "Run the producer unpaced");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*sim) return cmd_simulate(g, frames);
    if (*sk) return cmd_sketch(g, input, stride, dtype);
    if (*ch) return cmd_characterize(g, n_frames, threshold_db, grid_lo, grid_hi, grid_points);
    if (*sy) return cmd_synth(g, frames, every);
    if (*au) return cmd_augment(g, input, low, high, knee, random_hdr);
    if (*rc) return cmd_reconstruct(g, stack_path, bits_path, gt_path, method, channel, domain, dark);
    if (*pr) return cmd_pairs(g);
    if (*be) return cmd_bench(g, bw, bh, bench_frames);
    if (*bwc) return cmd_bandwidth(sensor_fps, poll_fps, channels, bits, window);
    if (*de) return cmd_demo(g, frames, rates, no_realtime);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const ConsistencyError& e) {
    std::cerr << "consistency violation: " << e.what() << '\n';
    return kConsistency;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
