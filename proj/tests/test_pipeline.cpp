#include "catch_amalgamated.hpp"

#include <filesystem>
#include <fstream>

#include "qstream/io_formats.hpp"
#include "qstream/pipeline.hpp"

using namespace qstream;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("qstream_pipe_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

PipelineConfig small_config() {
  PipelineConfig c;
  c.seed = 3;
  c.scene.width = 24;
  c.scene.height = 16;
  c.scene.cell = 4;
  c.run.frames = 300;
  c.run.stride = 100;
  c.run.scenes = 2;
  return c;
}

}  // namespace

TEST_CASE("bandwidth accounting", "[pipeline]") {
  const auto r = bandwidth_report(100000, 30, 8, 8, 4096);
  CHECK(r.raw_bits_per_pixel_per_s == 100000.0);
  CHECK(r.sketch_bits_per_pixel_per_s == 1920.0);
  CHECK(r.reduction_ratio == Approx(100000.0 / 1920.0));
  CHECK(r.reduction_ratio >= 50.0);
  CHECK(r.memory_raw_bytes_per_pixel == 512.0);
  CHECK(r.memory_sketch_bytes_per_pixel == 8.0);
  CHECK(r.memory_ratio == 64.0);
  CHECK(bandwidth_report(20000, 20000, 1, 1, 8).reduction_ratio == 1.0);
  CHECK_THROWS_AS(bandwidth_report(0, 30, 8, 8, 4096), std::invalid_argument);
  CHECK_THROWS_AS(bandwidth_report(1e5, 0, 8, 8, 4096), std::invalid_argument);

  const auto j = to_json(r);
  CHECK(j.at("reduction_ratio").get<double>() == Approx(52.083333));
}

TEST_CASE("bench reports the instrumented flop count", "[pipeline]") {
  const auto b = bench_update(32, 32, 1000, ExposureLadder::default_ladder(), 1, 100);
  CHECK(b.pixels == 1024);
  CHECK(b.frames == 1000);
  CHECK(b.channels == 8);
  CHECK(b.flops_per_pixel_per_frame <= 16.0);
  CHECK(b.flops_per_pixel_per_frame > 8.0);
  CHECK(b.updates_per_second > 0.0);
  CHECK(b.poll_latency_p99_us >= 0.0);
  CHECK_THROWS_AS(bench_update(4, 4, 99, ExposureLadder::default_ladder()), std::invalid_argument);
}

TEST_CASE("percentile helper", "[pipeline]") {
  CHECK(detail::percentile({}, 0.5) == 0.0);
  CHECK(detail::percentile({3, 1, 2}, 0.5) == 2.0);
  CHECK(detail::percentile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 0.99) == 10.0);
}

TEST_CASE("short stream demo stays consistent", "[pipeline][concurrency]") {
  DemoConfig cfg;
  cfg.width = cfg.height = 16;
  cfg.frames = 20000;  // one second at 20 kFPS
  cfg.poll_rates = {10, 100, 1000};
  const auto rep = run_stream_demo(cfg);
  CHECK(rep.frames == 20000);
  CHECK(rep.violations() == 0);
  REQUIRE(rep.pollers.size() == 3);
  CHECK(rep.pollers[2].polls >= 500);
  CHECK(rep.worst_p99_staleness() <= 2.0);

  cfg.frames = 0;
  CHECK_THROWS_AS(run_stream_demo(cfg), std::invalid_argument);
}

TEST_CASE("demo pollers without a running producer see identical stacks", "[pipeline][concurrency]") {
  StreamingSketch<double> s(ExposureLadder::default_ladder(), 4, 4);
  s.update(BitPlane(4, 4, 0));
  const auto a = s.poll();
  const auto b = s.poll();
  CHECK(*a == *b);
  CHECK(snapshot_ok(*a, 1));
  CHECK_FALSE(snapshot_ok(*a, 0));
}

TEST_CASE("hot pixel fill", "[pipeline]") {
  ExposureStack s;
  s.width = 3;
  s.height = 3;
  s.windows = {64, 16};
  s.channel_timestamps = {5, 5};
  s.timestamp = 5;
  s.raw = std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f, 0.9f, 0.5f, 0.6f, 0.7f, 0.8f,  //
                             0.0f, 0.0f, 0.0f, 0.0f, 1.0f, 0.0f, 0.0f, 0.0f, 0.0f};
  s.quantized.resize(18);
  for (std::size_t i = 0; i < 18; ++i) s.quantized[i] = quantize_unit((*s.raw)[i]);
  HotPixelMask mask(3, 3, 0);
  mask(1, 1) = 1;

  auto median = s;
  fill_hot_pixels(median, mask, HotPixelFill::Median);
  CHECK((*median.raw)[4] == Approx(0.45f));
  CHECK((*median.raw)[13] == 0.0f);
  CHECK(median.quantized[4] == quantize_unit(0.45));
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 7, 8}) CHECK((*median.raw)[i] == (*s.raw)[i]);

  auto zero = s;
  fill_hot_pixels(zero, mask, HotPixelFill::Zero);
  CHECK((*zero.raw)[4] == 0.0f);
  CHECK(zero.quantized[4] == 0);

  CHECK_THROWS_AS(fill_hot_pixels(zero, HotPixelMask(2, 2, 0), HotPixelFill::Zero), ShapeError);
}

TEST_CASE("scenes build from config", "[pipeline]") {
  for (const char* motion : {"static", "global", "local"}) {
    auto c = small_config();
    c.scene.motion = motion;
    const auto b = build_scene(c, 0, 50);
    CHECK(b.scene.out_width() == 24);
    CHECK(b.scene.out_height() == 16);
    const auto f = render_frame(b.scene, 49);
    CHECK(f.width() == 24);
  }
  auto c = small_config();
  c.scene.max_photons_per_second = 1000.0;
  const auto b = build_scene(c, 0, 10);
  CHECK(apply_photometry(render_frame(b.scene, 0), b.photometry).max_value() ==
        Approx(1000.0 / b.sensor.frame_rate));
}

TEST_CASE("pair export writes readable files and a manifest", "[pipeline][io]") {
  TempDir dir;
  auto cfg = small_config();
  cfg.sensor.hot_pixel_fraction = 0.01;
  const auto ex = export_pairs(cfg, dir.path);
  REQUIRE(ex.pairs.size() == 6);
  std::ifstream in(ex.manifest);
  const auto m = nlohmann::json::parse(in);
  CHECK(m.at("format") == "qstream-pairs");
  CHECK(m.at("version") == 1);
  CHECK(m.at("width") == 24);
  CHECK(m.at("height") == 16);
  CHECK(m.at("windows").get<std::vector<double>>() == ExposureLadder::default_ladder().windows());
  CHECK(m.at("pairs").size() == 6);
  CHECK(config_from_json(m.at("config")) == cfg);
  CHECK(m.at("scenes")[0].at("hot_pixels_masked").get<int>() > 0);

  for (const auto& p : ex.pairs) {
    const auto stack = io::read_stack(dir.path / p.stack_file);
    const auto gt = io::read_stack(dir.path / p.ground_truth_file);
    CHECK(stack.timestamp == p.timestamp);
    CHECK(stack.timestamp % 100 == 0);
    CHECK(stack.width == 24);
    CHECK(stack.channels() == 8);
    CHECK(gt.channels() == 1);
    CHECK(gt.windows == std::vector<double>{1.0});
    CHECK(gt.raw.has_value());
  }

  TempDir again;
  const auto ex2 = export_pairs(cfg, again.path);
  for (std::size_t i = 0; i < ex.pairs.size(); ++i) {
    CHECK(io::read_file(dir.path / ex.pairs[i].stack_file) ==
          io::read_file(again.path / ex2.pairs[i].stack_file));
  }
}
