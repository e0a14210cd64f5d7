#include "catch_amalgamated.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "qstream/sensor_model.hpp"
#include "support/stats_oracles.hpp"

#include <boost/math/distributions/binomial.hpp>

using namespace qstream;
using Catch::Approx;

namespace {

SensorConfig noiseless() {
  SensorConfig c;
  c.dark_rate = 0.0;
  return c;
}

std::vector<std::uint32_t> pixel_sums(const FluxFrame& flux, const SensorConfig& cfg,
                                      std::uint64_t frames, std::uint64_t seed) {
  std::vector<std::uint32_t> sums(flux.size(), 0);
  for (std::uint64_t t = 0; t < frames; ++t) {
    const auto b = simulate_bitplane(flux, cfg, seed, t);
    for (std::size_t i = 0; i < sums.size(); ++i) sums[i] += b.bits[i];
  }
  return sums;
}

}  // namespace

TEST_CASE("detection probability spot values", "[sensor]") {
  CHECK(detection_probability(0.0, 0.0) == 0.0);
  CHECK(detection_probability(std::log(2.0), 0.0) == Approx(0.5).epsilon(1e-15));
  // 1 - e^-7 from a 30-digit evaluation.
  CHECK(detection_probability(7.0, 0.0) == Approx(0.999088118034445483792).epsilon(1e-15));
  // 7.5 cps at 10 kFPS.
  CHECK(detection_probability(0.0, 7.5 / 1e4) == Approx(7.49718820299318e-4).epsilon(1e-12));
}

TEST_CASE("detection probability rejects invalid rates", "[sensor]") {
  CHECK_THROWS_AS(detection_probability(-1e-9), DomainError);
  CHECK_THROWS_AS(detection_probability(1.0, -1.0), DomainError);
  CHECK_THROWS_AS(detection_probability(std::numeric_limits<double>::quiet_NaN()), DomainError);
  CHECK_THROWS_AS(detection_probability(std::numeric_limits<double>::infinity()), DomainError);
}

TEST_CASE("detection probability is strictly increasing in flux", "[sensor][property]") {
  for (double d : {0.0, 3.75e-4, 0.1}) {
    double prev = detection_probability(0.0, d);
    for (double lam = 1e-6; lam < 20.0; lam *= 1.1) {
      const double p = detection_probability(lam, d);
      REQUIRE(p > prev);
      REQUIRE(p < 1.0);
      prev = p;
    }
  }
}

TEST_CASE("zero flux without dark counts never fires", "[sensor]") {
  const FluxFrame dark(16, 16, 0.0);
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    const auto b = simulate_bitplane(dark, noiseless(), seed, 7);
    CHECK(b.count_ones() == 0);
    CHECK(b.timestamp == 7);
  }
}

TEST_CASE("simulate_bitplane is reproducible and seed sensitive", "[sensor]") {
  const FluxFrame flux(32, 32, 0.7);
  const auto cfg = noiseless();
  CHECK(simulate_bitplane(flux, cfg, 5, 3) == simulate_bitplane(flux, cfg, 5, 3));
  CHECK(simulate_bitplane(flux, cfg, 5, 3).bits != simulate_bitplane(flux, cfg, 6, 3).bits);
  CHECK(simulate_bitplane(flux, cfg, 5, 3).bits != simulate_bitplane(flux, cfg, 5, 4).bits);
}

TEST_CASE("unit flux fires with probability 1 - 1/e", "[sensor][statistical]") {
  const double p = 1.0 - std::exp(-1.0);
  const double tol = 3.0 * std::sqrt(p * (1.0 - p) / 4096.0);

  const FluxFrame one(1, 1, 1.0);
  const auto single = pixel_sums(one, noiseless(), 4096, 11);
  CHECK(std::abs(single[0] / 4096.0 - p) <= tol);

  const FluxFrame frame(32, 32, 1.0);
  const auto sums = pixel_sums(frame, noiseless(), 4096, 12);
  std::size_t inside = 0;
  for (auto s : sums) inside += std::abs(s / 4096.0 - p) <= tol;
  CHECK(static_cast<double>(inside) / static_cast<double>(sums.size()) >= 0.99);
}

TEST_CASE("dark counts follow the per-frame rate", "[sensor][statistical]") {
  SensorConfig cfg;
  cfg.frame_rate = 1e4;
  const FluxFrame dark(128, 128, 0.0);
  const auto sums = pixel_sums(dark, cfg, 400, 3);
  double total = 0.0;
  for (auto s : sums) total += s;
  const double n = 400.0 * 128 * 128;
  const double p = 7.49718820299318e-4;
  CHECK(std::abs(total / n - p) <= 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("pdp scales the effective flux", "[sensor]") {
  SensorConfig half = noiseless();
  half.pdp = 0.5;
  const FluxFrame a(8, 8, 2.0);
  const FluxFrame b(8, 8, 1.0);
  CHECK(simulate_bitplane(a, half, 1, 0) == simulate_bitplane(b, noiseless(), 1, 0));
}

TEST_CASE("hot pixels use the elevated dark rate", "[sensor]") {
  SensorConfig cfg;
  cfg.hot_pixel_dark_rate = 19000.0;  // ~0.61 per frame at 20 kFPS
  HotPixelMask mask(4, 4, 0);
  mask(1, 2) = 1;
  cfg.hot_pixels = mask;
  const FluxFrame dark(4, 4, 0.0);
  const auto sums = pixel_sums(dark, cfg, 2000, 4);
  CHECK(sums[2 * 4 + 1] > 1000);
  CHECK(sums[0] < 20);

  cfg.hot_pixels = HotPixelMask(3, 3, 0);
  CHECK_THROWS_AS(simulate_bitplane(dark, cfg, 0, 0), ShapeError);
}

TEST_CASE("sensor config validation", "[sensor]") {
  SensorConfig c;
  CHECK_NOTHROW(c.validate());
  c.dark_rate = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.frame_rate = 5e3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.pdp = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const double fr = draw_frame_rate(s);
    CHECK(fr >= kMinFrameRate);
    CHECK(fr <= kMaxFrameRate);
  }
}

TEST_CASE("flux frames reject invalid values", "[sensor]") {
  CHECK_THROWS_AS(FluxFrame(2, 2, -0.1), DomainError);
  CHECK_THROWS_AS(FluxFrame(0, 2, 0.0), ShapeError);
  CHECK_THROWS_AS(FluxFrame(2, 2, std::vector<double>(3, 0.0)), ShapeError);
}

TEST_CASE("simulate_sequence matches per-frame simulation", "[sensor]") {
  const FluxFrame flux(16, 16, 0.4);
  const auto cfg = SensorConfig{};
  auto seq = simulate_sequence([&](std::uint64_t) { return flux; }, cfg, 1, 77);
  auto first = seq.next();
  REQUIRE(first);
  CHECK(*first == simulate_bitplane(flux, cfg, 77, 0));
  CHECK_FALSE(seq.next());

  auto a = simulate_sequence([&](std::uint64_t) { return flux; }, cfg, 50, 9);
  auto b = simulate_sequence([&](std::uint64_t) { return flux; }, cfg, 50, 9);
  for (int i = 0; i < 50; ++i) REQUIRE(*a.next() == *b.next());

  CHECK_THROWS_AS(simulate_sequence([&](std::uint64_t) { return flux; }, cfg, 0, 0), std::invalid_argument);
}

TEST_CASE("simulate_sequence rejects dimension drift", "[sensor]") {
  auto seq = simulate_sequence(
      [](std::uint64_t t) { return FluxFrame(t == 0 ? 8 : 9, 8, 0.1); }, SensorConfig{}, 3, 0);
  CHECK(seq.next());
  CHECK_THROWS_AS(seq.next(), ShapeError);
}

TEST_CASE("sequence sums pass a binomial chi-square test", "[sensor][statistical]") {
  const double lam = 0.3;
  const FluxFrame flux(64, 64, lam);
  auto seq = simulate_sequence([&](std::uint64_t) { return flux; }, noiseless(), 4096, 2024);
  std::vector<std::uint32_t> sums(flux.size(), 0);
  while (auto b = seq.next()) {
    for (std::size_t i = 0; i < sums.size(); ++i) sums[i] += b->bits[i];
  }
  const auto r = test::binomial_chi_square(sums, 4096, detection_probability(lam));
  INFO("chi2=" << r.statistic << " dof=" << r.dof << " p=" << r.p_value);
  CHECK(r.p_value > 0.01);
}

TEST_CASE("hot pixel calibration", "[sensor]") {
  SensorConfig cfg;  // 7.5 cps at 20 kFPS
  const std::size_t w = 64, h = 64;

  SECTION("all-zero frames flag nothing") {
    std::vector<BitPlane> frames(300, BitPlane(w, h));
    for (std::size_t t = 0; t < frames.size(); ++t) frames[t].timestamp = t;
    CHECK(count_flagged(calibrate_hot_pixels(frames, 6.0)) == 0);
  }

  SECTION("uniform dark current gives few false positives") {
    std::vector<BitPlane> frames;
    const FluxFrame dark(w, h, 0.0);
    for (std::uint64_t t = 0; t < 1000; ++t) frames.push_back(simulate_bitplane(dark, cfg, 1, t));
    // mean count 0.375 and mean + 6 sd is close to 4, so only pixels with >= 4 hits can trip.
    const auto mask = calibrate_hot_pixels(frames, 6.0);
    const double p = detection_probability(0.0, cfg.dark_per_frame());
    const double tail = boost::math::cdf(
        boost::math::complement(boost::math::binomial_distribution<double>(1000, p), 3.0));
    const auto band = test::binomial_interval(static_cast<std::uint32_t>(w * h), tail, 0.999);
    CHECK(static_cast<double>(count_flagged(mask)) <= band.second);
  }

  SECTION("a planted 100x pixel is flagged") {
    FluxFrame flux(w, h, 0.0);
    flux(10, 20) = 99.0 * cfg.dark_per_frame();  // plus the uniform rate = 100x
    std::vector<BitPlane> frames;
    for (std::uint64_t t = 0; t < 1000; ++t) frames.push_back(simulate_bitplane(flux, cfg, 2, t));
    const auto mask = calibrate_hot_pixels(frames, 6.0);
    CHECK(mask(10, 20) == 1);
    CHECK(count_flagged(mask) <= 3);
  }

  SECTION("errors") {
    std::vector<BitPlane> none;
    CHECK_THROWS_AS(calibrate_hot_pixels(none, 6.0), std::invalid_argument);
    std::vector<BitPlane> few(10, BitPlane(w, h));
    CHECK_THROWS_AS(calibrate_hot_pixels(few, 6.0), std::invalid_argument);
  }
}
