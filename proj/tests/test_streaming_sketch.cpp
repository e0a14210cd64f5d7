#include "catch_amalgamated.hpp"

#include <atomic>
#include <cmath>
#include <random>
#include <thread>
#include <vector>

#include "qstream/streaming_sketch.hpp"

using namespace qstream;
using Catch::Approx;

namespace {

// Explicit exponentially weighted sum, evaluated in long double.
long double closed_form(const std::vector<std::uint8_t>& bits, double alpha, double r0) {
  const long double decay = 1.0L - alpha;
  long double acc = std::pow(decay, static_cast<long double>(bits.size())) * r0;
  long double weight = alpha;
  for (std::size_t i = bits.size(); i-- > 0;) {
    if (bits[i]) acc += weight;
    weight *= decay;
  }
  return acc;
}

BitPlane plane_of(std::size_t w, std::size_t h, std::uint8_t v, std::uint64_t t) {
  BitPlane b(w, h, t);
  std::fill(b.bits.begin(), b.bits.end(), v);
  return b;
}

}  // namespace

TEST_CASE("effective window", "[sketch]") {
  CHECK(effective_window(1.0 / 4096.0) == 4096.0);
  CHECK(effective_window(1.0) == 1.0);
  CHECK(effective_window(1.0 / 16.0) == 16.0);
  CHECK_THROWS_AS(effective_window(0.0), DomainError);
  CHECK_THROWS_AS(effective_window(1.5), DomainError);
  CHECK_THROWS_AS(effective_window(-0.1), DomainError);
}

TEST_CASE("default ladder spans 16..4096 with 8 channels", "[sketch]") {
  const auto ladder = ExposureLadder::default_ladder();
  REQUIRE(ladder.channels() == 8);
  CHECK(ladder.longest() == 4096.0);
  CHECK(ladder.shortest() == 16.0);
  for (std::size_t k = 1; k < ladder.channels(); ++k) {
    CHECK(ladder.window(k) < ladder.window(k - 1));
    CHECK(ladder.window(k - 1) / ladder.window(k) == Approx(std::pow(256.0, 1.0 / 7.0)));
  }
  CHECK(ExposureLadder::dyadic().channels() == 9);
  CHECK(ExposureLadder::dyadic(4, 12, 2).windows() == std::vector<double>{4096, 1024, 256, 64, 16});
}

TEST_CASE("ladder validation", "[sketch]") {
  CHECK_THROWS_AS(ExposureLadder(std::vector<double>{}), ConfigError);
  CHECK_THROWS_AS(ExposureLadder({16, 0.5}), ConfigError);
  CHECK_THROWS_AS(ExposureLadder({16, 64, 32}), ConfigError);
  CHECK_THROWS_AS(ExposureLadder({16, 16}), ConfigError);
  CHECK(ExposureLadder({16, 64, 256}).windows() == std::vector<double>{256, 64, 16});
}

TEST_CASE("new sketch initial state", "[sketch]") {
  const auto ladder = ExposureLadder::default_ladder();
  Sketch zero(ladder, 4, 3, 0.0);
  auto s = zero.poll();
  CHECK(s.timestamp == 0);
  CHECK(s.channels() == 8);
  CHECK(std::all_of(s.quantized.begin(), s.quantized.end(), [](auto q) { return q == 0; }));
  CHECK(zero.op_counter() == 0);

  Sketch one(ladder, 4, 3, 1.0);
  s = one.poll();
  CHECK(std::all_of(s.quantized.begin(), s.quantized.end(), [](auto q) { return q == 255; }));

  Sketch half(ladder, 1, 1, 0.5);
  CHECK(half.poll().quantized.front() == 128);

  CHECK_THROWS_AS(Sketch(ladder, 0, 3), ConfigError);
  CHECK_THROWS_AS(Sketch(ladder, 2, 2, 1.5), ConfigError);
}

TEST_CASE("constant ones approach 1 - (1 - alpha)^t", "[sketch]") {
  Sketch s(ExposureLadder({16.0}), 2, 2);
  for (std::uint64_t t = 0; t < 16; ++t) s.update(plane_of(2, 2, 1, t));
  // 1 - (15/16)^16, evaluated to 30 digits.
  CHECK(s.channel(0)[0] == Approx(0.643925869548207199745).epsilon(1e-14));
}

TEST_CASE("constant zeros decay geometrically", "[sketch]") {
  Sketch s(ExposureLadder({16.0, 4.0}), 1, 1, 1.0);
  for (std::uint64_t t = 0; t < 200; ++t) s.update(plane_of(1, 1, 0, t));
  CHECK(s.channel(0)[0] == Approx(std::pow(15.0 / 16.0, 200)).epsilon(1e-12));
  CHECK(s.channel(1)[0] == Approx(std::pow(0.75, 200)).epsilon(1e-10));
  CHECK(s.channel(1)[0] < 1e-20);
}

TEST_CASE("recursion matches the closed-form exponential sum", "[sketch][property]") {
  std::mt19937_64 rng(17);
  const auto ladder = ExposureLadder::default_ladder();
  for (int trial = 0; trial < 20; ++trial) {
    const double p = std::uniform_real_distribution<>(0.0, 1.0)(rng);
    const double r0 = std::uniform_real_distribution<>(0.0, 1.0)(rng);
    std::bernoulli_distribution bit(p);
    Sketch s(ladder, 1, 1, r0);
    std::vector<std::uint8_t> history(10000);
    for (std::uint64_t t = 0; t < history.size(); ++t) {
      history[t] = bit(rng);
      BitPlane b(1, 1, t);
      b.bits[0] = history[t];
      s.update(b);
    }
    for (std::size_t k = 0; k < s.channels(); ++k) {
      const long double expect = closed_form(history, s.alpha(k), r0);
      REQUIRE(std::abs(static_cast<long double>(s.channel(k)[0]) - expect) <= 1e-6L);
    }
  }
}

TEST_CASE("compact float sketch stays within 1e-5 of the closed form", "[sketch][property]") {
  std::mt19937_64 rng(5);
  const auto ladder = ExposureLadder::default_ladder();
  std::bernoulli_distribution bit(0.37);
  CompactSketch s(ladder, 1, 1);
  std::vector<std::uint8_t> history(10000);
  for (std::uint64_t t = 0; t < history.size(); ++t) {
    BitPlane b(1, 1, t);
    b.bits[0] = history[t] = bit(rng);
    s.update(b);
  }
  for (std::size_t k = 0; k < s.channels(); ++k) {
    CHECK(std::abs(static_cast<long double>(s.channel(k)[0]) - closed_form(history, s.alpha(k), 0.0)) <= 1e-5L);
  }
}

TEST_CASE("kernel alphas stay close to the requested windows", "[sketch]") {
  const auto ladder = ExposureLadder::default_ladder();
  Sketch d(ladder, 1, 1);
  CompactSketch f(ladder, 1, 1);
  for (std::size_t k = 0; k < ladder.channels(); ++k) {
    CHECK(d.alpha(k) == Approx(ladder.alpha(k)).epsilon(1e-12));
    CHECK(f.alpha(k) == Approx(ladder.alpha(k)).epsilon(1e-3));
    CHECK(1.0f - static_cast<float>(f.alpha(k)) + static_cast<float>(f.alpha(k)) == 1.0f);
  }
  CHECK(d.alpha(0) == 1.0 / 4096.0);
  CHECK(f.alpha(7) == 1.0 / 16.0);
}

TEST_CASE("state stays within [0, 1] and quantization error is bounded", "[sketch][property]") {
  std::mt19937_64 rng(3);
  const auto ladder = ExposureLadder({4096, 256, 16, 2, 1});
  Sketch s(ladder, 8, 8, 0.3);
  std::bernoulli_distribution bit(0.5);
  for (std::uint64_t t = 0; t < 3000; ++t) {
    BitPlane b(8, 8, t);
    for (auto& v : b.bits) v = bit(rng);
    s.update(b);
    if (t % 97 == 0) {
      const auto stack = s.poll();
      for (std::size_t k = 0; k < s.channels(); ++k) {
        for (std::size_t i = 0; i < 64; ++i) {
          const double r = s.channel(k)[i];
          REQUIRE(r >= 0.0);
          REQUIRE(r <= 1.0);
          REQUIRE(std::abs(stack.quantized[k * 64 + i] / 255.0 - r) <= 0.5 / 255.0 + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("time average converges to p within the stationary band", "[sketch][statistical]") {
  std::mt19937_64 rng(99);
  const double p = 0.3;
  std::bernoulli_distribution bit(p);
  const auto ladder = ExposureLadder::default_ladder();
  Sketch s(ladder, 1, 1);
  const std::uint64_t burn = 10 * 4096;
  const std::uint64_t total = burn + 20000;
  std::vector<double> sums(s.channels(), 0.0);
  for (std::uint64_t t = 0; t < total; ++t) {
    BitPlane b(1, 1, t);
    b.bits[0] = bit(rng);
    s.update(b);
    if (t >= burn) {
      for (std::size_t k = 0; k < s.channels(); ++k) sums[k] += s.channel(k)[0];
    }
  }
  for (std::size_t k = 0; k < s.channels(); ++k) {
    const double a = s.alpha(k);
    const double band = 3.0 * std::sqrt(a * p * (1 - p) / (2 - a));
    CHECK(std::abs(sums[k] / static_cast<double>(total - burn) - p) <= band);
  }
}

TEST_CASE("update rejects bad frames", "[sketch]") {
  Sketch s(ExposureLadder::default_ladder(), 4, 4);
  CHECK_THROWS_AS(s.update(BitPlane(4, 5, 0)), ShapeError);
  CHECK_THROWS_AS(s.update(BitPlane(4, 4, 1)), SequencingError);
  s.update(BitPlane(4, 4, 0));
  CHECK_THROWS_AS(s.update(BitPlane(4, 4, 0)), SequencingError);
  CHECK(s.frames() == 1);
}

TEST_CASE("poll is idempotent and consistent", "[sketch]") {
  Sketch s(ExposureLadder::default_ladder(), 5, 5);
  for (std::uint64_t t = 0; t < 40; ++t) s.update(plane_of(5, 5, t % 3 == 0, t));
  const auto a = s.poll();
  const auto b = s.poll();
  CHECK(a == b);
  CHECK(a.timestamp == 40);
  CHECK(a.is_consistent());
  CHECK(a.raw.has_value());
  CHECK_FALSE(s.poll(false).raw.has_value());
}

TEST_CASE("flop budget", "[sketch]") {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution bit(0.5);

  SECTION("8 channels never exceed 16 ops per pixel per frame") {
    Sketch s(ExposureLadder::default_ladder(), 16, 16);
    std::uint64_t ones = 0;
    for (std::uint64_t t = 0; t < 500; ++t) {
      BitPlane b(16, 16, t);
      for (auto& v : b.bits) ones += (v = bit(rng));
      s.update(b);
    }
    CHECK(s.flop_budget(500) <= 16.0);
    // Exact count: one multiply per channel-pixel, one add per set bit.
    CHECK(s.op_counter() == 8 * (256 * 500 + ones));
  }
  SECTION("one channel is at most 2") {
    Sketch s(ExposureLadder({64.0}), 4, 4);
    for (std::uint64_t t = 0; t < 100; ++t) s.update(plane_of(4, 4, 1, t));
    CHECK(s.flop_budget(100) == 2.0);
  }
  SECTION("all-zero input costs exactly C") {
    Sketch s(ExposureLadder::default_ladder(), 4, 4);
    for (std::uint64_t t = 0; t < 100; ++t) s.update(plane_of(4, 4, 0, t));
    CHECK(s.flop_budget() == 8.0);
  }
  SECTION("zero frames is an argument error") {
    Sketch s(ExposureLadder::default_ladder(), 4, 4);
    CHECK_THROWS_AS(s.flop_budget(0), std::invalid_argument);
  }
}

TEST_CASE("streaming sketch: idle polls return identical snapshots", "[sketch][concurrency]") {
  StreamingSketch<double> shared(ExposureLadder::default_ladder(), 4, 4);
  shared.update(plane_of(4, 4, 1, 0));
  const auto a = shared.poll();
  const auto b = shared.poll();
  CHECK(a == b);
  CHECK(*a == *b);
  CHECK(a->timestamp == 1);
}

TEST_CASE("streaming sketch: concurrent polls never mix frames", "[sketch][concurrency]") {
  StreamingSketch<double> shared(ExposureLadder::default_ladder(), 8, 8);
  std::atomic<bool> stop{false};
  std::atomic<std::uint64_t> violations{0};
  std::atomic<std::uint64_t> polls{0};
  constexpr std::uint64_t kPollsPerReader = 500000;

  auto reader = [&] {
    std::uint64_t last = 0;
    for (std::uint64_t i = 0; i < kPollsPerReader; ++i) {
      const auto s = shared.poll();
      if (!s->is_consistent() || s->timestamp < last) ++violations;
      // A snapshot of a constant stream: every pixel in a channel agrees.
      for (std::size_t k = 0; k < s->channels(); ++k) {
        const auto pl = s->plane(k);
        if (!std::all_of(pl.begin(), pl.end(), [&](auto q) { return q == pl[0]; })) ++violations;
      }
      last = s->timestamp;
      ++polls;
    }
  };
  std::thread r1(reader), r2(reader);
  std::thread writer([&] {
    std::uint64_t t = 0;
    while (!stop.load()) {
      shared.update(plane_of(8, 8, (t / 7) % 2, t));
      ++t;
    }
  });
  r1.join();
  r2.join();
  stop = true;
  writer.join();
  CHECK(polls.load() == 2 * kPollsPerReader);
  CHECK(violations.load() == 0);
}
