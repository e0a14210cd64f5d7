#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qstream/errors.hpp"
#include "qstream/sensor_model.hpp"
#include "qstream/streaming_sketch.hpp"
#include "qstream/synthesis.hpp"

namespace qstream {

struct SensorSection {
  double pdp = 1.0;
  double dark_rate = kDefaultDarkRate;
  double frame_rate = kDefaultFrameRate;
  bool randomize_frame_rate = false;
  double hot_pixel_fraction = 0.0;
  double hot_pixel_dark_rate = 2000.0;

  friend bool operator==(const SensorSection&, const SensorSection&) = default;
};

struct LadderSection {
  std::string preset = "geometric";  // geometric | dyadic | sparse-dyadic
  std::uint64_t channels = 8;
  double w_min = 16.0;
  double w_max = 4096.0;
  std::optional<std::vector<double>> windows;  // overrides the preset

  [[nodiscard]] ExposureLadder build() const {
    if (windows) return ExposureLadder(*windows);
    if (preset == "geometric") return ExposureLadder::geometric(channels, w_min, w_max);
    if (preset == "dyadic") return ExposureLadder::dyadic(4, 12, 1);
    if (preset == "sparse-dyadic") return ExposureLadder::dyadic(4, 12, 2);
    throw ConfigError("unknown preset '" + preset + "'", "ladder.preset");
  }

  friend bool operator==(const LadderSection&, const LadderSection&) = default;
};

struct HdrSection {
  double lambda_low = 0.1;
  double lambda_high = 10.0;
  double threshold = 0.8;
  bool random = false;  // draw low/high per scene

  friend bool operator==(const HdrSection&, const HdrSection&) = default;
};

struct SceneSection {
  std::uint64_t width = 64;
  std::uint64_t height = 64;
  std::string pattern = "checkerboard";  // checkerboard | radial | ramp | pgm
  std::string image;                      // PGM path when pattern == "pgm"
  std::uint64_t cell = 8;
  std::string motion = "global";     // static | global | local
  std::string trajectory = "linear";  // linear | bezier
  std::uint64_t segments = 0;         // 0 = random in [5, 10]
  double speed = 1000.0;              // pixels/second
  std::uint64_t sprite_size = 16;
  std::string photometry = "scale";  // scale | hdr | identity
  double max_flux = 1.0;             // photons/frame
  std::optional<double> max_photons_per_second;
  HdrSection hdr;

  friend bool operator==(const SceneSection&, const SceneSection&) = default;
};

struct RunSection {
  std::uint64_t frames = 4096;
  std::uint64_t stride = 100;
  std::uint64_t scenes = 1;
  std::string stack_dtype = "u8";  // u8 | f32
  std::string hot_pixel_fill = "median";
  double hot_pixel_z = 6.0;
  double poll_fps = 30.0;
  std::vector<double> poll_rates{10.0, 100.0, 1000.0};
  std::uint64_t demo_frames = 1000000;
  std::uint64_t demo_width = 32;
  std::uint64_t demo_height = 32;
  bool realtime = true;

  friend bool operator==(const RunSection&, const RunSection&) = default;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  SensorSection sensor;
  LadderSection ladder;
  SceneSection scene;
  RunSection run;

  [[nodiscard]] SensorConfig sensor_config() const {
    SensorConfig c;
    c.pdp = sensor.pdp;
    c.dark_rate = sensor.dark_rate;
    c.frame_rate = sensor.frame_rate;
    c.hot_pixel_dark_rate = sensor.hot_pixel_dark_rate;
    return c;
  }

  /// Flux ceiling in photons/frame for Scale photometry.
  [[nodiscard]] double max_flux_per_frame(double frame_rate) const {
    return scene.max_photons_per_second
               ? photons_per_second_to_per_frame(*scene.max_photons_per_second, frame_rate)
               : scene.max_flux;
  }

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

namespace detail {

using nlohmann::json;

class ObjectReader {
public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("must be an object", path_.empty() ? "<root>" : path_);
  }

  [[nodiscard]] std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const json* v = child(key)) {
      if (!v->is_number()) throw ConfigError("expected a number", field(key));
      out = v->get<double>();
    }
  }

  void read(const std::string& key, std::optional<double>& out) {
    if (const json* v = child(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_number()) throw ConfigError("expected a number", field(key));
      out = v->get<double>();
    }
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = child(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
        throw ConfigError("expected a non-negative integer", field(key));
      }
      out = v->get<std::uint64_t>();
    }
  }

  void read(const std::string& key, bool& out) {
    if (const json* v = child(key)) {
      if (!v->is_boolean()) throw ConfigError("expected true or false", field(key));
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const json* v = child(key)) {
      if (!v->is_string()) throw ConfigError("expected a string", field(key));
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, std::vector<double>& out) {
    if (const json* v = child(key)) out = number_array(*v, field(key));
  }

  void read(const std::string& key, std::optional<std::vector<double>>& out) {
    if (const json* v = child(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      out = number_array(*v, field(key));
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key", field(it.key()));
    }
  }

private:
  static std::vector<double> number_array(const json& v, const std::string& where) {
    if (!v.is_array()) throw ConfigError("expected an array of numbers", where);
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError("expected a number", where + "[" + std::to_string(i) + "]");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require_one_of(const std::string& value, std::initializer_list<const char*> options,
                           const std::string& field) {
  for (const char* o : options) {
    if (value == o) return;
  }
  std::string msg = "must be one of";
  for (const char* o : options) msg += std::string(" '") + o + "'";
  throw ConfigError(msg + ", got '" + value + "'", field);
}

inline void require(bool ok, const char* message, const std::string& field) {
  if (!ok) throw ConfigError(message, field);
}

}  // namespace detail

/// Checks value ranges and enumerations. Throws ConfigError naming the field.
inline void validate(const PipelineConfig& c) {
  using detail::require;
  using detail::require_one_of;
  c.sensor_config().validate();
  require(c.sensor.hot_pixel_fraction >= 0.0 && c.sensor.hot_pixel_fraction < 1.0,
          "must lie in [0, 1)", "sensor.hot_pixel_fraction");
  require_one_of(c.ladder.preset, {"geometric", "dyadic", "sparse-dyadic"}, "ladder.preset");
  require(c.ladder.channels >= 1 && c.ladder.channels <= 255, "must lie in [1, 255]", "ladder.channels");
  require(c.ladder.w_min >= 1.0 && c.ladder.w_max > c.ladder.w_min, "need 1 <= w_min < w_max", "ladder.w_min");
  (void)c.ladder.build();

  const auto& s = c.scene;
  require(s.width >= 1 && s.width <= 4096, "must lie in [1, 4096]", "scene.width");
  require(s.height >= 1 && s.height <= 4096, "must lie in [1, 4096]", "scene.height");
  require_one_of(s.pattern, {"checkerboard", "radial", "ramp", "pgm"}, "scene.pattern");
  require(s.pattern != "pgm" || !s.image.empty(), "required when pattern is 'pgm'", "scene.image");
  require(s.cell >= 1, "must be >= 1", "scene.cell");
  require_one_of(s.motion, {"static", "global", "local"}, "scene.motion");
  require_one_of(s.trajectory, {"linear", "bezier"}, "scene.trajectory");
  require(s.segments == 0 || (s.segments >= 1 && s.segments <= 64), "must be 0 or in [1, 64]", "scene.segments");
  require(s.speed >= 0.0 && std::isfinite(s.speed), "must be finite and >= 0", "scene.speed");
  require(s.sprite_size >= 1, "must be >= 1", "scene.sprite_size");
  require(s.motion != "local" || (s.sprite_size < s.width && s.sprite_size < s.height),
          "sprite must be smaller than the frame", "scene.sprite_size");
  require_one_of(s.photometry, {"scale", "hdr", "identity"}, "scene.photometry");
  require(s.max_flux > 0.0 && std::isfinite(s.max_flux), "must be finite and > 0", "scene.max_flux");
  require(!s.max_photons_per_second || *s.max_photons_per_second > 0.0, "must be > 0",
          "scene.max_photons_per_second");
  HdrAugmentConfig{s.hdr.lambda_low, s.hdr.lambda_high, s.hdr.threshold}.validate();

  const auto& r = c.run;
  require(r.frames >= 1, "must be >= 1", "run.frames");
  require(r.stride >= 1, "must be >= 1", "run.stride");
  require(r.scenes >= 1, "must be >= 1", "run.scenes");
  require_one_of(r.stack_dtype, {"u8", "f32"}, "run.stack_dtype");
  require_one_of(r.hot_pixel_fill, {"median", "zero"}, "run.hot_pixel_fill");
  require(r.hot_pixel_z > 0.0, "must be > 0", "run.hot_pixel_z");
  require(r.poll_fps > 0.0, "must be > 0", "run.poll_fps");
  for (std::size_t i = 0; i < r.poll_rates.size(); ++i) {
    require(r.poll_rates[i] > 0.0, "must be > 0", "run.poll_rates[" + std::to_string(i) + "]");
  }
  require(r.demo_frames >= 1, "must be >= 1", "run.demo_frames");
  require(r.demo_width >= 1 && r.demo_height >= 1, "must be >= 1", "run.demo_width");
}

/// Builds a config from parsed JSON: defaults for absent keys, unknown keys
/// rejected, then validated.
inline PipelineConfig config_from_json(const nlohmann::json& j) {
  using detail::ObjectReader;
  PipelineConfig c;
  ObjectReader root(j, "");
  root.read("seed", c.seed);
  if (const auto* v = root.child("sensor")) {
    ObjectReader r(*v, "sensor");
    r.read("pdp", c.sensor.pdp);
    r.read("dark_rate", c.sensor.dark_rate);
    r.read("frame_rate", c.sensor.frame_rate);
    r.read("randomize_frame_rate", c.sensor.randomize_frame_rate);
    r.read("hot_pixel_fraction", c.sensor.hot_pixel_fraction);
    r.read("hot_pixel_dark_rate", c.sensor.hot_pixel_dark_rate);
    r.finish();
  }
  if (const auto* v = root.child("ladder")) {
    ObjectReader r(*v, "ladder");
    r.read("preset", c.ladder.preset);
    r.read("channels", c.ladder.channels);
    r.read("w_min", c.ladder.w_min);
    r.read("w_max", c.ladder.w_max);
    r.read("windows", c.ladder.windows);
    r.finish();
  }
  if (const auto* v = root.child("scene")) {
    ObjectReader r(*v, "scene");
    auto& s = c.scene;
    r.read("width", s.width);
    r.read("height", s.height);
    r.read("pattern", s.pattern);
    r.read("image", s.image);
    r.read("cell", s.cell);
    r.read("motion", s.motion);
    r.read("trajectory", s.trajectory);
    r.read("segments", s.segments);
    r.read("speed", s.speed);
    r.read("sprite_size", s.sprite_size);
    r.read("photometry", s.photometry);
    r.read("max_flux", s.max_flux);
    r.read("max_photons_per_second", s.max_photons_per_second);
    if (const auto* h = r.child("hdr")) {
      ObjectReader hr(*h, "scene.hdr");
      hr.read("lambda_low", s.hdr.lambda_low);
      hr.read("lambda_high", s.hdr.lambda_high);
      hr.read("threshold", s.hdr.threshold);
      hr.read("random", s.hdr.random);
      hr.finish();
    }
    r.finish();
  }
  if (const auto* v = root.child("run")) {
    ObjectReader r(*v, "run");
    auto& rs = c.run;
    r.read("frames", rs.frames);
    r.read("stride", rs.stride);
    r.read("scenes", rs.scenes);
    r.read("stack_dtype", rs.stack_dtype);
    r.read("hot_pixel_fill", rs.hot_pixel_fill);
    r.read("hot_pixel_z", rs.hot_pixel_z);
    r.read("poll_fps", rs.poll_fps);
    r.read("poll_rates", rs.poll_rates);
    r.read("demo_frames", rs.demo_frames);
    r.read("demo_width", rs.demo_width);
    r.read("demo_height", rs.demo_height);
    r.read("realtime", rs.realtime);
    r.finish();
  }
  root.finish();
  validate(c);
  return c;
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["sensor"] = {{"pdp", c.sensor.pdp},
                 {"dark_rate", c.sensor.dark_rate},
                 {"frame_rate", c.sensor.frame_rate},
                 {"randomize_frame_rate", c.sensor.randomize_frame_rate},
                 {"hot_pixel_fraction", c.sensor.hot_pixel_fraction},
                 {"hot_pixel_dark_rate", c.sensor.hot_pixel_dark_rate}};
  j["ladder"] = {{"preset", c.ladder.preset},
                 {"channels", c.ladder.channels},
                 {"w_min", c.ladder.w_min},
                 {"w_max", c.ladder.w_max},
                 {"windows", c.ladder.windows ? nlohmann::json(*c.ladder.windows) : nlohmann::json()}};
  const auto& s = c.scene;
  j["scene"] = {{"width", s.width},
                {"height", s.height},
                {"pattern", s.pattern},
                {"image", s.image},
                {"cell", s.cell},
                {"motion", s.motion},
                {"trajectory", s.trajectory},
                {"segments", s.segments},
                {"speed", s.speed},
                {"sprite_size", s.sprite_size},
                {"photometry", s.photometry},
                {"max_flux", s.max_flux},
                {"max_photons_per_second",
                 s.max_photons_per_second ? nlohmann::json(*s.max_photons_per_second) : nlohmann::json()},
                {"hdr",
                 {{"lambda_low", s.hdr.lambda_low},
                  {"lambda_high", s.hdr.lambda_high},
                  {"threshold", s.hdr.threshold},
                  {"random", s.hdr.random}}}};
  const auto& r = c.run;
  j["run"] = {{"frames", r.frames},
              {"stride", r.stride},
              {"scenes", r.scenes},
              {"stack_dtype", r.stack_dtype},
              {"hot_pixel_fill", r.hot_pixel_fill},
              {"hot_pixel_z", r.hot_pixel_z},
              {"poll_fps", r.poll_fps},
              {"poll_rates", r.poll_rates},
              {"demo_frames", r.demo_frames},
              {"demo_width", r.demo_width},
              {"demo_height", r.demo_height},
              {"realtime", r.realtime}};
  return j;
}

/// 1-based line and column of a byte offset in `text`.
inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline PipelineConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // nlohmann reports the 1-based position just past the offending token.
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError("JSON parse error at line " + std::to_string(line) + ", column " +
                      std::to_string(col) + ": " + e.what());
  }
  return config_from_json(j);
}

inline PipelineConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  return parse_config_text(text);
}

}  // namespace qstream
