#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qstream/errors.hpp"
#include "qstream/image.hpp"
#include "qstream/sensor_model.hpp"
#include "qstream/streaming_sketch.hpp"

namespace qstream {

// ---------------------------------------------------------------------------
// Response inversion
// ---------------------------------------------------------------------------

/// Maximum-likelihood flux for an observed firing rate: -ln(1 - p) - d,
/// floored at zero. p = 1 maps to +inf.
[[nodiscard]] inline double invert_response(double p_hat, double dark_per_frame = 0.0) {
  if (!(p_hat >= 0.0 && p_hat <= 1.0)) throw DomainError("invert_response: p must lie in [0, 1]");
  if (!(dark_per_frame >= 0.0)) throw DomainError("invert_response: dark rate must be >= 0");
  return std::max(0.0, -std::log1p(-p_hat) - dark_per_frame);
}

struct InvertedFlux {
  double lambda = 0.0;
  bool saturated = false;
};

/// Inversion with a bit budget: firing rates at or above 1 - 1/(2N) are
/// flagged saturated and inverted at that ceiling.
[[nodiscard]] inline InvertedFlux invert_response(double p_hat, double dark_per_frame,
                                                  double n_effective) {
  if (!(n_effective >= 1.0)) throw std::invalid_argument("invert_response: N must be >= 1");
  const double ceiling = 1.0 - 1.0 / (2.0 * n_effective);
  if (p_hat >= ceiling) {
    if (p_hat > 1.0) throw DomainError("invert_response: p must lie in [0, 1]");
    return {invert_response(ceiling, dark_per_frame), true};
  }
  return {invert_response(p_hat, dark_per_frame), false};
}

struct FluxEstimate {
  Image<double> lambda;
  double n_frames_used = 0.0;
  Image<std::uint8_t> saturated;
  /// Stack channel chosen per pixel (fusion only).
  std::optional<Image<std::uint8_t>> channel_used;

  [[nodiscard]] std::size_t saturated_count() const {
    std::size_t n = 0;
    for (auto s : saturated.pixels()) n += s;
    return n;
  }
};

/// Inverts a per-pixel firing-rate image measured over `n_effective` frames.
[[nodiscard]] inline FluxEstimate naive_integration(const Image<double>& p_hat,
                                                    double n_effective,
                                                    double dark_per_frame = 0.0) {
  if (p_hat.empty()) throw std::invalid_argument("naive_integration: empty input");
  if (!(n_effective >= 1.0)) throw std::invalid_argument("naive_integration: N must be >= 1");
  FluxEstimate est{Image<double>(p_hat.width(), p_hat.height()), n_effective,
                   Image<std::uint8_t>(p_hat.width(), p_hat.height()), std::nullopt};
  for (std::size_t i = 0; i < p_hat.size(); ++i) {
    const auto inv = invert_response(p_hat[i], dark_per_frame, n_effective);
    est.lambda[i] = inv.lambda;
    est.saturated[i] = inv.saturated ? 1 : 0;
  }
  return est;
}

/// Averages N bitplanes and inverts the response.
[[nodiscard]] inline FluxEstimate naive_integration(std::span<const BitPlane> frames,
                                                    double dark_per_frame = 0.0) {
  if (frames.empty()) throw std::invalid_argument("naive_integration: no bitplanes");
  const std::size_t w = frames.front().width;
  const std::size_t h = frames.front().height;
  std::vector<std::uint32_t> counts(w * h, 0);
  for (const auto& f : frames) {
    if (f.width != w || f.height != h) throw ShapeError("naive_integration: bitplane shapes differ");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += f.bits[i];
  }
  const double n = static_cast<double>(frames.size());
  Image<double> p(w, h);
  for (std::size_t i = 0; i < counts.size(); ++i) p[i] = counts[i] / n;
  return naive_integration(p, n, dark_per_frame);
}

/// Treats one sketch channel as a firing-rate estimate over its window.
[[nodiscard]] inline FluxEstimate naive_integration(const ExposureStack& stack, std::size_t channel,
                                                    double dark_per_frame = 0.0) {
  if (channel >= stack.channels()) throw std::out_of_range("naive_integration: no such channel");
  Image<double> p(stack.width, stack.height);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = stack.value(channel, i);
  return naive_integration(p, stack.windows[channel], dark_per_frame);
}

inline constexpr double kDefaultSaturationThreshold = 0.95;

/// Classical multi-exposure baseline: per pixel, the longest window whose
/// value is below `sat_threshold`, falling back to the shortest window.
[[nodiscard]] inline FluxEstimate fuse_longest_unsaturated(
    const ExposureStack& stack, double sat_threshold = kDefaultSaturationThreshold,
    double dark_per_frame = 0.0) {
  if (stack.channels() == 0) throw std::invalid_argument("fuse: stack has no channels");
  const std::size_t c = stack.channels();
  FluxEstimate est{Image<double>(stack.width, stack.height), stack.windows.front(),
                   Image<std::uint8_t>(stack.width, stack.height),
                   Image<std::uint8_t>(stack.width, stack.height)};
  for (std::size_t i = 0; i < stack.pixel_count(); ++i) {
    std::size_t pick = c - 1;
    for (std::size_t k = 0; k < c; ++k) {
      if (stack.value(k, i) < sat_threshold) {
        pick = k;
        break;
      }
    }
    const auto inv = invert_response(std::clamp(stack.value(pick, i), 0.0, 1.0), dark_per_frame,
                                     stack.windows[pick]);
    est.lambda[i] = inv.lambda;
    est.saturated[i] = inv.saturated ? 1 : 0;
    (*est.channel_used)[i] = static_cast<std::uint8_t>(pick);
  }
  return est;
}

// ---------------------------------------------------------------------------
// Tone mapping and training loss
// ---------------------------------------------------------------------------

struct ToneMapConfig {
  double mu = 1e3;
  double zeta = 1e-7;
};

struct LossConfig {
  double sigma = 0.1;
};

/// log(ReLU(1 + mu x) + zeta) / log(1 + mu)
[[nodiscard]] inline double mu_law(double x, const ToneMapConfig& cfg = {}) {
  return std::log(std::max(0.0, 1.0 + cfg.mu * x) + cfg.zeta) / std::log1p(cfg.mu);
}

[[nodiscard]] inline double mu_law_derivative(double x, const ToneMapConfig& cfg = {}) {
  const double arg = 1.0 + cfg.mu * x;
  if (arg <= 0.0) return 0.0;
  return cfg.mu / ((arg + cfg.zeta) * std::log1p(cfg.mu));
}

[[nodiscard]] inline Image<double> mu_law(const Image<double>& img, const ToneMapConfig& cfg = {}) {
  Image<double> out(img.width(), img.height());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = mu_law(img[i], cfg);
  return out;
}

namespace detail {

// Mean |d/dx a - d/dx b| with forward differences; the last column/row uses a
// replicated neighbour, so its gradient is zero.
inline double gradient_l1(const Image<double>& a, const Image<double>& b, bool along_x) {
  const std::size_t w = a.width();
  const std::size_t h = a.height();
  double sum = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t nx = along_x ? std::min(x + 1, w - 1) : x;
      const std::size_t ny = along_x ? y : std::min(y + 1, h - 1);
      const double ga = a(nx, ny) - a(x, y);
      const double gb = b(nx, ny) - b(x, y);
      sum += std::abs(ga - gb);
    }
  }
  return sum / static_cast<double>(w * h);
}

}  // namespace detail

/// L1 plus sigma-weighted L1 on x/y image gradients, on images that are
/// already tone mapped.
[[nodiscard]] inline double tone_mapped_loss(const Image<double>& pred, const Image<double>& gt,
                                             const LossConfig& cfg = {}) {
  require_same_shape(pred, gt, "loss");
  if (pred.empty()) throw ShapeError("loss: empty images");
  double l1 = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) l1 += std::abs(pred[i] - gt[i]);
  l1 /= static_cast<double>(pred.size());
  return l1 + cfg.sigma * (detail::gradient_l1(pred, gt, true) + detail::gradient_l1(pred, gt, false));
}

/// Training loss on linear flux images: both are mu-law mapped first.
[[nodiscard]] inline double reconstruction_loss(const Image<double>& pred, const Image<double>& gt,
                                       const LossConfig& loss = {}, const ToneMapConfig& tone = {}) {
  require_same_shape(pred, gt, "loss");
  return tone_mapped_loss(mu_law(pred, tone), mu_law(gt, tone), loss);
}

// ---------------------------------------------------------------------------
// Image quality
// ---------------------------------------------------------------------------

inline constexpr double kPsnrCapDb = 99.0;

[[nodiscard]] inline double psnr(const Image<double>& pred, const Image<double>& gt, double peak) {
  require_same_shape(pred, gt, "psnr");
  if (!(peak > 0.0)) throw DomainError("psnr: peak must be > 0");
  if (pred.empty()) throw ShapeError("psnr: empty images");
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.size());
  if (mse == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse));
}

struct SsimConfig {
  double k1 = 0.01;
  double k2 = 0.03;
  std::size_t window = 11;
  double gaussian_sigma = 1.5;
  double data_range = 1.0;
};

/// Mean structural similarity over all fully-covered Gaussian windows. The
/// window shrinks to the largest odd size that fits on small images.
[[nodiscard]] inline double ssim(const Image<double>& a, const Image<double>& b,
                                 const SsimConfig& cfg = {}) {
  require_same_shape(a, b, "ssim");
  if (a.empty()) throw ShapeError("ssim: empty images");
  std::size_t win = std::min({cfg.window, a.width(), a.height()});
  if (win % 2 == 0) --win;
  const std::size_t r = win / 2;

  std::vector<double> kernel(win);
  double ksum = 0.0;
  for (std::size_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(r);
    kernel[i] = std::exp(-d * d / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma));
    ksum += kernel[i];
  }
  for (auto& k : kernel) k /= ksum;

  const double c1 = (cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range);
  const double c2 = (cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = r; y + r < a.height(); ++y) {
    for (std::size_t x = r; x + r < a.width(); ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t j = 0; j < win; ++j) {
        for (std::size_t i = 0; i < win; ++i) {
          const double wgt = kernel[i] * kernel[j];
          const double va = a(x + i - r, y + j - r);
          const double vb = b(x + i - r, y + j - r);
          ma += wgt * va;
          mb += wgt * vb;
          saa += wgt * va * va;
          sbb += wgt * vb * vb;
          sab += wgt * va * vb;
        }
      }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace qstream
