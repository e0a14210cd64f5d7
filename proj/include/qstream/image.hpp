#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qstream/errors.hpp"

namespace qstream {

/// Dense row-major single-channel image.
template <class T>
class Image {
public:
  using value_type = T;

  Image() = default;

  Image(std::size_t width, std::size_t height, T fill = T{})
      : width_(width), height_(height), data_(width * height, fill) {}

  Image(std::size_t width, std::size_t height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != width_ * height_) {
      throw ShapeError("image buffer holds " + std::to_string(data_.size()) +
                       " values, expected " + std::to_string(width_ * height_));
    }
  }

  [[nodiscard]] std::size_t width() const noexcept { return width_; }
  [[nodiscard]] std::size_t height() const noexcept { return height_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] T& operator()(std::size_t x, std::size_t y) { return data_[y * width_ + x]; }
  [[nodiscard]] const T& operator()(std::size_t x, std::size_t y) const {
    return data_[y * width_ + x];
  }
  [[nodiscard]] T& operator[](std::size_t i) { return data_[i]; }
  [[nodiscard]] const T& operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] std::span<T> pixels() noexcept { return data_; }
  [[nodiscard]] std::span<const T> pixels() const noexcept { return data_; }
  [[nodiscard]] const std::vector<T>& values() const noexcept { return data_; }

  [[nodiscard]] bool same_shape(const Image& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  template <class U>
  [[nodiscard]] bool same_shape(const Image<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  [[nodiscard]] T max_value() const { return *std::max_element(data_.begin(), data_.end()); }

  friend bool operator==(const Image&, const Image&) = default;

private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<T> data_;
};

template <class A, class B>
void require_same_shape(const Image<A>& a, const Image<B>& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw ShapeError(std::string(what) + ": shape " + std::to_string(a.width()) + "x" +
                     std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                     std::to_string(b.height()));
  }
}

/// Per-pixel photon rate in photons/frame. Values are finite and >= 0.
class FluxFrame : public Image<double> {
public:
  FluxFrame() = default;

  FluxFrame(std::size_t width, std::size_t height, double fill = 0.0)
      : Image<double>(width, height, fill) {
    validate();
  }

  FluxFrame(std::size_t width, std::size_t height, std::vector<double> data)
      : Image<double>(width, height, std::move(data)) {
    validate();
  }

  explicit FluxFrame(Image<double> image) : Image<double>(std::move(image)) { validate(); }

  void validate() const {
    if (width() == 0 || height() == 0) throw ShapeError("flux frame has zero extent");
    for (double v : pixels()) {
      if (!std::isfinite(v) || v < 0.0) {
        throw DomainError("flux values must be finite and non-negative");
      }
    }
  }
};

}  // namespace qstream
