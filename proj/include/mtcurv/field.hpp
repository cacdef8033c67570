#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtcurv/error.hpp"

namespace mtcurv {

/// Row-major H x W grid of scalars.
template <typename T>
class Field {
 public:
  Field() = default;
  Field(std::size_t height, std::size_t width, T fill = T{0})
      : height_(height), width_(width), values_(height * width, fill) {
    if (height == 0 || width == 0) throw DomainError("field dimensions must be positive");
  }
  Field(std::size_t height, std::size_t width, std::vector<T> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (height == 0 || width == 0) throw DomainError("field dimensions must be positive");
    if (values_.size() != height * width)
      throw DomainError("field value count " + std::to_string(values_.size()) +
                        " does not match " + std::to_string(height) + "x" +
                        std::to_string(width));
  }

  template <typename U>
  static Field convert(const Field<U>& other) {
    std::vector<T> v(other.values().begin(), other.values().end());
    return Field(other.height(), other.width(), std::move(v));
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T& operator()(std::size_t i, std::size_t j) { return values_[i * width_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return values_[i * width_ + j]; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }

  bool same_shape(const Field& o) const { return height_ == o.height_ && width_ == o.width_; }

  bool all_finite() const {
    for (const T& v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Field& o) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> values_;
};

using ScalarField = Field<double>;
/// Normalised fluorescence intensity in [0, 1].
using Micrograph = Field<float>;
/// Normalised curvature intensity in [0, 1], background 0.
using CurvatureMap = Field<float>;

}  // namespace mtcurv
