#include "mtcurv/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mtcurv::geometry {

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

Polyline::Polyline(std::vector<Point> vertices, std::vector<double> weights)
    : vertices_(std::move(vertices)), weights_(std::move(weights)) {
  if (vertices_.size() < 2) throw DomainError("polyline needs at least 2 vertices");
  if (weights_.empty()) weights_.assign(vertices_.size(), 1.0);
  if (weights_.size() != vertices_.size())
    throw DomainError("polyline weight count does not match vertex count");
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    const Point& p = vertices_[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw DomainError("polyline vertex " + std::to_string(i) + " is not finite");
    if (i > 0 && p == vertices_[i - 1])
      throw DomainError("polyline vertices " + std::to_string(i - 1) + " and " +
                        std::to_string(i) + " coincide");
    if (!(weights_[i] >= 0.0 && weights_[i] <= 1.0))
      throw DomainError("polyline weight " + std::to_string(i) + " outside [0, 1]");
  }
}

std::vector<double> Polyline::arc_lengths() const {
  std::vector<double> s(vertices_.size(), 0.0);
  for (std::size_t i = 1; i < vertices_.size(); ++i)
    s[i] = s[i - 1] + distance(vertices_[i - 1], vertices_[i]);
  return s;
}

double Polyline::length() const { return arc_lengths().back(); }

double three_point_curvature(Point prev, Point mid, Point next) {
  const double a = distance(prev, mid);
  const double b = distance(mid, next);
  const double c = distance(prev, next);
  if (a == 0.0 || b == 0.0 || c == 0.0)
    throw DomainError("three_point_curvature: coincident points");
  const double cross = (mid.x - prev.x) * (next.y - prev.y) - (mid.y - prev.y) * (next.x - prev.x);
  const double area = 0.5 * std::abs(cross);
  if (area < kCollinearArea) return 0.0;
  return 4.0 * area / (a * b * c);
}

std::vector<double> polyline_curvatures(const Polyline& line) {
  const std::size_t n = line.size();
  if (n < 3) throw DomainError("polyline_curvatures needs at least 3 vertices");
  std::vector<double> k(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i)
    k[i] = three_point_curvature(line[i - 1], line[i], line[i + 1]);
  k.front() = k[1];
  k.back() = k[n - 2];
  return k;
}

template <typename T>
void grad_xy(std::size_t height, std::size_t width, std::span<const T> f, std::span<T> dx,
             std::span<T> dy) {
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t p = i * width + j;
      dx[p] = j + 1 < width ? f[p + 1] - f[p] : T{0};
      dy[p] = i + 1 < height ? f[p + width] - f[p] : T{0};
    }
  }
}

template <typename T>
void grad_xy_adjoint(std::size_t height, std::size_t width, std::span<const T> gx,
                     std::span<const T> gy, std::span<T> out) {
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t p = i * width + j;
      if (j + 1 < width) {
        out[p + 1] += gx[p];
        out[p] -= gx[p];
      }
      if (i + 1 < height) {
        out[p + width] += gy[p];
        out[p] -= gy[p];
      }
    }
  }
}

namespace {
inline std::size_t clamp_dec(std::size_t i) { return i == 0 ? 0 : i - 1; }
inline std::size_t clamp_inc(std::size_t i, std::size_t n) { return i + 1 < n ? i + 1 : i; }
}  // namespace

template <typename T>
void laplacian(std::size_t height, std::size_t width, std::span<const T> f, std::span<T> out) {
  for (std::size_t i = 0; i < height; ++i) {
    const std::size_t up = clamp_dec(i) * width, down = clamp_inc(i, height) * width;
    const std::size_t row = i * width;
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t left = clamp_dec(j), right = clamp_inc(j, width);
      out[row + j] = f[up + j] + f[down + j] + f[row + left] + f[row + right] - 4 * f[row + j];
    }
  }
}

template <typename T>
void laplacian_adjoint(std::size_t height, std::size_t width, std::span<const T> g,
                       std::span<T> out) {
  for (std::size_t i = 0; i < height; ++i) {
    const std::size_t up = clamp_dec(i) * width, down = clamp_inc(i, height) * width;
    const std::size_t row = i * width;
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t left = clamp_dec(j), right = clamp_inc(j, width);
      const T v = g[row + j];
      out[up + j] += v;
      out[down + j] += v;
      out[row + left] += v;
      out[row + right] += v;
      out[row + j] -= 4 * v;
    }
  }
}

std::pair<ScalarField, ScalarField> grad_xy(const ScalarField& f) {
  if (f.height() < 2 || f.width() < 2) throw DomainError("grad_xy needs a field of at least 2x2");
  ScalarField dx(f.height(), f.width()), dy(f.height(), f.width());
  grad_xy<double>(f.height(), f.width(), f.values(), dx.values(), dy.values());
  return {std::move(dx), std::move(dy)};
}

ScalarField laplacian(const ScalarField& f) {
  if (f.height() < 3 || f.width() < 3)
    throw DomainError("laplacian needs a field of at least 3x3");
  ScalarField out(f.height(), f.width());
  laplacian<double>(f.height(), f.width(), f.values(), out.values());
  return out;
}

template void grad_xy<float>(std::size_t, std::size_t, std::span<const float>, std::span<float>,
                             std::span<float>);
template void grad_xy<double>(std::size_t, std::size_t, std::span<const double>,
                              std::span<double>, std::span<double>);
template void grad_xy_adjoint<float>(std::size_t, std::size_t, std::span<const float>,
                                     std::span<const float>, std::span<float>);
template void grad_xy_adjoint<double>(std::size_t, std::size_t, std::span<const double>,
                                      std::span<const double>, std::span<double>);
template void laplacian<float>(std::size_t, std::size_t, std::span<const float>,
                               std::span<float>);
template void laplacian<double>(std::size_t, std::size_t, std::span<const double>,
                                std::span<double>);
template void laplacian_adjoint<float>(std::size_t, std::size_t, std::span<const float>,
                                       std::span<float>);
template void laplacian_adjoint<double>(std::size_t, std::size_t, std::span<const double>,
                                        std::span<double>);

}  // namespace mtcurv::geometry
