#pragma once

// Discrete curve geometry and the finite-difference operators shared by the
// generator, the losses and the error maps.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mtcurv/field.hpp"

namespace mtcurv::geometry {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(double s, Point p) { return {s * p.x, s * p.y}; }
  friend bool operator==(Point, Point) = default;
};

double distance(Point a, Point b);

/// Triangle areas below this (px^2) count as collinear.
inline constexpr double kCollinearArea = 1e-12;

/// Filament centreline in pixel coordinates with a per-vertex intensity
/// weight in [0, 1]. Pixel (row i, col j) has its centre at (x=j, y=i).
class Polyline {
 public:
  Polyline() = default;
  /// Validates: >= 2 vertices, finite coordinates, distinct consecutive
  /// vertices, weights in [0, 1]. Empty weights mean all 1.
  Polyline(std::vector<Point> vertices, std::vector<double> weights = {});

  std::span<const Point> vertices() const { return vertices_; }
  std::span<const double> weights() const { return weights_; }
  std::size_t size() const { return vertices_.size(); }
  const Point& operator[](std::size_t i) const { return vertices_[i]; }

  /// Cumulative arc length at every vertex (first entry 0).
  std::vector<double> arc_lengths() const;
  double length() const;

  bool operator==(const Polyline&) const = default;

 private:
  std::vector<Point> vertices_;
  std::vector<double> weights_;
};

/// Menger curvature 4*Area / (|ab| |bc| |ca|), in 1/px. Throws DomainError
/// when two points coincide; returns 0 for (near-)collinear points.
double three_point_curvature(Point prev, Point mid, Point next);

/// Interior vertex k gets three_point_curvature(v[k-1], v[k], v[k+1]); the
/// two endpoints copy their neighbour. Needs >= 3 vertices.
std::vector<double> polyline_curvatures(const Polyline& line);

// ---------------------------------------------------------------------------
// Plane operators. The span versions work on one H x W plane and are what
// the differentiable losses call; adjoints are provided for backprop.

/// Forward differences, zero in the last column (dx) / last row (dy).
template <typename T>
void grad_xy(std::size_t height, std::size_t width, std::span<const T> f, std::span<T> dx,
             std::span<T> dy);

/// out += D^T gx + D^T gy for the operator above.
template <typename T>
void grad_xy_adjoint(std::size_t height, std::size_t width, std::span<const T> gx,
                     std::span<const T> gy, std::span<T> out);

/// 5-point Laplacian with replicate padding.
template <typename T>
void laplacian(std::size_t height, std::size_t width, std::span<const T> f, std::span<T> out);

/// out += L^T g for the operator above.
template <typename T>
void laplacian_adjoint(std::size_t height, std::size_t width, std::span<const T> g,
                       std::span<T> out);

/// Field-level wrappers with the documented minimum sizes (2x2 / 3x3).
std::pair<ScalarField, ScalarField> grad_xy(const ScalarField& f);
ScalarField laplacian(const ScalarField& f);

}  // namespace mtcurv::geometry
