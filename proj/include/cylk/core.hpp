#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "cylk/error.hpp"

namespace cylk {

/// Dense H x W x C grid of doubles, row-major with channels innermost.
/// Holds raw images (C = 1) as well as learned feature maps.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int channels, double fill = 0.0);
  FeatureMap(int height, int width, int channels, std::vector<double> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(int row, int col, int ch = 0) const noexcept {
    return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
  }
  double& operator()(int row, int col, int ch = 0) noexcept { return data_[index(row, col, ch)]; }
  double operator()(int row, int col, int ch = 0) const noexcept { return data_[index(row, col, ch)]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool same_shape(const FeatureMap& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool all_finite() const noexcept;

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Sub-pixel position. x runs along columns, y along rows; (0, 0) is the
/// center of the top-left pixel.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend bool operator==(const Point&, const Point&) = default;
};

bool is_finite(Point p) noexcept;
void require_finite(Point p, const char* what);

struct Offset {
  int dx = 0;
  int dy = 0;
};

/// Square (2r+1) x (2r+1) sampling window. Offsets are enumerated row-major:
/// dy outer from -r to r, dx inner from -r to r. That order fixes the layout
/// of every patch vector and patch Jacobian.
class PatchStencil {
 public:
  explicit PatchStencil(int radius = 7);

  int radius() const noexcept { return radius_; }
  int side() const noexcept { return 2 * radius_ + 1; }
  std::size_t count() const noexcept { return offsets_.size(); }
  std::span<const Offset> offsets() const noexcept { return offsets_; }

 private:
  int radius_;
  std::vector<Offset> offsets_;
};

/// Values at each stencil offset, channel-major within an offset:
/// values[k * C + c].
struct Patch {
  int channels = 1;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
};

/// [C * (2r+1)^2] x 2 matrix stored row-major: entry (k, d) at data[2k + d],
/// d = 0 for d/dx and d = 1 for d/dy.
struct PatchJacobian {
  std::vector<double> data;

  std::size_t rows() const noexcept { return data.size() / 2; }
  double operator()(std::size_t row, int col) const noexcept { return data[2 * row + col]; }
  double& operator()(std::size_t row, int col) noexcept { return data[2 * row + col]; }
};

/// Bilinear weights and corner indices for one sample position, after the
/// position has been replicate-clamped into [0, W-1] x [0, H-1].
struct BilinearTap {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double fx = 0.0, fy = 0.0;
  // false when the coordinate was clamped; the sample is then constant in it
  bool free_x = true, free_y = true;
};

BilinearTap bilinear_tap(int height, int width, Point p);

std::vector<double> bilinear_sample(const FeatureMap& map, Point p);

/// Writes the C interpolated channel values at p into out.
void bilinear_sample_into(const FeatureMap& map, Point p, std::span<double> out);

/// Derivative of the bilinear interpolant with respect to the sample position,
/// out_dx and out_dy each of length C. Zero along a clamped axis.
void bilinear_position_grad(const FeatureMap& map, Point p, std::span<double> out_dx,
                            std::span<double> out_dy);

/// Adjoint of bilinear_sample_into: adds grad[c] spread with the bilinear
/// weights of p into the four surrounding cells of target.
void bilinear_scatter(FeatureMap& target, Point p, std::span<const double> grad);

Patch extract_patch(const FeatureMap& map, Point center, const PatchStencil& stencil);

using GradientMaps = std::pair<FeatureMap, FeatureMap>;

/// Per-channel central differences with replicate boundary:
/// gx(x, y) = (F(x+1, y) - F(x-1, y)) / 2, indices clamped to the grid.
GradientMaps map_gradient(const FeatureMap& map);

/// Adjoint of map_gradient: given dL/dgx and dL/dgy, returns dL/dF.
FeatureMap map_gradient_adjoint(const FeatureMap& d_gx, const FeatureMap& d_gy);

PatchJacobian patch_jacobian(const GradientMaps& grad_maps, Point center,
                             const PatchStencil& stencil);

}  // namespace cylk
