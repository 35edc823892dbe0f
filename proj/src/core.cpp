#include "cylk/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cylk {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidPoint: return "InvalidPoint";
    case ErrorCode::MapTooSmall: return "MapTooSmall";
    case ErrorCode::DegeneratePatch: return "DegeneratePatch";
    case ErrorCode::NonFiniteUpdate: return "NonFiniteUpdate";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateLandmark: return "DuplicateLandmark";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

namespace {

void check_dims(int height, int width, int channels) {
  if (height < 1 || width < 1 || channels < 1) {
    throw Error(ErrorCode::ShapeMismatch,
                "feature map dimensions must be positive, got " + std::to_string(height) + "x" +
                    std::to_string(width) + "x" + std::to_string(channels));
  }
}

}  // namespace

FeatureMap::FeatureMap(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  check_dims(height, width, channels);
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

FeatureMap::FeatureMap(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  check_dims(height, width, channels);
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw Error(ErrorCode::ShapeMismatch, "feature map data length does not match dimensions");
  }
}

bool FeatureMap::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool is_finite(Point p) noexcept { return std::isfinite(p.x) && std::isfinite(p.y); }

void require_finite(Point p, const char* what) {
  if (!is_finite(p)) {
    throw Error(ErrorCode::InvalidPoint, std::string(what) + " has a non-finite coordinate");
  }
}

PatchStencil::PatchStencil(int radius) : radius_(radius) {
  if (radius < 1) {
    throw Error(ErrorCode::InvalidSpec, "stencil radius must be >= 1");
  }
  offsets_.reserve(static_cast<std::size_t>(side()) * side());
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      offsets_.push_back({dx, dy});
    }
  }
}

namespace {

// Splits one clamped coordinate into a base cell and fraction such that
// base + 1 stays in range.
void split_axis(double v, int extent, int& lo, int& hi, double& frac, bool& free) {
  const double max_v = static_cast<double>(extent - 1);
  free = v >= 0.0 && v <= max_v;
  const double c = std::clamp(v, 0.0, max_v);
  if (extent == 1) {
    lo = hi = 0;
    frac = 0.0;
    free = false;
    return;
  }
  lo = std::min(static_cast<int>(std::floor(c)), extent - 2);
  hi = lo + 1;
  frac = c - lo;
}

}  // namespace

BilinearTap bilinear_tap(int height, int width, Point p) {
  require_finite(p, "sample point");
  BilinearTap t;
  split_axis(p.x, width, t.x0, t.x1, t.fx, t.free_x);
  split_axis(p.y, height, t.y0, t.y1, t.fy, t.free_y);
  return t;
}

void bilinear_sample_into(const FeatureMap& map, Point p, std::span<double> out) {
  const BilinearTap t = bilinear_tap(map.height(), map.width(), p);
  const double w00 = (1.0 - t.fx) * (1.0 - t.fy);
  const double w10 = t.fx * (1.0 - t.fy);
  const double w01 = (1.0 - t.fx) * t.fy;
  const double w11 = t.fx * t.fy;
  const int channels = map.channels();
  const double* v00 = &map.values()[map.index(t.y0, t.x0)];
  const double* v10 = &map.values()[map.index(t.y0, t.x1)];
  const double* v01 = &map.values()[map.index(t.y1, t.x0)];
  const double* v11 = &map.values()[map.index(t.y1, t.x1)];
  for (int c = 0; c < channels; ++c) {
    out[c] = w00 * v00[c] + w10 * v10[c] + w01 * v01[c] + w11 * v11[c];
  }
}

std::vector<double> bilinear_sample(const FeatureMap& map, Point p) {
  std::vector<double> out(map.channels());
  bilinear_sample_into(map, p, out);
  return out;
}

void bilinear_position_grad(const FeatureMap& map, Point p, std::span<double> out_dx,
                            std::span<double> out_dy) {
  const BilinearTap t = bilinear_tap(map.height(), map.width(), p);
  const int channels = map.channels();
  const double* v00 = &map.values()[map.index(t.y0, t.x0)];
  const double* v10 = &map.values()[map.index(t.y0, t.x1)];
  const double* v01 = &map.values()[map.index(t.y1, t.x0)];
  const double* v11 = &map.values()[map.index(t.y1, t.x1)];
  for (int c = 0; c < channels; ++c) {
    out_dx[c] = t.free_x ? (1.0 - t.fy) * (v10[c] - v00[c]) + t.fy * (v11[c] - v01[c]) : 0.0;
    out_dy[c] = t.free_y ? (1.0 - t.fx) * (v01[c] - v00[c]) + t.fx * (v11[c] - v10[c]) : 0.0;
  }
}

void bilinear_scatter(FeatureMap& target, Point p, std::span<const double> grad) {
  const BilinearTap t = bilinear_tap(target.height(), target.width(), p);
  const double w00 = (1.0 - t.fx) * (1.0 - t.fy);
  const double w10 = t.fx * (1.0 - t.fy);
  const double w01 = (1.0 - t.fx) * t.fy;
  const double w11 = t.fx * t.fy;
  const int channels = target.channels();
  double* v00 = &target.values()[target.index(t.y0, t.x0)];
  double* v10 = &target.values()[target.index(t.y0, t.x1)];
  double* v01 = &target.values()[target.index(t.y1, t.x0)];
  double* v11 = &target.values()[target.index(t.y1, t.x1)];
  for (int c = 0; c < channels; ++c) {
    v00[c] += w00 * grad[c];
    v10[c] += w10 * grad[c];
    v01[c] += w01 * grad[c];
    v11[c] += w11 * grad[c];
  }
}

Patch extract_patch(const FeatureMap& map, Point center, const PatchStencil& stencil) {
  require_finite(center, "patch center");
  const int channels = map.channels();
  Patch patch;
  patch.channels = channels;
  patch.values.resize(stencil.count() * channels);
  std::size_t k = 0;
  for (const Offset& o : stencil.offsets()) {
    const Point at{center.x + o.dx, center.y + o.dy};
    bilinear_sample_into(map, at, std::span<double>(patch.values).subspan(k * channels, channels));
    ++k;
  }
  return patch;
}

GradientMaps map_gradient(const FeatureMap& map) {
  const int h = map.height();
  const int w = map.width();
  const int channels = map.channels();
  if (h < 3 || w < 3) {
    throw Error(ErrorCode::MapTooSmall, "gradient needs at least a 3x3 map");
  }
  FeatureMap gx(h, w, channels);
  FeatureMap gy(h, w, channels);
  for (int y = 0; y < h; ++y) {
    const int ym = std::max(y - 1, 0);
    const int yp = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(x - 1, 0);
      const int xp = std::min(x + 1, w - 1);
      for (int c = 0; c < channels; ++c) {
        gx(y, x, c) = 0.5 * (map(y, xp, c) - map(y, xm, c));
        gy(y, x, c) = 0.5 * (map(yp, x, c) - map(ym, x, c));
      }
    }
  }
  return {std::move(gx), std::move(gy)};
}

FeatureMap map_gradient_adjoint(const FeatureMap& d_gx, const FeatureMap& d_gy) {
  if (!d_gx.same_shape(d_gy)) {
    throw Error(ErrorCode::ShapeMismatch, "gradient adjoint inputs differ in shape");
  }
  const int h = d_gx.height();
  const int w = d_gx.width();
  const int channels = d_gx.channels();
  FeatureMap out(h, w, channels);
  for (int y = 0; y < h; ++y) {
    const int ym = std::max(y - 1, 0);
    const int yp = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(x - 1, 0);
      const int xp = std::min(x + 1, w - 1);
      for (int c = 0; c < channels; ++c) {
        const double gx = 0.5 * d_gx(y, x, c);
        const double gy = 0.5 * d_gy(y, x, c);
        out(y, xp, c) += gx;
        out(y, xm, c) -= gx;
        out(yp, x, c) += gy;
        out(ym, x, c) -= gy;
      }
    }
  }
  return out;
}

PatchJacobian patch_jacobian(const GradientMaps& grad_maps, Point center,
                             const PatchStencil& stencil) {
  require_finite(center, "patch center");
  const auto& [gx, gy] = grad_maps;
  if (!gx.same_shape(gy)) {
    throw Error(ErrorCode::ShapeMismatch, "gradient maps differ in shape");
  }
  const int channels = gx.channels();
  PatchJacobian jac;
  jac.data.resize(stencil.count() * channels * 2);
  std::vector<double> sx(channels), sy(channels);
  std::size_t k = 0;
  for (const Offset& o : stencil.offsets()) {
    const Point at{center.x + o.dx, center.y + o.dy};
    bilinear_sample_into(gx, at, sx);
    bilinear_sample_into(gy, at, sy);
    for (int c = 0; c < channels; ++c) {
      jac(k * channels + c, 0) = sx[c];
      jac(k * channels + c, 1) = sy[c];
    }
    ++k;
  }
  return jac;
}

}  // namespace cylk
