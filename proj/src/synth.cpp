#include "cylk/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cylk/trainer.hpp"

namespace cylk {

namespace {

void normalize_unit(FeatureMap& map) {
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  const double min_v = *lo;
  const double range = *hi - *lo;
  for (double& v : map.values()) v = range > 0.0 ? (v - min_v) / range : 0.5;
}

FeatureMap render_blobs(int height, int width, const TextureSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(0.0, width - 1.0);
  std::uniform_real_distribution<double> uy(0.0, height - 1.0);
  std::uniform_real_distribution<double> usigma(spec.sigma_min, spec.sigma_max);
  std::uniform_real_distribution<double> uamp(-1.0, 1.0);
  FeatureMap map(height, width, 1);
  for (int b = 0; b < spec.blob_count; ++b) {
    const double cx = ux(rng);
    const double cy = uy(rng);
    const double sigma = usigma(rng);
    const double amp = uamp(rng);
    const int reach = static_cast<int>(std::ceil(4.0 * sigma));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = std::max(0, static_cast<int>(cy) - reach);
         y <= std::min(height - 1, static_cast<int>(cy) + reach); ++y) {
      for (int x = std::max(0, static_cast<int>(cx) - reach);
           x <= std::min(width - 1, static_cast<int>(cx) + reach); ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        map(y, x) += amp * std::exp(-d2 * inv);
      }
    }
  }
  return map;
}

FeatureMap gaussian_blur(const FeatureMap& src, double sigma) {
  const int reach = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * reach + 1);
  double sum = 0.0;
  for (int i = -reach; i <= reach; ++i) {
    kernel[i + reach] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + reach];
  }
  for (double& k : kernel) k /= sum;
  const int h = src.height();
  const int w = src.width();
  FeatureMap tmp(h, w, 1);
  FeatureMap out(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -reach; i <= reach; ++i) acc += kernel[i + reach] * src(y, std::clamp(x + i, 0, w - 1));
      tmp(y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -reach; i <= reach; ++i) acc += kernel[i + reach] * tmp(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = acc;
    }
  return out;
}

}  // namespace

FeatureMap render_texture(int height, int width, const TextureSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FeatureMap map;
  if (spec.kind == TextureKind::GaussianBlobs) {
    map = render_blobs(height, width, spec, rng);
  } else {
    std::normal_distribution<double> gauss(0.0, 1.0);
    FeatureMap noise(height, width, 1);
    for (double& v : noise.values()) v = gauss(rng);
    map = gaussian_blur(noise, spec.noise_cutoff);
  }
  normalize_unit(map);
  return map;
}

void SynthSpec::validate() const {
  if (width < 8 || height < 8) throw Error(ErrorCode::InvalidSpec, "synthetic frames must be at least 8x8");
  if (frames < 2) throw Error(ErrorCode::InvalidSpec, "a sequence needs at least 2 frames");
  if (!(gain_lo > 0.0) || gain_hi < gain_lo) throw Error(ErrorCode::InvalidSpec, "gain range must be positive and ordered");
  if (bias_hi < bias_lo) throw Error(ErrorCode::InvalidSpec, "bias range must be ordered");
  if (noise_std < 0.0 || jitter_std < 0.0) throw Error(ErrorCode::InvalidSpec, "std deviations must be >= 0");
  if (!(max_step > 0.0)) throw Error(ErrorCode::InvalidSpec, "max_step must be > 0");
  if (texture.sigma_min <= 0.0 || texture.sigma_max < texture.sigma_min) {
    throw Error(ErrorCode::InvalidSpec, "texture sigma range must be positive and ordered");
  }
  if (landmarks < 0 || stencil_radius < 1) throw Error(ErrorCode::InvalidSpec, "bad landmark settings");
  if (occlusion && occlusion->size < 1) throw Error(ErrorCode::InvalidSpec, "occluder size must be >= 1");
}

SynthSequence generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SynthSequence seq;
  seq.transforms.resize(spec.frames);
  Point shift{0.0, 0.0};
  for (int t = 0; t < spec.frames; ++t) {
    if (t > 0) {
      Point step{spec.velocity.x + spec.jitter_std * gauss(rng),
                 spec.velocity.y + spec.jitter_std * gauss(rng)};
      const double len = std::hypot(step.x, step.y);
      if (len > spec.max_step) {
        step.x *= spec.max_step / len;
        step.y *= spec.max_step / len;
      }
      shift = shift + step;
    }
    FrameTransform& tr = seq.transforms[t];
    tr.shift = shift;
    tr.gain = spec.gain_lo + (spec.gain_hi - spec.gain_lo) * unit(rng);
    tr.bias = spec.bias_lo + (spec.bias_hi - spec.bias_lo) * unit(rng);
  }

  double min_sx = 0.0, max_sx = 0.0, min_sy = 0.0, max_sy = 0.0;
  for (const auto& tr : seq.transforms) {
    min_sx = std::min(min_sx, tr.shift.x);
    max_sx = std::max(max_sx, tr.shift.x);
    min_sy = std::min(min_sy, tr.shift.y);
    max_sy = std::max(max_sy, tr.shift.y);
  }
  const int pad = static_cast<int>(std::ceil(std::max({-min_sx, max_sx, -min_sy, max_sy}))) + 2;
  // Scale the blob count with the canvas so texture density does not depend on padding.
  TextureSpec tex = spec.texture;
  const double area_ratio = static_cast<double>((spec.width + 2 * pad) * (spec.height + 2 * pad)) /
                            (static_cast<double>(spec.width) * spec.height);
  tex.blob_count = static_cast<int>(std::lround(tex.blob_count * area_ratio));
  const FeatureMap base = render_texture(spec.height + 2 * pad, spec.width + 2 * pad, tex, rng());

  std::vector<double> v(1);
  for (int t = 0; t < spec.frames; ++t) {
    const FrameTransform& tr = seq.transforms[t];
    FeatureMap frame(spec.height, spec.width, 1);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        bilinear_sample_into(base, {x + pad - tr.shift.x, y + pad - tr.shift.y}, v);
        frame(y, x) = tr.gain * v[0] + tr.bias;
      }
    }
    if (spec.noise_std > 0.0) {
      for (double& px : frame.values()) px += spec.noise_std * gauss(rng);
    }
    if (spec.occlusion) {
      const OcclusionSpec& occ = *spec.occlusion;
      const int ox = static_cast<int>(std::lround(occ.start.x + t * occ.velocity.x));
      const int oy = static_cast<int>(std::lround(occ.start.y + t * occ.velocity.y));
      for (int y = std::max(0, oy); y < std::min(spec.height, oy + occ.size); ++y) {
        for (int x = std::max(0, ox); x < std::min(spec.width, ox + occ.size); ++x) {
          frame(y, x) = occ.fill;
        }
      }
    }
    seq.frames.push_back(std::move(frame));
  }

  if (spec.landmarks > 0) {
    // Keep every landmark's whole trajectory at least one stencil radius
    // (plus a pixel) away from the border.
    const double m = spec.stencil_radius + 1.0;
    const Box region{m - min_sx, m - min_sy, spec.width - 1.0 - m - max_sx,
                     spec.height - 1.0 - m - max_sy};
    const PatchStencil stencil(spec.stencil_radius);
    const std::vector<Point> start =
        sample_landmarks_in(seq.frames.front(), spec.landmarks, stencil, spec.seed, region);
    for (int j = 0; j < spec.landmarks; ++j) seq.gt.ids.push_back(j);
    for (const auto& tr : seq.transforms) {
      std::vector<Point> row;
      row.reserve(start.size());
      for (const Point& p : start) row.push_back(p + tr.shift);
      seq.gt.frames.push_back(std::move(row));
    }
  }
  return seq;
}

std::vector<SynthPreset> benchmark_suites() {
  SynthSpec clean;
  clean.jitter_std = 0.3;
  clean.seed = 101;

  SynthSpec photo = clean;
  photo.gain_lo = 0.7;
  photo.gain_hi = 1.3;
  photo.bias_lo = -0.15;
  photo.bias_hi = 0.15;
  photo.seed = 202;

  SynthSpec noise = clean;
  noise.noise_std = 0.02;
  noise.seed = 303;

  SynthSpec occl = clean;
  OcclusionSpec box;
  box.size = 16;
  box.start = {-16.0, 24.0};
  box.velocity = {8.0, 0.0};
  occl.occlusion = box;
  occl.seed = 404;

  return {{"CLEAN", clean}, {"PHOTO", photo}, {"NOISE", noise}, {"OCCL", occl}};
}

SynthSpec preset(const std::string& name) {
  for (const auto& p : benchmark_suites()) {
    if (p.name == name) return p.spec;
  }
  throw Error(ErrorCode::InvalidSpec, "unknown preset '" + name + "'");
}

}  // namespace cylk
