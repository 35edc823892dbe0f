#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cylk/core.hpp"
#include "cylk/eval.hpp"

namespace cylk {

enum class TextureKind { GaussianBlobs, FilteredNoise };

struct TextureSpec {
  TextureKind kind = TextureKind::GaussianBlobs;
  int blob_count = 200;
  double sigma_min = 1.5;
  double sigma_max = 4.0;
  double noise_cutoff = 2.0;  // Gaussian smoothing sigma for FilteredNoise, px
};

/// Renders a texture of the given size normalized to [0, 1].
FeatureMap render_texture(int height, int width, const TextureSpec& spec, std::uint64_t seed);

struct OcclusionSpec {
  int size = 16;
  Point start;          // top-left corner at frame 0
  Point velocity;       // px per frame
  double fill = 0.5;
};

struct SynthSpec {
  int width = 64;
  int height = 64;
  int frames = 12;
  TextureSpec texture;
  // Per-frame translation: velocity plus Gaussian jitter, clipped to max_step.
  Point velocity{1.25, -0.75};
  double jitter_std = 0.0;
  double max_step = 3.0;
  double gain_lo = 1.0, gain_hi = 1.0;
  double bias_lo = 0.0, bias_hi = 0.0;
  double noise_std = 0.0;
  std::optional<OcclusionSpec> occlusion;
  int landmarks = 20;
  int stencil_radius = 7;
  std::uint64_t seed = 1;

  void validate() const;
};

struct FrameTransform {
  Point shift;  // cumulative translation of the content relative to frame 0
  double gain = 1.0;
  double bias = 0.0;
};

struct SynthSequence {
  std::vector<FeatureMap> frames;
  GroundTruth gt;
  std::vector<FrameTransform> transforms;
};

/// Frame t is the base texture bilinearly sampled at x - shift_t, then
/// gain_t * v + bias_t, plus noise, plus the occluder. Ground truth positions
/// are the frame-0 landmarks moved by shift_t.
SynthSequence generate(const SynthSpec& spec);

struct SynthPreset {
  std::string name;
  SynthSpec spec;
};

/// CLEAN, PHOTO, NOISE and OCCL, each with an embedded seed.
std::vector<SynthPreset> benchmark_suites();
SynthSpec preset(const std::string& name);

}  // namespace cylk
