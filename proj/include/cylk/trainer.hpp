#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cylk/feature_net.hpp"
#include "cylk/grad_engine.hpp"
#include "cylk/iclk.hpp"

namespace cylk {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

struct AdamState {
  ConvNetParams m;
  ConvNetParams v;
  long step = 0;
  AdamHyper hyper;

  static AdamState for_params(const ConvNetParams& params, const AdamHyper& hyper = {});
};

/// Decoupled weight decay, theta <- theta - lr * wd * theta, followed by the
/// bias-corrected Adam update theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(ConvNetParams& params, const ConvNetParams& grads, AdamState& state);

/// Axis-aligned region [x0, x1] x [y0, y1] in pixel coordinates.
struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  bool empty() const noexcept { return !(x1 >= x0 && y1 >= y0); }
};

/// Interior box leaving `margin` pixels on every side.
Box margin_box(const FeatureMap& map, double margin);

/// n points uniform over the interior box with margin stencil radius +
/// max_motion. Candidates whose template trace(H) falls below the texture
/// threshold are rejected, up to 10n rejections; after that the remainder is
/// accepted unfiltered.
std::vector<Point> sample_landmarks(const FeatureMap& f_t, int n, const PatchStencil& stencil,
                                    std::uint64_t seed, double max_motion = 3.0,
                                    const SolverOptions& opts = {});
std::vector<Point> sample_landmarks_in(const FeatureMap& f_t, int n, const PatchStencil& stencil,
                                       std::uint64_t seed, const Box& region,
                                       const SolverOptions& opts = {});

struct AugmentSpec {
  double flip_prob = 0.5;
  double scale_prob = 0.5;
  double rot_prob = 0.5;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double rot_range_deg = 10.0;
};

struct AugmentTransform {
  bool flip = false;
  double scale = 1.0;
  double angle_deg = 0.0;

  bool identity() const noexcept { return !flip && scale == 1.0 && angle_deg == 0.0; }
};

AugmentTransform draw_augment(const AugmentSpec& spec, std::uint64_t seed);

/// Resamples the image about its center: horizontal flip, then scale and
/// rotation. Bilinear, replicate border.
FeatureMap apply_augment(const FeatureMap& image, const AugmentTransform& t);
FeatureMap augment(const FeatureMap& image, std::uint64_t seed, const AugmentSpec& spec = {});

struct TrainConfig {
  int epochs = 20;
  int batch_size = 1;
  int landmarks_per_pair = 50;
  double lambda = 1.0;
  AdamHyper adam;
  AugmentSpec aug;
  bool augment = true;
  SolverOptions solver;
  NetSpec net;
  double max_motion = 3.0;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

struct TrainLogEntry {
  int epoch = 0;
  int pair = 0;
  double cycle = 0.0;  // mean over landmarks that produced a cycle
  double patch = 0.0;
  double total = 0.0;
  int degenerate_count = 0;
};

/// A sequence is a list of frames; consecutive frames form the training pairs.
using Dataset = std::vector<std::vector<FeatureMap>>;

struct TrainResult {
  ConvNetParams params;
  std::vector<TrainLogEntry> log;
};

using TrainLogSink = std::function<void(const TrainLogEntry&)>;

/// Per epoch, per consecutive frame pair: augment both frames with one
/// transform, extract features, sample landmarks, run and differentiate one
/// cycle per landmark, sum the gradients, take one Adam step.
TrainResult train(const Dataset& dataset, const TrainConfig& cfg, ConvNetParams init,
                  const TrainLogSink& sink = {});

/// Mean of log totals per epoch, index = epoch - 1.
std::vector<double> epoch_mean_total(const std::vector<TrainLogEntry>& log);

}  // namespace cylk
