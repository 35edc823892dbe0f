#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cylk/core.hpp"

namespace cylk {

/// One dilated convolution. weights are laid out [out][in][k][k].
struct ConvLayerParams {
  int out_channels = 0;
  int in_channels = 0;
  int kernel = 3;
  int dilation = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  std::size_t weight_index(int o, int i, int u, int v) const noexcept {
    return ((static_cast<std::size_t>(o) * in_channels + i) * kernel + u) * kernel + v;
  }
  double& w(int o, int i, int u, int v) noexcept { return weights[weight_index(o, i, u, v)]; }
  double w(int o, int i, int u, int v) const noexcept { return weights[weight_index(o, i, u, v)]; }

  void validate() const;
  friend bool operator==(const ConvLayerParams&, const ConvLayerParams&) = default;
};

/// Learnable feature extractor: conv layers with ReLU between them and no
/// activation after the last. Spatial size is preserved (replicate padding).
struct ConvNetParams {
  std::vector<ConvLayerParams> layers;

  void validate() const;
  std::size_t parameter_count() const noexcept;
  int input_channels() const noexcept { return layers.empty() ? 0 : layers.front().in_channels; }
  int output_channels() const noexcept { return layers.empty() ? 0 : layers.back().out_channels; }

  /// Weight and bias arrays of every layer, in layer order (weights before bias).
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;

  /// Same architecture, every value zero.
  ConvNetParams zeros_like() const;
  /// this += scale * other (same architecture).
  void add_scaled(const ConvNetParams& other, double scale);
  bool all_finite() const noexcept;

  friend bool operator==(const ConvNetParams&, const ConvNetParams&) = default;
};

struct NetSpec {
  std::vector<int> channels{1, 8, 16, 16};
  std::vector<int> kernels{3, 3, 3};
  std::vector<int> dilations{1, 2, 4};

  void validate() const;
};

FeatureMap conv2d_forward(const FeatureMap& input, const ConvLayerParams& layer);

struct ConvGrads {
  FeatureMap d_input;
  std::vector<double> d_weights;
  std::vector<double> d_bias;
};

/// Gradients of a conv layer given dL/d(output).
ConvGrads conv2d_backward(const FeatureMap& input, const ConvLayerParams& layer,
                          const FeatureMap& d_output);

FeatureMap extract_features(const FeatureMap& image, const ConvNetParams& params);

/// Raw-intensity baseline: returns the image unchanged.
FeatureMap identity_features(const FeatureMap& image);

/// Forward pass that keeps every layer input for the backward pass.
struct FeatureTrace {
  std::vector<FeatureMap> inputs;  // input to layer l (post-ReLU for l > 0)
  std::vector<FeatureMap> pre_activations;
  FeatureMap output;
};

FeatureTrace extract_features_traced(const FeatureMap& image, const ConvNetParams& params);

/// Forward pass whose ReLU gates are taken from `reference` (unit on where the
/// reference pre-activation was positive) instead of from the new values.
/// Replaying a fixed activation pattern keeps finite-difference probes on the
/// same linear piece as the reference run.
FeatureMap extract_features_gated(const FeatureMap& image, const ConvNetParams& params,
                                  const FeatureTrace& reference);

/// Accumulates dL/d(params) into grads given dL/d(output features).
void extract_features_backward(const FeatureTrace& trace, const ConvNetParams& params,
                               const FeatureMap& d_output, ConvNetParams& grads);

/// He-style Gaussian weights, std = sqrt(2 / (in * k^2)), zero biases.
ConvNetParams init_params(const NetSpec& spec, std::uint64_t seed);

/// Three channels -> one: 0.299 R + 0.587 G + 0.114 B.
FeatureMap luminance(const FeatureMap& rgb);

}  // namespace cylk
