#include "cylk/feature_net.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace cylk {

void ConvLayerParams::validate() const {
  if (out_channels < 1 || in_channels < 1) {
    throw Error(ErrorCode::InvalidSpec, "conv layer channel counts must be positive");
  }
  if (kernel < 1 || kernel % 2 == 0) {
    throw Error(ErrorCode::InvalidSpec, "conv kernel size must be odd, got " + std::to_string(kernel));
  }
  if (dilation < 1) throw Error(ErrorCode::InvalidSpec, "conv dilation must be >= 1");
  if (weights.size() != static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel ||
      bias.size() != static_cast<std::size_t>(out_channels)) {
    throw Error(ErrorCode::ShapeMismatch, "conv layer arrays do not match declared shape");
  }
}

void ConvNetParams::validate() const {
  if (layers.empty()) throw Error(ErrorCode::InvalidSpec, "network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    if (l > 0 && layers[l].in_channels != layers[l - 1].out_channels) {
      throw Error(ErrorCode::InvalidSpec,
                  "layer " + std::to_string(l) + " input channels do not chain");
    }
  }
}

std::size_t ConvNetParams::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<std::span<double>> ConvNetParams::blocks() {
  std::vector<std::span<double>> out;
  for (auto& l : layers) {
    out.emplace_back(l.weights);
    out.emplace_back(l.bias);
  }
  return out;
}

std::vector<std::span<const double>> ConvNetParams::blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers) {
    out.emplace_back(l.weights);
    out.emplace_back(l.bias);
  }
  return out;
}

ConvNetParams ConvNetParams::zeros_like() const {
  ConvNetParams z = *this;
  for (auto& b : z.blocks()) std::fill(b.begin(), b.end(), 0.0);
  return z;
}

void ConvNetParams::add_scaled(const ConvNetParams& other, double scale) {
  auto dst = blocks();
  const auto src = other.blocks();
  if (dst.size() != src.size()) throw Error(ErrorCode::ShapeMismatch, "parameter layouts differ");
  for (std::size_t b = 0; b < dst.size(); ++b) {
    if (dst[b].size() != src[b].size()) {
      throw Error(ErrorCode::ShapeMismatch, "parameter layouts differ");
    }
    for (std::size_t k = 0; k < dst[b].size(); ++k) dst[b][k] += scale * src[b][k];
  }
}

bool ConvNetParams::all_finite() const noexcept {
  for (const auto& b : blocks()) {
    for (double v : b) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

void NetSpec::validate() const {
  const std::size_t n = kernels.size();
  if (n == 0 || channels.size() != n + 1 || dilations.size() != n) {
    throw Error(ErrorCode::InvalidSpec,
                "net spec needs layers+1 channel counts and one kernel/dilation per layer");
  }
  for (int c : channels) {
    if (c < 1) throw Error(ErrorCode::InvalidSpec, "channel counts must be positive");
  }
  for (int k : kernels) {
    if (k < 1 || k % 2 == 0) throw Error(ErrorCode::InvalidSpec, "kernel sizes must be odd");
  }
  for (int d : dilations) {
    if (d < 1) throw Error(ErrorCode::InvalidSpec, "dilations must be >= 1");
  }
}

namespace {

// Clamped source index for every output coordinate and kernel tap along one axis.
std::vector<int> tap_table(int extent, int kernel, int dilation) {
  const int half = kernel / 2;
  std::vector<int> table(static_cast<std::size_t>(kernel) * extent);
  for (int t = 0; t < kernel; ++t) {
    for (int x = 0; x < extent; ++x) {
      table[static_cast<std::size_t>(t) * extent + x] =
          std::clamp(x + dilation * (t - half), 0, extent - 1);
    }
  }
  return table;
}

// Weights regrouped as [u][v][o][i] so one tap is a contiguous out x in matrix.
std::vector<double> tap_major(const ConvLayerParams& layer) {
  const int k = layer.kernel;
  std::vector<double> out(layer.weights.size());
  std::size_t n = 0;
  for (int u = 0; u < k; ++u)
    for (int v = 0; v < k; ++v)
      for (int o = 0; o < layer.out_channels; ++o)
        for (int i = 0; i < layer.in_channels; ++i) out[n++] = layer.w(o, i, u, v);
  return out;
}

void check_input(const FeatureMap& input, const ConvLayerParams& layer) {
  layer.validate();
  if (input.channels() != layer.in_channels) {
    throw Error(ErrorCode::ShapeMismatch, "conv input has " + std::to_string(input.channels()) +
                                              " channels, layer expects " +
                                              std::to_string(layer.in_channels));
  }
}

}  // namespace

FeatureMap conv2d_forward(const FeatureMap& input, const ConvLayerParams& layer) {
  check_input(input, layer);
  const int h = input.height();
  const int w = input.width();
  const int cin = layer.in_channels;
  const int cout = layer.out_channels;
  const int k = layer.kernel;
  const auto rows = tap_table(h, k, layer.dilation);
  const auto cols = tap_table(w, k, layer.dilation);
  const auto wt = tap_major(layer);

  FeatureMap out(h, w, cout);
  const double* in = input.values().data();
  double* dst = out.values().data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* o_ptr = dst + out.index(y, x);
      for (int o = 0; o < cout; ++o) o_ptr[o] = layer.bias[o];
      for (int u = 0; u < k; ++u) {
        const int yy = rows[static_cast<std::size_t>(u) * h + y];
        for (int v = 0; v < k; ++v) {
          const int xx = cols[static_cast<std::size_t>(v) * w + x];
          const double* i_ptr = in + input.index(yy, xx);
          const double* w_ptr = wt.data() + (static_cast<std::size_t>(u) * k + v) * cout * cin;
          for (int o = 0; o < cout; ++o) {
            double acc = 0.0;
            const double* wo = w_ptr + static_cast<std::size_t>(o) * cin;
            for (int i = 0; i < cin; ++i) acc += wo[i] * i_ptr[i];
            o_ptr[o] += acc;
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const FeatureMap& input, const ConvLayerParams& layer,
                          const FeatureMap& d_output) {
  check_input(input, layer);
  const int h = input.height();
  const int w = input.width();
  const int cin = layer.in_channels;
  const int cout = layer.out_channels;
  const int k = layer.kernel;
  if (d_output.height() != h || d_output.width() != w || d_output.channels() != cout) {
    throw Error(ErrorCode::ShapeMismatch, "conv output gradient has the wrong shape");
  }
  const auto rows = tap_table(h, k, layer.dilation);
  const auto cols = tap_table(w, k, layer.dilation);
  const auto wt = tap_major(layer);

  ConvGrads g{FeatureMap(h, w, cin), std::vector<double>(layer.weights.size(), 0.0),
              std::vector<double>(cout, 0.0)};
  std::vector<double> d_wt(wt.size(), 0.0);
  const double* in = input.values().data();
  double* d_in = g.d_input.values().data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double* go = d_output.values().data() + d_output.index(y, x);
      for (int o = 0; o < cout; ++o) g.d_bias[o] += go[o];
      for (int u = 0; u < k; ++u) {
        const int yy = rows[static_cast<std::size_t>(u) * h + y];
        for (int v = 0; v < k; ++v) {
          const int xx = cols[static_cast<std::size_t>(v) * w + x];
          const std::size_t src = input.index(yy, xx);
          const std::size_t tap = (static_cast<std::size_t>(u) * k + v) * cout * cin;
          for (int o = 0; o < cout; ++o) {
            const double gov = go[o];
            if (gov == 0.0) continue;
            const double* wo = wt.data() + tap + static_cast<std::size_t>(o) * cin;
            double* dwo = d_wt.data() + tap + static_cast<std::size_t>(o) * cin;
            for (int i = 0; i < cin; ++i) {
              d_in[src + i] += wo[i] * gov;
              dwo[i] += in[src + i] * gov;
            }
          }
        }
      }
    }
  }
  std::size_t n = 0;
  for (int u = 0; u < k; ++u)
    for (int v = 0; v < k; ++v)
      for (int o = 0; o < cout; ++o)
        for (int i = 0; i < cin; ++i) g.d_weights[layer.weight_index(o, i, u, v)] = d_wt[n++];
  return g;
}

FeatureTrace extract_features_traced(const FeatureMap& image, const ConvNetParams& params) {
  params.validate();
  FeatureTrace trace;
  FeatureMap current = image;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    FeatureMap pre = conv2d_forward(current, params.layers[l]);
    trace.inputs.push_back(std::move(current));
    if (l + 1 < params.layers.size()) {
      current = pre;
      for (double& v : current.values()) v = std::max(v, 0.0);
      trace.pre_activations.push_back(std::move(pre));
    } else {
      trace.output = pre;
      trace.pre_activations.push_back(std::move(pre));
    }
  }
  return trace;
}

FeatureMap extract_features(const FeatureMap& image, const ConvNetParams& params) {
  params.validate();
  FeatureMap current = image;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    current = conv2d_forward(current, params.layers[l]);
    if (l + 1 < params.layers.size()) {
      for (double& v : current.values()) v = std::max(v, 0.0);
    }
  }
  return current;
}

FeatureMap extract_features_gated(const FeatureMap& image, const ConvNetParams& params,
                                  const FeatureTrace& reference) {
  params.validate();
  if (reference.pre_activations.size() != params.layers.size()) {
    throw Error(ErrorCode::ShapeMismatch, "reference trace does not match the network depth");
  }
  FeatureMap current = image;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    current = conv2d_forward(current, params.layers[l]);
    if (l + 1 < params.layers.size()) {
      const auto& gate = reference.pre_activations[l].values();
      if (gate.size() != current.size()) {
        throw Error(ErrorCode::ShapeMismatch, "reference trace does not match the input size");
      }
      auto& v = current.values();
      for (std::size_t n = 0; n < v.size(); ++n) {
        if (!(gate[n] > 0.0)) v[n] = 0.0;
      }
    }
  }
  return current;
}

FeatureMap identity_features(const FeatureMap& image) { return image; }

void extract_features_backward(const FeatureTrace& trace, const ConvNetParams& params,
                               const FeatureMap& d_output, ConvNetParams& grads) {
  FeatureMap d = d_output;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    if (l + 1 < params.layers.size()) {
      // ReLU: pass the gradient only where the pre-activation was positive.
      const auto& pre = trace.pre_activations[l].values();
      auto& dv = d.values();
      for (std::size_t n = 0; n < dv.size(); ++n) {
        if (!(pre[n] > 0.0)) dv[n] = 0.0;
      }
    }
    ConvGrads g = conv2d_backward(trace.inputs[l], params.layers[l], d);
    auto& gl = grads.layers[l];
    for (std::size_t n = 0; n < g.d_weights.size(); ++n) gl.weights[n] += g.d_weights[n];
    for (std::size_t n = 0; n < g.d_bias.size(); ++n) gl.bias[n] += g.d_bias[n];
    if (l > 0) d = std::move(g.d_input);
  }
}

ConvNetParams init_params(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  ConvNetParams params;
  for (std::size_t l = 0; l < spec.kernels.size(); ++l) {
    ConvLayerParams layer;
    layer.in_channels = spec.channels[l];
    layer.out_channels = spec.channels[l + 1];
    layer.kernel = spec.kernels[l];
    layer.dilation = spec.dilations[l];
    const double fan_in = static_cast<double>(layer.in_channels) * layer.kernel * layer.kernel;
    std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / fan_in));
    layer.weights.resize(static_cast<std::size_t>(layer.out_channels) * layer.in_channels *
                         layer.kernel * layer.kernel);
    for (double& v : layer.weights) v = gauss(rng);
    layer.bias.assign(layer.out_channels, 0.0);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

FeatureMap luminance(const FeatureMap& rgb) {
  if (rgb.channels() != 3) throw Error(ErrorCode::ShapeMismatch, "luminance expects 3 channels");
  FeatureMap out(rgb.height(), rgb.width(), 1);
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      out(y, x) = 0.299 * rgb(y, x, 0) + 0.587 * rgb(y, x, 1) + 0.114 * rgb(y, x, 2);
    }
  }
  return out;
}

}  // namespace cylk
