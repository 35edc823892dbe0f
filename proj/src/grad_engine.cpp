#include "cylk/grad_engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "cylk/synth.hpp"

namespace cylk {

CycleRecord cycle_forward(const FeatureMap& f_t, const FeatureMap& f_i, Point x_t,
                          const PatchStencil& stencil, const SolverOptions& opts) {
  return cycle_forward(f_t, map_gradient(f_t), f_i, map_gradient(f_i), x_t, stencil, opts);
}

CycleRecord cycle_forward(const FeatureMap& f_t, const GradientMaps& grads_t,
                          const FeatureMap& f_i, const GradientMaps& grads_i, Point x_t,
                          const PatchStencil& stencil, const SolverOptions& opts,
                          WarpParams p0) {
  CycleRecord rec;
  rec.x_t = x_t;
  rec.forward_template = precompute_template(f_t, grads_t, x_t, stencil, opts);
  rec.forward = iclk_track(rec.forward_template, f_i, p0, opts);
  rec.x_i = x_t + rec.forward.p_final;
  rec.backward_template = precompute_template(f_i, grads_i, rec.x_i, stencil, opts);
  rec.backward = iclk_track(rec.backward_template, f_t, WarpParams{} - p0, opts);
  rec.x_t_prime = rec.x_i + rec.backward.p_final;
  return rec;
}

CycleRecord cycle_forward_pinned(const FeatureMap& f_t, const FeatureMap& f_i, Point x_t,
                                 const PatchStencil& stencil, int forward_iters,
                                 int backward_iters, const SolverOptions& opts) {
  CycleRecord rec;
  rec.x_t = x_t;
  rec.forward_template = precompute_template(f_t, x_t, stencil, opts);
  rec.forward = iclk_track_pinned(rec.forward_template, f_i, {}, forward_iters);
  rec.x_i = x_t + rec.forward.p_final;
  rec.backward_template = precompute_template(f_i, rec.x_i, stencil, opts);
  rec.backward = iclk_track_pinned(rec.backward_template, f_t, {}, backward_iters);
  rec.x_t_prime = rec.x_i + rec.backward.p_final;
  return rec;
}

double cycle_loss(const CycleRecord& rec) {
  const double dx = rec.x_t.x - rec.x_t_prime.x;
  const double dy = rec.x_t.y - rec.x_t_prime.y;
  return dx * dx + dy * dy;
}

double patch_loss(const Patch& a, const Patch& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::ShapeMismatch, "patch loss on patches of different length");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a.values[k] - b.values[k];
    sum += d * d;
  }
  return sum;
}

double patch_loss(const CycleRecord& rec) {
  return patch_loss(rec.template_patch(), rec.tracked_patch());
}

LossBreakdown total_loss(const CycleRecord& rec, double lambda) {
  LossBreakdown l;
  l.cycle = cycle_loss(rec);
  l.patch = patch_loss(rec);
  l.lambda = lambda;
  l.total = l.cycle + lambda * l.patch;
  return l;
}

namespace {

// Gradient of a 2x2 matrix held as the three entries of a Sym2; xy collects
// both off-diagonal positions.
struct Sym2Grad {
  double xx = 0.0, xy = 0.0, yy = 0.0;
};

// Accumulates dL/dpos of the stencil samples of `map` around `center`, given
// dL/d(sampled values) in `grad` (patch layout), and scatters `grad` into
// `target` with the bilinear weights.
std::array<double, 2> sample_adjoint(const FeatureMap& map, FeatureMap& target, Point center,
                                     const PatchStencil& stencil, std::span<const double> grad) {
  const int channels = map.channels();
  std::vector<double> dx(channels), dy(channels);
  std::array<double, 2> pos{0.0, 0.0};
  std::size_t k = 0;
  for (const Offset& o : stencil.offsets()) {
    const Point at{center.x + o.dx, center.y + o.dy};
    const auto g = grad.subspan(k * channels, channels);
    bilinear_position_grad(map, at, dx, dy);
    for (int c = 0; c < channels; ++c) {
      pos[0] += g[c] * dx[c];
      pos[1] += g[c] * dy[c];
    }
    bilinear_scatter(target, at, g);
    ++k;
  }
  return pos;
}

struct PassAdjoint {
  FeatureMap* d_template_map;
  FeatureMap* d_template_gx;
  FeatureMap* d_template_gy;
  FeatureMap* d_input_map;
};

// Reverse pass through one IC-LK solve (template model + recorded iterations).
// d_p_final: dL/d(final warp); d_template: extra dL/d(template patch).
// Returns dL/d(template center).
std::array<double, 2> iclk_adjoint(const TemplateModel& tm, const TrackResult& track,
                                   const FeatureMap& template_map,
                                   const GradientMaps& template_grads,
                                   const FeatureMap& input_map, std::array<double, 2> d_p_final,
                                   std::vector<double> d_template,
                                   const PassAdjoint& out) {
  const PatchStencil& stencil = tm.stencil;
  const std::size_t rows = tm.template_patch.size();
  const Sym2& hinv = tm.hessian_inv;
  std::vector<double> d_jac(2 * rows, 0.0);
  if (d_template.empty()) d_template.assign(rows, 0.0);
  Sym2Grad d_hreg;
  std::array<double, 2> d_center{0.0, 0.0};
  std::array<double, 2> d_p = d_p_final;
  std::vector<double> d_r(rows);

  for (int i = track.iterations(); i >= 1; --i) {
    const WarpParams p_prev = track.iterates[i - 1];
    const WarpParams dp = track.deltas[i - 1];
    // p_i = p_{i-1} - dp_i
    const double d_dpx = -d_p[0];
    const double d_dpy = -d_p[1];
    // dp = Hinv b
    const double d_bx = hinv.xx * d_dpx + hinv.xy * d_dpy;
    const double d_by = hinv.xy * d_dpx + hinv.yy * d_dpy;
    // d(Hreg) = -Hinv^T d(dp) dp^T = -d_b dp^T
    d_hreg.xx -= d_bx * dp.x;
    d_hreg.yy -= d_by * dp.y;
    d_hreg.xy -= d_bx * dp.y + d_by * dp.x;
    // b = J^T r, r = F_I(x + p_{i-1}) - T
    const Patch warped = extract_patch(input_map, tm.center + p_prev, stencil);
    for (std::size_t k = 0; k < rows; ++k) {
      const double r = warped.values[k] - tm.template_patch.values[k];
      d_jac[2 * k] += r * d_bx;
      d_jac[2 * k + 1] += r * d_by;
      d_r[k] = tm.jacobian(k, 0) * d_bx + tm.jacobian(k, 1) * d_by;
      d_template[k] -= d_r[k];
    }
    const auto d_pos =
        sample_adjoint(input_map, *out.d_input_map, tm.center + p_prev, stencil, d_r);
    d_p[0] += d_pos[0];
    d_p[1] += d_pos[1];
    d_center[0] += d_pos[0];
    d_center[1] += d_pos[1];
  }

  // Hreg = J^T J + eps I, eps = eps_scale * max(trace(J^T J) / 2, eps_floor)
  Sym2Grad d_h = d_hreg;
  if (0.5 * tm.hessian.trace() > tm.eps_floor) {
    const double d_trace = 0.5 * tm.eps_scale * (d_hreg.xx + d_hreg.yy);
    d_h.xx += d_trace;
    d_h.yy += d_trace;
  }
  for (std::size_t k = 0; k < rows; ++k) {
    const double jx = tm.jacobian(k, 0);
    const double jy = tm.jacobian(k, 1);
    d_jac[2 * k] += 2.0 * d_h.xx * jx + d_h.xy * jy;
    d_jac[2 * k + 1] += 2.0 * d_h.yy * jy + d_h.xy * jx;
  }

  // Template patch and Jacobian are bilinear samples around the center.
  const auto d_pos_t =
      sample_adjoint(template_map, *out.d_template_map, tm.center, stencil, d_template);
  std::vector<double> d_jx(rows), d_jy(rows);
  for (std::size_t k = 0; k < rows; ++k) {
    d_jx[k] = d_jac[2 * k];
    d_jy[k] = d_jac[2 * k + 1];
  }
  const auto d_pos_gx =
      sample_adjoint(template_grads.first, *out.d_template_gx, tm.center, stencil, d_jx);
  const auto d_pos_gy =
      sample_adjoint(template_grads.second, *out.d_template_gy, tm.center, stencil, d_jy);
  d_center[0] += d_pos_t[0] + d_pos_gx[0] + d_pos_gy[0];
  d_center[1] += d_pos_t[1] + d_pos_gx[1] + d_pos_gy[1];
  return d_center;
}

}  // namespace

MapAdjoints::MapAdjoints(const FeatureMap& f_t, const FeatureMap& f_i)
    : d_f_t_(f_t.height(), f_t.width(), f_t.channels()),
      d_gx_t_(d_f_t_),
      d_gy_t_(d_f_t_),
      d_f_i_(f_i.height(), f_i.width(), f_i.channels()),
      d_gx_i_(d_f_i_),
      d_gy_i_(d_f_i_) {}

void MapAdjoints::accumulate(const CycleRecord& rec, const FeatureMap& f_t,
                             const GradientMaps& grads_t, const FeatureMap& f_i,
                             const GradientMaps& grads_i, LossWeights weights) {
  const TemplateModel& fwd = rec.forward_template;
  const TemplateModel& bwd = rec.backward_template;

  // L = wc |x_T' - x_T|^2 + wp |T_f - T_b|^2
  const std::array<double, 2> d_xtp{2.0 * weights.cycle * (rec.x_t_prime.x - rec.x_t.x),
                                    2.0 * weights.cycle * (rec.x_t_prime.y - rec.x_t.y)};
  const std::size_t rows = rec.template_patch().size();
  std::vector<double> d_tf(rows), d_tb(rows);
  for (std::size_t k = 0; k < rows; ++k) {
    const double diff = rec.template_patch().values[k] - rec.tracked_patch().values[k];
    d_tf[k] = 2.0 * weights.patch * diff;
    d_tb[k] = -2.0 * weights.patch * diff;
  }

  // x_T' = x_I + q: template on F_I at x_I, input F_T.
  const auto d_xi_from_backward =
      iclk_adjoint(bwd, rec.backward, f_i, grads_i, f_t, d_xtp, std::move(d_tb),
                   PassAdjoint{&d_f_i_, &d_gx_i_, &d_gy_i_, &d_f_t_});
  const std::array<double, 2> d_xi{d_xtp[0] + d_xi_from_backward[0],
                                   d_xtp[1] + d_xi_from_backward[1]};
  // x_I = x_T + p: template on F_T at the constant x_T, input F_I.
  iclk_adjoint(fwd, rec.forward, f_t, grads_t, f_i, d_xi, std::move(d_tf),
               PassAdjoint{&d_f_t_, &d_gx_t_, &d_gy_t_, &d_f_i_});
}

std::pair<FeatureMap, FeatureMap> MapAdjoints::finalize() const {
  FeatureMap d_t = map_gradient_adjoint(d_gx_t_, d_gy_t_);
  FeatureMap d_i = map_gradient_adjoint(d_gx_i_, d_gy_i_);
  for (std::size_t n = 0; n < d_t.size(); ++n) d_t.values()[n] += d_f_t_.values()[n];
  for (std::size_t n = 0; n < d_i.size(); ++n) d_i.values()[n] += d_f_i_.values()[n];
  return {std::move(d_t), std::move(d_i)};
}

std::pair<FeatureMap, FeatureMap> map_backward(const CycleRecord& rec, const FeatureMap& f_t,
                                               const FeatureMap& f_i, LossWeights weights) {
  MapAdjoints adj(f_t, f_i);
  adj.accumulate(rec, f_t, map_gradient(f_t), f_i, map_gradient(f_i), weights);
  return adj.finalize();
}

void require_finite(const GradientBundle& g) {
  if (!g.d_f_t.all_finite() || !g.d_f_i.all_finite() || !g.d_params.all_finite()) {
    throw Error(ErrorCode::NonFiniteGradient, "backward produced a non-finite gradient entry");
  }
}

GradientBundle backward(const CycleRecord& rec, const LossBreakdown& losses,
                        const FeatureTrace& trace_t, const FeatureTrace& trace_i,
                        const ConvNetParams& params) {
  auto [d_t, d_i] =
      map_backward(rec, trace_t.output, trace_i.output, LossWeights{1.0, losses.lambda});
  GradientBundle g{std::move(d_t), std::move(d_i), params.zeros_like()};
  extract_features_backward(trace_t, params, g.d_f_t, g.d_params);
  extract_features_backward(trace_i, params, g.d_f_i, g.d_params);
  require_finite(g);
  return g;
}

ConvNetParams finite_diff_grad(const std::function<double(const ConvNetParams&)>& loss_fn,
                               const ConvNetParams& params, double h) {
  ConvNetParams grad = params.zeros_like();
  ConvNetParams probe = params;
  auto probe_blocks = probe.blocks();
  auto grad_blocks = grad.blocks();
  for (std::size_t b = 0; b < probe_blocks.size(); ++b) {
    for (std::size_t k = 0; k < probe_blocks[b].size(); ++k) {
      const double orig = probe_blocks[b][k];
      probe_blocks[b][k] = orig + h;
      const double up = loss_fn(probe);
      probe_blocks[b][k] = orig - h;
      const double down = loss_fn(probe);
      probe_blocks[b][k] = orig;
      grad_blocks[b][k] = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

double finite_diff_scalar(const std::function<double(double)>& loss_fn, double theta, double h) {
  return (loss_fn(theta + h) - loss_fn(theta - h)) / (2.0 * h);
}

double max_relative_error(const ConvNetParams& analytic, const ConvNetParams& numeric) {
  const auto a = analytic.blocks();
  const auto n = numeric.blocks();
  if (a.size() != n.size()) throw Error(ErrorCode::ShapeMismatch, "parameter layouts differ");
  double worst = 0.0;
  for (std::size_t b = 0; b < a.size(); ++b) {
    for (std::size_t k = 0; k < a[b].size(); ++k) {
      const double err = std::abs(a[b][k] - n[b][k]) / std::max(std::abs(n[b][k]), 1e-8);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

GradCheckInstance make_gradcheck_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto signed_range = [&](double lo, double hi) {
    const double v = lo + (hi - lo) * unit(rng);
    return unit(rng) < 0.5 ? -v : v;
  };
  TextureSpec tex;
  tex.blob_count = 12;
  tex.sigma_min = 2.0;
  tex.sigma_max = 3.5;
  const int size = 16;
  const FeatureMap base = render_texture(size + 8, size + 8, tex, rng());

  GradCheckInstance inst;
  const double sx = signed_range(0.1, 0.25);
  const double sy = signed_range(0.1, 0.25);
  const double gain = 0.98 + 0.04 * unit(rng);
  const double bias = 0.02 * (unit(rng) - 0.5);
  inst.image_t = FeatureMap(size, size, 1);
  inst.image_i = FeatureMap(size, size, 1);
  std::vector<double> v(1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      inst.image_t(y, x) = base(y + 4, x + 4);
      bilinear_sample_into(base, {x + 4 - sx, y + 4 - sy}, v);
      inst.image_i(y, x) = gain * v[0] + bias;
    }
  }
  NetSpec spec;
  spec.channels = {1, 4, 8, 8};
  inst.params = init_params(spec, rng());
  for (auto& layer : inst.params.layers) {
    for (double& b : layer.bias) b = 0.1 * (unit(rng) - 0.5);
  }
  // Small output features keep the loss, and with it the FD rounding floor, small.
  ConvLayerParams& last = inst.params.layers.back();
  for (double& w : last.weights) w *= 0.15;
  for (double& b : last.bias) b *= 0.15;
  inst.stencil = PatchStencil(2);
  inst.opts.max_iters = 3;
  inst.opts.tol = 1e-9;
  inst.opts.stencil_radius = 2;
  inst.lambda = 1.0;

  // Replicate padding makes a 16x16 feature map only roughly shift-equivariant,
  // so some anchors never close the cycle. FD rounding on the loss grows with
  // the residual cycle error, so anchor on the interior pixel whose cycle closes
  // best. The fractional offset exercises bilinear paths.
  const Point frac{0.1 + 0.3 * unit(rng), 0.1 + 0.3 * unit(rng)};
  const FeatureMap f_t = extract_features(inst.image_t, inst.params);
  const FeatureMap f_i = extract_features(inst.image_i, inst.params);
  const GradientMaps g_t = map_gradient(f_t);
  const GradientMaps g_i = map_gradient(f_i);
  double best = std::numeric_limits<double>::infinity();
  for (int y = 5; y <= 10; ++y) {
    for (int x = 5; x <= 10; ++x) {
      const Point c = Point{double(x), double(y)} + frac;
      try {
        const double lc = cycle_loss(cycle_forward(f_t, g_t, f_i, g_i, c, inst.stencil, inst.opts));
        if (lc < best) {
          best = lc;
          inst.x_t = c;
        }
      } catch (const Error&) {
      }
    }
  }
  if (!std::isfinite(best)) {
    throw Error(ErrorCode::DegeneratePatch, "gradcheck instance has no usable anchor");
  }
  return inst;
}

GradCheckResult run_gradcheck(const GradCheckInstance& inst, double h) {
  const FeatureTrace trace_t = extract_features_traced(inst.image_t, inst.params);
  const FeatureTrace trace_i = extract_features_traced(inst.image_i, inst.params);
  const CycleRecord rec =
      cycle_forward(trace_t.output, trace_i.output, inst.x_t, inst.stencil, inst.opts);
  const LossBreakdown losses = total_loss(rec, inst.lambda);
  const GradientBundle g = backward(rec, losses, trace_t, trace_i, inst.params);

  const int n = rec.forward.iterations();
  const int m = rec.backward.iterations();
  auto loss_fn = [&](const ConvNetParams& p) {
    const FeatureMap f_t = extract_features_gated(inst.image_t, p, trace_t);
    const FeatureMap f_i = extract_features_gated(inst.image_i, p, trace_i);
    const CycleRecord r = cycle_forward_pinned(f_t, f_i, inst.x_t, inst.stencil, n, m, inst.opts);
    return total_loss(r, inst.lambda).total;
  };
  const ConvNetParams fd = finite_diff_grad(loss_fn, inst.params, h);

  GradCheckResult res;
  res.max_rel_error = max_relative_error(g.d_params, fd);
  res.loss = losses.total;
  res.forward_iters = n;
  res.backward_iters = m;
  res.parameters = inst.params.parameter_count();
  return res;
}

}  // namespace cylk
