#pragma once

#include <functional>

#include "cylk/feature_net.hpp"
#include "cylk/iclk.hpp"

namespace cylk {

/// One forward/backward tracking round trip. The forward pass tracks the
/// F_T patch at x_T into F_I; the backward pass tracks the F_I patch at x_I
/// back into F_T. With a motion prior p0 the forward pass starts at p0 and the
/// backward pass at -p0.
struct CycleRecord {
  Point x_t;
  Point x_i;        // x_t + forward.p_final
  Point x_t_prime;  // x_i + backward.p_final
  TemplateModel forward_template;   // built on F_T at x_t
  TemplateModel backward_template;  // built on F_I at x_i
  TrackResult forward;
  TrackResult backward;

  const Patch& template_patch() const noexcept { return forward_template.template_patch; }
  const Patch& tracked_patch() const noexcept { return backward_template.template_patch; }
};

struct LossBreakdown {
  double cycle = 0.0;
  double patch = 0.0;
  double lambda = 1.0;
  double total = 0.0;
};

/// Weights of the two loss terms in L = cycle_weight * L_c + patch_weight * L_p.
struct LossWeights {
  double cycle = 1.0;
  double patch = 1.0;
};

struct GradientBundle {
  FeatureMap d_f_t;
  FeatureMap d_f_i;
  ConvNetParams d_params;
};

CycleRecord cycle_forward(const FeatureMap& f_t, const FeatureMap& f_i, Point x_t,
                          const PatchStencil& stencil, const SolverOptions& opts = {});
CycleRecord cycle_forward(const FeatureMap& f_t, const GradientMaps& grads_t,
                          const FeatureMap& f_i, const GradientMaps& grads_i, Point x_t,
                          const PatchStencil& stencil, const SolverOptions& opts = {},
                          WarpParams p0 = {});

/// Replays a cycle with fixed iteration counts for the two passes.
CycleRecord cycle_forward_pinned(const FeatureMap& f_t, const FeatureMap& f_i, Point x_t,
                                 const PatchStencil& stencil, int forward_iters,
                                 int backward_iters, const SolverOptions& opts = {});

double cycle_loss(const CycleRecord& rec);
double patch_loss(const CycleRecord& rec);
double patch_loss(const Patch& a, const Patch& b);
LossBreakdown total_loss(const CycleRecord& rec, double lambda);

/// Running sums of dL/dF and dL/d(gradient maps) for a template/input map pair.
/// The gradient-map terms are folded into dL/dF by finalize().
class MapAdjoints {
 public:
  MapAdjoints(const FeatureMap& f_t, const FeatureMap& f_i);

  /// Reverse pass of one cycle; adds its contribution to the running sums.
  void accumulate(const CycleRecord& rec, const FeatureMap& f_t, const GradientMaps& grads_t,
                  const FeatureMap& f_i, const GradientMaps& grads_i, LossWeights weights);

  /// Returns (dL/dF_T, dL/dF_I) including the path through map_gradient.
  std::pair<FeatureMap, FeatureMap> finalize() const;

 private:
  FeatureMap d_f_t_, d_gx_t_, d_gy_t_;
  FeatureMap d_f_i_, d_gx_i_, d_gy_i_;
};

/// Reverse-mode gradient of losses.total through the unrolled cycle recorded
/// in rec, into both feature maps and, through the two feature traces, into
/// the network parameters. Iteration counts are those stored in rec.
GradientBundle backward(const CycleRecord& rec, const LossBreakdown& losses,
                        const FeatureTrace& trace_t, const FeatureTrace& trace_i,
                        const ConvNetParams& params);

/// Same reverse pass with independent weights on the two loss terms; returns
/// map gradients only.
std::pair<FeatureMap, FeatureMap> map_backward(const CycleRecord& rec, const FeatureMap& f_t,
                                               const FeatureMap& f_i, LossWeights weights);

void require_finite(const GradientBundle& g);

/// Central differences (L(theta + h e_k) - L(theta - h e_k)) / 2h for every
/// parameter. loss_fn must be deterministic.
ConvNetParams finite_diff_grad(const std::function<double(const ConvNetParams&)>& loss_fn,
                               const ConvNetParams& params, double h = 1e-5);

/// Scalar variant used for checking the stencil itself.
double finite_diff_scalar(const std::function<double(double)>& loss_fn, double theta,
                          double h = 1e-5);

/// Max over all parameters of |analytic - fd| / max(|fd|, 1e-8).
double max_relative_error(const ConvNetParams& analytic, const ConvNetParams& numeric);

struct GradCheckInstance {
  FeatureMap image_t;
  FeatureMap image_i;
  Point x_t;
  ConvNetParams params;
  PatchStencil stencil{2};
  SolverOptions opts;
  double lambda = 1.0;
};

/// Seeded 16x16 instance: smooth texture, shifted and brightness-perturbed
/// second frame, narrow three-layer net (1-4-8-8), radius-2 stencil, at most 3 solver
/// iterations per pass.
GradCheckInstance make_gradcheck_instance(std::uint64_t seed);

struct GradCheckResult {
  double max_rel_error = 0.0;
  double loss = 0.0;
  int forward_iters = 0;
  int backward_iters = 0;
  std::size_t parameters = 0;
};

/// Compares backward() against finite_diff_grad on one instance. The FD
/// branches replay the unperturbed run's unrolled graph: same solver
/// iteration counts and same ReLU activation pattern.
GradCheckResult run_gradcheck(const GradCheckInstance& inst, double h = 1e-5);

}  // namespace cylk
