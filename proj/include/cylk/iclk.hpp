#pragma once

#include <vector>

#include "cylk/core.hpp"

namespace cylk {

/// Translation warp, in pixels.
struct WarpParams {
  double x = 0.0;
  double y = 0.0;

  friend WarpParams operator+(WarpParams a, WarpParams b) { return {a.x + b.x, a.y + b.y}; }
  friend WarpParams operator-(WarpParams a, WarpParams b) { return {a.x - b.x, a.y - b.y}; }
  friend bool operator==(const WarpParams&, const WarpParams&) = default;
};

inline Point operator+(Point a, WarpParams p) { return {a.x + p.x, a.y + p.y}; }

/// Symmetric 2x2 matrix [[xx, xy], [xy, yy]].
struct Sym2 {
  double xx = 0.0;
  double xy = 0.0;
  double yy = 0.0;

  double trace() const noexcept { return xx + yy; }
  double det() const noexcept { return xx * yy - xy * xy; }
  Sym2 inverse() const;
  /// Returns M^-1 b.
  WarpParams solve(double bx, double by) const;

  friend bool operator==(const Sym2&, const Sym2&) = default;
};

struct SolverOptions {
  int max_iters = 50;
  double tol = 1e-3;
  int stencil_radius = 7;
  double eps_scale = 1e-6;
  double eps_floor = 1e-12;
  // tau_texture = texture_scale * (number of patch entries)
  double texture_scale = 1e-6;

  void validate() const;
};

/// Everything the inverse-compositional solver keeps fixed across iterations.
struct TemplateModel {
  Point center;
  PatchStencil stencil;
  Patch template_patch;
  PatchJacobian jacobian;
  Sym2 hessian;            // J^T J
  double epsilon = 0.0;    // regularization added to the diagonal
  double eps_scale = 0.0;  // settings epsilon was derived from
  double eps_floor = 0.0;
  Sym2 hessian_reg;        // J^T J + epsilon I
  Sym2 hessian_inv;        // (J^T J + epsilon I)^-1
};

/// Assembles J^T J for a patch Jacobian.
Sym2 gauss_newton_hessian(const PatchJacobian& jac);

/// Regularization: eps_scale * max(trace/2, eps_floor).
double hessian_epsilon(const Sym2& hessian, const SolverOptions& opts);

double texture_threshold(std::size_t patch_entries, const SolverOptions& opts);

TemplateModel precompute_template(const FeatureMap& f_t, Point x_t, const PatchStencil& stencil,
                                  const SolverOptions& opts = {});
/// Same, with the gradient maps of f_t already computed.
TemplateModel precompute_template(const FeatureMap& f_t, const GradientMaps& grads, Point x_t,
                                  const PatchStencil& stencil, const SolverOptions& opts = {});

enum class TrackStatus { Converged, MaxIters, Degenerate, NonFinite };

const char* to_string(TrackStatus status);

struct TrackResult {
  WarpParams p_final;
  std::vector<WarpParams> iterates;  // p_0 .. p_n
  std::vector<WarpParams> deltas;    // dp_1 .. dp_n
  bool converged = false;
  double final_residual = 0.0;       // 0.5 * |F_I(x_T + p_final) - F_T(x_T)|^2
  TrackStatus status = TrackStatus::MaxIters;

  int iterations() const noexcept { return static_cast<int>(deltas.size()); }
};

/// Inverse-compositional LK: dp = H^-1 J^T (F_I(x_T + p) - F_T(x_T)), p <- p - dp,
/// until |dp| < tol or max_iters updates have been applied.
TrackResult iclk_track(const TemplateModel& tm, const FeatureMap& f_i, WarpParams p0,
                       const SolverOptions& opts = {});

/// Runs exactly `iterations` updates with no stopping test. Used to replay an
/// unrolled solve with a fixed iteration count.
TrackResult iclk_track_pinned(const TemplateModel& tm, const FeatureMap& f_i, WarpParams p0,
                              int iterations);

/// Forward-additive LK: the Jacobian and Hessian are taken from F_I at
/// x_T + p every iteration and the update is p <- p + dp.
TrackResult forward_lk_track(const FeatureMap& f_t, Point x_t, const FeatureMap& f_i,
                             WarpParams p0, const PatchStencil& stencil,
                             const SolverOptions& opts = {});

/// IC-LK from p0 = 0 for every landmark. Per-landmark failures are reported
/// through TrackResult::status and never abort the batch.
std::vector<TrackResult> track_points(const FeatureMap& f_t, const FeatureMap& f_i,
                                      const std::vector<Point>& landmarks,
                                      const PatchStencil& stencil, const SolverOptions& opts = {},
                                      int threads = 1);

/// 0.5 * |F(x + p) - template|^2
double patch_residual(const FeatureMap& map, Point center, WarpParams p, const Patch& templ,
                      const PatchStencil& stencil);

}  // namespace cylk
