#include "cylk/iclk.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cylk/parallel.hpp"

namespace cylk {

Sym2 Sym2::inverse() const {
  const double d = det();
  return {yy / d, -xy / d, xx / d};
}

WarpParams Sym2::solve(double bx, double by) const {
  const double d = det();
  return {(yy * bx - xy * by) / d, (xx * by - xy * bx) / d};
}

void SolverOptions::validate() const {
  if (max_iters < 1) throw Error(ErrorCode::InvalidConfig, "max_iters must be >= 1");
  if (!(tol > 0.0)) throw Error(ErrorCode::InvalidConfig, "tol must be > 0");
  if (stencil_radius < 1) throw Error(ErrorCode::InvalidConfig, "stencil_radius must be >= 1");
  if (!(eps_scale >= 0.0)) throw Error(ErrorCode::InvalidConfig, "eps_scale must be >= 0");
}

const char* to_string(TrackStatus status) {
  switch (status) {
    case TrackStatus::Converged: return "Converged";
    case TrackStatus::MaxIters: return "MaxIters";
    case TrackStatus::Degenerate: return "Degenerate";
    case TrackStatus::NonFinite: return "NonFinite";
  }
  return "Unknown";
}

Sym2 gauss_newton_hessian(const PatchJacobian& jac) {
  Sym2 h;
  for (std::size_t k = 0; k < jac.rows(); ++k) {
    const double gx = jac(k, 0);
    const double gy = jac(k, 1);
    h.xx += gx * gx;
    h.xy += gx * gy;
    h.yy += gy * gy;
  }
  return h;
}

double hessian_epsilon(const Sym2& hessian, const SolverOptions& opts) {
  return opts.eps_scale * std::max(0.5 * hessian.trace(), opts.eps_floor);
}

double texture_threshold(std::size_t patch_entries, const SolverOptions& opts) {
  return opts.texture_scale * static_cast<double>(patch_entries);
}

TemplateModel precompute_template(const FeatureMap& f_t, Point x_t, const PatchStencil& stencil,
                                  const SolverOptions& opts) {
  require_finite(x_t, "template center");
  return precompute_template(f_t, map_gradient(f_t), x_t, stencil, opts);
}

TemplateModel precompute_template(const FeatureMap& f_t, const GradientMaps& grads, Point x_t,
                                  const PatchStencil& stencil, const SolverOptions& opts) {
  require_finite(x_t, "template center");
  TemplateModel tm;
  tm.center = x_t;
  tm.stencil = stencil;
  tm.template_patch = extract_patch(f_t, x_t, stencil);
  tm.jacobian = patch_jacobian(grads, x_t, stencil);
  tm.hessian = gauss_newton_hessian(tm.jacobian);
  const double tau = texture_threshold(tm.template_patch.size(), opts);
  if (!(tm.hessian.trace() >= tau)) {
    throw Error(ErrorCode::DegeneratePatch, "template trace(H) = " +
                                                std::to_string(tm.hessian.trace()) +
                                                " below texture threshold " + std::to_string(tau));
  }
  tm.epsilon = hessian_epsilon(tm.hessian, opts);
  tm.eps_scale = opts.eps_scale;
  tm.eps_floor = opts.eps_floor;
  tm.hessian_reg = {tm.hessian.xx + tm.epsilon, tm.hessian.xy, tm.hessian.yy + tm.epsilon};
  tm.hessian_inv = tm.hessian_reg.inverse();
  return tm;
}

double patch_residual(const FeatureMap& map, Point center, WarpParams p, const Patch& templ,
                      const PatchStencil& stencil) {
  const Patch warped = extract_patch(map, center + p, stencil);
  double sum = 0.0;
  for (std::size_t k = 0; k < warped.size(); ++k) {
    const double d = warped.values[k] - templ.values[k];
    sum += d * d;
  }
  return 0.5 * sum;
}

namespace {

// tol < 0 disables the stopping test.
TrackResult run_iclk(const TemplateModel& tm, const FeatureMap& f_i, WarpParams p0, int max_iters,
                     double tol) {
  if (f_i.channels() != tm.template_patch.channels) {
    throw Error(ErrorCode::ShapeMismatch, "input map channels differ from template channels");
  }
  const PatchStencil& stencil = tm.stencil;
  TrackResult res;
  res.iterates.push_back(p0);
  WarpParams p = p0;
  for (int it = 0; it < max_iters; ++it) {
    const Patch warped = extract_patch(f_i, tm.center + p, stencil);
    double bx = 0.0, by = 0.0;
    for (std::size_t k = 0; k < warped.size(); ++k) {
      const double r = warped.values[k] - tm.template_patch.values[k];
      bx += tm.jacobian(k, 0) * r;
      by += tm.jacobian(k, 1) * r;
    }
    const WarpParams dp{tm.hessian_inv.xx * bx + tm.hessian_inv.xy * by,
                        tm.hessian_inv.xy * bx + tm.hessian_inv.yy * by};
    if (!std::isfinite(dp.x) || !std::isfinite(dp.y)) {
      throw Error(ErrorCode::NonFiniteUpdate,
                  "IC-LK update is non-finite at iteration " + std::to_string(it + 1));
    }
    p = p - dp;
    res.deltas.push_back(dp);
    res.iterates.push_back(p);
    if (std::hypot(dp.x, dp.y) < tol) {
      res.converged = true;
      break;
    }
  }
  res.p_final = p;
  res.status = res.converged ? TrackStatus::Converged : TrackStatus::MaxIters;
  res.final_residual = patch_residual(f_i, tm.center, p, tm.template_patch, stencil);
  return res;
}

}  // namespace

TrackResult iclk_track(const TemplateModel& tm, const FeatureMap& f_i, WarpParams p0,
                       const SolverOptions& opts) {
  opts.validate();
  return run_iclk(tm, f_i, p0, opts.max_iters, opts.tol);
}

TrackResult iclk_track_pinned(const TemplateModel& tm, const FeatureMap& f_i, WarpParams p0,
                              int iterations) {
  return run_iclk(tm, f_i, p0, iterations, -1.0);
}

TrackResult forward_lk_track(const FeatureMap& f_t, Point x_t, const FeatureMap& f_i,
                             WarpParams p0, const PatchStencil& stencil,
                             const SolverOptions& opts) {
  opts.validate();
  require_finite(x_t, "template center");
  if (f_i.channels() != f_t.channels()) {
    throw Error(ErrorCode::ShapeMismatch, "input map channels differ from template channels");
  }
  const Patch templ = extract_patch(f_t, x_t, stencil);
  const GradientMaps grads = map_gradient(f_i);
  const double tau = texture_threshold(templ.size(), opts);

  TrackResult res;
  res.iterates.push_back(p0);
  WarpParams p = p0;
  for (int it = 0; it < opts.max_iters; ++it) {
    const PatchJacobian jac = patch_jacobian(grads, x_t + p, stencil);
    const Sym2 h = gauss_newton_hessian(jac);
    if (!(h.trace() >= tau)) {
      res.status = TrackStatus::Degenerate;
      res.p_final = p;
      res.final_residual = patch_residual(f_i, x_t, p, templ, stencil);
      return res;
    }
    const double eps = hessian_epsilon(h, opts);
    const Sym2 h_reg{h.xx + eps, h.xy, h.yy + eps};
    const Patch warped = extract_patch(f_i, x_t + p, stencil);
    double bx = 0.0, by = 0.0;
    for (std::size_t k = 0; k < warped.size(); ++k) {
      const double r = templ.values[k] - warped.values[k];
      bx += jac(k, 0) * r;
      by += jac(k, 1) * r;
    }
    const WarpParams dp = h_reg.solve(bx, by);
    if (!std::isfinite(dp.x) || !std::isfinite(dp.y)) {
      throw Error(ErrorCode::NonFiniteUpdate,
                  "forward LK update is non-finite at iteration " + std::to_string(it + 1));
    }
    p = p + dp;
    res.deltas.push_back(dp);
    res.iterates.push_back(p);
    if (std::hypot(dp.x, dp.y) < opts.tol) {
      res.converged = true;
      break;
    }
  }
  res.p_final = p;
  res.status = res.converged ? TrackStatus::Converged : TrackStatus::MaxIters;
  res.final_residual = patch_residual(f_i, x_t, p, templ, stencil);
  return res;
}

std::vector<TrackResult> track_points(const FeatureMap& f_t, const FeatureMap& f_i,
                                      const std::vector<Point>& landmarks,
                                      const PatchStencil& stencil, const SolverOptions& opts,
                                      int threads) {
  if (landmarks.empty()) {
    throw Error(ErrorCode::InvalidSpec, "track_points needs at least one landmark");
  }
  opts.validate();
  const GradientMaps grads = map_gradient(f_t);
  std::vector<TrackResult> results(landmarks.size());
  parallel_for(landmarks.size(), threads, [&](std::size_t i) {
    TrackResult& out = results[i];
    try {
      const TemplateModel tm = precompute_template(f_t, grads, landmarks[i], stencil, opts);
      out = iclk_track(tm, f_i, {}, opts);
    } catch (const Error& e) {
      out = TrackResult{};
      out.iterates.push_back({});
      if (e.code() == ErrorCode::DegeneratePatch) {
        out.status = TrackStatus::Degenerate;
      } else if (e.code() == ErrorCode::NonFiniteUpdate || e.code() == ErrorCode::InvalidPoint) {
        out.status = TrackStatus::NonFinite;
      } else {
        throw;
      }
    }
  });
  return results;
}

}  // namespace cylk
