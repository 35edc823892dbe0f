#include "cylk/trainer.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "cylk/parallel.hpp"

namespace cylk {

AdamState AdamState::for_params(const ConvNetParams& params, const AdamHyper& hyper) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  s.hyper = hyper;
  return s;
}

void adam_step(ConvNetParams& params, const ConvNetParams& grads, AdamState& state) {
  auto p = params.blocks();
  const auto g = grads.blocks();
  auto m = state.m.blocks();
  auto v = state.v.blocks();
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw Error(ErrorCode::ShapeMismatch, "Adam parameter, gradient and moment layouts differ");
  }
  for (std::size_t b = 0; b < p.size(); ++b) {
    if (g[b].size() != p[b].size() || m[b].size() != p[b].size() || v[b].size() != p[b].size()) {
      throw Error(ErrorCode::ShapeMismatch, "Adam parameter, gradient and moment layouts differ");
    }
  }
  const AdamHyper& h = state.hyper;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t b = 0; b < p.size(); ++b) {
    for (std::size_t k = 0; k < p[b].size(); ++k) {
      const double gk = g[b][k];
      m[b][k] = h.beta1 * m[b][k] + (1.0 - h.beta1) * gk;
      v[b][k] = h.beta2 * v[b][k] + (1.0 - h.beta2) * gk * gk;
      p[b][k] -= h.lr * h.weight_decay * p[b][k];
      const double m_hat = m[b][k] / bc1;
      const double v_hat = v[b][k] / bc2;
      p[b][k] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
    }
  }
}

Box margin_box(const FeatureMap& map, double margin) {
  return {margin, margin, map.width() - 1.0 - margin, map.height() - 1.0 - margin};
}

std::vector<Point> sample_landmarks(const FeatureMap& f_t, int n, const PatchStencil& stencil,
                                    std::uint64_t seed, double max_motion,
                                    const SolverOptions& opts) {
  return sample_landmarks_in(f_t, n, stencil, seed,
                             margin_box(f_t, stencil.radius() + max_motion), opts);
}

std::vector<Point> sample_landmarks_in(const FeatureMap& f_t, int n, const PatchStencil& stencil,
                                       std::uint64_t seed, const Box& region,
                                       const SolverOptions& opts) {
  if (region.empty()) {
    throw Error(ErrorCode::MapTooSmall, "landmark sampling region is empty for a " +
                                            std::to_string(f_t.width()) + "x" +
                                            std::to_string(f_t.height()) + " map");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(region.x0, std::nextafter(region.x1, region.x1 + 1.0));
  std::uniform_real_distribution<double> uy(region.y0, std::nextafter(region.y1, region.y1 + 1.0));
  const GradientMaps grads = map_gradient(f_t);
  const double tau =
      texture_threshold(stencil.count() * static_cast<std::size_t>(f_t.channels()), opts);

  std::vector<Point> points;
  points.reserve(n);
  int rejections = 0;
  while (static_cast<int>(points.size()) < n) {
    const Point p{ux(rng), uy(rng)};
    if (rejections < 10 * n) {
      const Sym2 h = gauss_newton_hessian(patch_jacobian(grads, p, stencil));
      if (!(h.trace() >= tau)) {
        ++rejections;
        continue;
      }
    }
    points.push_back(p);
  }
  return points;
}

AugmentTransform draw_augment(const AugmentSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentTransform t;
  // Every draw is consumed regardless of outcome so the stream layout is fixed.
  const double u_flip = unit(rng);
  const double u_scale = unit(rng);
  const double u_scale_v = unit(rng);
  const double u_rot = unit(rng);
  const double u_rot_v = unit(rng);
  t.flip = u_flip < spec.flip_prob;
  if (u_scale < spec.scale_prob) t.scale = spec.scale_lo + (spec.scale_hi - spec.scale_lo) * u_scale_v;
  if (u_rot < spec.rot_prob) t.angle_deg = spec.rot_range_deg * (2.0 * u_rot_v - 1.0);
  return t;
}

FeatureMap apply_augment(const FeatureMap& image, const AugmentTransform& t) {
  if (t.identity()) return image;
  const double cx = 0.5 * (image.width() - 1);
  const double cy = 0.5 * (image.height() - 1);
  const double a = t.angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a);
  const double sa = std::sin(a);
  FeatureMap out(image.height(), image.width(), image.channels());
  std::vector<double> v(image.channels());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      // Inverse of: flip about the center, then scale and rotate about it.
      const double ux = x - cx;
      const double uy = y - cy;
      double sx = (ca * ux + sa * uy) / t.scale;
      const double sy = (-sa * ux + ca * uy) / t.scale;
      if (t.flip) sx = -sx;
      bilinear_sample_into(image, {cx + sx, cy + sy}, v);
      for (int c = 0; c < image.channels(); ++c) out(y, x, c) = v[c];
    }
  }
  return out;
}

FeatureMap augment(const FeatureMap& image, std::uint64_t seed, const AugmentSpec& spec) {
  return apply_augment(image, draw_augment(spec, seed));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
  if (batch_size != 1) throw Error(ErrorCode::InvalidConfig, "only batch_size 1 is supported");
  if (landmarks_per_pair < 1) throw Error(ErrorCode::InvalidConfig, "landmarks_per_pair must be >= 1");
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidConfig, "lambda must be >= 0");
  if (!(adam.lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "lr must be > 0");
  solver.validate();
  net.validate();
}

namespace {

// Independent, reproducible stream per (epoch, pair, purpose).
std::uint64_t derive_seed(std::uint64_t base, int epoch, int pair, int purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(pair),
                    static_cast<std::uint32_t>(purpose)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct LandmarkCycle {
  bool valid = false;
  CycleRecord rec;
  LossBreakdown loss;
};

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, ConvNetParams init,
                  const TrainLogSink& sink) {
  cfg.validate();
  init.validate();
  bool any_pair = false;
  for (const auto& seq : dataset) any_pair = any_pair || seq.size() >= 2;
  if (!any_pair) throw Error(ErrorCode::InvalidConfig, "training needs at least one frame pair");

  TrainResult result;
  result.params = std::move(init);
  AdamState adam = AdamState::for_params(result.params, cfg.adam);
  const PatchStencil stencil(cfg.solver.stencil_radius);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    int pair_index = 0;
    for (std::size_t s = 0; s < dataset.size(); ++s) {
      const auto& frames = dataset[s];
      for (std::size_t f = 1; f < frames.size(); ++f, ++pair_index) {
        FeatureMap image_t = frames[f - 1];
        FeatureMap image_i = frames[f];
        if (cfg.augment) {
          const AugmentTransform tr =
              draw_augment(cfg.aug, derive_seed(cfg.seed, epoch, pair_index, 0));
          image_t = apply_augment(image_t, tr);
          image_i = apply_augment(image_i, tr);
        }
        const FeatureTrace trace_t = extract_features_traced(image_t, result.params);
        const FeatureTrace trace_i = extract_features_traced(image_i, result.params);
        const FeatureMap& f_t = trace_t.output;
        const FeatureMap& f_i = trace_i.output;
        const GradientMaps grads_t = map_gradient(f_t);
        const GradientMaps grads_i = map_gradient(f_i);
        const std::vector<Point> landmarks =
            sample_landmarks(f_t, cfg.landmarks_per_pair, stencil,
                             derive_seed(cfg.seed, epoch, pair_index, 1), cfg.max_motion, cfg.solver);

        std::vector<LandmarkCycle> cycles(landmarks.size());
        parallel_for(landmarks.size(), cfg.threads, [&](std::size_t k) {
          try {
            cycles[k].rec =
                cycle_forward(f_t, grads_t, f_i, grads_i, landmarks[k], stencil, cfg.solver);
            cycles[k].loss = total_loss(cycles[k].rec, cfg.lambda);
            cycles[k].valid = true;
          } catch (const Error& e) {
            if (e.code() != ErrorCode::DegeneratePatch && e.code() != ErrorCode::NonFiniteUpdate) {
              throw;
            }
          }
        });

        TrainLogEntry entry;
        entry.epoch = epoch;
        entry.pair = pair_index;
        MapAdjoints adjoints(f_t, f_i);
        int used = 0;
        for (std::size_t k = 0; k < cycles.size(); ++k) {
          if (!cycles[k].valid) {
            ++entry.degenerate_count;
            continue;
          }
          const LossBreakdown& l = cycles[k].loss;
          if (!std::isfinite(l.total)) {
            throw Error(ErrorCode::NonFiniteGradient,
                        "non-finite loss at epoch " + std::to_string(epoch) + ", pair " +
                            std::to_string(pair_index) + ", landmark " + std::to_string(k));
          }
          entry.cycle += l.cycle;
          entry.patch += l.patch;
          entry.total += l.total;
          ++used;
          adjoints.accumulate(cycles[k].rec, f_t, grads_t, f_i, grads_i,
                              LossWeights{1.0, cfg.lambda});
        }
        if (used > 0) {
          entry.cycle /= used;
          entry.patch /= used;
          entry.total /= used;
        }

        auto [d_t, d_i] = adjoints.finalize();
        GradientBundle g{std::move(d_t), std::move(d_i), result.params.zeros_like()};
        extract_features_backward(trace_t, result.params, g.d_f_t, g.d_params);
        extract_features_backward(trace_i, result.params, g.d_f_i, g.d_params);
        if (!g.d_f_t.all_finite() || !g.d_f_i.all_finite() || !g.d_params.all_finite()) {
          // Locate the first landmark whose own gradient is non-finite.
          for (std::size_t k = 0; k < cycles.size(); ++k) {
            if (!cycles[k].valid) continue;
            const auto [a, b] =
                map_backward(cycles[k].rec, f_t, f_i, LossWeights{1.0, cfg.lambda});
            if (!a.all_finite() || !b.all_finite()) {
              throw Error(ErrorCode::NonFiniteGradient,
                          "epoch " + std::to_string(epoch) + ", pair " +
                              std::to_string(pair_index) + " (sequence " + std::to_string(s) +
                              ", frames " + std::to_string(f - 1) + "-" + std::to_string(f) +
                              "), landmark " + std::to_string(k));
            }
          }
          throw Error(ErrorCode::NonFiniteGradient,
                      "epoch " + std::to_string(epoch) + ", pair " + std::to_string(pair_index) +
                          ": parameter gradient is non-finite");
        }
        adam_step(result.params, g.d_params, adam);
        result.log.push_back(entry);
        if (sink) sink(entry);
      }
    }
  }
  return result;
}

std::vector<double> epoch_mean_total(const std::vector<TrainLogEntry>& log) {
  std::vector<double> sums;
  std::vector<int> counts;
  for (const auto& e : log) {
    if (e.epoch < 1) continue;
    if (static_cast<int>(sums.size()) < e.epoch) {
      sums.resize(e.epoch, 0.0);
      counts.resize(e.epoch, 0);
    }
    sums[e.epoch - 1] += e.total;
    counts[e.epoch - 1] += 1;
  }
  for (std::size_t i = 0; i < sums.size(); ++i) {
    if (counts[i] > 0) sums[i] /= counts[i];
  }
  return sums;
}

}  // namespace cylk
