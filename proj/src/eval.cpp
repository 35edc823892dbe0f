#include "cylk/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cylk/grad_engine.hpp"
#include "cylk/parallel.hpp"

namespace cylk {

const char* to_string(ErrorMetric m) {
  return m == ErrorMetric::Distance ? "distance" : "squared";
}

const char* to_string(TemplatePolicy p) {
  return p == TemplatePolicy::EveryFrame ? "every-frame" : "fixed-first";
}

namespace {

double point_error(Point a, Point b, ErrorMetric metric) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double sq = dx * dx + dy * dy;
  return metric == ErrorMetric::Distance ? std::sqrt(sq) : sq;
}

Point clamp_to(const FeatureMap& map, Point p) {
  return {std::clamp(p.x, 0.0, map.width() - 1.0), std::clamp(p.y, 0.0, map.height() - 1.0)};
}

}  // namespace

double metric_er(Point x_t, Point x_t_prime, ErrorMetric metric) {
  return point_error(x_t, x_t_prime, metric);
}

double metric_ef(Point x_g, Point x_i, ErrorMetric metric) { return point_error(x_g, x_i, metric); }

void summarize(EvalReport& report) {
  report.n_total = report.entries.size();
  report.n_success = 0;
  double sum_er = 0.0, sum_ef = 0.0;
  std::size_t n_ef = 0;
  for (const EvalEntry& e : report.entries) {
    if (e.failed) continue;
    ++report.n_success;
    sum_er += e.e_r;
    if (e.e_f) {
      sum_ef += *e.e_f;
      ++n_ef;
    }
  }
  report.sr = report.n_total == 0
                  ? 0.0
                  : static_cast<double>(report.n_success) / static_cast<double>(report.n_total);
  report.mean_er = report.n_success == 0 ? 0.0 : sum_er / static_cast<double>(report.n_success);
  if (report.has_gt) {
    report.mean_ef = n_ef == 0 ? 0.0 : sum_ef / static_cast<double>(n_ef);
  } else {
    report.mean_ef.reset();
  }
}

EvalReport ope_run(const std::vector<FeatureMap>& sequence, const std::vector<Point>& landmarks0,
                   const FeatureExtractor& extractor, const std::optional<GroundTruth>& gt,
                   const EvalOptions& opts) {
  if (sequence.size() < 2) throw Error(ErrorCode::InvalidSpec, "evaluation needs at least 2 frames");
  if (!(opts.threshold > 0.0)) throw Error(ErrorCode::InvalidConfig, "threshold must be > 0");
  opts.solver.validate();
  const bool has_gt = gt.has_value() && !gt->empty();
  if (has_gt) {
    if (gt->frames.size() < sequence.size()) {
      throw Error(ErrorCode::MissingGroundTruth, "ground truth covers fewer frames than the sequence");
    }
    if (gt->landmark_count() != landmarks0.size()) {
      throw Error(ErrorCode::ShapeMismatch, "ground truth landmark count differs from the start points");
    }
  }

  std::vector<FeatureMap> features;
  std::vector<GradientMaps> grads;
  features.reserve(sequence.size());
  for (const auto& frame : sequence) {
    features.push_back(extractor(frame));
    grads.push_back(map_gradient(features.back()));
  }

  const PatchStencil stencil(opts.solver.stencil_radius);
  const std::size_t n_lm = landmarks0.size();
  std::vector<Point> current = landmarks0;
  std::vector<Point> anchor = landmarks0;
  std::vector<int> anchor_frame(n_lm, 0);

  EvalReport report;
  report.threshold = opts.threshold;
  report.metric = opts.metric;
  report.policy = opts.policy;
  report.has_gt = has_gt;

  for (std::size_t t = 1; t < sequence.size(); ++t) {
    std::vector<EvalEntry> frame_entries(n_lm);
    parallel_for(n_lm, opts.threads, [&](std::size_t j) {
      EvalEntry& e = frame_entries[j];
      e.frame = static_cast<int>(t);
      e.landmark = has_gt ? gt->ids[j] : static_cast<int>(j);
      const bool fixed = opts.policy == TemplatePolicy::FixedFirst;
      const std::size_t tf = fixed ? static_cast<std::size_t>(anchor_frame[j]) : t - 1;
      const Point x_t = fixed ? anchor[j] : current[j];
      const WarpParams p0 = fixed ? WarpParams{current[j].x - anchor[j].x, current[j].y - anchor[j].y}
                                  : WarpParams{};
      bool tracked = true;
      try {
        const CycleRecord rec = cycle_forward(features[tf], grads[tf], features[t], grads[t], x_t,
                                              stencil, opts.solver, p0);
        e.forward = rec.x_i;
        e.e_r = metric_er(rec.x_t, rec.x_t_prime, opts.metric);
      } catch (const Error& err) {
        if (err.code() != ErrorCode::DegeneratePatch && err.code() != ErrorCode::NonFiniteUpdate) {
          throw;
        }
        tracked = false;
        e.forward = current[j];
        e.e_r = std::numeric_limits<double>::quiet_NaN();
      }
      if (has_gt) {
        const Point x_g = gt->frames[t][j];
        e.e_f = tracked ? metric_ef(x_g, e.forward, opts.metric)
                        : std::numeric_limits<double>::quiet_NaN();
      }
      const double e_d = has_gt ? *e.e_f : e.e_r;
      e.failed = !tracked || !(e_d <= opts.threshold);
      e.position = e.forward;
    });

    for (std::size_t j = 0; j < n_lm; ++j) {
      EvalEntry& e = frame_entries[j];
      if (e.failed) {
        if (has_gt) {
          e.position = gt->frames[t][j];
        } else if (opts.no_gt_fallback) {
          e.position = clamp_to(sequence[t], e.forward);
        } else {
          throw Error(ErrorCode::MissingGroundTruth,
                      "landmark " + std::to_string(e.landmark) + " failed on frame " +
                          std::to_string(t) + " and no ground truth is available");
        }
        e.reinit = true;
        anchor[j] = e.position;
        anchor_frame[j] = static_cast<int>(t);
      }
      current[j] = e.position;
      report.entries.push_back(e);
    }
  }
  summarize(report);
  return report;
}

std::vector<SummaryRow> aggregate(const std::vector<EvalReport>& reports) {
  std::vector<SummaryRow> rows;
  rows.reserve(reports.size());
  for (const auto& r : reports) {
    rows.push_back({r.method, r.sequence, r.mean_er, r.mean_ef, r.sr});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
    return std::tie(a.method, a.sequence) < std::tie(b.method, b.sequence);
  });
  return rows;
}

}  // namespace cylk
