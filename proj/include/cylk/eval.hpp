#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cylk/core.hpp"
#include "cylk/iclk.hpp"

namespace cylk {

/// Annotated landmark positions: frames[t][j] is the position of landmark
/// ids[j] in frame t.
struct GroundTruth {
  std::vector<int> ids;
  std::vector<std::vector<Point>> frames;

  bool empty() const noexcept { return frames.empty(); }
  std::size_t landmark_count() const noexcept { return ids.size(); }
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

enum class ErrorMetric { Distance, Squared };
enum class TemplatePolicy { EveryFrame, FixedFirst };

const char* to_string(ErrorMetric m);
const char* to_string(TemplatePolicy p);

/// |x_T - x_T'|: disagreement between the start point and the round trip.
double metric_er(Point x_t, Point x_t_prime, ErrorMetric metric = ErrorMetric::Distance);
/// |x_G - x_I|: forward error against ground truth.
double metric_ef(Point x_g, Point x_i, ErrorMetric metric = ErrorMetric::Distance);

struct EvalOptions {
  double threshold = 0.5;
  ErrorMetric metric = ErrorMetric::Distance;
  TemplatePolicy policy = TemplatePolicy::EveryFrame;
  // Without ground truth, re-seed failed landmarks at their forward estimate.
  bool no_gt_fallback = true;
  SolverOptions solver;
  int threads = 1;
};

struct EvalEntry {
  int frame = 0;
  int landmark = 0;  // landmark id
  double e_r = 0.0;  // NaN when tracking itself failed
  std::optional<double> e_f;
  bool failed = false;
  bool reinit = false;
  Point forward;   // x_I
  Point position;  // landmark position carried into the next frame
  friend bool operator==(const EvalEntry&, const EvalEntry&) = default;
};

struct EvalReport {
  std::string method;
  std::string sequence;
  double threshold = 0.5;
  ErrorMetric metric = ErrorMetric::Distance;
  TemplatePolicy policy = TemplatePolicy::EveryFrame;
  bool has_gt = false;
  std::vector<EvalEntry> entries;  // frame-major, landmark order within a frame
  double mean_er = 0.0;
  std::optional<double> mean_ef;
  std::size_t n_success = 0;
  std::size_t n_total = 0;
  double sr = 0.0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Recomputes the aggregate fields from the entries: S_r = N_s / N, and means
/// over entries that did not fail.
void summarize(EvalReport& report);

using FeatureExtractor = std::function<FeatureMap(const FeatureMap&)>;

/// One-pass evaluation: landmarks start at landmarks0 on frame 0 and are
/// tracked frame to frame with a forward/backward cycle. A landmark fails on a
/// frame when E_d > threshold (E_d = E_f with ground truth, E_r otherwise) and
/// is then re-initialized on that frame.
EvalReport ope_run(const std::vector<FeatureMap>& sequence, const std::vector<Point>& landmarks0,
                   const FeatureExtractor& extractor, const std::optional<GroundTruth>& gt,
                   const EvalOptions& opts = {});

struct SummaryRow {
  std::string method;
  std::string sequence;
  double er_mean = 0.0;
  std::optional<double> ef_mean;
  double sr = 0.0;
  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

/// One row per report, ordered by (method, sequence).
std::vector<SummaryRow> aggregate(const std::vector<EvalReport>& reports);

}  // namespace cylk
