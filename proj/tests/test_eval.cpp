#include <gtest/gtest.h>

#include <cmath>

#include "cylk/eval.hpp"
#include "cylk/feature_net.hpp"
#include "cylk/synth.hpp"
#include "test_util.hpp"

using namespace cylk;
using cylk::testing::BlobField;

namespace {

std::vector<Point> grid_points(int n, double lo, double step) {
  std::vector<Point> pts;
  for (int i = 0; i < n; ++i) pts.push_back({lo + step * (i % 5), lo + step * (i / 5)});
  return pts;
}

GroundTruth static_gt(const std::vector<Point>& pts, int frames) {
  GroundTruth gt;
  for (std::size_t j = 0; j < pts.size(); ++j) gt.ids.push_back(static_cast<int>(j));
  gt.frames.assign(frames, pts);
  return gt;
}

SynthSequence small_clean(int frames = 5) {
  SynthSpec spec = preset("CLEAN");
  spec.frames = frames;
  spec.landmarks = 10;
  return generate(spec);
}

}  // namespace

TEST(Metrics, HandCases) {
  EXPECT_DOUBLE_EQ(metric_er({0.0, 0.0}, {3.0, 4.0}), 5.0);
  EXPECT_DOUBLE_EQ(metric_ef({1.0, 1.0}, {1.0, 2.0}), 1.0);
  EXPECT_DOUBLE_EQ(metric_er({0.0, 0.0}, {3.0, 4.0}, ErrorMetric::Squared), 25.0);
  EXPECT_EQ(metric_er({2.5, -1.0}, {2.5, -1.0}), 0.0);
}

TEST(Metrics, Symmetric) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 50; ++i) {
    const Point a{u(rng), u(rng)}, b{u(rng), u(rng)};
    EXPECT_EQ(metric_er(a, b), metric_er(b, a));
    EXPECT_EQ(metric_ef(a, b, ErrorMetric::Squared), metric_ef(b, a, ErrorMetric::Squared));
  }
}

TEST(Summary, ThreeFailuresInHundred) {
  EvalReport r;
  r.has_gt = true;
  for (int i = 0; i < 100; ++i) {
    EvalEntry e;
    e.frame = 1 + i / 10;
    e.landmark = i % 10;
    e.e_r = 0.1;
    e.e_f = 0.2;
    e.failed = (i == 7 || i == 42 || i == 99);
    if (e.failed) {
      e.e_r = 9.0;
      e.e_f = 9.0;
    }
    r.entries.push_back(e);
  }
  summarize(r);
  EXPECT_EQ(r.n_total, 100u);
  EXPECT_EQ(r.n_success, 97u);
  EXPECT_EQ(r.sr, 0.97);
  EXPECT_NEAR(r.mean_er, 0.1, 1e-12);
  ASSERT_TRUE(r.mean_ef.has_value());
  EXPECT_NEAR(*r.mean_ef, 0.2, 1e-12);
}

TEST(Ope, StaticSequenceAlwaysSucceeds) {
  const FeatureMap f = BlobField(64, 64, 100, 2).render(64, 64);
  const std::vector<FeatureMap> seq(4, f);
  const auto pts = grid_points(10, 16.0, 8.0);
  const EvalReport r = ope_run(seq, pts, identity_features, static_gt(pts, 4));
  EXPECT_EQ(r.n_total, 30u);
  EXPECT_EQ(r.sr, 1.0);
  EXPECT_EQ(r.mean_er, 0.0);
  EXPECT_EQ(*r.mean_ef, 0.0);
}

TEST(Ope, CleanTranslationForwardError) {
  const SynthSequence s = small_clean(8);
  const EvalReport r = ope_run(s.frames, s.gt.frames[0], identity_features, s.gt);
  EXPECT_EQ(r.sr, 1.0);
  ASSERT_TRUE(r.mean_ef.has_value());
  EXPECT_LT(*r.mean_ef, 0.1);
  EXPECT_EQ(r.entries.size(), 70u);
  // frame-major order with ids inside a frame
  EXPECT_EQ(r.entries[0].frame, 1);
  EXPECT_EQ(r.entries[1].landmark, 1);
  EXPECT_EQ(r.entries[10].frame, 2);
}

TEST(Ope, InjectedFailuresReinitFromGroundTruth) {
  const FeatureMap f = BlobField(64, 64, 100, 3).render(64, 64);
  const std::vector<FeatureMap> seq(11, f);
  const auto pts = grid_points(10, 16.0, 8.0);
  GroundTruth gt = static_gt(pts, 11);
  // the annotation jumps by 2 px and stays there; the tracker does not move,
  // so exactly the jump frame fails and re-init puts it on the new track
  for (int t = 3; t < 11; ++t) gt.frames[t][2].x += 2.0;
  for (int t = 6; t < 11; ++t) gt.frames[t][5].y -= 2.0;
  for (int t = 9; t < 11; ++t) gt.frames[t][8].x += 2.0;
  const EvalReport r = ope_run(seq, pts, identity_features, gt);
  EXPECT_EQ(r.n_total, 100u);
  EXPECT_EQ(r.n_success, 97u);
  EXPECT_EQ(r.sr, 0.97);
  const EvalEntry& e = r.entries[(3 - 1) * 10 + 2];
  EXPECT_TRUE(e.failed);
  EXPECT_TRUE(e.reinit);
  EXPECT_EQ(e.position, gt.frames[3][2]);
  EXPECT_NEAR(*e.e_f, 2.0, 1e-12);
}

TEST(Ope, NoGroundTruthUsesReprojection) {
  const SynthSequence s = small_clean(4);
  const EvalReport r = ope_run(s.frames, s.gt.frames[0], identity_features, std::nullopt);
  EXPECT_FALSE(r.has_gt);
  EXPECT_FALSE(r.mean_ef.has_value());
  for (const auto& e : r.entries) EXPECT_FALSE(e.e_f.has_value());
  EXPECT_EQ(r.sr, 1.0);
}

TEST(Ope, MissingGroundTruth) {
  const SynthSequence s = small_clean(4);
  GroundTruth short_gt = s.gt;
  short_gt.frames.resize(2);
  try {
    ope_run(s.frames, s.gt.frames[0], identity_features, short_gt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingGroundTruth);
  }
  const std::vector<FeatureMap> flat(3, FeatureMap(40, 40, 1, 0.5));
  EvalOptions opts;
  opts.no_gt_fallback = false;
  try {
    ope_run(flat, {{20.0, 20.0}}, identity_features, std::nullopt, opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingGroundTruth);
  }
  opts.no_gt_fallback = true;
  const EvalReport r = ope_run(flat, {{20.0, 20.0}}, identity_features, std::nullopt, opts);
  EXPECT_EQ(r.sr, 0.0);
  EXPECT_TRUE(r.entries[0].reinit);
  EXPECT_EQ(r.entries[0].position, (Point{20.0, 20.0}));
}

TEST(Ope, FixedFirstPolicy) {
  const SynthSequence s = small_clean(6);
  EvalOptions opts;
  opts.policy = TemplatePolicy::FixedFirst;
  const EvalReport r = ope_run(s.frames, s.gt.frames[0], identity_features, s.gt, opts);
  EXPECT_EQ(r.policy, TemplatePolicy::FixedFirst);
  EXPECT_EQ(r.sr, 1.0);
  EXPECT_LT(*r.mean_ef, 0.1);
}

TEST(Ope, DeterministicAcrossThreads) {
  SynthSpec spec = preset("NOISE");
  spec.frames = 5;
  const SynthSequence s = generate(spec);
  EvalOptions one, many;
  many.threads = 4;
  const EvalReport a = ope_run(s.frames, s.gt.frames[0], identity_features, s.gt, one);
  const EvalReport b = ope_run(s.frames, s.gt.frames[0], identity_features, s.gt, one);
  const EvalReport c = ope_run(s.frames, s.gt.frames[0], identity_features, s.gt, many);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Aggregate, OrderedByMethodThenSequence) {
  std::vector<EvalReport> reps(3);
  reps[0].method = "raw";
  reps[0].sequence = "PHOTO";
  reps[1].method = "learned";
  reps[1].sequence = "PHOTO";
  reps[2].method = "learned";
  reps[2].sequence = "CLEAN";
  reps[2].mean_er = 0.25;
  reps[2].mean_ef = 0.5;
  reps[2].sr = 0.75;
  const auto rows = aggregate(reps);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].method, "learned");
  EXPECT_EQ(rows[0].sequence, "CLEAN");
  EXPECT_EQ(rows[0].er_mean, 0.25);
  EXPECT_EQ(rows[0].ef_mean, 0.5);
  EXPECT_EQ(rows[1].sequence, "PHOTO");
  EXPECT_EQ(rows[2].method, "raw");
  EXPECT_EQ(aggregate(reps), rows);
}
