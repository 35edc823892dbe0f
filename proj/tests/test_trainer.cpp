#include <gtest/gtest.h>

#include <cmath>

#include "cylk/synth.hpp"
#include "cylk/trainer.hpp"
#include "test_util.hpp"

using namespace cylk;
using cylk::testing::BlobField;
using cylk::testing::random_map;

namespace {

ConvNetParams one_param(double w) {
  ConvNetParams p;
  ConvLayerParams l;
  l.out_channels = l.in_channels = 1;
  l.kernel = 1;
  l.weights = {w};
  l.bias = {0.0};
  p.layers.push_back(l);
  return p;
}

NetSpec tiny_net() {
  NetSpec s;
  s.channels = {1, 4, 4};
  s.kernels = {3, 3};
  s.dilations = {1, 2};
  return s;
}

}  // namespace

TEST(Adam, ZeroGradientWithoutDecayIsIdentity) {
  AdamHyper h;
  h.weight_decay = 0.0;
  ConvNetParams p = init_params(tiny_net(), 1);
  const ConvNetParams before = p;
  AdamState s = AdamState::for_params(p, h);
  for (int i = 0; i < 3; ++i) adam_step(p, p.zeros_like(), s);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step, 3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  AdamHyper h;
  h.weight_decay = 0.0;
  ConvNetParams p = one_param(1.0);
  AdamState s = AdamState::for_params(p, h);
  adam_step(p, one_param(4.0), s);
  EXPECT_NEAR(1.0 - p.layers[0].weights[0], h.lr, 1e-12);
}

TEST(Adam, ThreeStepTable) {
  const AdamHyper h;
  const double grads[3] = {4.0, -1.5, 0.25};
  // hand-rolled recurrence
  double th = 0.8, m = 0.0, v = 0.0;
  double expect[3];
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    th = th - 1e-4 * 1e-6 * th;
    th = th - 1e-4 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    expect[t - 1] = th;
  }
  ConvNetParams p = one_param(0.8);
  AdamState s = AdamState::for_params(p, h);
  for (int t = 0; t < 3; ++t) {
    adam_step(p, one_param(grads[t]), s);
    EXPECT_NEAR(p.layers[0].weights[0], expect[t], 1e-12);
  }
}

TEST(Adam, LayoutMismatch) {
  ConvNetParams p = one_param(1.0);
  AdamState s = AdamState::for_params(p);
  EXPECT_THROW(adam_step(p, init_params(tiny_net(), 1), s), Error);
}

TEST(Sampling, SinglePointInsideMargin) {
  const FeatureMap f = random_map(40, 50, 1, 3);
  const PatchStencil st(7);
  const auto pts = sample_landmarks(f, 1, st, 9, 3.0);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_GE(pts[0].x, 10.0);
  EXPECT_LE(pts[0].x, 49.0 - 10.0);
  EXPECT_GE(pts[0].y, 10.0);
  EXPECT_LE(pts[0].y, 39.0 - 10.0);
}

TEST(Sampling, Deterministic) {
  const FeatureMap f = random_map(40, 40, 1, 4);
  EXPECT_EQ(sample_landmarks(f, 30, PatchStencil(5), 11), sample_landmarks(f, 30, PatchStencil(5), 11));
  EXPECT_NE(sample_landmarks(f, 30, PatchStencil(5), 11), sample_landmarks(f, 30, PatchStencil(5), 12));
}

TEST(Sampling, UniformOverRegion) {
  const FeatureMap f = random_map(40, 40, 1, 5);
  const Box box{4.0, 4.0, 36.0, 36.0};
  const int n = 3200;
  const auto pts = sample_landmarks_in(f, n, PatchStencil(2), 21, box);
  int bins[16] = {};
  for (const Point& p : pts) {
    const int bx = std::min(3, static_cast<int>((p.x - 4.0) / 8.0));
    const int by = std::min(3, static_cast<int>((p.y - 4.0) / 8.0));
    ++bins[by * 4 + bx];
  }
  const double e = n / 16.0;
  double chi2 = 0.0;
  for (int b : bins) chi2 += (b - e) * (b - e) / e;
  // 15 degrees of freedom, upper 1% point
  EXPECT_LT(chi2, 30.578);
}

TEST(Sampling, RejectsFlatRegions) {
  FeatureMap f = random_map(40, 40, 1, 6);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 20; ++x) f(y, x) = 0.5;
  const auto pts = sample_landmarks_in(f, 50, PatchStencil(2), 3, {2.0, 2.0, 37.0, 37.0});
  for (const Point& p : pts) EXPECT_GT(p.x, 15.0);
}

TEST(Sampling, EmptyRegion) {
  const FeatureMap f = random_map(12, 12, 1, 7);
  try {
    sample_landmarks(f, 5, PatchStencil(7), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MapTooSmall);
  }
}

TEST(Augment, NoOpAndDoubleFlip) {
  const FeatureMap img = random_map(11, 14, 1, 8);
  AugmentSpec none;
  none.flip_prob = none.scale_prob = none.rot_prob = 0.0;
  EXPECT_EQ(augment(img, 5, none), img);
  AugmentTransform flip;
  flip.flip = true;
  const FeatureMap once = apply_augment(img, flip);
  EXPECT_EQ(once(3, 0), img(3, 13));
  EXPECT_EQ(apply_augment(once, flip), img);
}

TEST(Augment, RotationRoundTrip) {
  const FeatureMap img = BlobField(48, 48, 60, 9, 2.5, 4.0).render(48, 48);
  AugmentTransform fwd, back;
  fwd.angle_deg = 5.0;
  back.angle_deg = -5.0;
  const FeatureMap r = apply_augment(apply_augment(img, fwd), back);
  double worst = 0.0;
  for (int y = 8; y < 40; ++y)
    for (int x = 8; x < 40; ++x) worst = std::max(worst, std::abs(r(y, x) - img(y, x)));
  EXPECT_LT(worst, 0.05);
}

TEST(Augment, DrawRespectsRanges) {
  AugmentSpec spec;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const AugmentTransform t = draw_augment(spec, seed);
    EXPECT_GE(t.scale, 0.9);
    EXPECT_LE(t.scale, 1.1);
    EXPECT_LE(std::abs(t.angle_deg), 10.0);
  }
  EXPECT_EQ(draw_augment(spec, 3).angle_deg, draw_augment(spec, 3).angle_deg);
}

TEST(Train, IdenticalFramesOnlyDecay) {
  const FeatureMap frame = BlobField(40, 40, 60, 10, 2.0, 3.5).render(40, 40);
  const Dataset data{{frame, frame, frame}};
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.landmarks_per_pair = 6;
  cfg.net = tiny_net();
  cfg.solver.stencil_radius = 4;
  cfg.seed = 3;
  const ConvNetParams init = init_params(cfg.net, 3);
  const TrainResult res = train(data, cfg, init);
  ASSERT_EQ(res.log.size(), 4u);
  for (const auto& e : res.log) {
    EXPECT_EQ(e.total, 0.0);
    EXPECT_EQ(e.cycle, 0.0);
    EXPECT_EQ(e.patch, 0.0);
  }
  const auto got = res.params.blocks();
  const auto start = init.blocks();
  for (std::size_t b = 0; b < got.size(); ++b)
    for (std::size_t k = 0; k < got[b].size(); ++k) {
      double th = start[b][k];
      for (int step = 0; step < 4; ++step) th -= cfg.adam.lr * cfg.adam.weight_decay * th;
      EXPECT_NEAR(got[b][k], th, 1e-15 * std::max(1.0, std::abs(th)));
    }
}

TEST(Train, BitReproducible) {
  SynthSpec spec = preset("PHOTO");
  spec.width = spec.height = 40;
  spec.frames = 3;
  spec.landmarks = 0;
  const Dataset data{generate(spec).frames};
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.landmarks_per_pair = 8;
  cfg.net = tiny_net();
  cfg.solver.stencil_radius = 4;
  cfg.seed = 4;
  const ConvNetParams init = init_params(cfg.net, 4);
  const TrainResult a = train(data, cfg, init);
  const TrainResult b = train(data, cfg, init);
  cfg.threads = 3;
  const TrainResult c = train(data, cfg, init);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.params, c.params);
  EXPECT_NE(a.params, init);
  ASSERT_EQ(a.log.size(), c.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].total, c.log[i].total);
}

TEST(Train, SinkSeesEveryEntry) {
  const FeatureMap frame = BlobField(40, 40, 60, 11).render(40, 40);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.landmarks_per_pair = 2;
  cfg.net = tiny_net();
  cfg.solver.stencil_radius = 4;
  int seen = 0;
  const TrainResult r = train({{frame, frame}}, cfg, init_params(cfg.net, 1),
                              [&](const TrainLogEntry& e) {
                                EXPECT_EQ(e.epoch, 1);
                                ++seen;
                              });
  EXPECT_EQ(seen, 1);
  EXPECT_EQ(r.log.size(), 1u);
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.batch_size = 2;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.lambda = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  EXPECT_THROW(train({{FeatureMap(20, 20, 1, 0.0)}}, cfg, init_params(cfg.net, 1)), Error);
}

TEST(Train, EpochMeans) {
  std::vector<TrainLogEntry> log;
  log.push_back({1, 0, 0.0, 0.0, 2.0, 0});
  log.push_back({1, 1, 0.0, 0.0, 4.0, 0});
  log.push_back({2, 0, 0.0, 0.0, 1.0, 0});
  const auto means = epoch_mean_total(log);
  ASSERT_EQ(means.size(), 2u);
  EXPECT_DOUBLE_EQ(means[0], 3.0);
  EXPECT_DOUBLE_EQ(means[1], 1.0);
}
