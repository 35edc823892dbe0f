// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>

#include "cylk/cli.hpp"
#include "cylk/eval.hpp"
#include "cylk/grad_engine.hpp"
#include "cylk/io.hpp"
#include "cylk/synth.hpp"
#include "cylk/trainer.hpp"
#include "test_util.hpp"

using namespace cylk;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  fmt::print("criterion {} [{}]: {} ({}; {:.1f} s)\n", id, name, o.pass ? "PASS" : "FAIL", o.detail,
             seconds_since(t0));
  std::fflush(stdout);
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    worst = std::max(worst, run_gradcheck(make_gradcheck_instance(seed)).max_rel_error);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0,
          fmt::format("max rel error {:.3g} over seeds 1-10, need < 1e-4 in < 30 s", worst)};
}

Outcome translation_recovery() {
  const auto t0 = Clock::now();
  const SynthSpec spec = preset("CLEAN");
  const SynthSequence seq = generate(spec);
  double max_step = 0.0;
  for (std::size_t t = 1; t < seq.transforms.size(); ++t) {
    const Point d = seq.transforms[t].shift - seq.transforms[t - 1].shift;
    max_step = std::max(max_step, std::hypot(d.x, d.y));
  }
  const EvalReport r = ope_run(seq.frames, seq.gt.frames[0], identity_features, seq.gt);
  const double secs = seconds_since(t0);
  const double ef = r.mean_ef.value_or(1e9);
  return {max_step <= 3.0 && ef < 0.05 && r.sr == 1.0 && secs < 10.0,
          fmt::format("mean E_f {:.4g} px (< 0.05), S_r {} (= 1), largest step {:.3g} px", ef, r.sr,
                      max_step)};
}

double max_abs(const FeatureMap& m) {
  double a = 0.0;
  for (double v : m.values()) a = std::max(a, std::abs(v));
  return a;
}

Outcome identity_cycle() {
  const auto t0 = Clock::now();
  const SynthSequence seq = generate(preset("CLEAN"));
  const FeatureMap& img = seq.frames[0];
  const ConvNetParams params = init_params(NetSpec{}, 11);
  const FeatureTrace trace = extract_features_traced(img, params);
  const PatchStencil stencil(7);
  bool ok = true;
  double worst = 0.0;
  for (const Point& x : seq.gt.frames[0]) {
    const CycleRecord rec = cycle_forward(trace.output, trace.output, x, stencil);
    const LossBreakdown l = total_loss(rec, 1.0);
    const GradientBundle g = backward(rec, l, trace, trace, params);
    double gmax = std::max(max_abs(g.d_f_t), max_abs(g.d_f_i));
    for (const auto& b : g.d_params.blocks())
      for (double v : b) gmax = std::max(gmax, std::abs(v));
    worst = std::max({worst, gmax, l.cycle, l.patch});
    ok = ok && rec.x_t_prime == rec.x_t && rec.x_i == rec.x_t && l.cycle == 0.0 && l.patch == 0.0 &&
         gmax == 0.0;
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 1.0,
          fmt::format("{} landmarks, largest loss or gradient entry {:.3g}, need exactly 0 in < 1 s",
                      seq.gt.frames[0].size(), worst)};
}

Outcome solver_agreement() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const PatchStencil stencil(7);
  const Point x{24.0, 24.0};
  double worst = 0.0;
  int converged = 0;
  for (int i = 0; i < 100; ++i) {
    const double dx = u(rng), dy = u(rng);
    const cylk::testing::BlobField field(48, 48, 60, 500 + i, 2.5, 4.0);
    const FeatureMap ft = field.render(48, 48), fi = field.render(48, 48, dx, dy);
    const TrackResult inv = iclk_track(precompute_template(ft, x, stencil), fi, {});
    const TrackResult fwd = forward_lk_track(ft, x, fi, {}, stencil);
    if (inv.converged && fwd.converged) ++converged;
    worst = std::max({worst, std::abs(inv.p_final.x - fwd.p_final.x),
                      std::abs(inv.p_final.y - fwd.p_final.y)});
  }
  const double secs = seconds_since(t0);
  return {worst < 5e-3 && secs < 30.0,
          fmt::format("largest componentwise gap {:.3g} px over 100 instances ({} both converged), "
                      "need < 5e-3",
                      worst, converged)};
}

struct TrainingRun {
  std::vector<double> epoch_means;
  EvalReport raw;
  EvalReport trained;
};

TrainingRun photo_training_run() {
  Dataset data;
  for (std::uint64_t s = 1000; s < 1004; ++s) {
    SynthSpec spec = preset("PHOTO");
    spec.seed = s;
    data.push_back(generate(spec).frames);
  }
  TrainConfig cfg;
  cfg.seed = 5;
  const TrainResult res = train(data, cfg, init_params(cfg.net, 5));

  const SynthSequence held = generate(preset("PHOTO"));
  TrainingRun run;
  run.epoch_means = epoch_mean_total(res.log);
  run.raw = ope_run(held.frames, held.gt.frames[0], identity_features, held.gt);
  const ConvNetParams params = res.params;
  run.trained = ope_run(held.frames, held.gt.frames[0],
                        [&](const FeatureMap& f) { return extract_features(f, params); }, held.gt);
  return run;
}

Outcome directional_reproduction(const TrainingRun& run) {
  const double er_raw = run.raw.mean_er, er_tr = run.trained.mean_er;
  return {er_tr <= 0.5 * er_raw && run.trained.sr >= run.raw.sr,
          fmt::format("held-out PHOTO: E_r trained {:.4g} vs raw {:.4g} (need <= {:.4g}), S_r trained "
                      "{:.4g} vs raw {:.4g}",
                      er_tr, er_raw, 0.5 * er_raw, run.trained.sr, run.raw.sr)};
}

Outcome loss_trend(const TrainingRun& run) {
  if (run.epoch_means.size() < 20) return {false, "fewer than 20 epochs logged"};
  const double first = run.epoch_means.front(), last = run.epoch_means[19];
  return {last < first, fmt::format("epoch-mean total loss {:.4g} at epoch 1, {:.4g} at epoch 20", first, last)};
}

Outcome metric_identities() {
  const auto t0 = Clock::now();
  const cylk::testing::BlobField field(64, 64, 100, 3);
  const std::vector<FeatureMap> seq(11, field.render(64, 64));
  GroundTruth gt;
  std::vector<Point> start;
  for (int j = 0; j < 10; ++j) {
    gt.ids.push_back(j);
    start.push_back({16.0 + 8.0 * (j % 5), 16.0 + 8.0 * (j / 5)});
  }
  gt.frames.assign(11, start);
  for (int t = 3; t < 11; ++t) gt.frames[t][2].x += 2.0;
  for (int t = 6; t < 11; ++t) gt.frames[t][5].y -= 2.0;
  for (int t = 9; t < 11; ++t) gt.frames[t][8].x += 2.0;
  const EvalReport r = ope_run(seq, start, identity_features, gt);
  const double er = metric_er({0.0, 0.0}, {3.0, 4.0});
  const double ef = metric_ef({1.0, 1.0}, {1.0, 2.0});
  const double secs = seconds_since(t0);
  return {r.n_total == 100 && r.sr == 0.97 && er == 5.0 && ef == 1.0 && secs < 1.0,
          fmt::format("S_r {} over {} landmark-frames (= 0.97), E_r(0,0;3,4) {} (= 5), "
                      "E_f(1,1;1,2) {} (= 1)",
                      r.sr, r.n_total, er, ef)};
}

int run_quiet(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  if (out) *out = o.str();
  return code;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "cylk_acceptance";
  fs::remove_all(root);
  if (run_quiet({"--seed", "21", "--out", (root / "seq").string(), "synth", "--preset", "PHOTO"}) != 0)
    return {false, "synth failed"};
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    fs::create_directories(dir);
    const std::vector<std::string> train_args{
        "--seed", "8", "--out", dir.string(), "train", "--data", (root / "seq").string(),
        "--epochs", "2", "--landmarks-per-pair", "20", "--log", (dir / "train.ndjson").string()};
    if (run_quiet(train_args) != 0) return {false, "train failed"};
    const std::vector<std::string> eval_args{
        "--seed", "8", "--out", (dir / "eval").string(), "eval", "--data", (root / "seq").string(),
        "--load-weights", (dir / "weights.ckpt").string()};
    if (run_quiet(eval_args) != 0) return {false, "eval failed"};
  }
  bool same = true;
  std::string detail;
  for (const fs::path rel : {fs::path("weights.ckpt"), fs::path("train.ndjson"),
                             fs::path("eval/report.json"), fs::path("eval/summary.csv")}) {
    const bool eq = read_file(root / "a" / rel) == read_file(root / "b" / rel);
    same = same && eq;
    detail += fmt::format("{}{} {}", detail.empty() ? "" : ", ", rel.string(), eq ? "identical" : "DIFFERS");
  }
  fs::remove_all(root);
  return {same, detail};
}

}  // namespace

int main() {
  report(1, "gradient correctness", gradient_correctness);
  report(2, "pure-translation recovery", translation_recovery);
  report(3, "identity cycle", identity_cycle);
  report(4, "forward/inverse agreement", solver_agreement);

  const auto t0 = Clock::now();
  TrainingRun run;
  std::string train_error;
  try {
    run = photo_training_run();
  } catch (const std::exception& e) {
    train_error = e.what();
  }
  fmt::print("(PHOTO training run and evaluation: {:.1f} s)\n", seconds_since(t0));
  report(5, "directional reproduction", [&]() -> Outcome {
    if (!train_error.empty()) return {false, "training failed: " + train_error};
    return directional_reproduction(run);
  });
  report(6, "training loss trend", [&]() -> Outcome {
    if (!train_error.empty()) return {false, "training failed: " + train_error};
    return loss_trend(run);
  });
  report(7, "metric identities", metric_identities);
  report(8, "determinism", determinism);

  fmt::print("{} of 8 criteria passed\n", 8 - failures);
  return failures == 0 ? 0 : 1;
}
