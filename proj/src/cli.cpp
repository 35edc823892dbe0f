#include "cylk/cli.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>

#include "CLI11.hpp"
#include "cylk/eval.hpp"
#include "cylk/feature_net.hpp"
#include "cylk/grad_engine.hpp"
#include "cylk/iclk.hpp"
#include "cylk/io.hpp"
#include "cylk/synth.hpp"
#include "cylk/trainer.hpp"

namespace cylk {

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  int threads = 1;
  bool timestamps = false;

  // synth
  std::string preset = "CLEAN";
  int frames = 0;
  int landmarks = -1;
  int width = 0;
  int height = 0;

  // shared paths
  std::string out;
  std::vector<std::string> data;
  std::string load_weights;
  std::string save_weights;
  bool identity = false;

  // track
  std::string template_image;
  std::string input_image;
  std::string landmark_file;
  std::string overlay;

  // train
  int sequences = 4;
  int epochs = 0;
  int landmarks_per_pair = 0;
  double lambda = 1.0;
  double lr = 0.0;
  bool no_augment = false;
  std::string log;

  // eval
  std::string gt;
  bool no_gt = false;
  std::string method;
  double threshold = 0.5;
  std::string metric;
  std::string policy;
  int count = 20;
  bool overlays = false;

  // gradcheck
  int instances = 1;
  double h = 1e-5;
  double tol = 1e-4;
  std::string dump;
};

int env_threads() {
  const char* v = std::getenv("CYLK_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) {
    throw Error(ErrorCode::InvalidConfig, fmt::format("CYLK_THREADS='{}' is not a thread count", v));
  }
  return static_cast<int>(n);
}

std::string now_iso8601() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool flag_given(const CLI::App& app, const char* flag) {
  const CLI::Option* opt = app.get_option_no_throw(flag);
  return opt != nullptr && opt->count() > 0;
}

struct Context {
  CLI::App& app;
  CLI::App* sub;
  const Options& o;
  RunConfig cfg;
  std::ostream& out;
  std::ostream& err;

  bool given(const char* flag) const { return flag_given(*sub, flag) || flag_given(app, flag); }
};

// Config file first, then explicit flags on top.
RunConfig resolve_config(const CLI::App& app, const CLI::App& sub, const Options& o) {
  RunConfig cfg;
  cfg.threads = env_threads();
  if (!o.config.empty()) apply_config_file(o.config, cfg);
  auto given = [&](const char* flag) { return flag_given(sub, flag) || flag_given(app, flag); };
  if (given("--seed")) cfg.seed = o.seed;
  if (given("--threads")) {
    if (o.threads < 1) throw Error(ErrorCode::InvalidConfig, "--threads must be >= 1");
    cfg.threads = o.threads;
  }
  if (given("--out")) cfg.output_dir = o.out;
  TrainConfig& t = cfg.train;
  t.seed = cfg.seed;
  t.threads = cfg.threads;
  if (given("--epochs")) t.epochs = o.epochs;
  if (given("--landmarks-per-pair")) t.landmarks_per_pair = o.landmarks_per_pair;
  if (given("--lambda")) t.lambda = o.lambda;
  if (given("--lr")) t.adam.lr = o.lr;
  if (given("--no-augment")) t.augment = false;
  cfg.eval.solver = t.solver;
  cfg.eval.threads = cfg.threads;
  if (given("--threshold")) cfg.eval.threshold = o.threshold;
  if (given("--metric")) {
    cfg.eval.metric = o.metric == "squared" ? ErrorMetric::Squared : ErrorMetric::Distance;
  }
  if (given("--policy")) {
    cfg.eval.policy = o.policy == "fixed-first" ? TemplatePolicy::FixedFirst : TemplatePolicy::EveryFrame;
  }
  return cfg;
}

fs::path require_out(const Context& c, const char* what) {
  if (c.cfg.output_dir.empty()) {
    throw CLI::RequiredError(fmt::format("--out ({})", what));
  }
  return c.cfg.output_dir;
}

FeatureExtractor make_extractor(const Context& c, std::optional<ConvNetParams>& params) {
  if (!c.o.load_weights.empty()) {
    params = load_checkpoint(c.o.load_weights);
    const ConvNetParams* p = &*params;
    return [p](const FeatureMap& img) { return extract_features(img, *p); };
  }
  return [](const FeatureMap& img) { return identity_features(img); };
}

// ---- synth ----

int cmd_synth(Context& c) {
  SynthSpec spec = preset(c.o.preset);
  if (c.given("--seed")) spec.seed = c.cfg.seed;
  if (c.given("--frames")) spec.frames = c.o.frames;
  if (c.given("--landmarks")) spec.landmarks = c.o.landmarks;
  if (c.given("--width")) spec.width = c.o.width;
  if (c.given("--height")) spec.height = c.o.height;
  spec.stencil_radius = c.cfg.train.solver.stencil_radius;
  const fs::path dir = require_out(c, "sequence directory");
  const SynthSequence seq = generate(spec);
  save_sequence(seq, spec, dir, c.o.preset);
  fmt::print(c.out, "wrote {} frames and {} landmarks to {}\n", seq.frames.size(),
             seq.gt.landmark_count(), dir.string());
  return 0;
}

// ---- track ----

int cmd_track(Context& c) {
  std::optional<ConvNetParams> params;
  const FeatureExtractor extract = make_extractor(c, params);
  const FeatureMap img_t = load_image(c.o.template_image);
  const FeatureMap img_i = load_image(c.o.input_image);
  if (!img_t.same_shape(img_i)) throw Error(ErrorCode::ShapeMismatch, "template and input images differ in size");
  const GroundTruth lm = load_landmarks(c.o.landmark_file);
  if (lm.empty()) throw Error(ErrorCode::InvalidSpec, "landmark file has no rows");
  const FeatureMap f_t = extract(img_t);
  const FeatureMap f_i = extract(img_i);
  const PatchStencil stencil(c.cfg.eval.solver.stencil_radius);
  const std::vector<Point>& start = lm.frames.front();
  const auto results = track_points(f_t, f_i, start, stencil, c.cfg.eval.solver, c.cfg.threads);

  std::string csv = "id,x_t,y_t,x_i,y_i,status,iterations\n";
  GroundTruth tracked;
  tracked.ids = lm.ids;
  tracked.frames = {start, {}};
  for (std::size_t j = 0; j < results.size(); ++j) {
    const Point x_i = start[j] + results[j].p_final;
    tracked.frames[1].push_back(x_i);
    csv += fmt::format("{},{},{},{},{},{},{}\n", lm.ids[j], format_real(start[j].x),
                       format_real(start[j].y), format_real(x_i.x), format_real(x_i.y),
                       to_string(results[j].status), results[j].iterations());
  }
  if (!c.cfg.output_dir.empty()) {
    write_file(c.cfg.output_dir, csv);
  } else {
    c.out << csv;
  }
  if (!c.o.overlay.empty()) {
    save_overlay(img_i, tracked.frames[1], c.o.overlay, stencil.radius());
  }
  return 0;
}

// ---- train ----

Dataset training_data(const Context& c, std::string& description) {
  Dataset data;
  if (!c.o.data.empty()) {
    for (const auto& dir : c.o.data) data.push_back(load_sequence(dir));
    description = fmt::format("{} sequence directories", data.size());
    return data;
  }
  if (c.o.sequences < 1) throw Error(ErrorCode::InvalidConfig, "--sequences must be >= 1");
  SynthSpec spec = preset(c.o.preset);
  std::seed_seq seq{c.cfg.seed, static_cast<std::uint64_t>(0x7261696EULL)};
  std::vector<std::uint32_t> seeds(static_cast<std::size_t>(c.o.sequences) * 2);
  seq.generate(seeds.begin(), seeds.end());
  for (int k = 0; k < c.o.sequences; ++k) {
    spec.seed = (static_cast<std::uint64_t>(seeds[2 * k]) << 32) | seeds[2 * k + 1];
    data.push_back(generate(spec).frames);
  }
  description = fmt::format("{} generated {} sequences", c.o.sequences, c.o.preset);
  return data;
}

int cmd_train(Context& c) {
  const TrainConfig& tc = c.cfg.train;
  tc.validate();
  std::string what;
  const Dataset data = training_data(c, what);
  ConvNetParams init = c.o.load_weights.empty() ? init_params(tc.net, c.cfg.seed)
                                                : load_checkpoint(c.o.load_weights);
  const fs::path weights = c.o.save_weights.empty()
                               ? require_out(c, "checkpoint directory") / "weights.ckpt"
                               : fs::path(c.o.save_weights);
  if (c.o.save_weights.empty()) fs::create_directories(weights.parent_path());

  std::ofstream log_file;
  std::ostream* log = &c.out;
  if (!c.o.log.empty()) {
    log_file.open(c.o.log, std::ios::trunc);
    if (!log_file) throw Error(ErrorCode::IoError, "cannot open log '" + c.o.log + "'");
    log = &log_file;
  }
  const TrainResult res = train(data, tc, std::move(init), [&](const TrainLogEntry& e) {
    *log << format_log_entry(e) << '\n';
  });
  save_checkpoint(res.params, weights);
  const auto means = epoch_mean_total(res.log);
  if (!means.empty()) {
    fmt::print(c.err, "trained on {}: epoch 1 mean total {}, epoch {} mean total {}; weights in {}\n",
               what, format_real(means.front()), means.size(), format_real(means.back()),
               weights.string());
  }
  return 0;
}

// ---- eval ----

int cmd_eval(Context& c) {
  if (c.o.data.size() != 1) throw CLI::ValidationError("--data", "eval takes exactly one sequence directory");
  const fs::path seq_dir = c.o.data.front();
  const std::vector<FeatureMap> frames = load_sequence(seq_dir);
  std::optional<ConvNetParams> params;
  const FeatureExtractor extract = make_extractor(c, params);

  std::optional<GroundTruth> gt;
  if (!c.o.no_gt) {
    if (!c.o.gt.empty()) {
      gt = load_landmarks(c.o.gt);
    } else if (fs::exists(seq_dir / "gt.csv")) {
      gt = load_landmarks(seq_dir / "gt.csv");
    }
    if (gt && gt->empty()) gt.reset();
  }
  std::vector<Point> start;
  std::vector<int> ids;
  if (!c.o.landmark_file.empty()) {
    const GroundTruth lm = load_landmarks(c.o.landmark_file);
    if (lm.empty()) throw Error(ErrorCode::InvalidSpec, "landmark file has no rows");
    start = lm.frames.front();
    ids = lm.ids;
    if (gt && gt->ids != ids) {
      throw Error(ErrorCode::ShapeMismatch, "landmark file ids differ from the ground truth ids");
    }
  } else if (gt) {
    start = gt->frames.front();
  } else {
    start = sample_landmarks(extract(frames.front()), c.o.count,
                             PatchStencil(c.cfg.eval.solver.stencil_radius), c.cfg.seed, 0.0,
                             c.cfg.eval.solver);
  }

  EvalReport report = ope_run(frames, start, extract, gt, c.cfg.eval);
  if (!gt && !ids.empty()) {
    for (auto& e : report.entries) e.landmark = ids[static_cast<std::size_t>(e.landmark)];
  }
  report.method = !c.o.method.empty() ? c.o.method : (params ? "learned" : "raw");
  report.sequence = fs::path(seq_dir).lexically_normal().filename().string();
  if (report.sequence.empty()) report.sequence = fs::path(seq_dir).lexically_normal().parent_path().filename().string();

  const fs::path dir = require_out(c, "report directory");
  fs::create_directories(dir);
  save_report(report, dir / "report.json",
              c.o.timestamps ? std::optional<std::string>(now_iso8601()) : std::nullopt);
  save_summary(aggregate({report}), dir / "summary.csv");
  if (c.o.overlays) {
    std::vector<std::vector<Point>> positions(frames.size());
    positions[0] = start;
    for (const auto& e : report.entries) positions[static_cast<std::size_t>(e.frame)].push_back(e.forward);
    for (std::size_t t = 0; t < frames.size(); ++t) {
      save_overlay(frames[t], positions[t], dir / fmt::format("overlay_{:04d}.ppm", t),
                   c.cfg.eval.solver.stencil_radius);
    }
  }
  fmt::print(c.out, "{} {}: Er_mean {} Ef_mean {} Sr {} ({}/{})\n", report.method, report.sequence,
             format_real(report.mean_er), report.mean_ef ? format_real(*report.mean_ef) : "-",
             format_real(report.sr), report.n_success, report.n_total);
  return 0;
}

// ---- gradcheck ----

int cmd_gradcheck(Context& c) {
  if (c.o.instances < 1) throw Error(ErrorCode::InvalidConfig, "--instances must be >= 1");
  if (!(c.o.h > 0.0)) throw Error(ErrorCode::InvalidConfig, "--step must be > 0");
  const std::uint64_t first = c.given("--seed") || !c.o.config.empty() ? c.cfg.seed : 1;
  double worst = 0.0;
  for (int k = 0; k < c.o.instances; ++k) {
    const std::uint64_t seed = first + static_cast<std::uint64_t>(k);
    const GradCheckInstance inst = make_gradcheck_instance(seed);
    if (!c.o.dump.empty()) {
      const fs::path dir = c.o.dump;
      fs::create_directories(dir);
      save_feature_map(inst.image_t, dir / fmt::format("seed{}_image_t.fmap", seed));
      save_feature_map(inst.image_i, dir / fmt::format("seed{}_image_i.fmap", seed));
      save_feature_map(extract_features(inst.image_t, inst.params),
                       dir / fmt::format("seed{}_features_t.fmap", seed));
      save_feature_map(extract_features(inst.image_i, inst.params),
                       dir / fmt::format("seed{}_features_i.fmap", seed));
      save_checkpoint(inst.params, dir / fmt::format("seed{}_params.ckpt", seed));
    }
    const GradCheckResult r = run_gradcheck(inst, c.o.h);
    worst = std::max(worst, r.max_rel_error);
    fmt::print(c.out, "seed {} parameters {} iterations {}/{} loss {} max relative error {:.3e}\n", seed,
               r.parameters, r.forward_iters, r.backward_iters, format_real(r.loss), r.max_rel_error);
  }
  const bool ok = worst < c.o.tol;
  fmt::print(c.out, "max relative error {:.3e} ({} tolerance {:.0e})\n", worst,
             ok ? "within" : "ABOVE", c.o.tol);
  return ok ? 0 : 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Learned-feature Lucas-Kanade tracking with cycle-consistency training", "cylk"};
  app.fallthrough();
  app.require_subcommand(1);
  app.add_option("--config", o.config, "JSON config file; explicit flags take precedence")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "seed for every random choice (default 0)");
  app.add_option("--threads", o.threads, "worker threads (default: CYLK_THREADS or 1)");
  app.add_option("--out", o.out, "output path (directory, or file for track)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic sequence directory");
  synth->add_option("--preset", o.preset, "CLEAN, PHOTO, NOISE or OCCL")
      ->check(CLI::IsMember({"CLEAN", "PHOTO", "NOISE", "OCCL"}));
  synth->add_option("--frames", o.frames, "number of frames (preset: 12)");
  synth->add_option("--landmarks", o.landmarks, "ground-truth landmarks (preset: 20)");
  synth->add_option("--width", o.width, "frame width (preset: 64)");
  synth->add_option("--height", o.height, "frame height (preset: 64)");

  auto* track = app.add_subcommand("track", "track landmarks from one image to another");
  track->add_option("--template", o.template_image, "template image (PGM/PPM)")->required();
  track->add_option("--input", o.input_image, "input image (PGM/PPM)")->required();
  track->add_option("--landmarks", o.landmark_file, "CSV frame,id,x,y; frame 0 rows are tracked")
      ->required();
  track->add_option("--overlay", o.overlay, "write a P6 overlay of the tracked points");

  auto* trn = app.add_subcommand("train", "train the feature extractor");
  trn->add_option("--data", o.data, "sequence directories (default: generated preset sequences)");
  trn->add_option("--preset", o.preset, "preset for generated training sequences")
      ->check(CLI::IsMember({"CLEAN", "PHOTO", "NOISE", "OCCL"}));
  trn->add_option("--sequences", o.sequences, "number of generated training sequences (default 4)");
  trn->add_option("--epochs", o.epochs, "epochs (default 20)");
  trn->add_option("--landmarks-per-pair", o.landmarks_per_pair, "landmarks per frame pair (default 50)");
  trn->add_option("--lambda", o.lambda, "patch loss weight (default 1)");
  trn->add_option("--lr", o.lr, "Adam learning rate (default 1e-4)");
  trn->add_flag("--no-augment", o.no_augment, "disable flip/scale/rotation augmentation");
  trn->add_option("--log", o.log, "newline-delimited JSON training log (default stdout)");

  auto* ev = app.add_subcommand("eval", "one-pass evaluation on a sequence directory");
  ev->add_option("--data", o.data, "sequence directory")->required();
  ev->add_option("--gt", o.gt, "ground-truth CSV (default: <data>/gt.csv when present)");
  ev->add_flag("--no-gt", o.no_gt, "ignore ground truth");
  ev->add_option("--landmarks", o.landmark_file, "start points CSV (frame 0 rows)");
  ev->add_option("--count", o.count, "sampled start points when no GT or landmark file (default 20)");
  ev->add_option("--method", o.method, "method name in the report (default learned/raw)");
  ev->add_option("--threshold", o.threshold, "success threshold in px (default 0.5)");
  ev->add_option("--metric", o.metric, "distance or squared")
      ->check(CLI::IsMember({"distance", "squared"}));
  ev->add_option("--policy", o.policy, "every-frame or fixed-first template")
      ->check(CLI::IsMember({"every-frame", "fixed-first"}));
  ev->add_flag("--timestamps", o.timestamps, "record the wall-clock time in the report");
  ev->add_flag("--overlays", o.overlays, "write overlay_NNNN.ppm per frame");

  for (auto* sub : {track, ev}) {
    auto* lw = sub->add_option("--load-weights", o.load_weights, "feature extractor checkpoint");
    auto* id = sub->add_flag("--identity-features", o.identity, "track on raw intensities (default)");
    lw->excludes(id);
  }
  trn->add_option("--load-weights", o.load_weights, "initial checkpoint (default: seeded init)");
  trn->add_option("--save-weights", o.save_weights, "checkpoint to write (default <out>/weights.ckpt)");

  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gc->add_option("--instances", o.instances, "number of consecutive seeds (default 1)");
  gc->add_option("--step", o.h, "finite-difference step (default 1e-5)");
  gc->add_option("--tol", o.tol, "relative error tolerance (default 1e-4)");
  gc->add_option("--dump", o.dump, "directory for feature map and checkpoint fixtures");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    Context c{app, sub, o, resolve_config(app, *sub, o), out, err};
    if (sub == synth) return cmd_synth(c);
    if (sub == track) return cmd_track(c);
    if (sub == trn) return cmd_train(c);
    if (sub == ev) return cmd_eval(c);
    return cmd_gradcheck(c);
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n\n" << sub->help();
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace cylk
