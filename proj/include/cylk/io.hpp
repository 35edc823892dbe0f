#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cylk/core.hpp"
#include "cylk/eval.hpp"
#include "cylk/feature_net.hpp"
#include "cylk/synth.hpp"
#include "cylk/trainer.hpp"

namespace cylk {

namespace fs = std::filesystem;

/// PGM (P2/P5) or PPM (P3/P6). Values are divided by maxval; colour images are
/// reduced to luminance. Header and data errors name the byte offset.
FeatureMap load_image(const fs::path& path);

/// Single-channel map to P5. Values are clamped to [0, 1] and rounded to
/// maxval steps; maxval above 255 uses two big-endian bytes per sample.
void save_image(const FeatureMap& map, const fs::path& path, int maxval = 255);

/// Gray map to P6 with a red 3x3 cross at each rounded point and a green
/// outline of the (2r+1)-pixel template box around it.
void save_overlay(const FeatureMap& map, const std::vector<Point>& points, const fs::path& path,
                  int stencil_radius = 7);

/// RGB byte image as written by save_overlay, row-major, 3 bytes per pixel.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> rgb;
};
RgbImage render_overlay(const FeatureMap& map, const std::vector<Point>& points,
                        int stencil_radius = 7);

/// Raw map dump: four little-endian u32 (magic 0x46454154, height, width,
/// channels) then row-major channel-last little-endian f64.
void save_feature_map(const FeatureMap& map, const fs::path& path);
FeatureMap load_feature_map(const fs::path& path);

inline constexpr std::uint32_t kFeatureMagic = 0x46454154u;
inline constexpr std::uint32_t kCheckpointMagic = 0x43594C4Bu;
inline constexpr std::uint32_t kCheckpointVersion = 1u;

/// Checkpoint: magic, version, layer count (u32 LE), per layer out, in,
/// kernel, dilation (u32 LE), then every layer's weights and bias as f64 LE.
void save_checkpoint(const ConvNetParams& params, const fs::path& path);
ConvNetParams load_checkpoint(const fs::path& path);

/// CSV with header frame,id,x,y. Every frame from 0 to the last one must list
/// the same ids; landmark order follows frame 0.
GroundTruth load_landmarks(const fs::path& path);
GroundTruth parse_landmarks(const std::string& text);
void save_landmarks(const GroundTruth& gt, const fs::path& path);
std::string format_landmarks(const GroundTruth& gt);

/// Shortest decimal form with at most 9 significant digits; "nan" for NaN.
std::string format_real(double v);
/// v rounded to what format_real prints.
double round_real(double v);

/// Report JSON, schema 1. Non-finite values are written as null.
std::string format_report(const EvalReport& report, const std::optional<std::string>& timestamp = {});
void save_report(const EvalReport& report, const fs::path& path,
                 const std::optional<std::string>& timestamp = {});
EvalReport parse_report(const std::string& text);
EvalReport load_report(const fs::path& path);

/// CSV method,sequence,Er_mean,Ef_mean,Sr. A missing Ef_mean is left empty.
std::string format_summary(const std::vector<SummaryRow>& rows);
void save_summary(const std::vector<SummaryRow>& rows, const fs::path& path);

/// One JSON object per line: epoch, pair, cycle, patch, total, degenerate_count.
std::string format_log_entry(const TrainLogEntry& e);

/// Settings shared by the CLI subcommands. Everything has a default; a config
/// file only needs the keys it changes.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir;
  TrainConfig train;
  EvalOptions eval;
};

/// Merges a JSON config object into cfg. Unknown keys and wrongly typed
/// values raise InvalidConfig.
void apply_config_json(const std::string& text, RunConfig& cfg);
void apply_config_file(const fs::path& path, RunConfig& cfg);

std::string format_synth_spec(const SynthSpec& spec, const std::string& preset_name = {});

/// frame_%04d.pgm files in a directory, in index order.
std::vector<fs::path> list_frames(const fs::path& dir);
std::vector<FeatureMap> load_sequence(const fs::path& dir);
void save_sequence(const SynthSequence& seq, const SynthSpec& spec, const fs::path& dir,
                   const std::string& preset_name = {});

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& contents);

}  // namespace cylk
