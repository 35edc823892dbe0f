#include "cylk/io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "json.hpp"

namespace cylk {

using json = nlohmann::ordered_json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(ErrorCode::IoError, "write to '" + path.string() + "' failed");
}

// ---- PNM -------------------------------------------------------------------

namespace {

struct PnmReader {
  const std::string& buf;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < buf.size()) {
      const char c = buf[pos];
      if (c == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
  }

  // Header integer; fails with CorruptHeader at the offending byte.
  long header_int(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos;
    long v = 0;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
      v = v * 10 + (buf[pos] - '0');
      if (v > 1'000'000'000L) {
        throw Error(ErrorCode::CorruptHeader,
                    fmt::format("{} too large at byte offset {}", what, start));
      }
      ++pos;
    }
    if (pos == start) {
      if (pos >= buf.size()) {
        throw Error(ErrorCode::CorruptHeader,
                    fmt::format("header ends before {} at byte offset {}", what, pos));
      }
      throw Error(ErrorCode::CorruptHeader,
                  fmt::format("expected {} at byte offset {}", what, pos));
    }
    return v;
  }

  // ASCII sample; fails with TruncatedData when the body runs out.
  long body_int(long maxval) {
    skip_space_and_comments();
    const std::size_t start = pos;
    if (pos >= buf.size()) {
      throw Error(ErrorCode::TruncatedData,
                  fmt::format("sample data ends at byte offset {}", pos));
    }
    long v = 0;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
      v = v * 10 + (buf[pos] - '0');
      if (v > maxval) break;
      ++pos;
    }
    if (pos == start || v > maxval) {
      throw Error(ErrorCode::CorruptHeader,
                  fmt::format("invalid sample at byte offset {}", start));
    }
    return v;
  }
};

}  // namespace

FeatureMap load_image(const fs::path& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '2' && buf[1] != '3' && buf[1] != '5' &&
                                          buf[1] != '6')) {
    throw Error(ErrorCode::UnsupportedFormat,
                "'" + path.string() + "' is not P2/P3/P5/P6 (magic at byte offset 0)");
  }
  const bool ascii = buf[1] == '2' || buf[1] == '3';
  const int channels = (buf[1] == '3' || buf[1] == '6') ? 3 : 1;
  PnmReader r{buf, 2};
  if (r.pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[r.pos])) &&
      buf[r.pos] != '#') {
    throw Error(ErrorCode::UnsupportedFormat,
                fmt::format("unexpected byte after magic at byte offset {}", r.pos));
  }
  const std::size_t w_at = r.pos;
  const long width = r.header_int("width");
  const long height = r.header_int("height");
  const std::size_t m_at = r.pos;
  const long maxval = r.header_int("maxval");
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::CorruptHeader,
                fmt::format("image dimensions must be positive (byte offset {})", w_at));
  }
  if (maxval < 1 || maxval > 65535) {
    throw Error(ErrorCode::CorruptHeader,
                fmt::format("maxval {} out of range 1..65535 (byte offset {})", maxval, m_at));
  }
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  std::vector<double> samples(count);
  const double scale = 1.0 / static_cast<double>(maxval);
  if (ascii) {
    for (std::size_t i = 0; i < count; ++i) samples[i] = r.body_int(maxval) * scale;
  } else {
    if (r.pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[r.pos]))) {
      throw Error(ErrorCode::CorruptHeader,
                  fmt::format("missing whitespace after maxval at byte offset {}", r.pos));
    }
    ++r.pos;
    const std::size_t bytes = maxval > 255 ? 2 : 1;
    const std::size_t need = count * bytes;
    if (buf.size() - r.pos < need) {
      throw Error(ErrorCode::TruncatedData,
                  fmt::format("expected {} data bytes from byte offset {}, file ends at {}", need,
                              r.pos, buf.size()));
    }
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + r.pos);
    for (std::size_t i = 0; i < count; ++i) {
      const unsigned v = bytes == 2 ? (unsigned(p[2 * i]) << 8) | p[2 * i + 1] : p[i];
      if (v > static_cast<unsigned>(maxval)) {
        throw Error(ErrorCode::CorruptHeader,
                    fmt::format("sample above maxval at byte offset {}", r.pos + i * bytes));
      }
      samples[i] = v * scale;
    }
  }
  FeatureMap map(static_cast<int>(height), static_cast<int>(width), channels, std::move(samples));
  return channels == 3 ? luminance(map) : map;
}

namespace {

std::string pnm_header(char kind, int width, int height, int maxval) {
  return fmt::format("P{}\n{} {}\n{}\n", kind, width, height, maxval);
}

unsigned quantize(double v, int maxval) {
  const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
  return static_cast<unsigned>(std::lround(c * maxval));
}

}  // namespace

void save_image(const FeatureMap& map, const fs::path& path, int maxval) {
  if (map.channels() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "save_image needs a single-channel map");
  }
  if (maxval < 1 || maxval > 65535) {
    throw Error(ErrorCode::InvalidSpec, fmt::format("maxval {} out of range 1..65535", maxval));
  }
  std::string out = pnm_header('5', map.width(), map.height(), maxval);
  for (double v : map.values()) {
    const unsigned q = quantize(v, maxval);
    if (maxval > 255) out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xFF));
  }
  write_file(path, out);
}

RgbImage render_overlay(const FeatureMap& map, const std::vector<Point>& points,
                        int stencil_radius) {
  if (map.channels() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "overlays are drawn on single-channel maps");
  }
  RgbImage img{map.width(), map.height(), {}};
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const auto g = static_cast<unsigned char>(quantize(map(y, x), 255));
      const std::size_t o = (static_cast<std::size_t>(y) * img.width + x) * 3;
      img.rgb[o] = img.rgb[o + 1] = img.rgb[o + 2] = g;
    }
  }
  auto put = [&](long x, long y, unsigned char r, unsigned char g, unsigned char b) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    const std::size_t o = (static_cast<std::size_t>(y) * img.width + x) * 3;
    img.rgb[o] = r;
    img.rgb[o + 1] = g;
    img.rgb[o + 2] = b;
  };
  const long r = stencil_radius;
  for (const Point& p : points) {
    if (!is_finite(p)) continue;
    const long cx = std::lround(p.x);
    const long cy = std::lround(p.y);
    for (long d = -r; d <= r; ++d) {
      put(cx + d, cy - r, 0, 255, 0);
      put(cx + d, cy + r, 0, 255, 0);
      put(cx - r, cy + d, 0, 255, 0);
      put(cx + r, cy + d, 0, 255, 0);
    }
  }
  for (const Point& p : points) {
    if (!is_finite(p)) continue;
    const long cx = std::lround(p.x);
    const long cy = std::lround(p.y);
    for (long d = -1; d <= 1; ++d) {
      put(cx + d, cy, 255, 0, 0);
      put(cx, cy + d, 255, 0, 0);
    }
  }
  return img;
}

void save_overlay(const FeatureMap& map, const std::vector<Point>& points, const fs::path& path,
                  int stencil_radius) {
  const RgbImage img = render_overlay(map, points, stencil_radius);
  std::string out = pnm_header('6', img.width, img.height, 255);
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  write_file(path, out);
}

// ---- binary containers ----------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  static_assert(sizeof bits == sizeof v);
  std::memcpy(&bits, &v, sizeof v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

struct ByteReader {
  const std::string& buf;
  const std::string& name;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (buf.size() - pos < n) {
      throw Error(ErrorCode::TruncatedData,
                  fmt::format("'{}': {} needs {} bytes at byte offset {}, file ends at {}", name,
                              what, n, pos, buf.size()));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  double f64() {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    }
    pos += 8;
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
};

}  // namespace

void save_feature_map(const FeatureMap& map, const fs::path& path) {
  std::string out;
  out.reserve(16 + map.size() * 8);
  put_u32(out, kFeatureMagic);
  put_u32(out, static_cast<std::uint32_t>(map.height()));
  put_u32(out, static_cast<std::uint32_t>(map.width()));
  put_u32(out, static_cast<std::uint32_t>(map.channels()));
  for (double v : map.values()) put_f64(out, v);
  write_file(path, out);
}

FeatureMap load_feature_map(const fs::path& path) {
  const std::string buf = read_file(path);
  const std::string name = path.string();
  ByteReader r{buf, name};
  if (buf.size() < 4 || r.u32("magic") != kFeatureMagic) {
    throw Error(ErrorCode::UnsupportedFormat, "'" + name + "' is not a feature map (magic at byte offset 0)");
  }
  const std::uint32_t h = r.u32("height");
  const std::uint32_t w = r.u32("width");
  const std::uint32_t c = r.u32("channels");
  if (h == 0 || w == 0 || c == 0 || h > (1u << 16) || w > (1u << 16) || c > (1u << 16)) {
    throw Error(ErrorCode::CorruptHeader, "'" + name + "': bad dimensions at byte offset 4");
  }
  const std::size_t n = static_cast<std::size_t>(h) * w * c;
  r.need(n * 8, "sample data");
  std::vector<double> data(n);
  for (double& v : data) v = r.f64();
  return FeatureMap(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), std::move(data));
}

void save_checkpoint(const ConvNetParams& params, const fs::path& path) {
  params.validate();
  std::string out;
  put_u32(out, kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    put_u32(out, static_cast<std::uint32_t>(l.out_channels));
    put_u32(out, static_cast<std::uint32_t>(l.in_channels));
    put_u32(out, static_cast<std::uint32_t>(l.kernel));
    put_u32(out, static_cast<std::uint32_t>(l.dilation));
  }
  for (const auto& l : params.layers) {
    for (double v : l.weights) put_f64(out, v);
    for (double v : l.bias) put_f64(out, v);
  }
  write_file(path, out);
}

ConvNetParams load_checkpoint(const fs::path& path) {
  const std::string buf = read_file(path);
  const std::string name = path.string();
  ByteReader r{buf, name};
  if (buf.size() < 4 || r.u32("magic") != kCheckpointMagic) {
    throw Error(ErrorCode::UnsupportedFormat, "'" + name + "' is not a checkpoint (magic at byte offset 0)");
  }
  const std::size_t v_at = r.pos;
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::UnsupportedFormat,
                fmt::format("'{}': checkpoint version {} at byte offset {} is not supported", name,
                            version, v_at));
  }
  const std::size_t n_at = r.pos;
  const std::uint32_t n_layers = r.u32("layer count");
  if (n_layers == 0 || n_layers > 1024) {
    throw Error(ErrorCode::CorruptHeader,
                fmt::format("'{}': layer count {} at byte offset {}", name, n_layers, n_at));
  }
  ConvNetParams params;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const std::size_t at = r.pos;
    ConvLayerParams layer;
    const std::uint32_t dims[4] = {r.u32("layer dims"), r.u32("layer dims"), r.u32("layer dims"),
                                   r.u32("layer dims")};
    for (std::uint32_t d : dims) {
      if (d == 0 || d > 4096) {
        throw Error(ErrorCode::CorruptHeader,
                    fmt::format("'{}': bad dimensions for layer {} at byte offset {}", name, l, at));
      }
    }
    layer.out_channels = static_cast<int>(dims[0]);
    layer.in_channels = static_cast<int>(dims[1]);
    layer.kernel = static_cast<int>(dims[2]);
    layer.dilation = static_cast<int>(dims[3]);
    params.layers.push_back(std::move(layer));
  }
  for (auto& l : params.layers) {
    const std::size_t nw = static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel;
    r.need((nw + l.out_channels) * 8, "layer values");
    l.weights.resize(nw);
    l.bias.resize(static_cast<std::size_t>(l.out_channels));
    for (double& v : l.weights) v = r.f64();
    for (double& v : l.bias) v = r.f64();
  }
  if (r.pos != buf.size()) {
    throw Error(ErrorCode::CorruptHeader,
                fmt::format("'{}': {} trailing bytes after byte offset {}", name, buf.size() - r.pos, r.pos));
  }
  try {
    params.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptHeader, "'" + name + "': " + e.what());
  }
  return params;
}

// ---- text formats -----------------------------------------------------------

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  return fmt::format("{:.9g}", v);
}

double round_real(double v) {
  if (!std::isfinite(v) || v == 0.0) return v;
  return std::strtod(fmt::format("{:.9g}", v).c_str(), nullptr);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

long parse_long(const std::string& s, std::size_t line, const char* what) {
  char* end = nullptr;
  errno = 0;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0' || errno == ERANGE || v < std::numeric_limits<int>::min() ||
      v > std::numeric_limits<int>::max()) {
    throw Error(ErrorCode::ParseError, fmt::format("line {}: bad {} '{}'", line, what, s));
  }
  return v;
}

double parse_double(const std::string& s, std::size_t line, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || !std::isfinite(v)) {
    throw Error(ErrorCode::ParseError, fmt::format("line {}: bad {} '{}'", line, what, s));
  }
  return v;
}

}  // namespace

GroundTruth parse_landmarks(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  std::map<int, std::vector<std::pair<int, Point>>> by_frame;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto f = split_csv(line);
    if (!header) {
      if (f != std::vector<std::string>{"frame", "id", "x", "y"}) {
        throw Error(ErrorCode::ParseError,
                    fmt::format("line {}: expected header 'frame,id,x,y'", line_no));
      }
      header = true;
      continue;
    }
    if (f.size() != 4) {
      throw Error(ErrorCode::ParseError,
                  fmt::format("line {}: expected 4 fields, got {}", line_no, f.size()));
    }
    const long frame = parse_long(f[0], line_no, "frame");
    const long id = parse_long(f[1], line_no, "id");
    if (frame < 0) throw Error(ErrorCode::ParseError, fmt::format("line {}: negative frame", line_no));
    const Point p{parse_double(f[2], line_no, "x"), parse_double(f[3], line_no, "y")};
    auto& rows = by_frame[static_cast<int>(frame)];
    for (const auto& [other, q] : rows) {
      if (other == id) {
        throw Error(ErrorCode::DuplicateLandmark,
                    fmt::format("line {}: landmark {} repeated in frame {}", line_no, id, frame));
      }
    }
    rows.emplace_back(static_cast<int>(id), p);
  }
  if (!header) throw Error(ErrorCode::ParseError, "line 1: missing header 'frame,id,x,y'");

  GroundTruth gt;
  if (by_frame.empty()) return gt;
  const int last = by_frame.rbegin()->first;
  for (const auto& [id, p] : by_frame.begin()->second) gt.ids.push_back(id);
  if (by_frame.begin()->first != 0) {
    throw Error(ErrorCode::ParseError, "landmark file has no rows for frame 0");
  }
  for (int t = 0; t <= last; ++t) {
    const auto it = by_frame.find(t);
    if (it == by_frame.end()) {
      throw Error(ErrorCode::ParseError, fmt::format("landmark file has no rows for frame {}", t));
    }
    std::map<int, Point> lookup(it->second.begin(), it->second.end());
    if (lookup.size() != gt.ids.size()) {
      throw Error(ErrorCode::ParseError,
                  fmt::format("frame {} lists {} landmarks, frame 0 lists {}", t, lookup.size(),
                              gt.ids.size()));
    }
    std::vector<Point> row;
    row.reserve(gt.ids.size());
    for (int id : gt.ids) {
      const auto found = lookup.find(id);
      if (found == lookup.end()) {
        throw Error(ErrorCode::ParseError, fmt::format("frame {} lacks landmark {}", t, id));
      }
      row.push_back(found->second);
    }
    gt.frames.push_back(std::move(row));
  }
  return gt;
}

GroundTruth load_landmarks(const fs::path& path) { return parse_landmarks(read_file(path)); }

std::string format_landmarks(const GroundTruth& gt) {
  std::string out = "frame,id,x,y\n";
  for (std::size_t t = 0; t < gt.frames.size(); ++t) {
    if (gt.frames[t].size() != gt.ids.size()) {
      throw Error(ErrorCode::ShapeMismatch, fmt::format("frame {} has the wrong landmark count", t));
    }
    for (std::size_t j = 0; j < gt.ids.size(); ++j) {
      out += fmt::format("{},{},{},{}\n", t, gt.ids[j], format_real(gt.frames[t][j].x),
                         format_real(gt.frames[t][j].y));
    }
  }
  return out;
}

void save_landmarks(const GroundTruth& gt, const fs::path& path) {
  write_file(path, format_landmarks(gt));
}

// ---- report / summary / log ---------------------------------------------------

namespace {

json real(double v) {
  if (!std::isfinite(v)) return nullptr;
  return round_real(v);
}

json point_json(Point p) { return json::array({real(p.x), real(p.y)}); }

double real_from(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.get<double>();
}

Point point_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::ParseError, "point must be [x, y]");
  return {real_from(j[0]), real_from(j[1])};
}

ErrorMetric metric_from(const std::string& s) {
  if (s == "distance") return ErrorMetric::Distance;
  if (s == "squared") return ErrorMetric::Squared;
  throw Error(ErrorCode::InvalidConfig, "unknown metric '" + s + "' (distance|squared)");
}

TemplatePolicy policy_from(const std::string& s) {
  if (s == "every-frame") return TemplatePolicy::EveryFrame;
  if (s == "fixed-first") return TemplatePolicy::FixedFirst;
  throw Error(ErrorCode::InvalidConfig, "unknown template policy '" + s + "' (every-frame|fixed-first)");
}

}  // namespace

std::string format_report(const EvalReport& report, const std::optional<std::string>& timestamp) {
  json j;
  j["schema"] = 1;
  if (timestamp) j["timestamp"] = *timestamp;
  j["method"] = report.method;
  j["sequence"] = report.sequence;
  j["threshold"] = real(report.threshold);
  j["metric"] = to_string(report.metric);
  j["policy"] = to_string(report.policy);
  j["has_gt"] = report.has_gt;
  j["summary"] = {{"Er_mean", real(report.mean_er)},
                  {"Ef_mean", report.mean_ef ? real(*report.mean_ef) : json(nullptr)},
                  {"n_success", report.n_success},
                  {"n_total", report.n_total},
                  {"Sr", real(report.sr)}};
  json entries = json::array();
  for (const EvalEntry& e : report.entries) {
    entries.push_back({{"frame", e.frame},
                       {"id", e.landmark},
                       {"Er", real(e.e_r)},
                       {"Ef", e.e_f ? real(*e.e_f) : json(nullptr)},
                       {"failed", e.failed},
                       {"reinit", e.reinit},
                       {"forward", point_json(e.forward)},
                       {"position", point_json(e.position)}});
  }
  j["entries"] = std::move(entries);
  return j.dump(1) + "\n";
}

void save_report(const EvalReport& report, const fs::path& path,
                 const std::optional<std::string>& timestamp) {
  write_file(path, format_report(report, timestamp));
}

EvalReport parse_report(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("schema").get<int>() != 1) {
      throw Error(ErrorCode::UnsupportedFormat, "report schema must be 1");
    }
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.sequence = j.at("sequence").get<std::string>();
    r.threshold = real_from(j.at("threshold"));
    r.metric = metric_from(j.at("metric").get<std::string>());
    r.policy = policy_from(j.at("policy").get<std::string>());
    r.has_gt = j.at("has_gt").get<bool>();
    const json& s = j.at("summary");
    r.mean_er = real_from(s.at("Er_mean"));
    if (r.has_gt) r.mean_ef = real_from(s.at("Ef_mean"));
    r.n_success = s.at("n_success").get<std::size_t>();
    r.n_total = s.at("n_total").get<std::size_t>();
    r.sr = real_from(s.at("Sr"));
    for (const json& e : j.at("entries")) {
      EvalEntry x;
      x.frame = e.at("frame").get<int>();
      x.landmark = e.at("id").get<int>();
      x.e_r = real_from(e.at("Er"));
      if (r.has_gt) x.e_f = real_from(e.at("Ef"));
      x.failed = e.at("failed").get<bool>();
      x.reinit = e.at("reinit").get<bool>();
      x.forward = point_from(e.at("forward"));
      x.position = point_from(e.at("position"));
      r.entries.push_back(x);
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("report JSON: ") + e.what());
  }
}

EvalReport load_report(const fs::path& path) { return parse_report(read_file(path)); }

std::string format_summary(const std::vector<SummaryRow>& rows) {
  std::string out = "method,sequence,Er_mean,Ef_mean,Sr\n";
  for (const SummaryRow& r : rows) {
    out += fmt::format("{},{},{},{},{}\n", r.method, r.sequence, format_real(r.er_mean),
                       r.ef_mean ? format_real(*r.ef_mean) : std::string(), format_real(r.sr));
  }
  return out;
}

void save_summary(const std::vector<SummaryRow>& rows, const fs::path& path) {
  write_file(path, format_summary(rows));
}

std::string format_log_entry(const TrainLogEntry& e) {
  json j{{"epoch", e.epoch},
         {"pair", e.pair},
         {"Lc", real(e.cycle)},
         {"Lp", real(e.patch)},
         {"total", real(e.total)},
         {"degenerate_count", e.degenerate_count}};
  return j.dump();
}

// ---- config -------------------------------------------------------------------

namespace {

void only_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::InvalidConfig, where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw Error(ErrorCode::InvalidConfig, "unknown key '" + where + it.key() + "'");
  }
}

template <typename T>
void read_into(const json& obj, const char* key, T& dst, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw Error(ErrorCode::InvalidConfig, "");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw Error(ErrorCode::InvalidConfig, "");
      if constexpr (std::is_unsigned_v<T>) {
        if (it->is_number_integer() && !it->is_number_unsigned()) throw Error(ErrorCode::InvalidConfig, "");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw Error(ErrorCode::InvalidConfig, "");
    }
    dst = it->template get<T>();
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "key '" + where + key + "' has the wrong type");
  }
}

void read_range(const json& obj, const char* key, double& lo, double& hi, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number()) {
    throw Error(ErrorCode::InvalidConfig, "key '" + where + key + "' must be [lo, hi]");
  }
  lo = (*it)[0].get<double>();
  hi = (*it)[1].get<double>();
}

void read_int_list(const json& obj, const char* key, std::vector<int>& dst, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_array()) throw Error(ErrorCode::InvalidConfig, "key '" + where + key + "' must be a list");
  std::vector<int> v;
  for (const auto& e : *it) {
    if (!e.is_number_integer()) {
      throw Error(ErrorCode::InvalidConfig, "key '" + where + key + "' must hold integers");
    }
    v.push_back(e.get<int>());
  }
  dst = std::move(v);
}

}  // namespace

void apply_config_json(const std::string& text, RunConfig& cfg) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  only_keys(j,
            {"seed", "threads", "output_dir", "epochs", "batch_size", "landmarks_per_pair", "lambda",
             "lr", "beta1", "beta2", "adam_eps", "weight_decay", "augment", "max_motion", "aug",
             "solver", "net", "eval"},
            "");
  read_into(j, "seed", cfg.seed, "");
  cfg.train.seed = cfg.seed;
  read_into(j, "threads", cfg.threads, "");
  read_into(j, "output_dir", cfg.output_dir, "");
  TrainConfig& t = cfg.train;
  read_into(j, "epochs", t.epochs, "");
  read_into(j, "batch_size", t.batch_size, "");
  read_into(j, "landmarks_per_pair", t.landmarks_per_pair, "");
  read_into(j, "lambda", t.lambda, "");
  read_into(j, "lr", t.adam.lr, "");
  read_into(j, "beta1", t.adam.beta1, "");
  read_into(j, "beta2", t.adam.beta2, "");
  read_into(j, "adam_eps", t.adam.eps, "");
  read_into(j, "weight_decay", t.adam.weight_decay, "");
  read_into(j, "augment", t.augment, "");
  read_into(j, "max_motion", t.max_motion, "");
  if (const auto it = j.find("aug"); it != j.end()) {
    only_keys(*it, {"flip_prob", "scale_prob", "rot_prob", "scale_range", "rot_range_deg"}, "aug.");
    read_into(*it, "flip_prob", t.aug.flip_prob, "aug.");
    read_into(*it, "scale_prob", t.aug.scale_prob, "aug.");
    read_into(*it, "rot_prob", t.aug.rot_prob, "aug.");
    read_range(*it, "scale_range", t.aug.scale_lo, t.aug.scale_hi, "aug.");
    read_into(*it, "rot_range_deg", t.aug.rot_range_deg, "aug.");
  }
  if (const auto it = j.find("solver"); it != j.end()) {
    only_keys(*it, {"max_iters", "tol", "stencil_radius", "eps_scale"}, "solver.");
    read_into(*it, "max_iters", t.solver.max_iters, "solver.");
    read_into(*it, "tol", t.solver.tol, "solver.");
    read_into(*it, "stencil_radius", t.solver.stencil_radius, "solver.");
    read_into(*it, "eps_scale", t.solver.eps_scale, "solver.");
  }
  if (const auto it = j.find("net"); it != j.end()) {
    only_keys(*it, {"channels", "kernels", "dilations"}, "net.");
    read_int_list(*it, "channels", t.net.channels, "net.");
    read_int_list(*it, "kernels", t.net.kernels, "net.");
    read_int_list(*it, "dilations", t.net.dilations, "net.");
  }
  if (const auto it = j.find("eval"); it != j.end()) {
    only_keys(*it, {"threshold", "metric", "policy", "no_gt_fallback"}, "eval.");
    read_into(*it, "threshold", cfg.eval.threshold, "eval.");
    if (const auto m = it->find("metric"); m != it->end()) {
      if (!m->is_string()) throw Error(ErrorCode::InvalidConfig, "key 'eval.metric' must be a string");
      cfg.eval.metric = metric_from(m->get<std::string>());
    }
    if (const auto p = it->find("policy"); p != it->end()) {
      if (!p->is_string()) throw Error(ErrorCode::InvalidConfig, "key 'eval.policy' must be a string");
      cfg.eval.policy = policy_from(p->get<std::string>());
    }
    read_into(*it, "no_gt_fallback", cfg.eval.no_gt_fallback, "eval.");
  }
  cfg.eval.solver = t.solver;
  cfg.eval.threads = cfg.threads;
  t.threads = cfg.threads;
}

void apply_config_file(const fs::path& path, RunConfig& cfg) {
  apply_config_json(read_file(path), cfg);
}

// ---- sequences ----------------------------------------------------------------

std::string format_synth_spec(const SynthSpec& s, const std::string& preset_name) {
  json j;
  if (!preset_name.empty()) j["preset"] = preset_name;
  j["width"] = s.width;
  j["height"] = s.height;
  j["frames"] = s.frames;
  j["texture"] = {{"kind", s.texture.kind == TextureKind::GaussianBlobs ? "gaussian-blobs" : "filtered-noise"},
                  {"blob_count", s.texture.blob_count},
                  {"sigma_range", json::array({real(s.texture.sigma_min), real(s.texture.sigma_max)})},
                  {"noise_cutoff", real(s.texture.noise_cutoff)}};
  j["velocity"] = point_json(s.velocity);
  j["jitter_std"] = real(s.jitter_std);
  j["max_step"] = real(s.max_step);
  j["gain_range"] = json::array({real(s.gain_lo), real(s.gain_hi)});
  j["bias_range"] = json::array({real(s.bias_lo), real(s.bias_hi)});
  j["noise_std"] = real(s.noise_std);
  if (s.occlusion) {
    j["occlusion"] = {{"size", s.occlusion->size},
                      {"start", point_json(s.occlusion->start)},
                      {"velocity", point_json(s.occlusion->velocity)},
                      {"fill", real(s.occlusion->fill)}};
  } else {
    j["occlusion"] = nullptr;
  }
  j["landmarks"] = s.landmarks;
  j["stencil_radius"] = s.stencil_radius;
  j["seed"] = s.seed;
  return j.dump(1) + "\n";
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "'" + dir.string() + "' is not a directory");
  static const std::regex pattern(R"(frame_(\d{4,})\.(pgm|ppm))");
  std::vector<std::pair<long, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && std::regex_match(name, m, pattern)) {
      found.emplace_back(std::stol(m[1].str()), entry.path());
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < found.size(); ++i) {
    if (found[i].first != static_cast<long>(i)) {
      throw Error(ErrorCode::IoError,
                  fmt::format("'{}': frame numbering has a gap or repeat at index {}", dir.string(), i));
    }
    out.push_back(found[i].second);
  }
  return out;
}

std::vector<FeatureMap> load_sequence(const fs::path& dir) {
  std::vector<FeatureMap> frames;
  for (const auto& p : list_frames(dir)) frames.push_back(load_image(p));
  if (frames.empty()) throw Error(ErrorCode::IoError, "'" + dir.string() + "' holds no frame_NNNN images");
  for (const auto& f : frames) {
    if (!f.same_shape(frames.front())) {
      throw Error(ErrorCode::ShapeMismatch, "'" + dir.string() + "': frames differ in size");
    }
  }
  return frames;
}

void save_sequence(const SynthSequence& seq, const SynthSpec& spec, const fs::path& dir,
                   const std::string& preset_name) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create '" + dir.string() + "': " + ec.message());
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    save_image(seq.frames[t], dir / fmt::format("frame_{:04d}.pgm", t), 65535);
  }
  save_landmarks(seq.gt, dir / "gt.csv");
  write_file(dir / "spec.json", format_synth_spec(spec, preset_name));
}

}  // namespace cylk
