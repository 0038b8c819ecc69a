#include "repose/scene.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "repose/io.hpp"

namespace repose {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const char* what) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) {
      throw ValidationError(std::string("unknown key '") + key + "' in " + what);
    }
  }
}

std::pair<double, double> read_range(const json& j, const char* key) {
  const json& r = j.at(key);
  if (!r.is_array() || r.size() != 2) {
    throw ValidationError(std::string("'") + key + "' must be a two-element array");
  }
  return {r[0].get<double>(), r[1].get<double>()};
}

}  // namespace

void validate_scene_spec(const SceneSpec& spec) {
  if (spec.width_px <= 0 || spec.height_px <= 0) throw ValidationError("frame size must be positive");
  if (spec.count_min < 1 || spec.count_max < spec.count_min) {
    throw ValidationError("object count range must satisfy 1 <= min <= max");
  }
  if (spec.strata.empty()) throw ValidationError("scene spec needs at least one stratum");
  double total_density = 0.0;
  for (const Stratum& s : spec.strata) {
    if (!(s.y_min >= 0.0 && s.y_max <= 1.0 && s.y_min <= s.y_max)) {
      throw ValidationError("stratum y band must lie within [0,1]");
    }
    if (!(s.size_min > 0.0 && s.size_max >= s.size_min && s.size_max <= 1.0)) {
      throw ValidationError("stratum size range must be positive and ordered");
    }
    if (!(s.density >= 0.0)) throw ValidationError("stratum density must be >= 0");
    if (s.groups < 0 || !(s.group_spread >= 0.0) || !(s.aspect > 0.0)) {
      throw ValidationError("stratum groups/group_spread/aspect out of range");
    }
    total_density += s.density;
  }
  if (!(total_density > 0.0)) throw ValidationError("total stratum density must be positive");
}

SceneSpec scene_spec_from_json(const json& j) {
  try {
    reject_unknown_keys(j, {"width_px", "height_px", "count", "seed", "strata"}, "scene spec");
    SceneSpec spec;
    spec.width_px = j.value("width_px", spec.width_px);
    spec.height_px = j.value("height_px", spec.height_px);
    if (j.contains("count")) {
      auto [lo, hi] = read_range(j, "count");
      spec.count_min = static_cast<int>(lo);
      spec.count_max = static_cast<int>(hi);
    }
    spec.seed = j.value("seed", spec.seed);
    for (const json& s : j.at("strata")) {
      reject_unknown_keys(s, {"y_band", "size", "density", "groups", "group_spread", "aspect", "class_id"},
                          "stratum");
      Stratum st;
      std::tie(st.y_min, st.y_max) = read_range(s, "y_band");
      std::tie(st.size_min, st.size_max) = read_range(s, "size");
      st.density = s.value("density", st.density);
      st.groups = s.value("groups", st.groups);
      st.group_spread = s.value("group_spread", st.group_spread);
      st.aspect = s.value("aspect", st.aspect);
      st.class_id = s.value("class_id", st.class_id);
      spec.strata.push_back(st);
    }
    validate_scene_spec(spec);
    return spec;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad scene spec: ") + e.what());
  }
}

json scene_spec_to_json(const SceneSpec& spec) {
  json strata = json::array();
  for (const Stratum& s : spec.strata) {
    strata.push_back({{"y_band", {s.y_min, s.y_max}},
                      {"size", {s.size_min, s.size_max}},
                      {"density", s.density},
                      {"groups", s.groups},
                      {"group_spread", s.group_spread},
                      {"aspect", s.aspect},
                      {"class_id", s.class_id}});
  }
  return {{"width_px", spec.width_px},
          {"height_px", spec.height_px},
          {"count", {spec.count_min, spec.count_max}},
          {"seed", spec.seed},
          {"strata", strata}};
}

SceneSpec load_scene_spec(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError("scene spec " + path.string() + ": " + e.what());
  }
  return scene_spec_from_json(j);
}

Frame generate_scene(const SceneSpec& spec) {
  validate_scene_spec(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> count_dist(spec.count_min, spec.count_max);
  const int count = count_dist(rng);

  std::vector<double> weights;
  for (const Stratum& s : spec.strata) weights.push_back(s.density);
  std::discrete_distribution<std::size_t> pick_stratum(weights.begin(), weights.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Group centers are drawn up front so the layout does not depend on how
  // many objects each stratum ends up with.
  std::vector<std::vector<std::pair<double, double>>> centers(spec.strata.size());
  for (std::size_t k = 0; k < spec.strata.size(); ++k) {
    const Stratum& s = spec.strata[k];
    for (int g = 0; g < s.groups; ++g) {
      const double gx = 0.05 + 0.9 * unit(rng);
      const double gy = s.y_min + (s.y_max - s.y_min) * unit(rng);
      centers[k].emplace_back(gx, gy);
    }
  }

  const double pixel_aspect = static_cast<double>(spec.height_px) / spec.width_px;
  Frame frame;
  frame.width_px = spec.width_px;
  frame.height_px = spec.height_px;
  frame.detections.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::size_t k = pick_stratum(rng);
    const Stratum& s = spec.strata[k];
    double x, y;
    if (!centers[k].empty()) {
      std::uniform_int_distribution<std::size_t> pick_group(0, centers[k].size() - 1);
      const auto [gx, gy] = centers[k][pick_group(rng)];
      x = gx + s.group_spread * gauss(rng);
      y = gy + s.group_spread * gauss(rng);
    } else {
      x = unit(rng);
      y = s.y_min + (s.y_max - s.y_min) * unit(rng);
    }
    y = std::clamp(y, s.y_min, s.y_max);

    const double band = s.y_max - s.y_min;
    const double t = band > 0.0 ? (y - s.y_min) / band : 0.5;
    const double jitter = 0.4 * (unit(rng) - 0.5);
    const double h = s.size_min + (s.size_max - s.size_min) * std::clamp(t + jitter, 0.0, 1.0);
    const double w = std::min(1.0, h * s.aspect * pixel_aspect);

    DetectionBox b;
    b.w = w;
    b.h = h;
    b.cx = std::clamp(x, 0.5 * w, 1.0 - 0.5 * w);
    const double lo = std::max(s.y_min, 0.5 * h);
    const double hi = std::min(s.y_max, 1.0 - 0.5 * h);
    b.cy = lo <= hi ? std::clamp(y, lo, hi) : y;
    b.score = 0.5 + 0.5 * unit(rng);
    b.class_id = s.class_id;
    frame.detections.push_back(b);
  }
  return frame;
}

DetectionFormat format_for_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".csv" ? DetectionFormat::csv : DetectionFormat::json;
}

Frame parse_detections_json(const json& j) {
  Frame frame;
  try {
    frame.width_px = j.at("width_px").get<int>();
    frame.height_px = j.at("height_px").get<int>();
    if (frame.width_px <= 0 || frame.height_px <= 0) throw ValidationError("frame size must be positive");
    std::size_t i = 0;
    for (const json& d : j.at("detections")) {
      DetectionBox b;
      b.cx = d.at("cx").get<double>();
      b.cy = d.at("cy").get<double>();
      b.w = d.at("w").get<double>();
      b.h = d.at("h").get<double>();
      b.score = d.value("score", 1.0);
      b.class_id = d.value("class_id", 0);
      try {
        validate_box(b);
      } catch (const ValidationError& e) {
        throw ValidationError("detection " + std::to_string(i) + ": " + e.what());
      }
      frame.detections.push_back(b);
      ++i;
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad detection file: ") + e.what());
  }
  return frame;
}

json detections_to_json(const Frame& frame) {
  json dets = json::array();
  for (const DetectionBox& b : frame.detections) {
    dets.push_back({{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h},
                    {"score", b.score}, {"class_id", b.class_id}});
  }
  return {{"width_px", frame.width_px}, {"height_px", frame.height_px}, {"detections", dets}};
}

namespace {

constexpr std::string_view kCsvHeader = "cx,cy,w,h,score,class_id";

template <typename T>
T parse_field(std::string_view field, std::size_t line) {
  T value{};
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw ValidationError("row " + std::to_string(line) + ": cannot parse '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

std::string detections_to_csv(std::span<const DetectionBox> boxes) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const DetectionBox& b : boxes) {
    out += format_double(b.cx) + ',' + format_double(b.cy) + ',' + format_double(b.w) + ',' +
           format_double(b.h) + ',' + format_double(b.score) + ',' + std::to_string(b.class_id) + '\n';
  }
  return out;
}

std::vector<DetectionBox> parse_detections_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ValidationError("empty CSV file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw ValidationError("CSV header must be exactly '" + std::string(kCsvHeader) + "'");

  std::vector<DetectionBox> boxes;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 6) {
      throw ValidationError("row " + std::to_string(line_no) + ": expected 6 fields, got " +
                            std::to_string(fields.size()));
    }
    DetectionBox b;
    b.cx = parse_field<double>(fields[0], line_no);
    b.cy = parse_field<double>(fields[1], line_no);
    b.w = parse_field<double>(fields[2], line_no);
    b.h = parse_field<double>(fields[3], line_no);
    b.score = parse_field<double>(fields[4], line_no);
    b.class_id = parse_field<int>(fields[5], line_no);
    try {
      validate_box(b);
    } catch (const ValidationError& e) {
      throw ValidationError("row " + std::to_string(line_no) + ": " + e.what());
    }
    boxes.push_back(b);
  }
  return boxes;
}

Frame load_detections(const std::filesystem::path& path, DetectionFormat format, int width_px,
                      int height_px) {
  const std::string text = read_file(path);
  if (format == DetectionFormat::csv) {
    Frame frame;
    frame.width_px = width_px;
    frame.height_px = height_px;
    if (width_px <= 0 || height_px <= 0) throw ValidationError("frame size must be positive");
    frame.detections = parse_detections_csv(text);
    return frame;
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError("detection file " + path.string() + ": " + e.what());
  }
  return parse_detections_json(j);
}

void save_detections(const Frame& frame, const std::filesystem::path& path, DetectionFormat format) {
  if (format == DetectionFormat::csv) {
    write_file_atomic(path, detections_to_csv(frame.detections));
  } else {
    write_file_atomic(path, detections_to_json(frame).dump(2) + "\n");
  }
}

TileGrid tile_frame(const Frame& frame, int n, int e) {
  if (n < 1 || e < 1) throw ValidationError("tile grid needs n >= 1 and E >= 1");
  if (frame.width_px <= 0 || frame.height_px <= 0) throw ValidationError("frame size must be positive");
  const int total = n * e;
  int rows = 1;
  for (int d = 1; static_cast<long long>(d) * d <= total; ++d) {
    if (total % d == 0) rows = d;
  }
  TileGrid grid;
  grid.n = n;
  grid.e = e;
  grid.rows = rows;
  grid.cols = total / rows;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      TileRect t;
      t.x0 = static_cast<double>(c) / grid.cols;
      t.x1 = static_cast<double>(c + 1) / grid.cols;
      t.y0 = static_cast<double>(r) / grid.rows;
      t.y1 = static_cast<double>(r + 1) / grid.rows;
      grid.tiles.push_back(t);
    }
  }
  return grid;
}

std::vector<DetectionBox> aggregate_tiles(std::span<const TileDetections> per_tile,
                                          double iou_threshold) {
  std::vector<DetectionBox> global;
  for (const TileDetections& td : per_tile) {
    for (const DetectionBox& local : td.boxes) {
      DetectionBox b = local;
      b.cx = td.tile.x0 + local.cx * td.tile.width();
      b.cy = td.tile.y0 + local.cy * td.tile.height();
      b.w = local.w * td.tile.width();
      b.h = local.h * td.tile.height();
      global.push_back(clamp_to_unit(b));
    }
  }
  return nms(global, iou_threshold);
}

std::vector<TileDetections> emulate_tile_detection(const Frame& frame, const TileGrid& grid,
                                                   const NoisyDetector& noise) {
  std::mt19937_64 rng(noise.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<TileDetections> out(grid.tiles.size());
  for (std::size_t t = 0; t < grid.tiles.size(); ++t) out[t].tile = grid.tiles[t];

  for (const DetectionBox& truth : frame.detections) {
    // Draw every random number up front so the stream stays aligned whether
    // or not the box is dropped.
    const double u = unit(rng);
    const double jx = gauss(rng), jy = gauss(rng), jw = gauss(rng), jh = gauss(rng);
    if (u < noise.drop_prob) continue;
    DetectionBox b = truth;
    if (noise.sigma > 0.0) {
      b.cx = std::clamp(b.cx + noise.sigma * b.w * jx, 0.0, 1.0);
      b.cy = std::clamp(b.cy + noise.sigma * b.h * jy, 0.0, 1.0);
      b.w = std::clamp(b.w * std::exp(noise.sigma * jw), 1e-6, 1.0);
      b.h = std::clamp(b.h * std::exp(noise.sigma * jh), 1e-6, 1.0);
    }
    const int col = std::min(grid.cols - 1, static_cast<int>(b.cx * grid.cols));
    const int row = std::min(grid.rows - 1, static_cast<int>(b.cy * grid.rows));
    TileDetections& td = out[static_cast<std::size_t>(row * grid.cols + col)];
    const TileRect& tile = td.tile;
    const double x0 = std::max(b.left(), tile.x0), x1 = std::min(b.right(), tile.x1);
    const double y0 = std::max(b.top(), tile.y0), y1 = std::min(b.bottom(), tile.y1);
    if (x1 <= x0 || y1 <= y0) continue;
    DetectionBox local = b;
    local.cx = (0.5 * (x0 + x1) - tile.x0) / tile.width();
    local.cy = (0.5 * (y0 + y1) - tile.y0) / tile.height();
    local.w = std::min(1.0, (x1 - x0) / tile.width());
    local.h = std::min(1.0, (y1 - y0) / tile.height());
    td.boxes.push_back(local);
  }
  return out;
}

Frame coarse_detect(const Frame& frame, int n, int e, const NoisyDetector& noise,
                    double iou_threshold) {
  const TileGrid grid = tile_frame(frame, n, e);
  const auto per_tile = emulate_tile_detection(frame, grid, noise);
  Frame out;
  out.width_px = frame.width_px;
  out.height_px = frame.height_px;
  out.detections = aggregate_tiles(per_tile, iou_threshold);
  return out;
}

}  // namespace repose
