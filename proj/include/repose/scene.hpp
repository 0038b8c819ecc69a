#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "repose/core.hpp"

namespace repose {

/// A horizontal band of the frame with its own object size range and density.
struct Stratum {
  double y_min = 0.0;
  double y_max = 1.0;
  double size_min = 0.01;  // normalized object height
  double size_max = 0.02;
  double density = 1.0;    // relative share of the scene's objects
  int groups = 0;          // 0: uniform placement, otherwise clumped around this many centers
  double group_spread = 0.02;
  double aspect = 0.4;     // pixel width / pixel height of each object
  int class_id = 0;
};

struct SceneSpec {
  int width_px = 3840;
  int height_px = 2160;
  int count_min = 20;
  int count_max = 40;
  std::vector<Stratum> strata;
  std::uint64_t seed = 0;
};

void validate_scene_spec(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);
nlohmann::json scene_spec_to_json(const SceneSpec& spec);
SceneSpec load_scene_spec(const std::filesystem::path& path);

/// Deterministic synthetic crowd. Object height grows with y inside each
/// stratum, so lower strata carry the larger objects when configured so.
Frame generate_scene(const SceneSpec& spec);

enum class DetectionFormat { json, csv };

/// Picks the format from the file extension (".csv" or anything else = json).
DetectionFormat format_for_path(const std::filesystem::path& path);

/// CSV files carry no frame size; `width_px`/`height_px` fill it in.
Frame load_detections(const std::filesystem::path& path, DetectionFormat format,
                      int width_px = 3840, int height_px = 2160);
Frame parse_detections_json(const nlohmann::json& j);
nlohmann::json detections_to_json(const Frame& frame);
std::string detections_to_csv(std::span<const DetectionBox> boxes);
std::vector<DetectionBox> parse_detections_csv(const std::string& text);

/// Writes via a temporary file and rename.
void save_detections(const Frame& frame, const std::filesystem::path& path,
                     DetectionFormat format);

/// Rectangle in normalized frame coordinates.
struct TileRect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 1.0;
  double y1 = 1.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

struct TileGrid {
  int n = 1;
  int e = 1;
  int rows = 1;
  int cols = 1;
  std::vector<TileRect> tiles;  // row-major
};

/// n*E equal tiles; rows is the largest divisor of n*E not above sqrt(n*E).
TileGrid tile_frame(const Frame& frame, int n, int e);

/// Detections reported by one tile, in tile-local normalized coordinates.
struct TileDetections {
  TileRect tile;
  std::vector<DetectionBox> boxes;
};

/// Maps tile-local boxes into frame coordinates and runs class-wise NMS.
std::vector<DetectionBox> aggregate_tiles(std::span<const TileDetections> per_tile,
                                          double iou_threshold);

/// Stand-in for a low-threshold coarse detector.
struct NoisyDetector {
  double drop_prob = 0.0;
  double sigma = 0.0;  // center jitter in units of box size; log-normal size jitter
  std::uint64_t seed = 0;
};

/// Reports every box to the tile holding its center, clipped to that tile,
/// after applying the noise model.
std::vector<TileDetections> emulate_tile_detection(const Frame& frame, const TileGrid& grid,
                                                   const NoisyDetector& noise);

/// tile_frame + emulate_tile_detection + aggregate_tiles.
Frame coarse_detect(const Frame& frame, int n, int e, const NoisyDetector& noise,
                    double iou_threshold);

}  // namespace repose
