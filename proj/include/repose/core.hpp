#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace repose {

/// Thrown when an input violates a documented precondition (bad file, out of
/// range value, malformed config). The CLI maps it to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One detected object in normalized frame coordinates.
struct DetectionBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  double score = 1.0;
  int class_id = 0;

  double area() const { return w * h; }
  double left() const { return cx - 0.5 * w; }
  double right() const { return cx + 0.5 * w; }
  double top() const { return cy - 0.5 * h; }
  double bottom() const { return cy + 0.5 * h; }

  friend bool operator==(const DetectionBox&, const DetectionBox&) = default;
};

/// Throws ValidationError unless 0<=cx,cy<=1, 0<w,h<=1 and 0<=score<=1.
void validate_box(const DetectionBox& box);

/// Shrinks the extents of `box` so that it lies inside the unit frame. The
/// center moves to the middle of the clipped extent.
DetectionBox clamp_to_unit(const DetectionBox& box);

struct Frame {
  int width_px = 0;
  int height_px = 0;
  std::vector<DetectionBox> detections;
};

using DetectionList = std::shared_ptr<const std::vector<DetectionBox>>;

struct ClusterStats {
  double mu_x = 0.0;
  double mu_y = 0.0;
  double mu_w = 0.0;
  double mu_h = 0.0;
  std::size_t size = 0;
};

struct Cluster {
  std::vector<std::size_t> members;
  double mu_x = 0.0;
  double mu_y = 0.0;
  double mu_w = 0.0;
  double mu_h = 0.0;
  std::size_t size = 0;
};

/// Arithmetic means of the member fields. Throws ValidationError("empty
/// cluster") when `members` is empty and std::out_of_range on a bad index.
ClusterStats cluster_stats(std::span<const std::size_t> members,
                           std::span<const DetectionBox> detections);

Cluster make_cluster(std::vector<std::size_t> members,
                     std::span<const DetectionBox> detections);

/// A set of clusters that partitions every index of a shared detection list.
///
/// The detection list is held by shared pointer so that the snapshots produced
/// by merge/split operations are cheap and never copy the detections.
class ClusterConfig {
 public:
  /// Throws ValidationError when the clusters are empty, contain duplicates,
  /// or do not cover every detection exactly once.
  ClusterConfig(DetectionList detections, std::vector<Cluster> clusters);

  const std::vector<Cluster>& clusters() const { return clusters_; }
  const Cluster& cluster(std::size_t i) const { return clusters_.at(i); }
  std::span<const DetectionBox> detections() const { return *detections_; }
  const DetectionList& shared_detections() const { return detections_; }
  std::size_t count() const { return clusters_.size(); }
  std::size_t total_detections() const { return detections_->size(); }

  /// Member sets in cluster order, each sorted ascending.
  std::vector<std::vector<std::size_t>> member_sets() const;

 private:
  DetectionList detections_;
  std::vector<Cluster> clusters_;
};

/// Builds a config from plain member lists, computing stats for each.
ClusterConfig make_config(DetectionList detections,
                          const std::vector<std::vector<std::size_t>>& groups);

double iou(const DetectionBox& a, const DetectionBox& b);

/// Greedy class-wise NMS. Boxes are visited by descending score (ties by input
/// index) and kept iff their IoU with every kept box of the same class is
/// below `iou_threshold`. Output is in visiting order.
std::vector<DetectionBox> nms(std::span<const DetectionBox> boxes,
                              double iou_threshold);

struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

/// Smallest pixel rectangle covering every member box, grown by
/// margin * max(width, height) on each side and clipped to the frame.
PixelRect bounding_block(const Cluster& cluster,
                         std::span<const DetectionBox> detections,
                         double margin, const Frame& frame);

}  // namespace repose
