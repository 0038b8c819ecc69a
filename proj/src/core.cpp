#include "repose/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace repose {

void validate_box(const DetectionBox& box) {
  auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!in_unit(box.cx) || !in_unit(box.cy)) {
    throw ValidationError("box center out of range [0,1]");
  }
  if (!(std::isfinite(box.w) && box.w > 0.0 && box.w <= 1.0) ||
      !(std::isfinite(box.h) && box.h > 0.0 && box.h <= 1.0)) {
    throw ValidationError("box size must lie in (0,1]");
  }
  if (!in_unit(box.score)) {
    throw ValidationError("box score out of range [0,1]");
  }
}

DetectionBox clamp_to_unit(const DetectionBox& box) {
  const double x0 = std::clamp(box.left(), 0.0, 1.0);
  const double x1 = std::clamp(box.right(), 0.0, 1.0);
  const double y0 = std::clamp(box.top(), 0.0, 1.0);
  const double y1 = std::clamp(box.bottom(), 0.0, 1.0);
  DetectionBox out = box;
  out.cx = 0.5 * (x0 + x1);
  out.cy = 0.5 * (y0 + y1);
  out.w = x1 - x0;
  out.h = y1 - y0;
  return out;
}

ClusterStats cluster_stats(std::span<const std::size_t> members,
                           std::span<const DetectionBox> detections) {
  if (members.empty()) throw ValidationError("empty cluster");
  ClusterStats s;
  for (std::size_t idx : members) {
    if (idx >= detections.size()) throw std::out_of_range("cluster member index out of range");
    const DetectionBox& b = detections[idx];
    s.mu_x += b.cx;
    s.mu_y += b.cy;
    s.mu_w += b.w;
    s.mu_h += b.h;
  }
  const double n = static_cast<double>(members.size());
  s.mu_x /= n;
  s.mu_y /= n;
  s.mu_w /= n;
  s.mu_h /= n;
  s.size = members.size();
  return s;
}

Cluster make_cluster(std::vector<std::size_t> members,
                     std::span<const DetectionBox> detections) {
  const ClusterStats s = cluster_stats(members, detections);
  Cluster c;
  c.members = std::move(members);
  c.mu_x = s.mu_x;
  c.mu_y = s.mu_y;
  c.mu_w = s.mu_w;
  c.mu_h = s.mu_h;
  c.size = s.size;
  return c;
}

ClusterConfig::ClusterConfig(DetectionList detections, std::vector<Cluster> clusters)
    : detections_(std::move(detections)), clusters_(std::move(clusters)) {
  if (!detections_) throw ValidationError("cluster config without detections");
  if (clusters_.empty()) throw ValidationError("cluster config needs at least one cluster");
  std::vector<char> seen(detections_->size(), 0);
  std::size_t covered = 0;
  for (const Cluster& c : clusters_) {
    if (c.members.empty() || c.size != c.members.size()) {
      throw ValidationError("empty cluster");
    }
    for (std::size_t idx : c.members) {
      if (idx >= seen.size()) throw ValidationError("cluster member index out of range");
      if (seen[idx]) throw ValidationError("detection assigned to more than one cluster");
      seen[idx] = 1;
      ++covered;
    }
  }
  if (covered != detections_->size()) {
    throw ValidationError("clusters do not cover every detection");
  }
}

std::vector<std::vector<std::size_t>> ClusterConfig::member_sets() const {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(clusters_.size());
  for (const Cluster& c : clusters_) {
    auto m = c.members;
    std::sort(m.begin(), m.end());
    out.push_back(std::move(m));
  }
  return out;
}

ClusterConfig make_config(DetectionList detections,
                          const std::vector<std::vector<std::size_t>>& groups) {
  if (!detections) throw ValidationError("cluster config without detections");
  std::vector<Cluster> clusters;
  clusters.reserve(groups.size());
  for (const auto& g : groups) clusters.push_back(make_cluster(g, *detections));
  return ClusterConfig(std::move(detections), std::move(clusters));
}

double iou(const DetectionBox& a, const DetectionBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<DetectionBox> nms(std::span<const DetectionBox> boxes, double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return boxes[a].score > boxes[b].score;
  });

  std::vector<DetectionBox> kept;
  for (std::size_t idx : order) {
    const DetectionBox& cand = boxes[idx];
    bool suppressed = false;
    for (const DetectionBox& k : kept) {
      if (k.class_id == cand.class_id && iou(k, cand) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

PixelRect bounding_block(const Cluster& cluster, std::span<const DetectionBox> detections,
                         double margin, const Frame& frame) {
  if (cluster.members.empty()) throw ValidationError("empty cluster");
  if (!(margin >= 0.0)) throw ValidationError("block margin must be >= 0");
  if (frame.width_px <= 0 || frame.height_px <= 0) throw ValidationError("frame size must be positive");

  double x0 = 1.0, y0 = 1.0, x1 = 0.0, y1 = 0.0;
  for (std::size_t idx : cluster.members) {
    const DetectionBox& b = detections[idx];
    x0 = std::min(x0, b.left());
    y0 = std::min(y0, b.top());
    x1 = std::max(x1, b.right());
    y1 = std::max(y1, b.bottom());
  }
  const double W = frame.width_px;
  const double H = frame.height_px;
  double px0 = x0 * W, px1 = x1 * W, py0 = y0 * H, py1 = y1 * H;
  const double grow = margin * std::max(px1 - px0, py1 - py0);
  px0 -= grow;
  py0 -= grow;
  px1 += grow;
  py1 += grow;

  // Snap outward to whole pixels; the slack absorbs representation error such
  // as 0.4 * 1000 landing a hair above 400.
  constexpr double kSnap = 1e-6;
  PixelRect r;
  r.x0 = static_cast<int>(std::clamp(std::floor(px0 + kSnap), 0.0, W));
  r.y0 = static_cast<int>(std::clamp(std::floor(py0 + kSnap), 0.0, H));
  r.x1 = static_cast<int>(std::clamp(std::ceil(px1 - kSnap), 0.0, W));
  r.y1 = static_cast<int>(std::clamp(std::ceil(py1 - kSnap), 0.0, H));
  if (r.x1 <= r.x0) {
    if (r.x0 >= frame.width_px) r.x0 = frame.width_px - 1;
    r.x1 = r.x0 + 1;
  }
  if (r.y1 <= r.y0) {
    if (r.y0 >= frame.height_px) r.y0 = frame.height_px - 1;
    r.y1 = r.y0 + 1;
  }
  return r;
}

}  // namespace repose
