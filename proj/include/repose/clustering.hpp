#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "repose/core.hpp"

namespace repose {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Exponent of the vertical stretch y -> y^alpha_t, 0 < alpha_t < 1.
struct TransformParams {
  double alpha_t = 0.5;
};

void validate_transform(const TransformParams& params);

/// Throws ValidationError for y outside [0,1].
double transform_y(double y, const TransformParams& params);
double inverse_transform_y(double y_t, const TransformParams& params);
std::vector<Point2> transform_points(std::span<const Point2> points, const TransformParams& params);

/// Copy of `boxes` with every cy replaced by its transformed value. Cluster
/// geometry (centroids, variances, reward distances) is measured on this view.
DetectionList to_clustering_space(std::span<const DetectionBox> boxes, const TransformParams& params);

struct BandwidthSpec {
  enum class Mode { fixed, quantile };
  Mode mode = Mode::quantile;
  double value = 0.2;
};

void validate_bandwidth(const BandwidthSpec& spec);

inline constexpr double kBandwidthFloor = 1e-3;

/// `quantile` of the nearest-neighbor distance distribution (linear
/// interpolation between order statistics). At most 1000 evenly strided points
/// are used. Falls back to kBandwidthFloor when the estimate is not positive.
double estimate_bandwidth(std::span<const Point2> points, double quantile);

double resolve_bandwidth(std::span<const Point2> points, const BandwidthSpec& spec);

/// Flat-kernel MeanShift. Returns member groups, nonempty, each ascending.
std::vector<std::vector<std::size_t>> meanshift_groups(std::span<const Point2> points, double bandwidth);

/// MeanShift over the (cx, cy) centers of `detections`.
ClusterConfig meanshift(DetectionList detections, double bandwidth);

/// Optimal two-way 1D partition by exhaustive scan of sorted split points.
/// Label 0 holds the lower values, label 1 the upper ones.
std::vector<int> kmeans_1d(std::span<const double> values, int k = 2);

/// Within-cluster sum of squares for a 0/1 labelling.
double two_means_cost(std::span<const double> values, std::span<const int> labels);

/// Removes clusters i and j and appends their union.
ClusterConfig merge_clusters(const ClusterConfig& config, std::size_t i, std::size_t j);

/// Pair (i < j) with the smallest centroid distance, ties lexicographic.
/// Throws ValidationError("merge unavailable") when count < 2.
std::pair<std::size_t, std::size_t> select_merge_pair(const ClusterConfig& config);

enum class SplitAxis { x, y };

/// Axis with the larger population variance of member centers; ties go to y.
SplitAxis split_axis(const ClusterConfig& config, std::size_t i);

/// 1D K-Means split of cluster i along split_axis(). The lower sub-cluster
/// takes slot i, the upper one is appended. Throws ValidationError("split
/// unavailable") for singletons.
ClusterConfig split_cluster(const ClusterConfig& config, std::size_t i);

}  // namespace repose
