#include "repose/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace repose {

namespace {

double dist(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

double population_variance(std::span<const double> v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(v.size());
}

}  // namespace

void validate_transform(const TransformParams& params) {
  if (!(params.alpha_t > 0.0 && params.alpha_t < 1.0)) {
    throw ValidationError("alpha_T must lie in (0,1)");
  }
}

double transform_y(double y, const TransformParams& params) {
  if (!(y >= 0.0 && y <= 1.0)) throw ValidationError("y must lie in [0,1], got " + std::to_string(y));
  return std::pow(y, params.alpha_t);
}

double inverse_transform_y(double y_t, const TransformParams& params) {
  if (!(y_t >= 0.0 && y_t <= 1.0)) throw ValidationError("y_T must lie in [0,1]");
  return std::pow(y_t, 1.0 / params.alpha_t);
}

std::vector<Point2> transform_points(std::span<const Point2> points, const TransformParams& params) {
  std::vector<Point2> out;
  out.reserve(points.size());
  for (const Point2& p : points) out.push_back({p.x, transform_y(p.y, params)});
  return out;
}

DetectionList to_clustering_space(std::span<const DetectionBox> boxes, const TransformParams& params) {
  auto out = std::make_shared<std::vector<DetectionBox>>(boxes.begin(), boxes.end());
  for (DetectionBox& b : *out) b.cy = transform_y(b.cy, params);
  return out;
}

void validate_bandwidth(const BandwidthSpec& spec) {
  if (!(spec.value > 0.0)) throw ValidationError("bandwidth value must be positive");
  if (spec.mode == BandwidthSpec::Mode::quantile && !(spec.value < 1.0)) {
    throw ValidationError("bandwidth quantile must lie in (0,1)");
  }
}

double estimate_bandwidth(std::span<const Point2> points, double quantile) {
  if (points.size() < 2) throw ValidationError("bandwidth estimation needs at least two points");
  if (!(quantile > 0.0 && quantile < 1.0)) throw ValidationError("bandwidth quantile must lie in (0,1)");

  constexpr std::size_t kMaxPoints = 1000;
  std::vector<Point2> sample;
  if (points.size() <= kMaxPoints) {
    sample.assign(points.begin(), points.end());
  } else {
    for (std::size_t k = 0; k < kMaxPoints; ++k) sample.push_back(points[k * points.size() / kMaxPoints]);
  }

  std::vector<double> nn(sample.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    for (std::size_t j = i + 1; j < sample.size(); ++j) {
      const double d = dist(sample[i], sample[j]);
      nn[i] = std::min(nn[i], d);
      nn[j] = std::min(nn[j], d);
    }
  }
  std::sort(nn.begin(), nn.end());
  const double pos = quantile * static_cast<double>(nn.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, nn.size() - 1);
  const double bw = nn[lo] + (pos - static_cast<double>(lo)) * (nn[hi] - nn[lo]);
  return bw > 0.0 ? bw : kBandwidthFloor;
}

double resolve_bandwidth(std::span<const Point2> points, const BandwidthSpec& spec) {
  validate_bandwidth(spec);
  if (spec.mode == BandwidthSpec::Mode::fixed) return spec.value;
  if (points.size() < 2) return kBandwidthFloor;
  return estimate_bandwidth(points, spec.value);
}

std::vector<std::vector<std::size_t>> meanshift_groups(std::span<const Point2> points, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ValidationError("meanshift bandwidth must be positive");
  const std::size_t n = points.size();
  if (n == 0) return {};

  constexpr int kMaxIter = 300;
  constexpr double kStopShift = 1e-4;

  std::vector<Point2> modes(n);
  std::vector<std::size_t> intensity(n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    Point2 m = points[s];
    for (int it = 0; it < kMaxIter; ++it) {
      double sx = 0.0, sy = 0.0;
      std::size_t cnt = 0;
      for (const Point2& p : points) {
        if (dist(p, m) <= bandwidth) {
          sx += p.x;
          sy += p.y;
          ++cnt;
        }
      }
      if (cnt == 0) break;
      const Point2 next{sx / cnt, sy / cnt};
      const double shift = dist(next, m);
      m = next;
      if (shift < kStopShift) break;
    }
    modes[s] = m;
    for (const Point2& p : points) intensity[s] += dist(p, m) <= bandwidth ? 1 : 0;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return intensity[a] > intensity[b]; });
  std::vector<Point2> kept;
  for (std::size_t s : order) {
    const bool near = std::any_of(kept.begin(), kept.end(),
                                  [&](const Point2& k) { return dist(k, modes[s]) < 0.5 * bandwidth; });
    if (!near) kept.push_back(modes[s]);
  }

  std::vector<std::vector<std::size_t>> groups(kept.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const double d = dist(points[i], kept[k]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    groups[best].push_back(i);
  }
  std::erase_if(groups, [](const auto& g) { return g.empty(); });
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return groups;
}

ClusterConfig meanshift(DetectionList detections, double bandwidth) {
  if (!detections || detections->empty()) throw ValidationError("empty scene");
  std::vector<Point2> pts;
  pts.reserve(detections->size());
  for (const DetectionBox& b : *detections) pts.push_back({b.cx, b.cy});
  return make_config(std::move(detections), meanshift_groups(pts, bandwidth));
}

std::vector<int> kmeans_1d(std::span<const double> values, int k) {
  if (k != 2) throw ValidationError("kmeans_1d supports k = 2 only");
  const std::size_t n = values.size();
  if (n < 2) throw ValidationError("kmeans_1d needs at least two values");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  // Centering keeps the prefix-sum SSE formula well conditioned.
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double v = values[order[r]] - mean;
    s1[r + 1] = s1[r] + v;
    s2[r + 1] = s2[r] + v * v;
  }
  auto sse = [&](std::size_t lo, std::size_t hi) {
    const double cnt = static_cast<double>(hi - lo);
    const double sum = s1[hi] - s1[lo];
    return std::max(0.0, (s2[hi] - s2[lo]) - sum * sum / cnt);
  };

  std::size_t best_split = 1;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t split = 1; split < n; ++split) {
    const double cost = sse(0, split) + sse(split, n);
    if (cost < best_cost) {
      best_cost = cost;
      best_split = split;
    }
  }

  std::vector<int> labels(n, 1);
  for (std::size_t r = 0; r < best_split; ++r) labels[order[r]] = 0;
  return labels;
}

double two_means_cost(std::span<const double> values, std::span<const int> labels) {
  double sum[2] = {0.0, 0.0};
  double cnt[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum[labels[i]] += values[i];
    cnt[labels[i]] += 1.0;
  }
  double cost = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double mu = sum[labels[i]] / cnt[labels[i]];
    cost += (values[i] - mu) * (values[i] - mu);
  }
  return cost;
}

ClusterConfig merge_clusters(const ClusterConfig& config, std::size_t i, std::size_t j) {
  if (i == j) throw ValidationError("cannot merge a cluster with itself");
  if (i >= config.count() || j >= config.count()) throw ValidationError("merge index out of range");

  std::vector<std::size_t> members = config.cluster(i).members;
  const auto& other = config.cluster(j).members;
  members.insert(members.end(), other.begin(), other.end());

  std::vector<Cluster> clusters;
  clusters.reserve(config.count() - 1);
  for (std::size_t k = 0; k < config.count(); ++k) {
    if (k != i && k != j) clusters.push_back(config.cluster(k));
  }
  clusters.push_back(make_cluster(std::move(members), config.detections()));
  return ClusterConfig(config.shared_detections(), std::move(clusters));
}

std::pair<std::size_t, std::size_t> select_merge_pair(const ClusterConfig& config) {
  if (config.count() < 2) throw ValidationError("merge unavailable");
  std::pair<std::size_t, std::size_t> best{0, 1};
  double best_d = std::numeric_limits<double>::infinity();
  const auto& cs = config.clusters();
  for (std::size_t i = 0; i < cs.size(); ++i) {
    for (std::size_t j = i + 1; j < cs.size(); ++j) {
      const double d = std::hypot(cs[i].mu_x - cs[j].mu_x, cs[i].mu_y - cs[j].mu_y);
      if (d < best_d) {
        best_d = d;
        best = {i, j};
      }
    }
  }
  return best;
}

SplitAxis split_axis(const ClusterConfig& config, std::size_t i) {
  const Cluster& c = config.cluster(i);
  std::vector<double> xs, ys;
  for (std::size_t idx : c.members) {
    xs.push_back(config.detections()[idx].cx);
    ys.push_back(config.detections()[idx].cy);
  }
  return population_variance(xs) > population_variance(ys) ? SplitAxis::x : SplitAxis::y;
}

ClusterConfig split_cluster(const ClusterConfig& config, std::size_t i) {
  if (i >= config.count()) throw ValidationError("split index out of range");
  const Cluster& c = config.cluster(i);
  if (c.size < 2) throw ValidationError("split unavailable");

  const SplitAxis axis = split_axis(config, i);
  std::vector<double> coord;
  coord.reserve(c.size);
  for (std::size_t idx : c.members) {
    const DetectionBox& b = config.detections()[idx];
    coord.push_back(axis == SplitAxis::x ? b.cx : b.cy);
  }
  const std::vector<int> labels = kmeans_1d(coord);

  std::vector<std::size_t> lower, upper;
  for (std::size_t k = 0; k < c.members.size(); ++k) {
    (labels[k] == 0 ? lower : upper).push_back(c.members[k]);
  }

  std::vector<Cluster> clusters = config.clusters();
  clusters[i] = make_cluster(std::move(lower), config.detections());
  clusters.push_back(make_cluster(std::move(upper), config.detections()));
  return ClusterConfig(config.shared_detections(), std::move(clusters));
}

}  // namespace repose
