#include "repose/rl_env.hpp"

#include <algorithm>
#include <cmath>

namespace repose {

void validate_weights(const RewardWeights& w) {
  if (!(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0 && w.delta >= 0.0)) {
    throw ValidationError("reward weights must be nonnegative");
  }
  if (w.n_min < 1 || w.n_max < w.n_min) throw ValidationError("reward bounds must satisfy 1 <= N_min <= N_max");
  if (!(w.d_m > 0.0)) throw ValidationError("d_m must be positive");
}

double count_penalty(std::size_t n, const RewardWeights& w) {
  const auto count = static_cast<double>(n);
  if (count < w.n_min) return -(w.n_min - count);
  if (count > w.n_max) return -(count - w.n_max);
  return 0.0;
}

RewardBreakdown compute_reward(const ClusterConfig& config, const RewardWeights& w) {
  const auto dets = config.detections();
  const auto& cs = config.clusters();
  const double n = static_cast<double>(cs.size());

  RewardBreakdown r;
  double tight = 0.0;
  double spread = 0.0;
  for (const Cluster& c : cs) {
    double dsum = 0.0;
    double area_mean = 0.0;
    for (std::size_t idx : c.members) {
      dsum += std::hypot(dets[idx].cx - c.mu_x, dets[idx].cy - c.mu_y);
      area_mean += dets[idx].area();
    }
    area_mean /= static_cast<double>(c.size);
    double var = 0.0;
    for (std::size_t idx : c.members) {
      const double d = dets[idx].area() - area_mean;
      var += d * d;
    }
    tight += dsum / static_cast<double>(c.size);
    spread += var / static_cast<double>(c.size);
  }
  r.r1 = -tight / n;
  r.r2 = -spread / n;
  r.r3 = count_penalty(cs.size(), w);

  int close = 0;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    for (std::size_t j = i + 1; j < cs.size(); ++j) {
      if (std::hypot(cs[i].mu_x - cs[j].mu_x, cs[i].mu_y - cs[j].mu_y) < w.d_m) ++close;
    }
  }
  r.r4 = -static_cast<double>(close);
  r.total = w.alpha * r.r1 + w.beta * r.r2 + w.gamma * r.r3 + w.delta * r.r4;
  return r;
}

StateVector encode_state(const ClusterConfig& config, std::size_t n_pad, std::size_t total_detections,
                         bool include_count) {
  if (n_pad < 1) throw ValidationError("N_pad must be >= 1");
  StateVector s(state_dim(n_pad, include_count), 0.0);
  const double total = total_detections > 0 ? static_cast<double>(total_detections) : 1.0;
  const std::size_t filled = std::min(config.count(), n_pad);
  for (std::size_t i = 0; i < filled; ++i) {
    const Cluster& c = config.cluster(i);
    double* slot = s.data() + 5 * i;
    slot[0] = c.mu_x;
    slot[1] = c.mu_y;
    slot[2] = c.mu_w;
    slot[3] = c.mu_h;
    slot[4] = static_cast<double>(c.size) / total;
  }
  if (include_count) {
    s.back() = std::min(1.0, static_cast<double>(config.count()) / static_cast<double>(n_pad));
  }
  return s;
}

ActionMask action_mask(const ClusterConfig& config, std::size_t n_pad) {
  ActionMask m(action_count(n_pad), 0);
  m[kActionKeep] = 1;
  m[kActionMerge] = config.count() >= 2 ? 1 : 0;
  for (std::size_t i = 0; i < n_pad && i < config.count(); ++i) {
    m[static_cast<std::size_t>(split_action(i))] = config.cluster(i).size >= 2 ? 1 : 0;
  }
  return m;
}

void validate_env_config(const EnvConfig& cfg) {
  validate_weights(cfg.weights);
  validate_transform(cfg.transform);
  validate_bandwidth(cfg.bandwidth);
  if (cfg.n_pad < 1) throw ValidationError("N_pad must be >= 1");
  if (cfg.t_max < 1) throw ValidationError("T_max must be >= 1");
}

ClusterConfig reset_clusters(const Frame& frame, const TransformParams& transform,
                             const BandwidthSpec& bandwidth, bool raw_y_geometry) {
  if (frame.detections.empty()) throw ValidationError("empty scene");
  validate_transform(transform);
  const DetectionList transformed = to_clustering_space(frame.detections, transform);

  std::vector<Point2> pts;
  pts.reserve(transformed->size());
  for (const DetectionBox& b : *transformed) pts.push_back({b.cx, b.cy});
  const double bw = resolve_bandwidth(pts, bandwidth);
  const auto groups = meanshift_groups(pts, bw);

  if (raw_y_geometry) {
    return make_config(std::make_shared<const std::vector<DetectionBox>>(frame.detections), groups);
  }
  return make_config(transformed, groups);
}

StepOutcome step_clusters(const ClusterConfig& config, ActionId action, const EnvConfig& cfg) {
  const ActionMask mask = action_mask(config, cfg.n_pad);
  const bool valid = action >= 0 && static_cast<std::size_t>(action) < mask.size() &&
                     mask[static_cast<std::size_t>(action)] != 0;

  std::optional<ClusterConfig> next;
  if (!valid || action == kActionKeep) {
    next = config;
  } else if (action == kActionMerge) {
    const auto [i, j] = select_merge_pair(config);
    next = merge_clusters(config, i, j);
  } else {
    next = split_cluster(config, static_cast<std::size_t>(action - 2));
  }

  StepOutcome out{*next, {}, {}, false, valid, next->count()};
  out.state = encode_state(out.config, cfg.n_pad, out.config.total_detections(), cfg.include_count);
  out.reward = compute_reward(out.config, cfg.weights);
  return out;
}

Environment::Environment(EnvConfig cfg) : cfg_(std::move(cfg)) { validate_env_config(cfg_); }

StateVector Environment::reset(const Frame& frame) {
  clusters_ = reset_clusters(frame, cfg_.transform, cfg_.bandwidth, cfg_.raw_y_geometry);
  t_ = 0;
  return state();
}

StepOutcome Environment::step(ActionId action) {
  StepOutcome out = step_clusters(clusters(), action, cfg_);
  clusters_ = out.config;
  ++t_;
  out.done = done();
  return out;
}

const ClusterConfig& Environment::clusters() const {
  if (!clusters_) throw std::logic_error("environment used before reset");
  return *clusters_;
}

StateVector Environment::state() const {
  return encode_state(clusters(), cfg_.n_pad, clusters().total_detections(), cfg_.include_count);
}

ActionMask Environment::mask() const { return action_mask(clusters(), cfg_.n_pad); }

}  // namespace repose
