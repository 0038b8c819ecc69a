#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "repose/clustering.hpp"
#include "repose/core.hpp"

namespace repose {

/// Weights and bounds of the clustering reward.
struct RewardWeights {
  double alpha = 50.0;      // tightness
  double beta = 1.0;        // area variance
  double gamma = 1000000.0; // cluster count
  double delta = 5.0;       // close pairs
  int n_min = 10;
  int n_max = 15;
  double d_m = 0.03;        // minimum centroid separation
};

void validate_weights(const RewardWeights& w);

struct RewardBreakdown {
  double r1 = 0.0;
  double r2 = 0.0;
  double r3 = 0.0;
  double r4 = 0.0;
  double total = 0.0;
};

/// Piecewise count penalty: -(n_min - n) below the range, -(n - n_max) above.
double count_penalty(std::size_t n, const RewardWeights& w);

/// All distances are measured on the config's own detection view, i.e. the
/// clustering space (x, y_T) for configs built by reset().
RewardBreakdown compute_reward(const ClusterConfig& config, const RewardWeights& w);

using StateVector = std::vector<double>;
using ActionMask = std::vector<std::uint8_t>;
using ActionId = int;

inline constexpr ActionId kActionKeep = 0;
inline constexpr ActionId kActionMerge = 1;
inline constexpr ActionId split_action(std::size_t cluster) { return 2 + static_cast<ActionId>(cluster); }
inline constexpr std::size_t action_count(std::size_t n_pad) { return 2 + n_pad; }
inline constexpr std::size_t state_dim(std::size_t n_pad, bool include_count = true) {
  return 5 * n_pad + (include_count ? 1 : 0);
}

/// Per slot (mu_x, mu_y, mu_w, mu_h, S_i / total_detections), zero padded,
/// followed by min(N / n_pad, 1) when include_count is set.
StateVector encode_state(const ClusterConfig& config, std::size_t n_pad, std::size_t total_detections,
                         bool include_count = true);

/// keep always; merge iff N >= 2; split i iff i < N and S_i >= 2.
ActionMask action_mask(const ClusterConfig& config, std::size_t n_pad);

struct EnvConfig {
  RewardWeights weights;
  TransformParams transform;
  BandwidthSpec bandwidth;
  std::size_t n_pad = 30;
  int t_max = 30;
  bool include_count = true;
  bool raw_y_geometry = false;  // measure cluster geometry on raw y instead of y_T
};

void validate_env_config(const EnvConfig& cfg);

/// transform_y + MeanShift. Throws ValidationError("empty scene") when the
/// frame has no detections.
ClusterConfig reset_clusters(const Frame& frame, const TransformParams& transform,
                             const BandwidthSpec& bandwidth, bool raw_y_geometry = false);

struct StepOutcome {
  ClusterConfig config;
  StateVector state;
  RewardBreakdown reward;
  bool done = false;
  bool action_valid = true;
  std::size_t n = 0;
};

/// Applies one action and scores the resulting configuration. Masked or out
/// of range actions degrade to keep with action_valid = false. `done` is left
/// false; Environment tracks the episode length.
StepOutcome step_clusters(const ClusterConfig& config, ActionId action, const EnvConfig& cfg);

/// Stateful wrapper that owns one episode.
class Environment {
 public:
  explicit Environment(EnvConfig cfg);

  StateVector reset(const Frame& frame);
  StepOutcome step(ActionId action);

  const ClusterConfig& clusters() const;
  StateVector state() const;
  ActionMask mask() const;
  const EnvConfig& config() const { return cfg_; }
  int steps_taken() const { return t_; }
  bool done() const { return t_ >= cfg_.t_max; }

 private:
  EnvConfig cfg_;
  std::optional<ClusterConfig> clusters_;
  int t_ = 0;
};

}  // namespace repose
