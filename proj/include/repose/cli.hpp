#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "repose/offload.hpp"
#include "repose/ppo.hpp"
#include "repose/rl_env.hpp"
#include "repose/scene.hpp"

namespace repose {

enum class PolicyKind { checkpoint, keep, random };

/// Settings shared by every subcommand. Precedence: command-line flags, then
/// the --config file, then these defaults.
struct PipelineConfig {
  SceneSpec scene;
  std::filesystem::path detections;  // when set, replaces generated scenes
  std::filesystem::path profile;     // empty: built-in profile table
  bool allow_non_monotone_profile = false;
  std::filesystem::path checkpoint;
  std::optional<PolicyKind> policy;  // unset: checkpoint if one is given, else keep
  std::filesystem::path out_dir = "out";

  RewardWeights weights;
  TransformParams transform;
  BandwidthSpec bandwidth{BandwidthSpec::Mode::fixed, 0.06};
  std::size_t n_pad = 30;
  int t_max = 30;
  bool include_count = true;
  bool raw_y_geometry = false;
  int keep_streak_stop = 0;

  int n = 1;
  int e = 4;
  double nms_iou = 0.5;
  double block_margin = 0.0;
  NoisyDetector noise;

  int d_max = 2500;
  int scenes = 1;
  int eval_episodes = 100;
  Hyperparams train;
  std::uint64_t seed = 0;
};

/// Default scene: small dense crowds up top, larger sparse people below.
SceneSpec default_scene_spec();

PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
EnvConfig env_config(const PipelineConfig& cfg);

/// Scene seed used for evaluation episode `k`; disjoint from training seeds.
std::uint64_t heldout_seed(std::uint64_t base, std::uint64_t k);

/// Partition report: frame, detections, final clusters with pixel blocks,
/// initial clusters and the per-step action trace.
nlohmann::json clusters_to_json(const Frame& frame, const InferenceResult& result, double block_margin);

struct ClustersFile {
  Frame frame;
  std::vector<std::vector<std::size_t>> groups;
};

/// Reads a report written by clusters_to_json.
ClustersFile parse_clusters_json(const nlohmann::json& j);

/// One PartitionDescriptor per group, ids in group order.
std::vector<PartitionDescriptor> partitions_from_clusters(const Frame& frame,
                                                          const std::vector<std::vector<std::size_t>>& groups,
                                                          double block_margin);

struct EvalEpisode {
  std::string policy;
  int episode = 0;
  std::uint64_t seed = 0;
  double final_reward = 0.0;
  std::size_t final_n = 0;
  bool in_range = false;
};

struct EvalSummary {
  std::string policy;
  int episodes = 0;
  double mean_final_reward = 0.0;
  double stderr_final_reward = 0.0;
  double mean_n = 0.0;
  double frac_in_range = 0.0;
};

/// Runs each named policy on the same held-out scenes.
std::vector<EvalEpisode> evaluate_policies(const std::vector<std::pair<std::string, ActionPolicy>>& policies,
                                           const SceneSpec& scenes, const EnvConfig& env, int episodes,
                                           std::uint64_t seed);
std::vector<EvalSummary> summarize(const std::vector<EvalEpisode>& episodes);

/// Entry point of the `repose` tool. Exit codes: 0 ok, 1 runtime/numeric
/// failure, 2 usage/validation, 3 infeasible plan.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace repose
