#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "repose/mlp.hpp"
#include "repose/rl_env.hpp"

namespace repose {

/// Raised when a loss or parameter becomes NaN/inf. The CLI maps it to exit 1.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { sgd, adam };

struct Hyperparams {
  double discount = 0.99;
  double clip_eps = 0.2;
  double lr_policy = 3e-4;
  double lr_critic = 1e-3;
  std::size_t batch_size = 64;
  int iterations = 100;
  int episodes_per_iteration = 8;
  int epochs = 4;
  double entropy_coef = 0.01;
  bool standardize_advantages = true;
  // Rewards are multiplied by this before returns are formed. The default
  // cancels the 1e6 count weight so critic targets stay O(1).
  double reward_scale = 1e-6;
  double max_grad_norm = 0.5;  // 0 disables norm clipping
  OptimizerKind optimizer = OptimizerKind::sgd;
  std::size_t hidden_width = 128;
  std::uint64_t seed = 0;
};

void validate_hyperparams(const Hyperparams& h);

struct TrainingMetadata {
  int iterations = 0;
  double final_mean_return = 0.0;
};

/// Everything needed to rebuild a trained agent.
struct PolicyCheckpoint {
  std::size_t n_pad = 0;
  bool include_count = true;
  MlpParams policy;
  MlpParams critic;
  RewardWeights weights;
  Hyperparams hyper;
  TrainingMetadata meta;

  std::size_t state_dim() const { return repose::state_dim(n_pad, include_count); }
  std::size_t action_dim() const { return action_count(n_pad); }
};

/// Fresh policy (state -> H -> H -> actions) and critic (state -> H -> H -> 1).
PolicyCheckpoint init_checkpoint(const EnvConfig& env, const Hyperparams& hyper);

/// Throws ValidationError when the checkpoint dimensions do not fit `env`.
void check_compatible(const PolicyCheckpoint& ckpt, const EnvConfig& env);

/// Log-probabilities of the masked softmax; masked entries are -inf.
std::vector<double> masked_log_softmax(std::span<const double> logits, const ActionMask& mask);

struct SampledAction {
  ActionId action = kActionKeep;
  double log_prob = 0.0;
};

SampledAction policy_sample(std::span<const double> logits, const ActionMask& mask, std::mt19937_64& rng);

/// Highest-logit valid action, ties to the lowest id.
ActionId greedy_action(std::span<const double> logits, const ActionMask& mask);

struct Transition {
  StateVector state;
  ActionId action = kActionKeep;
  double log_prob = 0.0;
  double reward = 0.0;
  ActionMask mask;
  bool done = false;
};

/// G_t = R_t + discount * G_{t+1}, restarting after every done flag and at the
/// end of the list.
std::vector<double> discounted_returns(std::span<const Transition> transitions, double discount);

struct ReturnsAdvantages {
  std::vector<double> returns;
  std::vector<double> advantages;
};

/// A_t = G_t - V(s_t), optionally standardized to zero mean, unit deviation.
ReturnsAdvantages compute_returns_advantages(std::span<const Transition> transitions, double discount,
                                             const MlpParams& critic, bool standardize);

void standardize(std::vector<double>& values);

/// One training sample as consumed by the update step.
struct BatchItem {
  StateVector state;
  ActionMask mask;
  ActionId action = kActionKeep;
  double old_log_prob = 0.0;
  double advantage = 0.0;
  double ret = 0.0;
};

struct ObjectiveAndGrad {
  double value = 0.0;
  MlpParams grad;
};

/// Clipped surrogate plus entropy bonus, averaged over the batch, and its
/// gradient (ascent direction) by backpropagation.
ObjectiveAndGrad clip_objective(const MlpParams& policy, std::span<const BatchItem> batch, double clip_eps,
                                double entropy_coef);

/// Mean squared error of the critic against the returns, and its gradient.
ObjectiveAndGrad value_loss(const MlpParams& critic, std::span<const BatchItem> batch);

struct AdamMoments {
  MlpParams m;
  MlpParams v;
  long step = 0;
};

struct OptimizerState {
  AdamMoments policy;
  AdamMoments critic;
};

struct PpoUpdate {
  MlpParams policy;
  MlpParams critic;
  double clip_objective = 0.0;
  double value_loss = 0.0;
};

/// One gradient step: the policy ascends the clipped objective, the critic
/// descends the value loss. Throws NumericError on a non-finite loss.
PpoUpdate ppo_update(const MlpParams& policy, const MlpParams& critic, std::span<const BatchItem> batch,
                     const Hyperparams& hyper, OptimizerState* state = nullptr);

/// Produces the training scene for a given seed.
using SceneSampler = std::function<Frame(std::uint64_t seed)>;

struct IterationLog {
  int iteration = 0;
  double mean_return = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double mean_n_final = 0.0;
};

struct TrainResult {
  PolicyCheckpoint checkpoint;
  std::vector<IterationLog> log;
};

/// Seed of episode `episode` in iteration `iteration`.
std::uint64_t episode_seed(std::uint64_t base, std::uint64_t iteration, std::uint64_t episode);

TrainResult train(const SceneSampler& sampler, const EnvConfig& env, const Hyperparams& hyper,
                  const std::function<void(const IterationLog&)>& on_iteration = {});

std::string training_log_csv(std::span<const IterationLog> log);

/// Decision rule used at inference time.
using ActionPolicy = std::function<ActionId(const StateVector&, const ActionMask&)>;

ActionPolicy keep_policy();
ActionPolicy random_policy(std::uint64_t seed);
ActionPolicy greedy_policy(std::shared_ptr<const PolicyCheckpoint> ckpt);

struct TraceStep {
  int t = 0;
  ActionId action = kActionKeep;
  bool valid = true;
  std::size_t n = 0;
  RewardBreakdown reward;
};

struct InferenceResult {
  ClusterConfig initial;
  ClusterConfig final_config;
  std::vector<TraceStep> trace;
};

/// reset, then T_max steps of `policy`. A positive keep_streak_stop ends the
/// episode early after that many consecutive keeps.
InferenceResult run_policy(const Frame& frame, const EnvConfig& env, const ActionPolicy& policy,
                           int keep_streak_stop = 0);

/// Greedy rollout of a trained checkpoint.
InferenceResult rl_dca_infer(const Frame& frame, const PolicyCheckpoint& ckpt, const EnvConfig& env,
                             int keep_streak_stop = 0);

}  // namespace repose
