#include "repose/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "repose/io.hpp"

namespace repose {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void clip_grad_norm(MlpParams& grad, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = std::sqrt(squared_norm(grad));
  if (norm > max_norm) scale_in_place(grad, max_norm / norm);
}

// Returns the step direction for a gradient: the gradient itself for plain
// steps, the bias-corrected Adam direction otherwise.
MlpParams step_direction(const MlpParams& params, const MlpParams& grad, OptimizerKind kind,
                         AdamMoments* moments) {
  if (kind == OptimizerKind::sgd || moments == nullptr) return grad;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (moments->m.layers.empty()) {
    moments->m = zeros_like(params);
    moments->v = zeros_like(params);
  }
  ++moments->step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(moments->step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(moments->step));
  MlpParams dir = zeros_like(params);
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    auto update = [&](std::vector<double>& m, std::vector<double>& v, const std::vector<double>& g,
                      std::vector<double>& d) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = b1 * m[i] + (1 - b1) * g[i];
        v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
        d[i] = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    };
    update(moments->m.layers[k].weights, moments->v.layers[k].weights, grad.layers[k].weights,
           dir.layers[k].weights);
    update(moments->m.layers[k].biases, moments->v.layers[k].biases, grad.layers[k].biases,
           dir.layers[k].biases);
  }
  return dir;
}

}  // namespace

void validate_hyperparams(const Hyperparams& h) {
  if (!(h.discount > 0.0 && h.discount < 1.0)) throw ValidationError("discount must lie in (0,1)");
  if (!(h.clip_eps > 0.0)) throw ValidationError("clip epsilon must be positive");
  if (!(h.lr_policy > 0.0 && h.lr_critic > 0.0)) throw ValidationError("learning rates must be positive");
  if (h.batch_size < 1) throw ValidationError("batch size must be positive");
  if (h.iterations < 0) throw ValidationError("iterations must be >= 0");
  if (h.episodes_per_iteration < 1 || h.epochs < 1) {
    throw ValidationError("episodes per iteration and epochs must be positive");
  }
  if (!(h.entropy_coef >= 0.0)) throw ValidationError("entropy coefficient must be >= 0");
  if (!(h.reward_scale > 0.0)) throw ValidationError("reward scale must be positive");
  if (!(h.max_grad_norm >= 0.0)) throw ValidationError("max gradient norm must be >= 0");
  if (h.hidden_width < 1) throw ValidationError("hidden width must be positive");
}

PolicyCheckpoint init_checkpoint(const EnvConfig& env, const Hyperparams& hyper) {
  validate_env_config(env);
  validate_hyperparams(hyper);
  std::mt19937_64 rng(hyper.seed);
  PolicyCheckpoint ckpt;
  ckpt.n_pad = env.n_pad;
  ckpt.include_count = env.include_count;
  const std::size_t sd = ckpt.state_dim();
  const std::size_t policy_sizes[] = {sd, hyper.hidden_width, hyper.hidden_width, ckpt.action_dim()};
  const std::size_t critic_sizes[] = {sd, hyper.hidden_width, hyper.hidden_width, 1};
  ckpt.policy = make_mlp(policy_sizes, rng);
  ckpt.critic = make_mlp(critic_sizes, rng);
  ckpt.weights = env.weights;
  ckpt.hyper = hyper;
  return ckpt;
}

void check_compatible(const PolicyCheckpoint& ckpt, const EnvConfig& env) {
  if (ckpt.n_pad != env.n_pad || ckpt.include_count != env.include_count) {
    throw ValidationError("incompatible checkpoint: trained for N_pad=" + std::to_string(ckpt.n_pad) +
                          ", environment uses N_pad=" + std::to_string(env.n_pad));
  }
  const std::size_t sd = state_dim(env.n_pad, env.include_count);
  if (ckpt.policy.input_dim() != sd || ckpt.critic.input_dim() != sd ||
      ckpt.policy.output_dim() != action_count(env.n_pad) || ckpt.critic.output_dim() != 1) {
    throw ValidationError("incompatible checkpoint: network dimensions do not match the environment");
  }
}

std::vector<double> masked_log_softmax(std::span<const double> logits, const ActionMask& mask) {
  if (mask.size() != logits.size()) throw ValidationError("mask and logits differ in length");
  double mx = kNegInf;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (mask[k]) mx = std::max(mx, logits[k]);
  }
  if (mx == kNegInf) throw ValidationError("action mask has no valid action");
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (mask[k]) sum += std::exp(logits[k] - mx);
  }
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size(), kNegInf);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (mask[k]) out[k] = logits[k] - lse;
  }
  return out;
}

SampledAction policy_sample(std::span<const double> logits, const ActionMask& mask, std::mt19937_64& rng) {
  const auto logp = masked_log_softmax(logits, mask);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double cum = 0.0;
  std::size_t last_valid = 0;
  for (std::size_t k = 0; k < logp.size(); ++k) {
    if (!mask[k]) continue;
    last_valid = k;
    cum += std::exp(logp[k]);
    if (u < cum) return {static_cast<ActionId>(k), logp[k]};
  }
  return {static_cast<ActionId>(last_valid), logp[last_valid]};
}

ActionId greedy_action(std::span<const double> logits, const ActionMask& mask) {
  ActionId best = -1;
  double best_v = kNegInf;
  for (std::size_t k = 0; k < logits.size() && k < mask.size(); ++k) {
    if (mask[k] && (best < 0 || logits[k] > best_v)) {
      best = static_cast<ActionId>(k);
      best_v = logits[k];
    }
  }
  if (best < 0) throw ValidationError("action mask has no valid action");
  return best;
}

std::vector<double> discounted_returns(std::span<const Transition> transitions, double discount) {
  std::vector<double> g(transitions.size(), 0.0);
  double running = 0.0;
  for (std::size_t t = transitions.size(); t-- > 0;) {
    if (transitions[t].done) running = 0.0;
    running = transitions[t].reward + discount * running;
    g[t] = running;
  }
  return g;
}

void standardize(std::vector<double>& values) {
  if (values.empty()) return;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : values) v = (v - mean) / (sd + 1e-8);
}

ReturnsAdvantages compute_returns_advantages(std::span<const Transition> transitions, double discount,
                                             const MlpParams& critic, bool standardize_adv) {
  ReturnsAdvantages out;
  out.returns = discounted_returns(transitions, discount);
  out.advantages.resize(transitions.size());
  for (std::size_t t = 0; t < transitions.size(); ++t) {
    out.advantages[t] = out.returns[t] - mlp_forward(critic, transitions[t].state)[0];
  }
  if (standardize_adv) standardize(out.advantages);
  return out;
}

ObjectiveAndGrad clip_objective(const MlpParams& policy, std::span<const BatchItem> batch, double clip_eps,
                                double entropy_coef) {
  if (batch.empty()) throw ValidationError("empty batch");
  ObjectiveAndGrad out{0.0, zeros_like(policy)};
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  MlpTrace trace;
  for (const BatchItem& item : batch) {
    const auto logits = mlp_forward(policy, item.state, trace);
    const auto logp = masked_log_softmax(logits, item.mask);
    const auto a = static_cast<std::size_t>(item.action);
    if (a >= logp.size() || !item.mask[a]) throw ValidationError("batch action is not valid under its mask");

    const double ratio = std::exp(logp[a] - item.old_log_prob);
    const double unclipped = ratio * item.advantage;
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * item.advantage;
    const double surrogate = std::min(unclipped, clipped);
    // d surrogate / d logp[a]; zero when the clipped branch is the binding one.
    const double g_logp = unclipped <= clipped ? unclipped : 0.0;

    double entropy = 0.0;
    for (std::size_t k = 0; k < logp.size(); ++k) {
      if (item.mask[k]) entropy -= std::exp(logp[k]) * logp[k];
    }
    out.value += inv_b * (surrogate + entropy_coef * entropy);

    std::vector<double> g(logits.size(), 0.0);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      if (!item.mask[k]) continue;
      const double p = std::exp(logp[k]);
      const double d_surr = g_logp * ((k == a ? 1.0 : 0.0) - p);
      const double d_ent = -p * (logp[k] + entropy);
      g[k] = inv_b * (d_surr + entropy_coef * d_ent);
    }
    mlp_backward(policy, trace, g, out.grad);
  }
  return out;
}

ObjectiveAndGrad value_loss(const MlpParams& critic, std::span<const BatchItem> batch) {
  if (batch.empty()) throw ValidationError("empty batch");
  ObjectiveAndGrad out{0.0, zeros_like(critic)};
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  MlpTrace trace;
  for (const BatchItem& item : batch) {
    const double v = mlp_forward(critic, item.state, trace)[0];
    const double err = v - item.ret;
    out.value += inv_b * err * err;
    const double g = 2.0 * inv_b * err;
    mlp_backward(critic, trace, std::span<const double>(&g, 1), out.grad);
  }
  return out;
}

PpoUpdate ppo_update(const MlpParams& policy, const MlpParams& critic, std::span<const BatchItem> batch,
                     const Hyperparams& hyper, OptimizerState* state) {
  ObjectiveAndGrad pol = clip_objective(policy, batch, hyper.clip_eps, hyper.entropy_coef);
  ObjectiveAndGrad val = value_loss(critic, batch);
  if (!std::isfinite(pol.value) || !std::isfinite(val.value) || !all_finite(pol.grad) || !all_finite(val.grad)) {
    throw NumericError("non-finite loss in PPO update (clip objective " + format_double(pol.value) +
                       ", value loss " + format_double(val.value) + ")");
  }
  clip_grad_norm(pol.grad, hyper.max_grad_norm);
  clip_grad_norm(val.grad, hyper.max_grad_norm);

  PpoUpdate out{policy, critic, pol.value, val.value};
  const MlpParams pdir =
      step_direction(policy, pol.grad, hyper.optimizer, state ? &state->policy : nullptr);
  const MlpParams vdir =
      step_direction(critic, val.grad, hyper.optimizer, state ? &state->critic : nullptr);
  add_scaled(out.policy, hyper.lr_policy, pdir);
  add_scaled(out.critic, -hyper.lr_critic, vdir);
  return out;
}

std::uint64_t episode_seed(std::uint64_t base, std::uint64_t iteration, std::uint64_t episode) {
  return splitmix64(splitmix64(splitmix64(base) ^ iteration) ^ episode);
}

TrainResult train(const SceneSampler& sampler, const EnvConfig& env, const Hyperparams& hyper,
                  const std::function<void(const IterationLog&)>& on_iteration) {
  TrainResult result;
  result.checkpoint = init_checkpoint(env, hyper);
  PolicyCheckpoint& ckpt = result.checkpoint;
  std::mt19937_64 rng(splitmix64(hyper.seed ^ 0x5eedULL));
  OptimizerState opt_state;

  for (int it = 0; it < hyper.iterations; ++it) {
    std::vector<Transition> transitions;
    double return_sum = 0.0;
    double n_sum = 0.0;
    for (int ep = 0; ep < hyper.episodes_per_iteration; ++ep) {
      const Frame frame = sampler(episode_seed(hyper.seed, static_cast<std::uint64_t>(it),
                                               static_cast<std::uint64_t>(ep)));
      Environment environment(env);
      StateVector s = environment.reset(frame);
      double ep_return = 0.0;
      while (!environment.done()) {
        const ActionMask mask = environment.mask();
        const auto logits = mlp_forward(ckpt.policy, s);
        const SampledAction pick = policy_sample(logits, mask, rng);
        StepOutcome out = environment.step(pick.action);
        ep_return += out.reward.total;
        transitions.push_back({std::move(s), pick.action, pick.log_prob,
                               out.reward.total * hyper.reward_scale, mask, out.done});
        s = std::move(out.state);
      }
      return_sum += ep_return;
      n_sum += static_cast<double>(environment.clusters().count());
    }

    const ReturnsAdvantages ra =
        compute_returns_advantages(transitions, hyper.discount, ckpt.critic, hyper.standardize_advantages);
    std::vector<BatchItem> items;
    items.reserve(transitions.size());
    for (std::size_t t = 0; t < transitions.size(); ++t) {
      items.push_back({transitions[t].state, transitions[t].mask, transitions[t].action,
                       transitions[t].log_prob, ra.advantages[t], ra.returns[t]});
    }

    double pol_sum = 0.0, val_sum = 0.0;
    int updates = 0;
    std::vector<std::size_t> order(items.size());
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
        const std::size_t end = std::min(order.size(), start + hyper.batch_size);
        std::vector<BatchItem> batch;
        batch.reserve(end - start);
        for (std::size_t k = start; k < end; ++k) batch.push_back(items[order[k]]);
        PpoUpdate up = ppo_update(ckpt.policy, ckpt.critic, batch, hyper, &opt_state);
        ckpt.policy = std::move(up.policy);
        ckpt.critic = std::move(up.critic);
        if (epoch + 1 == hyper.epochs) {
          pol_sum += up.clip_objective;
          val_sum += up.value_loss;
          ++updates;
        }
      }
    }

    IterationLog row;
    row.iteration = it;
    row.mean_return = return_sum / hyper.episodes_per_iteration;
    row.policy_loss = updates ? pol_sum / updates : 0.0;
    row.value_loss = updates ? val_sum / updates : 0.0;
    row.mean_n_final = n_sum / hyper.episodes_per_iteration;
    result.log.push_back(row);
    if (on_iteration) on_iteration(row);
  }

  ckpt.meta.iterations = hyper.iterations;
  ckpt.meta.final_mean_return = result.log.empty() ? 0.0 : result.log.back().mean_return;
  return result;
}

std::string training_log_csv(std::span<const IterationLog> log) {
  std::string out = "iteration,mean_return,policy_loss,value_loss,mean_N_final\n";
  for (const IterationLog& r : log) {
    out += std::to_string(r.iteration) + ',' + format_double(r.mean_return) + ',' + format_double(r.policy_loss) +
           ',' + format_double(r.value_loss) + ',' + format_double(r.mean_n_final) + '\n';
  }
  return out;
}

ActionPolicy keep_policy() {
  return [](const StateVector&, const ActionMask&) { return kActionKeep; };
}

ActionPolicy random_policy(std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng](const StateVector&, const ActionMask& mask) {
    std::vector<ActionId> valid;
    for (std::size_t k = 0; k < mask.size(); ++k) {
      if (mask[k]) valid.push_back(static_cast<ActionId>(k));
    }
    std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
    return valid[pick(*rng)];
  };
}

ActionPolicy greedy_policy(std::shared_ptr<const PolicyCheckpoint> ckpt) {
  return [ckpt = std::move(ckpt)](const StateVector& s, const ActionMask& mask) {
    return greedy_action(mlp_forward(ckpt->policy, s), mask);
  };
}

InferenceResult run_policy(const Frame& frame, const EnvConfig& env, const ActionPolicy& policy,
                           int keep_streak_stop) {
  Environment environment(env);
  StateVector s = environment.reset(frame);
  InferenceResult result{environment.clusters(), environment.clusters(), {}};
  int streak = 0;
  while (!environment.done()) {
    const ActionId a = policy(s, environment.mask());
    StepOutcome out = environment.step(a);
    result.trace.push_back({environment.steps_taken(), a, out.action_valid, out.n, out.reward});
    s = std::move(out.state);
    streak = (out.action_valid && a == kActionKeep) || !out.action_valid ? streak + 1 : 0;
    if (keep_streak_stop > 0 && streak >= keep_streak_stop) break;
  }
  result.final_config = environment.clusters();
  return result;
}

InferenceResult rl_dca_infer(const Frame& frame, const PolicyCheckpoint& ckpt, const EnvConfig& env,
                             int keep_streak_stop) {
  check_compatible(ckpt, env);
  auto shared = std::make_shared<const PolicyCheckpoint>(ckpt);
  return run_policy(frame, env, greedy_policy(shared), keep_streak_stop);
}

}  // namespace repose
