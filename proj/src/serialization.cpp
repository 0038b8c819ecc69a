#include "repose/serialization.hpp"

#include <set>
#include <string>

namespace repose {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const char* what) {
  if (!j.is_object()) throw ValidationError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ValidationError(std::string("unknown key '") + key + "' in " + what);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const RewardWeights& w) {
  return {{"alpha", w.alpha}, {"beta", w.beta},   {"gamma", w.gamma}, {"delta", w.delta},
          {"n_min", w.n_min}, {"n_max", w.n_max}, {"d_m", w.d_m}};
}

RewardWeights reward_weights_from_json(const json& j, RewardWeights w) {
  check_keys(j, {"alpha", "beta", "gamma", "delta", "n_min", "n_max", "d_m"}, "reward weights");
  read(j, "alpha", w.alpha);
  read(j, "beta", w.beta);
  read(j, "gamma", w.gamma);
  read(j, "delta", w.delta);
  read(j, "n_min", w.n_min);
  read(j, "n_max", w.n_max);
  read(j, "d_m", w.d_m);
  validate_weights(w);
  return w;
}

json to_json(const Hyperparams& h) {
  return {{"discount", h.discount},
          {"clip_eps", h.clip_eps},
          {"lr_policy", h.lr_policy},
          {"lr_critic", h.lr_critic},
          {"batch_size", h.batch_size},
          {"iterations", h.iterations},
          {"episodes_per_iteration", h.episodes_per_iteration},
          {"epochs", h.epochs},
          {"entropy_coef", h.entropy_coef},
          {"standardize_advantages", h.standardize_advantages},
          {"reward_scale", h.reward_scale},
          {"max_grad_norm", h.max_grad_norm},
          {"optimizer", h.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
          {"hidden_width", h.hidden_width},
          {"seed", h.seed}};
}

Hyperparams hyperparams_from_json(const json& j, Hyperparams h) {
  check_keys(j,
             {"discount", "clip_eps", "lr_policy", "lr_critic", "batch_size", "iterations",
              "episodes_per_iteration", "epochs", "entropy_coef", "standardize_advantages", "reward_scale",
              "max_grad_norm", "optimizer", "hidden_width", "seed"},
             "hyperparameters");
  read(j, "discount", h.discount);
  read(j, "clip_eps", h.clip_eps);
  read(j, "lr_policy", h.lr_policy);
  read(j, "lr_critic", h.lr_critic);
  read(j, "batch_size", h.batch_size);
  read(j, "iterations", h.iterations);
  read(j, "episodes_per_iteration", h.episodes_per_iteration);
  read(j, "epochs", h.epochs);
  read(j, "entropy_coef", h.entropy_coef);
  read(j, "standardize_advantages", h.standardize_advantages);
  read(j, "reward_scale", h.reward_scale);
  read(j, "max_grad_norm", h.max_grad_norm);
  read(j, "hidden_width", h.hidden_width);
  read(j, "seed", h.seed);
  if (j.contains("optimizer")) {
    const std::string name = j.at("optimizer").get<std::string>();
    if (name == "sgd") {
      h.optimizer = OptimizerKind::sgd;
    } else if (name == "adam") {
      h.optimizer = OptimizerKind::adam;
    } else {
      throw ValidationError("optimizer must be 'sgd' or 'adam'");
    }
  }
  validate_hyperparams(h);
  return h;
}

json to_json(const BandwidthSpec& b) {
  return {{"mode", b.mode == BandwidthSpec::Mode::fixed ? "fixed" : "quantile"}, {"value", b.value}};
}

BandwidthSpec bandwidth_from_json(const json& j, BandwidthSpec b) {
  check_keys(j, {"mode", "value"}, "bandwidth");
  if (j.contains("mode")) {
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "fixed") {
      b.mode = BandwidthSpec::Mode::fixed;
    } else if (mode == "quantile") {
      b.mode = BandwidthSpec::Mode::quantile;
    } else {
      throw ValidationError("bandwidth mode must be 'fixed' or 'quantile'");
    }
  }
  read(j, "value", b.value);
  validate_bandwidth(b);
  return b;
}

json to_json(const RewardBreakdown& r) {
  return {{"r1", r.r1}, {"r2", r.r2}, {"r3", r.r3}, {"r4", r.r4}, {"total", r.total}};
}

}  // namespace repose
