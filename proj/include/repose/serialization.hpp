#pragma once

#include "json.hpp"
#include "repose/clustering.hpp"
#include "repose/ppo.hpp"
#include "repose/rl_env.hpp"

// JSON mappings for the configuration types. Readers start from the struct's
// defaults, accept partial objects and reject unknown keys.
namespace repose {

nlohmann::json to_json(const RewardWeights& w);
RewardWeights reward_weights_from_json(const nlohmann::json& j, RewardWeights base = {});

nlohmann::json to_json(const Hyperparams& h);
Hyperparams hyperparams_from_json(const nlohmann::json& j, Hyperparams base = {});

nlohmann::json to_json(const BandwidthSpec& b);
BandwidthSpec bandwidth_from_json(const nlohmann::json& j, BandwidthSpec base = {});

nlohmann::json to_json(const RewardBreakdown& r);

}  // namespace repose
