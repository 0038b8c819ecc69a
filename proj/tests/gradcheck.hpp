#pragma once

// Central finite-difference checks for the PPO objectives.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "repose/mlp.hpp"
#include "repose/ppo.hpp"

namespace gradcheck {

struct Result {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

/// Compares `analytic` against (f(p+h) - f(p-h)) / 2h for every parameter.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline Result compare(repose::MlpParams params, const repose::MlpParams& analytic,
                      const std::function<double(const repose::MlpParams&)>& f, double h = 1e-5,
                      double floor = 1e-6) {
  Result r;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto run = [&](std::vector<double>& values, const std::vector<double>& grads) {
      for (std::size_t k = 0; k < values.size(); ++k) {
        const double keep = values[k];
        values[k] = keep + h;
        const double up = f(params);
        values[k] = keep - h;
        const double down = f(params);
        values[k] = keep;
        const double numeric = (up - down) / (2 * h);
        const double a = grads[k];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
        r.max_rel = std::max(r.max_rel, rel);
        ++r.checked;
      }
    };
    run(params.layers[l].weights, analytic.layers[l].weights);
    run(params.layers[l].biases, analytic.layers[l].biases);
  }
  return r;
}

/// Smallest |pre-activation| of any hidden unit over the batch states.
inline double min_hidden_preact(const repose::MlpParams& p, const std::vector<repose::BatchItem>& batch) {
  double m = 1e9;
  repose::MlpTrace trace;
  for (const auto& item : batch) {
    repose::mlp_forward(p, item.state, trace);
    for (std::size_t l = 0; l + 1 < trace.preacts.size(); ++l)
      for (double z : trace.preacts[l]) m = std::min(m, std::abs(z));
  }
  return m;
}

/// Random batch whose probability ratios stay clear of the clip corners.
inline std::vector<repose::BatchItem> random_batch(const repose::MlpParams& policy, std::size_t n, double clip_eps,
                                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> g(0, 1);
  const std::size_t sd = policy.input_dim();
  const std::size_t ad = policy.output_dim();
  std::vector<repose::BatchItem> batch;
  while (batch.size() < n) {
    repose::BatchItem item;
    item.state.resize(sd);
    for (double& v : item.state) v = u(rng);
    item.mask.assign(ad, 0);
    item.mask[0] = 1;
    for (std::size_t k = 1; k < ad; ++k) item.mask[k] = u(rng) < 0.6;
    std::vector<repose::ActionId> valid;
    for (std::size_t k = 0; k < ad; ++k)
      if (item.mask[k]) valid.push_back(static_cast<repose::ActionId>(k));
    item.action = valid[rng() % valid.size()];
    const auto logp = repose::masked_log_softmax(repose::mlp_forward(policy, item.state), item.mask);
    item.old_log_prob = logp[static_cast<std::size_t>(item.action)] + (u(rng) - 0.5) * 0.8;
    const double ratio = std::exp(logp[static_cast<std::size_t>(item.action)] - item.old_log_prob);
    if (std::abs(ratio - (1 - clip_eps)) < 1e-3 || std::abs(ratio - (1 + clip_eps)) < 1e-3) continue;
    item.advantage = g(rng);
    item.ret = g(rng);
    batch.push_back(std::move(item));
  }
  return batch;
}

}  // namespace gradcheck
