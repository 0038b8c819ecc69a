#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "repose/checkpoint.hpp"
#include "repose/io.hpp"
#include "repose/mlp.hpp"
#include "repose/ppo.hpp"
#include "repose/scene.hpp"

using namespace repose;
namespace fs = std::filesystem;

namespace {

EnvConfig small_env() {
  EnvConfig e;
  e.n_pad = 4;
  e.t_max = 4;
  e.weights.n_min = 2;
  e.weights.n_max = 3;
  e.bandwidth = BandwidthSpec{BandwidthSpec::Mode::fixed, 0.1};
  return e;
}

Hyperparams small_hyper() {
  Hyperparams h;
  h.hidden_width = 16;
  h.iterations = 2;
  h.episodes_per_iteration = 2;
  h.batch_size = 4;
  h.epochs = 2;
  h.seed = 3;
  return h;
}

SceneSampler sampler() {
  return [](std::uint64_t seed) {
    SceneSpec s;
    s.count_min = 6;
    s.count_max = 12;
    Stratum st;
    st.groups = 3;
    s.strata = {st};
    s.seed = seed;
    return generate_scene(s);
  };
}

MlpParams random_mlp(std::vector<std::size_t> sizes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MlpParams p = make_mlp(sizes, rng);
  std::normal_distribution<double> g(0, 0.1);
  for (auto& l : p.layers)
    for (double& b : l.biases) b = g(rng);
  return p;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "repose_test_ppo";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("mlp_forward") {
  std::mt19937_64 rng(1);
  const std::size_t sizes[] = {3, 4, 2};
  MlpParams p = make_mlp(sizes, rng);
  CHECK(p.parameter_count() == 3 * 4 + 4 + 4 * 2 + 2);
  MlpParams z = zeros_like(p);
  const std::vector<double> x{0.3, -0.2, 0.9};
  CHECK(mlp_forward(z, x) == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(mlp_forward(p, std::vector<double>{1.0}), ValidationError);

  MlpParams one;
  one.layers.push_back(DenseLayer{2, 2, {1, 0, 0, 1}, {0.5, -0.5}});
  CHECK(mlp_forward(one, std::vector<double>{2.0, 3.0}) == std::vector<double>{2.5, 2.5});

  // Naive triple-loop oracle.
  const MlpParams r = random_mlp({5, 7, 6, 3}, 9);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> in(5);
    for (double& v : in) v = u(rng);
    std::vector<double> a = in;
    for (std::size_t l = 0; l < r.layers.size(); ++l) {
      const auto& L = r.layers[l];
      std::vector<double> b(L.out);
      for (std::size_t o = 0; o < L.out; ++o) {
        double s = L.biases[o];
        for (std::size_t i = 0; i < L.in; ++i) s += L.weights[o * L.in + i] * a[i];
        b[o] = (l + 1 < r.layers.size()) ? std::max(0.0, s) : s;
      }
      a = b;
    }
    const auto got = mlp_forward(r, in);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(got[k] - a[k]) < 1e-12);
  }
}

TEST_CASE("mlp init scale and flat views") {
  std::mt19937_64 rng(2);
  const std::size_t sizes[] = {10, 20, 5};
  MlpParams p = make_mlp(sizes, rng);
  const double bound0 = std::sqrt(6.0 / 30.0);
  for (double w : p.layers[0].weights) CHECK(std::abs(w) <= bound0);
  for (double b : p.layers[0].biases) CHECK(b == 0.0);
  const auto flat = flatten(p);
  CHECK(flat.size() == p.parameter_count());
  MlpParams q = zeros_like(p);
  assign_flat(q, flat);
  CHECK(flatten(q) == flat);
  CHECK(all_finite(q));
  q.layers[1].biases[0] = NAN;
  CHECK_FALSE(all_finite(q));
}

TEST_CASE("mlp_backward matches finite differences") {
  const MlpParams p = random_mlp({6, 8, 8, 3}, 4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> x(6), gout{0.3, -1.2, 0.7};
  for (double& v : x) v = u(rng);
  MlpTrace trace;
  mlp_forward(p, x, trace);
  MlpParams grads = zeros_like(p);
  mlp_backward(p, trace, gout, grads);
  auto f = [&](const MlpParams& q) {
    const auto y = mlp_forward(q, x);
    return y[0] * gout[0] + y[1] * gout[1] + y[2] * gout[2];
  };
  CHECK(gradcheck::compare(p, grads, f).max_rel < 1e-6);
}

TEST_CASE("masked softmax and sampling") {
  const std::vector<double> logits{0.5, 2.0, -1.0, 0.1};
  const ActionMask mask{1, 0, 1, 1};
  const auto logp = masked_log_softmax(logits, mask);
  CHECK(std::isinf(logp[1]));
  double total = 0;
  for (std::size_t k = 0; k < 4; ++k)
    if (mask[k]) total += std::exp(logp[k]);
  CHECK(std::abs(total - 1.0) < 1e-12);
  CHECK_THROWS_AS(masked_log_softmax(logits, ActionMask{0, 0, 0, 0}), ValidationError);

  std::mt19937_64 rng(6);
  const auto forced = policy_sample(logits, ActionMask{0, 0, 1, 0}, rng);
  CHECK(forced.action == 2);
  CHECK(forced.log_prob == 0.0);

  const std::vector<double> flat(6, 0.3);
  const ActionMask four{1, 1, 0, 1, 1, 0};
  std::vector<int> counts(6, 0);
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) {
    const auto s = policy_sample(flat, four, rng);
    CHECK(std::abs(s.log_prob - std::log(0.25)) < 1e-12);
    ++counts[static_cast<std::size_t>(s.action)];
  }
  CHECK(counts[2] == 0);
  CHECK(counts[5] == 0);
  const double sigma = std::sqrt(draws * 0.25 * 0.75);
  for (int k : {0, 1, 3, 4}) CHECK(std::abs(counts[k] - draws * 0.25) < 3 * sigma);
}

TEST_CASE("greedy action tie-break") {
  CHECK(greedy_action(std::vector<double>{1, 3, 3, 2}, ActionMask{1, 1, 1, 1}) == 1);
  CHECK(greedy_action(std::vector<double>{1, 3, 3, 2}, ActionMask{1, 0, 1, 1}) == 2);
  CHECK(greedy_action(std::vector<double>{5, 5}, ActionMask{1, 1}) == 0);
}

TEST_CASE("discounted returns") {
  std::vector<Transition> one(1);
  one[0].reward = -5;
  one[0].done = true;
  CHECK(discounted_returns(one, 0.9) == std::vector<double>{-5});

  std::vector<Transition> three(3);
  for (auto& t : three) t.reward = -1;
  three[2].done = true;
  CHECK(discounted_returns(three, 0.5) == std::vector<double>{-1.75, -1.5, -1.0});

  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0, 3);
  std::vector<Transition> tr(25);
  for (auto& t : tr) t.reward = g(rng);
  tr[9].done = true;
  tr[24].done = true;
  const auto got = discounted_returns(tr, 0.95);
  for (std::size_t t = 0; t < tr.size(); ++t) {
    const std::size_t end = t <= 9 ? 10 : 25;
    double want = 0;
    for (std::size_t k = t; k < end; ++k) want += std::pow(0.95, static_cast<double>(k - t)) * tr[k].reward;
    CHECK(std::abs(got[t] - want) < 1e-9);
  }
}

TEST_CASE("advantages") {
  const MlpParams critic = random_mlp({3, 4, 1}, 8);
  std::vector<Transition> one(1);
  one[0].state = {0.1, 0.2, 0.3};
  one[0].reward = -5;
  one[0].done = true;
  const auto ra = compute_returns_advantages(one, 0.99, critic, false);
  CHECK(ra.returns[0] == -5);
  CHECK(ra.advantages[0] == -5 - mlp_forward(critic, one[0].state)[0]);

  std::vector<double> v{1, 2, 3, 4, 10};
  standardize(v);
  double m = 0, s = 0;
  for (double x : v) m += x / 5;
  for (double x : v) s += (x - m) * (x - m) / 5;
  CHECK(std::abs(m) < 1e-12);
  CHECK(std::abs(std::sqrt(s) - 1) < 1e-6);
  std::vector<double> same{2, 2, 2};
  standardize(same);
  CHECK(same == std::vector<double>{0, 0, 0});
}

TEST_CASE("clip objective identities") {
  const MlpParams policy = random_mlp({5, 8, 8, 4}, 10);
  std::mt19937_64 rng(11);
  auto batch = gradcheck::random_batch(policy, 6, 0.2, rng);

  // Behaviour policy equals the current one: ratio 1, objective = mean(A).
  double mean_a = 0;
  for (auto& item : batch) {
    const auto logp = masked_log_softmax(mlp_forward(policy, item.state), item.mask);
    item.old_log_prob = logp[static_cast<std::size_t>(item.action)];
    mean_a += item.advantage / batch.size();
  }
  CHECK(std::abs(clip_objective(policy, batch, 0.2, 0.0).value - mean_a) < 1e-12);

  // Inside the clip band the sample objective is r * A.
  auto& item = batch[0];
  const auto logp = masked_log_softmax(mlp_forward(policy, item.state), item.mask);
  const double lp = logp[static_cast<std::size_t>(item.action)];
  std::vector<BatchItem> single{item};
  single[0].old_log_prob = lp - std::log(1.1);
  CHECK(std::abs(clip_objective(policy, single, 0.2, 0.0).value - 1.1 * item.advantage) < 1e-12);

  // Outside the band the objective is flat in r.
  single[0].advantage = 2.0;
  single[0].old_log_prob = lp - std::log(1.5);
  const double a = clip_objective(policy, single, 0.2, 0.0).value;
  single[0].old_log_prob = lp - std::log(2.5);
  CHECK(clip_objective(policy, single, 0.2, 0.0).value == doctest::Approx(a));
  CHECK(a == doctest::Approx(1.2 * 2.0));
  single[0].advantage = -2.0;
  single[0].old_log_prob = lp - std::log(0.5);
  const double b = clip_objective(policy, single, 0.2, 0.0).value;
  single[0].old_log_prob = lp - std::log(0.3);
  CHECK(clip_objective(policy, single, 0.2, 0.0).value == doctest::Approx(b));
  CHECK(b == doctest::Approx(0.8 * -2.0));
}

TEST_CASE("policy and critic gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const MlpParams policy = random_mlp({11, 16, 16, 4}, 20 + seed);
    const MlpParams critic = random_mlp({11, 16, 16, 1}, 40 + seed);
    std::mt19937_64 rng(seed);
    const auto batch = gradcheck::random_batch(policy, 5, 0.2, rng);
    REQUIRE(gradcheck::min_hidden_preact(policy, batch) > 1e-6);
    const auto pol = clip_objective(policy, batch, 0.2, 0.01);
    auto fp = [&](const MlpParams& q) { return clip_objective(q, batch, 0.2, 0.01).value; };
    CHECK(gradcheck::compare(policy, pol.grad, fp).max_rel < 1e-4);

    const auto val = value_loss(critic, batch);
    auto fv = [&](const MlpParams& q) { return value_loss(q, batch).value; };
    CHECK(gradcheck::compare(critic, val.grad, fv).max_rel < 1e-4);
  }
}

TEST_CASE("ppo_update directions") {
  const MlpParams policy = random_mlp({5, 8, 8, 4}, 50);
  const MlpParams critic = random_mlp({5, 8, 8, 1}, 51);
  std::mt19937_64 rng(12);
  const auto batch = gradcheck::random_batch(policy, 8, 0.2, rng);
  Hyperparams h;
  h.lr_policy = 1e-3;
  h.lr_critic = 1e-3;
  h.max_grad_norm = 0.0;
  const auto up = ppo_update(policy, critic, batch, h);
  CHECK(up.clip_objective == doctest::Approx(clip_objective(policy, batch, h.clip_eps, h.entropy_coef).value));
  CHECK(clip_objective(up.policy, batch, h.clip_eps, h.entropy_coef).value > up.clip_objective);
  CHECK(value_loss(up.critic, batch).value < up.value_loss);

  // Plain step: theta + lr * grad.
  const auto g = clip_objective(policy, batch, h.clip_eps, h.entropy_coef).grad;
  MlpParams expect = policy;
  add_scaled(expect, h.lr_policy, g);
  CHECK(flatten(expect) == flatten(up.policy));

  h.max_grad_norm = 1e-3;
  const auto clipped = ppo_update(policy, critic, batch, h);
  MlpParams delta = clipped.policy;
  add_scaled(delta, -1.0, policy);
  CHECK(std::sqrt(squared_norm(delta)) <= h.lr_policy * 1e-3 * (1 + 1e-9));

  auto bad = batch;
  bad[0].ret = NAN;
  CHECK_THROWS_AS(ppo_update(policy, critic, bad, h), NumericError);

  h.optimizer = OptimizerKind::adam;
  OptimizerState st;
  CHECK_NOTHROW(ppo_update(policy, critic, batch, h, &st));
}

TEST_CASE("train") {
  const EnvConfig env = small_env();
  Hyperparams h = small_hyper();
  h.iterations = 0;
  const auto zero = train(sampler(), env, h);
  CHECK(zero.log.empty());
  CHECK(flatten(zero.checkpoint.policy) == flatten(init_checkpoint(env, h).policy));

  h.iterations = 3;
  int calls = 0;
  const auto a = train(sampler(), env, h, [&](const IterationLog&) { ++calls; });
  const auto b = train(sampler(), env, h);
  CHECK(calls == 3);
  CHECK(a.log.size() == 3);
  CHECK(flatten(a.checkpoint.policy) == flatten(b.checkpoint.policy));
  CHECK(flatten(a.checkpoint.critic) == flatten(b.checkpoint.critic));
  CHECK(training_log_csv(a.log) == training_log_csv(b.log));
  CHECK(a.checkpoint.meta.iterations == 3);
  CHECK(training_log_csv(a.log).rfind("iteration,mean_return,policy_loss,value_loss,mean_N_final\n", 0) == 0);

  h.seed = 4;
  CHECK(flatten(train(sampler(), env, h).checkpoint.policy) != flatten(a.checkpoint.policy));
}

TEST_CASE("inference") {
  const EnvConfig env = small_env();
  const auto p = oracle::planted_blobs({{0.2, 0.2}, {0.8, 0.2}, {0.5, 0.8}}, 8, 0.01, 1);
  const Frame f{1920, 1080, p.boxes};

  PolicyCheckpoint ckpt = init_checkpoint(env, small_hyper());
  auto& last = ckpt.policy.layers.back();
  std::fill(last.weights.begin(), last.weights.end(), 0.0);
  std::fill(last.biases.begin(), last.biases.end(), 0.0);
  last.biases[kActionKeep] = 1.0;
  const auto keep = rl_dca_infer(f, ckpt, env);
  CHECK(keep.trace.size() == static_cast<std::size_t>(env.t_max));
  CHECK(keep.final_config.member_sets() == keep.initial.member_sets());
  CHECK(keep.final_config.member_sets() == reset_clusters(f, env.transform, env.bandwidth).member_sets());

  last.biases[kActionKeep] = 0.0;
  last.biases[kActionMerge] = 1.0;
  const auto merge = rl_dca_infer(f, ckpt, env);
  CHECK(merge.final_config.count() == 1);
  CHECK(merge.trace[0].n == 2);
  CHECK(merge.trace.back().action == kActionKeep);

  const Frame single{100, 100, {DetectionBox{0.5, 0.5, 0.1, 0.1, 1, 0}}};
  CHECK(rl_dca_infer(single, ckpt, env).final_config.count() == 1);

  const auto early = run_policy(f, env, keep_policy(), 2);
  CHECK(early.trace.size() == 2);

  const auto r1 = run_policy(f, env, random_policy(9));
  const auto r2 = run_policy(f, env, random_policy(9));
  CHECK(r1.final_config.member_sets() == r2.final_config.member_sets());

  EnvConfig other = env;
  other.n_pad = 5;
  CHECK_THROWS_AS(rl_dca_infer(f, ckpt, other), ValidationError);
}

TEST_CASE("checkpoint round-trip and rejection") {
  const EnvConfig env = small_env();
  Hyperparams h = small_hyper();
  PolicyCheckpoint ckpt = init_checkpoint(env, h);
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(0, 1);
  for (auto* net : {&ckpt.policy, &ckpt.critic})
    for (auto& l : net->layers)
      for (double& b : l.biases) b = g(rng);
  ckpt.policy.layers[0].biases[0] = -0.0;
  ckpt.policy.layers[0].biases[1] = 5e-324;
  ckpt.meta.iterations = 7;
  ckpt.meta.final_mean_return = -123.25;

  const fs::path path = scratch("ckpt.bin");
  save_checkpoint(ckpt, path);
  const auto back = load_checkpoint(path, env.n_pad);
  const auto fa = flatten(ckpt.policy), fb = flatten(back.policy);
  REQUIRE(fa.size() == fb.size());
  for (std::size_t k = 0; k < fa.size(); ++k) CHECK(std::bit_cast<std::uint64_t>(fa[k]) == std::bit_cast<std::uint64_t>(fb[k]));
  CHECK(flatten(back.critic) == flatten(ckpt.critic));
  CHECK(back.meta.iterations == 7);
  CHECK(back.meta.final_mean_return == -123.25);
  CHECK(back.hyper.hidden_width == 16);
  CHECK(back.weights.n_max == 3);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ckpt));

  CHECK_THROWS_WITH_AS(load_checkpoint(path, 9), doctest::Contains("N_pad"), ValidationError);

  const std::string bytes = read_file(path);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 8)), ValidationError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, 10)), ValidationError);
  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x10;
  CHECK_THROWS_WITH_AS(parse_checkpoint(flipped), doctest::Contains("checksum"), ValidationError);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(magic), ValidationError);
  std::string version = bytes;
  version[std::string(kCheckpointMagic).size() + 1] = '9';
  CHECK_THROWS_WITH_AS(parse_checkpoint(version), doctest::Contains("version"), ValidationError);
  CHECK_THROWS_AS(load_checkpoint(scratch("nope.bin")), ValidationError);
}

TEST_CASE("hyperparameter validation") {
  Hyperparams h;
  CHECK_NOTHROW(validate_hyperparams(h));
  h.discount = 1.0;
  CHECK_THROWS_AS(validate_hyperparams(h), ValidationError);
  h = Hyperparams{};
  h.clip_eps = 0;
  CHECK_THROWS_AS(validate_hyperparams(h), ValidationError);
  h = Hyperparams{};
  h.lr_policy = -1;
  CHECK_THROWS_AS(validate_hyperparams(h), ValidationError);
  h = Hyperparams{};
  h.batch_size = 0;
  CHECK_THROWS_AS(validate_hyperparams(h), ValidationError);
}
