#include "repose/cli.hpp"

#include <cmath>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "repose/checkpoint.hpp"
#include "repose/io.hpp"
#include "repose/serialization.hpp"

namespace repose {

using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitInfeasible = 3;

/// Error tagged with the pipeline stage that raised it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what, int code)
      : std::runtime_error("[" + stage + "] " + what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

template <typename F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw StageError(stage, e.what(), kExitUsage);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what(), kExitRuntime);
  }
}

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

PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "checkpoint") return PolicyKind::checkpoint;
  if (name == "keep") return PolicyKind::keep;
  if (name == "random") return PolicyKind::random;
  throw ValidationError("policy must be 'checkpoint', 'keep' or 'random'");
}

const char* action_kind(ActionId a) {
  if (a == kActionKeep) return "keep";
  if (a == kActionMerge) return "merge";
  return "split";
}

json cluster_list_json(const ClusterConfig& config, const Frame& frame, double block_margin) {
  json out = json::array();
  for (std::size_t i = 0; i < config.count(); ++i) {
    const Cluster& c = config.cluster(i);
    const PixelRect r = bounding_block(c, frame.detections, block_margin, frame);
    out.push_back({{"id", i},
                   {"members", c.members},
                   {"size", c.size},
                   {"centroid", {c.mu_x, c.mu_y}},
                   {"mean_size", {c.mu_w, c.mu_h}},
                   {"block", {r.x0, r.y0, r.x1, r.y1}}});
  }
  return out;
}

Frame frame_for_seed(const PipelineConfig& cfg, std::uint64_t seed) {
  if (!cfg.detections.empty()) {
    return load_detections(cfg.detections, format_for_path(cfg.detections), cfg.scene.width_px,
                           cfg.scene.height_px);
  }
  SceneSpec spec = cfg.scene;
  spec.seed = seed;
  return generate_scene(spec);
}

std::vector<ModelProfile> profiles_for(const PipelineConfig& cfg) {
  if (cfg.profile.empty()) return default_profiles();
  return load_profiles(cfg.profile, cfg.allow_non_monotone_profile);
}

struct ResolvedPolicy {
  std::string name;
  ActionPolicy policy;
};

ResolvedPolicy resolve_policy(const PipelineConfig& cfg, const EnvConfig& env) {
  const PolicyKind kind = cfg.policy.value_or(cfg.checkpoint.empty() ? PolicyKind::keep : PolicyKind::checkpoint);
  switch (kind) {
    case PolicyKind::keep:
      return {"keep", keep_policy()};
    case PolicyKind::random:
      return {"random", random_policy(cfg.seed)};
    case PolicyKind::checkpoint: {
      if (cfg.checkpoint.empty()) throw ValidationError("policy 'checkpoint' needs --checkpoint");
      auto ckpt = std::make_shared<const PolicyCheckpoint>(load_checkpoint(cfg.checkpoint, env.n_pad));
      check_compatible(*ckpt, env);
      return {"trained", greedy_policy(ckpt)};
    }
  }
  throw std::logic_error("unknown policy kind");
}

std::string eval_episodes_csv(const std::vector<EvalEpisode>& rows) {
  std::string out = "policy,episode,seed,final_reward,final_N,in_range\n";
  for (const EvalEpisode& r : rows) {
    out += r.policy + ',' + std::to_string(r.episode) + ',' + std::to_string(r.seed) + ',' +
           format_double(r.final_reward) + ',' + std::to_string(r.final_n) + ',' + (r.in_range ? "1" : "0") + '\n';
  }
  return out;
}

std::string eval_summary_csv(const std::vector<EvalSummary>& rows) {
  std::string out = "policy,episodes,mean_final_reward,stderr_final_reward,mean_N,frac_in_range\n";
  for (const EvalSummary& r : rows) {
    out += r.policy + ',' + std::to_string(r.episodes) + ',' + format_double(r.mean_final_reward) + ',' +
           format_double(r.stderr_final_reward) + ',' + format_double(r.mean_n) + ',' +
           format_double(r.frac_in_range) + '\n';
  }
  return out;
}

}  // namespace

SceneSpec default_scene_spec() {
  SceneSpec spec;
  spec.width_px = 3840;
  spec.height_px = 2160;
  spec.count_min = 40;
  spec.count_max = 80;
  Stratum top;
  top.y_min = 0.05;
  top.y_max = 0.45;
  top.size_min = 0.01;
  top.size_max = 0.03;
  top.density = 0.65;
  top.groups = 5;
  top.group_spread = 0.03;
  Stratum bottom;
  bottom.y_min = 0.5;
  bottom.y_max = 0.95;
  bottom.size_min = 0.06;
  bottom.size_max = 0.15;
  bottom.density = 0.35;
  bottom.groups = 3;
  bottom.group_spread = 0.05;
  spec.strata = {top, bottom};
  return spec;
}

PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig cfg) {
  check_keys(j,
             {"scene", "detections", "profile", "allow_non_monotone_profile", "checkpoint", "policy", "out_dir",
              "reward", "transform", "bandwidth", "n_pad", "t_max", "include_count", "raw_y_geometry",
              "keep_streak_stop", "n", "E", "nms_iou", "block_margin", "noise", "d_max", "scenes", "eval_episodes",
              "train", "seed"},
             "config");
  if (j.contains("scene")) cfg.scene = scene_spec_from_json(j.at("scene"));
  std::string path;
  if (j.contains("detections")) cfg.detections = j.at("detections").get<std::string>();
  if (j.contains("profile")) cfg.profile = j.at("profile").get<std::string>();
  if (j.contains("checkpoint")) cfg.checkpoint = j.at("checkpoint").get<std::string>();
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("policy")) cfg.policy = parse_policy_kind(j.at("policy").get<std::string>());
  read(j, "allow_non_monotone_profile", cfg.allow_non_monotone_profile);
  if (j.contains("reward")) cfg.weights = reward_weights_from_json(j.at("reward"), cfg.weights);
  if (j.contains("transform")) {
    check_keys(j.at("transform"), {"alpha_t"}, "transform");
    read(j.at("transform"), "alpha_t", cfg.transform.alpha_t);
  }
  if (j.contains("bandwidth")) cfg.bandwidth = bandwidth_from_json(j.at("bandwidth"), cfg.bandwidth);
  read(j, "n_pad", cfg.n_pad);
  read(j, "t_max", cfg.t_max);
  read(j, "include_count", cfg.include_count);
  read(j, "raw_y_geometry", cfg.raw_y_geometry);
  read(j, "keep_streak_stop", cfg.keep_streak_stop);
  read(j, "n", cfg.n);
  read(j, "E", cfg.e);
  read(j, "nms_iou", cfg.nms_iou);
  read(j, "block_margin", cfg.block_margin);
  if (j.contains("noise")) {
    check_keys(j.at("noise"), {"drop_prob", "sigma"}, "noise");
    read(j.at("noise"), "drop_prob", cfg.noise.drop_prob);
    read(j.at("noise"), "sigma", cfg.noise.sigma);
  }
  read(j, "d_max", cfg.d_max);
  read(j, "scenes", cfg.scenes);
  read(j, "eval_episodes", cfg.eval_episodes);
  if (j.contains("train")) cfg.train = hyperparams_from_json(j.at("train"), cfg.train);
  read(j, "seed", cfg.seed);

  validate_transform(cfg.transform);
  if (cfg.n < 1 || cfg.e < 1) throw ValidationError("n and E must be >= 1");
  if (!(cfg.nms_iou > 0.0 && cfg.nms_iou < 1.0)) throw ValidationError("nms_iou must lie in (0,1)");
  if (!(cfg.block_margin >= 0.0)) throw ValidationError("block_margin must be >= 0");
  if (!(cfg.noise.drop_prob >= 0.0 && cfg.noise.drop_prob < 1.0) || !(cfg.noise.sigma >= 0.0)) {
    throw ValidationError("noise settings out of range");
  }
  if (cfg.d_max < 0) throw ValidationError("d_max must be >= 0");
  if (cfg.scenes < 1 || cfg.eval_episodes < 1) throw ValidationError("scenes and eval_episodes must be >= 1");
  return cfg;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  PipelineConfig base;
  base.scene = default_scene_spec();
  return pipeline_config_from_json(j, base);
}

EnvConfig env_config(const PipelineConfig& cfg) {
  EnvConfig env;
  env.weights = cfg.weights;
  env.transform = cfg.transform;
  env.bandwidth = cfg.bandwidth;
  env.n_pad = cfg.n_pad;
  env.t_max = cfg.t_max;
  env.include_count = cfg.include_count;
  env.raw_y_geometry = cfg.raw_y_geometry;
  validate_env_config(env);
  return env;
}

std::uint64_t heldout_seed(std::uint64_t base, std::uint64_t k) {
  return episode_seed(base ^ 0x48454c444f5554ULL, ~std::uint64_t{0}, k);
}

json clusters_to_json(const Frame& frame, const InferenceResult& result, double block_margin) {
  json trace = json::array();
  for (const TraceStep& s : result.trace) {
    trace.push_back({{"t", s.t},
                     {"action", s.action},
                     {"kind", action_kind(s.action)},
                     {"valid", s.valid},
                     {"n", s.n},
                     {"reward", to_json(s.reward)}});
  }
  json final_reward = result.trace.empty() ? json(nullptr) : to_json(result.trace.back().reward);
  json doc = detections_to_json(frame);
  doc["n_initial"] = result.initial.count();
  doc["n_final"] = result.final_config.count();
  doc["block_margin"] = block_margin;
  doc["initial_clusters"] = cluster_list_json(result.initial, frame, block_margin);
  doc["clusters"] = cluster_list_json(result.final_config, frame, block_margin);
  doc["trace"] = trace;
  doc["final_reward"] = final_reward;
  return doc;
}

ClustersFile parse_clusters_json(const json& j) {
  ClustersFile out;
  out.frame = parse_detections_json(j);
  try {
    for (const json& c : j.at("clusters")) out.groups.push_back(c.at("members").get<std::vector<std::size_t>>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad clusters file: ") + e.what());
  }
  if (out.frame.detections.empty()) throw ValidationError("empty scene");
  // Validates the partition invariant.
  make_config(std::make_shared<const std::vector<DetectionBox>>(out.frame.detections), out.groups);
  return out;
}

std::vector<PartitionDescriptor> partitions_from_clusters(const Frame& frame,
                                                          const std::vector<std::vector<std::size_t>>& groups,
                                                          double block_margin) {
  std::vector<PartitionDescriptor> parts;
  const double frame_area = static_cast<double>(frame.width_px) * frame.height_px;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const Cluster c = make_cluster(groups[i], frame.detections);
    const PixelRect r = bounding_block(c, frame.detections, block_margin, frame);
    PartitionDescriptor p;
    p.id = static_cast<int>(i);
    p.width_px = r.width();
    p.height_px = r.height();
    for (std::size_t idx : c.members) p.areas_px.push_back(frame.detections[idx].area() * frame_area);
    parts.push_back(std::move(p));
  }
  return parts;
}

std::vector<EvalEpisode> evaluate_policies(const std::vector<std::pair<std::string, ActionPolicy>>& policies,
                                           const SceneSpec& scenes, const EnvConfig& env, int episodes,
                                           std::uint64_t seed) {
  std::vector<EvalEpisode> rows;
  for (int k = 0; k < episodes; ++k) {
    SceneSpec spec = scenes;
    spec.seed = heldout_seed(seed, static_cast<std::uint64_t>(k));
    const Frame frame = generate_scene(spec);
    for (const auto& [name, policy] : policies) {
      const InferenceResult r = run_policy(frame, env, policy);
      EvalEpisode row;
      row.policy = name;
      row.episode = k;
      row.seed = spec.seed;
      row.final_reward = r.trace.back().reward.total;
      row.final_n = r.final_config.count();
      row.in_range = row.final_n >= static_cast<std::size_t>(env.weights.n_min) &&
                     row.final_n <= static_cast<std::size_t>(env.weights.n_max);
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<EvalSummary> summarize(const std::vector<EvalEpisode>& episodes) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalEpisode*>> by_policy;
  for (const EvalEpisode& e : episodes) {
    if (!by_policy.contains(e.policy)) order.push_back(e.policy);
    by_policy[e.policy].push_back(&e);
  }
  std::vector<EvalSummary> out;
  for (const std::string& name : order) {
    const auto& rows = by_policy[name];
    EvalSummary s;
    s.policy = name;
    s.episodes = static_cast<int>(rows.size());
    const double n = static_cast<double>(rows.size());
    for (const EvalEpisode* r : rows) {
      s.mean_final_reward += r->final_reward / n;
      s.mean_n += static_cast<double>(r->final_n) / n;
      s.frac_in_range += (r->in_range ? 1.0 : 0.0) / n;
    }
    double var = 0.0;
    for (const EvalEpisode* r : rows) var += (r->final_reward - s.mean_final_reward) * (r->final_reward - s.mean_final_reward);
    s.stderr_final_reward = rows.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
    out.push_back(s);
  }
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"repose: RL-driven scene partitioning and latency-budgeted edge offloading"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  app.add_option("--config", config_path, "JSON config file");
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides the config)");
  auto* out_dir_opt = app.add_option("--out-dir", out_dir, "Output directory (overrides the config)");

  auto* gen = app.add_subcommand("gen-scene", "Generate a synthetic detection file from a scene spec");
  std::string spec_path, gen_out;
  gen->add_option("--spec", spec_path, "Scene spec JSON (default: the config's scene)");
  gen->add_option("--out", gen_out, "Output detection file (.json or .csv)");

  auto* train_cmd = app.add_subcommand("train", "Train the clustering policy with PPO");
  int iterations = -1;
  train_cmd->add_option("--iterations", iterations, "Training iterations (overrides the config)");

  auto* part = app.add_subcommand("partition", "Cluster one detection file with the policy");
  std::string det_path, ckpt_path, policy_name, part_out;
  part->add_option("--detections", det_path, "Detection file (.json or .csv)");
  part->add_option("--checkpoint", ckpt_path, "Trained checkpoint");
  part->add_option("--policy", policy_name, "checkpoint | keep | random");
  part->add_option("--out", part_out, "Output clusters JSON");

  auto* plan_cmd = app.add_subcommand("plan", "Assign models to cluster blocks under a latency budget");
  std::string clusters_path, profile_path, plan_out;
  int d_max = -1, servers = -1;
  plan_cmd->add_option("--clusters", clusters_path, "Clusters JSON from 'partition'")->required();
  plan_cmd->add_option("--profile", profile_path, "Model profile JSON");
  plan_cmd->add_option("--d-max", d_max, "Latency budget in ms");
  plan_cmd->add_option("--servers", servers, "Edge server count E");
  plan_cmd->add_option("--out", plan_out, "Output plan JSON");

  auto* pipe = app.add_subcommand("pipeline", "Scene -> partition -> plan -> schedule for every scene");
  std::string pipe_ckpt, pipe_policy;
  int scenes = -1;
  pipe->add_option("--checkpoint", pipe_ckpt, "Trained checkpoint");
  pipe->add_option("--policy", pipe_policy, "checkpoint | keep | random");
  pipe->add_option("--scenes", scenes, "Number of scenes");

  auto* eval_cmd = app.add_subcommand("eval", "Compare trained, random and keep-only policies");
  std::string eval_ckpt;
  int episodes = -1;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Trained checkpoint");
  eval_cmd->add_option("--episodes", episodes, "Held-out episodes");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    PipelineConfig cfg = in_stage("config", [&] {
      PipelineConfig c;
      c.scene = default_scene_spec();
      if (!config_path.empty()) c = load_pipeline_config(config_path);
      if (seed_opt->count() > 0) {
        c.seed = seed;
        c.train.seed = seed;
      }
      if (out_dir_opt->count() > 0) c.out_dir = out_dir;
      return c;
    });

    if (gen->parsed()) {
      const SceneSpec spec = in_stage("gen-scene", [&] {
        SceneSpec s = spec_path.empty() ? cfg.scene : load_scene_spec(spec_path);
        if (seed_opt->count() > 0) s.seed = seed;
        return s;
      });
      const std::filesystem::path target = gen_out.empty() ? cfg.out_dir / "scene.json" : std::filesystem::path(gen_out);
      in_stage("gen-scene", [&] {
        const Frame frame = generate_scene(spec);
        save_detections(frame, target, format_for_path(target));
        out << "wrote " << frame.detections.size() << " detections to " << target.string() << "\n";
        return 0;
      });
      return kExitOk;
    }

    if (train_cmd->parsed()) {
      if (iterations >= 0) cfg.train.iterations = iterations;
      const EnvConfig env = in_stage("config", [&] { return env_config(cfg); });
      const TrainResult result = in_stage("train", [&] {
        validate_hyperparams(cfg.train);
        const SceneSpec spec = cfg.scene;
        SceneSampler sampler = [spec](std::uint64_t s) {
          SceneSpec copy = spec;
          copy.seed = s;
          return generate_scene(copy);
        };
        return train(sampler, env, cfg.train);
      });
      in_stage("train", [&] {
        save_checkpoint(result.checkpoint, cfg.out_dir / "checkpoint.ckpt");
        write_file_atomic(cfg.out_dir / "train_log.csv", training_log_csv(result.log));
        return 0;
      });
      out << "trained " << cfg.train.iterations << " iterations; checkpoint "
          << (cfg.out_dir / "checkpoint.ckpt").string() << "\n";
      return kExitOk;
    }

    if (part->parsed()) {
      if (!det_path.empty()) cfg.detections = det_path;
      if (!ckpt_path.empty()) cfg.checkpoint = ckpt_path;
      if (!policy_name.empty()) cfg.policy = in_stage("config", [&] { return parse_policy_kind(policy_name); });
      if (cfg.detections.empty()) throw StageError("partition", "--detections is required", kExitUsage);
      const EnvConfig env = in_stage("config", [&] { return env_config(cfg); });
      const ResolvedPolicy policy = in_stage("checkpoint", [&] { return resolve_policy(cfg, env); });
      const Frame raw = in_stage("load", [&] { return frame_for_seed(cfg, cfg.seed); });
      const Frame coarse = in_stage("coarse-detect", [&] {
        NoisyDetector noise = cfg.noise;
        noise.seed = cfg.seed;
        return coarse_detect(raw, cfg.n, cfg.e, noise, cfg.nms_iou);
      });
      const InferenceResult result =
          in_stage("partition", [&] { return run_policy(coarse, env, policy.policy, cfg.keep_streak_stop); });
      const std::filesystem::path target =
          part_out.empty() ? cfg.out_dir / "clusters.json" : std::filesystem::path(part_out);
      in_stage("partition", [&] {
        json doc = clusters_to_json(coarse, result, cfg.block_margin);
        doc["policy"] = policy.name;
        write_file_atomic(target, doc.dump(2) + "\n");
        return 0;
      });
      out << "policy " << policy.name << ": " << result.initial.count() << " -> " << result.final_config.count()
          << " clusters; wrote " << target.string() << "\n";
      return kExitOk;
    }

    if (plan_cmd->parsed()) {
      if (!profile_path.empty()) cfg.profile = profile_path;
      if (d_max >= 0) cfg.d_max = d_max;
      if (servers > 0) cfg.e = servers;
      const ClustersFile clusters = in_stage("load", [&] { return parse_clusters_json(json::parse(read_file(clusters_path))); });
      const auto profiles = in_stage("profile", [&] { return profiles_for(cfg); });
      double margin = cfg.block_margin;
      const std::filesystem::path target = plan_out.empty() ? cfg.out_dir / "plan.json" : std::filesystem::path(plan_out);
      const PlanResult result = in_stage("plan", [&] {
        return dp_plan(partitions_from_clusters(clusters.frame, clusters.groups, margin), profiles, cfg.d_max);
      });
      if (const auto* inf = std::get_if<Infeasible>(&result)) {
        const json doc = {{"status", "infeasible"},
                          {"reason", inf->reason()},
                          {"d_max_ms", inf->d_max_ms},
                          {"min_latency_ms", inf->min_latency_ms},
                          {"deficit_ms", inf->deficit_ms()}};
        in_stage("plan", [&] {
          write_file_atomic(target, doc.dump(2) + "\n");
          return 0;
        });
        out << doc.dump() << "\n";
        err << "error: [plan] " << inf->reason() << "\n";
        return kExitInfeasible;
      }
      const OffloadPlan& plan = std::get<OffloadPlan>(result);
      const ServerSchedule schedule = in_stage("schedule", [&] { return assign_servers(plan, cfg.e); });
      const ScheduleMetrics metrics = in_stage("simulate", [&] { return simulate(schedule); });
      json doc = plan_to_json(plan, schedule, metrics);
      doc["status"] = "ok";
      doc["d_max_ms"] = cfg.d_max;
      in_stage("plan", [&] {
        write_file_atomic(target, doc.dump(2) + "\n");
        return 0;
      });
      out << "precision " << format_double(plan.total_precision) << ", latency " << plan.total_latency_ms
          << " ms, makespan " << metrics.makespan_ms << " ms; wrote " << target.string() << "\n";
      return kExitOk;
    }

    if (pipe->parsed()) {
      if (!pipe_ckpt.empty()) cfg.checkpoint = pipe_ckpt;
      if (!pipe_policy.empty()) cfg.policy = in_stage("config", [&] { return parse_policy_kind(pipe_policy); });
      if (scenes > 0) cfg.scenes = scenes;
      if (!cfg.detections.empty()) cfg.scenes = 1;
      const EnvConfig env = in_stage("config", [&] { return env_config(cfg); });
      const auto profiles = in_stage("profile", [&] { return profiles_for(cfg); });
      const ResolvedPolicy policy = in_stage("checkpoint", [&] { return resolve_policy(cfg, env); });

      json report_scenes = json::array();
      std::string metrics_csv =
          "scene_id,seed,N_final,R1,R2,R3,R4,R_total,plan_precision,sum_latency_ms,makespan_ms\n";
      for (int k = 0; k < cfg.scenes; ++k) {
        const std::string tag = "scene " + std::to_string(k) + " ";
        const std::uint64_t scene_seed = cfg.seed + static_cast<std::uint64_t>(k);
        const Frame raw = in_stage(tag + "load", [&] { return frame_for_seed(cfg, scene_seed); });
        const Frame coarse = in_stage(tag + "coarse-detect", [&] {
          NoisyDetector noise = cfg.noise;
          noise.seed = scene_seed;
          return coarse_detect(raw, cfg.n, cfg.e, noise, cfg.nms_iou);
        });
        const InferenceResult inf =
            in_stage(tag + "partition", [&] { return run_policy(coarse, env, policy.policy, cfg.keep_streak_stop); });
        const auto groups = inf.final_config.member_sets();
        const PlanResult planned = in_stage(tag + "plan", [&] {
          return dp_plan(partitions_from_clusters(coarse, groups, cfg.block_margin), profiles, cfg.d_max);
        });
        if (const auto* bad = std::get_if<Infeasible>(&planned)) {
          throw StageError(tag + "plan", bad->reason(), kExitInfeasible);
        }
        const OffloadPlan& plan = std::get<OffloadPlan>(planned);
        const ServerSchedule schedule = in_stage(tag + "schedule", [&] { return assign_servers(plan, cfg.e); });
        const ScheduleMetrics metrics = in_stage(tag + "simulate", [&] { return simulate(schedule); });

        json partition_doc = clusters_to_json(coarse, inf, cfg.block_margin);
        partition_doc.erase("detections");
        report_scenes.push_back({{"scene_id", k},
                                 {"seed", scene_seed},
                                 {"policy", policy.name},
                                 {"partition", partition_doc},
                                 {"plan", plan_to_json(plan, schedule, metrics)}});
        const RewardBreakdown r = inf.trace.back().reward;
        metrics_csv += std::to_string(k) + ',' + std::to_string(scene_seed) + ',' +
                       std::to_string(inf.final_config.count()) + ',' + format_double(r.r1) + ',' +
                       format_double(r.r2) + ',' + format_double(r.r3) + ',' + format_double(r.r4) + ',' +
                       format_double(r.total) + ',' + format_double(plan.total_precision) + ',' +
                       std::to_string(plan.total_latency_ms) + ',' + std::to_string(metrics.makespan_ms) + '\n';
      }
      const json report = {{"d_max_ms", cfg.d_max}, {"servers", cfg.e}, {"scenes", report_scenes}};
      in_stage("report", [&] {
        write_file_atomic(cfg.out_dir / "report.json", report.dump(2) + "\n");
        write_file_atomic(cfg.out_dir / "metrics.csv", metrics_csv);
        return 0;
      });
      out << "processed " << cfg.scenes << " scene(s); wrote " << (cfg.out_dir / "report.json").string() << "\n";
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      if (!eval_ckpt.empty()) cfg.checkpoint = eval_ckpt;
      if (episodes > 0) cfg.eval_episodes = episodes;
      const EnvConfig env = in_stage("config", [&] { return env_config(cfg); });
      std::vector<std::pair<std::string, ActionPolicy>> policies;
      if (!cfg.checkpoint.empty()) {
        PipelineConfig with_ckpt = cfg;
        with_ckpt.policy = PolicyKind::checkpoint;
        policies.emplace_back("trained", in_stage("checkpoint", [&] { return resolve_policy(with_ckpt, env); }).policy);
      }
      policies.emplace_back("random", random_policy(cfg.seed));
      policies.emplace_back("keep", keep_policy());
      const auto rows =
          in_stage("eval", [&] { return evaluate_policies(policies, cfg.scene, env, cfg.eval_episodes, cfg.seed); });
      const auto summary = summarize(rows);
      in_stage("eval", [&] {
        write_file_atomic(cfg.out_dir / "eval_episodes.csv", eval_episodes_csv(rows));
        write_file_atomic(cfg.out_dir / "eval_summary.csv", eval_summary_csv(summary));
        return 0;
      });
      out << eval_summary_csv(summary);
      return kExitOk;
    }
  } catch (const StageError& e) {
    err << "error: " << e.what() << "\n";
    return e.code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace repose
