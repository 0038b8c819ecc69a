#include "repose/offload.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "repose/core.hpp"
#include "repose/io.hpp"

namespace repose {

using nlohmann::json;

void validate_profile(const ModelProfile& p, bool allow_non_monotone) {
  const std::string who = "model '" + p.name + "': ";
  if (p.name.empty()) throw ValidationError("model profile without a name");
  if (p.input_size <= 0) throw ValidationError(who + "input size must be positive");
  if (p.latency_ms <= 0) throw ValidationError(who + "latency must be positive");
  if (p.curve.empty()) throw ValidationError(who + "empty precision curve");
  for (std::size_t k = 0; k < p.curve.size(); ++k) {
    const CurvePoint& c = p.curve[k];
    if (!(c.area_edge > 0.0)) throw ValidationError(who + "curve bin edges must be positive");
    if (!(c.map >= 0.0 && c.map <= 1.0)) throw ValidationError(who + "curve mAP must lie in [0,1]");
    if (k > 0 && !(c.area_edge > p.curve[k - 1].area_edge)) {
      throw ValidationError(who + "curve bin edges must be strictly increasing");
    }
    if (k > 0 && !allow_non_monotone && c.map < p.curve[k - 1].map) {
      throw ValidationError(who + "curve mAP decreases with area (pass the non-monotone flag to accept it)");
    }
  }
}

std::vector<ModelProfile> profiles_from_json(const json& j, bool allow_non_monotone) {
  std::vector<ModelProfile> out;
  try {
    std::set<std::string> names;
    for (const json& m : j.at("models")) {
      ModelProfile p;
      p.name = m.at("name").get<std::string>();
      p.input_size = m.at("input_size").get<int>();
      const double latency = m.at("latency_ms").get<double>();
      p.latency_ms = static_cast<int>(std::ceil(latency - 1e-9));
      for (const json& pt : m.at("curve")) {
        if (!pt.is_array() || pt.size() != 2) throw ValidationError("curve entries must be [area, map] pairs");
        p.curve.push_back({pt[0].get<double>(), pt[1].get<double>()});
      }
      validate_profile(p, allow_non_monotone);
      if (!names.insert(p.name).second) throw ValidationError("duplicate model name '" + p.name + "'");
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad profile file: ") + e.what());
  }
  if (out.empty()) throw ValidationError("profile file lists no models");
  return out;
}

json profiles_to_json(std::span<const ModelProfile> profiles) {
  json models = json::array();
  for (const ModelProfile& p : profiles) {
    json curve = json::array();
    for (const CurvePoint& c : p.curve) curve.push_back({c.area_edge, c.map});
    models.push_back({{"name", p.name}, {"input_size", p.input_size}, {"latency_ms", p.latency_ms}, {"curve", curve}});
  }
  return {{"models", models}};
}

std::vector<ModelProfile> load_profiles(const std::filesystem::path& path, bool allow_non_monotone) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("profile file " + path.string() + ": " + e.what());
  }
  return profiles_from_json(j, allow_non_monotone);
}

std::vector<ModelProfile> default_profiles() {
  const std::vector<double> edges = {8, 16, 32, 48, 64, 96, 128, 160, 256, 512, 1024, 4096, 16384};
  struct Row {
    const char* name;
    int side;
    int latency;
    std::vector<double> map;
  };
  // 88 ms and 400 ms anchor the ends; the middle three are 88 * (400/88)^(k/4), rounded up.
  const std::vector<Row> rows = {
      {"yolov8n", 640, 88, {0.00, 0.01, 0.04, 0.10, 0.16, 0.25, 0.31, 0.35, 0.39, 0.42, 0.44, 0.45, 0.45}},
      {"yolov8s", 768, 129, {0.00, 0.02, 0.06, 0.13, 0.20, 0.30, 0.37, 0.41, 0.45, 0.48, 0.50, 0.51, 0.51}},
      {"yolov8m", 896, 188, {0.00, 0.02, 0.07, 0.15, 0.24, 0.35, 0.43, 0.48, 0.53, 0.56, 0.58, 0.59, 0.60}},
      {"yolov8l", 1024, 274, {0.01, 0.03, 0.08, 0.17, 0.27, 0.39, 0.48, 0.54, 0.59, 0.62, 0.64, 0.65, 0.66}},
      {"yolov8x", 1280, 400, {0.01, 0.03, 0.09, 0.18, 0.29, 0.41, 0.51, 0.58, 0.62, 0.65, 0.67, 0.68, 0.69}},
  };
  std::vector<ModelProfile> out;
  for (const Row& r : rows) {
    ModelProfile p{r.name, r.side, r.latency, {}};
    for (std::size_t k = 0; k < edges.size(); ++k) p.curve.push_back({edges[k], r.map[k]});
    out.push_back(std::move(p));
  }
  return out;
}

double scale_area(double area, double width, double height, double side) {
  if (!(area > 0.0 && width > 0.0 && height > 0.0 && side > 0.0)) {
    throw ValidationError("scale_area needs positive inputs");
  }
  return area * side * side / (width * height);
}

double precision_lookup(const ModelProfile& profile, double area) {
  const auto& c = profile.curve;
  if (c.empty()) throw ValidationError("model '" + profile.name + "' has an empty precision curve");
  std::vector<double> centers(c.size());
  double prev = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    centers[k] = 0.5 * (prev + c[k].area_edge);
    prev = c[k].area_edge;
  }
  if (area <= centers.front()) return c.front().map;
  if (area >= centers.back()) return c.back().map;
  const auto hi = static_cast<std::size_t>(std::upper_bound(centers.begin(), centers.end(), area) - centers.begin());
  const std::size_t lo = hi - 1;
  const double t = (area - centers[lo]) / (centers[hi] - centers[lo]);
  return c[lo].map + t * (c[hi].map - c[lo].map);
}

double partition_precision(const PartitionDescriptor& part, const ModelProfile& profile) {
  if (part.areas_px.empty()) throw ValidationError("partition " + std::to_string(part.id) + " has no objects");
  double sum = 0.0;
  for (double a : part.areas_px) {
    sum += precision_lookup(profile, scale_area(a, part.width_px, part.height_px, profile.input_size));
  }
  return sum / static_cast<double>(part.areas_px.size());
}

std::string Infeasible::reason() const {
  return "latency budget " + std::to_string(d_max_ms) + " ms is below the minimum achievable " +
         std::to_string(min_latency_ms) + " ms (deficit " + std::to_string(deficit_ms()) + " ms)";
}

std::variant<MckpSolution, Infeasible> solve_mckp(const std::vector<std::vector<double>>& precision,
                                                  std::span<const int> latency, std::span<const int> input_size,
                                                  int d_max) {
  if (d_max < 0) throw ValidationError("latency budget must be >= 0");
  const std::size_t n = precision.size();
  const std::size_t models = latency.size();
  if (models == 0) throw ValidationError("no models to choose from");
  if (input_size.size() != models) throw ValidationError("input size list does not match model list");
  for (int d : latency) {
    if (d <= 0) throw ValidationError("model latencies must be positive");
  }
  for (const auto& row : precision) {
    if (row.size() != models) throw ValidationError("precision table row has the wrong width");
  }

  const int min_latency = *std::min_element(latency.begin(), latency.end());
  if (static_cast<long long>(min_latency) * static_cast<long long>(n) > d_max) {
    return Infeasible{d_max, static_cast<int>(min_latency * static_cast<long long>(n))};
  }

  std::vector<std::size_t> order(models);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (latency[a] != latency[b]) return latency[a] < latency[b];
    return input_size[a] < input_size[b];
  });

  const std::size_t width = static_cast<std::size_t>(d_max) + 1;
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<double> dp((n + 1) * width, 0.0);
  std::vector<char> valid((n + 1) * width, 0);
  std::vector<std::size_t> choice((n + 1) * width, kNone);
  std::fill(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(width), 1);

  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t t = 0; t < width; ++t) {
      const std::size_t cell = i * width + t;
      for (std::size_t m : order) {
        const auto d = static_cast<std::size_t>(latency[m]);
        if (t < d) continue;
        const std::size_t prev = (i - 1) * width + (t - d);
        if (!valid[prev]) continue;
        const double cand = dp[prev] + precision[i - 1][m];
        if (!valid[cell] || cand > dp[cell]) {
          dp[cell] = cand;
          valid[cell] = 1;
          choice[cell] = m;
        }
      }
    }
  }

  std::size_t opt_t = kNone;
  for (std::size_t t = 0; t < width; ++t) {
    const std::size_t cell = n * width + t;
    if (valid[cell] && (opt_t == kNone || dp[cell] > dp[n * width + opt_t])) opt_t = t;
  }
  if (opt_t == kNone) return Infeasible{d_max, static_cast<int>(min_latency * static_cast<long long>(n))};

  MckpSolution sol;
  sol.value = dp[n * width + opt_t];
  sol.opt_t = static_cast<int>(opt_t);
  sol.choice.assign(n, 0);
  std::size_t remaining = opt_t;
  for (std::size_t i = n; i >= 1; --i) {
    const std::size_t m = choice[i * width + remaining];
    sol.choice[i - 1] = m;
    sol.latency += latency[m];
    remaining -= static_cast<std::size_t>(latency[m]);
  }
  return sol;
}

PlanResult dp_plan(std::span<const PartitionDescriptor> partitions, std::span<const ModelProfile> profiles,
                   int d_max) {
  if (profiles.empty()) throw ValidationError("no model profiles");
  std::vector<std::vector<double>> precision;
  precision.reserve(partitions.size());
  for (const PartitionDescriptor& part : partitions) {
    std::vector<double> row;
    for (const ModelProfile& p : profiles) row.push_back(partition_precision(part, p));
    precision.push_back(std::move(row));
  }
  std::vector<int> latency, sides;
  for (const ModelProfile& p : profiles) {
    latency.push_back(p.latency_ms);
    sides.push_back(p.input_size);
  }

  auto solved = solve_mckp(precision, latency, sides, d_max);
  if (auto* inf = std::get_if<Infeasible>(&solved)) return *inf;
  const auto& sol = std::get<MckpSolution>(solved);

  OffloadPlan plan;
  plan.total_precision = sol.value;
  plan.total_latency_ms = sol.latency;
  plan.opt_t = sol.opt_t;
  for (std::size_t i = 0; i < partitions.size(); ++i) {
    const std::size_t m = sol.choice[i];
    plan.assignments.push_back(
        {partitions[i].id, m, profiles[m].name, profiles[m].input_size, profiles[m].latency_ms, precision[i][m]});
  }
  if (plan.total_latency_ms > d_max) throw std::logic_error("DP plan exceeds the latency budget");
  return plan;
}

ServerSchedule assign_servers(const OffloadPlan& plan, int servers) {
  if (servers < 1) throw ValidationError("need at least one edge server");
  std::vector<std::size_t> order(plan.assignments.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = plan.assignments[a];
    const auto& y = plan.assignments[b];
    if (x.latency_ms != y.latency_ms) return x.latency_ms > y.latency_ms;
    return x.partition_id < y.partition_id;
  });

  ServerSchedule s;
  s.lanes.resize(static_cast<std::size_t>(servers));
  std::vector<int> load(static_cast<std::size_t>(servers), 0);
  for (std::size_t idx : order) {
    const Assignment& a = plan.assignments[idx];
    const auto lane = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    s.lanes[lane].push_back({a.partition_id, a.model, a.latency_ms, load[lane], load[lane] + a.latency_ms});
    load[lane] += a.latency_ms;
  }
  s.makespan_ms = *std::max_element(load.begin(), load.end());
  return s;
}

ScheduleMetrics simulate(const ServerSchedule& schedule) {
  ScheduleMetrics m;
  for (const auto& lane : schedule.lanes) {
    int clock = 0;
    int busy = 0;
    for (const ScheduledTask& t : lane) {
      if (t.latency_ms < 0 || t.end_ms - t.start_ms != t.latency_ms) {
        throw ValidationError("task " + std::to_string(t.partition_id) + " has inconsistent timing");
      }
      if (t.start_ms < clock) throw ValidationError("overlapping tasks on one server lane");
      clock = t.end_ms;
      busy += t.latency_ms;
    }
    m.busy_ms.push_back(busy);
    m.sum_latency_ms += busy;
    m.makespan_ms = std::max(m.makespan_ms, clock);
  }
  for (int busy : m.busy_ms) {
    m.utilization.push_back(m.makespan_ms > 0 ? static_cast<double>(busy) / m.makespan_ms : 0.0);
  }
  return m;
}

json plan_to_json(const OffloadPlan& plan, const ServerSchedule& schedule, const ScheduleMetrics& metrics) {
  json assignments = json::object();
  for (const Assignment& a : plan.assignments) assignments[std::to_string(a.partition_id)] = a.model;
  json servers = json::array();
  for (std::size_t k = 0; k < schedule.lanes.size(); ++k) {
    json tasks = json::array();
    for (const ScheduledTask& t : schedule.lanes[k]) {
      tasks.push_back({{"partition", t.partition_id},
                       {"model", t.model},
                       {"latency_ms", t.latency_ms},
                       {"start_ms", t.start_ms},
                       {"end_ms", t.end_ms}});
    }
    servers.push_back({{"server", k},
                       {"busy_ms", metrics.busy_ms[k]},
                       {"utilization", metrics.utilization[k]},
                       {"tasks", tasks}});
  }
  return {{"assignments", assignments},
          {"total_precision", plan.total_precision},
          {"total_latency_ms", plan.total_latency_ms},
          {"makespan_ms", metrics.makespan_ms},
          {"servers", servers}};
}

}  // namespace repose
