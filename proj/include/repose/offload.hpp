#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

namespace repose {

/// One bin of a precision curve: upper edge of the bin in resized pixel^2
/// and the mAP measured for objects in that bin.
struct CurvePoint {
  double area_edge = 0.0;
  double map = 0.0;
};

struct ModelProfile {
  std::string name;
  int input_size = 0;  // S_j, the model resizes blocks to S_j x S_j
  int latency_ms = 0;
  std::vector<CurvePoint> curve;
};

/// Throws ValidationError on nonpositive sizes, out of range mAP, unsorted
/// bin edges, or (unless allowed) an mAP curve that decreases with area.
void validate_profile(const ModelProfile& profile, bool allow_non_monotone = false);

/// Reads `{"models": [{"name", "input_size", "latency_ms", "curve": [[edge, map], ...]}]}`.
/// Fractional latencies are rounded up to whole milliseconds.
std::vector<ModelProfile> profiles_from_json(const nlohmann::json& j, bool allow_non_monotone = false);
nlohmann::json profiles_to_json(std::span<const ModelProfile> profiles);
std::vector<ModelProfile> load_profiles(const std::filesystem::path& path, bool allow_non_monotone = false);

/// Five-model YOLOv8 n/s/m/l/x style table: 640..1280 input sides, 88 ms to
/// 400 ms with log-spaced intermediate latencies, curves rising then flattening.
std::vector<ModelProfile> default_profiles();

struct PartitionDescriptor {
  int id = 0;
  int width_px = 0;
  int height_px = 0;
  std::vector<double> areas_px;  // original member box areas
};

/// area * side^2 / (width * height).
double scale_area(double area, double width, double height, double side);

/// Piecewise-linear in area through the bin centers, clamped at both ends.
double precision_lookup(const ModelProfile& profile, double area);

/// Mean precision of the partition's objects after resizing to the model input.
double partition_precision(const PartitionDescriptor& part, const ModelProfile& profile);

struct Assignment {
  int partition_id = 0;
  std::size_t model_index = 0;
  std::string model;
  int input_size = 0;
  int latency_ms = 0;
  double precision = 0.0;
};

struct OffloadPlan {
  std::vector<Assignment> assignments;  // in partition order
  double total_precision = 0.0;
  int total_latency_ms = 0;
  int opt_t = 0;
};

struct Infeasible {
  int d_max_ms = 0;
  int min_latency_ms = 0;  // every partition on its fastest model
  int deficit_ms() const { return min_latency_ms - d_max_ms; }
  std::string reason() const;
};

using PlanResult = std::variant<OffloadPlan, Infeasible>;

/// Multi-choice knapsack solution over a precision table.
struct MckpSolution {
  std::vector<std::size_t> choice;  // model index per partition
  double value = 0.0;
  int latency = 0;  // sum of chosen latencies
  int opt_t = 0;    // DP column holding the optimum
};

/// dp[i][t] = best precision of the first i partitions within latency t.
/// Ties keep the lower-latency model (then the smaller input size) and the
/// smallest optimal t. Returns Infeasible when no assignment fits `d_max`.
std::variant<MckpSolution, Infeasible> solve_mckp(const std::vector<std::vector<double>>& precision,
                                                  std::span<const int> latency, std::span<const int> input_size,
                                                  int d_max);

PlanResult dp_plan(std::span<const PartitionDescriptor> partitions, std::span<const ModelProfile> profiles,
                   int d_max);

struct ScheduledTask {
  int partition_id = 0;
  std::string model;
  int latency_ms = 0;
  int start_ms = 0;
  int end_ms = 0;
};

struct ServerSchedule {
  std::vector<std::vector<ScheduledTask>> lanes;
  int makespan_ms = 0;
};

/// Longest-processing-time-first list scheduling onto `servers` lanes.
ServerSchedule assign_servers(const OffloadPlan& plan, int servers);

struct ScheduleMetrics {
  int makespan_ms = 0;
  int sum_latency_ms = 0;
  std::vector<int> busy_ms;
  std::vector<double> utilization;  // busy / makespan per lane
};

/// Replays the lanes; throws ValidationError on overlapping or malformed tasks.
ScheduleMetrics simulate(const ServerSchedule& schedule);

nlohmann::json plan_to_json(const OffloadPlan& plan, const ServerSchedule& schedule,
                            const ScheduleMetrics& metrics);

}  // namespace repose
