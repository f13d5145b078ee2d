#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "agentcr/coordinator.hpp"
#include "agentcr/engine.hpp"
#include "agentcr/latency_model.hpp"
#include "agentcr/trace.hpp"

namespace agentcr {

struct TaskFault {
  // Crash during this turn's tool phase, after `crash_after_actions` of its
  // actions have run.
  std::optional<TurnIndex> crash_turn;
  std::size_t crash_after_actions = 0;
};

struct PreemptionNotice {
  std::size_t task = 0;
  Seconds time = 0;
  Seconds grace = 0;
};

struct FaultPlan {
  std::vector<TaskFault> tasks;  // indexed by trace task; missing means none
  std::vector<PreemptionNotice> preemptions;
  // Per-stage probability that a checkpoint job is failed by injection.
  double job_failure_probability = 0;
  std::uint64_t seed = 0;
};

/// One crash per task at a uniformly drawn turn and action position.
FaultPlan make_fault_plan(const Trace& trace, std::uint64_t seed, double crash_probability = 1.0);

enum class ModeSelection { InSandbox, WithSandbox, Alternate };

std::string_view to_string(ModeSelection m);
ModeSelection parse_mode_selection(std::string_view text);

struct ReplayConfig {
  std::string backend = "simulated";  // "simulated" or "portable"
  // Number of co-located sandboxes; sandbox i runs trace task i mod #tasks.
  // Zero means one sandbox per task.
  std::size_t density = 0;
  SchedulerPolicy policy = SchedulerPolicy::Reactive;
  double wait_scale = 1.0;
  std::uint64_t seed = 1;
  std::size_t workers = 8;
  LatencyModel latency;
  ModeSelection mode = ModeSelection::InSandbox;
  // Real-clock mode: threads per sandbox, durations multiplied by time_scale.
  bool real_time = false;
  double time_scale = 1.0;
  // Working area for workspaces, artifacts and manifests; a fresh temporary
  // directory when empty.
  std::filesystem::path work_dir;
  bool keep_work_dir = false;
  // Compare every crashed task against a fault-free replay of the same task.
  bool verify_recovery = true;

  void validate() const;
};

struct TurnMetric {
  SandboxId sandbox_id;
  std::size_t task = 0;
  TurnIndex turn = 0;
  CheckpointClass cls = CheckpointClass::Skip;
  Seconds response_arrival = 0;
  Seconds exposed_delay = 0;
  bool synthetic = false;
  bool job_failed = false;
};

struct TaskMetric {
  SandboxId sandbox_id;
  std::size_t task = 0;
  AgentMode mode = AgentMode::InSandbox;
  Seconds wall_time = 0;
  Seconds exposed_total = 0;
  double exposed_fraction = 0;
  std::size_t turns = 0;
  std::size_t skip = 0;
  std::size_t fs_only = 0;
  std::size_t proc_only = 0;
  std::size_t full = 0;
  bool crashed = false;
  // Turns served from the log after a restore.
  std::size_t fast_forward_turns = 0;
  bool fast_forward_manifest = false;  // restored manifest had fs_turn > proc_turn
  std::size_t reissued_commands = 0;
  bool recovery_correct = true;
  std::string recovery_note;
  std::string final_tree_hash;
};

struct MetricsReport {
  std::string trace_name;
  std::string backend;
  std::string policy;
  std::size_t density = 0;
  double wait_scale = 1;
  bool real_time = false;
  std::vector<TaskMetric> tasks;
  std::vector<TurnMetric> turns;
  SchedulerStats scheduler;
  // Job ids in the order they reached a terminal state.
  std::vector<JobId> completion_order;
  std::size_t jobs_submitted = 0;
  std::size_t jobs_done = 0;
  std::size_t jobs_failed = 0;
  std::size_t listed_versions = 0;

  std::size_t total_turns() const;
  std::size_t count(CheckpointClass c) const;
  double skip_ratio() const;
  bool recovery_ok() const;
  std::vector<double> exposed_fractions() const;
};

/// Replays a trace under the configured backend, density and policy.
MetricsReport replay(const Trace& trace, const FaultPlan& faults, const ReplayConfig& config);

/// Linear-interpolated percentile (q in [0, 1]); NaN for an empty sample.
double percentile(std::vector<double> values, double q);

/// Writes tasks.csv, turns.csv, summary.csv, cdf_exposed.csv and
/// cdf_task_time.csv into `dir`.
void write_report(const MetricsReport& metrics, const std::filesystem::path& dir);
/// One `key=value` result line per headline metric.
std::string result_lines(const MetricsReport& metrics);

}  // namespace agentcr
