#pragma once

#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "agentcr/backend.hpp"
#include "agentcr/clock.hpp"
#include "agentcr/inspector.hpp"
#include "agentcr/manifest_store.hpp"
#include "agentcr/scheduler.hpp"

namespace agentcr {

enum class Lifecycle { Pending, Dumping, Versioning, Done, Failed };
enum class Priority { Normal, High };

std::string_view to_string(Lifecycle stage);

inline bool is_terminal(Lifecycle stage) {
  return stage == Lifecycle::Done || stage == Lifecycle::Failed;
}

struct JobRequest {
  SandboxId sandbox_id;
  TurnIndex turn_index = 0;
  CheckpointClass cls = CheckpointClass::Full;
  Seq up_to_seq = 0;
};

struct CheckpointJob {
  JobId job_id = 0;
  SandboxId sandbox_id;
  TurnIndex turn_index = 0;
  CheckpointClass cls = CheckpointClass::Full;
  Seq up_to_seq = 0;
  Priority priority = Priority::Normal;
  Lifecycle lifecycle = Lifecycle::Pending;
  Seconds enqueue_time = 0;
  std::optional<Seconds> start_time;
  std::optional<Seconds> completion_time;
  std::vector<ArtifactRecord> artifacts;
  std::optional<VersionId> version;
  std::string failure;
  std::uint64_t epoch = 0;
};

struct RestoreReport {
  SandboxId source_id;
  SandboxId target_id;
  VersionId version_id = 0;
  TurnIndex proc_turn = kInitialTurn;
  TurnIndex fs_turn = kInitialTurn;
  TurnIndex head_turn = kInitialTurn;
  Seconds wall_time = 0;
  bool fork = false;
};

struct SchedulerStats {
  std::size_t submitted = 0;
  std::size_t done = 0;
  std::size_t failed = 0;
  std::size_t promotions = 0;
  std::size_t normal_queue = 0;
  std::size_t high_queue = 0;
  std::size_t in_flight = 0;
  std::size_t max_normal_queue = 0;
  std::size_t max_high_queue = 0;
};

/// Worker count used when none is configured: one worker per eight host cores,
/// capped at eight.
std::size_t default_worker_count(unsigned host_cores = std::thread::hardware_concurrency());

struct EngineConfig {
  std::size_t worker_count = default_worker_count();
  SchedulerPolicy policy = SchedulerPolicy::Reactive;
  std::optional<std::filesystem::path> manifest_dir;
};

/// Host-wide checkpoint data plane.
///
/// Jobs move Pending -> Dumping -> Versioning -> Done; any non-terminal stage
/// may end in Failed instead. A version becomes visible in list_versions in
/// the same critical section that marks its job Done, and a failed job never
/// leaves a version behind. Terminal listeners run exactly once per job,
/// outside the engine lock.
class Engine {
 public:
  using TerminalListener = std::function<void(const CheckpointJob&)>;
  using RestoreListener = std::function<void(const RestoreReport&)>;
  /// Return true to fail `job` while in `stage`. Runs under the engine lock
  /// and must not call back into the engine.
  using FaultHook = std::function<bool(const CheckpointJob& job, Lifecycle stage)>;

  Engine(Backend& backend, const Clock& clock, EngineConfig config = {});
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  void attach_inspector(Inspector* inspector) { inspector_ = inspector; }
  void add_terminal_listener(TerminalListener listener);
  void add_restore_listener(RestoreListener listener);
  void set_fault_hook(FaultHook hook);

  /// Store of published versions; loaded from `manifest_dir` when it already
  /// holds an index.
  const ManifestStore& store_unsafe() const { return store_; }

  /// Captures the sandbox's initial full state as version 0, the counterpart
  /// for partial checkpoints until a real one exists.
  void register_sandbox(CheckpointTarget& sandbox);
  /// Registers without an initial capture; partial checkpoints fail with
  /// MissingCounterpart until a Full one publishes.
  void register_sandbox_bare(CheckpointTarget& sandbox);
  bool has_sandbox(const SandboxId& id) const;

  JobId submit(const JobRequest& request);
  void promote(JobId job);
  std::optional<JobId> next_job();
  std::vector<ArtifactRecord> execute(JobId job);
  CheckpointManifest publish(JobId job);
  /// Moves a non-terminal job to Failed. No-op on terminal jobs.
  void fail(JobId job, const std::string& reason);

  /// Runs the next queued job to a terminal state on the calling thread.
  /// Returns the job id, or nothing if the queues were empty.
  std::optional<JobId> run_one();

  RestoreReport restore(const SandboxId& sandbox, VersionId version, CheckpointTarget& target);

  std::vector<CheckpointManifest> list_versions(const SandboxId& sandbox) const;
  std::optional<CheckpointManifest> find_version(const SandboxId& sandbox,
                                                 VersionId version) const;
  /// Latest published version, or version 0 when nothing has published.
  std::optional<CheckpointManifest> head(const SandboxId& sandbox) const;

  CheckpointJob job(JobId job) const;
  Lifecycle lifecycle(JobId job) const;
  std::vector<CheckpointJob> jobs() const;
  SchedulerStats stats() const;
  const Scheduler& scheduler_unsafe() const { return scheduler_; }
  std::size_t worker_count() const { return config_.worker_count; }
  SchedulerPolicy policy() const { return config_.policy; }

  /// Real-time worker pool.
  void start_workers();
  void stop_workers();
  /// Blocks until no job is queued or in flight.
  void wait_idle();

 private:
  struct SandboxEntry {
    CheckpointTarget* target = nullptr;
    std::uint64_t epoch = 0;
    // Version new checkpoints pair with; unset means the chain head. Set by a
    // rollback to an older version.
    std::optional<VersionId> base;
  };

  const CheckpointManifest* base_locked(const SandboxId& id) const;
  void register_locked(CheckpointTarget& sandbox);

  CheckpointJob& job_locked(JobId id);
  const CheckpointJob& job_locked(JobId id) const;
  void transition_locked(CheckpointJob& job, Lifecycle to);
  bool fault_locked(const CheckpointJob& job, Lifecycle stage) const;
  // Marks the job Failed under the lock and returns a copy for notification.
  CheckpointJob fail_locked(CheckpointJob& job, const std::string& reason);
  void notify_terminal(const CheckpointJob& job);
  void worker_loop();

  Backend& backend_;
  const Clock& clock_;
  EngineConfig config_;
  Inspector* inspector_ = nullptr;

  mutable std::mutex mu_;
  std::condition_variable work_cv_;
  std::condition_variable idle_cv_;
  Scheduler scheduler_;
  ManifestStore store_;
  std::map<JobId, CheckpointJob> jobs_;
  std::map<SandboxId, SandboxEntry> sandboxes_;
  std::map<std::pair<SandboxId, TurnIndex>, JobId> live_turn_jobs_;
  std::vector<JobId> in_flight_;
  JobId next_job_id_ = 1;
  SchedulerStats stats_;

  std::vector<TerminalListener> terminal_listeners_;
  std::vector<RestoreListener> restore_listeners_;
  FaultHook fault_hook_;

  std::vector<std::thread> workers_;
  bool stopping_ = false;
};

}  // namespace agentcr
