#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "agentcr/common.hpp"

namespace agentcr {

struct FsCreate { std::string path; };
struct FsDelete { std::string path; };
struct FsRename { std::string old_path; std::string new_path; };
struct FsWrite { std::string path; };
struct ProcSpawn { Pid pid = 0; bool is_agent = false; };
struct ProcExit { Pid pid = 0; };
struct ProcDirty { Pid pid = 0; };

using EventPayload =
    std::variant<FsCreate, FsDelete, FsRename, FsWrite, ProcSpawn, ProcExit, ProcDirty>;

/// One filesystem or process effect observed inside a sandbox.
struct OsEvent {
  SandboxId sandbox_id;
  Seq seq = 0;
  EventPayload payload;
};

/// Normalizes an absolute sandbox path: collapses repeated separators and
/// `.` components and drops a trailing slash. Throws InvalidPath for relative
/// paths and for any `..` component.
std::string normalize_path(std::string_view path);

struct Baseline {
  SandboxId sandbox_id;
  Seq baseline_seq = 0;
  std::set<std::string> preexisting_paths;
  std::set<Pid> preexisting_pids;
  std::set<Pid> excluded_pids;
};

enum class PathChange { Created, Deleted, Modified };
enum class ProcChange { Spawned, Exited, DirtiedMemory };

std::string_view to_string(PathChange c);
std::string_view to_string(ProcChange c);

struct NetChangeReport {
  SandboxId sandbox_id;
  Seq as_of_seq = 0;
  bool fs_changed = false;
  bool proc_changed = false;
  std::map<std::string, PathChange> changed_paths;
  std::map<Pid, ProcChange> proc_delta;

  bool operator==(const NetChangeReport&) const = default;
};

/// Decision table from the two change dimensions to checkpoint granularity.
CheckpointClass classify(const NetChangeReport& report);

/// Existence snapshot produced by folding the interval log onto the baseline.
struct ObservedState {
  std::set<std::string> paths;
  std::set<Pid> pids;
};

/// Tracks per-sandbox OS effects and reports the net recovery-relevant change
/// since the last checkpoint baseline.
///
/// Changes are computed against baseline existence: a file created and removed
/// within one interval, or a process spawned and reaped within it, leaves no
/// trace in the report. Operations on different sandboxes may run
/// concurrently; operations on one sandbox are serialized.
class Inspector {
 public:
  Inspector() = default;
  Inspector(const Inspector&) = delete;
  Inspector& operator=(const Inspector&) = delete;

  void register_sandbox(const SandboxId& id, std::set<std::string> initial_paths,
                        std::set<Pid> initial_pids, std::set<Pid> agent_pids = {});
  bool has_sandbox(const SandboxId& id) const;

  /// Buffers one event. Rejects stale or duplicate sequence numbers.
  void ingest_event(const OsEvent& event);

  NetChangeReport compute_net_change(const SandboxId& id, Seq as_of_seq) const;
  NetChangeReport compute_net_change(const SandboxId& id) const;

  /// Path/pid existence after folding events through `as_of_seq`.
  ObservedState observed_state(const SandboxId& id, Seq as_of_seq) const;

  /// Moves the baseline to `up_to_seq`, discarding earlier interval entries.
  void reset_baseline(const SandboxId& id, Seq up_to_seq, std::set<std::string> new_paths,
                      std::set<Pid> new_pids);
  /// Same, with the new existence sets derived from the interval log.
  void reset_baseline(const SandboxId& id, Seq up_to_seq);

  void exclude_pid(const SandboxId& id, Pid pid);

  Seq latest_seq(const SandboxId& id) const;
  Baseline baseline(const SandboxId& id) const;
  std::size_t interval_length(const SandboxId& id) const;

 private:
  struct Track {
    mutable std::mutex mu;
    Baseline baseline;
    Seq last_seq = 0;
    std::vector<OsEvent> interval;
    std::set<Pid> observed_pids;
  };

  Track& track(const SandboxId& id) const;

  mutable std::shared_mutex map_mu_;
  std::unordered_map<SandboxId, std::unique_ptr<Track>> tracks_;
};

}  // namespace agentcr
