#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "agentcr/backend.hpp"
#include "agentcr/clock.hpp"
#include "agentcr/inspector.hpp"

namespace agentcr {

struct WriteFile { std::string path; std::string bytes; };
struct CreateFile { std::string path; };
struct DeleteFile { std::string path; };
struct RenameFile { std::string old_path; std::string new_path; };
struct SpawnProc { Pid pid = 0; std::uint64_t footprint = 0; std::string label; };
struct KillProc { Pid pid = 0; };
struct TouchMemory { Pid pid = 0; };
struct Sleep { Seconds duration = 0; };
struct ReadFile { std::string path; };

using ToolAction = std::variant<WriteFile, CreateFile, DeleteFile, RenameFile, SpawnProc,
                                KillProc, TouchMemory, Sleep, ReadFile>;

/// Sum of Sleep durations in an action list.
Seconds tool_duration(std::span<const ToolAction> actions);

/// Deterministic stand-in for a container: a real workspace directory plus a
/// synthetic process registry.
///
/// Every filesystem or registry mutation emits exactly one OsEvent to the sink,
/// synchronously, before the next action runs. Missing parent directories are
/// created as separate mutations. ReadFile and Sleep emit nothing.
class SimSandbox final : public CheckpointTarget {
 public:
  using EventSink = std::function<void(const OsEvent&)>;

  SimSandbox(SandboxId id, std::filesystem::path workspace_root, EventSink sink = {});

  const SandboxId& sandbox_id() const override { return id_; }
  std::filesystem::path workspace_root() const override { return root_; }
  ProcessImage process_image() const override;
  void load_process_image(const ProcessImage& image) override;
  void mark_restored() override;
  void mark_invalid() override;

  void set_sink(EventSink sink);

  /// Applies actions in order. Throws SandboxCrashed if the sandbox is down and
  /// PathConflict when an action does not fit the current state; actions
  /// before the failing one stay applied.
  std::size_t apply(std::span<const ToolAction> actions);
  std::size_t apply(const ToolAction& action) { return apply(std::span(&action, 1)); }

  /// Starts the long-lived agent process (excluded from change tracking).
  void spawn_agent(Pid pid, std::uint64_t footprint);

  /// Loses the registry and marks the workspace invalid.
  void crash();
  bool crashed() const;

  Seq next_seq() const;
  std::string tree_hash() const;
  std::set<std::string> existing_paths() const;
  std::set<Pid> live_pids() const;
  std::optional<Pid> agent_pid() const;

 private:
  std::filesystem::path host(const std::string& sandbox_path) const;
  void emit(EventPayload payload);
  void ensure_parents(const std::string& path);
  void apply_one(const ToolAction& action);

  SandboxId id_;
  std::filesystem::path root_;
  EventSink sink_;
  mutable std::mutex mu_;
  std::map<Pid, ProcessEntry> registry_;
  std::optional<Pid> agent_pid_;
  Seq next_seq_ = 1;
  bool crashed_ = false;
};

}  // namespace agentcr
