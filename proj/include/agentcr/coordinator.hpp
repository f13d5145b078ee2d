#pragma once

#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "agentcr/clock.hpp"
#include "agentcr/engine.hpp"
#include "agentcr/inspector.hpp"

namespace agentcr {

enum class AgentMode { InSandbox, WithSandbox };

std::string_view to_string(AgentMode mode);
AgentMode parse_agent_mode(std::string_view text);

/// Outbound agent request as seen by the proxy. Bodies are opaque bytes.
struct LlmRequest {
  std::string method = "POST";
  std::string path = "/";
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
};

/// Headers left out of the request digest (case-insensitive).
bool is_volatile_header(std::string_view name);

/// SHA-256 over method, path, sorted non-volatile headers and body.
std::string request_digest(const LlmRequest& request);

struct TurnRecord {
  SandboxId sandbox_id;
  TurnIndex turn_index = 0;
  std::string request_digest;
  std::string request_body;
  std::optional<std::string> response_body;
  Seq completed_at_seq = 0;
};

enum class CommandStatus { Outstanding, Completed };

struct InFlightCommand {
  SandboxId sandbox_id;
  std::uint64_t command_id = 0;
  std::string payload;
  Seconds issued_at = 0;
  CommandStatus status = CommandStatus::Outstanding;
};

/// Append-only JSON-lines log of turn records and in-flight commands. A turn
/// is written once when its request is intercepted and once more when its
/// response arrives; a command once when issued and once when completed. On
/// load the later line fills in the earlier one.
class ConversationLog {
 public:
  ConversationLog() = default;
  explicit ConversationLog(std::filesystem::path path);

  void append_request(const TurnRecord& record);
  void set_response(const SandboxId& id, TurnIndex turn, const std::string& body);

  void append_command(const InFlightCommand& command);
  void complete_command(std::uint64_t command_id);

  const std::vector<TurnRecord>& records(const SandboxId& id) const;
  const std::map<std::uint64_t, InFlightCommand>& commands() const { return commands_; }
  std::size_t length(const SandboxId& id) const { return records(id).size(); }

  const std::optional<std::filesystem::path>& path() const { return path_; }

  static ConversationLog load(const std::filesystem::path& path);

 private:
  void write_line(const std::string& line);

  std::optional<std::filesystem::path> path_;
  std::unique_ptr<std::ofstream> out_;
  std::map<SandboxId, std::vector<TurnRecord>> records_;
  std::map<std::uint64_t, InFlightCommand> commands_;
};

struct ForwardDecision {
  enum class Kind { ForwardToLlm, SyntheticResponse };
  Kind kind = Kind::ForwardToLlm;
  TurnIndex turn_index = 0;
  std::string body;  // synthetic response body
  CheckpointClass cls = CheckpointClass::Skip;
  std::optional<JobId> job;
};

struct ReleaseDecision {
  enum class Kind { ReleaseNow, HeldUntil };
  Kind kind = Kind::ReleaseNow;
  TurnIndex turn_index = 0;
  std::optional<JobId> job;
};

struct GateState {
  SandboxId sandbox_id;
  std::optional<JobId> outstanding_job;
  std::optional<std::string> buffered_response;
  Seconds exposed_delay_accumulator = 0;
};

/// Per-turn outcome, delivered when the turn's response is released.
struct TurnRelease {
  SandboxId sandbox_id;
  TurnIndex turn_index = 0;
  std::string body;
  Seconds response_arrival = 0;
  Seconds released_at = 0;
  Seconds exposed_delay = 0;
  std::optional<JobId> job;
  bool job_failed = false;
};

struct CoordinatorConfig {
  AgentMode default_mode = AgentMode::InSandbox;
  std::optional<std::filesystem::path> log_path;
};

/// Sits on the agent's LLM request path.
///
/// An outbound request closes the current turn: the coordinator asks the
/// inspector what changed and submits a checkpoint job unless the turn is
/// stateless, then lets the request through without waiting. The returning
/// response is held until that job is terminal; if it is still queued the job
/// is promoted. After a restore, requests that repeat logged history receive
/// the logged responses without reaching the LLM.
///
/// Sessions on different sandboxes run concurrently; calls for one sandbox
/// are serialized by the caller's turn structure and by a per-sandbox lock.
class Coordinator {
 public:
  using ReleaseListener = std::function<void(const TurnRelease&)>;

  Coordinator(Inspector& inspector, Engine& engine, const Clock& clock,
              CoordinatorConfig config = {});
  Coordinator(const Coordinator&) = delete;
  Coordinator& operator=(const Coordinator&) = delete;

  void register_sandbox(const SandboxId& id, std::optional<AgentMode> mode = std::nullopt);
  bool has_sandbox(const SandboxId& id) const;
  AgentMode mode(const SandboxId& id) const;

  /// Called for every release, including immediate ones, outside all locks.
  void set_release_listener(ReleaseListener listener);

  ForwardDecision on_outbound_request(const SandboxId& id, const LlmRequest& request);
  ReleaseDecision on_llm_response(const SandboxId& id, const std::string& body);

  /// Blocks until the current turn's response is released and returns it.
  TurnRelease wait_release(const SandboxId& id);

  /// Serves logged responses again starting at turn `restored_turn_index + 1`.
  void begin_fast_forward(const SandboxId& id, TurnIndex restored_turn_index);
  bool in_fast_forward(const SandboxId& id) const;

  std::uint64_t record_command(const SandboxId& id, const std::string& command);
  void complete_command(std::uint64_t command_id);
  std::vector<std::uint64_t> reissue_outstanding(const SandboxId& id);
  InFlightCommand command(std::uint64_t command_id) const;

  GateState gate(const SandboxId& id) const;
  std::vector<TurnRecord> turns(const SandboxId& id) const;
  std::size_t replay_cursor(const SandboxId& id) const;
  std::vector<Seconds> exposed_delays(const SandboxId& id) const;
  std::size_t synthetic_served(const SandboxId& id) const;
  std::size_t forwarded(const SandboxId& id) const;

 private:
  enum class Phase { Idle, AwaitingResponse, Held, Released };

  struct Session {
    mutable std::mutex mu;
    std::condition_variable cv;
    AgentMode mode = AgentMode::InSandbox;
    Phase phase = Phase::Idle;
    TurnIndex current_turn = -1;
    std::size_t replay_cursor = 0;
    bool fast_forward = false;
    GateState gate;
    Seconds response_arrival = 0;
    std::optional<TurnRelease> release;
    std::vector<Seconds> exposed;
    std::size_t synthetic = 0;
    std::size_t forwarded = 0;
  };

  Session& session(const SandboxId& id) const;
  void on_job_terminal(const CheckpointJob& job);
  void on_restore(const RestoreReport& report);
  // Builds the release for the held turn; caller holds the session lock.
  TurnRelease release_locked(Session& s, const SandboxId& id, bool job_failed);
  void deliver(const TurnRelease& release);

  Inspector& inspector_;
  Engine& engine_;
  const Clock& clock_;
  CoordinatorConfig config_;

  mutable std::mutex map_mu_;
  std::map<SandboxId, std::unique_ptr<Session>> sessions_;
  mutable std::mutex log_mu_;
  ConversationLog log_;
  ReleaseListener release_listener_;
  std::uint64_t next_command_id_ = 1;
};

}  // namespace agentcr
