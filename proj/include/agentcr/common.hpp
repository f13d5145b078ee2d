#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace agentcr {

using SandboxId = std::string;
using Seq = std::uint64_t;
using Pid = std::int64_t;
using JobId = std::uint64_t;
using VersionId = std::uint64_t;

// Turn indices are 0-based. Artifacts captured at sandbox registration carry
// kInitialTurn, which sorts before every real turn.
using TurnIndex = std::int64_t;
inline constexpr TurnIndex kInitialTurn = -1;

// Version 0 names the artifacts captured at registration; published versions
// start at 1.
inline constexpr VersionId kInitialVersion = 0;

enum class Errc {
  OutOfOrderSeq,
  UnknownSandbox,
  SeqBeyondIngested,
  InvalidPath,
  BaselineRegression,
  DigestMismatchDuringReplay,
  PreviousGateUnresolved,
  NoMatchingTurn,
  UnknownCommand,
  IndexBeyondLog,
  ModeDisabled,
  DuplicateTurnJob,
  UnknownJob,
  InvalidTransition,
  BackendFailure,
  MissingCounterpart,
  UnknownVersion,
  IoFailure,
  CorruptArtifact,
  SandboxCrashed,
  PathConflict,
  ConfigInvalid,
  TraceParse,
  SpecInvalid,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

enum class CheckpointClass { Skip, FsOnly, ProcOnly, Full };

std::string_view to_string(CheckpointClass c);
CheckpointClass parse_checkpoint_class(std::string_view text);

inline bool captures_fs(CheckpointClass c) {
  return c == CheckpointClass::FsOnly || c == CheckpointClass::Full;
}

inline bool captures_proc(CheckpointClass c) {
  return c == CheckpointClass::ProcOnly || c == CheckpointClass::Full;
}

}  // namespace agentcr
