#include "agentcr/common.hpp"

namespace agentcr {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::OutOfOrderSeq: return "OutOfOrderSeq";
    case Errc::UnknownSandbox: return "UnknownSandbox";
    case Errc::SeqBeyondIngested: return "SeqBeyondIngested";
    case Errc::InvalidPath: return "InvalidPath";
    case Errc::BaselineRegression: return "BaselineRegression";
    case Errc::DigestMismatchDuringReplay: return "DigestMismatchDuringReplay";
    case Errc::PreviousGateUnresolved: return "PreviousGateUnresolved";
    case Errc::NoMatchingTurn: return "NoMatchingTurn";
    case Errc::UnknownCommand: return "UnknownCommand";
    case Errc::IndexBeyondLog: return "IndexBeyondLog";
    case Errc::ModeDisabled: return "ModeDisabled";
    case Errc::DuplicateTurnJob: return "DuplicateTurnJob";
    case Errc::UnknownJob: return "UnknownJob";
    case Errc::InvalidTransition: return "InvalidTransition";
    case Errc::BackendFailure: return "BackendFailure";
    case Errc::MissingCounterpart: return "MissingCounterpart";
    case Errc::UnknownVersion: return "UnknownVersion";
    case Errc::IoFailure: return "IoFailure";
    case Errc::CorruptArtifact: return "CorruptArtifact";
    case Errc::SandboxCrashed: return "SandboxCrashed";
    case Errc::PathConflict: return "PathConflict";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::TraceParse: return "TraceParse";
    case Errc::SpecInvalid: return "SpecInvalid";
  }
  return "Unknown";
}

std::string_view to_string(CheckpointClass c) {
  switch (c) {
    case CheckpointClass::Skip: return "Skip";
    case CheckpointClass::FsOnly: return "FsOnly";
    case CheckpointClass::ProcOnly: return "ProcOnly";
    case CheckpointClass::Full: return "Full";
  }
  return "Skip";
}

CheckpointClass parse_checkpoint_class(std::string_view text) {
  if (text == "Skip") return CheckpointClass::Skip;
  if (text == "FsOnly") return CheckpointClass::FsOnly;
  if (text == "ProcOnly") return CheckpointClass::ProcOnly;
  if (text == "Full") return CheckpointClass::Full;
  throw Error(Errc::TraceParse, "unknown checkpoint class '" + std::string(text) + "'");
}

}  // namespace agentcr
