#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agentcr/common.hpp"

namespace agentcr {

enum class ArtifactKind { ProcessState, FilesystemState };

std::string_view to_string(ArtifactKind kind);

struct ProcessEntry {
  Pid pid = 0;
  std::string label;
  std::uint64_t memory_footprint_bytes = 0;
  // Bumped on every memory write; stands in for page contents.
  std::uint64_t memory_version = 0;
  bool dirty = false;
  bool is_agent = false;

  bool operator==(const ProcessEntry&) const = default;
};

/// Serialized process registry of a sandbox, ordered by pid.
struct ProcessImage {
  std::vector<ProcessEntry> entries;

  std::uint64_t total_footprint() const;
  std::string serialize() const;
  static ProcessImage parse(std::string_view text);

  bool operator==(const ProcessImage&) const = default;
};

/// What a backend needs from a sandbox to capture or rebuild it.
class CheckpointTarget {
 public:
  virtual ~CheckpointTarget() = default;
  virtual const SandboxId& sandbox_id() const = 0;
  virtual std::filesystem::path workspace_root() const = 0;
  virtual ProcessImage process_image() const = 0;
  virtual void load_process_image(const ProcessImage& image) = 0;
  // Restore outcome hooks; a failed restore must leave the target marked.
  virtual void mark_restored() {}
  virtual void mark_invalid() {}
};

struct SnapshotResult {
  std::string handle;
  std::uint64_t size_bytes = 0;
};

/// Snapshot/restore operations over one artifact store. Artifacts are
/// immutable once written; restoring a snapshot onto a fresh target
/// reproduces the captured state exactly.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  virtual SnapshotResult snapshot_fs(const CheckpointTarget& sandbox) = 0;
  virtual SnapshotResult snapshot_proc(const CheckpointTarget& sandbox) = 0;
  virtual void restore_fs(const std::string& handle, CheckpointTarget& target) = 0;
  virtual void restore_proc(const std::string& handle, CheckpointTarget& target) = 0;
  virtual std::uint64_t artifact_size(const std::string& handle) const = 0;
};

}  // namespace agentcr
