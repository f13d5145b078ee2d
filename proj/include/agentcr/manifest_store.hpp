#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "agentcr/backend.hpp"
#include "agentcr/clock.hpp"

namespace agentcr {

struct ArtifactRecord {
  std::string artifact_id;  // "<sandbox>/P<turn>" or "<sandbox>/F<turn>"
  ArtifactKind kind = ArtifactKind::FilesystemState;
  SandboxId sandbox_id;
  TurnIndex turn_index = kInitialTurn;
  std::string backend_handle;
  std::uint64_t logical_size_bytes = 0;
  Seconds created_at = 0;
};

/// A recovery point: one process artifact paired with one filesystem
/// artifact. `head_turn` is the turn whose checkpoint produced the version;
/// the artifact it did not capture is carried over unchanged from the parent.
struct CheckpointManifest {
  VersionId version_id = 0;
  ArtifactRecord proc_artifact;
  ArtifactRecord fs_artifact;
  TurnIndex proc_turn = kInitialTurn;
  TurnIndex fs_turn = kInitialTurn;
  TurnIndex head_turn = kInitialTurn;
  VersionId parent_version = 0;
};

/// Per-sandbox version chains, optionally mirrored to disk.
///
/// On-disk layout, one directory per sandbox:
///   <root>/sandboxes/<escaped id>/versions.idx
/// The index starts with a header line, then one line per version:
///   version_id TAB proc_handle TAB fs_handle TAB proc_turn TAB fs_turn
///   TAB head_turn TAB parent
/// Version 0 records the artifacts captured at registration. Each update
/// rewrites the index through a temp file renamed over the old one, so a
/// reader sees either the old or the new chain, never a torn one.
///
/// Not synchronized; the engine serializes access.
class ManifestStore {
 public:
  ManifestStore() = default;
  explicit ManifestStore(std::filesystem::path root);

  void set_initial(const SandboxId& id, const CheckpointManifest& initial);
  void append(const SandboxId& id, const CheckpointManifest& manifest);

  bool has_sandbox(const SandboxId& id) const;
  const CheckpointManifest* initial(const SandboxId& id) const;
  /// Published versions (excluding version 0), oldest first.
  const std::vector<CheckpointManifest>& versions(const SandboxId& id) const;
  const CheckpointManifest* find(const SandboxId& id, VersionId version) const;
  /// Latest published version, or the initial record when none exists.
  const CheckpointManifest* head(const SandboxId& id) const;

  std::vector<SandboxId> sandboxes() const;
  const std::optional<std::filesystem::path>& root() const { return root_; }

  /// Reads every index under `root`.
  static ManifestStore load(const std::filesystem::path& root);

 private:
  struct Chain {
    std::optional<CheckpointManifest> initial;
    std::vector<CheckpointManifest> versions;
  };

  void persist(const SandboxId& id, const Chain& chain) const;

  std::optional<std::filesystem::path> root_;
  std::map<SandboxId, Chain> chains_;
};

std::string escape_sandbox_dir(const SandboxId& id);
SandboxId unescape_sandbox_dir(const std::string& name);

}  // namespace agentcr
