#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "agentcr/backend.hpp"

namespace agentcr {

struct TreeEntry {
  std::string path;  // sandbox-absolute, e.g. "/src/main.c"
  std::uint32_t mode = 0;  // st_mode, including file-type bits
  std::string content_hash;  // "-" for directories

  bool operator==(const TreeEntry&) const = default;
};

/// Canonical tree manifest: one `path TAB mode(octal) TAB hash` line per
/// entry, sorted by path. The tree hash is the hash of this text.
std::string render_tree_manifest(const std::vector<TreeEntry>& entries);
std::vector<TreeEntry> parse_tree_manifest(std::string_view text);

/// Content-addressed directory-snapshot store.
///
/// Layout under the store root:
///   STORE                       key=value metadata (hash function, format)
///   blobs/<hash[0:2]>/<hash>    file contents and symlink targets
///   trees/<tree-hash>           tree manifests
///   procs/<image-hash>          serialized process images
///
/// Blobs are shared across snapshots, so an unchanged file costs only its
/// manifest line. Every write goes to a temp file renamed into place, which
/// makes duplicate concurrent writes of the same blob harmless.
class PortableBackend final : public Backend {
 public:
  explicit PortableBackend(std::filesystem::path root);

  std::string name() const override { return "portable"; }
  SnapshotResult snapshot_fs(const CheckpointTarget& sandbox) override;
  SnapshotResult snapshot_proc(const CheckpointTarget& sandbox) override;
  void restore_fs(const std::string& handle, CheckpointTarget& target) override;
  void restore_proc(const std::string& handle, CheckpointTarget& target) override;
  std::uint64_t artifact_size(const std::string& handle) const override;

  /// Captures a directory without going through a sandbox.
  SnapshotResult snapshot_dir(const std::filesystem::path& dir);
  void restore_dir(const std::string& tree_hash, const std::filesystem::path& dir);

  std::vector<TreeEntry> tree(const std::string& tree_hash) const;
  ProcessImage process_image(const std::string& handle) const;

  std::size_t blob_count() const;
  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path blob_path(const std::string& hash) const;

 private:
  std::string put_blob(std::string_view bytes);
  std::string read_blob(const std::string& hash) const;
  void write_atomic(const std::filesystem::path& dest, std::string_view bytes);

  std::filesystem::path root_;
  std::atomic<std::uint64_t> temp_counter_{0};
};

/// Scans a directory into sorted tree entries, hashing file contents.
/// Does not touch any store.
std::vector<TreeEntry> scan_tree(const std::filesystem::path& dir);

}  // namespace agentcr
