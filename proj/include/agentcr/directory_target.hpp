#pragma once

#include <filesystem>
#include <optional>

#include "agentcr/backend.hpp"

namespace agentcr {

/// Checkpoint target over a plain directory. The process registry lives in
/// memory and, when `registry_file` is set, is written there on load.
class DirectoryTarget final : public CheckpointTarget {
 public:
  DirectoryTarget(SandboxId id, std::filesystem::path root,
                  std::optional<std::filesystem::path> registry_file = std::nullopt);

  const SandboxId& sandbox_id() const override { return id_; }
  std::filesystem::path workspace_root() const override { return root_; }
  ProcessImage process_image() const override { return image_; }
  void load_process_image(const ProcessImage& image) override;
  void mark_restored() override { valid_ = true; }
  void mark_invalid() override { valid_ = false; }

  bool valid() const { return valid_; }

 private:
  SandboxId id_;
  std::filesystem::path root_;
  std::optional<std::filesystem::path> registry_file_;
  ProcessImage image_;
  bool valid_ = true;
};

}  // namespace agentcr
