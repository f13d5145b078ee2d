#include "agentcr/directory_target.hpp"

#include <fstream>

namespace agentcr {

DirectoryTarget::DirectoryTarget(SandboxId id, std::filesystem::path root,
                                 std::optional<std::filesystem::path> registry_file)
    : id_(std::move(id)), root_(std::move(root)), registry_file_(std::move(registry_file)) {
  std::filesystem::create_directories(root_);
}

void DirectoryTarget::load_process_image(const ProcessImage& image) {
  image_ = image;
  if (!registry_file_) return;
  std::ofstream out(*registry_file_, std::ios::trunc | std::ios::binary);
  out << image.serialize();
  if (!out) throw Error(Errc::IoFailure, "cannot write " + registry_file_->string());
}

}  // namespace agentcr
