#include "agentcr/simulated_backend.hpp"

#include <thread>

namespace agentcr {

namespace {
constexpr double kBucketChunkBytes = 4.0 * 1024 * 1024;
}

SimulatedBackend::SimulatedBackend(Backend& storage, LatencyModel model, double time_scale)
    : storage_(storage), model_(model), time_scale_(time_scale) {
  if (time_scale_ > 0) {
    bucket_ = std::make_unique<TokenBucket>(model_.host_bandwidth / time_scale_,
                                            kBucketChunkBytes);
  }
}

void SimulatedBackend::charge(OpKind kind, std::uint64_t size_bytes) {
  if (time_scale_ <= 0) return;
  std::this_thread::sleep_for(std::chrono::duration<double>(model_.fixed_cost(kind) * time_scale_));
  auto bytes = model_.transfer_bytes(kind, size_bytes);
  if (bytes > 0) bucket_->acquire(static_cast<double>(bytes));
}

SnapshotResult SimulatedBackend::snapshot_fs(const CheckpointTarget& sandbox) {
  auto result = storage_.snapshot_fs(sandbox);
  charge(OpKind::FsSnapshot, result.size_bytes);
  return result;
}

SnapshotResult SimulatedBackend::snapshot_proc(const CheckpointTarget& sandbox) {
  auto result = storage_.snapshot_proc(sandbox);
  charge(OpKind::ProcDump, result.size_bytes);
  return result;
}

void SimulatedBackend::restore_fs(const std::string& handle, CheckpointTarget& target) {
  charge(OpKind::FsRestore, 0);
  storage_.restore_fs(handle, target);
}

void SimulatedBackend::restore_proc(const std::string& handle, CheckpointTarget& target) {
  charge(OpKind::ProcRestore, storage_.artifact_size(handle));
  storage_.restore_proc(handle, target);
}

std::uint64_t SimulatedBackend::artifact_size(const std::string& handle) const {
  return storage_.artifact_size(handle);
}

}  // namespace agentcr
