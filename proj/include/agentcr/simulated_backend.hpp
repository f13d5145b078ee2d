#pragma once

#include <memory>

#include "agentcr/backend.hpp"
#include "agentcr/latency_model.hpp"

namespace agentcr {

/// Stores artifacts through another backend and charges modeled latency.
///
/// With `time_scale` > 0 each operation sleeps for its modeled cost times the
/// scale, and process dumps draw their bytes from a shared token bucket, so
/// concurrent callers contend in real time. With `time_scale` == 0 operations
/// return immediately and the caller accounts time through a
/// BandwidthSimulator (virtual-time replay).
class SimulatedBackend final : public Backend {
 public:
  SimulatedBackend(Backend& storage, LatencyModel model, double time_scale = 0.0);

  std::string name() const override { return "simulated"; }
  SnapshotResult snapshot_fs(const CheckpointTarget& sandbox) override;
  SnapshotResult snapshot_proc(const CheckpointTarget& sandbox) override;
  void restore_fs(const std::string& handle, CheckpointTarget& target) override;
  void restore_proc(const std::string& handle, CheckpointTarget& target) override;
  std::uint64_t artifact_size(const std::string& handle) const override;

  const LatencyModel& model() const { return model_; }
  double time_scale() const { return time_scale_; }

 private:
  void charge(OpKind kind, std::uint64_t size_bytes);

  Backend& storage_;
  LatencyModel model_;
  double time_scale_;
  std::unique_ptr<TokenBucket> bucket_;
};

}  // namespace agentcr
