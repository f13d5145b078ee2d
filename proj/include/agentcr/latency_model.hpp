#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "agentcr/clock.hpp"

namespace agentcr {

enum class OpKind { FsSnapshot, ProcDump, FsRestore, ProcRestore };

/// Calibration constants for simulated checkpoint cost.
///
/// Filesystem snapshots take a fixed time regardless of concurrency. Process
/// dumps pay a fixed setup cost and then move the dump's bytes through the
/// host bandwidth, which all concurrent dumps share. The default bandwidth
/// reproduces a 1.3 s dump time for 16 concurrent 128 MB dumps.
struct LatencyModel {
  Seconds fs_snapshot_base = 0.022;
  Seconds proc_dump_base = 0.1;
  double host_bandwidth = 1.7e9;  // bytes per second
  double restore_multiplier = 1.0;

  Seconds fixed_cost(OpKind kind) const;
  std::uint64_t transfer_bytes(OpKind kind, std::uint64_t size_bytes) const;
  /// Latency of one operation running alone.
  Seconds isolated_latency(OpKind kind, std::uint64_t size_bytes) const;
};

/// Discrete-event view of in-flight checkpoint operations.
///
/// Each operation spends its fixed cost, then its bytes drain from the shared
/// bandwidth; active transfers split the bandwidth evenly, so n equal dumps
/// started together each take n times the single-dump transfer time.
/// Deterministic for a given sequence of start/advance calls.
class BandwidthSimulator {
 public:
  using OpId = std::uint64_t;

  explicit BandwidthSimulator(LatencyModel model = {});

  const LatencyModel& model() const { return model_; }

  OpId start(OpKind kind, std::uint64_t size_bytes, Seconds now);

  /// Completion time of `op` if no further operations start.
  Seconds predicted_completion(OpId op) const;

  /// Starts an operation and returns its completion time assuming no further
  /// arrivals. The operation stays active and contends with later ones.
  Seconds simulate_latency(OpKind kind, std::uint64_t size_bytes, Seconds now);

  /// Earliest upcoming completion, if any operation is active.
  std::optional<std::pair<Seconds, OpId>> next_completion() const;

  /// Moves time forward to `t`, returning operations that finished at or
  /// before `t` (with their finish times), in completion order.
  std::vector<std::pair<Seconds, OpId>> advance_to(Seconds t);

  std::size_t active_count() const { return ops_.size(); }
  std::size_t transferring_count() const;
  Seconds now() const { return now_; }
  void record_grants(bool on) { record_grants_ = on; }

  /// Bytes granted within [from, to), for conservation checks. Requires grant
  /// recording, which is on by default.
  double bytes_granted(Seconds from, Seconds to) const;

 private:
  struct Op {
    Seconds fixed_until = 0;
    double remaining_bytes = 0;
  };
  struct Grant {
    Seconds from;
    Seconds to;
    double bytes;
  };

  Seconds next_event_time() const;
  void drain(Seconds dt);
  BandwidthSimulator scratch() const;

  LatencyModel model_;
  Seconds now_ = 0;
  OpId next_id_ = 1;
  std::map<OpId, Op> ops_;
  std::vector<Grant> grants_;
  bool record_grants_ = true;
};

/// Real-time token bucket. Grants are serialized: each request waits until
/// the bucket has refilled enough tokens, then consumes them.
class TokenBucket {
 public:
  TokenBucket(double rate_per_second, double burst);

  /// Blocks until `amount` tokens have been granted. Large requests are split
  /// into chunks no larger than the burst size.
  void acquire(double amount);

  double rate() const { return rate_; }

 private:
  std::mutex mu_;
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

}  // namespace agentcr
