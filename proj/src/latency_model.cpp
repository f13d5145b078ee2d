#include "agentcr/latency_model.hpp"

#include <algorithm>
#include <limits>
#include <thread>

namespace agentcr {

namespace {
// Transfers within this many bytes of done count as finished.
constexpr double kByteEpsilon = 1e-3;
}  // namespace

Seconds LatencyModel::fixed_cost(OpKind kind) const {
  switch (kind) {
    case OpKind::FsSnapshot: return fs_snapshot_base;
    case OpKind::ProcDump: return proc_dump_base;
    case OpKind::FsRestore: return fs_snapshot_base * restore_multiplier;
    case OpKind::ProcRestore: return proc_dump_base * restore_multiplier;
  }
  return 0;
}

std::uint64_t LatencyModel::transfer_bytes(OpKind kind, std::uint64_t size_bytes) const {
  switch (kind) {
    case OpKind::FsSnapshot:
    case OpKind::FsRestore: return 0;
    case OpKind::ProcDump: return size_bytes;
    case OpKind::ProcRestore:
      return static_cast<std::uint64_t>(static_cast<double>(size_bytes) * restore_multiplier);
  }
  return 0;
}

Seconds LatencyModel::isolated_latency(OpKind kind, std::uint64_t size_bytes) const {
  return fixed_cost(kind) + static_cast<double>(transfer_bytes(kind, size_bytes)) / host_bandwidth;
}

BandwidthSimulator::BandwidthSimulator(LatencyModel model) : model_(model) {}

BandwidthSimulator::OpId BandwidthSimulator::start(OpKind kind, std::uint64_t size_bytes,
                                                   Seconds now) {
  if (now > now_) advance_to(now);
  OpId id = next_id_++;
  ops_[id] = Op{now_ + model_.fixed_cost(kind),
                static_cast<double>(model_.transfer_bytes(kind, size_bytes))};
  return id;
}

std::size_t BandwidthSimulator::transferring_count() const {
  return static_cast<std::size_t>(std::count_if(ops_.begin(), ops_.end(), [&](const auto& kv) {
    return kv.second.fixed_until <= now_;
  }));
}

Seconds BandwidthSimulator::next_event_time() const {
  Seconds next = std::numeric_limits<Seconds>::infinity();
  std::size_t n = transferring_count();
  for (const auto& [id, op] : ops_) {
    if (op.fixed_until > now_) {
      next = std::min(next, op.fixed_until);
    } else {
      next = std::min(next, now_ + op.remaining_bytes * static_cast<double>(n) /
                                       model_.host_bandwidth);
    }
  }
  return next;
}

void BandwidthSimulator::drain(Seconds dt) {
  if (dt <= 0) return;
  std::size_t n = transferring_count();
  if (n == 0) return;
  double share = model_.host_bandwidth * dt / static_cast<double>(n);
  double granted = 0;
  for (auto& [id, op] : ops_) {
    if (op.fixed_until > now_) continue;
    double take = std::min(share, op.remaining_bytes);
    op.remaining_bytes -= take;
    granted += take;
  }
  if (granted > 0 && record_grants_) grants_.push_back({now_, now_ + dt, granted});
}

std::vector<std::pair<Seconds, BandwidthSimulator::OpId>> BandwidthSimulator::advance_to(
    Seconds t) {
  std::vector<std::pair<Seconds, OpId>> done;
  while (true) {
    Seconds next = next_event_time();
    if (next > t) break;
    drain(next - now_);
    now_ = next;
    double per_byte = static_cast<double>(std::max<std::size_t>(transferring_count(), 1)) /
                      model_.host_bandwidth;
    for (auto it = ops_.begin(); it != ops_.end();) {
      const Op& op = it->second;
      // The second test catches residues too small to move the clock.
      bool finished = op.fixed_until <= now_ && (op.remaining_bytes <= kByteEpsilon ||
                                                 now_ + op.remaining_bytes * per_byte <= now_);
      if (finished) {
        done.emplace_back(now_, it->first);
        it = ops_.erase(it);
      } else {
        ++it;
      }
    }
  }
  if (t > now_) {
    drain(t - now_);
    now_ = t;
  }
  return done;
}

BandwidthSimulator BandwidthSimulator::scratch() const {
  BandwidthSimulator s(model_);
  s.now_ = now_;
  s.next_id_ = next_id_;
  s.ops_ = ops_;
  s.record_grants_ = false;
  return s;
}

std::optional<std::pair<Seconds, BandwidthSimulator::OpId>> BandwidthSimulator::next_completion()
    const {
  if (ops_.empty()) return std::nullopt;
  BandwidthSimulator copy = scratch();
  while (!copy.ops_.empty()) {
    Seconds next = copy.next_event_time();
    auto done = copy.advance_to(next);
    if (!done.empty()) return done.front();
  }
  return std::nullopt;
}

Seconds BandwidthSimulator::predicted_completion(OpId op) const {
  BandwidthSimulator copy = scratch();
  while (copy.ops_.contains(op)) {
    for (const auto& [t, id] : copy.advance_to(copy.next_event_time())) {
      if (id == op) return t;
    }
  }
  return now_;
}

Seconds BandwidthSimulator::simulate_latency(OpKind kind, std::uint64_t size_bytes,
                                             Seconds now) {
  OpId id = start(kind, size_bytes, now);
  return predicted_completion(id);
}

double BandwidthSimulator::bytes_granted(Seconds from, Seconds to) const {
  double total = 0;
  for (const auto& g : grants_) {
    Seconds lo = std::max(from, g.from);
    Seconds hi = std::min(to, g.to);
    if (hi <= lo) continue;
    total += g.bytes * (hi - lo) / (g.to - g.from);
  }
  return total;
}

TokenBucket::TokenBucket(double rate_per_second, double burst)
    : rate_(rate_per_second), burst_(burst), tokens_(0), last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire(double amount) {
  while (amount > 0) {
    double chunk = std::min(amount, burst_);
    std::unique_lock lock(mu_);
    while (true) {
      auto now = std::chrono::steady_clock::now();
      tokens_ = std::min(burst_,
                         tokens_ + rate_ * std::chrono::duration<double>(now - last_).count());
      last_ = now;
      if (tokens_ >= chunk) break;
      auto wait = std::chrono::duration<double>((chunk - tokens_) / rate_);
      std::this_thread::sleep_for(wait);
    }
    tokens_ -= chunk;
    amount -= chunk;
  }
}

}  // namespace agentcr
