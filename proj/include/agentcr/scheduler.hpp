#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <string_view>

#include "agentcr/common.hpp"

namespace agentcr {

enum class SchedulerPolicy { Reactive, Fifo };

std::string_view to_string(SchedulerPolicy policy);
SchedulerPolicy parse_scheduler_policy(std::string_view text);

/// Two FIFO queues. New jobs join the normal queue; a promoted job moves to
/// the tail of the high-priority queue, and workers always drain that queue
/// first. Under the Fifo policy promotion leaves the job where it is, giving
/// plain arrival-order service.
///
/// Not synchronized; the engine serializes access.
class Scheduler {
 public:
  explicit Scheduler(SchedulerPolicy policy = SchedulerPolicy::Reactive) : policy_(policy) {}

  SchedulerPolicy policy() const { return policy_; }

  void enqueue(JobId job);
  /// Returns true if the job moved queues.
  bool promote(JobId job);
  std::optional<JobId> pop();
  bool remove(JobId job);

  bool queued(JobId job) const;
  bool in_high(JobId job) const;
  std::size_t normal_size() const { return normal_.size(); }
  std::size_t high_size() const { return high_.size(); }
  const std::deque<JobId>& normal_queue() const { return normal_; }
  const std::deque<JobId>& high_queue() const { return high_; }

 private:
  SchedulerPolicy policy_;
  std::deque<JobId> normal_;
  std::deque<JobId> high_;
};

}  // namespace agentcr
