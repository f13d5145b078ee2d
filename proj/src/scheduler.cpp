#include "agentcr/scheduler.hpp"

#include <algorithm>
#include <string>

namespace agentcr {

std::string_view to_string(SchedulerPolicy policy) {
  return policy == SchedulerPolicy::Reactive ? "reactive" : "fifo";
}

SchedulerPolicy parse_scheduler_policy(std::string_view text) {
  if (text == "reactive") return SchedulerPolicy::Reactive;
  if (text == "fifo") return SchedulerPolicy::Fifo;
  throw Error(Errc::ConfigInvalid, "unknown scheduler policy '" + std::string(text) + "'");
}

void Scheduler::enqueue(JobId job) { normal_.push_back(job); }

bool Scheduler::promote(JobId job) {
  if (policy_ == SchedulerPolicy::Fifo) return false;
  auto it = std::find(normal_.begin(), normal_.end(), job);
  if (it == normal_.end()) return false;
  normal_.erase(it);
  high_.push_back(job);
  return true;
}

std::optional<JobId> Scheduler::pop() {
  auto& q = high_.empty() ? normal_ : high_;
  if (q.empty()) return std::nullopt;
  JobId job = q.front();
  q.pop_front();
  return job;
}

bool Scheduler::remove(JobId job) {
  for (auto* q : {&normal_, &high_}) {
    auto it = std::find(q->begin(), q->end(), job);
    if (it != q->end()) {
      q->erase(it);
      return true;
    }
  }
  return false;
}

bool Scheduler::queued(JobId job) const {
  return std::find(normal_.begin(), normal_.end(), job) != normal_.end() || in_high(job);
}

bool Scheduler::in_high(JobId job) const {
  return std::find(high_.begin(), high_.end(), job) != high_.end();
}

}  // namespace agentcr
