#pragma once

#include <atomic>
#include <chrono>

namespace agentcr {

// Time is carried as seconds in a double. Virtual-time runs need exact
// arithmetic on small sums only, and real-time runs measure from process start.
using Seconds = double;

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Seconds now() const = 0;
};

class SteadyClock final : public Clock {
 public:
  SteadyClock() : origin_(std::chrono::steady_clock::now()) {}

  Seconds now() const override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - origin_).count();
  }

 private:
  std::chrono::steady_clock::time_point origin_;
};

/// Steady clock reporting elapsed time divided by `scale`, so that a run
/// slowed or sped up by `scale` reads in model seconds.
class ScaledClock final : public Clock {
 public:
  explicit ScaledClock(double scale) : scale_(scale) {}
  Seconds now() const override { return base_.now() / scale_; }

 private:
  SteadyClock base_;
  double scale_;
};

/// Manually advanced clock driven by the discrete-event core.
class VirtualClock final : public Clock {
 public:
  Seconds now() const override { return now_.load(std::memory_order_acquire); }
  void set(Seconds t) { now_.store(t, std::memory_order_release); }

 private:
  std::atomic<Seconds> now_{0.0};
};

}  // namespace agentcr
