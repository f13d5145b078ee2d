#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "agentcr/sandbox.hpp"

namespace agentcr {

struct TraceTurn {
  double llm_wait_ms = 0;
  std::vector<ToolAction> actions;
  std::optional<CheckpointClass> expected;
};

struct TraceTask {
  std::size_t task = 0;
  // Footprint of the agent process when it runs inside the sandbox.
  std::uint64_t agent_footprint = 0;
  // Applied before the sandbox is registered; not part of any turn.
  std::vector<ToolAction> setup;
  std::vector<TraceTurn> turns;
};

struct Trace {
  std::string name;
  std::vector<TraceTask> tasks;

  std::size_t turn_count() const;
};

// Line-delimited JSON. The first line is a header
//   {"format":"agentcr-trace","version":1,"name":...}
// followed by one {"kind":"task",...} line per task and one
// {"kind":"turn",...} line per turn, in task then turn order. Durations are
// milliseconds. Actions are objects keyed by "op":
//   write{path,bytes} create{path} delete{path} rename{from,to}
//   spawn{pid,footprint,label} kill{pid} touch{pid} sleep{ms} read{path}
inline constexpr int kTraceFormatVersion = 1;

void write_trace(std::ostream& out, const Trace& trace);
/// Parses and validates a trace; throws TraceParse on malformed input or on
/// an annotation that disagrees with the state model.
Trace read_trace(std::istream& in);
Trace load_trace(const std::string& path);
void save_trace(const std::string& path, const Trace& trace);

/// Symbolic sandbox used to validate annotations: path existence with a
/// content generation per path, and live pids with a memory generation.
/// Mirrors SimSandbox's action semantics, including implicit parent
/// directories.
class StateModel {
 public:
  struct Snapshot {
    std::map<std::string, std::uint64_t> paths;  // path -> content generation
    std::map<Pid, std::uint64_t> pids;           // pid -> memory generation
  };

  void apply(const ToolAction& action);
  const Snapshot& state() const { return state_; }
  void exclude(Pid pid) { excluded_.insert(pid); }

  /// Class of the change between two snapshots.
  CheckpointClass diff_class(const Snapshot& before) const;

 private:
  void ensure_parents(const std::string& path);
  std::uint64_t next_gen() { return ++gen_; }

  Snapshot state_;
  std::set<std::string> dirs_;
  std::set<Pid> excluded_;
  std::uint64_t gen_ = 0;
};

/// Class of each turn under the state model, in order.
std::vector<CheckpointClass> model_classes(const TraceTask& task);

struct GenSpec {
  std::size_t tasks = 4;
  std::size_t turns = 20;
  double stateless_fraction = 0.75;
  double fs_fraction = 0.15;
  double proc_fraction = 0.05;  // the remainder is Full
  // LLM wait is lognormal with this median (ms) and log-space sigma.
  double wait_median_ms = 3340;
  double wait_sigma = 0.9;
  double tool_median_ms = 600;
  double tool_sigma = 1.0;
  std::uint64_t agent_footprint = 185ull << 20;
  std::uint64_t proc_footprint_min = 32ull << 20;
  std::uint64_t proc_footprint_max = 256ull << 20;
  // When set, each task draws its own stateless fraction uniformly from
  // [stateless_fraction - spread, stateless_fraction + spread] and splits the
  // rest in the fs:proc:full proportions above.
  double heterogeneity = 0;
  std::uint64_t seed = 1;
};

/// Deterministic synthetic trace with ground-truth class annotations. Class
/// counts are exact: the number of turns of each class is the largest-
/// remainder rounding of fraction * total turns.
Trace gen_trace(const GenSpec& spec);

/// Tasks of several traces in one trace, in a seeded shuffled order and
/// renumbered from 0.
Trace merge_traces(const std::vector<Trace>& parts, std::string name, std::uint64_t seed);

/// Named generator presets:
///   default        GenSpec defaults
///   heterogeneous  32 tasks x 30 turns, per-task Skip share 0.66 to 0.90
///   stress         24 dump-heavy tasks with long waits mixed with 72
///                  filesystem-heavy tasks with short waits
Trace profile_trace(std::string_view profile, std::uint64_t seed);
std::vector<std::string> trace_profiles();

/// Seeded helpers with platform-independent output.
class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) : gen_(seed) {}
  std::uint64_t next() { return gen_(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Uniform double in [0, 1).
  double unit();
  double normal();
  double lognormal(double median, double sigma);
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 gen_;
  std::optional<double> spare_;
};

}  // namespace agentcr
