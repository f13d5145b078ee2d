#include "agentcr/replay.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <deque>
#include <functional>
#include <limits>
#include <queue>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "agentcr/portable_backend.hpp"
#include "agentcr/simulated_backend.hpp"

namespace fs = std::filesystem;

namespace agentcr {

namespace {

constexpr Pid kAgentPid = 1;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string sandbox_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sb-%03zu", i);
  return buf;
}

std::string request_body(std::size_t task, TurnIndex turn) {
  return "task " + std::to_string(task) + " turn " + std::to_string(turn) + " request";
}

std::string response_body(std::size_t task, TurnIndex turn) {
  return "task " + std::to_string(task) + " turn " + std::to_string(turn) + " response";
}

// Registry as compared across runs: dirty flags and the agent's own memory
// are not part of recovery-relevant state.
std::vector<ProcessEntry> comparable(const ProcessImage& image) {
  std::vector<ProcessEntry> out;
  for (auto e : image.entries) {
    e.dirty = false;
    if (e.is_agent) e.memory_version = 0;
    out.push_back(e);
  }
  return out;
}

// Fault-free reference: the sandbox state after setup (index 0) and after
// each turn's tools (index turn + 1).
struct Reference {
  std::vector<std::string> tree_hashes;
  std::vector<std::vector<ProcessEntry>> registries;
};

Reference build_reference(const TraceTask& task, AgentMode mode, const fs::path& dir) {
  Reference ref;
  SimSandbox sb("reference", dir);
  sb.apply(task.setup);
  if (mode == AgentMode::InSandbox) sb.spawn_agent(kAgentPid, task.agent_footprint);
  ref.tree_hashes.push_back(sb.tree_hash());
  ref.registries.push_back(comparable(sb.process_image()));
  for (const auto& turn : task.turns) {
    sb.apply(turn.actions);
    ref.tree_hashes.push_back(sb.tree_hash());
    ref.registries.push_back(comparable(sb.process_image()));
  }
  return ref;
}

struct Agent {
  std::size_t index = 0;
  SandboxId id;
  const TraceTask* task = nullptr;
  std::unique_ptr<SimSandbox> sandbox;
  AgentMode mode = AgentMode::InSandbox;
  TaskFault fault;
  bool crash_done = false;
  std::optional<Seconds> preempt_at;

  TurnIndex turn = 0;
  // Turns up to this index already have their effects in the restored
  // filesystem; their tools are not run again.
  TurnIndex skip_through = kInitialTurn;
  std::optional<std::uint64_t> command;
  bool finished = false;
  Seconds started = 0;

  std::map<TurnIndex, CheckpointClass> classes;
  TaskMetric metric;
  std::optional<Reference> reference;
};

class Host {
 public:
  Host(const Trace& trace, const FaultPlan& faults, const ReplayConfig& config, const Clock& clock)
      : trace_(trace), faults_(faults), config_(config), clock_(clock) {
    if (config_.work_dir.empty()) {
      static std::atomic<unsigned> counter{0};
      work_ = fs::temp_directory_path() /
              ("agentcr-replay-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
      owns_work_ = !config_.keep_work_dir;
    } else {
      work_ = config_.work_dir;
      if (fs::exists(work_ / "manifests") || fs::exists(work_ / "conversations.jsonl")) {
        throw Error(Errc::ConfigInvalid, work_.string() + " already holds a replay");
      }
    }
    fs::create_directories(work_);
    storage_ = std::make_unique<PortableBackend>(work_ / "artifacts");
    if (config_.backend == "simulated") {
      simulated_ = std::make_unique<SimulatedBackend>(
          *storage_, config_.latency, config_.real_time ? config_.time_scale : 0.0);
      backend_ = simulated_.get();
    } else {
      backend_ = storage_.get();
    }
    EngineConfig ec;
    ec.worker_count = config_.workers;
    ec.policy = config_.policy;
    ec.manifest_dir = work_ / "manifests";
    engine_ = std::make_unique<Engine>(*backend_, clock_, ec);
    engine_->attach_inspector(&inspector_);
    CoordinatorConfig cc;
    cc.log_path = work_ / "conversations.jsonl";
    coordinator_ = std::make_unique<Coordinator>(inspector_, *engine_, clock_, cc);
    engine_->add_terminal_listener([this](const CheckpointJob& job) {
      std::lock_guard lock(metrics_mu_);
      completion_order_.push_back(job.job_id);
    });
    if (faults_.job_failure_probability > 0) {
      fault_rng_ = std::make_unique<DetRng>(faults_.seed ^ 0x9e3779b97f4a7c15ull);
      engine_->set_fault_hook([this](const CheckpointJob&, Lifecycle) {
        return fault_rng_->unit() < faults_.job_failure_probability;
      });
    }
  }

  ~Host() {
    engine_->stop_workers();
    if (owns_work_) {
      std::error_code ec;
      fs::remove_all(work_, ec);
    }
  }

  void setup_agents() {
    std::size_t n = config_.density == 0 ? trace_.tasks.size() : config_.density;
    for (std::size_t i = 0; i < n; ++i) {
      auto a = std::make_unique<Agent>();
      a->index = i;
      a->id = sandbox_name(i);
      a->task = &trace_.tasks[i % trace_.tasks.size()];
      a->mode = config_.mode == ModeSelection::Alternate
                    ? (i % 2 == 0 ? AgentMode::InSandbox : AgentMode::WithSandbox)
                    : (config_.mode == ModeSelection::InSandbox ? AgentMode::InSandbox
                                                                 : AgentMode::WithSandbox);
      if (a->task->task < faults_.tasks.size() && i < trace_.tasks.size()) {
        a->fault = faults_.tasks[a->task->task];
      }
      for (const auto& p : faults_.preemptions) {
        if (p.task == i) a->preempt_at = p.time + p.grace;
      }
      a->sandbox = std::make_unique<SimSandbox>(a->id, work_ / "workspaces" / a->id);
      a->sandbox->apply(a->task->setup);
      std::set<Pid> agents;
      if (a->mode == AgentMode::InSandbox) {
        a->sandbox->spawn_agent(kAgentPid, a->task->agent_footprint);
        agents.insert(kAgentPid);
      }
      inspector_.register_sandbox(a->id, a->sandbox->existing_paths(), a->sandbox->live_pids(),
                                  agents);
      a->sandbox->set_sink([this](const OsEvent& ev) { inspector_.ingest_event(ev); });
      engine_->register_sandbox(*a->sandbox);
      coordinator_->register_sandbox(a->id, a->mode);

      a->metric.sandbox_id = a->id;
      a->metric.task = a->task->task;
      a->metric.mode = a->mode;
      a->metric.turns = a->task->turns.size();
      if (config_.verify_recovery && (a->fault.crash_turn || a->preempt_at)) {
        a->reference = build_reference(*a->task, a->mode, work_ / "reference" / a->id);
      }
      by_id_[a->id] = a.get();
      agents_.push_back(std::move(a));
    }
  }

  Agent& agent(const SandboxId& id) { return *by_id_.at(id); }
  std::vector<std::unique_ptr<Agent>>& agents() { return agents_; }
  Engine& engine() { return *engine_; }
  Coordinator& coordinator() { return *coordinator_; }
  const ReplayConfig& config() const { return config_; }
  const LatencyModel& latency() const { return config_.latency; }

  Seconds wait_of(const Agent& a, TurnIndex turn) const {
    return a.task->turns[static_cast<std::size_t>(turn)].llm_wait_ms / 1000.0 * config_.wait_scale;
  }

  bool crash_due(const Agent& a) const {
    return !a.crash_done && a.fault.crash_turn && *a.fault.crash_turn == a.turn;
  }

  bool preempt_due(const Agent& a) const {
    return !a.crash_done && a.preempt_at && clock_.now() >= *a.preempt_at;
  }

  /// Actions of the current turn as the agent runs them: the trace's tool
  /// actions plus, for an in-sandbox agent, its own memory update.
  std::vector<ToolAction> turn_actions(const Agent& a) const {
    auto actions = a.task->turns[static_cast<std::size_t>(a.turn)].actions;
    if (a.mode == AgentMode::InSandbox) actions.push_back(TouchMemory{kAgentPid});
    return actions;
  }

  void begin_command(Agent& a) {
    if (a.mode != AgentMode::WithSandbox || a.command) return;
    a.command = coordinator_->record_command(a.id, "turn " + std::to_string(a.turn));
  }

  void end_command(Agent& a) {
    if (!a.command) return;
    coordinator_->complete_command(*a.command);
    a.command.reset();
  }

  ForwardDecision send_request(Agent& a) {
    LlmRequest req;
    req.body = request_body(a.task->task, a.turn);
    req.headers = {{"content-type", "application/json"}, {"x-sandbox-id", a.id}};
    ForwardDecision d = coordinator_->on_outbound_request(a.id, req);
    if (d.kind == ForwardDecision::Kind::SyntheticResponse) {
      ++a.metric.fast_forward_turns;
      std::lock_guard lock(metrics_mu_);
      TurnMetric m;
      m.sandbox_id = a.id;
      m.task = a.task->task;
      m.turn = d.turn_index;
      m.synthetic = true;
      m.cls = a.classes.contains(d.turn_index) ? a.classes[d.turn_index] : CheckpointClass::Skip;
      turns_.push_back(m);
    } else {
      a.classes[d.turn_index] = d.cls;
    }
    return d;
  }

  void record_release(const TurnRelease& r) {
    Agent& a = agent(r.sandbox_id);
    std::lock_guard lock(metrics_mu_);
    TurnMetric m;
    m.sandbox_id = r.sandbox_id;
    m.task = a.task->task;
    m.turn = r.turn_index;
    m.cls = a.classes[r.turn_index];
    m.response_arrival = r.response_arrival;
    m.exposed_delay = r.exposed_delay;
    m.job_failed = r.job_failed;
    turns_.push_back(m);
    a.metric.exposed_total += r.exposed_delay;
  }

  /// Crashes the sandbox, restores its latest version and returns the
  /// modeled restore time. On the wall clock the backend itself sleeps.
  Seconds crash_and_restore(Agent& a) {
    a.crash_done = true;
    a.metric.crashed = true;
    a.sandbox->crash();
    auto head = engine_->head(a.id);
    RestoreReport report = engine_->restore(a.id, head->version_id, *a.sandbox);
    a.metric.fast_forward_manifest = a.metric.fast_forward_manifest || report.fs_turn > report.proc_turn;
    if (a.reference) {
      auto fs_idx = static_cast<std::size_t>(report.fs_turn + 1);
      auto proc_idx = static_cast<std::size_t>(report.proc_turn + 1);
      if (a.sandbox->tree_hash() != a.reference->tree_hashes.at(fs_idx)) {
        fail_recovery(a, "restored workspace differs from turn " + std::to_string(report.fs_turn));
      }
      if (comparable(a.sandbox->process_image()) != a.reference->registries.at(proc_idx)) {
        fail_recovery(a, "restored registry differs from turn " + std::to_string(report.proc_turn));
      }
    }
    if (a.mode == AgentMode::InSandbox) {
      a.turn = report.proc_turn + 1;
      a.skip_through = report.fs_turn;
    } else {
      auto outstanding = coordinator_->reissue_outstanding(a.id);
      a.metric.reissued_commands += outstanding.size();
      if (!outstanding.empty()) a.command = outstanding.front();
    }
    std::uint64_t proc_bytes = a.sandbox->process_image().total_footprint();
    return latency().isolated_latency(OpKind::FsRestore, 0) +
           latency().isolated_latency(OpKind::ProcRestore, proc_bytes);
  }

  void fail_recovery(Agent& a, const std::string& note) {
    a.metric.recovery_correct = false;
    if (a.metric.recovery_note.empty()) a.metric.recovery_note = note;
  }

  void finish(Agent& a) {
    a.finished = true;
    a.metric.wall_time = clock_.now() - a.started;
    a.metric.exposed_fraction = a.metric.wall_time > 0 ? a.metric.exposed_total / a.metric.wall_time : 0;
    a.metric.final_tree_hash = a.sandbox->tree_hash();
    for (const auto& [turn, cls] : a.classes) {
      switch (cls) {
        case CheckpointClass::Skip: ++a.metric.skip; break;
        case CheckpointClass::FsOnly: ++a.metric.fs_only; break;
        case CheckpointClass::ProcOnly: ++a.metric.proc_only; break;
        case CheckpointClass::Full: ++a.metric.full; break;
      }
    }
    if (a.reference) {
      if (a.metric.final_tree_hash != a.reference->tree_hashes.back()) {
        fail_recovery(a, "final workspace differs from the fault-free run");
      }
      if (comparable(a.sandbox->process_image()) != a.reference->registries.back()) {
        fail_recovery(a, "final registry differs from the fault-free run");
      }
    }
  }

  MetricsReport report() {
    MetricsReport r;
    r.trace_name = trace_.name;
    r.backend = config_.backend;
    r.policy = std::string(to_string(config_.policy));
    r.density = agents_.size();
    r.wait_scale = config_.wait_scale;
    r.real_time = config_.real_time;
    for (const auto& a : agents_) {
      r.tasks.push_back(a->metric);
      r.listed_versions += engine_->list_versions(a->id).size();
    }
    r.turns = turns_;
    std::stable_sort(r.turns.begin(), r.turns.end(), [](const TurnMetric& x, const TurnMetric& y) {
      return std::tie(x.sandbox_id, x.turn, x.synthetic) < std::tie(y.sandbox_id, y.turn, y.synthetic);
    });
    r.scheduler = engine_->stats();
    r.completion_order = completion_order_;
    r.jobs_submitted = r.scheduler.submitted;
    r.jobs_done = r.scheduler.done;
    r.jobs_failed = r.scheduler.failed;
    return r;
  }

 private:
  const Trace& trace_;
  const FaultPlan& faults_;
  const ReplayConfig& config_;
  const Clock& clock_;
  fs::path work_;
  bool owns_work_ = false;

  Inspector inspector_;
  std::unique_ptr<PortableBackend> storage_;
  std::unique_ptr<SimulatedBackend> simulated_;
  Backend* backend_ = nullptr;
  std::unique_ptr<Engine> engine_;
  std::unique_ptr<Coordinator> coordinator_;
  std::unique_ptr<DetRng> fault_rng_;

  std::vector<std::unique_ptr<Agent>> agents_;
  std::map<SandboxId, Agent*> by_id_;

  std::mutex metrics_mu_;
  std::vector<TurnMetric> turns_;
  std::vector<JobId> completion_order_;
};

// --- Discrete-event replay --------------------------------------------------

class DesReplay {
 public:
  DesReplay(const Trace& trace, const FaultPlan& faults, const ReplayConfig& config)
      : host_(trace, faults, config, clock_), bw_(config.latency) {
    bw_.record_grants(false);
    free_workers_ = config.workers;
  }

  MetricsReport run() {
    host_.setup_agents();
    host_.coordinator().set_release_listener([this](const TurnRelease& r) {
      host_.record_release(r);
      Agent& a = host_.agent(r.sandbox_id);
      ++a.turn;
      schedule(clock_.now(), [this, &a] { start_turn(a); });
    });
    for (auto& a : host_.agents()) {
      Agent* p = a.get();
      schedule(0, [this, p] { start_turn(*p); });
    }
    loop();
    return host_.report();
  }

 private:
  struct Event {
    Seconds time;
    std::uint64_t seq;
    std::function<void()> fn;
    bool operator>(const Event& o) const {
      return time != o.time ? time > o.time : seq > o.seq;
    }
  };

  void schedule(Seconds t, std::function<void()> fn) {
    events_.push(Event{t, next_seq_++, std::move(fn)});
  }

  void loop() {
    const Seconds inf = std::numeric_limits<Seconds>::infinity();
    while (!events_.empty() || bw_.active_count() > 0) {
      Seconds tq = events_.empty() ? inf : events_.top().time;
      auto nb = bw_.next_completion();
      if (nb && nb->first <= tq) {
        for (const auto& [t, op] : bw_.advance_to(nb->first)) {
          clock_.set(t);
          op_done(op);
        }
        continue;
      }
      Event ev = events_.top();
      events_.pop();
      if (ev.time > bw_.now()) {
        for (const auto& [t, op] : bw_.advance_to(ev.time)) {
          clock_.set(t);
          op_done(op);
        }
      }
      clock_.set(std::max(ev.time, clock_.now()));
      ev.fn();
    }
  }

  void start_turn(Agent& a) {
    const auto& turns = a.task->turns;
    if (a.turn >= static_cast<TurnIndex>(turns.size())) {
      host_.finish(a);
      return;
    }
    if (host_.preempt_due(a)) {
      Seconds restore = host_.crash_and_restore(a);
      schedule(clock_.now() + restore, [this, &a] { start_turn(a); });
      return;
    }
    if (a.turn <= a.skip_through) {
      request(a);
      return;
    }
    auto actions = host_.turn_actions(a);
    host_.begin_command(a);
    if (host_.crash_due(a)) {
      std::size_t k = std::min(a.fault.crash_after_actions, actions.size());
      std::span<const ToolAction> part(actions.data(), k);
      a.sandbox->apply(part);
      schedule(clock_.now() + tool_duration(part), [this, &a] {
        Seconds restore = host_.crash_and_restore(a);
        schedule(clock_.now() + restore, [this, &a] { start_turn(a); });
      });
      return;
    }
    a.sandbox->apply(actions);
    schedule(clock_.now() + tool_duration(actions), [this, &a] {
      host_.end_command(a);
      request(a);
    });
  }

  void request(Agent& a) {
    ForwardDecision d = host_.send_request(a);
    if (d.kind == ForwardDecision::Kind::SyntheticResponse) {
      ++a.turn;
      schedule(clock_.now(), [this, &a] { start_turn(a); });
      return;
    }
    if (d.job) dispatch();
    TurnIndex turn = d.turn_index;
    schedule(clock_.now() + host_.wait_of(a, turn), [this, &a, turn] {
      host_.coordinator().on_llm_response(a.id, response_body(a.task->task, turn));
    });
  }

  void dispatch() {
    while (free_workers_ > 0) {
      auto id = host_.engine().next_job();
      if (!id) return;
      --free_workers_;
      CheckpointJob job = host_.engine().job(*id);
      Agent& a = host_.agent(job.sandbox_id);
      Plan plan;
      plan.job = *id;
      if (captures_fs(job.cls)) plan.stages.push_back({OpKind::FsSnapshot, 0});
      if (captures_proc(job.cls)) {
        plan.stages.push_back({OpKind::ProcDump, a.sandbox->process_image().total_footprint()});
      }
      start_stage(std::move(plan));
    }
  }

  struct Plan {
    JobId job = 0;
    std::deque<std::pair<OpKind, std::uint64_t>> stages;
  };

  void start_stage(Plan plan) {
    auto [kind, bytes] = plan.stages.front();
    plan.stages.pop_front();
    auto op = bw_.start(kind, bytes, clock_.now());
    plans_[op] = std::move(plan);
  }

  void op_done(BandwidthSimulator::OpId op) {
    Plan plan = std::move(plans_.at(op));
    plans_.erase(op);
    if (!plan.stages.empty()) {
      start_stage(std::move(plan));
      return;
    }
    try {
      host_.engine().execute(plan.job);
      host_.engine().publish(plan.job);
    } catch (const Error&) {
      // Terminal either way; the gate sees the failure through the listener.
    }
    ++free_workers_;
    dispatch();
  }

  VirtualClock clock_;
  Host host_;
  BandwidthSimulator bw_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::uint64_t next_seq_ = 0;
  std::size_t free_workers_ = 0;
  std::map<BandwidthSimulator::OpId, Plan> plans_;
};

// --- Real-clock replay -------------------------------------------------------

class RealReplay {
 public:
  RealReplay(const Trace& trace, const FaultPlan& faults, const ReplayConfig& config)
      : clock_(config.time_scale), host_(trace, faults, config, clock_), scale_(config.time_scale) {}

  MetricsReport run() {
    host_.setup_agents();
    host_.coordinator().set_release_listener([this](const TurnRelease& r) {
      host_.record_release(r);
    });
    host_.engine().start_workers();
    std::vector<std::thread> threads;
    std::mutex err_mu;
    std::exception_ptr error;
    for (auto& a : host_.agents()) {
      Agent* p = a.get();
      threads.emplace_back([this, p, &err_mu, &error] {
        try {
          run_agent(*p);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!error) error = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    host_.engine().wait_idle();
    host_.engine().stop_workers();
    if (error) std::rethrow_exception(error);
    return host_.report();
  }

 private:
  void sleep_for(Seconds s) {
    if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s * scale_));
  }

  void run_agent(Agent& a) {
    a.started = clock_.now();
    const auto turns = static_cast<TurnIndex>(a.task->turns.size());
    while (a.turn < turns) {
      if (host_.preempt_due(a)) {
        host_.crash_and_restore(a);
        continue;
      }
      if (a.turn > a.skip_through) {
        auto actions = host_.turn_actions(a);
        host_.begin_command(a);
        if (host_.crash_due(a)) {
          std::size_t k = std::min(a.fault.crash_after_actions, actions.size());
          std::span<const ToolAction> part(actions.data(), k);
          a.sandbox->apply(part);
          sleep_for(tool_duration(part));
          host_.crash_and_restore(a);
          continue;
        }
        a.sandbox->apply(actions);
        sleep_for(tool_duration(actions));
        host_.end_command(a);
      }
      ForwardDecision d = host_.send_request(a);
      if (d.kind == ForwardDecision::Kind::ForwardToLlm) {
        sleep_for(host_.wait_of(a, d.turn_index));
        host_.coordinator().on_llm_response(a.id, response_body(a.task->task, d.turn_index));
        host_.coordinator().wait_release(a.id);
      }
      ++a.turn;
    }
    host_.finish(a);
  }

  ScaledClock clock_;
  Host host_;
  double scale_;
};

}  // namespace

FaultPlan make_fault_plan(const Trace& trace, std::uint64_t seed, double crash_probability) {
  FaultPlan plan;
  plan.seed = seed;
  DetRng rng(seed);
  for (const auto& task : trace.tasks) {
    TaskFault f;
    bool crash = rng.unit() < crash_probability;
    if (crash && !task.turns.empty()) {
      auto turn = rng.below(task.turns.size());
      f.crash_turn = static_cast<TurnIndex>(turn);
      f.crash_after_actions = rng.below(task.turns[turn].actions.size() + 1);
    }
    plan.tasks.push_back(f);
  }
  return plan;
}

std::string_view to_string(ModeSelection m) {
  switch (m) {
    case ModeSelection::InSandbox: return "in-sandbox";
    case ModeSelection::WithSandbox: return "with-sandbox";
    case ModeSelection::Alternate: return "alternate";
  }
  return "?";
}

ModeSelection parse_mode_selection(std::string_view text) {
  if (text == "in-sandbox") return ModeSelection::InSandbox;
  if (text == "with-sandbox") return ModeSelection::WithSandbox;
  if (text == "alternate") return ModeSelection::Alternate;
  throw Error(Errc::ConfigInvalid, "unknown mode '" + std::string(text) + "'");
}

void ReplayConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw Error(Errc::ConfigInvalid, what);
  };
  check(backend == "simulated" || backend == "portable", "backend must be simulated or portable");
  check(wait_scale >= 0, "wait scale must be non-negative");
  check(workers > 0, "workers must be positive");
  check(time_scale > 0, "time scale must be positive");
  check(latency.host_bandwidth > 0, "host bandwidth must be positive");
  check(latency.fs_snapshot_base >= 0 && latency.proc_dump_base >= 0, "latencies must be >= 0");
}

std::size_t MetricsReport::total_turns() const {
  std::size_t n = 0;
  for (const auto& t : tasks) n += t.turns;
  return n;
}

std::size_t MetricsReport::count(CheckpointClass c) const {
  std::size_t n = 0;
  for (const auto& t : tasks) {
    switch (c) {
      case CheckpointClass::Skip: n += t.skip; break;
      case CheckpointClass::FsOnly: n += t.fs_only; break;
      case CheckpointClass::ProcOnly: n += t.proc_only; break;
      case CheckpointClass::Full: n += t.full; break;
    }
  }
  return n;
}

double MetricsReport::skip_ratio() const {
  std::size_t total = count(CheckpointClass::Skip) + count(CheckpointClass::FsOnly) +
                      count(CheckpointClass::ProcOnly) + count(CheckpointClass::Full);
  return total == 0 ? 0.0 : static_cast<double>(count(CheckpointClass::Skip)) / total;
}

bool MetricsReport::recovery_ok() const {
  return std::all_of(tasks.begin(), tasks.end(), [](const TaskMetric& t) { return t.recovery_correct; });
}

std::vector<double> MetricsReport::exposed_fractions() const {
  std::vector<double> out;
  for (const auto& t : tasks) out.push_back(t.exposed_fraction);
  return out;
}

MetricsReport replay(const Trace& trace, const FaultPlan& faults, const ReplayConfig& config) {
  config.validate();
  if (trace.tasks.empty()) {
    MetricsReport empty;
    empty.trace_name = trace.name;
    empty.backend = config.backend;
    empty.policy = std::string(to_string(config.policy));
    return empty;
  }
  if (config.real_time) return RealReplay(trace, faults, config).run();
  return DesReplay(trace, faults, config).run();
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  auto hi = static_cast<std::size_t>(std::ceil(pos));
  return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
}

std::string cdf_csv(const std::string& column, std::vector<double> values) {
  std::ostringstream out;
  out << column << ",cdf\n";
  std::sort(values.begin(), values.end());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << fmt(values[i]) << ',' << fmt(static_cast<double>(i + 1) / values.size()) << '\n';
  }
  return out.str();
}

}  // namespace

void write_report(const MetricsReport& m, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string());

  std::ostringstream tasks;
  tasks << "sandbox_id,task,mode,wall_time_s,exposed_s,exposed_fraction,turns,skip,fs_only,"
           "proc_only,full,crashed,fast_forward_turns,reissued_commands,recovery_correct\n";
  for (const auto& t : m.tasks) {
    tasks << t.sandbox_id << ',' << t.task << ',' << to_string(t.mode) << ',' << fmt(t.wall_time)
          << ',' << fmt(t.exposed_total) << ',' << fmt(t.exposed_fraction) << ',' << t.turns << ','
          << t.skip << ',' << t.fs_only << ',' << t.proc_only << ',' << t.full << ','
          << (t.crashed ? 1 : 0) << ',' << t.fast_forward_turns << ',' << t.reissued_commands
          << ',' << (t.recovery_correct ? 1 : 0) << '\n';
  }
  write_file(dir / "tasks.csv", tasks.str());

  std::ostringstream turns;
  turns << "sandbox_id,task,turn,class,synthetic,exposed_delay_s,job_failed\n";
  for (const auto& t : m.turns) {
    turns << t.sandbox_id << ',' << t.task << ',' << t.turn << ',' << to_string(t.cls) << ','
          << (t.synthetic ? 1 : 0) << ',' << fmt(t.exposed_delay) << ',' << (t.job_failed ? 1 : 0)
          << '\n';
  }
  write_file(dir / "turns.csv", turns.str());

  std::vector<double> fractions = m.exposed_fractions();
  std::vector<double> walls;
  for (const auto& t : m.tasks) walls.push_back(t.wall_time);
  std::vector<double> delays;
  for (const auto& t : m.turns) {
    if (!t.synthetic) delays.push_back(t.exposed_delay);
  }

  std::ostringstream summary;
  summary << "metric,count,mean,p50,p95,p99,max\n";
  auto row = [&summary](const std::string& name, const std::vector<double>& v) {
    if (v.empty()) return;
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    summary << name << ',' << v.size() << ',' << fmt(mean) << ',' << fmt(percentile(v, 0.5)) << ','
            << fmt(percentile(v, 0.95)) << ',' << fmt(percentile(v, 0.99)) << ','
            << fmt(*std::max_element(v.begin(), v.end())) << '\n';
  };
  row("task_exposed_fraction", fractions);
  row("task_wall_time_s", walls);
  row("turn_exposed_delay_s", delays);
  write_file(dir / "summary.csv", summary.str());

  write_file(dir / "cdf_exposed.csv", cdf_csv("exposed_fraction", fractions));
  write_file(dir / "cdf_task_time.csv", cdf_csv("wall_time_s", walls));
}

std::string result_lines(const MetricsReport& m) {
  std::ostringstream out;
  auto fractions = m.exposed_fractions();
  out << "result trace=" << m.trace_name << " backend=" << m.backend << " policy=" << m.policy
      << " density=" << m.density << " wait_scale=" << fmt(m.wait_scale) << '\n';
  out << "result turns=" << m.total_turns() << " skip=" << m.count(CheckpointClass::Skip)
      << " fs_only=" << m.count(CheckpointClass::FsOnly)
      << " proc_only=" << m.count(CheckpointClass::ProcOnly)
      << " full=" << m.count(CheckpointClass::Full) << " skip_ratio=" << fmt(m.skip_ratio()) << '\n';
  out << "result jobs_submitted=" << m.jobs_submitted << " done=" << m.jobs_done
      << " failed=" << m.jobs_failed << " promotions=" << m.scheduler.promotions
      << " versions=" << m.listed_versions << '\n';
  if (!fractions.empty()) {
    out << "result exposed_fraction_p50=" << fmt(percentile(fractions, 0.5))
        << " p95=" << fmt(percentile(fractions, 0.95)) << '\n';
  }
  std::size_t crashed = 0;
  std::size_t correct = 0;
  for (const auto& t : m.tasks) {
    crashed += t.crashed ? 1 : 0;
    correct += t.recovery_correct ? 1 : 0;
  }
  out << "result crashed=" << crashed << " recovery_correct=" << correct << '/' << m.tasks.size()
      << " recovery_ok=" << (m.recovery_ok() ? "true" : "false") << '\n';
  return out.str();
}

}  // namespace agentcr
