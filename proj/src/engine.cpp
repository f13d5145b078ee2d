#include "agentcr/engine.hpp"

#include <algorithm>

#include "agentcr/portable_backend.hpp"

namespace agentcr {

namespace {

ArtifactRecord make_artifact(const SandboxId& id, ArtifactKind kind, TurnIndex turn,
                             const SnapshotResult& snap, Seconds now) {
  ArtifactRecord a;
  a.kind = kind;
  a.sandbox_id = id;
  a.turn_index = turn;
  a.artifact_id = id + (kind == ArtifactKind::ProcessState ? "/P" : "/F") + std::to_string(turn);
  a.backend_handle = snap.handle;
  a.logical_size_bytes = snap.size_bytes;
  a.created_at = now;
  return a;
}

bool legal(Lifecycle from, Lifecycle to) {
  switch (from) {
    case Lifecycle::Pending: return to == Lifecycle::Dumping || to == Lifecycle::Failed;
    case Lifecycle::Dumping: return to == Lifecycle::Versioning || to == Lifecycle::Failed;
    case Lifecycle::Versioning: return to == Lifecycle::Done || to == Lifecycle::Failed;
    default: return false;
  }
}

}  // namespace

std::string_view to_string(Lifecycle stage) {
  switch (stage) {
    case Lifecycle::Pending: return "pending";
    case Lifecycle::Dumping: return "dumping";
    case Lifecycle::Versioning: return "versioning";
    case Lifecycle::Done: return "done";
    case Lifecycle::Failed: return "failed";
  }
  return "?";
}

std::size_t default_worker_count(unsigned host_cores) {
  return std::clamp<std::size_t>(host_cores / 8, 1, 8);
}

Engine::Engine(Backend& backend, const Clock& clock, EngineConfig config)
    : backend_(backend), clock_(clock), config_(std::move(config)), scheduler_(config_.policy) {
  if (config_.worker_count == 0) throw Error(Errc::ConfigInvalid, "worker_count must be positive");
  if (config_.manifest_dir) {
    store_ = std::filesystem::exists(*config_.manifest_dir / "sandboxes")
                 ? ManifestStore::load(*config_.manifest_dir)
                 : ManifestStore(*config_.manifest_dir);
  }
}

Engine::~Engine() { stop_workers(); }

void Engine::add_terminal_listener(TerminalListener listener) {
  std::lock_guard lock(mu_);
  terminal_listeners_.push_back(std::move(listener));
}

void Engine::add_restore_listener(RestoreListener listener) {
  std::lock_guard lock(mu_);
  restore_listeners_.push_back(std::move(listener));
}

void Engine::set_fault_hook(FaultHook hook) {
  std::lock_guard lock(mu_);
  fault_hook_ = std::move(hook);
}

void Engine::register_locked(CheckpointTarget& sandbox) {
  SandboxEntry& entry = sandboxes_[sandbox.sandbox_id()];
  entry.target = &sandbox;
  entry.base.reset();
}

void Engine::register_sandbox(CheckpointTarget& sandbox) {
  const SandboxId& id = sandbox.sandbox_id();
  SnapshotResult fs_snap;
  SnapshotResult proc_snap;
  try {
    fs_snap = backend_.snapshot_fs(sandbox);
    proc_snap = backend_.snapshot_proc(sandbox);
  } catch (const Error& e) {
    throw Error(Errc::BackendFailure, "initial capture of " + id + ": " + e.what());
  }
  Seconds now = clock_.now();
  CheckpointManifest initial;
  initial.version_id = kInitialVersion;
  initial.proc_artifact = make_artifact(id, ArtifactKind::ProcessState, kInitialTurn, proc_snap, now);
  initial.fs_artifact = make_artifact(id, ArtifactKind::FilesystemState, kInitialTurn, fs_snap, now);
  std::lock_guard lock(mu_);
  store_.set_initial(id, initial);
  register_locked(sandbox);
}

void Engine::register_sandbox_bare(CheckpointTarget& sandbox) {
  std::lock_guard lock(mu_);
  register_locked(sandbox);
}

bool Engine::has_sandbox(const SandboxId& id) const {
  std::lock_guard lock(mu_);
  return sandboxes_.contains(id);
}

CheckpointJob& Engine::job_locked(JobId id) {
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw Error(Errc::UnknownJob, std::to_string(id));
  return it->second;
}

const CheckpointJob& Engine::job_locked(JobId id) const {
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw Error(Errc::UnknownJob, std::to_string(id));
  return it->second;
}

void Engine::transition_locked(CheckpointJob& job, Lifecycle to) {
  if (!legal(job.lifecycle, to)) {
    throw Error(Errc::InvalidTransition, "job " + std::to_string(job.job_id) + " " +
                                             std::string(to_string(job.lifecycle)) + " -> " +
                                             std::string(to_string(to)));
  }
  job.lifecycle = to;
  if (is_terminal(to)) {
    job.completion_time = clock_.now();
    live_turn_jobs_.erase({job.sandbox_id, job.turn_index});
    std::erase(in_flight_, job.job_id);
    scheduler_.remove(job.job_id);
    ++(to == Lifecycle::Done ? stats_.done : stats_.failed);
    idle_cv_.notify_all();
  }
}

bool Engine::fault_locked(const CheckpointJob& job, Lifecycle stage) const {
  return fault_hook_ && fault_hook_(job, stage);
}

CheckpointJob Engine::fail_locked(CheckpointJob& job, const std::string& reason) {
  job.failure = reason;
  job.artifacts.clear();
  transition_locked(job, Lifecycle::Failed);
  return job;
}

void Engine::notify_terminal(const CheckpointJob& job) {
  std::vector<TerminalListener> listeners;
  {
    std::lock_guard lock(mu_);
    listeners = terminal_listeners_;
  }
  for (const auto& l : listeners) l(job);
}

JobId Engine::submit(const JobRequest& request) {
  if (request.cls == CheckpointClass::Skip) {
    throw Error(Errc::InvalidTransition, "Skip turns are not checkpointed");
  }
  std::lock_guard lock(mu_);
  auto sb = sandboxes_.find(request.sandbox_id);
  if (sb == sandboxes_.end()) throw Error(Errc::UnknownSandbox, request.sandbox_id);
  auto key = std::make_pair(request.sandbox_id, request.turn_index);
  if (live_turn_jobs_.contains(key)) {
    throw Error(Errc::DuplicateTurnJob,
                request.sandbox_id + " turn " + std::to_string(request.turn_index));
  }
  CheckpointJob job;
  job.job_id = next_job_id_++;
  job.sandbox_id = request.sandbox_id;
  job.turn_index = request.turn_index;
  job.cls = request.cls;
  job.up_to_seq = request.up_to_seq;
  job.enqueue_time = clock_.now();
  job.epoch = sb->second.epoch;
  JobId id = job.job_id;
  jobs_.emplace(id, std::move(job));
  live_turn_jobs_.emplace(key, id);
  scheduler_.enqueue(id);
  ++stats_.submitted;
  stats_.max_normal_queue = std::max(stats_.max_normal_queue, scheduler_.normal_size());
  work_cv_.notify_one();
  return id;
}

void Engine::promote(JobId id) {
  std::lock_guard lock(mu_);
  CheckpointJob& job = job_locked(id);
  if (job.lifecycle != Lifecycle::Pending) return;
  if (scheduler_.promote(id)) {
    job.priority = Priority::High;
    ++stats_.promotions;
    stats_.max_high_queue = std::max(stats_.max_high_queue, scheduler_.high_size());
  }
}

std::optional<JobId> Engine::next_job() {
  std::vector<CheckpointJob> failed;
  std::optional<JobId> picked;
  {
    std::lock_guard lock(mu_);
    while (auto id = scheduler_.pop()) {
      CheckpointJob& job = job_locked(*id);
      if (fault_locked(job, Lifecycle::Pending)) {
        failed.push_back(fail_locked(job, "injected fault while pending"));
        continue;
      }
      transition_locked(job, Lifecycle::Dumping);
      job.start_time = clock_.now();
      in_flight_.push_back(*id);
      picked = *id;
      break;
    }
  }
  for (const auto& j : failed) notify_terminal(j);
  return picked;
}

std::vector<ArtifactRecord> Engine::execute(JobId id) {
  CheckpointJob snapshot;
  CheckpointTarget* target = nullptr;
  bool inject = false;
  {
    std::lock_guard lock(mu_);
    CheckpointJob& job = job_locked(id);
    if (job.lifecycle != Lifecycle::Dumping) {
      throw Error(Errc::InvalidTransition, "execute requires a dumping job");
    }
    target = sandboxes_.at(job.sandbox_id).target;
    snapshot = job;
    inject = fault_locked(job, Lifecycle::Dumping);
  }

  std::vector<ArtifactRecord> artifacts;
  std::string failure;
  try {
    if (inject) throw Error(Errc::BackendFailure, "injected fault while dumping");
    if (target == nullptr) throw Error(Errc::BackendFailure, "sandbox has no live target");
    if (captures_fs(snapshot.cls)) {
      auto r = backend_.snapshot_fs(*target);
      artifacts.push_back(make_artifact(snapshot.sandbox_id, ArtifactKind::FilesystemState,
                                        snapshot.turn_index, r, clock_.now()));
    }
    if (captures_proc(snapshot.cls)) {
      auto r = backend_.snapshot_proc(*target);
      artifacts.push_back(make_artifact(snapshot.sandbox_id, ArtifactKind::ProcessState,
                                        snapshot.turn_index, r, clock_.now()));
    }
  } catch (const std::exception& e) {
    failure = e.what();
  }

  CheckpointJob failed;
  {
    std::lock_guard lock(mu_);
    CheckpointJob& job = job_locked(id);
    if (job.lifecycle != Lifecycle::Dumping) {
      // Superseded by a restore while the backend ran.
      throw Error(Errc::BackendFailure, "job " + std::to_string(id) + " no longer dumping");
    }
    if (failure.empty()) {
      job.artifacts = artifacts;
      transition_locked(job, Lifecycle::Versioning);
      return artifacts;
    }
    failed = fail_locked(job, failure);
  }
  notify_terminal(failed);
  throw Error(Errc::BackendFailure, failure);
}

const CheckpointManifest* Engine::base_locked(const SandboxId& id) const {
  auto sb = sandboxes_.find(id);
  if (sb != sandboxes_.end() && sb->second.base) return store_.find(id, *sb->second.base);
  return store_.head(id);
}

CheckpointManifest Engine::publish(JobId id) {
  bool inject = false;
  {
    std::lock_guard lock(mu_);
    CheckpointJob& job = job_locked(id);
    if (job.lifecycle != Lifecycle::Versioning) {
      throw Error(Errc::InvalidTransition, "publish requires a versioning job");
    }
    inject = fault_locked(job, Lifecycle::Versioning);
  }

  CheckpointJob done;
  CheckpointManifest manifest;
  std::optional<Error> error;
  {
    std::lock_guard lock(mu_);
    CheckpointJob& job = job_locked(id);
    if (job.lifecycle != Lifecycle::Versioning) {
      throw Error(Errc::InvalidTransition, "job " + std::to_string(id) + " left versioning");
    }
    auto& entry = sandboxes_.at(job.sandbox_id);
    const CheckpointManifest* base = base_locked(job.sandbox_id);
    try {
      if (inject) throw Error(Errc::BackendFailure, "injected fault while versioning");
      if (job.epoch != entry.epoch) {
        throw Error(Errc::InvalidTransition, "superseded by a restore");
      }
      if (base != nullptr && job.turn_index <= base->head_turn) {
        throw Error(Errc::InvalidTransition, "turn at or behind the published head");
      }
      const ArtifactRecord* fs_art = nullptr;
      const ArtifactRecord* proc_art = nullptr;
      for (const auto& a : job.artifacts) {
        (a.kind == ArtifactKind::FilesystemState ? fs_art : proc_art) = &a;
      }
      if ((fs_art == nullptr || proc_art == nullptr) && base == nullptr) {
        throw Error(Errc::MissingCounterpart, job.sandbox_id + " has no initial artifact");
      }
      manifest.fs_artifact = fs_art ? *fs_art : base->fs_artifact;
      manifest.proc_artifact = proc_art ? *proc_art : base->proc_artifact;
      manifest.fs_turn = manifest.fs_artifact.turn_index;
      manifest.proc_turn = manifest.proc_artifact.turn_index;
      manifest.head_turn = job.turn_index;
      manifest.parent_version = base ? base->version_id : kInitialVersion;
      const auto& chain = store_.versions(job.sandbox_id);
      manifest.version_id = chain.empty() ? kInitialVersion + 1 : chain.back().version_id + 1;
      store_.append(job.sandbox_id, manifest);
    } catch (const Error& e) {
      error = e;
    }
    if (error) {
      done = fail_locked(job, error->what());
    } else {
      entry.base.reset();
      job.version = manifest.version_id;
      transition_locked(job, Lifecycle::Done);
      if (inspector_ != nullptr && inspector_->has_sandbox(job.sandbox_id) &&
          job.up_to_seq >= inspector_->baseline(job.sandbox_id).baseline_seq &&
          job.up_to_seq <= inspector_->latest_seq(job.sandbox_id)) {
        inspector_->reset_baseline(job.sandbox_id, job.up_to_seq);
      }
      done = job;
    }
  }
  notify_terminal(done);
  if (error) throw *error;
  return manifest;
}

void Engine::fail(JobId id, const std::string& reason) {
  CheckpointJob failed;
  {
    std::lock_guard lock(mu_);
    CheckpointJob& job = job_locked(id);
    if (is_terminal(job.lifecycle)) return;
    failed = fail_locked(job, reason);
  }
  notify_terminal(failed);
}

std::optional<JobId> Engine::run_one() {
  auto id = next_job();
  if (!id) return std::nullopt;
  try {
    execute(*id);
    publish(*id);
  } catch (const Error&) {
    // The job is terminal either way; failures surface through listeners.
  }
  return id;
}

RestoreReport Engine::restore(const SandboxId& sandbox, VersionId version,
                              CheckpointTarget& target) {
  Seconds started = clock_.now();
  CheckpointManifest manifest;
  std::vector<CheckpointJob> superseded;
  const SandboxId& target_id = target.sandbox_id();
  bool fork = target_id != sandbox;
  {
    std::lock_guard lock(mu_);
    const CheckpointManifest* m = store_.find(sandbox, version);
    if (m == nullptr) {
      throw Error(Errc::UnknownVersion, sandbox + " v" + std::to_string(version));
    }
    manifest = *m;
    auto& entry = sandboxes_[target_id];
    entry.target = &target;
    ++entry.epoch;
    for (auto& [id, job] : jobs_) {
      if (job.sandbox_id == target_id && !is_terminal(job.lifecycle)) {
        superseded.push_back(fail_locked(job, "superseded by a restore"));
      }
    }
  }
  for (const auto& j : superseded) notify_terminal(j);

  try {
    backend_.restore_fs(manifest.fs_artifact.backend_handle, target);
    backend_.restore_proc(manifest.proc_artifact.backend_handle, target);
  } catch (const std::exception& e) {
    target.mark_invalid();
    throw Error(Errc::BackendFailure, "restore of " + target_id + ": " + e.what());
  }
  target.mark_restored();

  {
    std::lock_guard lock(mu_);
    auto& entry = sandboxes_[target_id];
    if (fork) {
      CheckpointManifest initial = manifest;
      initial.version_id = kInitialVersion;
      initial.parent_version = kInitialVersion;
      store_.set_initial(target_id, initial);
      entry.base.reset();
    } else {
      const auto& chain = store_.versions(sandbox);
      bool is_head = version == kInitialVersion ? chain.empty()
                                                : !chain.empty() && chain.back().version_id == version;
      entry.base = is_head ? std::nullopt : std::optional<VersionId>(version);
    }
  }

  if (inspector_ != nullptr) {
    std::set<std::string> paths;
    for (const auto& e : scan_tree(target.workspace_root())) paths.insert(e.path);
    std::set<Pid> pids;
    std::set<Pid> agents;
    for (const auto& p : target.process_image().entries) {
      pids.insert(p.pid);
      if (p.is_agent) agents.insert(p.pid);
    }
    if (inspector_->has_sandbox(target_id)) {
      inspector_->reset_baseline(target_id, inspector_->latest_seq(target_id), std::move(paths),
                                 std::move(pids));
      for (Pid a : agents) inspector_->exclude_pid(target_id, a);
    } else {
      inspector_->register_sandbox(target_id, std::move(paths), std::move(pids), std::move(agents));
    }
  }

  RestoreReport report;
  report.source_id = sandbox;
  report.target_id = target_id;
  report.version_id = manifest.version_id;
  report.proc_turn = manifest.proc_turn;
  report.fs_turn = manifest.fs_turn;
  report.head_turn = manifest.head_turn;
  report.fork = fork;
  report.wall_time = clock_.now() - started;

  std::vector<RestoreListener> listeners;
  {
    std::lock_guard lock(mu_);
    listeners = restore_listeners_;
  }
  for (const auto& l : listeners) l(report);
  return report;
}

std::vector<CheckpointManifest> Engine::list_versions(const SandboxId& sandbox) const {
  std::lock_guard lock(mu_);
  if (!sandboxes_.contains(sandbox) && !store_.has_sandbox(sandbox)) {
    throw Error(Errc::UnknownSandbox, sandbox);
  }
  return store_.versions(sandbox);
}

std::optional<CheckpointManifest> Engine::find_version(const SandboxId& sandbox,
                                                       VersionId version) const {
  std::lock_guard lock(mu_);
  const CheckpointManifest* m = store_.find(sandbox, version);
  return m ? std::optional(*m) : std::nullopt;
}

std::optional<CheckpointManifest> Engine::head(const SandboxId& sandbox) const {
  std::lock_guard lock(mu_);
  const CheckpointManifest* m = base_locked(sandbox);
  return m ? std::optional(*m) : std::nullopt;
}

CheckpointJob Engine::job(JobId id) const {
  std::lock_guard lock(mu_);
  return job_locked(id);
}

Lifecycle Engine::lifecycle(JobId id) const {
  std::lock_guard lock(mu_);
  return job_locked(id).lifecycle;
}

std::vector<CheckpointJob> Engine::jobs() const {
  std::lock_guard lock(mu_);
  std::vector<CheckpointJob> out;
  out.reserve(jobs_.size());
  for (const auto& [id, job] : jobs_) out.push_back(job);
  return out;
}

SchedulerStats Engine::stats() const {
  std::lock_guard lock(mu_);
  SchedulerStats s = stats_;
  s.normal_queue = scheduler_.normal_size();
  s.high_queue = scheduler_.high_size();
  s.in_flight = in_flight_.size();
  return s;
}

void Engine::start_workers() {
  std::lock_guard lock(mu_);
  if (!workers_.empty()) return;
  stopping_ = false;
  for (std::size_t i = 0; i < config_.worker_count; ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
}

void Engine::stop_workers() {
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    workers.swap(workers_);
  }
  work_cv_.notify_all();
  for (auto& t : workers) t.join();
}

void Engine::worker_loop() {
  for (;;) {
    {
      std::unique_lock lock(mu_);
      work_cv_.wait(lock, [this] {
        return stopping_ || scheduler_.normal_size() + scheduler_.high_size() > 0;
      });
      if (stopping_) return;
    }
    run_one();
  }
}

void Engine::wait_idle() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [this] {
    return scheduler_.normal_size() + scheduler_.high_size() == 0 && in_flight_.empty();
  });
}

}  // namespace agentcr
