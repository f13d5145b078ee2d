#include "agentcr/inspector.hpp"

#include <algorithm>

namespace agentcr {

std::string normalize_path(std::string_view path) {
  if (path.empty() || path.front() != '/') {
    throw Error(Errc::InvalidPath, "path must be absolute: '" + std::string(path) + "'");
  }
  std::string out;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    std::size_t j = i;
    while (j < path.size() && path[j] != '/') ++j;
    std::string_view part = path.substr(i, j - i);
    i = j;
    if (part.empty() || part == ".") continue;
    if (part == "..") {
      throw Error(Errc::InvalidPath, "'..' not allowed: '" + std::string(path) + "'");
    }
    out.push_back('/');
    out.append(part);
  }
  return out.empty() ? std::string("/") : out;
}

std::string_view to_string(PathChange c) {
  switch (c) {
    case PathChange::Created: return "Created";
    case PathChange::Deleted: return "Deleted";
    case PathChange::Modified: return "Modified";
  }
  return "Modified";
}

std::string_view to_string(ProcChange c) {
  switch (c) {
    case ProcChange::Spawned: return "Spawned";
    case ProcChange::Exited: return "Exited";
    case ProcChange::DirtiedMemory: return "DirtiedMemory";
  }
  return "DirtiedMemory";
}

CheckpointClass classify(const NetChangeReport& report) {
  if (report.fs_changed && report.proc_changed) return CheckpointClass::Full;
  if (report.fs_changed) return CheckpointClass::FsOnly;
  if (report.proc_changed) return CheckpointClass::ProcOnly;
  return CheckpointClass::Skip;
}

namespace {

struct PathState {
  bool at_baseline = false;
  bool exists = false;
  // Content no longer the baseline's: written, recreated, or renamed onto.
  bool replaced = false;
};

struct PidState {
  bool at_baseline = false;
  bool alive = false;
  // A new incarnation started during the interval.
  bool respawned = false;
  bool dirty = false;
};

// Folds the interval log through the per-path and per-pid state machines.
class Fold {
 public:
  explicit Fold(const Baseline& base) : base_(base) {}

  void apply(const EventPayload& payload) {
    std::visit([this](const auto& ev) { on(ev); }, payload);
  }

  NetChangeReport report(const SandboxId& id, Seq as_of) const {
    NetChangeReport r;
    r.sandbox_id = id;
    r.as_of_seq = as_of;
    for (const auto& [path, st] : paths_) {
      if (st.at_baseline && !st.exists) {
        r.changed_paths.emplace(path, PathChange::Deleted);
      } else if (!st.at_baseline && st.exists) {
        r.changed_paths.emplace(path, PathChange::Created);
      } else if (st.at_baseline && st.exists && st.replaced) {
        r.changed_paths.emplace(path, PathChange::Modified);
      }
    }
    for (const auto& [pid, st] : pids_) {
      if (excluded_.contains(pid) || base_.excluded_pids.contains(pid)) continue;
      if (!st.at_baseline && st.alive) {
        r.proc_delta.emplace(pid, ProcChange::Spawned);
      } else if (st.at_baseline && !st.alive) {
        r.proc_delta.emplace(pid, ProcChange::Exited);
      } else if (st.at_baseline && st.alive && st.respawned) {
        r.proc_delta.emplace(pid, ProcChange::Spawned);
      } else if (st.at_baseline && st.alive && st.dirty) {
        r.proc_delta.emplace(pid, ProcChange::DirtiedMemory);
      }
    }
    r.fs_changed = !r.changed_paths.empty();
    r.proc_changed = !r.proc_delta.empty();
    return r;
  }

  ObservedState observed() const {
    ObservedState s;
    s.paths = base_.preexisting_paths;
    s.pids = base_.preexisting_pids;
    for (const auto& [path, st] : paths_) {
      if (st.exists) {
        s.paths.insert(path);
      } else {
        s.paths.erase(path);
      }
    }
    for (const auto& [pid, st] : pids_) {
      if (st.alive) {
        s.pids.insert(pid);
      } else {
        s.pids.erase(pid);
      }
    }
    return s;
  }

 private:
  // First sighting of a path. A delete of a path we never knew about is
  // treated as deleting preexisting state so the change is not lost.
  PathState& path(const std::string& p, bool assume_present) {
    auto [it, fresh] = paths_.try_emplace(p);
    if (fresh) {
      it->second.at_baseline = base_.preexisting_paths.contains(p) || assume_present;
      it->second.exists = it->second.at_baseline;
    }
    return it->second;
  }

  PidState& pid(Pid p, bool assume_alive) {
    auto [it, fresh] = pids_.try_emplace(p);
    if (fresh) {
      it->second.at_baseline = base_.preexisting_pids.contains(p) || assume_alive;
      it->second.alive = it->second.at_baseline;
    }
    return it->second;
  }

  void on(const FsCreate& ev) {
    auto& st = path(ev.path, false);
    if (!st.exists) {
      st.exists = true;
      st.replaced = true;
    }
  }

  void on(const FsDelete& ev) { path(ev.path, true).exists = false; }

  void on(const FsWrite& ev) {
    auto& st = path(ev.path, false);
    st.exists = true;
    st.replaced = true;
  }

  void on(const FsRename& ev) {
    if (ev.old_path == ev.new_path) return;
    path(ev.old_path, true).exists = false;
    auto& dst = path(ev.new_path, false);
    dst.exists = true;
    dst.replaced = true;
  }

  void on(const ProcSpawn& ev) {
    auto& st = pid(ev.pid, false);
    if (ev.is_agent) excluded_.insert(ev.pid);
    st.alive = true;
    st.respawned = true;
    st.dirty = false;
  }

  void on(const ProcExit& ev) {
    auto& st = pid(ev.pid, true);
    st.alive = false;
    st.dirty = false;
  }

  void on(const ProcDirty& ev) {
    auto& st = pid(ev.pid, true);
    if (st.alive) st.dirty = true;
  }

  const Baseline& base_;
  std::map<std::string, PathState> paths_;
  std::map<Pid, PidState> pids_;
  std::set<Pid> excluded_;
};

Pid event_pid(const EventPayload& payload) {
  if (const auto* s = std::get_if<ProcSpawn>(&payload)) return s->pid;
  if (const auto* e = std::get_if<ProcExit>(&payload)) return e->pid;
  if (const auto* d = std::get_if<ProcDirty>(&payload)) return d->pid;
  return -1;
}

EventPayload normalized(const EventPayload& payload) {
  return std::visit(
      [](const auto& ev) -> EventPayload {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, FsRename>) {
          return FsRename{normalize_path(ev.old_path), normalize_path(ev.new_path)};
        } else if constexpr (std::is_same_v<T, FsCreate> || std::is_same_v<T, FsDelete> ||
                             std::is_same_v<T, FsWrite>) {
          return T{normalize_path(ev.path)};
        } else {
          return ev;
        }
      },
      payload);
}

}  // namespace

Inspector::Track& Inspector::track(const SandboxId& id) const {
  std::shared_lock lock(map_mu_);
  auto it = tracks_.find(id);
  if (it == tracks_.end()) throw Error(Errc::UnknownSandbox, id);
  return *it->second;
}

void Inspector::register_sandbox(const SandboxId& id, std::set<std::string> initial_paths,
                                 std::set<Pid> initial_pids, std::set<Pid> agent_pids) {
  auto t = std::make_unique<Track>();
  t->baseline.sandbox_id = id;
  std::set<std::string> paths;
  for (const auto& p : initial_paths) paths.insert(normalize_path(p));
  t->baseline.preexisting_paths = std::move(paths);
  t->observed_pids = initial_pids;
  t->observed_pids.insert(agent_pids.begin(), agent_pids.end());
  t->baseline.preexisting_pids = std::move(initial_pids);
  t->baseline.excluded_pids = std::move(agent_pids);
  std::unique_lock lock(map_mu_);
  tracks_[id] = std::move(t);
}

bool Inspector::has_sandbox(const SandboxId& id) const {
  std::shared_lock lock(map_mu_);
  return tracks_.contains(id);
}

void Inspector::ingest_event(const OsEvent& event) {
  Track& t = track(event.sandbox_id);
  OsEvent ev{event.sandbox_id, event.seq, normalized(event.payload)};
  std::lock_guard lock(t.mu);
  if (ev.seq <= t.last_seq) {
    throw Error(Errc::OutOfOrderSeq, event.sandbox_id + " seq " + std::to_string(ev.seq) +
                                         " <= " + std::to_string(t.last_seq));
  }
  t.last_seq = ev.seq;
  if (Pid p = event_pid(ev.payload); p >= 0) {
    t.observed_pids.insert(p);
    if (const auto* s = std::get_if<ProcSpawn>(&ev.payload); s != nullptr && s->is_agent) {
      t.baseline.excluded_pids.insert(p);
    }
  }
  t.interval.push_back(std::move(ev));
}

NetChangeReport Inspector::compute_net_change(const SandboxId& id, Seq as_of_seq) const {
  Track& t = track(id);
  std::lock_guard lock(t.mu);
  if (as_of_seq > t.last_seq) {
    throw Error(Errc::SeqBeyondIngested, id + " as_of " + std::to_string(as_of_seq));
  }
  if (as_of_seq < t.baseline.baseline_seq) {
    throw Error(Errc::BaselineRegression, id + " as_of " + std::to_string(as_of_seq) +
                                              " precedes baseline");
  }
  Fold fold(t.baseline);
  for (const auto& ev : t.interval) {
    if (ev.seq > as_of_seq) break;
    fold.apply(ev.payload);
  }
  return fold.report(id, as_of_seq);
}

NetChangeReport Inspector::compute_net_change(const SandboxId& id) const {
  return compute_net_change(id, latest_seq(id));
}

ObservedState Inspector::observed_state(const SandboxId& id, Seq as_of_seq) const {
  Track& t = track(id);
  std::lock_guard lock(t.mu);
  if (as_of_seq > t.last_seq) {
    throw Error(Errc::SeqBeyondIngested, id + " as_of " + std::to_string(as_of_seq));
  }
  Fold fold(t.baseline);
  for (const auto& ev : t.interval) {
    if (ev.seq > as_of_seq) break;
    fold.apply(ev.payload);
  }
  return fold.observed();
}

void Inspector::reset_baseline(const SandboxId& id, Seq up_to_seq,
                               std::set<std::string> new_paths, std::set<Pid> new_pids) {
  Track& t = track(id);
  std::lock_guard lock(t.mu);
  if (up_to_seq < t.baseline.baseline_seq) {
    throw Error(Errc::BaselineRegression,
                id + " reset to " + std::to_string(up_to_seq) + " < baseline " +
                    std::to_string(t.baseline.baseline_seq));
  }
  if (up_to_seq > t.last_seq) {
    throw Error(Errc::SeqBeyondIngested, id + " reset to " + std::to_string(up_to_seq));
  }
  auto keep = std::find_if(t.interval.begin(), t.interval.end(),
                           [&](const OsEvent& ev) { return ev.seq > up_to_seq; });
  t.interval.erase(t.interval.begin(), keep);
  t.baseline.baseline_seq = up_to_seq;
  std::set<std::string> paths;
  for (const auto& p : new_paths) paths.insert(normalize_path(p));
  t.baseline.preexisting_paths = std::move(paths);
  t.observed_pids.insert(new_pids.begin(), new_pids.end());
  t.baseline.preexisting_pids = std::move(new_pids);
}

void Inspector::reset_baseline(const SandboxId& id, Seq up_to_seq) {
  ObservedState s = observed_state(id, up_to_seq);
  reset_baseline(id, up_to_seq, std::move(s.paths), std::move(s.pids));
}

void Inspector::exclude_pid(const SandboxId& id, Pid pid) {
  Track& t = track(id);
  std::lock_guard lock(t.mu);
  t.observed_pids.insert(pid);
  t.baseline.excluded_pids.insert(pid);
}

Seq Inspector::latest_seq(const SandboxId& id) const {
  Track& t = track(id);
  std::lock_guard lock(t.mu);
  return t.last_seq;
}

Baseline Inspector::baseline(const SandboxId& id) const {
  Track& t = track(id);
  std::lock_guard lock(t.mu);
  return t.baseline;
}

std::size_t Inspector::interval_length(const SandboxId& id) const {
  Track& t = track(id);
  std::lock_guard lock(t.mu);
  return t.interval.size();
}

}  // namespace agentcr
