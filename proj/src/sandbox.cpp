#include "agentcr/sandbox.hpp"

#include <fstream>

#include "agentcr/digest.hpp"
#include "agentcr/portable_backend.hpp"

namespace fs = std::filesystem;

namespace agentcr {

Seconds tool_duration(std::span<const ToolAction> actions) {
  Seconds total = 0;
  for (const auto& a : actions) {
    if (const auto* s = std::get_if<Sleep>(&a)) total += s->duration;
  }
  return total;
}

SimSandbox::SimSandbox(SandboxId id, fs::path workspace_root, EventSink sink)
    : id_(std::move(id)), root_(std::move(workspace_root)), sink_(std::move(sink)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create workspace " + root_.string());
}

void SimSandbox::set_sink(EventSink sink) {
  std::lock_guard lock(mu_);
  sink_ = std::move(sink);
}

fs::path SimSandbox::host(const std::string& sandbox_path) const {
  std::string norm = normalize_path(sandbox_path);
  if (norm == "/") throw Error(Errc::PathConflict, "cannot mutate the workspace root");
  return root_ / norm.substr(1);
}

void SimSandbox::emit(EventPayload payload) {
  OsEvent ev{id_, next_seq_++, std::move(payload)};
  if (sink_) sink_(ev);
}

void SimSandbox::ensure_parents(const std::string& path) {
  std::string norm = normalize_path(path);
  std::size_t pos = 0;
  while ((pos = norm.find('/', pos + 1)) != std::string::npos) {
    std::string dir = norm.substr(0, pos);
    fs::path p = root_ / dir.substr(1);
    if (fs::is_directory(fs::symlink_status(p))) continue;
    if (fs::exists(fs::symlink_status(p))) {
      throw Error(Errc::PathConflict, dir + " exists and is not a directory");
    }
    fs::create_directory(p);
    emit(FsCreate{dir});
  }
}

void SimSandbox::apply_one(const ToolAction& action) {
  std::visit(
      [this](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, CreateFile>) {
          fs::path p = host(a.path);
          if (fs::exists(fs::symlink_status(p))) throw Error(Errc::PathConflict, a.path + " exists");
          ensure_parents(a.path);
          std::ofstream(p, std::ios::binary);
          emit(FsCreate{normalize_path(a.path)});
        } else if constexpr (std::is_same_v<T, WriteFile>) {
          fs::path p = host(a.path);
          if (fs::is_directory(fs::symlink_status(p))) {
            throw Error(Errc::PathConflict, a.path + " is a directory");
          }
          ensure_parents(a.path);
          std::ofstream out(p, std::ios::binary | std::ios::trunc);
          out.write(a.bytes.data(), static_cast<std::streamsize>(a.bytes.size()));
          if (!out) throw Error(Errc::IoFailure, "write failed: " + a.path);
          emit(FsWrite{normalize_path(a.path)});
        } else if constexpr (std::is_same_v<T, DeleteFile>) {
          fs::path p = host(a.path);
          auto st = fs::symlink_status(p);
          if (!fs::exists(st)) throw Error(Errc::PathConflict, a.path + " does not exist");
          if (fs::is_directory(st) && !fs::is_empty(p)) {
            throw Error(Errc::PathConflict, a.path + " is a non-empty directory");
          }
          fs::remove(p);
          emit(FsDelete{normalize_path(a.path)});
        } else if constexpr (std::is_same_v<T, RenameFile>) {
          fs::path from = host(a.old_path);
          fs::path to = host(a.new_path);
          auto st = fs::symlink_status(from);
          if (!fs::exists(st)) throw Error(Errc::PathConflict, a.old_path + " does not exist");
          if (fs::is_directory(st)) {
            throw Error(Errc::PathConflict, "directory renames must be expanded per path");
          }
          if (fs::is_directory(fs::symlink_status(to))) {
            throw Error(Errc::PathConflict, a.new_path + " is a directory");
          }
          ensure_parents(a.new_path);
          fs::rename(from, to);
          emit(FsRename{normalize_path(a.old_path), normalize_path(a.new_path)});
        } else if constexpr (std::is_same_v<T, SpawnProc>) {
          if (registry_.contains(a.pid)) {
            throw Error(Errc::PathConflict, "pid " + std::to_string(a.pid) + " already live");
          }
          registry_[a.pid] = ProcessEntry{a.pid, a.label, a.footprint, 0, false, false};
          emit(ProcSpawn{a.pid, false});
        } else if constexpr (std::is_same_v<T, KillProc>) {
          if (!registry_.contains(a.pid)) {
            throw Error(Errc::PathConflict, "pid " + std::to_string(a.pid) + " not live");
          }
          registry_.erase(a.pid);
          emit(ProcExit{a.pid});
        } else if constexpr (std::is_same_v<T, TouchMemory>) {
          auto it = registry_.find(a.pid);
          if (it == registry_.end()) {
            throw Error(Errc::PathConflict, "pid " + std::to_string(a.pid) + " not live");
          }
          ++it->second.memory_version;
          it->second.dirty = true;
          emit(ProcDirty{a.pid});
        } else if constexpr (std::is_same_v<T, ReadFile>) {
          if (!fs::exists(fs::symlink_status(host(a.path)))) {
            throw Error(Errc::PathConflict, a.path + " does not exist");
          }
        } else if constexpr (std::is_same_v<T, Sleep>) {
          // Time is accounted by the driver.
        }
      },
      action);
}

std::size_t SimSandbox::apply(std::span<const ToolAction> actions) {
  std::lock_guard lock(mu_);
  std::size_t applied = 0;
  for (const auto& action : actions) {
    if (crashed_) throw Error(Errc::SandboxCrashed, id_);
    apply_one(action);
    ++applied;
  }
  return applied;
}

void SimSandbox::spawn_agent(Pid pid, std::uint64_t footprint) {
  std::lock_guard lock(mu_);
  if (crashed_) throw Error(Errc::SandboxCrashed, id_);
  if (registry_.contains(pid)) throw Error(Errc::PathConflict, "agent pid already live");
  registry_[pid] = ProcessEntry{pid, "agent", footprint, 0, false, true};
  agent_pid_ = pid;
  emit(ProcSpawn{pid, true});
}

void SimSandbox::crash() {
  std::lock_guard lock(mu_);
  registry_.clear();
  crashed_ = true;
}

bool SimSandbox::crashed() const {
  std::lock_guard lock(mu_);
  return crashed_;
}

ProcessImage SimSandbox::process_image() const {
  std::lock_guard lock(mu_);
  ProcessImage image;
  for (const auto& [pid, e] : registry_) image.entries.push_back(e);
  return image;
}

void SimSandbox::load_process_image(const ProcessImage& image) {
  std::lock_guard lock(mu_);
  registry_.clear();
  for (const auto& e : image.entries) {
    registry_[e.pid] = e;
    if (e.is_agent) agent_pid_ = e.pid;
  }
}

void SimSandbox::mark_restored() {
  std::lock_guard lock(mu_);
  crashed_ = false;
}

void SimSandbox::mark_invalid() {
  std::lock_guard lock(mu_);
  crashed_ = true;
}

Seq SimSandbox::next_seq() const {
  std::lock_guard lock(mu_);
  return next_seq_;
}

std::string SimSandbox::tree_hash() const {
  return sha256_hex(render_tree_manifest(scan_tree(root_)));
}

std::set<std::string> SimSandbox::existing_paths() const {
  std::set<std::string> paths;
  for (const auto& e : scan_tree(root_)) paths.insert(e.path);
  return paths;
}

std::set<Pid> SimSandbox::live_pids() const {
  std::lock_guard lock(mu_);
  std::set<Pid> pids;
  for (const auto& [pid, e] : registry_) pids.insert(pid);
  return pids;
}

std::optional<Pid> SimSandbox::agent_pid() const {
  std::lock_guard lock(mu_);
  return agent_pid_;
}

}  // namespace agentcr
