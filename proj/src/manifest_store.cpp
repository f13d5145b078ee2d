#include "agentcr/manifest_store.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "agentcr/text.hpp"

namespace fs = std::filesystem;

namespace agentcr {

namespace {

constexpr std::string_view kIndexHeader = "#agentcr-versions v1";

ArtifactRecord artifact_from_index(const SandboxId& id, ArtifactKind kind, TurnIndex turn,
                                   std::string handle) {
  ArtifactRecord a;
  a.kind = kind;
  a.sandbox_id = id;
  a.turn_index = turn;
  a.artifact_id = id + (kind == ArtifactKind::ProcessState ? "/P" : "/F") + std::to_string(turn);
  a.backend_handle = std::move(handle);
  return a;
}

}  // namespace

std::string escape_sandbox_dir(const SandboxId& id) {
  static constexpr char kDigits[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : id) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kDigits[c >> 4]);
      out.push_back(kDigits[c & 0xf]);
    }
  }
  if (out.empty() || out == "." || out == "..") out = "%" + out;
  return out;
}

SandboxId unescape_sandbox_dir(const std::string& name) {
  std::string out;
  for (std::size_t i = 0; i < name.size(); ++i) {
    if (name[i] != '%') {
      out.push_back(name[i]);
    } else if (i + 2 < name.size()) {
      out.push_back(static_cast<char>(parse_int<int>(name.substr(i + 1, 2), "escape", 16)));
      i += 2;
    }
  }
  return out;
}

ManifestStore::ManifestStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(*root_ / "sandboxes", ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create manifest store " + root_->string());
}

void ManifestStore::set_initial(const SandboxId& id, const CheckpointManifest& initial) {
  Chain& chain = chains_[id];
  chain.initial = initial;
  chain.versions.clear();
  persist(id, chain);
}

void ManifestStore::append(const SandboxId& id, const CheckpointManifest& manifest) {
  Chain& chain = chains_[id];
  chain.versions.push_back(manifest);
  try {
    persist(id, chain);
  } catch (...) {
    chain.versions.pop_back();
    throw;
  }
}

bool ManifestStore::has_sandbox(const SandboxId& id) const { return chains_.contains(id); }

const CheckpointManifest* ManifestStore::initial(const SandboxId& id) const {
  auto it = chains_.find(id);
  if (it == chains_.end() || !it->second.initial) return nullptr;
  return &*it->second.initial;
}

const std::vector<CheckpointManifest>& ManifestStore::versions(const SandboxId& id) const {
  static const std::vector<CheckpointManifest> kEmpty;
  auto it = chains_.find(id);
  return it == chains_.end() ? kEmpty : it->second.versions;
}

const CheckpointManifest* ManifestStore::find(const SandboxId& id, VersionId version) const {
  auto it = chains_.find(id);
  if (it == chains_.end()) return nullptr;
  if (version == kInitialVersion) return it->second.initial ? &*it->second.initial : nullptr;
  for (const auto& m : it->second.versions) {
    if (m.version_id == version) return &m;
  }
  return nullptr;
}

const CheckpointManifest* ManifestStore::head(const SandboxId& id) const {
  auto it = chains_.find(id);
  if (it == chains_.end()) return nullptr;
  if (!it->second.versions.empty()) return &it->second.versions.back();
  return it->second.initial ? &*it->second.initial : nullptr;
}

std::vector<SandboxId> ManifestStore::sandboxes() const {
  std::vector<SandboxId> ids;
  for (const auto& [id, chain] : chains_) ids.push_back(id);
  return ids;
}

void ManifestStore::persist(const SandboxId& id, const Chain& chain) const {
  if (!root_) return;
  fs::path dir = *root_ / "sandboxes" / escape_sandbox_dir(id);
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ostringstream out;
  out << kIndexHeader << '\n';
  auto line = [&](const CheckpointManifest& m) {
    out << m.version_id << '\t' << escape_field(m.proc_artifact.backend_handle) << '\t'
        << escape_field(m.fs_artifact.backend_handle) << '\t' << m.proc_turn << '\t' << m.fs_turn
        << '\t' << m.head_turn << '\t' << m.parent_version << '\n';
  };
  if (chain.initial) line(*chain.initial);
  for (const auto& m : chain.versions) line(m);

  fs::path tmp = dir / "versions.idx.tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    f << out.str();
    if (!f) throw Error(Errc::IoFailure, "cannot write " + tmp.string());
  }
  fs::rename(tmp, dir / "versions.idx", ec);
  if (ec) throw Error(Errc::IoFailure, "cannot publish index for " + id);
}

ManifestStore ManifestStore::load(const fs::path& root) {
  ManifestStore store(root);
  for (const auto& entry : fs::directory_iterator(root / "sandboxes")) {
    fs::path idx = entry.path() / "versions.idx";
    if (!fs::exists(idx)) continue;
    SandboxId id = unescape_sandbox_dir(entry.path().filename().string());
    std::ifstream in(idx);
    std::string text;
    if (!std::getline(in, text) || text != kIndexHeader) {
      throw Error(Errc::CorruptArtifact, "bad version index " + idx.string());
    }
    Chain chain;
    while (std::getline(in, text)) {
      if (text.empty()) continue;
      auto f = split_tabs(text);
      if (f.size() != 7) throw Error(Errc::CorruptArtifact, "bad version line in " + idx.string());
      CheckpointManifest m;
      m.version_id = parse_int<VersionId>(f[0], "version");
      m.proc_turn = parse_int<TurnIndex>(f[3], "proc turn");
      m.fs_turn = parse_int<TurnIndex>(f[4], "fs turn");
      m.head_turn = parse_int<TurnIndex>(f[5], "head turn");
      m.parent_version = parse_int<VersionId>(f[6], "parent");
      m.proc_artifact = artifact_from_index(id, ArtifactKind::ProcessState, m.proc_turn,
                                            unescape_field(f[1]));
      m.fs_artifact = artifact_from_index(id, ArtifactKind::FilesystemState, m.fs_turn,
                                          unescape_field(f[2]));
      if (m.version_id == kInitialVersion) {
        chain.initial = std::move(m);
      } else {
        chain.versions.push_back(std::move(m));
      }
    }
    store.chains_[id] = std::move(chain);
  }
  return store;
}

}  // namespace agentcr
