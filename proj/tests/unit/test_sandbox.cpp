#include <doctest.h>

#include <random>

#include "agentcr/engine.hpp"
#include "agentcr/portable_backend.hpp"
#include "agentcr/sandbox.hpp"
#include "../support/helpers.hpp"

using namespace agentcr;
using testutil::TempDir;

namespace {

struct Recorder {
  std::vector<OsEvent> events;
  SimSandbox::EventSink sink() {
    return [this](const OsEvent& e) { events.push_back(e); };
  }
};

// Workspace paths with contents, as sandbox-absolute paths.
std::map<std::string, std::string> contents(const SimSandbox& sb) {
  std::map<std::string, std::string> out;
  for (const auto& [rel, bytes] : testutil::dir_contents(sb.workspace_root())) {
    std::string p = "/" + rel;
    if (p.ends_with('/')) p.pop_back();
    out[p] = bytes;
  }
  return out;
}

std::map<Pid, ProcessEntry> registry(const SimSandbox& sb) {
  std::map<Pid, ProcessEntry> out;
  for (const auto& e : sb.process_image().entries) out[e.pid] = e;
  return out;
}

ToolAction random_action(std::mt19937_64& rng, std::uint64_t& counter) {
  static const std::vector<std::string> paths = {"/a", "/b", "/d1/x", "/d1/y", "/d2/z", "/d2/w"};
  const std::string& p = paths[rng() % paths.size()];
  Pid pid = 10 + static_cast<Pid>(rng() % 4);
  switch (rng() % 9) {
    case 0: return CreateFile{p};
    case 1: return DeleteFile{p};
    case 2: return RenameFile{p, paths[rng() % paths.size()]};
    case 3: return SpawnProc{pid, 1000 + rng() % 1000, "w"};
    case 4: return KillProc{pid};
    case 5: return TouchMemory{pid};
    case 6: return ReadFile{p};
    case 7: return Sleep{0.5};
    default: return WriteFile{p, "v" + std::to_string(++counter)};
  }
}

}  // namespace

TEST_CASE("actions emit one event each") {
  TempDir dir("sb");
  Recorder rec;
  SimSandbox sb("sb", dir / "ws", rec.sink());
  std::vector<ToolAction> a = {CreateFile{"/a"}, WriteFile{"/a", "hello"}};
  CHECK(sb.apply(a) == 2);
  CHECK(rec.events.size() == 2);
  CHECK(testutil::read_file(dir / "ws" / "a") == "hello");
  CHECK(rec.events[0].seq == 1);
  CHECK(rec.events[1].seq == 2);

  rec.events.clear();
  std::vector<ToolAction> b = {SpawnProc{5, 10, "sh"}, KillProc{5}};
  sb.apply(b);
  CHECK(rec.events.size() == 2);
  CHECK(std::holds_alternative<ProcSpawn>(rec.events[0].payload));
  CHECK(std::holds_alternative<ProcExit>(rec.events[1].payload));
  CHECK(sb.live_pids().empty());

  rec.events.clear();
  std::vector<ToolAction> c = {ReadFile{"/a"}, Sleep{1.5}};
  sb.apply(c);
  CHECK(rec.events.empty());
  CHECK(tool_duration(c) == doctest::Approx(1.5));

  sb.apply(WriteFile{"/deep/er/f", "x"});
  CHECK(rec.events.size() == 3);  // two parent dirs and the write
  CHECK_THROWS_AS(sb.apply(DeleteFile{"/deep"}), Error);
  CHECK_THROWS_AS(sb.apply(KillProc{999}), Error);
  CHECK_THROWS_AS(sb.apply(CreateFile{"/a"}), Error);
}

TEST_CASE("crash makes the sandbox unusable until restored") {
  TempDir dir("crash");
  PortableBackend backend(dir / "store");
  VirtualClock clock;
  Engine engine(backend, clock, {1, SchedulerPolicy::Reactive, std::nullopt});
  SimSandbox sb("sb", dir / "ws");
  sb.spawn_agent(1, 100);
  sb.apply(WriteFile{"/f", "one"});
  std::vector<ToolAction> spawn = {SpawnProc{7, 50, "srv"}};
  sb.apply(spawn);
  engine.register_sandbox(sb);
  std::string hash = sb.tree_hash();
  auto image = sb.process_image();

  sb.apply(WriteFile{"/f", "two"});
  sb.crash();
  CHECK(sb.crashed());
  CHECK(sb.live_pids().empty());
  try {
    sb.apply(ReadFile{"/f"});
    FAIL("expected SandboxCrashed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::SandboxCrashed);
  }
  engine.restore("sb", kInitialVersion, sb);
  CHECK_FALSE(sb.crashed());
  CHECK(sb.tree_hash() == hash);
  CHECK(sb.process_image() == image);
  CHECK(sb.agent_pid() == 1);
  sb.apply(WriteFile{"/g", "after"});
}

TEST_CASE("emitted events reproduce the workspace and registry diff") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 150; ++trial) {
    CAPTURE(trial);
    TempDir dir("fid");
    SimSandbox sb("sb", dir / "ws");
    std::uint64_t counter = 0;
    for (int i = 0; i < 6; ++i) {
      try {
        sb.apply(random_action(rng, counter));
      } catch (const Error&) {
      }
    }
    auto before_fs = contents(sb);
    auto before_proc = registry(sb);
    std::set<std::string> paths;
    for (const auto& [p, _] : before_fs) paths.insert(p);
    Inspector fresh;
    fresh.register_sandbox("sb", paths, sb.live_pids());
    std::size_t emitted = 0;
    sb.set_sink([&](const OsEvent& e) {
      fresh.ingest_event(e);
      ++emitted;
    });
    for (int i = 0; i < 15; ++i) {
      ToolAction a = random_action(rng, counter);
      Seq s0 = sb.next_seq();
      try {
        sb.apply(a);
      } catch (const Error&) {
        CHECK(sb.next_seq() == s0);
        continue;
      }
      bool silent = std::holds_alternative<ReadFile>(a) || std::holds_alternative<Sleep>(a);
      if (silent) CHECK(sb.next_seq() == s0);
      else CHECK(sb.next_seq() > s0);
    }
    auto after_fs = contents(sb);
    auto after_proc = registry(sb);
    auto r = emitted ? fresh.compute_net_change("sb") : NetChangeReport{};

    std::set<std::string> created, deleted;
    for (const auto& [p, _] : after_fs) if (!before_fs.contains(p)) created.insert(p);
    for (const auto& [p, _] : before_fs) if (!after_fs.contains(p)) deleted.insert(p);
    std::set<std::string> got_created, got_deleted, got_modified;
    for (const auto& [p, c] : r.changed_paths) {
      if (c == PathChange::Created) got_created.insert(p);
      if (c == PathChange::Deleted) got_deleted.insert(p);
      if (c == PathChange::Modified) got_modified.insert(p);
    }
    CHECK(got_created == created);
    CHECK(got_deleted == deleted);
    for (const auto& [p, bytes] : after_fs) {
      auto it = before_fs.find(p);
      if (it != before_fs.end() && it->second != bytes) CHECK(got_modified.contains(p));
    }
    for (const auto& [pid, e] : after_proc) {
      auto it = before_proc.find(pid);
      if (it == before_proc.end()) {
        CHECK(r.proc_delta.at(pid) == ProcChange::Spawned);
      } else if (it->second.memory_version != e.memory_version) {
        CHECK(r.proc_delta.contains(pid));
      }
    }
    for (const auto& [pid, e] : before_proc) {
      if (!after_proc.contains(pid)) CHECK(r.proc_delta.at(pid) == ProcChange::Exited);
    }
  }
}

TEST_CASE("same actions give the same tree hash and event log") {
  auto run = [](const std::filesystem::path& root) {
    Recorder rec;
    SimSandbox sb("sb", root, rec.sink());
    std::mt19937_64 rng(17);
    std::uint64_t counter = 0;
    for (int i = 0; i < 40; ++i) {
      try {
        sb.apply(random_action(rng, counter));
      } catch (const Error&) {
      }
    }
    std::vector<std::size_t> kinds;
    for (const auto& e : rec.events) kinds.push_back(e.payload.index());
    return std::make_pair(sb.tree_hash(), kinds);
  };
  TempDir a("det"), b("det");
  CHECK(run(a.path()) == run(b.path()));
}
