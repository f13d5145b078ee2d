#include <doctest.h>

#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "agentcr/event_log.hpp"
#include "agentcr/inspector.hpp"
#include "../support/oracle.hpp"

using namespace agentcr;

namespace {

OsEvent ev(const SandboxId& id, Seq seq, EventPayload p) { return OsEvent{id, seq, std::move(p)}; }

using oracle::Materialized;
using oracle::oracle_diff;
using oracle::random_event;

}  // namespace

TEST_CASE("ingest rejects stale sequence numbers and unknown sandboxes") {
  Inspector insp;
  insp.register_sandbox("s", {}, {});
  insp.ingest_event(ev("s", 1, FsCreate{"/tmp/a"}));
  CHECK(insp.interval_length("s") == 1);
  try {
    insp.ingest_event(ev("s", 1, FsWrite{"/tmp/a"}));
    FAIL("expected OutOfOrderSeq");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::OutOfOrderSeq);
  }
  try {
    insp.ingest_event(ev("other", 7, ProcSpawn{42}));
    FAIL("expected UnknownSandbox");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownSandbox);
  }
}

TEST_CASE("transient files and processes leave no trace") {
  Inspector insp;
  insp.register_sandbox("s", {}, {});
  insp.ingest_event(ev("s", 1, FsCreate{"/t/x"}));
  insp.ingest_event(ev("s", 2, FsWrite{"/t/x"}));
  insp.ingest_event(ev("s", 3, FsDelete{"/t/x"}));
  auto r = insp.compute_net_change("s");
  CHECK_FALSE(r.fs_changed);
  CHECK_FALSE(r.proc_changed);
  CHECK(classify(r) == CheckpointClass::Skip);

  Inspector b;
  b.register_sandbox("s", {}, {});
  b.ingest_event(ev("s", 1, ProcSpawn{9}));
  b.ingest_event(ev("s", 2, ProcExit{9}));
  b.ingest_event(ev("s", 3, FsCreate{"/out"}));
  auto r2 = b.compute_net_change("s");
  CHECK(r2.changed_paths == std::map<std::string, PathChange>{{"/out", PathChange::Created}});
  CHECK(r2.proc_delta.empty());
  CHECK(classify(r2) == CheckpointClass::FsOnly);
}

TEST_CASE("preexisting write and dirty memory match the materialized diff") {
  Inspector insp;
  insp.register_sandbox("s", {"/cfg"}, {3});
  insp.ingest_event(ev("s", 1, FsWrite{"/cfg"}));
  insp.ingest_event(ev("s", 2, ProcDirty{3}));
  auto r = insp.compute_net_change("s");

  Materialized before;
  before.paths["/cfg"] = ++before.counter;
  before.pids[3] = {++before.counter, 0};
  Materialized after = before;
  after.apply(FsWrite{"/cfg"});
  after.apply(ProcDirty{3});
  CHECK(r == oracle_diff("s", 2, before, after));
  CHECK(r.changed_paths.at("/cfg") == PathChange::Modified);
  CHECK(r.proc_delta.at(3) == ProcChange::DirtiedMemory);
  CHECK(classify(r) == CheckpointClass::Full);
}

TEST_CASE("classify follows the decision table") {
  NetChangeReport r;
  for (bool fs : {false, true}) {
    for (bool proc : {false, true}) {
      r.fs_changed = fs;
      r.proc_changed = proc;
      CheckpointClass want = fs && proc ? CheckpointClass::Full
                             : fs       ? CheckpointClass::FsOnly
                             : proc     ? CheckpointClass::ProcOnly
                                        : CheckpointClass::Skip;
      CHECK(classify(r) == want);
    }
  }
}

TEST_CASE("baseline reset semantics") {
  Inspector insp;
  insp.register_sandbox("s", {}, {});
  for (Seq i = 1; i <= 10; ++i) insp.ingest_event(ev("s", i, FsWrite{"/f" + std::to_string(i)}));
  CHECK(classify(insp.compute_net_change("s")) == CheckpointClass::FsOnly);
  insp.reset_baseline("s", 10);
  CHECK(classify(insp.compute_net_change("s")) == CheckpointClass::Skip);
  CHECK(insp.baseline("s").preexisting_paths.size() == 10);

  for (Seq i = 11; i <= 12; ++i) insp.ingest_event(ev("s", i, FsWrite{"/g"}));
  insp.reset_baseline("s", 12);
  try {
    insp.reset_baseline("s", 10);
    FAIL("expected BaselineRegression");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::BaselineRegression);
  }
  CHECK_THROWS_AS(insp.reset_baseline("s", 99), Error);
  CHECK_THROWS_AS(insp.compute_net_change("s", 99), Error);

  Inspector b;
  b.register_sandbox("s", {}, {});
  b.ingest_event(ev("s", 5, FsCreate{"/a"}));
  b.ingest_event(ev("s", 6, FsWrite{"/other"}));
  b.reset_baseline("s", 6);
  b.ingest_event(ev("s", 7, FsDelete{"/a"}));
  auto r = b.compute_net_change("s");
  CHECK(r.changed_paths == std::map<std::string, PathChange>{{"/a", PathChange::Deleted}});
}

TEST_CASE("reset clears dirty history of surviving pids") {
  Inspector insp;
  insp.register_sandbox("s", {}, {3});
  insp.ingest_event(ev("s", 1, ProcDirty{3}));
  CHECK(classify(insp.compute_net_change("s")) == CheckpointClass::ProcOnly);
  insp.reset_baseline("s", 1);
  CHECK(insp.compute_net_change("s").proc_delta.empty());
  CHECK(insp.baseline("s").preexisting_pids == std::set<Pid>{3});
}

TEST_CASE("rename folds as delete plus create") {
  Inspector insp;
  insp.register_sandbox("s", {"/old", "/dst"}, {});
  insp.ingest_event(ev("s", 1, FsRename{"/old", "/new"}));
  insp.ingest_event(ev("s", 2, FsCreate{"/tmp1"}));
  insp.ingest_event(ev("s", 3, FsRename{"/tmp1", "/dst"}));
  auto r = insp.compute_net_change("s");
  CHECK(r.changed_paths == std::map<std::string, PathChange>{{"/old", PathChange::Deleted},
                                                             {"/new", PathChange::Created},
                                                             {"/dst", PathChange::Modified}});
}

TEST_CASE("unknown pids and paths are treated as preexisting") {
  Inspector insp;
  insp.register_sandbox("s", {}, {});
  insp.ingest_event(ev("s", 1, ProcExit{77}));
  insp.ingest_event(ev("s", 2, ProcDirty{78}));
  insp.ingest_event(ev("s", 3, FsDelete{"/ghost"}));
  auto r = insp.compute_net_change("s");
  CHECK(r.proc_delta.at(77) == ProcChange::Exited);
  CHECK(r.proc_delta.at(78) == ProcChange::DirtiedMemory);
  CHECK(r.changed_paths.at("/ghost") == PathChange::Deleted);
}

TEST_CASE("spawned dominates dirtied and agent pids are excluded") {
  Inspector insp;
  insp.register_sandbox("s", {}, {5}, {1});
  insp.ingest_event(ev("s", 1, ProcSpawn{2}));
  insp.ingest_event(ev("s", 2, ProcDirty{2}));
  insp.ingest_event(ev("s", 3, ProcExit{5}));
  insp.ingest_event(ev("s", 4, ProcSpawn{5}));
  insp.ingest_event(ev("s", 5, ProcDirty{5}));
  insp.ingest_event(ev("s", 6, ProcDirty{1}));
  insp.ingest_event(ev("s", 7, ProcSpawn{100, true}));
  insp.ingest_event(ev("s", 8, ProcDirty{100}));
  auto r = insp.compute_net_change("s");
  CHECK(r.proc_delta == std::map<Pid, ProcChange>{{2, ProcChange::Spawned}, {5, ProcChange::Spawned}});
}

TEST_CASE("path normalization") {
  CHECK(normalize_path("/a//b/./c/") == "/a/b/c");
  CHECK(normalize_path("/") == "/");
  CHECK_THROWS_AS(normalize_path("rel/x"), Error);
  CHECK_THROWS_AS(normalize_path("/a/../b"), Error);
  Inspector insp;
  insp.register_sandbox("s", {"/a/b"}, {});
  insp.ingest_event(ev("s", 1, FsWrite{"//a/./b"}));
  CHECK(insp.compute_net_change("s").changed_paths.at("/a/b") == PathChange::Modified);
}

TEST_CASE("random event sequences agree with the state-diff oracle") {
  std::mt19937_64 rng(20240611);
  for (int trial = 0; trial < 2000; ++trial) {
    Materialized s0 = oracle::random_state(rng);
    std::set<std::string> paths;
    std::set<Pid> pids;
    for (const auto& [p, _] : s0.paths) paths.insert(p);
    for (const auto& [p, _] : s0.pids) pids.insert(p);

    Inspector insp;
    insp.register_sandbox("s", paths, pids);
    Materialized cur = s0;
    std::size_t n = rng() % 21;
    for (Seq seq = 1; seq <= n; ++seq) {
      EventPayload p = random_event(rng, cur);
      cur.apply(p);
      insp.ingest_event(ev("s", seq, p));
    }
    auto got = insp.compute_net_change("s");
    auto want = oracle_diff("s", n, s0, cur);
    REQUIRE_MESSAGE(got == want, "trial " << trial);
    // No false negatives in either dimension, and repeat reads agree.
    CHECK(got.fs_changed == want.fs_changed);
    CHECK(got.proc_changed == want.proc_changed);
    CHECK(insp.compute_net_change("s") == got);

    auto obs = insp.observed_state("s", n);
    std::set<std::string> cur_paths;
    for (const auto& [p, _] : cur.paths) cur_paths.insert(p);
    CHECK(obs.paths == cur_paths);

    insp.reset_baseline("s", n);
    CHECK(classify(insp.compute_net_change("s")) == CheckpointClass::Skip);
  }
}

TEST_CASE("concurrent ingestion on separate sandboxes") {
  Inspector insp;
  constexpr int kSandboxes = 8;
  constexpr Seq kEvents = 2000;
  for (int i = 0; i < kSandboxes; ++i) insp.register_sandbox("s" + std::to_string(i), {}, {});
  std::vector<std::thread> threads;
  for (int i = 0; i < kSandboxes; ++i) {
    threads.emplace_back([&, i] {
      SandboxId id = "s" + std::to_string(i);
      for (Seq seq = 1; seq <= kEvents; ++seq) {
        insp.ingest_event(ev(id, seq, FsWrite{"/f" + std::to_string(seq % 16)}));
        if (seq % 100 == 0) (void)insp.compute_net_change(id, seq);
      }
    });
  }
  for (auto& t : threads) t.join();
  for (int i = 0; i < kSandboxes; ++i) {
    auto r = insp.compute_net_change("s" + std::to_string(i));
    CHECK(r.changed_paths.size() == 16);
    CHECK(insp.latest_seq("s" + std::to_string(i)) == kEvents);
  }
}

TEST_CASE("event log round trip") {
  std::vector<OsEvent> events = {
      ev("sb\t1", 1, FsCreate{"/a b"}),   ev("sb\t1", 2, FsWrite{"/a b"}),
      ev("sb\t1", 3, FsRename{"/a b", "/c"}), ev("sb\t1", 4, FsDelete{"/c"}),
      ev("sb\t1", 5, ProcSpawn{7, true}), ev("sb\t1", 6, ProcDirty{7}),
      ev("sb\t1", 7, ProcExit{7}),
  };
  std::stringstream buf;
  write_event_log(buf, events);
  CHECK(buf.str().starts_with(kEventLogHeader));
  auto back = read_event_log(buf);
  REQUIRE(back.size() == events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    CHECK(back[i].sandbox_id == events[i].sandbox_id);
    CHECK(back[i].seq == events[i].seq);
    CHECK(back[i].payload.index() == events[i].payload.index());
    CHECK(encode_event(back[i]) == encode_event(events[i]));
  }
  Inspector insp;
  insp.register_sandbox("sb\t1", {}, {});
  std::stringstream again(buf.str());
  CHECK(ingest_event_log(insp, again) == events.size());
  CHECK(insp.latest_seq("sb\t1") == 7);
  CHECK_THROWS_AS(decode_event("x\t1\tbogus"), Error);
}
