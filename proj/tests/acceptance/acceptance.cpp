#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "agentcr/engine.hpp"
#include "agentcr/portable_backend.hpp"
#include "agentcr/proxy.hpp"
#include "agentcr/replay.hpp"
#include "agentcr/sandbox.hpp"
#include "../support/helpers.hpp"
#include "../support/oracle.hpp"

using namespace agentcr;
using testutil::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 -------------------------------------------------------------------------
Outcome net_change_oracle() {
  auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  constexpr int kCases = 10000;
  int agree = 0;
  int false_neg = 0;
  int false_pos = 0;
  for (int i = 0; i < kCases; ++i) {
    oracle::Materialized s0 = oracle::random_state(rng);
    std::set<std::string> paths;
    std::set<Pid> pids;
    for (const auto& [p, _] : s0.paths) paths.insert(p);
    for (const auto& [p, _] : s0.pids) pids.insert(p);
    Inspector insp;
    insp.register_sandbox("s", paths, pids);
    oracle::Materialized cur = s0;
    std::size_t n = rng() % 21;
    for (Seq seq = 1; seq <= n; ++seq) {
      EventPayload p = oracle::random_event(rng, cur);
      cur.apply(p);
      insp.ingest_event({"s", seq, p});
    }
    auto got = insp.compute_net_change("s");
    auto want = oracle::oracle_diff("s", n, s0, cur);
    if (got == want && classify(got) == classify(want)) ++agree;
    false_neg += (want.fs_changed && !got.fs_changed) + (want.proc_changed && !got.proc_changed);
    false_pos += (!want.fs_changed && got.fs_changed) + (!want.proc_changed && got.proc_changed);
  }
  double dt = seconds_since(t0);
  return {agree == kCases && dt < 60.0,
          fmt("%d/%d cases agree, fn=%d fp=%d, %.2f s", agree, kCases, false_neg, false_pos, dt)};
}

// 2 -------------------------------------------------------------------------
double annotated_skip_ratio(const Trace& t) {
  std::size_t skip = 0;
  for (const auto& task : t.tasks) {
    for (const auto& turn : task.turns) skip += turn.expected == CheckpointClass::Skip;
  }
  return static_cast<double>(skip) / static_cast<double>(t.turn_count());
}

Outcome sparsity(const fs::path& data) {
  GenSpec spec;
  spec.tasks = 8;
  spec.turns = 25;
  spec.stateless_fraction = 0.75;
  Trace gen = gen_trace(spec);
  auto mg = replay(gen, FaultPlan{}, ReplayConfig{});
  Trace het = load_trace((data / "heterogeneous.jsonl").string());
  auto mh = replay(het, FaultPlan{}, ReplayConfig{});
  bool ok = mg.skip_ratio() == 0.75 && annotated_skip_ratio(gen) == 0.75 &&
            mh.skip_ratio() >= 0.70 && mh.skip_ratio() == annotated_skip_ratio(het);
  return {ok, fmt("generated skip=%.4f (annotated %.4f), heterogeneous skip=%.4f", mg.skip_ratio(),
                  annotated_skip_ratio(gen), mh.skip_ratio())};
}

// 3 -------------------------------------------------------------------------
Outcome crash_recovery() {
  auto t0 = std::chrono::steady_clock::now();
  GenSpec spec;
  spec.tasks = 50;
  spec.turns = 20;
  spec.seed = 3;
  Trace trace = gen_trace(spec);
  FaultPlan plan = make_fault_plan(trace, 3, 1.0);
  ReplayConfig c;
  c.backend = "portable";
  c.mode = ModeSelection::Alternate;
  c.seed = 3;
  auto m = replay(trace, plan, c);
  std::size_t correct = 0, crashed = 0, ff = 0, reissue = 0;
  for (const auto& t : m.tasks) {
    correct += t.recovery_correct;
    crashed += t.crashed;
    ff += t.fast_forward_manifest;
    reissue += t.reissued_commands > 0;
  }
  double dt = seconds_since(t0);
  bool ok = m.tasks.size() == 50 && crashed == 50 && correct == 50 && ff >= 10 && reissue >= 10 &&
            dt < 300;
  return {ok, fmt("%zu/%zu correct, %zu crashed, fast-forward tasks=%zu, reissue tasks=%zu, %.1f s",
                  correct, m.tasks.size(), crashed, ff, reissue, dt)};
}

// 4 -------------------------------------------------------------------------
Outcome overlap(const fs::path& data) {
  Trace het = load_trace((data / "heterogeneous.jsonl").string());
  ReplayConfig c16;
  c16.density = 16;
  auto m16 = replay(het, FaultPlan{}, c16);
  ReplayConfig c96;
  c96.density = 96;
  auto m96 = replay(het, FaultPlan{}, c96);
  double p50 = percentile(m16.exposed_fractions(), 0.5);
  double p95 = percentile(m96.exposed_fractions(), 0.95);
  bool ok = p50 == 0.0 && std::isfinite(p95) && p95 >= 0.00365 && p95 < 0.10;
  return {ok, fmt("density16 p50=%.6f, density96 p95=%.4f%% (reference 3.65%%)", p50, 100 * p95)};
}

// 5 -------------------------------------------------------------------------
Outcome reactive_vs_fifo(const fs::path& data) {
  Trace stress = load_trace((data / "stress.jsonl").string());
  std::ostringstream detail;
  bool ok = true;
  for (double ws : {0.2, 0.4, 0.6}) {
    double p50[2];
    for (int i = 0; i < 2; ++i) {
      ReplayConfig c;
      c.density = 96;
      c.wait_scale = ws;
      c.policy = i == 0 ? SchedulerPolicy::Reactive : SchedulerPolicy::Fifo;
      p50[i] = percentile(replay(stress, FaultPlan{}, c).exposed_fractions(), 0.5);
    }
    double reduction = p50[1] > 0 ? 1.0 - p50[0] / p50[1] : 0.0;
    ok = ok && p50[0] <= p50[1];
    if (ws == 0.2) ok = ok && reduction >= 0.20;
    detail << fmt("ws=%.1f reactive=%.5f fifo=%.5f reduction=%.1f%%; ", ws, p50[0], p50[1],
                  100 * reduction);
  }
  return {ok, detail.str()};
}

// 6 -------------------------------------------------------------------------
struct StateLog {
  std::map<TurnIndex, std::map<std::string, std::string>> fs;
  std::map<TurnIndex, ProcessImage> proc;
};

bool listed_versions_restore(Engine& e, const SandboxId& id, const StateLog& log,
                             const fs::path& scratch, int& restores) {
  for (const auto& m : e.list_versions(id)) {
    SandboxId fork = id + "-check-" + std::to_string(restores++);
    SimSandbox target(fork, scratch / fork);
    e.restore(id, m.version_id, target);
    if (testutil::dir_contents(target.workspace_root()) != log.fs.at(m.fs_turn)) return false;
    if (target.process_image() != log.proc.at(m.proc_turn)) return false;
  }
  return true;
}

Outcome transactional_publication() {
  constexpr int kRuns = 1000;
  int broken = 0;
  int nonterminal = 0;
  int listed = 0;
  int failed_jobs = 0;
  int restores = 0;
  for (int run = 0; run < kRuns; ++run) {
    TempDir dir("txn");
    PortableBackend backend(dir / "store");
    VirtualClock clock;
    Engine engine(backend, clock, {1, SchedulerPolicy::Reactive, std::nullopt});
    DetRng rng(static_cast<std::uint64_t>(run) + 1);
    DetRng fault_rng(static_cast<std::uint64_t>(run) * 7919 + 3);
    engine.set_fault_hook([&](const CheckpointJob&, Lifecycle) { return fault_rng.unit() < 0.3; });
    SimSandbox sb("sb", dir / "ws");
    StateLog log;
    log.fs[kInitialTurn] = testutil::dir_contents(sb.workspace_root());
    log.proc[kInitialTurn] = sb.process_image();
    engine.register_sandbox(sb);
    std::vector<JobId> jobs;
    for (TurnIndex t = 0; t < 8; ++t) {
      std::vector<ToolAction> acts;
      acts.push_back(WriteFile{"/f" + std::to_string(rng.below(4)), "r" + std::to_string(run) + "t" + std::to_string(t)});
      auto live = sb.live_pids();
      if (live.empty() || rng.below(2)) {
        Pid p = 10 + t;
        acts.push_back(SpawnProc{p, 1 + rng.below(100), "w"});
      } else {
        acts.push_back(TouchMemory{*live.begin()});
      }
      sb.apply(acts);
      log.fs[t] = testutil::dir_contents(sb.workspace_root());
      log.proc[t] = sb.process_image();
      auto cls = static_cast<CheckpointClass>(rng.below(4));
      if (cls != CheckpointClass::Skip) {
        jobs.push_back(engine.submit({"sb", t, cls, 0}));
        if (rng.below(2)) engine.promote(jobs.back());
        while (engine.run_one()) {
        }
      }
      if (rng.below(5) == 0) {
        auto versions = engine.list_versions("sb");
        if (!versions.empty()) {
          const auto& v = versions[rng.below(versions.size())];
          engine.restore("sb", v.version_id, sb);
        }
      }
    }
    if (!listed_versions_restore(engine, "sb", log, dir.path(), restores)) ++broken;
    listed += static_cast<int>(engine.list_versions("sb").size());
    for (JobId j : jobs) {
      Lifecycle l = engine.lifecycle(j);
      nonterminal += !is_terminal(l);
      failed_jobs += l == Lifecycle::Failed;
    }
    auto st = engine.stats();
    if (st.done + st.failed != st.submitted) ++nonterminal;
  }
  return {broken == 0 && nonterminal == 0,
          fmt("%d runs, %d listed versions verified, %d failed jobs, %d broken, %d non-terminal",
              kRuns, listed, failed_jobs, broken, nonterminal)};
}

// 7 -------------------------------------------------------------------------
Outcome versioning() {
  TempDir dir("ver");
  auto chain = [&](const std::vector<CheckpointClass>& classes, int tag) {
    PortableBackend backend(dir / ("store" + std::to_string(tag)));
    VirtualClock clock;
    Engine e(backend, clock, {1, SchedulerPolicy::Reactive, std::nullopt});
    SimSandbox sb("sb", dir / ("ws" + std::to_string(tag)));
    e.register_sandbox(sb);
    for (std::size_t t = 0; t < classes.size(); ++t) {
      sb.apply(WriteFile{"/t", std::to_string(t)});
      if (classes[t] == CheckpointClass::Skip) continue;
      e.submit({"sb", static_cast<TurnIndex>(t), classes[t], 0});
      e.run_one();
    }
    std::vector<std::pair<TurnIndex, TurnIndex>> out;
    for (const auto& m : e.list_versions("sb")) out.emplace_back(m.proc_turn, m.fs_turn);
    return out;
  };
  auto worked = chain({CheckpointClass::Full, CheckpointClass::FsOnly, CheckpointClass::Skip}, 0);
  bool worked_ok = worked == std::vector<std::pair<TurnIndex, TurnIndex>>{{0, 0}, {0, 1}};
  int exhaustive_ok = 0;
  for (int code = 0; code < 64; ++code) {
    std::vector<CheckpointClass> classes;
    std::vector<std::pair<TurnIndex, TurnIndex>> want;
    TurnIndex p = kInitialTurn, f = kInitialTurn;
    for (int t = 0; t < 3; ++t) {
      auto c = static_cast<CheckpointClass>((code >> (2 * t)) & 3);
      classes.push_back(c);
      if (c == CheckpointClass::Skip) continue;
      if (captures_fs(c)) f = t;
      if (captures_proc(c)) p = t;
      want.emplace_back(p, f);
    }
    auto got = chain(classes, code + 1);
    bool monotone = true;
    for (std::size_t i = 1; i < got.size(); ++i) {
      monotone = monotone && got[i].first >= got[i - 1].first && got[i].second >= got[i - 1].second;
    }
    exhaustive_ok += got == want && monotone;
  }
  return {worked_ok && exhaustive_ok == 64,
          fmt("worked example %s, %d/64 sequences match the pairing oracle",
              worked_ok ? "(P0,F0),(P0,F1)" : "MISMATCH", exhaustive_ok)};
}

// 8 -------------------------------------------------------------------------
struct Node {
  char type;
  unsigned mode;
  std::string data;
  bool operator==(const Node&) const = default;
};

std::map<std::string, Node> walk(const fs::path& root) {
  std::map<std::string, Node> out;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    auto st = fs::symlink_status(it->path());
    std::string rel = fs::relative(it->path(), root).generic_string();
    unsigned mode = static_cast<unsigned>(st.permissions());
    if (fs::is_directory(st)) out[rel] = {'d', mode, ""};
    else if (fs::is_symlink(st)) out[rel] = {'l', 0, fs::read_symlink(it->path()).string()};
    else out[rel] = {'f', mode, testutil::read_file(it->path())};
  }
  return out;
}

Outcome backend_round_trip() {
  TempDir dir("bk");
  PortableBackend store(dir / "store");
  std::mt19937_64 rng(8);
  constexpr int kTrials = 100;
  int ok_trees = 0, ok_blobs = 0, ok_regs = 0;
  for (int trial = 0; trial < kTrials; ++trial) {
    fs::path src = dir / ("src" + std::to_string(trial));
    fs::create_directories(src);
    std::vector<fs::path> dirs = {src};
    std::size_t budget = 1 << 20;
    int files = static_cast<int>(rng() % 101);
    for (int i = 0; i < files; ++i) {
      const fs::path parent = dirs[rng() % dirs.size()];
      if (rng() % 6 == 0) {
        dirs.push_back(parent / ("d" + std::to_string(i)));
        fs::create_directory(dirs.back());
      }
      fs::path p = parent / ("f" + std::to_string(i));
      if (rng() % 10 == 0) {
        fs::create_symlink("../link-target-" + std::to_string(i), p);
        continue;
      }
      std::size_t size = std::min<std::size_t>(budget, rng() % 40000);
      budget -= size;
      std::string bytes(size, '\0');
      for (auto& ch : bytes) ch = static_cast<char>(rng());
      testutil::write_file(p, bytes);
      fs::permissions(p, rng() % 2 ? fs::perms(0644) : fs::perms(0755));
    }
    auto snap = store.snapshot_dir(src);
    fs::path dst = dir / ("dst" + std::to_string(trial));
    testutil::write_file(dst / "stale", "x");
    store.restore_dir(snap.handle.substr(5), dst);
    ok_trees += walk(dst) == walk(src);
    std::size_t blobs = store.blob_count();
    auto again = store.snapshot_dir(src);
    ok_blobs += again.handle == snap.handle && store.blob_count() == blobs;

    ProcessImage img;
    Pid pid = 1;
    for (std::uint64_t k = rng() % 10; k > 0; --k) {
      pid += 1 + static_cast<Pid>(rng() % 50);
      img.entries.push_back({pid, "p" + std::to_string(rng() % 99), rng() % (1ull << 32), rng() % 5,
                             rng() % 2 == 0, k == 1});
    }
    struct Target final : CheckpointTarget {
      SandboxId id = "t";
      fs::path root;
      ProcessImage image;
      const SandboxId& sandbox_id() const override { return id; }
      fs::path workspace_root() const override { return root; }
      ProcessImage process_image() const override { return image; }
      void load_process_image(const ProcessImage& i) override { image = i; }
    } from, to;
    from.image = img;
    from.root = to.root = src;
    store.restore_proc(store.snapshot_proc(from).handle, to);
    ok_regs += to.image == img;
  }
  bool ok = ok_trees == kTrials && ok_blobs == kTrials && ok_regs == kTrials;
  return {ok, fmt("trees %d/%d identical, re-snapshot zero new blobs %d/%d, registries %d/%d",
                  ok_trees, kTrials, ok_blobs, kTrials, ok_regs, kTrials)};
}

// 9 -------------------------------------------------------------------------
Outcome proxy_overhead() {
  httplib::Server upstream;
  upstream.Post(".*", [](const httplib::Request& req, httplib::Response& res) {
    res.set_content("{\"ok\":true,\"n\":" + std::to_string(req.body.size()) + "}", "application/json");
  });
  int up_port = upstream.bind_to_any_port("127.0.0.1");
  std::thread up_thread([&] { upstream.listen_after_bind(); });
  upstream.wait_until_ready();

  TempDir dir("px");
  PortableBackend backend(dir / "store");
  SteadyClock clock;
  Inspector inspector;
  Engine engine(backend, clock, {8, SchedulerPolicy::Reactive, std::nullopt});
  Coordinator coord(inspector, engine, clock);
  constexpr int kDensity = 16;
  constexpr int kTurns = 50;
  std::vector<std::unique_ptr<SimSandbox>> sandboxes;
  for (int i = 0; i < kDensity; ++i) {
    SandboxId id = fmt("sb-%03d", i);
    sandboxes.push_back(std::make_unique<SimSandbox>(id, dir / id));
    inspector.register_sandbox(id, {}, {});
    engine.register_sandbox(*sandboxes.back());
    coord.register_sandbox(id);
  }
  engine.start_workers();
  ProxyConfig cfg;
  cfg.upstream_port = up_port;
  LlmProxy proxy(coord, cfg);
  int port = proxy.start();

  std::atomic<int> errors{0};
  std::vector<std::thread> agents;
  for (int i = 0; i < kDensity; ++i) {
    agents.emplace_back([&, i] {
      httplib::Client client("127.0.0.1", port);
      client.set_keep_alive(true);
      httplib::Headers h = {{"X-Sandbox-Id", fmt("sb-%03d", i)}};
      for (int t = 0; t < kTurns; ++t) {
        auto res = client.Post("/v1/messages", h, fmt("{\"turn\":%d}", t), "application/json");
        if (!res || res->status != 200) ++errors;
      }
    });
  }
  for (auto& a : agents) a.join();
  auto st = proxy.stats();
  proxy.stop();
  engine.stop_workers();
  upstream.stop();
  up_thread.join();

  double median = percentile(st.overhead, 0.5);
  bool ok = errors == 0 && st.overhead.size() == kDensity * kTurns && median < 1e-3 &&
            engine.stats().submitted == 0;
  return {ok, fmt("%zu turns, %d errors, median overhead %.1f us, p95 %.1f us", st.overhead.size(),
                  errors.load(), 1e6 * median, 1e6 * percentile(st.overhead, 0.95))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string data = "data";
  std::vector<int> only;
  app.add_option("--data", data, "Directory holding the bundled traces");
  app.add_option("--only", only, "Run just these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"net-change oracle equivalence", net_change_oracle},
      {"checkpoint sparsity", [&] { return sparsity(data); }},
      {"crash-recovery correctness", crash_recovery},
      {"overlap effectiveness", [&] { return overlap(data); }},
      {"reactive vs fifo", [&] { return reactive_vs_fifo(data); }},
      {"transactional publication", transactional_publication},
      {"versioning semantics", versioning},
      {"backend round-trip", backend_round_trip},
      {"coordinator overhead", proxy_overhead},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    int n = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
