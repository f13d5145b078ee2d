#include <cstdio>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "agentcr/directory_target.hpp"
#include "agentcr/engine.hpp"
#include "agentcr/portable_backend.hpp"
#include "agentcr/replay.hpp"

using namespace agentcr;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string trace_path;
  std::string backend;  // simulated unless the command says otherwise
  std::size_t density = 0;
  std::string policy = "reactive";
  double wait_scale = 1.0;
  std::uint64_t seed = 1;
  std::string out;
  std::string store;
  std::string mode = "in-sandbox";
  std::size_t workers = 8;
  double crash_probability = 0;
  double job_failure_probability = 0;
  bool real_time = false;
  double time_scale = 1.0;
  std::vector<double> wait_scales;

  GenSpec gen;
  std::string profile;
  std::string sandbox;
  VersionId version = 0;
  std::string into;
  std::string registry_out;
};

void add_gen_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--tasks", o.gen.tasks, "Number of tasks")->capture_default_str();
  cmd->add_option("--turns", o.gen.turns, "Turns per task")->capture_default_str();
  cmd->add_option("--stateless", o.gen.stateless_fraction, "Fraction of Skip turns")
      ->capture_default_str();
  cmd->add_option("--fs-fraction", o.gen.fs_fraction, "Fraction of FsOnly turns")
      ->capture_default_str();
  cmd->add_option("--proc-fraction", o.gen.proc_fraction, "Fraction of ProcOnly turns")
      ->capture_default_str();
  cmd->add_option("--wait-median-ms", o.gen.wait_median_ms, "Median LLM wait")
      ->capture_default_str();
  cmd->add_option("--wait-sigma", o.gen.wait_sigma, "Log-space sigma of the LLM wait")
      ->capture_default_str();
  cmd->add_option("--heterogeneity", o.gen.heterogeneity, "Per-task spread of the Skip fraction")
      ->capture_default_str();
}

void add_run_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--trace", o.trace_path, "Trace file; generated from the --tasks/--turns "
                                           "options when omitted");
  cmd->add_option("--backend", o.backend, "simulated or portable")
      ->check(CLI::IsMember({"simulated", "portable"}));
  cmd->add_option("--density", o.density, "Co-located sandboxes (0: one per task)")
      ->capture_default_str();
  cmd->add_option("--policy", o.policy, "reactive or fifo")
      ->check(CLI::IsMember({"reactive", "fifo"}))
      ->capture_default_str();
  cmd->add_option("--wait-scale", o.wait_scale, "Multiplier on LLM waits")->capture_default_str();
  cmd->add_option("--mode", o.mode, "in-sandbox, with-sandbox or alternate")
      ->check(CLI::IsMember({"in-sandbox", "with-sandbox", "alternate"}))
      ->capture_default_str();
  cmd->add_option("--workers", o.workers, "Checkpoint workers")->capture_default_str();
  cmd->add_option("--crash-prob", o.crash_probability, "Per-task crash probability")
      ->capture_default_str();
  cmd->add_option("--job-fail-prob", o.job_failure_probability,
                  "Per-stage checkpoint failure probability")
      ->capture_default_str();
  cmd->add_flag("--real-time", o.real_time, "Run on the wall clock instead of virtual time");
  cmd->add_option("--time-scale", o.time_scale, "Wall-clock multiplier in real-time mode")
      ->capture_default_str();
  cmd->add_option("--out", o.out, "Directory for CSV reports");
  cmd->add_option("--store", o.store, "Keep workspaces, artifacts and manifests here");
  add_gen_options(cmd, o);
}

Trace load_or_generate(Options& o) {
  if (!o.trace_path.empty()) return load_trace(o.trace_path);
  o.gen.seed = o.seed;
  return gen_trace(o.gen);
}

ReplayConfig replay_config(const Options& o) {
  ReplayConfig c;
  c.backend = o.backend.empty() ? "simulated" : o.backend;
  c.density = o.density;
  c.policy = parse_scheduler_policy(o.policy);
  c.wait_scale = o.wait_scale;
  c.seed = o.seed;
  c.workers = o.workers;
  c.mode = parse_mode_selection(o.mode);
  c.real_time = o.real_time;
  c.time_scale = o.time_scale;
  if (!o.store.empty()) {
    c.work_dir = o.store;
    c.keep_work_dir = true;
  }
  return c;
}

FaultPlan fault_plan(const Trace& trace, const Options& o, double crash_probability) {
  FaultPlan plan = make_fault_plan(trace, o.seed, crash_probability);
  plan.job_failure_probability = o.job_failure_probability;
  return plan;
}

int report_failures(const MetricsReport& m) {
  int failures = 0;
  for (const auto& t : m.tasks) {
    if (t.recovery_correct) continue;
    ++failures;
    std::cerr << "recovery failed: " << t.sandbox_id << " task " << t.task << ": "
              << t.recovery_note << '\n';
  }
  return failures;
}

int cmd_gen_trace(Options& o) {
  o.gen.seed = o.seed;
  Trace trace = o.profile.empty() ? gen_trace(o.gen) : profile_trace(o.profile, o.seed);
  if (o.out.empty() || o.out == "-") {
    write_trace(std::cout, trace);
  } else {
    save_trace(o.out, trace);
    std::cout << "result trace=" << o.out << " tasks=" << trace.tasks.size()
              << " turns=" << trace.turn_count() << '\n';
  }
  return 0;
}

int cmd_replay(Options& o) {
  Trace trace = load_or_generate(o);
  MetricsReport m = replay(trace, fault_plan(trace, o, o.crash_probability), replay_config(o));
  if (!o.out.empty()) write_report(m, o.out);
  std::cout << result_lines(m);
  return report_failures(m) == 0 ? 0 : 1;
}

int cmd_bench_scheduler(Options& o) {
  Trace trace = load_or_generate(o);
  if (o.wait_scales.empty()) o.wait_scales = {o.wait_scale};
  FaultPlan none;
  std::ostringstream csv;
  csv << "wait_scale,policy,p50_exposed_fraction,p95_exposed_fraction,p50_turn_delay_s,"
         "promotions\n";
  int failures = 0;
  for (double ws : o.wait_scales) {
    std::map<std::string, double> p50;
    for (const char* policy : {"reactive", "fifo"}) {
      Options run = o;
      run.policy = policy;
      run.wait_scale = ws;
      MetricsReport m = replay(trace, none, replay_config(run));
      failures += report_failures(m);
      std::vector<double> delays;
      for (const auto& t : m.turns) {
        if (!t.synthetic) delays.push_back(t.exposed_delay);
      }
      auto fractions = m.exposed_fractions();
      p50[policy] = percentile(fractions, 0.5);
      char line[256];
      std::snprintf(line, sizeof line, "%.9g,%s,%.9g,%.9g,%.9g,%zu\n", ws, policy, p50[policy],
                    percentile(fractions, 0.95), percentile(delays, 0.5),
                    m.scheduler.promotions);
      csv << line;
    }
    double reduction = p50["fifo"] > 0 ? 1.0 - p50["reactive"] / p50["fifo"] : 0.0;
    std::printf("result wait_scale=%.9g reactive_p50=%.9g fifo_p50=%.9g reduction=%.9g\n", ws,
                p50["reactive"], p50["fifo"], reduction);
  }
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream(fs::path(o.out) / "scheduler.csv") << csv.str();
  }
  return failures == 0 ? 0 : 1;
}

int cmd_verify_recovery(Options& o) {
  Trace trace = load_or_generate(o);
  o.backend = o.backend.empty() ? "portable" : o.backend;
  ReplayConfig config = replay_config(o);
  config.verify_recovery = true;
  MetricsReport m = replay(trace, fault_plan(trace, o, 1.0), config);
  if (!o.out.empty()) write_report(m, o.out);
  std::size_t ff = 0;
  std::size_t reissue = 0;
  for (const auto& t : m.tasks) {
    ff += t.fast_forward_manifest ? 1 : 0;
    reissue += t.reissued_commands > 0 ? 1 : 0;
  }
  std::cout << result_lines(m);
  std::cout << "result fast_forward_tasks=" << ff << " reissue_tasks=" << reissue << '\n';
  return report_failures(m) == 0 ? 0 : 1;
}

struct StoreHandle {
  PortableBackend backend;
  SteadyClock clock;
  Engine engine;

  explicit StoreHandle(const fs::path& root)
      : backend(root / "artifacts"), engine(backend, clock, [&] {
          EngineConfig c;
          c.worker_count = 1;
          c.manifest_dir = root / "manifests";
          return c;
        }()) {}
};

int cmd_versions(Options& o) {
  if (!fs::exists(fs::path(o.store) / "manifests" / "sandboxes")) {
    std::cerr << "no manifests under " << o.store << '\n';
    return 2;
  }
  StoreHandle store(o.store);
  auto versions = store.engine.list_versions(o.sandbox);
  std::cout << "version,parent,proc_turn,fs_turn,head_turn,proc_handle,fs_handle\n";
  for (const auto& v : versions) {
    std::cout << v.version_id << ',' << v.parent_version << ',' << v.proc_turn << ','
              << v.fs_turn << ',' << v.head_turn << ',' << v.proc_artifact.backend_handle << ','
              << v.fs_artifact.backend_handle << '\n';
  }
  return 0;
}

int cmd_restore(Options& o) {
  StoreHandle store(o.store);
  std::optional<fs::path> registry;
  if (!o.registry_out.empty()) registry = o.registry_out;
  DirectoryTarget target(o.sandbox, o.into, registry);
  RestoreReport r = store.engine.restore(o.sandbox, o.version, target);
  std::cout << "result restored=" << r.source_id << " version=" << r.version_id
            << " proc_turn=" << r.proc_turn << " fs_turn=" << r.fs_turn
            << " head_turn=" << r.head_turn << " into=" << o.into << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Turn-level checkpoint/restore for agent sandboxes"};
  app.set_config("--config", "", "TOML or INI file with option values");
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--seed", o.seed, "Seed for generation and fault injection")
      ->capture_default_str();

  auto* gen = app.add_subcommand("gen-trace", "Write a synthetic annotated trace");
  add_gen_options(gen, o);
  gen->add_option("--out", o.out, "Output file (stdout when omitted)");
  gen->add_option("--profile", o.profile, "Named preset; overrides the shape options")
      ->check(CLI::IsMember(trace_profiles()));

  auto* rep = app.add_subcommand("replay", "Replay a trace and report exposed delay");
  add_run_options(rep, o);

  auto* bench = app.add_subcommand("bench-scheduler", "Compare reactive and FIFO scheduling");
  add_run_options(bench, o);
  bench->add_option("--wait-scales", o.wait_scales, "Wait scales to sweep");

  auto* verify = app.add_subcommand("verify-recovery",
                                    "Crash every task once and compare with a fault-free run");
  add_run_options(verify, o);

  auto* versions = app.add_subcommand("versions", "List published versions of a sandbox");
  versions->add_option("sandbox", o.sandbox)->required();
  versions->add_option("--store", o.store, "Directory passed to replay --store")->required();

  auto* restore = app.add_subcommand("restore", "Restore a version into a directory");
  restore->add_option("sandbox", o.sandbox)->required();
  restore->add_option("version", o.version)->required();
  restore->add_option("--store", o.store, "Directory passed to replay --store")->required();
  restore->add_option("--into", o.into, "Directory to overwrite with the workspace")->required();
  restore->add_option("--registry-out", o.registry_out, "File for the restored process registry");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_trace(o);
    if (*rep) return cmd_replay(o);
    if (*bench) return cmd_bench_scheduler(o);
    if (*verify) return cmd_verify_recovery(o);
    if (*versions) return cmd_versions(o);
    if (*restore) return cmd_restore(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
