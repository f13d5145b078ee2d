#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "agentcr/inspector.hpp"
#include "agentcr/portable_backend.hpp"
#include "agentcr/replay.hpp"
#include "agentcr/trace.hpp"

namespace py = pybind11;
using namespace agentcr;

namespace {

OsEvent make_event(const SandboxId& id, Seq seq, const std::string& kind, const py::object& a,
                   const py::object& b) {
  OsEvent ev{id, seq, {}};
  if (kind == "create") ev.payload = FsCreate{a.cast<std::string>()};
  else if (kind == "delete") ev.payload = FsDelete{a.cast<std::string>()};
  else if (kind == "write") ev.payload = FsWrite{a.cast<std::string>()};
  else if (kind == "rename") ev.payload = FsRename{a.cast<std::string>(), b.cast<std::string>()};
  else if (kind == "spawn") ev.payload = ProcSpawn{a.cast<Pid>(), !b.is_none() && b.cast<bool>()};
  else if (kind == "exit") ev.payload = ProcExit{a.cast<Pid>()};
  else if (kind == "dirty") ev.payload = ProcDirty{a.cast<Pid>()};
  else throw Error(Errc::ConfigInvalid, "unknown event kind '" + kind + "'");
  return ev;
}

py::dict report_dict(const NetChangeReport& r) {
  py::dict d;
  d["fs_changed"] = r.fs_changed;
  d["proc_changed"] = r.proc_changed;
  py::dict paths;
  for (const auto& [p, c] : r.changed_paths) paths[py::str(p)] = std::string(to_string(c));
  py::dict procs;
  for (const auto& [pid, c] : r.proc_delta) procs[py::int_(pid)] = std::string(to_string(c));
  d["changed_paths"] = paths;
  d["proc_delta"] = procs;
  d["class"] = std::string(to_string(classify(r)));
  return d;
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["trace"] = m.trace_name;
  d["backend"] = m.backend;
  d["policy"] = m.policy;
  d["density"] = m.density;
  d["total_turns"] = m.total_turns();
  d["skip"] = m.count(CheckpointClass::Skip);
  d["fs_only"] = m.count(CheckpointClass::FsOnly);
  d["proc_only"] = m.count(CheckpointClass::ProcOnly);
  d["full"] = m.count(CheckpointClass::Full);
  d["skip_ratio"] = m.skip_ratio();
  d["jobs_submitted"] = m.jobs_submitted;
  d["jobs_done"] = m.jobs_done;
  d["jobs_failed"] = m.jobs_failed;
  d["promotions"] = m.scheduler.promotions;
  d["recovery_ok"] = m.recovery_ok();
  d["exposed_fractions"] = m.exposed_fractions();
  py::list tasks;
  for (const auto& t : m.tasks) {
    py::dict row;
    row["sandbox_id"] = t.sandbox_id;
    row["task"] = t.task;
    row["mode"] = std::string(to_string(t.mode));
    row["wall_time"] = t.wall_time;
    row["exposed"] = t.exposed_total;
    row["exposed_fraction"] = t.exposed_fraction;
    row["crashed"] = t.crashed;
    row["recovery_correct"] = t.recovery_correct;
    row["fast_forward_turns"] = t.fast_forward_turns;
    row["reissued_commands"] = t.reissued_commands;
    row["final_tree_hash"] = t.final_tree_hash;
    tasks.append(row);
  }
  d["tasks"] = tasks;
  py::list turns;
  for (const auto& t : m.turns) {
    py::dict row;
    row["sandbox_id"] = t.sandbox_id;
    row["turn"] = t.turn;
    row["class"] = std::string(to_string(t.cls));
    row["exposed_delay"] = t.exposed_delay;
    row["synthetic"] = t.synthetic;
    turns.append(row);
  }
  d["turns"] = turns;
  d["result_lines"] = result_lines(m);
  return d;
}

}  // namespace

PYBIND11_MODULE(_agentcr, m) {
  m.doc() = "Turn-level checkpoint/restore for agent sandboxes";

  py::register_exception<Error>(m, "AgentCrError");

  py::class_<Trace>(m, "Trace")
      .def_readonly("name", &Trace::name)
      .def_property_readonly("task_count", [](const Trace& t) { return t.tasks.size(); })
      .def_property_readonly("turn_count", &Trace::turn_count)
      .def("expected_classes",
           [](const Trace& t) {
             std::vector<std::string> out;
             for (const auto& task : t.tasks) {
               for (const auto& turn : task.turns) {
                 out.emplace_back(turn.expected ? to_string(*turn.expected) : "");
               }
             }
             return out;
           })
      .def("dumps", [](const Trace& t) {
        std::ostringstream out;
        write_trace(out, t);
        return out.str();
      });

  m.def(
      "gen_trace",
      [](std::size_t tasks, std::size_t turns, double stateless, double fs, double proc,
         double wait_median_ms, double heterogeneity, std::uint64_t seed) {
        GenSpec spec;
        spec.tasks = tasks;
        spec.turns = turns;
        spec.stateless_fraction = stateless;
        spec.fs_fraction = fs;
        spec.proc_fraction = proc;
        spec.wait_median_ms = wait_median_ms;
        spec.heterogeneity = heterogeneity;
        spec.seed = seed;
        return gen_trace(spec);
      },
      py::arg("tasks") = 4, py::arg("turns") = 20, py::arg("stateless") = 0.75,
      py::arg("fs") = 0.15, py::arg("proc") = 0.05, py::arg("wait_median_ms") = 3340.0,
      py::arg("heterogeneity") = 0.0, py::arg("seed") = 1);
  m.def("profile_trace", &profile_trace, py::arg("profile"), py::arg("seed") = 1);
  m.def("load_trace", &load_trace, py::arg("path"));
  m.def("save_trace", &save_trace, py::arg("path"), py::arg("trace"));
  m.def("loads_trace", [](const std::string& text) {
    std::istringstream in(text);
    return read_trace(in);
  });

  py::class_<Inspector>(m, "Inspector")
      .def(py::init<>())
      .def("register_sandbox", &Inspector::register_sandbox, py::arg("sandbox_id"),
           py::arg("paths") = std::set<std::string>{}, py::arg("pids") = std::set<Pid>{},
           py::arg("agent_pids") = std::set<Pid>{})
      .def(
          "ingest",
          [](Inspector& self, const SandboxId& id, Seq seq, const std::string& kind,
             const py::object& a, const py::object& b) {
            self.ingest_event(make_event(id, seq, kind, a, b));
          },
          py::arg("sandbox_id"), py::arg("seq"), py::arg("kind"), py::arg("a"),
          py::arg("b") = py::none())
      .def("net_change",
           [](const Inspector& self, const SandboxId& id) {
             return report_dict(self.compute_net_change(id));
           })
      .def("reset_baseline",
           [](Inspector& self, const SandboxId& id, Seq seq) { self.reset_baseline(id, seq); })
      .def("latest_seq", &Inspector::latest_seq);

  m.def(
      "replay",
      [](const Trace& trace, const std::string& backend, std::size_t density,
         const std::string& policy, double wait_scale, std::uint64_t seed,
         double crash_probability, const std::string& mode, std::size_t workers) {
        ReplayConfig c;
        c.backend = backend;
        c.density = density;
        c.policy = parse_scheduler_policy(policy);
        c.wait_scale = wait_scale;
        c.seed = seed;
        c.mode = parse_mode_selection(mode);
        c.workers = workers;
        FaultPlan plan = make_fault_plan(trace, seed, crash_probability);
        MetricsReport report;
        {
          py::gil_scoped_release release;
          report = replay(trace, plan, c);
        }
        return metrics_dict(report);
      },
      py::arg("trace"), py::arg("backend") = "simulated", py::arg("density") = 0,
      py::arg("policy") = "reactive", py::arg("wait_scale") = 1.0, py::arg("seed") = 1,
      py::arg("crash_probability") = 0.0, py::arg("mode") = "in-sandbox",
      py::arg("workers") = 8);

  m.def("percentile", &percentile, py::arg("values"), py::arg("q"));

  m.def(
      "snapshot_dir",
      [](const std::filesystem::path& store, const std::filesystem::path& dir) {
        PortableBackend b(store);
        return b.snapshot_dir(dir).handle;
      },
      py::arg("store"), py::arg("dir"));
  m.def(
      "restore_dir",
      [](const std::filesystem::path& store, const std::string& handle,
         const std::filesystem::path& dir) {
        PortableBackend b(store);
        std::string_view hash = handle;
        if (hash.starts_with("tree:")) hash.remove_prefix(5);
        b.restore_dir(std::string(hash), dir);
      },
      py::arg("store"), py::arg("handle"), py::arg("dir"));
  m.def(
      "blob_count",
      [](const std::filesystem::path& store) { return PortableBackend(store).blob_count(); },
      py::arg("store"));
}
