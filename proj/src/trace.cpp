#include "agentcr/trace.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "agentcr/digest.hpp"

namespace agentcr {

using nlohmann::json;

std::size_t Trace::turn_count() const {
  std::size_t n = 0;
  for (const auto& t : tasks) n += t.turns.size();
  return n;
}

// --- RNG -------------------------------------------------------------------

std::uint64_t DetRng::below(std::uint64_t n) {
  if (n == 0) return 0;
  std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                        std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return x % n;
}

double DetRng::unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

double DetRng::normal() {
  if (spare_) {
    double v = *spare_;
    spare_.reset();
    return v;
  }
  double u1;
  do {
    u1 = unit();
  } while (u1 <= 0);
  double u2 = unit();
  double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2 * std::numbers::pi * u2);
  return r * std::cos(2 * std::numbers::pi * u2);
}

double DetRng::lognormal(double median, double sigma) {
  return median * std::exp(sigma * normal());
}

// --- JSON encoding ---------------------------------------------------------

namespace {

bool printable(const std::string& s) {
  for (unsigned char c : s) {
    if (c < 0x20 || c > 0x7e) return false;
  }
  return true;
}

json action_to_json(const ToolAction& action) {
  return std::visit(
      [](const auto& a) -> json {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, WriteFile>) {
          json j{{"op", "write"}, {"path", a.path}};
          if (printable(a.bytes)) {
            j["bytes"] = a.bytes;
          } else {
            j["bytes_b64"] = base64_encode(a.bytes);
          }
          return j;
        } else if constexpr (std::is_same_v<T, CreateFile>) {
          return {{"op", "create"}, {"path", a.path}};
        } else if constexpr (std::is_same_v<T, DeleteFile>) {
          return {{"op", "delete"}, {"path", a.path}};
        } else if constexpr (std::is_same_v<T, RenameFile>) {
          return {{"op", "rename"}, {"from", a.old_path}, {"to", a.new_path}};
        } else if constexpr (std::is_same_v<T, SpawnProc>) {
          return {{"op", "spawn"}, {"pid", a.pid}, {"footprint", a.footprint}, {"label", a.label}};
        } else if constexpr (std::is_same_v<T, KillProc>) {
          return {{"op", "kill"}, {"pid", a.pid}};
        } else if constexpr (std::is_same_v<T, TouchMemory>) {
          return {{"op", "touch"}, {"pid", a.pid}};
        } else if constexpr (std::is_same_v<T, Sleep>) {
          return {{"op", "sleep"}, {"ms", a.duration * 1000.0}};
        } else {
          return {{"op", "read"}, {"path", a.path}};
        }
      },
      action);
}

ToolAction action_from_json(const json& j) {
  std::string op = j.at("op");
  if (op == "write") {
    std::string bytes = j.contains("bytes_b64")
                            ? base64_decode(j.at("bytes_b64").get<std::string>())
                            : j.value("bytes", std::string());
    return WriteFile{j.at("path"), std::move(bytes)};
  }
  if (op == "create") return CreateFile{j.at("path")};
  if (op == "delete") return DeleteFile{j.at("path")};
  if (op == "rename") return RenameFile{j.at("from"), j.at("to")};
  if (op == "spawn") {
    return SpawnProc{j.at("pid"), j.value("footprint", std::uint64_t{0}),
                     j.value("label", std::string())};
  }
  if (op == "kill") return KillProc{j.at("pid")};
  if (op == "touch") return TouchMemory{j.at("pid")};
  if (op == "sleep") {
    double ms = j.at("ms");
    if (ms < 0) throw Error(Errc::TraceParse, "negative sleep");
    return Sleep{ms / 1000.0};
  }
  if (op == "read") return ReadFile{j.at("path")};
  throw Error(Errc::TraceParse, "unknown op '" + op + "'");
}

json actions_to_json(const std::vector<ToolAction>& actions) {
  json arr = json::array();
  for (const auto& a : actions) arr.push_back(action_to_json(a));
  return arr;
}

std::vector<ToolAction> actions_from_json(const json& arr) {
  std::vector<ToolAction> out;
  for (const auto& a : arr) out.push_back(action_from_json(a));
  return out;
}

std::string class_key(CheckpointClass c) { return std::string(to_string(c)); }

}  // namespace

void write_trace(std::ostream& out, const Trace& trace) {
  out << json{{"format", "agentcr-trace"}, {"version", kTraceFormatVersion}, {"name", trace.name}}
             .dump()
      << '\n';
  for (const auto& task : trace.tasks) {
    out << json{{"kind", "task"},
                {"task", task.task},
                {"agent_footprint", task.agent_footprint},
                {"setup", actions_to_json(task.setup)}}
               .dump()
        << '\n';
    for (std::size_t i = 0; i < task.turns.size(); ++i) {
      const auto& turn = task.turns[i];
      json j{{"kind", "turn"},
             {"task", task.task},
             {"turn", i},
             {"llm_wait_ms", turn.llm_wait_ms},
             {"actions", actions_to_json(turn.actions)}};
      if (turn.expected) j["expected"] = class_key(*turn.expected);
      out << j.dump() << '\n';
    }
  }
}

Trace read_trace(std::istream& in) {
  Trace trace;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw Error(Errc::TraceParse, "line " + std::to_string(lineno) + ": " + what);
  };
  if (!std::getline(in, line)) throw Error(Errc::TraceParse, "empty trace");
  ++lineno;
  try {
    json header = json::parse(line);
    if (header.value("format", "") != "agentcr-trace") fail("not a trace file");
    if (header.value("version", 0) != kTraceFormatVersion) fail("unsupported trace version");
    trace.name = header.value("name", "");
  } catch (const json::exception& e) {
    fail(e.what());
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      std::string kind = j.at("kind");
      if (kind == "task") {
        TraceTask task;
        task.task = j.at("task");
        if (task.task != trace.tasks.size()) fail("tasks must be numbered 0,1,2,...");
        task.agent_footprint = j.value("agent_footprint", std::uint64_t{0});
        task.setup = actions_from_json(j.value("setup", json::array()));
        trace.tasks.push_back(std::move(task));
      } else if (kind == "turn") {
        std::size_t t = j.at("task");
        if (trace.tasks.empty() || t != trace.tasks.back().task) fail("turn outside its task");
        auto& task = trace.tasks.back();
        if (j.at("turn").get<std::size_t>() != task.turns.size()) fail("turns must be contiguous");
        TraceTurn turn;
        turn.llm_wait_ms = j.at("llm_wait_ms");
        if (turn.llm_wait_ms < 0) fail("negative llm wait");
        turn.actions = actions_from_json(j.at("actions"));
        if (j.contains("expected")) {
          turn.expected = parse_checkpoint_class(j.at("expected").get<std::string>());
        }
        task.turns.push_back(std::move(turn));
      } else {
        fail("unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      fail(e.what());
    } catch (const Error& e) {
      if (e.code() == Errc::TraceParse) throw;
      fail(e.what());
    }
  }
  for (const auto& task : trace.tasks) {
    std::vector<CheckpointClass> classes;
    try {
      classes = model_classes(task);
    } catch (const Error& e) {
      throw Error(Errc::TraceParse, "task " + std::to_string(task.task) + ": " + e.what());
    }
    for (std::size_t i = 0; i < task.turns.size(); ++i) {
      const auto& exp = task.turns[i].expected;
      if (exp && *exp != classes[i]) {
        throw Error(Errc::TraceParse, "task " + std::to_string(task.task) + " turn " +
                                          std::to_string(i) + " annotated " +
                                          class_key(*exp) + " but changes " +
                                          class_key(classes[i]));
      }
    }
  }
  return trace;
}

Trace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot open trace " + path);
  return read_trace(in);
}

void save_trace(const std::string& path, const Trace& trace) {
  std::ofstream out(path, std::ios::trunc);
  write_trace(out, trace);
  if (!out) throw Error(Errc::IoFailure, "cannot write trace " + path);
}

// --- State model -----------------------------------------------------------

void StateModel::ensure_parents(const std::string& path) {
  std::size_t pos = 0;
  while ((pos = path.find('/', pos + 1)) != std::string::npos) {
    std::string dir = path.substr(0, pos);
    if (dirs_.contains(dir)) continue;
    if (state_.paths.contains(dir)) throw Error(Errc::PathConflict, dir + " is not a directory");
    dirs_.insert(dir);
    state_.paths[dir] = next_gen();
  }
}

void StateModel::apply(const ToolAction& action) {
  std::visit(
      [this](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, CreateFile>) {
          std::string p = normalize_path(a.path);
          if (state_.paths.contains(p)) throw Error(Errc::PathConflict, p + " exists");
          ensure_parents(p);
          state_.paths[p] = next_gen();
        } else if constexpr (std::is_same_v<T, WriteFile>) {
          std::string p = normalize_path(a.path);
          if (dirs_.contains(p)) throw Error(Errc::PathConflict, p + " is a directory");
          ensure_parents(p);
          state_.paths[p] = next_gen();
        } else if constexpr (std::is_same_v<T, DeleteFile>) {
          std::string p = normalize_path(a.path);
          if (!state_.paths.contains(p)) throw Error(Errc::PathConflict, p + " missing");
          if (dirs_.contains(p)) {
            auto it = state_.paths.upper_bound(p + "/");
            if (it != state_.paths.end() && it->first.rfind(p + "/", 0) == 0) {
              throw Error(Errc::PathConflict, p + " not empty");
            }
            dirs_.erase(p);
          }
          state_.paths.erase(p);
        } else if constexpr (std::is_same_v<T, RenameFile>) {
          std::string from = normalize_path(a.old_path);
          std::string to = normalize_path(a.new_path);
          if (!state_.paths.contains(from)) throw Error(Errc::PathConflict, from + " missing");
          if (dirs_.contains(from) || dirs_.contains(to)) {
            throw Error(Errc::PathConflict, "directory rename");
          }
          ensure_parents(to);
          state_.paths.erase(from);
          state_.paths[to] = next_gen();
        } else if constexpr (std::is_same_v<T, SpawnProc>) {
          if (state_.pids.contains(a.pid)) throw Error(Errc::PathConflict, "pid live");
          state_.pids[a.pid] = next_gen();
        } else if constexpr (std::is_same_v<T, KillProc>) {
          if (!state_.pids.erase(a.pid)) throw Error(Errc::PathConflict, "pid not live");
        } else if constexpr (std::is_same_v<T, TouchMemory>) {
          auto it = state_.pids.find(a.pid);
          if (it == state_.pids.end()) throw Error(Errc::PathConflict, "pid not live");
          it->second = next_gen();
        } else if constexpr (std::is_same_v<T, ReadFile>) {
          if (!state_.paths.contains(normalize_path(a.path))) {
            throw Error(Errc::PathConflict, a.path + " missing");
          }
        }
      },
      action);
}

CheckpointClass StateModel::diff_class(const Snapshot& before) const {
  bool fs = before.paths != state_.paths;
  bool proc = false;
  auto relevant = [this](const std::map<Pid, std::uint64_t>& m) {
    std::map<Pid, std::uint64_t> out;
    for (const auto& [pid, gen] : m) {
      if (!excluded_.contains(pid)) out.emplace(pid, gen);
    }
    return out;
  };
  proc = relevant(before.pids) != relevant(state_.pids);
  if (fs && proc) return CheckpointClass::Full;
  if (fs) return CheckpointClass::FsOnly;
  if (proc) return CheckpointClass::ProcOnly;
  return CheckpointClass::Skip;
}

std::vector<CheckpointClass> model_classes(const TraceTask& task) {
  StateModel model;
  for (const auto& a : task.setup) model.apply(a);
  std::vector<CheckpointClass> out;
  for (const auto& turn : task.turns) {
    auto before = model.state();
    for (const auto& a : turn.actions) model.apply(a);
    out.push_back(model.diff_class(before));
  }
  return out;
}

// --- Generator -------------------------------------------------------------

namespace {

std::vector<std::size_t> largest_remainder(const std::vector<double>& fractions,
                                           std::size_t total) {
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    double exact = fractions[i] * static_cast<double>(total);
    double fl = std::floor(exact + 1e-9);
    counts[i] = static_cast<std::size_t>(fl);
    assigned += counts[i];
    rem.emplace_back(exact - fl, i);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[rem[k % rem.size()].second];
  return counts;
}

class TaskBuilder {
 public:
  TaskBuilder(const GenSpec& spec, DetRng& rng) : spec_(spec), rng_(rng) {}

  std::vector<ToolAction> setup() {
    std::vector<ToolAction> out;
    out.push_back(WriteFile{"/work/README", content()});
    out.push_back(WriteFile{"/tmp/.keep", ""});
    for (int i = 0; i < 4; ++i) out.push_back(WriteFile{new_file(), content()});
    out.push_back(spawn_bg());
    return out;
  }

  std::vector<ToolAction> turn(CheckpointClass cls) {
    std::vector<ToolAction> out;
    double tool_ms = rng_.lognormal(spec_.tool_median_ms, spec_.tool_sigma);
    out.push_back(Sleep{std::round(tool_ms) / 1000.0});
    switch (cls) {
      case CheckpointClass::Skip: stateless(out); break;
      case CheckpointClass::FsOnly: fs_ops(out); break;
      case CheckpointClass::ProcOnly: proc_ops(out); break;
      case CheckpointClass::Full:
        fs_ops(out);
        proc_ops(out);
        break;
    }
    return out;
  }

 private:
  std::string content() {
    static constexpr char kAlphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789 \n";
    std::size_t n = 16 + rng_.below(496);
    std::string s;
    s.reserve(n);
    for (std::size_t i = 0; i < n; ++i) s.push_back(kAlphabet[rng_.below(sizeof kAlphabet - 1)]);
    return s;
  }

  std::string new_file() {
    std::string p = "/work/f" + std::to_string(file_counter_++) + ".txt";
    files_.push_back(p);
    return p;
  }

  std::string pick_file() { return files_[rng_.below(files_.size())]; }

  SpawnProc spawn_bg() {
    Pid pid = next_pid_++;
    std::uint64_t span = spec_.proc_footprint_max - spec_.proc_footprint_min;
    std::uint64_t fp = spec_.proc_footprint_min + (span ? rng_.below(span + 1) : 0);
    bg_.push_back(pid);
    return SpawnProc{pid, fp, "worker-" + std::to_string(pid)};
  }

  void stateless(std::vector<ToolAction>& out) {
    switch (rng_.below(5)) {
      case 0: out.push_back(ReadFile{pick_file()}); break;
      case 1: {
        std::string tmp = "/tmp/scratch" + std::to_string(file_counter_++);
        out.push_back(WriteFile{tmp, content()});
        out.push_back(ReadFile{tmp});
        out.push_back(DeleteFile{tmp});
        break;
      }
      case 2: {
        Pid pid = next_pid_++;
        out.push_back(SpawnProc{pid, 4u << 20, "sh"});
        out.push_back(KillProc{pid});
        break;
      }
      case 3: {
        out.push_back(ReadFile{pick_file()});
        out.push_back(ReadFile{pick_file()});
        break;
      }
      default: break;  // think-only turn
    }
  }

  void fs_ops(std::vector<ToolAction>& out) {
    std::size_t n = 1 + rng_.below(3);
    std::set<std::string> touched;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t kind = rng_.below(10);
      std::string target = pick_file();
      if (kind < 5 || touched.contains(target)) {
        if (touched.contains(target)) {
          out.push_back(WriteFile{new_file(), content()});
        } else {
          out.push_back(WriteFile{target, content()});
          touched.insert(target);
        }
      } else if (kind < 8 || files_.size() <= 3) {
        std::string p = new_file();
        touched.insert(p);
        out.push_back(WriteFile{p, content()});
      } else if (kind == 8) {
        std::erase(files_, target);
        touched.insert(target);
        out.push_back(DeleteFile{target});
      } else {
        std::erase(files_, target);
        std::string to = new_file();
        touched.insert(target);
        touched.insert(to);
        out.push_back(RenameFile{target, to});
      }
    }
  }

  void proc_ops(std::vector<ToolAction>& out) {
    std::uint64_t kind = rng_.below(3);
    if (bg_.empty() || (kind == 0 && bg_.size() < 3)) {
      out.push_back(spawn_bg());
    } else if (kind == 1 && bg_.size() > 1) {
      Pid pid = bg_[rng_.below(bg_.size())];
      std::erase(bg_, pid);
      out.push_back(KillProc{pid});
    } else {
      out.push_back(TouchMemory{bg_[rng_.below(bg_.size())]});
    }
  }

  const GenSpec& spec_;
  DetRng& rng_;
  std::vector<std::string> files_;
  std::vector<Pid> bg_;
  std::size_t file_counter_ = 0;
  Pid next_pid_ = 100;
};

}  // namespace

Trace gen_trace(const GenSpec& spec) {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw Error(Errc::SpecInvalid, what);
  };
  check(spec.tasks > 0 && spec.turns > 0, "tasks and turns must be positive");
  for (double f : {spec.stateless_fraction, spec.fs_fraction, spec.proc_fraction}) {
    check(f >= 0 && f <= 1, "fractions must lie in [0, 1]");
  }
  double sum = spec.stateless_fraction + spec.fs_fraction + spec.proc_fraction;
  check(sum <= 1 + 1e-12, "fractions sum to more than 1");
  check(spec.wait_median_ms >= 0 && spec.tool_median_ms >= 0, "durations must be non-negative");
  check(spec.wait_sigma >= 0 && spec.tool_sigma >= 0, "sigmas must be non-negative");
  check(spec.proc_footprint_min <= spec.proc_footprint_max, "footprint range inverted");
  check(spec.heterogeneity >= 0, "heterogeneity must be non-negative");

  DetRng rng(spec.seed);
  std::size_t total = spec.tasks * spec.turns;
  std::vector<CheckpointClass> classes;
  if (spec.heterogeneity == 0) {
    double full = std::max(0.0, 1.0 - sum);
    auto counts = largest_remainder(
        {spec.stateless_fraction, spec.fs_fraction, spec.proc_fraction, full}, total);
    const CheckpointClass order[] = {CheckpointClass::Skip, CheckpointClass::FsOnly,
                                     CheckpointClass::ProcOnly, CheckpointClass::Full};
    for (std::size_t i = 0; i < 4; ++i) classes.insert(classes.end(), counts[i], order[i]);
    rng.shuffle(classes);
  } else {
    double rest = 1.0 - spec.stateless_fraction;
    double full = std::max(0.0, 1.0 - sum);
    for (std::size_t t = 0; t < spec.tasks; ++t) {
      double skip = std::clamp(spec.stateless_fraction +
                                   (2 * rng.unit() - 1) * spec.heterogeneity, 0.0, 1.0);
      double scale = rest > 0 ? (1.0 - skip) / rest : 0.0;
      auto counts = largest_remainder(
          {skip, spec.fs_fraction * scale, spec.proc_fraction * scale, full * scale}, spec.turns);
      std::vector<CheckpointClass> task_classes;
      const CheckpointClass order[] = {CheckpointClass::Skip, CheckpointClass::FsOnly,
                                       CheckpointClass::ProcOnly, CheckpointClass::Full};
      for (std::size_t i = 0; i < 4; ++i) {
        task_classes.insert(task_classes.end(), counts[i], order[i]);
      }
      rng.shuffle(task_classes);
      classes.insert(classes.end(), task_classes.begin(), task_classes.end());
    }
  }

  Trace trace;
  trace.name = "generated-seed" + std::to_string(spec.seed);
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    TaskBuilder builder(spec, rng);
    TraceTask task;
    task.task = t;
    task.agent_footprint = spec.agent_footprint;
    task.setup = builder.setup();
    for (std::size_t j = 0; j < spec.turns; ++j) {
      CheckpointClass cls = classes[t * spec.turns + j];
      TraceTurn turn;
      turn.llm_wait_ms = std::round(rng.lognormal(spec.wait_median_ms, spec.wait_sigma));
      turn.actions = builder.turn(cls);
      turn.expected = cls;
      task.turns.push_back(std::move(turn));
    }
    auto modeled = model_classes(task);
    for (std::size_t j = 0; j < modeled.size(); ++j) {
      if (modeled[j] != task.turns[j].expected) {
        throw Error(Errc::SpecInvalid, "generator produced an inconsistent turn");
      }
    }
    trace.tasks.push_back(std::move(task));
  }
  return trace;
}

Trace merge_traces(const std::vector<Trace>& parts, std::string name, std::uint64_t seed) {
  Trace out;
  out.name = std::move(name);
  for (const auto& part : parts) {
    out.tasks.insert(out.tasks.end(), part.tasks.begin(), part.tasks.end());
  }
  DetRng rng(seed);
  rng.shuffle(out.tasks);
  for (std::size_t i = 0; i < out.tasks.size(); ++i) out.tasks[i].task = i;
  return out;
}

std::vector<std::string> trace_profiles() { return {"default", "heterogeneous", "stress"}; }

Trace profile_trace(std::string_view profile, std::uint64_t seed) {
  GenSpec spec;
  spec.seed = seed;
  if (profile == "default") {
    Trace t = gen_trace(spec);
    t.name = "default";
    return t;
  }
  if (profile == "heterogeneous") {
    spec.tasks = 32;
    spec.turns = 30;
    spec.stateless_fraction = 0.78;
    spec.fs_fraction = 0.10;
    spec.proc_fraction = 0.06;
    spec.heterogeneity = 0.12;
    Trace t = gen_trace(spec);
    t.name = "heterogeneous";
    return t;
  }
  if (profile == "stress") {
    GenSpec heavy = spec;
    heavy.tasks = 24;
    heavy.turns = 30;
    heavy.stateless_fraction = 0.3;
    heavy.fs_fraction = 0;
    heavy.proc_fraction = 0;
    heavy.wait_median_ms = 8000;
    heavy.wait_sigma = 0.5;
    GenSpec light = spec;
    light.tasks = 72;
    light.turns = 30;
    light.stateless_fraction = 0.5;
    light.fs_fraction = 0.5;
    light.proc_fraction = 0;
    light.wait_median_ms = 1500;
    light.wait_sigma = 0.5;
    light.seed = seed + 1;
    return merge_traces({gen_trace(heavy), gen_trace(light)}, "stress", seed + 2);
  }
  throw Error(Errc::SpecInvalid, "unknown trace profile '" + std::string(profile) + "'");
}

}  // namespace agentcr
