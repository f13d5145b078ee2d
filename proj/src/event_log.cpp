#include "agentcr/event_log.hpp"

#include <istream>
#include <ostream>

#include "agentcr/text.hpp"

namespace agentcr {

namespace {

void expect_args(const std::vector<std::string_view>& parts, std::size_t n,
                 std::string_view kind) {
  if (parts.size() != 3 + n) {
    throw Error(Errc::TraceParse, std::string(kind) + " expects " + std::to_string(n) +
                                      " argument(s)");
  }
}

}  // namespace

std::string encode_event(const OsEvent& event) {
  std::string line = escape_field(event.sandbox_id) + '\t' + std::to_string(event.seq) + '\t';
  std::visit(
      [&](const auto& ev) {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, FsCreate>) {
          line += "fs_create\t" + escape_field(ev.path);
        } else if constexpr (std::is_same_v<T, FsDelete>) {
          line += "fs_delete\t" + escape_field(ev.path);
        } else if constexpr (std::is_same_v<T, FsWrite>) {
          line += "fs_write\t" + escape_field(ev.path);
        } else if constexpr (std::is_same_v<T, FsRename>) {
          line += "fs_rename\t" + escape_field(ev.old_path) + '\t' + escape_field(ev.new_path);
        } else if constexpr (std::is_same_v<T, ProcSpawn>) {
          line += "proc_spawn\t" + std::to_string(ev.pid) + (ev.is_agent ? "\t1" : "\t0");
        } else if constexpr (std::is_same_v<T, ProcExit>) {
          line += "proc_exit\t" + std::to_string(ev.pid);
        } else if constexpr (std::is_same_v<T, ProcDirty>) {
          line += "proc_dirty\t" + std::to_string(ev.pid);
        }
      },
      event.payload);
  return line;
}

OsEvent decode_event(std::string_view line) {
  auto parts = split_tabs(line);
  if (parts.size() < 3) throw Error(Errc::TraceParse, "short event line");
  OsEvent ev;
  ev.sandbox_id = unescape_field(parts[0]);
  ev.seq = parse_int<Seq>(parts[1], "seq");
  std::string_view kind = parts[2];
  if (kind == "fs_create") {
    expect_args(parts, 1, kind);
    ev.payload = FsCreate{unescape_field(parts[3])};
  } else if (kind == "fs_delete") {
    expect_args(parts, 1, kind);
    ev.payload = FsDelete{unescape_field(parts[3])};
  } else if (kind == "fs_write") {
    expect_args(parts, 1, kind);
    ev.payload = FsWrite{unescape_field(parts[3])};
  } else if (kind == "fs_rename") {
    expect_args(parts, 2, kind);
    ev.payload = FsRename{unescape_field(parts[3]), unescape_field(parts[4])};
  } else if (kind == "proc_spawn") {
    expect_args(parts, 2, kind);
    int agent = parse_int<int>(parts[4], "agent flag");
    if (agent != 0 && agent != 1) throw Error(Errc::TraceParse, "agent flag must be 0 or 1");
    ev.payload = ProcSpawn{parse_int<Pid>(parts[3], "pid"), agent == 1};
  } else if (kind == "proc_exit") {
    expect_args(parts, 1, kind);
    ev.payload = ProcExit{parse_int<Pid>(parts[3], "pid")};
  } else if (kind == "proc_dirty") {
    expect_args(parts, 1, kind);
    ev.payload = ProcDirty{parse_int<Pid>(parts[3], "pid")};
  } else {
    throw Error(Errc::TraceParse, "unknown event kind '" + std::string(kind) + "'");
  }
  return ev;
}

void write_event_log(std::ostream& out, const std::vector<OsEvent>& events) {
  out << kEventLogHeader << '\n';
  for (const auto& ev : events) out << encode_event(ev) << '\n';
}

std::vector<OsEvent> read_event_log(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kEventLogHeader) {
    throw Error(Errc::TraceParse, "missing event log header");
  }
  std::vector<OsEvent> events;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    events.push_back(decode_event(line));
  }
  return events;
}

std::size_t ingest_event_log(Inspector& inspector, std::istream& in) {
  auto events = read_event_log(in);
  for (const auto& ev : events) inspector.ingest_event(ev);
  return events.size();
}

}  // namespace agentcr
