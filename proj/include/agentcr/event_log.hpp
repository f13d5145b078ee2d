#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "agentcr/inspector.hpp"

namespace agentcr {

// Line-delimited event log, the seam where an external tracer feeds the
// inspector. The file starts with the header line below; every other line is
// one event with tab-separated fields:
//
//   <sandbox_id> TAB <seq> TAB <kind> [TAB <arg>]...
//
//   kind        args
//   fs_create   path
//   fs_delete   path
//   fs_write    path
//   fs_rename   old_path new_path
//   proc_spawn  pid agent(0|1)
//   proc_exit   pid
//   proc_dirty  pid
//
// Sandbox ids and paths use the field escaping from text.hpp.
// Blank lines and lines starting with '#' after the header are ignored.
inline constexpr std::string_view kEventLogHeader = "#agentcr-events v1";

std::string encode_event(const OsEvent& event);
OsEvent decode_event(std::string_view line);

void write_event_log(std::ostream& out, const std::vector<OsEvent>& events);
std::vector<OsEvent> read_event_log(std::istream& in);

/// Reads a log and ingests every event in file order; returns the count.
std::size_t ingest_event_log(Inspector& inspector, std::istream& in);

}  // namespace agentcr
