#include "agentcr/backend.hpp"

#include <algorithm>
#include <sstream>

#include "agentcr/text.hpp"

namespace agentcr {

namespace {
constexpr std::string_view kImageHeader = "#agentcr-procs v1";
}

std::string_view to_string(ArtifactKind kind) {
  return kind == ArtifactKind::ProcessState ? "proc" : "fs";
}

std::uint64_t ProcessImage::total_footprint() const {
  std::uint64_t total = 0;
  for (const auto& e : entries) total += e.memory_footprint_bytes;
  return total;
}

std::string ProcessImage::serialize() const {
  std::vector<ProcessEntry> sorted = entries;
  std::sort(sorted.begin(), sorted.end(),
            [](const ProcessEntry& a, const ProcessEntry& b) { return a.pid < b.pid; });
  std::ostringstream out;
  out << kImageHeader << '\n';
  for (const auto& e : sorted) {
    out << e.pid << '\t' << escape_field(e.label) << '\t' << e.memory_footprint_bytes << '\t'
        << e.memory_version << '\t' << (e.dirty ? 1 : 0) << '\t' << (e.is_agent ? 1 : 0) << '\n';
  }
  return out.str();
}

ProcessImage ProcessImage::parse(std::string_view text) {
  ProcessImage image;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? nl : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    if (header) {
      if (line != kImageHeader) throw Error(Errc::CorruptArtifact, "bad process image header");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 6) throw Error(Errc::CorruptArtifact, "bad process image line");
    ProcessEntry e;
    e.pid = parse_int<Pid>(f[0], "pid");
    e.label = unescape_field(f[1]);
    e.memory_footprint_bytes = parse_int<std::uint64_t>(f[2], "footprint");
    e.memory_version = parse_int<std::uint64_t>(f[3], "memory version");
    e.dirty = f[4] == "1";
    e.is_agent = f[5] == "1";
    image.entries.push_back(std::move(e));
  }
  if (header) throw Error(Errc::CorruptArtifact, "empty process image");
  return image;
}

}  // namespace agentcr
