#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "agentcr/common.hpp"

namespace agentcr {

// Line-record helpers shared by the on-disk formats. Fields are TAB-separated;
// '%', TAB, LF and CR inside a field are written as %25, %09, %0A, %0D.
std::string escape_field(std::string_view raw);
std::string unescape_field(std::string_view text);
std::vector<std::string_view> split_tabs(std::string_view line);

template <typename Int>
Int parse_int(std::string_view text, std::string_view what, int base = 10) {
  Int value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, base);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(Errc::TraceParse, "bad " + std::string(what) + " '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace agentcr
