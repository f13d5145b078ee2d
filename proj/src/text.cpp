#include "agentcr/text.hpp"

namespace agentcr {

std::string escape_field(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    switch (c) {
      case '%': out += "%25"; break;
      case '\t': out += "%09"; break;
      case '\n': out += "%0A"; break;
      case '\r': out += "%0D"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape_field(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '%') {
      out.push_back(text[i]);
      continue;
    }
    if (i + 2 >= text.size()) {
      throw Error(Errc::TraceParse, "truncated escape in '" + std::string(text) + "'");
    }
    std::string_view code = text.substr(i + 1, 2);
    if (code == "25") out.push_back('%');
    else if (code == "09") out.push_back('\t');
    else if (code == "0A") out.push_back('\n');
    else if (code == "0D") out.push_back('\r');
    else throw Error(Errc::TraceParse, "unknown escape %" + std::string(code));
    i += 2;
  }
  return out;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    parts.push_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return parts;
}

}  // namespace agentcr
