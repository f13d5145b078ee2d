#pragma once

#include <span>
#include <string>
#include <string_view>

namespace agentcr {

// Name recorded in store metadata for the content hash in use.
inline constexpr std::string_view kHashName = "sha256";

/// Lower-case hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

/// Incremental SHA-256 for streaming file contents.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view bytes);
  std::string hex_digest();

 private:
  struct Impl;
  Impl* impl_;
};

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace agentcr
