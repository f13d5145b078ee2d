#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "agentcr/coordinator.hpp"

namespace agentcr {

struct ProxyConfig {
  std::string upstream_host = "127.0.0.1";
  int upstream_port = 0;
  std::string listen_host = "127.0.0.1";
  int listen_port = 0;  // 0 picks a free port
  // Header naming the sandbox a request belongs to.
  std::string sandbox_header = "X-Sandbox-Id";
  // Per-port binding: every request on this listener belongs to this sandbox.
  std::optional<SandboxId> bound_sandbox;
  int upstream_timeout_s = 600;
  // Connection handler threads. Keep-alive clients each pin one, so size this
  // above the number of concurrent agents.
  std::size_t handler_threads = 128;
};

struct ProxyStats {
  std::size_t requests = 0;
  std::size_t synthetic = 0;
  std::size_t held = 0;
  std::size_t upstream_errors = 0;
  // Time spent inside coordinator calls per forwarded request, in seconds.
  std::vector<double> overhead;
};

/// HTTP pass-through between agents and the LLM endpoint. Requests are
/// reported to the coordinator on the way out and responses on the way back;
/// a held response is returned only once the coordinator releases it.
class LlmProxy {
 public:
  LlmProxy(Coordinator& coordinator, ProxyConfig config);
  ~LlmProxy();
  LlmProxy(const LlmProxy&) = delete;
  LlmProxy& operator=(const LlmProxy&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  void stop();
  int port() const;

  ProxyStats stats() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace agentcr
