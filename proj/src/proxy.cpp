#include "agentcr/proxy.hpp"

#include <chrono>
#include <mutex>
#include <thread>

#include <httplib.h>

namespace agentcr {

namespace {

bool hop_by_hop(const std::string& name) {
  static const char* const kHop[] = {"connection", "keep-alive", "transfer-encoding", "upgrade",
                                     "host", "content-length", "proxy-connection", "te"};
  std::string n = name;
  for (auto& c : n) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return std::find(std::begin(kHop), std::end(kHop), n) != std::end(kHop);
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

struct LlmProxy::Impl {
  Coordinator& coordinator;
  ProxyConfig config;
  httplib::Server server;
  std::thread thread;
  int port = 0;
  mutable std::mutex mu;
  ProxyStats stats;

  Impl(Coordinator& c, ProxyConfig cfg) : coordinator(c), config(std::move(cfg)) {}

  std::string content_type(const httplib::Request& req) const {
    return req.has_header("Content-Type") ? req.get_header_value("Content-Type")
                                          : "application/json";
  }

  void handle(const httplib::Request& req, httplib::Response& res) {
    SandboxId id;
    if (config.bound_sandbox) {
      id = *config.bound_sandbox;
    } else if (req.has_header(config.sandbox_header)) {
      id = req.get_header_value(config.sandbox_header);
    }
    if (id.empty() || !coordinator.has_sandbox(id)) {
      res.status = 400;
      res.set_content("unknown or missing sandbox id", "text/plain");
      return;
    }

    LlmRequest llm;
    llm.method = req.method;
    llm.path = req.target;
    llm.body = req.body;
    httplib::Headers upstream_headers;
    for (const auto& [k, v] : req.headers) {
      if (hop_by_hop(k) || k.rfind("REMOTE_", 0) == 0 || k.rfind("LOCAL_", 0) == 0) continue;
      llm.headers.emplace_back(k, v);
      upstream_headers.emplace(k, v);
    }

    auto t0 = std::chrono::steady_clock::now();
    ForwardDecision decision;
    try {
      decision = coordinator.on_outbound_request(id, llm);
    } catch (const Error& e) {
      res.status = 409;
      res.set_content(e.what(), "text/plain");
      return;
    }
    double overhead = since(t0);

    if (decision.kind == ForwardDecision::Kind::SyntheticResponse) {
      res.status = 200;
      res.set_content(decision.body, content_type(req));
      std::lock_guard lock(mu);
      ++stats.requests;
      ++stats.synthetic;
      return;
    }

    httplib::Client client(config.upstream_host, config.upstream_port);
    client.set_read_timeout(config.upstream_timeout_s, 0);
    auto upstream = client.send([&] {
      httplib::Request out;
      out.method = req.method;
      out.path = req.target;
      out.headers = upstream_headers;
      out.body = req.body;
      return out;
    }());
    if (!upstream) {
      res.status = 502;
      res.set_content("upstream unreachable", "text/plain");
      std::lock_guard lock(mu);
      ++stats.requests;
      ++stats.upstream_errors;
      return;
    }

    auto t1 = std::chrono::steady_clock::now();
    ReleaseDecision release = coordinator.on_llm_response(id, upstream->body);
    bool held = release.kind == ReleaseDecision::Kind::HeldUntil;
    TurnRelease released = coordinator.wait_release(id);
    // Time spent blocked on the gate is exposed delay, not proxy overhead.
    overhead += since(t1) - released.exposed_delay * (held ? 1.0 : 0.0);

    res.status = upstream->status;
    for (const auto& [k, v] : upstream->headers) {
      if (!hop_by_hop(k)) res.set_header(k, v);
    }
    std::string type = upstream->has_header("Content-Type")
                           ? upstream->get_header_value("Content-Type")
                           : content_type(req);
    res.set_content(released.body, type);

    std::lock_guard lock(mu);
    ++stats.requests;
    if (held) ++stats.held;
    stats.overhead.push_back(std::max(0.0, overhead));
  }
};

LlmProxy::LlmProxy(Coordinator& coordinator, ProxyConfig config)
    : impl_(std::make_unique<Impl>(coordinator, std::move(config))) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    impl_->handle(req, res);
  };
  impl_->server.Get(".*", handler);
  impl_->server.Post(".*", handler);
  impl_->server.Put(".*", handler);
  impl_->server.Delete(".*", handler);
  impl_->server.Patch(".*", handler);
}

LlmProxy::~LlmProxy() { stop(); }

int LlmProxy::start() {
  if (impl_->thread.joinable()) return impl_->port;
  const auto& cfg = impl_->config;
  if (cfg.handler_threads == 0) throw Error(Errc::ConfigInvalid, "handler_threads must be positive");
  impl_->server.new_task_queue = [n = cfg.handler_threads] { return new httplib::ThreadPool(n); };
  if (cfg.listen_port == 0) {
    impl_->port = impl_->server.bind_to_any_port(cfg.listen_host);
  } else {
    impl_->port = impl_->server.bind_to_port(cfg.listen_host, cfg.listen_port) ? cfg.listen_port : -1;
  }
  if (impl_->port <= 0) {
    throw Error(Errc::ConfigInvalid, "cannot listen on " + cfg.listen_host + ":" +
                                         std::to_string(cfg.listen_port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void LlmProxy::stop() {
  if (!impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

int LlmProxy::port() const { return impl_->port; }

ProxyStats LlmProxy::stats() const {
  std::lock_guard lock(impl_->mu);
  return impl_->stats;
}

}  // namespace agentcr
