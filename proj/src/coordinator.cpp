#include "agentcr/coordinator.hpp"

#include <algorithm>
#include <cctype>

#include <nlohmann/json.hpp>

#include "agentcr/digest.hpp"

namespace agentcr {

using nlohmann::json;

std::string_view to_string(AgentMode mode) {
  return mode == AgentMode::InSandbox ? "in-sandbox" : "with-sandbox";
}

AgentMode parse_agent_mode(std::string_view text) {
  if (text == "in-sandbox") return AgentMode::InSandbox;
  if (text == "with-sandbox") return AgentMode::WithSandbox;
  throw Error(Errc::ConfigInvalid, "unknown agent mode '" + std::string(text) + "'");
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

bool is_volatile_header(std::string_view name) {
  static const char* const kVolatile[] = {
      "date",        "authorization", "x-api-key",     "cookie",       "x-request-id",
      "traceparent", "tracestate",    "x-trace-id",    "x-amzn-trace-id", "user-agent",
      "content-length", "x-sandbox-id", "connection", "host",
  };
  std::string n = lower(name);
  return std::find(std::begin(kVolatile), std::end(kVolatile), n) != std::end(kVolatile);
}

std::string request_digest(const LlmRequest& request) {
  std::vector<std::pair<std::string, std::string>> headers;
  for (const auto& [k, v] : request.headers) {
    if (!is_volatile_header(k)) headers.emplace_back(lower(k), v);
  }
  std::sort(headers.begin(), headers.end());
  Sha256 h;
  auto field = [&h](std::string_view s) {
    h.update(std::to_string(s.size()));
    h.update(":");
    h.update(s);
  };
  field(request.method);
  field(request.path);
  for (const auto& [k, v] : headers) {
    field(k);
    field(v);
  }
  field(request.body);
  return h.hex_digest();
}

// ---------------------------------------------------------------------------

ConversationLog::ConversationLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
  out_ = std::make_unique<std::ofstream>(*path_, std::ios::app);
  if (!*out_) throw Error(Errc::IoFailure, "cannot open conversation log " + path_->string());
}

void ConversationLog::write_line(const std::string& line) {
  if (!out_) return;
  *out_ << line << '\n';
  out_->flush();
  if (!*out_) throw Error(Errc::IoFailure, "conversation log write failed");
}

void ConversationLog::append_request(const TurnRecord& record) {
  auto& list = records_[record.sandbox_id];
  if (record.turn_index != static_cast<TurnIndex>(list.size())) {
    throw Error(Errc::NoMatchingTurn, "turn indices must be contiguous");
  }
  write_line(json{{"type", "request"},
                  {"sandbox", record.sandbox_id},
                  {"turn", record.turn_index},
                  {"digest", record.request_digest},
                  {"seq", record.completed_at_seq},
                  {"body", base64_encode(record.request_body)}}
                 .dump());
  list.push_back(record);
  if (record.response_body) set_response(record.sandbox_id, record.turn_index, *record.response_body);
}

void ConversationLog::set_response(const SandboxId& id, TurnIndex turn, const std::string& body) {
  auto it = records_.find(id);
  if (it == records_.end() || turn < 0 || turn >= static_cast<TurnIndex>(it->second.size())) {
    throw Error(Errc::NoMatchingTurn, id + " turn " + std::to_string(turn));
  }
  write_line(json{{"type", "response"}, {"sandbox", id}, {"turn", turn},
                  {"body", base64_encode(body)}}
                 .dump());
  it->second[static_cast<std::size_t>(turn)].response_body = body;
}

void ConversationLog::append_command(const InFlightCommand& command) {
  write_line(json{{"type", "command"},
                  {"sandbox", command.sandbox_id},
                  {"id", command.command_id},
                  {"issued_at", command.issued_at},
                  {"payload", base64_encode(command.payload)}}
                 .dump());
  commands_[command.command_id] = command;
}

void ConversationLog::complete_command(std::uint64_t command_id) {
  auto it = commands_.find(command_id);
  if (it == commands_.end()) throw Error(Errc::UnknownCommand, std::to_string(command_id));
  write_line(json{{"type", "command_done"}, {"id", command_id}}.dump());
  it->second.status = CommandStatus::Completed;
}

const std::vector<TurnRecord>& ConversationLog::records(const SandboxId& id) const {
  static const std::vector<TurnRecord> kEmpty;
  auto it = records_.find(id);
  return it == records_.end() ? kEmpty : it->second;
}

ConversationLog ConversationLog::load(const std::filesystem::path& path) {
  ConversationLog log;
  {
    std::ifstream in(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        json j = json::parse(line);
        std::string type = j.at("type");
        if (type == "request") {
          TurnRecord r;
          r.sandbox_id = j.at("sandbox");
          r.turn_index = j.at("turn");
          r.request_digest = j.at("digest");
          r.completed_at_seq = j.at("seq");
          r.request_body = base64_decode(j.at("body").get<std::string>());
          auto& list = log.records_[r.sandbox_id];
          if (r.turn_index != static_cast<TurnIndex>(list.size())) {
            throw Error(Errc::TraceParse, "non-contiguous turn");
          }
          list.push_back(std::move(r));
        } else if (type == "response") {
          auto& list = log.records_.at(j.at("sandbox").get<std::string>());
          list.at(j.at("turn").get<std::size_t>()).response_body =
              base64_decode(j.at("body").get<std::string>());
        } else if (type == "command") {
          InFlightCommand c;
          c.sandbox_id = j.at("sandbox");
          c.command_id = j.at("id");
          c.issued_at = j.at("issued_at");
          c.payload = base64_decode(j.at("payload").get<std::string>());
          log.commands_[c.command_id] = std::move(c);
        } else if (type == "command_done") {
          log.commands_.at(j.at("id").get<std::uint64_t>()).status = CommandStatus::Completed;
        }
      } catch (const std::exception& e) {
        throw Error(Errc::TraceParse,
                    path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  log.path_ = path;
  log.out_ = std::make_unique<std::ofstream>(path, std::ios::app);
  return log;
}

// ---------------------------------------------------------------------------

Coordinator::Coordinator(Inspector& inspector, Engine& engine, const Clock& clock,
                         CoordinatorConfig config)
    : inspector_(inspector), engine_(engine), clock_(clock), config_(std::move(config)) {
  if (config_.log_path) {
    log_ = std::filesystem::exists(*config_.log_path) ? ConversationLog::load(*config_.log_path)
                                                       : ConversationLog(*config_.log_path);
    for (const auto& [id, c] : log_.commands()) next_command_id_ = std::max(next_command_id_, id + 1);
  }
  engine_.add_terminal_listener([this](const CheckpointJob& job) { on_job_terminal(job); });
  engine_.add_restore_listener([this](const RestoreReport& r) { on_restore(r); });
}

void Coordinator::register_sandbox(const SandboxId& id, std::optional<AgentMode> mode) {
  auto s = std::make_unique<Session>();
  s->mode = mode.value_or(config_.default_mode);
  s->gate.sandbox_id = id;
  {
    std::lock_guard lock(log_mu_);
    s->replay_cursor = log_.length(id);
  }
  std::lock_guard lock(map_mu_);
  sessions_[id] = std::move(s);
}

bool Coordinator::has_sandbox(const SandboxId& id) const {
  std::lock_guard lock(map_mu_);
  return sessions_.contains(id);
}

Coordinator::Session& Coordinator::session(const SandboxId& id) const {
  std::lock_guard lock(map_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(Errc::UnknownSandbox, id);
  return *it->second;
}

AgentMode Coordinator::mode(const SandboxId& id) const {
  Session& s = session(id);
  std::lock_guard lock(s.mu);
  return s.mode;
}

void Coordinator::set_release_listener(ReleaseListener listener) {
  release_listener_ = std::move(listener);
}

void Coordinator::deliver(const TurnRelease& release) {
  if (release_listener_) release_listener_(release);
}

ForwardDecision Coordinator::on_outbound_request(const SandboxId& id, const LlmRequest& request) {
  Session& s = session(id);
  std::unique_lock lock(s.mu);
  if (s.phase == Phase::AwaitingResponse || s.phase == Phase::Held) {
    throw Error(Errc::PreviousGateUnresolved, id + " turn " + std::to_string(s.current_turn));
  }
  std::string digest = request_digest(request);
  ForwardDecision decision;

  std::unique_lock log_lock(log_mu_);
  const auto& records = log_.records(id);
  if (s.replay_cursor < records.size()) {
    const TurnRecord& rec = records[s.replay_cursor];
    if (rec.request_digest != digest) {
      s.fast_forward = false;
      s.replay_cursor = records.size();
      throw Error(Errc::DigestMismatchDuringReplay,
                  id + " diverged at turn " + std::to_string(rec.turn_index));
    }
    decision.turn_index = rec.turn_index;
    s.current_turn = rec.turn_index;
    ++s.replay_cursor;
    if (s.replay_cursor == records.size()) s.fast_forward = false;
    if (rec.response_body) {
      decision.kind = ForwardDecision::Kind::SyntheticResponse;
      decision.body = *rec.response_body;
      ++s.synthetic;
      s.phase = Phase::Idle;
    } else {
      // Logged request without a response: forward it again.
      s.phase = Phase::AwaitingResponse;
      s.gate.outstanding_job.reset();
      s.release.reset();
      ++s.forwarded;
    }
    return decision;
  }

  TurnRecord rec;
  rec.sandbox_id = id;
  rec.turn_index = static_cast<TurnIndex>(records.size());
  rec.request_digest = digest;
  rec.request_body = request.body;
  rec.completed_at_seq = inspector_.latest_seq(id);
  log_.append_request(rec);
  s.replay_cursor = log_.length(id);
  log_lock.unlock();

  NetChangeReport report = inspector_.compute_net_change(id, rec.completed_at_seq);
  decision.cls = classify(report);
  decision.turn_index = rec.turn_index;
  s.current_turn = rec.turn_index;
  s.gate.outstanding_job.reset();
  s.gate.buffered_response.reset();
  s.release.reset();
  if (decision.cls != CheckpointClass::Skip) {
    decision.job = engine_.submit({id, rec.turn_index, decision.cls, rec.completed_at_seq});
    s.gate.outstanding_job = decision.job;
  }
  s.phase = Phase::AwaitingResponse;
  ++s.forwarded;
  return decision;
}

TurnRelease Coordinator::release_locked(Session& s, const SandboxId& id, bool job_failed) {
  TurnRelease r;
  r.sandbox_id = id;
  r.turn_index = s.current_turn;
  r.body = s.gate.buffered_response.value_or("");
  r.response_arrival = s.response_arrival;
  r.released_at = clock_.now();
  r.exposed_delay = std::max<Seconds>(0, r.released_at - r.response_arrival);
  r.job = s.gate.outstanding_job;
  r.job_failed = job_failed;
  s.gate.exposed_delay_accumulator += r.exposed_delay;
  s.exposed.push_back(r.exposed_delay);
  s.gate.outstanding_job.reset();
  s.gate.buffered_response.reset();
  s.phase = Phase::Released;
  s.release = r;
  s.cv.notify_all();
  return r;
}

ReleaseDecision Coordinator::on_llm_response(const SandboxId& id, const std::string& body) {
  Session& s = session(id);
  TurnRelease released;
  ReleaseDecision decision;
  {
    std::lock_guard lock(s.mu);
    if (s.phase != Phase::AwaitingResponse) {
      throw Error(Errc::NoMatchingTurn, id + " has no forwarded request awaiting a response");
    }
    {
      std::lock_guard log_lock(log_mu_);
      const auto& rec = log_.records(id).at(static_cast<std::size_t>(s.current_turn));
      if (!rec.response_body) log_.set_response(id, s.current_turn, body);
    }
    s.response_arrival = clock_.now();
    s.gate.buffered_response = body;
    decision.turn_index = s.current_turn;
    if (s.gate.outstanding_job) {
      JobId job = *s.gate.outstanding_job;
      Lifecycle stage = engine_.lifecycle(job);
      if (!is_terminal(stage)) {
        engine_.promote(job);
        s.phase = Phase::Held;
        decision.kind = ReleaseDecision::Kind::HeldUntil;
        decision.job = job;
        return decision;
      }
      released = release_locked(s, id, stage == Lifecycle::Failed);
    } else {
      released = release_locked(s, id, false);
    }
  }
  deliver(released);
  return decision;
}

void Coordinator::on_job_terminal(const CheckpointJob& job) {
  Session* s = nullptr;
  {
    std::lock_guard lock(map_mu_);
    auto it = sessions_.find(job.sandbox_id);
    if (it == sessions_.end()) return;
    s = it->second.get();
  }
  TurnRelease released;
  {
    std::lock_guard lock(s->mu);
    if (s->phase != Phase::Held || s->gate.outstanding_job != job.job_id) return;
    released = release_locked(*s, job.sandbox_id, job.lifecycle == Lifecycle::Failed);
  }
  deliver(released);
}

TurnRelease Coordinator::wait_release(const SandboxId& id) {
  Session& s = session(id);
  std::unique_lock lock(s.mu);
  s.cv.wait(lock, [&] { return s.phase == Phase::Released || s.phase == Phase::Idle; });
  if (!s.release) throw Error(Errc::NoMatchingTurn, id + " has no released turn");
  return *s.release;
}

void Coordinator::begin_fast_forward(const SandboxId& id, TurnIndex restored_turn_index) {
  Session& s = session(id);
  std::lock_guard lock(s.mu);
  std::lock_guard log_lock(log_mu_);
  std::size_t length = log_.length(id);
  if (restored_turn_index < kInitialTurn ||
      static_cast<std::size_t>(restored_turn_index + 1) > length) {
    throw Error(Errc::IndexBeyondLog, id + " turn " + std::to_string(restored_turn_index));
  }
  s.replay_cursor = static_cast<std::size_t>(restored_turn_index + 1);
  s.fast_forward = s.replay_cursor < length;
  s.phase = Phase::Idle;
  s.gate.outstanding_job.reset();
  s.gate.buffered_response.reset();
}

bool Coordinator::in_fast_forward(const SandboxId& id) const {
  Session& s = session(id);
  std::lock_guard lock(s.mu);
  return s.fast_forward;
}

void Coordinator::on_restore(const RestoreReport& report) {
  if (!has_sandbox(report.target_id)) {
    if (!report.fork || !has_sandbox(report.source_id)) return;
    // A fork inherits the source's history up to the restored head.
    {
      std::lock_guard log_lock(log_mu_);
      std::vector<TurnRecord> history = log_.records(report.source_id);
      for (auto& rec : history) {
        if (rec.turn_index > report.head_turn) break;
        rec.sandbox_id = report.target_id;
        log_.append_request(rec);
      }
    }
    register_sandbox(report.target_id, mode(report.source_id));
  }
  Session& s = session(report.target_id);
  AgentMode m;
  {
    std::lock_guard lock(s.mu);
    m = s.mode;
    s.phase = Phase::Idle;
    s.gate.outstanding_job.reset();
    s.gate.buffered_response.reset();
    s.release.reset();
    std::lock_guard log_lock(log_mu_);
    s.replay_cursor = log_.length(report.target_id);
    s.fast_forward = false;
  }
  if (m == AgentMode::InSandbox) begin_fast_forward(report.target_id, report.proc_turn);
}

std::uint64_t Coordinator::record_command(const SandboxId& id, const std::string& command) {
  if (mode(id) != AgentMode::WithSandbox) {
    throw Error(Errc::ModeDisabled, id + " is not in with-sandbox mode");
  }
  std::lock_guard lock(log_mu_);
  InFlightCommand c;
  c.sandbox_id = id;
  c.command_id = next_command_id_++;
  c.payload = command;
  c.issued_at = clock_.now();
  log_.append_command(c);
  return c.command_id;
}

void Coordinator::complete_command(std::uint64_t command_id) {
  std::lock_guard lock(log_mu_);
  auto it = log_.commands().find(command_id);
  if (it == log_.commands().end()) throw Error(Errc::UnknownCommand, std::to_string(command_id));
  if (it->second.status == CommandStatus::Completed) return;
  log_.complete_command(command_id);
}

std::vector<std::uint64_t> Coordinator::reissue_outstanding(const SandboxId& id) {
  if (mode(id) != AgentMode::WithSandbox) {
    throw Error(Errc::ModeDisabled, id + " is not in with-sandbox mode");
  }
  std::lock_guard lock(log_mu_);
  std::vector<std::uint64_t> out;
  for (const auto& [cid, c] : log_.commands()) {
    if (c.sandbox_id == id && c.status == CommandStatus::Outstanding) out.push_back(cid);
  }
  return out;
}

InFlightCommand Coordinator::command(std::uint64_t command_id) const {
  std::lock_guard lock(log_mu_);
  auto it = log_.commands().find(command_id);
  if (it == log_.commands().end()) throw Error(Errc::UnknownCommand, std::to_string(command_id));
  return it->second;
}

GateState Coordinator::gate(const SandboxId& id) const {
  Session& s = session(id);
  std::lock_guard lock(s.mu);
  return s.gate;
}

std::vector<TurnRecord> Coordinator::turns(const SandboxId& id) const {
  session(id);
  std::lock_guard lock(log_mu_);
  return log_.records(id);
}

std::size_t Coordinator::replay_cursor(const SandboxId& id) const {
  Session& s = session(id);
  std::lock_guard lock(s.mu);
  return s.replay_cursor;
}

std::vector<Seconds> Coordinator::exposed_delays(const SandboxId& id) const {
  Session& s = session(id);
  std::lock_guard lock(s.mu);
  return s.exposed;
}

std::size_t Coordinator::synthetic_served(const SandboxId& id) const {
  Session& s = session(id);
  std::lock_guard lock(s.mu);
  return s.synthetic;
}

std::size_t Coordinator::forwarded(const SandboxId& id) const {
  Session& s = session(id);
  std::lock_guard lock(s.mu);
  return s.forwarded;
}

}  // namespace agentcr
