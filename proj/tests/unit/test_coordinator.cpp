#include <doctest.h>

#include "agentcr/coordinator.hpp"
#include "agentcr/portable_backend.hpp"
#include "agentcr/sandbox.hpp"
#include "../support/helpers.hpp"

using namespace agentcr;
using testutil::TempDir;

namespace {

LlmRequest req(const std::string& body) {
  LlmRequest r;
  r.path = "/v1/messages";
  r.headers = {{"content-type", "application/json"}};
  r.body = body;
  return r;
}

struct Rig {
  TempDir dir{"coord"};
  PortableBackend backend{dir / "store"};
  VirtualClock clock;
  Inspector inspector;
  Engine engine{backend, clock, {1, SchedulerPolicy::Reactive, std::nullopt}};
  SimSandbox sb{"sb", dir / "ws"};
  std::unique_ptr<Coordinator> coord;
  std::vector<TurnRelease> releases;

  explicit Rig(AgentMode mode = AgentMode::InSandbox,
               std::optional<std::filesystem::path> log = std::nullopt) {
    inspector.register_sandbox("sb", {}, {});
    sb.set_sink([this](const OsEvent& e) { inspector.ingest_event(e); });
    engine.attach_inspector(&inspector);
    engine.register_sandbox(sb);
    coord = std::make_unique<Coordinator>(inspector, engine, clock, CoordinatorConfig{mode, log});
    coord->register_sandbox("sb");
    coord->set_release_listener([this](const TurnRelease& r) { releases.push_back(r); });
  }

  // One complete turn whose checkpoint finishes before the response.
  ForwardDecision turn(const std::string& body, const std::vector<ToolAction>& actions = {}) {
    sb.apply(actions);
    auto d = coord->on_outbound_request("sb", req(body));
    if (d.kind == ForwardDecision::Kind::ForwardToLlm) {
      while (engine.run_one()) {
      }
      coord->on_llm_response("sb", "response to " + body);
    }
    return d;
  }
};

}  // namespace

TEST_CASE("stateful turns dispatch a job and stateless turns do not") {
  Rig r;
  r.sb.apply(WriteFile{"/a", "x"});
  auto d = r.coord->on_outbound_request("sb", req("t0"));
  CHECK(d.kind == ForwardDecision::Kind::ForwardToLlm);
  CHECK(d.cls == CheckpointClass::FsOnly);
  REQUIRE(d.job.has_value());
  CHECK(r.engine.stats().submitted == 1);
  CHECK(r.coord->gate("sb").outstanding_job == d.job);
  CHECK_THROWS_AS(r.coord->on_outbound_request("sb", req("again")), Error);

  r.engine.run_one();
  auto rel = r.coord->on_llm_response("sb", "resp");
  CHECK(rel.kind == ReleaseDecision::Kind::ReleaseNow);
  REQUIRE(r.releases.size() == 1);
  CHECK(r.releases[0].exposed_delay == 0.0);
  CHECK(r.releases[0].body == "resp");

  auto skip = r.coord->on_outbound_request("sb", req("t1"));
  CHECK(skip.cls == CheckpointClass::Skip);
  CHECK_FALSE(skip.job.has_value());
  CHECK(r.coord->on_llm_response("sb", "r1").kind == ReleaseDecision::Kind::ReleaseNow);
  CHECK(r.engine.stats().submitted == 1);
  CHECK_THROWS_AS(r.coord->on_llm_response("sb", "stray"), Error);
}

TEST_CASE("pending job holds the response and is promoted") {
  Rig r;
  r.sb.apply(WriteFile{"/a", "x"});
  r.clock.set(10.0);
  auto d = r.coord->on_outbound_request("sb", req("t0"));
  r.clock.set(11.0);
  auto rel = r.coord->on_llm_response("sb", "resp");
  CHECK(rel.kind == ReleaseDecision::Kind::HeldUntil);
  CHECK(rel.job == d.job);
  CHECK(r.engine.job(*d.job).priority == Priority::High);
  CHECK(r.engine.stats().promotions == 1);
  CHECK(r.releases.empty());
  r.clock.set(13.5);
  r.engine.run_one();
  REQUIRE(r.releases.size() == 1);
  CHECK(r.releases[0].exposed_delay == doctest::Approx(2.5));
  CHECK(r.coord->gate("sb").exposed_delay_accumulator == doctest::Approx(2.5));
  CHECK(r.coord->wait_release("sb").turn_index == 0);
}

TEST_CASE("a failed job still releases the held response") {
  Rig r;
  r.engine.set_fault_hook([](const CheckpointJob&, Lifecycle s) { return s == Lifecycle::Dumping; });
  r.sb.apply(WriteFile{"/a", "x"});
  r.coord->on_outbound_request("sb", req("t0"));
  CHECK(r.coord->on_llm_response("sb", "resp").kind == ReleaseDecision::Kind::HeldUntil);
  r.engine.run_one();
  REQUIRE(r.releases.size() == 1);
  CHECK(r.releases[0].job_failed);
}

TEST_CASE("fast-forward serves logged turns after an in-sandbox restore") {
  Rig r;
  r.sb.spawn_agent(1, 100);
  std::vector<ToolAction> spawn = {SpawnProc{5, 10, "srv"}, WriteFile{"/a", "0"}};
  r.turn("t0", spawn);                       // Full
  r.turn("t1");                              // Skip
  r.turn("t2", {TouchMemory{5}});            // ProcOnly
  r.turn("t3", {WriteFile{"/b", "3"}});      // FsOnly
  auto versions = r.engine.list_versions("sb");
  REQUIRE(versions.size() == 3);
  CHECK(versions.back().proc_turn == 2);
  CHECK(versions.back().fs_turn == 3);

  r.sb.crash();
  r.engine.restore("sb", versions.back().version_id, r.sb);
  CHECK(r.coord->replay_cursor("sb") == 3);
  CHECK(r.coord->in_fast_forward("sb"));

  std::size_t submitted = r.engine.stats().submitted;
  std::size_t forwarded = r.coord->forwarded("sb");
  auto d = r.coord->on_outbound_request("sb", req("t3"));
  CHECK(d.kind == ForwardDecision::Kind::SyntheticResponse);
  CHECK(d.body == "response to t3");
  CHECK(d.turn_index == 3);
  CHECK(r.coord->synthetic_served("sb") == 1);
  CHECK(r.engine.stats().submitted == submitted);
  CHECK(r.coord->forwarded("sb") == forwarded);
  CHECK_FALSE(r.coord->in_fast_forward("sb"));

  auto next = r.coord->on_outbound_request("sb", req("t4"));
  CHECK(next.kind == ForwardDecision::Kind::ForwardToLlm);
  CHECK(next.turn_index == 4);
  auto turns = r.coord->turns("sb");
  for (std::size_t i = 0; i < turns.size(); ++i) CHECK(turns[i].turn_index == static_cast<TurnIndex>(i));
}

TEST_CASE("consistent pair restore serves nothing synthetically") {
  Rig r;
  r.turn("t0", {WriteFile{"/a", "0"}, SpawnProc{5, 1, "x"}});
  auto v = r.engine.list_versions("sb").back();
  r.engine.restore("sb", v.version_id, r.sb);
  CHECK(r.coord->replay_cursor("sb") == 1);
  CHECK_FALSE(r.coord->in_fast_forward("sb"));
  CHECK(r.coord->on_outbound_request("sb", req("t1")).kind == ForwardDecision::Kind::ForwardToLlm);
}

TEST_CASE("divergence during fast-forward is surfaced") {
  Rig r;
  r.turn("t0");
  r.turn("t1");
  r.coord->begin_fast_forward("sb", 0);
  try {
    r.coord->on_outbound_request("sb", req("different"));
    FAIL("expected DigestMismatchDuringReplay");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DigestMismatchDuringReplay);
  }
  try {
    r.coord->begin_fast_forward("sb", 99);
    FAIL("expected IndexBeyondLog");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::IndexBeyondLog);
  }
}

TEST_CASE("reliable command execution") {
  Rig r(AgentMode::WithSandbox);
  auto a = r.coord->record_command("sb", "make");
  r.coord->complete_command(a);
  CHECK(r.coord->reissue_outstanding("sb").empty());
  auto b = r.coord->record_command("sb", "pytest");
  auto c = r.coord->record_command("sb", "ls");
  CHECK(r.coord->reissue_outstanding("sb") == std::vector<std::uint64_t>{b, c});
  CHECK(r.coord->command(b).status == CommandStatus::Outstanding);
  r.coord->complete_command(b);
  r.coord->complete_command(b);
  CHECK(r.coord->command(b).status == CommandStatus::Completed);
  try {
    r.coord->complete_command(999);
    FAIL("expected UnknownCommand");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownCommand);
  }

  Rig in;
  try {
    in.coord->record_command("sb", "x");
    FAIL("expected ModeDisabled");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ModeDisabled);
  }
}

TEST_CASE("with-sandbox restore does not fast-forward") {
  Rig r(AgentMode::WithSandbox);
  r.turn("t0", {WriteFile{"/a", "0"}});
  auto cmd = r.coord->record_command("sb", "long job");
  r.engine.restore("sb", r.engine.list_versions("sb").back().version_id, r.sb);
  CHECK_FALSE(r.coord->in_fast_forward("sb"));
  CHECK(r.coord->reissue_outstanding("sb") == std::vector<std::uint64_t>{cmd});
}

TEST_CASE("conversation log survives a restart") {
  TempDir logdir("log");
  auto path = logdir / "conv.jsonl";
  std::uint64_t cmd = 0;
  {
    Rig r(AgentMode::WithSandbox, path);
    r.turn("t0", {WriteFile{"/a", "0"}});
    r.turn("t1");
    cmd = r.coord->record_command("sb", "x");
    auto done = r.coord->record_command("sb", "y");
    r.coord->complete_command(done);
  }
  auto log = ConversationLog::load(path);
  REQUIRE(log.length("sb") == 2);
  CHECK(log.records("sb")[0].response_body == "response to t0");
  CHECK(log.records("sb")[1].request_body == "t1");
  CHECK(log.commands().at(cmd).status == CommandStatus::Outstanding);
  CHECK(log.commands().size() == 2);

  Rig again(AgentMode::WithSandbox, path);
  CHECK(again.coord->turns("sb").size() == 2);
  CHECK(again.coord->reissue_outstanding("sb") == std::vector<std::uint64_t>{cmd});
  CHECK(again.coord->record_command("sb", "z") > cmd);
}

TEST_CASE("request digest ignores volatile headers and header order") {
  LlmRequest a = req("body");
  a.headers.push_back({"Date", "Mon"});
  a.headers.push_back({"X-Other", "1"});
  LlmRequest b = req("body");
  b.headers.insert(b.headers.begin(), {"x-other", "1"});
  b.headers.push_back({"Authorization", "secret"});
  CHECK(request_digest(a) == request_digest(b));
  b.body = "body2";
  CHECK(request_digest(a) != request_digest(b));
  CHECK(is_volatile_header("X-Request-Id"));
  CHECK_FALSE(is_volatile_header("content-type"));
}
