#include <doctest.h>

#include <sstream>

#include "agentcr/inspector.hpp"
#include "agentcr/trace.hpp"
#include "../support/helpers.hpp"

using namespace agentcr;
using testutil::TempDir;

namespace {

std::map<CheckpointClass, std::size_t> class_counts(const Trace& t) {
  std::map<CheckpointClass, std::size_t> out;
  for (const auto& task : t.tasks) {
    for (const auto& turn : task.turns) ++out[*turn.expected];
  }
  return out;
}

std::string dump(const Trace& t) {
  std::ostringstream out;
  write_trace(out, t);
  return out.str();
}

}  // namespace

TEST_CASE("generated class counts are exact") {
  GenSpec spec;
  spec.tasks = 4;
  spec.turns = 20;
  auto counts = class_counts(gen_trace(spec));
  CHECK(counts[CheckpointClass::Skip] == 60);
  CHECK(counts[CheckpointClass::FsOnly] == 12);
  CHECK(counts[CheckpointClass::ProcOnly] == 4);
  CHECK(counts[CheckpointClass::Full] == 4);
}

TEST_CASE("annotations agree with a live sandbox and inspector") {
  GenSpec spec;
  spec.tasks = 3;
  spec.turns = 40;
  spec.seed = 12;
  Trace trace = gen_trace(spec);
  for (const auto& task : trace.tasks) {
    TempDir dir("trace");
    Inspector insp;
    SimSandbox sb("sb", dir / "ws");
    sb.apply(task.setup);
    insp.register_sandbox("sb", sb.existing_paths(), sb.live_pids());
    sb.set_sink([&](const OsEvent& e) { insp.ingest_event(e); });
    for (std::size_t i = 0; i < task.turns.size(); ++i) {
      sb.apply(task.turns[i].actions);
      Seq seq = insp.latest_seq("sb");
      CHECK(classify(insp.compute_net_change("sb", seq)) == *task.turns[i].expected);
      insp.reset_baseline("sb", seq);
    }
  }
}

TEST_CASE("trace text round-trips") {
  GenSpec spec;
  spec.tasks = 2;
  spec.turns = 6;
  Trace t = gen_trace(spec);
  std::string text = dump(t);
  std::istringstream in(text);
  Trace back = read_trace(in);
  CHECK(back.name == t.name);
  CHECK(back.turn_count() == 12);
  CHECK(dump(back) == text);

  TempDir dir("tr");
  save_trace((dir / "t.jsonl").string(), t);
  CHECK(dump(load_trace((dir / "t.jsonl").string())) == text);
}

TEST_CASE("malformed traces are rejected") {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return read_trace(in);
  };
  auto expect_parse_error = [&](const std::string& text) {
    try {
      parse(text);
      FAIL("expected TraceParse");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::TraceParse);
    }
  };
  const std::string header = R"({"format":"agentcr-trace","version":1,"name":"x"})" "\n";
  expect_parse_error("");
  expect_parse_error(R"({"format":"other","version":1})" "\n");
  expect_parse_error(header + R"({"kind":"task","task":1})" "\n");
  expect_parse_error(header + R"({"kind":"task","task":0})" "\n" +
                     R"({"kind":"turn","task":0,"turn":1,"llm_wait_ms":1,"actions":[]})" "\n");
  // Annotation disagrees with the actions.
  expect_parse_error(header + R"({"kind":"task","task":0})" "\n" +
                     R"({"kind":"turn","task":0,"turn":0,"llm_wait_ms":1,"actions":[{"op":"read","path":"/x"}],"expected":"Full"})" "\n");
  expect_parse_error(header + R"({"kind":"task","task":0})" "\n" +
                     R"({"kind":"turn","task":0,"turn":0,"llm_wait_ms":1,"actions":[{"op":"bogus"}]})" "\n");

  Trace ok = parse(header + R"({"kind":"task","task":0})" "\n" +
                   R"({"kind":"turn","task":0,"turn":0,"llm_wait_ms":5,"actions":[{"op":"write","path":"/x","bytes":"hi"}],"expected":"FsOnly"})" "\n");
  REQUIRE(ok.tasks.size() == 1);
  CHECK(*ok.tasks[0].turns[0].expected == CheckpointClass::FsOnly);
}

TEST_CASE("generator is deterministic and validates its spec") {
  GenSpec spec;
  spec.seed = 42;
  CHECK(dump(gen_trace(spec)) == dump(gen_trace(spec)));
  spec.seed = 43;
  GenSpec other;
  other.seed = 42;
  CHECK(dump(gen_trace(spec)) != dump(gen_trace(other)));
  GenSpec bad;
  bad.stateless_fraction = 0.9;
  bad.fs_fraction = 0.2;
  CHECK_THROWS_AS(gen_trace(bad), Error);
  bad = GenSpec{};
  bad.tasks = 0;
  CHECK_THROWS_AS(gen_trace(bad), Error);
}

TEST_CASE("profiles") {
  CHECK(trace_profiles() == std::vector<std::string>{"default", "heterogeneous", "stress"});
  Trace het = profile_trace("heterogeneous", 1);
  CHECK(het.tasks.size() == 32);
  CHECK(het.turn_count() == 32 * 30);
  auto counts = class_counts(het);
  double skip = static_cast<double>(counts[CheckpointClass::Skip]) / static_cast<double>(het.turn_count());
  CHECK(skip >= 0.70);
  Trace stress = profile_trace("stress", 1);
  CHECK(stress.tasks.size() == 96);
  for (std::size_t i = 0; i < stress.tasks.size(); ++i) CHECK(stress.tasks[i].task == i);
  CHECK_THROWS_AS(profile_trace("nope", 1), Error);
}

TEST_CASE("merge keeps every task once") {
  GenSpec a;
  a.tasks = 3;
  a.turns = 2;
  GenSpec b = a;
  b.tasks = 5;
  b.seed = 9;
  Trace m = merge_traces({gen_trace(a), gen_trace(b)}, "m", 4);
  CHECK(m.name == "m");
  CHECK(m.tasks.size() == 8);
  CHECK(m.turn_count() == 16);
}

TEST_CASE("deterministic rng helpers") {
  DetRng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  DetRng r(1);
  for (int i = 0; i < 1000; ++i) {
    CHECK(r.below(7) < 7);
    double u = r.unit();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.lognormal(100, 0.5) > 0);
  }
}
