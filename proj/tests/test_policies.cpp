/* Copyright 2026 The espsim Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "doctest.h"

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "espsim/engine.hpp"
#include "espsim/policies.hpp"
#include "espsim/trace.hpp"

using namespace espsim;

namespace {

Sib make_sib(int max_dop, int tp = 1) {
  Sib sib;
  for (int d = 1; d <= max_dop; ++d) {
    StrategyRecord rec;
    rec.key = {d, tp};
    rec.prefill = {4.0 + 1.0 * d, 0.08 / d, 4.8e-8 / d};
    rec.decode = {4.0 + 0.8 * d, 0.06, 2e-5, 64};
    rec.tipping_ms = 60000.0 / d;
    sib.put(rec);
  }
  return sib;
}

EventLog run_policy(const std::string& policy,
                    const std::vector<TraceRecord>& trace, int instances = 4,
                    TokenCount capacity = 200000) {
  Engine engine(KvPool(instances, capacity), ModelConfig{}, make_sib(instances),
                make_policy(parse_policy(policy)));
  engine.submit(trace);
  engine.run();
  return engine.log();
}

int count_kind(const EventLog& log, EventKind kind) {
  return static_cast<int>(
      std::count_if(log.events().begin(), log.events().end(),
                    [&](const Event& e) { return e.kind == kind; }));
}

std::vector<TraceRecord> small_trace(int count, double rate_per_s,
                                     uint64_t seed) {
  TraceSpec spec;
  spec.distribution = "sharegpt";
  spec.requests_per_s = rate_per_s;
  spec.count = count;
  spec.seed = seed;
  return gen_trace(spec);
}

}  // namespace

TEST_CASE("policy strings parse and print back unchanged") {
  for (const std::string& text :
       {"esp", "static-tp", "static-hybrid:2", "replicated:2x2",
        "chunked:2048", "disagg:3+1"}) {
    CHECK(policy_to_string(parse_policy(text)) == text);
  }

  CHECK(parse_policy("esp").kind == "esp");
  CHECK(parse_policy("static-hybrid:2").dop == 2);
  CHECK(parse_policy("replicated:2x2").copies == 2);
  CHECK(parse_policy("chunked:2048").chunk_size == 2048);
  CHECK(parse_policy("disagg:3+1").prefill_instances == 3);
  CHECK(parse_policy("disagg:3+1").decode_instances == 1);

  for (const std::string& text :
       {"", "bogus", "static-hybrid", "static-hybrid:0", "static-hybrid:x",
        "replicated:2", "replicated:0x2", "replicated:2x", "chunked:",
        "chunked:-5", "disagg:2", "disagg:0+2", "disagg:2+0"}) {
    CHECK_THROWS_AS(parse_policy(text), ConfigError);
  }
}

TEST_CASE("balanced chunk size is total input over total output") {
  std::vector<TraceRecord> trace{{0.0, 1000, 10}, {1.0, 500, 40}};
  CHECK(balanced_chunk_size(trace) == 30);  // 1500 / 50
  CHECK(balanced_chunk_size({}) == 1);
  std::vector<TraceRecord> tiny{{0.0, 3, 100}};
  CHECK(balanced_chunk_size(tiny) == 1);
}

TEST_CASE("fixed-layout policies never resize or migrate") {
  const std::vector<TraceRecord> trace = small_trace(120, 20.0, 17);
  for (const std::string& policy :
       {"static-tp", "static-hybrid:2", "replicated:2x2", "chunked:2048",
        "disagg:2+2"}) {
    CAPTURE(policy);
    const EventLog log = run_policy(policy, trace);
    CHECK(count_kind(log, EventKind::kScaleUp) == 0);
    CHECK(count_kind(log, EventKind::kScaleDown) == 0);
    CHECK(count_kind(log, EventKind::kFinish) > 0);
    if (policy != "disagg:2+2") {
      CHECK(count_kind(log, EventKind::kMigration) == 0);
    }
  }
}

TEST_CASE("whole-cluster groups keep every decode at full width") {
  const EventLog log = run_policy("static-tp", {TraceRecord{0.0, 50000, 8}});
  REQUIRE(count_kind(log, EventKind::kFinish) == 1);
  for (const Event& e : log.events()) {
    if (e.kind == EventKind::kDecodeStep) {
      CHECK(e.detail.rfind("d=4", 0) == 0);
    }
  }
}

TEST_CASE("replica copies admit in parallel and bound request size") {
  SUBCASE("simultaneous arrivals spread over both copies") {
    const EventLog log = run_policy(
        "replicated:2x2",
        {TraceRecord{0.0, 100000, 4}, TraceRecord{0.0, 100000, 4}});
    std::vector<const Event*> starts;
    for (const Event& e : log.events()) {
      if (e.kind == EventKind::kPrefillStart) starts.push_back(&e);
    }
    REQUIRE(starts.size() == 2);
    CHECK(starts[0]->time_ms == doctest::Approx(0.0));
    CHECK(starts[1]->time_ms == doctest::Approx(0.0));
    CHECK(starts[0]->group != starts[1]->group);
  }

  SUBCASE("a request larger than one copy is rejected") {
    const EventLog log =
        run_policy("replicated:2x2", {TraceRecord{0.0, 400000, 4}});
    CHECK(count_kind(log, EventKind::kReject) == 1);
    CHECK(count_kind(log, EventKind::kPrefillStart) == 0);
  }
}

TEST_CASE("chunked prefill splits the input into fixed token slices") {
  auto chunk_steps = [](const EventLog& log) {
    int steps = 0;
    for (const Event& e : log.events()) {
      if (e.kind == EventKind::kDecodeStep &&
          e.detail.find("chunk=") != std::string::npos) {
        ++steps;
      }
    }
    return steps;
  };

  SUBCASE("a 100000-token input at 2048 per slice takes 49 iterations") {
    const EventLog log =
        run_policy("chunked:2048", {TraceRecord{0.0, 100000, 4}});
    CHECK(chunk_steps(log) == 49);
    CHECK(count_kind(log, EventKind::kPrefillEnd) == 1);
    CHECK(count_kind(log, EventKind::kFinish) == 1);
  }

  SUBCASE("a slice at least as large as the input takes one iteration") {
    const EventLog log =
        run_policy("chunked:131072", {TraceRecord{0.0, 100000, 4}});
    CHECK(chunk_steps(log) == 1);
    CHECK(count_kind(log, EventKind::kFinish) == 1);
  }
}

TEST_CASE("disaggregated prefill hands every decoded request over once") {
  const std::vector<TraceRecord> trace = small_trace(80, 10.0, 23);
  Engine engine(KvPool(4, 200000), ModelConfig{}, make_sib(4),
                make_policy(parse_policy("disagg:2+2")));
  engine.submit(trace);
  engine.run();
  const EventLog& log = engine.log();

  std::map<RequestId, TokenCount> inputs;
  for (const Event& e : log.events()) {
    if (e.kind == EventKind::kArrival) inputs[e.request] = e.tokens;
  }
  int handoffs = 0;
  for (const Event& e : log.events()) {
    if (e.kind != EventKind::kMigration) continue;
    REQUIRE(e.detail == "handoff");
    ++handoffs;
    REQUIRE(inputs.count(e.request) == 1);
    CHECK(e.tokens == inputs[e.request] + 1);
  }
  CHECK(handoffs == count_kind(log, EventKind::kPrefillEnd));
  CHECK(handoffs > 0);
  CHECK(count_kind(log, EventKind::kFinish) == handoffs);
}

TEST_CASE("disaggregated admission bounds both sides of the split") {
  SUBCASE("input exceeding the prefill side") {
    const EventLog log =
        run_policy("disagg:2+2", {TraceRecord{0.0, 450000, 4}});
    CHECK(count_kind(log, EventKind::kReject) == 1);
  }
  SUBCASE("input plus output budget exceeding the decode side") {
    const EventLog log =
        run_policy("disagg:2+2", {TraceRecord{0.0, 350000, 50000}});
    CHECK(count_kind(log, EventKind::kReject) == 1);
  }
  SUBCASE("a request fitting both sides is served") {
    const EventLog log =
        run_policy("disagg:2+2", {TraceRecord{0.0, 350000, 16}});
    CHECK(count_kind(log, EventKind::kReject) == 0);
    CHECK(count_kind(log, EventKind::kFinish) == 1);
  }
}

TEST_CASE("layout must divide the cluster exactly") {
  const std::vector<TraceRecord> none;
  CHECK_THROWS_AS(run_policy("static-hybrid:3", none), ConfigError);
  CHECK_THROWS_AS(run_policy("replicated:3x2", none), ConfigError);
  CHECK_THROWS_AS(run_policy("disagg:3+2", none), ConfigError);
}
