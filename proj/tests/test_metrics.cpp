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

#include <cstdio>
#include <string>
#include <vector>

#include "espsim/engine.hpp"
#include "espsim/metrics.hpp"
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

// Arrival events carry the input length in `tokens` and the output length
// in `detail`, mirroring what the engine writes.
void add_request(EventLog& log, RequestId rid, Millis arrival,
                 TokenCount input, TokenCount output, Millis prefill_end,
                 Millis finish) {
  log.record({arrival, EventKind::kArrival, rid, kNoGroup, input,
              std::to_string(output)});
  if (prefill_end >= 0) {
    log.record({prefill_end, EventKind::kPrefillEnd, rid, 0, input, ""});
  }
  if (finish >= 0) {
    log.record({finish, EventKind::kFinish, rid, 0, output, ""});
  }
}

}  // namespace

TEST_CASE("percentiles use the nearest-rank rule") {
  std::vector<double> values{10, 1, 9, 2, 8, 3, 7, 4, 6, 5};
  CHECK(percentile(values, 50) == 5);
  CHECK(percentile(values, 90) == 9);
  CHECK(percentile(values, 99) == 10);
  CHECK(percentile(values, 100) == 10);
  CHECK(percentile(values, 10) == 1);
  CHECK(percentile({42.0}, 50) == 42.0);
  CHECK(percentile({}, 50) == 0);
  CHECK_THROWS_AS(percentile(values, 0), ConfigError);
  CHECK_THROWS_AS(percentile(values, 101), ConfigError);
}

TEST_CASE("report aggregates match hand arithmetic") {
  EventLog log;
  add_request(log, 0, 0.0, 100, 10, 200.0, 400.0);
  add_request(log, 1, 100.0, 50, 50, 250.0, 600.0);
  log.record({150.0, EventKind::kArrival, 2, kNoGroup, 70, "5"});
  log.record({150.0, EventKind::kReject, 2, kNoGroup, 0, "policy"});
  // Arrived but neither rejected nor finished: a truncated run.
  log.record({500.0, EventKind::kArrival, 3, kNoGroup, 30, "5"});

  MetricsParams params;
  params.slo_abs_ms = 450.0;
  const MetricsReport report = compute_metrics(log, make_sib(2), params);

  CHECK(report.submitted == 4);
  CHECK(report.finished == 2);
  CHECK(report.rejected == 1);
  CHECK(report.evictions == 0);

  // Request 0: 400/110 per token, 200/100 input, 200/10 output.
  // Request 1: 500/100 per token, 150/50 input, 350/50 output.
  CHECK(report.per_token_e2e.mean ==
        doctest::Approx((400.0 / 110 + 5.0) / 2));
  CHECK(report.per_token_e2e.p50 == doctest::Approx(400.0 / 110));
  CHECK(report.per_token_e2e.p90 == doctest::Approx(5.0));
  CHECK(report.per_token_e2e.p99 == doctest::Approx(5.0));
  CHECK(report.norm_input.mean == doctest::Approx(2.5));
  CHECK(report.norm_input.p50 == doctest::Approx(2.0));
  CHECK(report.norm_input.p90 == doctest::Approx(3.0));
  CHECK(report.norm_output.mean == doctest::Approx(13.5));
  CHECK(report.norm_output.p50 == doctest::Approx(7.0));

  // Span runs from the first finished arrival to the last finish.
  CHECK(report.tokens_per_s == doctest::Approx(210.0 / 0.6));
  CHECK(report.requests_per_s == doctest::Approx(2.0 / 0.6));

  // Request 0 makes the 450 ms bound, request 1 misses it, the reject and
  // the truncated request count as misses.
  CHECK(report.slo_attainment == doctest::Approx(0.25));

  // Sweeps stamp the offered rate afterwards; the aggregator leaves it.
  CHECK(report.offered_rate_per_s == 0);
}

TEST_CASE("unloaded latency takes the best strategy at the right width") {
  // d=1: (5 + 80 + 0.048) + 4*(4.8 + 0.06) + 2e-5 * 4010
  // d=2: (6 + 40 + 0.024) + 4*(5.6 + 0.06) + 2e-5 * 4010 / 2   <- cheaper
  const double expected = 46.024 + 22.64 + 2e-5 * 4010 / 2;
  CHECK(unloaded_latency_ms(1000, 4, make_sib(2), 1) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(unloaded_latency_ms(1000, 4, make_sib(2), 9),
                  UnknownStrategyError);
}

TEST_CASE("scaled service bound keys off the unloaded latency") {
  const double unloaded = unloaded_latency_ms(1000, 4, make_sib(2), 1);
  auto attainment_with_finish = [&](double finish) {
    EventLog log;
    add_request(log, 0, 0.0, 1000, 4, finish - 1.0, finish);
    return compute_metrics(log, make_sib(2), MetricsParams{}).slo_attainment;
  };
  CHECK(attainment_with_finish(25.0 * unloaded * 0.99) == 1.0);
  CHECK(attainment_with_finish(25.0 * unloaded * 1.01) == 0.0);
}

TEST_CASE("eviction events are tallied") {
  EventLog log;
  add_request(log, 0, 0.0, 100, 10, 200.0, 400.0);
  log.record({150.0, EventKind::kEvict, 0, 0, 100, ""});
  MetricsParams params;
  params.slo_abs_ms = 1e9;
  CHECK(compute_metrics(log, make_sib(2), params).evictions == 1);
}

TEST_CASE("goodput is the highest rate holding ninety percent attainment") {
  CHECK(p90_goodput({{5, 0.99}, {10, 0.95}, {20, 0.4}}) == 10.0);
  CHECK(p90_goodput({{20, 0.4}, {10, 0.95}, {5, 0.99}}) == 10.0);
  CHECK(p90_goodput({{5, 0.5}, {10, 0.4}}) == 0.0);
  CHECK(p90_goodput({{5, 0.9}}) == 5.0);
  CHECK(p90_goodput({}) == 0.0);
}

TEST_CASE("a reloaded log reproduces the report exactly") {
  TraceSpec spec;
  spec.distribution = "sharegpt";
  spec.requests_per_s = 15.0;
  spec.count = 80;
  spec.seed = 29;

  Engine engine(KvPool(2, 100000), ModelConfig{}, make_sib(4),
                make_policy(parse_policy("esp")));
  engine.submit(gen_trace(spec));
  engine.run();

  const std::string path = "test_metrics_replay.jsonl";
  engine.log().save(path);
  const EventLog loaded = EventLog::load(path);
  std::remove(path.c_str());

  const MetricsReport a =
      compute_metrics(engine.log(), engine.sib(), MetricsParams{});
  const MetricsReport b = compute_metrics(loaded, engine.sib(), MetricsParams{});
  CHECK(a.submitted == b.submitted);
  CHECK(a.finished == b.finished);
  CHECK(a.rejected == b.rejected);
  CHECK(a.evictions == b.evictions);
  CHECK(a.per_token_e2e.mean == b.per_token_e2e.mean);
  CHECK(a.per_token_e2e.p99 == b.per_token_e2e.p99);
  CHECK(a.norm_input.p90 == b.norm_input.p90);
  CHECK(a.norm_output.p50 == b.norm_output.p50);
  CHECK(a.tokens_per_s == b.tokens_per_s);
  CHECK(a.slo_attainment == b.slo_attainment);
  CHECK(a.finished > 0);
}
