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

#pragma once

#include <utility>
#include <vector>

#include "espsim/cost_model.hpp"
#include "espsim/events.hpp"

namespace espsim {

struct LatencyStats {
  double mean = 0;
  double p50 = 0;
  double p90 = 0;
  double p99 = 0;
};

// Nearest-rank percentile over an unsorted sample, p in (0, 100].
double percentile(std::vector<double> values, double p);

struct MetricsParams {
  int instance_tp = 1;
  double slo_scale = 25.0;
  // Overrides the scaled service objective with a flat per-request bound
  // when nonnegative.
  double slo_abs_ms = -1;
};

struct MetricsReport {
  int64_t submitted = 0;
  int64_t finished = 0;
  int64_t rejected = 0;
  int64_t evictions = 0;

  // All in milliseconds per token, over finished requests.
  LatencyStats per_token_e2e;  // (finish - arrival) / (input + output)
  LatencyStats norm_input;     // (prefill end - arrival) / input
  LatencyStats norm_output;    // (finish - prefill end) / output

  double tokens_per_s = 0;
  double requests_per_s = 0;
  double slo_attainment = 0;  // over submitted; rejects count as misses

  double offered_rate_per_s = 0;  // filled in by sweeps
};

// Best-strategy latency of a request alone on an empty cluster: one prefill
// iteration plus output_len decode iterations against a growing KV span,
// minimized over the strategies the table holds.
Millis unloaded_latency_ms(TokenCount input_len, TokenCount output_len,
                           const Sib& sib, int instance_tp);

// Aggregates straight from the event log; a saved and reloaded log yields
// the identical report.
MetricsReport compute_metrics(const EventLog& log, const Sib& sib,
                              const MetricsParams& params);

// Highest offered rate whose attainment is at least 0.9, or 0 when none
// qualifies. Points are (rate, attainment).
double p90_goodput(std::vector<std::pair<double, double>> points);

}  // namespace espsim
