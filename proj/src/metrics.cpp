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

#include "espsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace espsim {

double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0;
  if (p <= 0 || p > 100) throw ConfigError("percentile must be in (0, 100]");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<size_t>(
      std::ceil(p / 100.0 * static_cast<double>(values.size())));
  rank = std::clamp<size_t>(rank, 1, values.size());
  return values[rank - 1];
}

namespace {

LatencyStats stats_of(const std::vector<double>& values) {
  LatencyStats s;
  if (values.empty()) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  s.p50 = percentile(values, 50);
  s.p90 = percentile(values, 90);
  s.p99 = percentile(values, 99);
  return s;
}

struct RequestTrack {
  Millis arrival = -1;
  TokenCount input = 0;
  TokenCount output = 0;
  Millis prefill_end = -1;
  Millis finish = -1;
  bool rejected = false;
};

}  // namespace

Millis unloaded_latency_ms(TokenCount input_len, TokenCount output_len,
                           const Sib& sib, int instance_tp) {
  double best = std::numeric_limits<double>::infinity();
  for (const StrategyKey& key : sib.keys()) {
    if (key.tp != instance_tp) continue;
    const StrategyRecord& rec = sib.record(key);
    const double len = static_cast<double>(input_len);
    const double o = static_cast<double>(output_len);
    double prefill = sib.prefill_time_sums(len, len * len, key);
    // Decode steps walk the resident KV from input+1 up to input+output.
    double resident_sum = o * len + o * (o + 1) / 2.0;
    double decode = o * (rec.decode.alpha + rec.decode.beta) +
                    rec.decode.gamma * resident_sum / key.dop;
    best = std::min(best, prefill + decode);
  }
  if (!std::isfinite(best)) {
    throw UnknownStrategyError("no strategy matches the requested tensor width");
  }
  return best;
}

MetricsReport compute_metrics(const EventLog& log, const Sib& sib,
                              const MetricsParams& params) {
  if (log.events().empty()) throw EmptyLogError("event log holds no events");

  std::map<RequestId, RequestTrack> tracks;
  int64_t evictions = 0;
  for (const Event& e : log.events()) {
    switch (e.kind) {
      case EventKind::kArrival: {
        RequestTrack& t = tracks[e.request];
        t.arrival = e.time_ms;
        t.input = e.tokens;
        t.output = std::stoll(e.detail);
        break;
      }
      case EventKind::kReject:
        tracks[e.request].rejected = true;
        break;
      case EventKind::kPrefillEnd:
        // Evicted requests prefill again; the run entering decode is the
        // one whose timestamps count.
        tracks[e.request].prefill_end = e.time_ms;
        break;
      case EventKind::kFinish:
        tracks[e.request].finish = e.time_ms;
        break;
      case EventKind::kEvict:
        if (e.request >= 0) ++evictions;
        break;
      default:
        break;
    }
  }

  MetricsReport report;
  report.evictions = evictions;
  std::vector<double> per_token, norm_in, norm_out;
  Millis first_arrival = std::numeric_limits<double>::infinity();
  Millis last_finish = 0;
  TokenCount tokens_served = 0;
  int64_t slo_met = 0;

  for (const auto& [rid, t] : tracks) {
    if (t.arrival < 0) {
      throw InternalError("request in log without an arrival event");
    }
    ++report.submitted;
    if (t.rejected) {
      ++report.rejected;
      continue;
    }
    if (t.finish < 0) continue;  // truncated log
    ++report.finished;
    per_token.push_back((t.finish - t.arrival) /
                        static_cast<double>(t.input + t.output));
    norm_in.push_back((t.prefill_end - t.arrival) / static_cast<double>(t.input));
    norm_out.push_back((t.finish - t.prefill_end) /
                       static_cast<double>(t.output));
    first_arrival = std::min(first_arrival, t.arrival);
    last_finish = std::max(last_finish, t.finish);
    tokens_served += t.input + t.output;

    double bound = params.slo_abs_ms >= 0
                       ? params.slo_abs_ms
                       : params.slo_scale * unloaded_latency_ms(
                                                t.input, t.output, sib,
                                                params.instance_tp);
    if (t.finish - t.arrival <= bound) ++slo_met;
  }

  report.per_token_e2e = stats_of(per_token);
  report.norm_input = stats_of(norm_in);
  report.norm_output = stats_of(norm_out);
  if (report.finished > 0 && last_finish > first_arrival) {
    double span_s = (last_finish - first_arrival) / 1000.0;
    report.tokens_per_s = static_cast<double>(tokens_served) / span_s;
    report.requests_per_s = static_cast<double>(report.finished) / span_s;
  }
  if (report.submitted > 0) {
    report.slo_attainment =
        static_cast<double>(slo_met) / static_cast<double>(report.submitted);
  }
  return report;
}

double p90_goodput(std::vector<std::pair<double, double>> points) {
  double best = 0;
  for (const auto& [rate, attainment] : points) {
    if (attainment >= 0.9) best = std::max(best, rate);
  }
  return best;
}

}  // namespace espsim
